//! Exact dyadic geometry on the periodic window `[0, M)^n`.
//!
//! Cubes are stored by level and integer index. Boxes (dilated cubes and
//! other axis-aligned sets with dyadic corners) are stored as integer corner
//! coordinates in units of `2^-bits`, so every predicate below is decided in
//! integer arithmetic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Temporal extent of the half-space window, `t in (0, T]`.
pub const T_EXTENT: f64 = 2.0;

/// Bounded periodic substitute for `R^n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    n: usize,
    period: u32,
    d_max: u32,
}

impl Window {
    pub fn new(n: usize, period: u32, d_max: u32) -> Result<Self> {
        if n == 0 || n > MAX_DIM {
            return Err(Error::InvalidWindow(format!("dimension {n} outside 1..={MAX_DIM}")));
        }
        if period == 0 {
            return Err(Error::InvalidWindow("period M must be >= 1".into()));
        }
        if d_max == 0 || d_max > 20 {
            return Err(Error::InvalidWindow(format!("d_max {d_max} outside 1..=20")));
        }
        Ok(Window { n, period, d_max })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// The spatial period `M`.
    pub fn period(&self) -> u32 {
        self.period
    }

    pub fn d_max(&self) -> u32 {
        self.d_max
    }

    /// Same window with a different finest level.
    pub fn with_depth(&self, d_max: u32) -> Result<Self> {
        Window::new(self.n, self.period, d_max)
    }

    /// Number of level-`k` cubes along one axis, `M * 2^k`.
    pub fn cells_per_axis(&self, k: u32) -> i64 {
        (self.period as i64) << k
    }

    /// Number of level-`k` cubes in the window.
    pub fn cube_count(&self, k: u32) -> usize {
        (self.cells_per_axis(k) as usize).pow(self.n as u32)
    }

    /// Lattice exponent at which every cube of level `<= d_max` and its
    /// `(1 + 2^-k0)` dilation has integer corners.
    pub fn lattice_bits(&self, lambda: DilationParam) -> u32 {
        self.d_max + lambda.k0 + 1
    }

    /// Period expressed in lattice units of `2^-bits`.
    pub fn period_units(&self, bits: u32) -> i64 {
        (self.period as i64) << bits
    }

    /// Builds a cube, reducing the index modulo `M * 2^level`.
    pub fn cube(&self, level: u32, index: &[i64]) -> DyadicCube {
        assert_eq!(index.len(), self.n, "cube index has wrong dimension");
        let len = self.cells_per_axis(level);
        let mut idx = [0i64; MAX_DIM];
        for (slot, &m) in idx.iter_mut().zip(index) {
            *slot = m.rem_euclid(len);
        }
        DyadicCube { level, index: idx, dim: self.n as u8 }
    }

    /// Row-major position of a cube among the level's cubes.
    pub fn linear_index(&self, q: &DyadicCube) -> usize {
        let len = self.cells_per_axis(q.level);
        q.index[..self.n].iter().fold(0i64, |acc, &m| acc * len + m) as usize
    }

    /// Inverse of [`Window::linear_index`].
    pub fn cube_from_linear(&self, level: u32, mut lin: usize) -> DyadicCube {
        let len = self.cells_per_axis(level) as usize;
        let mut idx = [0i64; MAX_DIM];
        for i in (0..self.n).rev() {
            idx[i] = (lin % len) as i64;
            lin /= len;
        }
        DyadicCube { level, index: idx, dim: self.n as u8 }
    }

    /// All cubes of level `k` in canonical (lexicographic) order.
    pub fn cubes_at_level(&self, k: u32) -> impl Iterator<Item = DyadicCube> + '_ {
        (0..self.cube_count(k)).map(move |i| self.cube_from_linear(k, i))
    }

    /// The `2^n` children of `q`, refusing past `d_max`.
    pub fn children_of(&self, q: &DyadicCube) -> Result<Vec<DyadicCube>> {
        if q.level >= self.d_max {
            return Err(Error::DepthExhausted { level: q.level, d_max: self.d_max });
        }
        Ok(q.children().collect())
    }

    /// Wraps a real coordinate into `[0, M)`.
    pub fn wrap(&self, x: f64) -> f64 {
        x.rem_euclid(self.period as f64)
    }
}

/// Open dyadic cube `Q_{k,m} = prod (m_i 2^-k, (m_i + 1) 2^-k)`.
///
/// Ordering is the canonical enumeration: level ascending, then
/// lexicographic index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: u32,
    index: [i64; MAX_DIM],
    dim: u8,
}

impl PartialOrd for DyadicCube {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DyadicCube {
    fn cmp(&self, other: &Self) -> Ordering {
        self.level
            .cmp(&other.level)
            .then_with(|| self.index().cmp(other.index()))
    }
}

impl DyadicCube {
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn index(&self) -> &[i64] {
        &self.index[..self.dim as usize]
    }

    /// Side length `2^-k`.
    pub fn side(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    /// Lebesgue measure `2^-kn`.
    pub fn volume(&self) -> f64 {
        (-((self.level as usize * self.dim()) as f64)).exp2()
    }

    /// Parent cube; `None` at level 0.
    pub fn parent(&self) -> Option<DyadicCube> {
        if self.level == 0 {
            return None;
        }
        let mut index = self.index;
        for m in index.iter_mut().take(self.dim()) {
            *m = m.div_euclid(2);
        }
        Some(DyadicCube { level: self.level - 1, index, dim: self.dim })
    }

    /// Ancestor at `level <= self.level`.
    pub fn ancestor(&self, level: u32) -> DyadicCube {
        assert!(level <= self.level);
        let shift = self.level - level;
        let mut index = self.index;
        for m in index.iter_mut().take(self.dim()) {
            *m >>= shift;
        }
        DyadicCube { level, index, dim: self.dim }
    }

    /// Children without a depth check; indices stay reduced because the
    /// parent's are.
    pub fn children(&self) -> impl Iterator<Item = DyadicCube> + '_ {
        let n = self.dim();
        (0..1usize << n).map(move |bits| {
            let mut index = self.index;
            for (i, m) in index.iter_mut().enumerate().take(n) {
                *m = 2 * *m + ((bits >> (n - 1 - i)) & 1) as i64;
            }
            DyadicCube { level: self.level + 1, index, dim: self.dim }
        })
    }

    /// True when `self` is `other` or one of its descendants.
    pub fn is_within(&self, other: &DyadicCube) -> bool {
        self.level >= other.level && self.ancestor(other.level) == *other
    }

    /// The cube as a box in lattice units of `2^-bits`.
    pub fn to_box(&self, bits: u32) -> LatticeBox {
        assert!(bits >= self.level, "lattice too coarse for cube level");
        let s = 1i64 << (bits - self.level);
        let mut b = LatticeBox::empty(self.dim(), bits);
        for i in 0..self.dim() {
            b.lo[i] = self.index[i] * s;
            b.hi[i] = (self.index[i] + 1) * s;
        }
        b
    }

    /// `(1 + lambda) Q`, concentric, in lattice units of `2^-bits`.
    pub fn dilate(&self, lambda: DilationParam, bits: u32) -> LatticeBox {
        assert!(
            bits > self.level + lambda.k0,
            "lattice too coarse for dilated cube"
        );
        let e = 1i64 << (bits - self.level - lambda.k0 - 1);
        let mut b = self.to_box(bits);
        for i in 0..self.dim() {
            b.lo[i] -= e;
            b.hi[i] += e;
        }
        b
    }

    /// The concentric `c Q` for an odd integer factor `c`, exact at the
    /// cube's own level plus one bit.
    pub fn scaled(&self, factor: i64, bits: u32) -> LatticeBox {
        assert!(factor >= 1);
        assert!(bits > self.level);
        let s = 1i64 << (bits - self.level);
        let mut b = LatticeBox::empty(self.dim(), bits);
        for i in 0..self.dim() {
            let center2 = 2 * self.index[i] * s + s; // twice the centre
            b.lo[i] = (center2 - factor * s) / 2;
            b.hi[i] = (center2 + factor * s) / 2;
        }
        b
    }

    /// Real coordinates of the lower corner.
    pub fn corner(&self) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        let s = self.side();
        for i in 0..self.dim() {
            c[i] = self.index[i] as f64 * s;
        }
        c
    }
}

/// Dilation increment `lambda = 2^-k0`; the dilated cube is `(1 + lambda) Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DilationParam {
    pub k0: u32,
}

impl DilationParam {
    pub fn new(k0: u32) -> Self {
        DilationParam { k0 }
    }

    /// `lambda = 1`, factor-2 dilation.
    pub fn unit() -> Self {
        DilationParam { k0: 0 }
    }

    pub fn lambda(&self) -> f64 {
        (-(self.k0 as f64)).exp2()
    }

    pub fn factor(&self) -> f64 {
        1.0 + self.lambda()
    }
}

/// Axis-aligned box with corners on the lattice `2^-bits Z^n`, given in an
/// unwrapped chart. Membership is for the open box; all periodic predicates
/// identify points modulo the window period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatticeBox {
    pub dim: usize,
    pub bits: u32,
    pub lo: [i64; MAX_DIM],
    pub hi: [i64; MAX_DIM],
}

impl LatticeBox {
    pub fn empty(dim: usize, bits: u32) -> Self {
        LatticeBox { dim, bits, lo: [0; MAX_DIM], hi: [0; MAX_DIM] }
    }

    pub fn from_bounds(bits: u32, lo: &[i64], hi: &[i64]) -> Self {
        assert_eq!(lo.len(), hi.len());
        let mut b = LatticeBox::empty(lo.len(), bits);
        b.lo[..lo.len()].copy_from_slice(lo);
        b.hi[..hi.len()].copy_from_slice(hi);
        b
    }

    /// Re-expresses the box on a finer lattice.
    pub fn refine_to(&self, bits: u32) -> LatticeBox {
        assert!(bits >= self.bits);
        let sh = bits - self.bits;
        let mut b = *self;
        b.bits = bits;
        for i in 0..self.dim {
            b.lo[i] <<= sh;
            b.hi[i] <<= sh;
        }
        b
    }

    pub fn side_units(&self, axis: usize) -> i64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Volume in lattice units (`2^-bits` per axis).
    pub fn volume_units(&self) -> u128 {
        (0..self.dim).map(|i| self.side_units(i).max(0) as u128).product()
    }

    /// Real volume.
    pub fn volume(&self) -> f64 {
        self.volume_units() as f64 * (-((self.bits as usize * self.dim) as f64)).exp2()
    }

    pub fn lo_f64(&self, axis: usize) -> f64 {
        self.lo[axis] as f64 * (-(self.bits as f64)).exp2()
    }

    pub fn hi_f64(&self, axis: usize) -> f64 {
        self.hi[axis] as f64 * (-(self.bits as f64)).exp2()
    }

    /// Open-box membership of a real point modulo `period` (real units).
    pub fn contains_point(&self, x: &[f64], period: f64) -> bool {
        (0..self.dim).all(|i| {
            let (lo, hi) = (self.lo_f64(i), self.hi_f64(i));
            // smallest translate x + jP with x + jP > lo
            let j = ((lo - x[i]) / period).floor() + 1.0;
            let xs = x[i] + j * period;
            let xs = if xs <= lo { xs + period } else { xs };
            xs < hi
        })
    }
}

fn common_bits(a: &LatticeBox, b: &LatticeBox) -> (LatticeBox, LatticeBox) {
    let bits = a.bits.max(b.bits);
    (a.refine_to(bits), b.refine_to(bits))
}

/// Length of `[a_lo, a_hi) ∩ ⋃_j [b_lo + jP, b_hi + jP)`.
fn periodic_overlap_1d(a_lo: i64, a_hi: i64, b_lo: i64, b_hi: i64, period: i64) -> i64 {
    if a_hi <= a_lo || b_hi <= b_lo {
        return 0;
    }
    let j_min = (a_lo - b_hi).div_euclid(period);
    let j_max = (a_hi - b_lo).div_euclid(period) + 1;
    let mut pieces: Vec<(i64, i64)> = (j_min..=j_max)
        .filter_map(|j| {
            let lo = (b_lo + j * period).max(a_lo);
            let hi = (b_hi + j * period).min(a_hi);
            (hi > lo).then_some((lo, hi))
        })
        .collect();
    pieces.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(i64, i64)> = None;
    for (lo, hi) in pieces {
        cur = match cur {
            Some((cl, ch)) if lo <= ch => Some((cl, ch.max(hi))),
            Some((cl, ch)) => {
                total += ch - cl;
                Some((lo, hi))
            }
            None => Some((lo, hi)),
        };
    }
    if let Some((cl, ch)) = cur {
        total += ch - cl;
    }
    total
}

/// Exact measure of `A ∩ B` under periodic identification, measured in
/// `A`'s chart, in units of `2^-(bits·n)` at the finer of the two lattices.
pub fn intersection_units(a: &LatticeBox, b: &LatticeBox, period: u32) -> (u128, u32) {
    assert_eq!(a.dim, b.dim);
    let (a, b) = common_bits(a, b);
    let p = (period as i64) << a.bits;
    let units = (0..a.dim)
        .map(|i| periodic_overlap_1d(a.lo[i], a.hi[i], b.lo[i], b.hi[i], p) as u128)
        .product();
    (units, a.bits)
}

/// Exact Lebesgue measure of `A ∩ B` on the periodic window.
pub fn intersection_measure(a: &LatticeBox, b: &LatticeBox, period: u32) -> f64 {
    let (units, bits) = intersection_units(a, b, period);
    units as f64 * (-((bits as usize * a.dim) as f64)).exp2()
}

/// True when the open boxes share an interior point modulo the period.
pub fn boxes_intersect(a: &LatticeBox, b: &LatticeBox, period: u32) -> bool {
    intersection_units(a, b, period).0 > 0
}

/// Number of boxes in `family` whose open interior contains `x`.
pub fn overlap_multiplicity(x: &[f64], family: &[LatticeBox], period: u32) -> usize {
    family.iter().filter(|b| b.contains_point(x, period as f64)).count()
}

/// Translates of `b` (by multiples of the period) that meet `target`'s chart,
/// clipped to it. Each returned box is nonempty.
fn clipped_translates(target: &LatticeBox, b: &LatticeBox, p: i64, out: &mut Vec<LatticeBox>) {
    let n = target.dim;
    let mut ranges = [(0i64, 0i64); MAX_DIM];
    for i in 0..n {
        let j_min = (target.lo[i] - b.hi[i]).div_euclid(p);
        let j_max = (target.hi[i] - b.lo[i]).div_euclid(p) + 1;
        ranges[i] = (j_min, j_max);
    }
    let mut shift = [0i64; MAX_DIM];
    for i in 0..n {
        shift[i] = ranges[i].0;
    }
    loop {
        let mut clipped = LatticeBox::empty(n, target.bits);
        let mut ok = true;
        for i in 0..n {
            let lo = (b.lo[i] + shift[i] * p).max(target.lo[i]);
            let hi = (b.hi[i] + shift[i] * p).min(target.hi[i]);
            if hi <= lo {
                ok = false;
                break;
            }
            clipped.lo[i] = lo;
            clipped.hi[i] = hi;
        }
        if ok {
            out.push(clipped);
        }
        // odometer over shift vectors
        let mut axis = 0;
        loop {
            if axis == n {
                return;
            }
            shift[axis] += 1;
            if shift[axis] <= ranges[axis].1 {
                break;
            }
            shift[axis] = ranges[axis].0;
            axis += 1;
        }
    }
}

/// Multiplicity of a family of open boxes on a coordinate-compressed grid.
///
/// Every breakpoint of the clipped family splits the domain into elementary
/// slabs on which the multiplicity is constant. Position `2i` is the
/// breakpoint `v_i`, position `2i + 1` the open slab `(v_i, v_{i+1})`; an
/// open box `(v_a, v_b)` covers positions `2a + 1 ..= 2b - 1`. Counts are
/// accumulated with an n-dimensional difference array.
#[derive(Clone, Debug)]
pub struct CountField {
    breaks: Vec<Vec<i64>>,
    shape: Vec<usize>,
    counts: Vec<u16>,
}

impl CountField {
    /// Builds the field over the open `domain` for all periodic translates
    /// of `boxes` that meet it.
    pub fn new(domain: &LatticeBox, boxes: &[LatticeBox], period: u32) -> Self {
        let n = domain.dim;
        let bits = boxes.iter().map(|b| b.bits).chain([domain.bits]).max().unwrap_or(0);
        let dom = domain.refine_to(bits);
        let p = (period as i64) << bits;
        let mut pieces = Vec::new();
        for b in boxes {
            clipped_translates(&dom, &b.refine_to(bits), p, &mut pieces);
        }
        let mut breaks: Vec<Vec<i64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut v: Vec<i64> =
                pieces.iter().flat_map(|b| [b.lo[i], b.hi[i]]).chain([dom.lo[i], dom.hi[i]]).collect();
            v.sort_unstable();
            v.dedup();
            breaks.push(v);
        }
        // positions 0..=2K, plus one guard slot for the difference array
        let shape: Vec<usize> = breaks.iter().map(|v| 2 * (v.len() - 1) + 2).collect();
        let total: usize = shape.iter().product();
        let mut diff = vec![0i32; total];
        let strides = strides_of(&shape);
        for b in &pieces {
            let mut lo = [0usize; MAX_DIM];
            let mut hi = [0usize; MAX_DIM];
            for i in 0..n {
                let a = breaks[i].binary_search(&b.lo[i]).unwrap();
                let c = breaks[i].binary_search(&b.hi[i]).unwrap();
                lo[i] = 2 * a + 1;
                hi[i] = 2 * c; // exclusive end
            }
            for corner in 0..1usize << n {
                let mut off = 0;
                let mut sign = 1;
                for i in 0..n {
                    if corner >> i & 1 == 1 {
                        off += hi[i] * strides[i];
                        sign = -sign;
                    } else {
                        off += lo[i] * strides[i];
                    }
                }
                diff[off] += sign;
            }
        }
        for (axis, &stride) in strides.iter().enumerate() {
            let len = shape[axis];
            for base in 0..total {
                if (base / stride) % len == 0 {
                    let mut acc = 0;
                    for j in 0..len {
                        let o = base + j * stride;
                        acc += diff[o];
                        diff[o] = acc;
                    }
                }
            }
        }
        let counts = diff.into_iter().map(|c| c.clamp(0, u16::MAX as i32) as u16).collect();
        CountField { breaks, shape, counts }
    }

    fn interior_counts(&self) -> impl Iterator<Item = u16> + '_ {
        let n = self.shape.len();
        let strides = strides_of(&self.shape);
        let inner: Vec<usize> = self.breaks.iter().map(|v| 2 * (v.len() - 1) - 1).collect();
        let total: usize = inner.iter().product();
        (0..total).map(move |mut lin| {
            let mut off = 0;
            for i in (0..n).rev() {
                let pos = lin % inner[i] + 1;
                lin /= inner[i];
                off += pos * strides[i];
            }
            self.counts[off]
        })
    }

    /// Smallest multiplicity at any point strictly inside the domain.
    pub fn min_interior(&self) -> u16 {
        self.interior_counts().min().unwrap_or(0)
    }

    /// Largest multiplicity at any point strictly inside the domain.
    pub fn max_interior(&self) -> u16 {
        self.interior_counts().max().unwrap_or(0)
    }
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Exact test of `target ⊆ ⋃ others` (open boxes, periodic window).
pub fn covered_by_union(target: &LatticeBox, others: &[LatticeBox], period: u32) -> bool {
    if others.is_empty() {
        return false;
    }
    CountField::new(target, others, period).min_interior() > 0
}

/// A chart slightly larger than the closed window, so that multiplicities at
/// every point of the (periodic) window appear among its interior points.
pub fn window_chart(win: &Window, bits: u32) -> LatticeBox {
    let p = win.period_units(bits);
    let n = win.dim();
    LatticeBox::from_bounds(bits, &vec![-1; n], &vec![p + 1; n])
}

/// Axis-aligned box in real coordinates; for half-space boxes the last axis
/// is `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RealBox {
    pub dim: usize,
    pub lo: [f64; MAX_DIM + 1],
    pub hi: [f64; MAX_DIM + 1],
}

impl RealBox {
    pub fn new(lo: &[f64], hi: &[f64]) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.len() <= MAX_DIM + 1);
        let mut b = RealBox { dim: lo.len(), lo: [0.0; MAX_DIM + 1], hi: [0.0; MAX_DIM + 1] };
        b.lo[..lo.len()].copy_from_slice(lo);
        b.hi[..hi.len()].copy_from_slice(hi);
        b
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi[..self.dim]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|i| self.hi[i] - self.lo[i]).product()
    }

    /// Spatial box times the interval `(t_lo, t_hi)`.
    pub fn with_t(x: &LatticeBox, t_lo: f64, t_hi: f64) -> Self {
        let mut b = RealBox { dim: x.dim + 1, lo: [0.0; MAX_DIM + 1], hi: [0.0; MAX_DIM + 1] };
        for i in 0..x.dim {
            b.lo[i] = x.lo_f64(i);
            b.hi[i] = x.hi_f64(i);
        }
        b.lo[x.dim] = t_lo;
        b.hi[x.dim] = t_hi;
        b
    }
}

/// `Π_{k,m} = Q_{k,m} × (0, r(Q))`, optionally over the dilated base.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DyadicBox {
    pub base: DyadicCube,
    pub dilation: Option<DilationParam>,
}

impl DyadicBox {
    pub fn pi(base: DyadicCube) -> Self {
        DyadicBox { base, dilation: None }
    }

    pub fn pi_tilde(base: DyadicCube, lambda: DilationParam) -> Self {
        DyadicBox { base, dilation: Some(lambda) }
    }

    pub fn height(&self) -> f64 {
        self.base.side()
    }

    /// Exact volume; `2^{-k(n+1)}` for the undilated box.
    pub fn volume(&self) -> f64 {
        let f = self.dilation.map_or(1.0, |l| l.factor());
        self.base.volume() * f.powi(self.base.dim() as i32) * self.height()
    }

    pub fn to_real(&self) -> RealBox {
        let bits = self.base.level + self.dilation.map_or(0, |l| l.k0) + 1;
        let x = match self.dilation {
            Some(l) => self.base.dilate(l, bits),
            None => self.base.to_box(bits),
        };
        RealBox::with_t(&x, 0.0, self.height())
    }
}
