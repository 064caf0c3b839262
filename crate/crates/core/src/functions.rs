//! Boundary functions on the window, functions on the half-space window,
//! and the elementary functionals built on them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{DyadicCube, LatticeBox, RealBox, Window, MAX_DIM, T_EXTENT};
use crate::par;
use crate::quadrature::gauss_legendre;
use crate::weights::Weight;

/// Piecewise-constant data at pitch `2^-depth`, addressed by integer cell
/// index in an unwrapped chart.
pub trait BoundaryFunction: Sync {
    fn dim(&self) -> usize;
    fn depth(&self) -> u32;
    /// Value on the cell `prod [j_i 2^-d, (j_i + 1) 2^-d)`.
    fn cell_value(&self, idx: &[i64]) -> f64;

    fn pitch(&self) -> f64 {
        (-(self.depth() as f64)).exp2()
    }
}

/// Periodic samples at the cell centres of the pitch-`2^-d` lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    n: usize,
    period: u32,
    depth: u32,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(win: &Window, depth: u32, values: Vec<f64>) -> Result<Self> {
        let len = (win.cells_per_axis(depth) as usize).pow(win.dim() as u32);
        if values.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i} is not finite")));
        }
        Ok(GridFunction { n: win.dim(), period: win.period(), depth, values })
    }

    /// Samples `f` at cell centres in `[0, M)^n`.
    pub fn from_fn(win: &Window, depth: u32, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let n = win.dim();
        let per = win.cells_per_axis(depth) as usize;
        let h = (-(depth as f64)).exp2();
        let values = par::map_range(per.pow(n as u32), |mut lin| {
            let mut x = [0.0; MAX_DIM];
            for i in (0..n).rev() {
                x[i] = ((lin % per) as f64 + 0.5) * h;
                lin /= per;
            }
            f(&x[..n])
        });
        GridFunction { n, period: win.period(), depth, values }
    }

    pub fn constant(win: &Window, depth: u32, c: f64) -> Self {
        GridFunction::from_fn(win, depth, |_| c)
    }

    pub fn period(&self) -> u32 {
        self.period
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn window(&self) -> Window {
        Window::new(self.n, self.period, self.depth.max(1)).expect("grid window")
    }

    pub fn cells_per_axis(&self) -> i64 {
        (self.period as i64) << self.depth
    }

    fn lin(&self, idx: &[i64]) -> usize {
        let per = self.cells_per_axis();
        idx.iter().fold(0i64, |acc, &j| acc * per + j.rem_euclid(per)) as usize
    }

    /// Piecewise-constant value at a real point (periodic).
    pub fn sample(&self, x: &[f64]) -> f64 {
        let scale = (self.depth as f64).exp2();
        let mut idx = [0i64; MAX_DIM];
        for i in 0..self.n {
            idx[i] = (x[i] * scale).floor() as i64;
        }
        self.values[self.lin(&idx[..self.n])]
    }

    /// `a self + b other` on a common grid.
    pub fn combine(&self, a: f64, other: &GridFunction, b: f64) -> Result<GridFunction> {
        if self.n != other.n || self.period != other.period || self.depth != other.depth {
            return Err(Error::DimensionMismatch { expected: self.values.len(), got: other.values.len() });
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(GridFunction { values, ..*self })
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        GridFunction { values: self.values.iter().map(|v| c * v).collect(), ..*self }
    }

    /// `‖φ‖_{L1}` over the whole window.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.pitch().powi(self.n as i32)
    }

    /// Same function resampled at depth `d'` (coarser: averages, finer:
    /// repeats).
    pub fn at_depth(&self, depth: u32) -> GridFunction {
        let win = Window::new(self.n, self.period, depth.max(1)).expect("window");
        if depth >= self.depth {
            let sh = depth - self.depth;
            let per = win.cells_per_axis(depth) as usize;
            let n = self.n;
            let values = (0..per.pow(n as u32))
                .map(|mut lin| {
                    let mut idx = [0i64; MAX_DIM];
                    for i in (0..n).rev() {
                        idx[i] = ((lin % per) as i64) >> sh;
                        lin /= per;
                    }
                    self.values[self.lin(&idx[..n])]
                })
                .collect();
            GridFunction { values, depth, ..*self }
        } else {
            let bits = depth;
            let values = win
                .cubes_at_level(depth)
                .map(|q| cell_average(self, &q.to_box(bits)))
                .collect();
            GridFunction { values, depth, ..*self }
        }
    }
}

impl BoundaryFunction for GridFunction {
    fn dim(&self) -> usize {
        self.n
    }
    fn depth(&self) -> u32 {
        self.depth
    }
    fn cell_value(&self, idx: &[i64]) -> f64 {
        self.values[self.lin(idx)]
    }
}

/// An analytic function sampled at cell centres of an unwrapped chart
/// (no periodic identification).
#[derive(Clone)]
pub struct ChartFunction {
    n: usize,
    depth: u32,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl ChartFunction {
    pub fn new(n: usize, depth: u32, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ChartFunction { n, depth, f: Arc::new(f) }
    }
}

impl BoundaryFunction for ChartFunction {
    fn dim(&self) -> usize {
        self.n
    }
    fn depth(&self) -> u32 {
        self.depth
    }
    fn cell_value(&self, idx: &[i64]) -> f64 {
        let h = self.pitch();
        let mut x = [0.0; MAX_DIM];
        for (xi, &j) in x.iter_mut().zip(idx) {
            *xi = (j as f64 + 0.5) * h;
        }
        (self.f)(&x[..self.n])
    }
}

/// Cells of pitch `2^-d` meeting `[lo, hi)` (units `2^-bits`) with the
/// fraction of each cell inside.
fn axis_cells(lo: i64, hi: i64, bits: u32, d: u32) -> Vec<(i64, f64)> {
    let b = bits.max(d);
    let (lo, hi) = (lo << (b - bits), hi << (b - bits));
    let cell = 1i64 << (b - d);
    let mut out = Vec::new();
    let mut j = lo.div_euclid(cell);
    while j * cell < hi {
        let a = (j * cell).max(lo);
        let c = ((j + 1) * cell).min(hi);
        if c > a {
            out.push((j, (c - a) as f64 / cell as f64));
        }
        j += 1;
    }
    out
}

/// `(cell index, overlap fraction)` for every grid cell meeting the box.
fn box_cells<B: BoundaryFunction + ?Sized>(phi: &B, b: &LatticeBox) -> Vec<([i64; MAX_DIM], f64)> {
    let n = b.dim;
    let axes: Vec<Vec<(i64, f64)>> =
        (0..n).map(|i| axis_cells(b.lo[i], b.hi[i], b.bits, phi.depth())).collect();
    if axes.iter().any(|a| a.is_empty()) {
        return Vec::new();
    }
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut out = Vec::with_capacity(total);
    for mut lin in 0..total {
        let mut idx = [0i64; MAX_DIM];
        let mut w = 1.0;
        for i in (0..n).rev() {
            let (j, f) = axes[i][lin % axes[i].len()];
            lin /= axes[i].len();
            idx[i] = j;
            w *= f;
        }
        out.push((idx, w));
    }
    out
}

/// `∫_B φ`.
pub fn box_integral<B: BoundaryFunction + ?Sized>(phi: &B, b: &LatticeBox) -> f64 {
    let n = b.dim;
    let cv = phi.pitch().powi(n as i32);
    box_cells(phi, b).iter().map(|(idx, w)| w * phi.cell_value(&idx[..n])).sum::<f64>() * cv
}

/// Mean of `φ` over the box, exact for piecewise-constant data.
pub fn cell_average<B: BoundaryFunction + ?Sized>(phi: &B, b: &LatticeBox) -> f64 {
    box_integral(phi, b) / b.volume()
}

/// `‖φ‖_{L1(B)}`.
pub fn l1_on<B: BoundaryFunction + ?Sized>(phi: &B, b: &LatticeBox) -> f64 {
    let n = b.dim;
    let cv = phi.pitch().powi(n as i32);
    box_cells(phi, b).iter().map(|(idx, w)| w * phi.cell_value(&idx[..n]).abs()).sum::<f64>() * cv
}

/// `∫_B |φ - φ_B|`.
pub fn mean_deviation<B: BoundaryFunction + ?Sized>(phi: &B, b: &LatticeBox) -> f64 {
    let n = b.dim;
    let cv = phi.pitch().powi(n as i32);
    let cells = box_cells(phi, b);
    let vals: Vec<(f64, f64)> = cells.iter().map(|(idx, w)| (phi.cell_value(&idx[..n]), *w)).collect();
    let total_w: f64 = vals.iter().map(|v| v.1).sum();
    let mean = vals.iter().map(|(v, w)| v * w).sum::<f64>() / total_w;
    vals.iter().map(|(v, w)| w * (v - mean).abs()).sum::<f64>() * cv
}

/// Weighted lower median: the smallest value whose cumulative weight
/// reaches half the total.
fn weighted_lower_median(vals: &mut [(f64, f64)]) -> f64 {
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = vals.iter().map(|v| v.1).sum();
    let mut acc = 0.0;
    for &(v, w) in vals.iter() {
        acc += w;
        if acc >= 0.5 * total * (1.0 - 1e-15) {
            return v;
        }
    }
    vals.last().map_or(0.0, |v| v.0)
}

/// Monomial exponents of total degree `< l` in `n` variables.
fn monomials(n: usize, l: u32) -> Vec<[u32; MAX_DIM]> {
    let mut out = Vec::new();
    let mut e = [0u32; MAX_DIM];
    fn rec(i: usize, n: usize, left: u32, e: &mut [u32; MAX_DIM], out: &mut Vec<[u32; MAX_DIM]>) {
        if i == n {
            out.push(*e);
            return;
        }
        for p in 0..=left {
            e[i] = p;
            rec(i + 1, n, left - p, e, out);
        }
        e[i] = 0;
    }
    rec(0, n, l - 1, &mut e, &mut out);
    out
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let m = b.len();
    for c in 0..m {
        let p = (c..m).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..m {
            let f = a[r][c] / a[c][c];
            for k in c..m {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; m];
    for c in (0..m).rev() {
        let s: f64 = (c + 1..m).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

/// `E^l(B)φ`: best `L1(B)` error by polynomials of degree `< l`.
///
/// `l = 1` uses the weighted lower median; higher `l` runs iteratively
/// reweighted least squares on cell centres and never reports more than the
/// constant fit.
pub fn best_l1_poly_error<B: BoundaryFunction + ?Sized>(phi: &B, b: &LatticeBox, l: u32) -> Result<f64> {
    if !(1..=3).contains(&l) {
        return Err(Error::InvalidArgument(format!("polynomial order {l} outside 1..=3")));
    }
    let n = b.dim;
    let cv = phi.pitch().powi(n as i32);
    let cells = box_cells(phi, b);
    let vals: Vec<(f64, f64)> = cells.iter().map(|(idx, w)| (phi.cell_value(&idx[..n]), *w)).collect();
    let med = weighted_lower_median(&mut vals.clone());
    let e1 = vals.iter().map(|(v, w)| w * (v - med).abs()).sum::<f64>() * cv;
    if l == 1 || e1 == 0.0 {
        return Ok(e1);
    }
    // normalised coordinates of cell centres in [-1, 1]
    let h = phi.pitch();
    let coords: Vec<[f64; MAX_DIM]> = cells
        .iter()
        .map(|(idx, _)| {
            let mut c = [0.0; MAX_DIM];
            for i in 0..n {
                let mid = 0.5 * (b.lo_f64(i) + b.hi_f64(i));
                let half = 0.5 * (b.hi_f64(i) - b.lo_f64(i));
                c[i] = ((idx[i] as f64 + 0.5) * h - mid) / half;
            }
            c
        })
        .collect();
    let basis = monomials(n, l);
    let design: Vec<Vec<f64>> = coords
        .iter()
        .map(|c| basis.iter().map(|e| (0..n).map(|i| c[i].powi(e[i] as i32)).product()).collect())
        .collect();
    let err_of = |coef: &[f64]| -> f64 {
        vals.iter()
            .zip(&design)
            .map(|((v, w), row)| w * (v - row.iter().zip(coef).map(|(a, c)| a * c).sum::<f64>()).abs())
            .sum::<f64>()
            * cv
    };
    let scale = vals.iter().map(|v| v.0.abs()).fold(0.0, f64::max).max(1e-300);
    let mut irls: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let mut best = e1;
    let mut prev = f64::INFINITY;
    let m = basis.len();
    for _ in 0..300 {
        let mut ata = vec![vec![0.0; m]; m];
        let mut atb = vec![0.0; m];
        for ((row, (v, _)), &wi) in design.iter().zip(&vals).zip(&irls) {
            for a in 0..m {
                atb[a] += wi * row[a] * v;
                for c in 0..m {
                    ata[a][c] += wi * row[a] * row[c];
                }
            }
        }
        let Some(coef) = solve_dense(ata, atb) else { break };
        let e = err_of(&coef);
        best = best.min(e);
        if (prev - e).abs() <= 1e-6 * e.max(1e-300) {
            break;
        }
        prev = e;
        for (((v, w), row), wi) in vals.iter().zip(&design).zip(irls.iter_mut()) {
            let r = v - row.iter().zip(&coef).map(|(a, c)| a * c).sum::<f64>();
            *wi = w / r.abs().max(1e-10 * scale);
        }
    }
    Ok(best)
}

/// Default number of `h` nodes per unit of `r(Q)` in [`delta_modulus`].
pub const SHIFT_RESOLUTION: u32 = 16;

/// `δ^l(Q)φ = |Q|^{-2} ∫_{r(Q) I} ∫_Q |Δ^l(h) φ(x)| dx dh` with
/// `I = (-1, 1)^n`.
///
/// The inner integral is exact for shifts on the grid lattice; the outer one
/// is a trapezoid rule at pitch `max(2^-d, r(Q) / SHIFT_RESOLUTION)`, exact
/// for `l = 1` at full resolution.
pub fn delta_modulus<B: BoundaryFunction + ?Sized>(phi: &B, q: &DyadicCube, l: u32) -> Result<f64> {
    delta_modulus_with(phi, q, l, SHIFT_RESOLUTION)
}

pub fn delta_modulus_with<B: BoundaryFunction + ?Sized>(
    phi: &B,
    q: &DyadicCube,
    l: u32,
    shift_resolution: u32,
) -> Result<f64> {
    if !(1..=3).contains(&l) {
        return Err(Error::InvalidArgument(format!("difference order {l} outside 1..=3")));
    }
    let d = phi.depth();
    if q.level > d {
        return Err(Error::Resolution(format!(
            "cube level {} finer than grid depth {d}",
            q.level
        )));
    }
    let n = q.dim();
    let cells = 1i64 << (d - q.level); // grid cells per axis in Q
    let step = (cells / shift_resolution.max(1) as i64).max(1); // h pitch in cells
    let nodes = 2 * (cells / step) + 1;
    let coeff: Vec<f64> = match l {
        1 => vec![1.0, -1.0],
        2 => vec![1.0, -2.0, 1.0],
        _ => vec![1.0, -3.0, 3.0, -1.0],
    };
    let base: Vec<i64> = q.index().iter().map(|&m| m * cells).collect();
    let total_nodes = (nodes as usize).pow(n as u32);
    let inner_count = (cells as usize).pow(n as u32);
    let sums = par::map_range(total_nodes, |mut lin| {
        let mut h = [0i64; MAX_DIM];
        let mut w = 1.0;
        for i in (0..n).rev() {
            let j = (lin % nodes as usize) as i64;
            lin /= nodes as usize;
            h[i] = (j - cells / step) * step;
            if j == 0 || j == nodes - 1 {
                w *= 0.5;
            }
        }
        let mut acc = 0.0;
        let mut idx = [0i64; MAX_DIM];
        for mut c in 0..inner_count {
            for i in (0..n).rev() {
                idx[i] = base[i] + (c % cells as usize) as i64;
                c /= cells as usize;
            }
            let mut diff = 0.0;
            for (s, &cf) in coeff.iter().enumerate() {
                let mut p = [0i64; MAX_DIM];
                for i in 0..n {
                    p[i] = idx[i] + s as i64 * h[i];
                }
                diff += cf * phi.cell_value(&p[..n]);
            }
            acc += diff.abs();
        }
        w * acc
    });
    let pitch = phi.pitch();
    let h_cell = (step as f64 * pitch).powi(n as i32);
    let x_cell = pitch.powi(n as i32);
    let vol = q.volume();
    Ok(sums.iter().sum::<f64>() * h_cell * x_cell / (vol * vol))
}

/// A function on `window × (0, T]`.
pub trait HalfSpaceFunction: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64], t: f64) -> f64;
    /// Analytic `D^α f` for the multi-index `alpha` (length `n + 1`, last
    /// entry is the `t` order) when available.
    fn analytic(&self, _alpha: &[u8], _x: &[f64], _t: f64) -> Option<f64> {
        None
    }
}

/// `D^α f(x, t)`: analytic when provided, otherwise centred differences with
/// spatial step `h` and time step `min(h, t / 4)`.
pub fn derivative<F: HalfSpaceFunction + ?Sized>(f: &F, alpha: &[u8], x: &[f64], t: f64, h: f64) -> f64 {
    if let Some(v) = f.analytic(alpha, x, t) {
        return v;
    }
    let n = f.dim();
    let Some(a) = alpha.iter().position(|&o| o > 0) else {
        return f.value(x, t);
    };
    let mut beta = [0u8; MAX_DIM + 1];
    beta[..=n].copy_from_slice(&alpha[..=n]);
    beta[a] -= 1;
    let s = if a == n { h.min(t / 4.0) } else { h };
    let mut xp = [0.0; MAX_DIM];
    xp[..n].copy_from_slice(&x[..n]);
    let (plus, minus) = if a == n {
        (derivative(f, &beta[..=n], x, t + s, h), derivative(f, &beta[..=n], x, t - s, h))
    } else {
        xp[a] = x[a] + s;
        let p = derivative(f, &beta[..=n], &xp[..n], t, h);
        xp[a] = x[a] - s;
        let m = derivative(f, &beta[..=n], &xp[..n], t, h);
        (p, m)
    };
    (plus - minus) / (2.0 * s)
}

type ValueFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// Closure-backed half-space function with an optional analytic gradient.
#[derive(Clone)]
pub struct FnHalfSpace {
    n: usize,
    f: ValueFn,
    grad: Option<GradFn>,
}

impl FnHalfSpace {
    pub fn new(n: usize, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        FnHalfSpace { n, f: Arc::new(f), grad: None }
    }

    /// Attaches `∇_{x,t} f`, written into a slice of length `n + 1`.
    pub fn with_gradient(mut self, g: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(g));
        self
    }
}

impl HalfSpaceFunction for FnHalfSpace {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, x: &[f64], t: f64) -> f64 {
        (self.f)(x, t)
    }
    fn analytic(&self, alpha: &[u8], x: &[f64], t: f64) -> Option<f64> {
        let g = self.grad.as_ref()?;
        if alpha.iter().map(|&a| a as u32).sum::<u32>() != 1 {
            return None;
        }
        let a = alpha.iter().position(|&o| o == 1)?;
        let mut out = [0.0; MAX_DIM + 1];
        g(x, t, &mut out[..=self.n]);
        Some(out[a])
    }
}

/// Samples on the lattice `2^-d Z^n` (periodic) times the graded grid
/// `t_j = j 2^-d_t`, `j = 1..=T 2^d_t`, read back by multilinear
/// interpolation (constant in `t` below `t_1`).
#[derive(Clone, Debug, PartialEq)]
pub struct SampledHalfSpace {
    pub n: usize,
    pub period: u32,
    pub depth: u32,
    pub t_depth: u32,
    /// Row-major over `(x_1, .., x_n, t)`.
    pub values: Vec<f64>,
}

impl SampledHalfSpace {
    pub fn t_count(t_depth: u32) -> usize {
        (T_EXTENT as usize) << t_depth
    }

    /// Samples `f` at the lattice points.
    pub fn sample<F: HalfSpaceFunction + ?Sized>(f: &F, win: &Window, depth: u32, t_depth: u32) -> Self {
        let n = win.dim();
        let per = win.cells_per_axis(depth) as usize;
        let nt = Self::t_count(t_depth);
        let h = (-(depth as f64)).exp2();
        let ht = (-(t_depth as f64)).exp2();
        let values = par::map_range(per.pow(n as u32) * nt, |lin| {
            let (mut xl, j) = (lin / nt, lin % nt);
            let mut x = [0.0; MAX_DIM];
            for i in (0..n).rev() {
                x[i] = (xl % per) as f64 * h;
                xl /= per;
            }
            f.value(&x[..n], (j + 1) as f64 * ht)
        });
        SampledHalfSpace { n, period: win.period(), depth, t_depth, values }
    }

    fn at(&self, idx: &[i64], j: usize) -> f64 {
        let per = (self.period as i64) << self.depth;
        let nt = Self::t_count(self.t_depth);
        let xl = idx.iter().fold(0i64, |acc, &m| acc * per + m.rem_euclid(per)) as usize;
        self.values[xl * nt + j]
    }
}

impl HalfSpaceFunction for SampledHalfSpace {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, x: &[f64], t: f64) -> f64 {
        let n = self.n;
        let scale = (self.depth as f64).exp2();
        let nt = Self::t_count(self.t_depth);
        let u = t * (self.t_depth as f64).exp2() - 1.0;
        let (j0, ft) = if u <= 0.0 {
            (0, 0.0)
        } else if u >= (nt - 1) as f64 {
            (nt - 1, 0.0)
        } else {
            (u.floor() as usize, u - u.floor())
        };
        let mut base = [0i64; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for i in 0..n {
            let s = x[i] * scale;
            base[i] = s.floor() as i64;
            frac[i] = s - s.floor();
        }
        let mut acc = 0.0;
        for corner in 0..1usize << (n + 1) {
            let mut w = 1.0;
            let mut idx = [0i64; MAX_DIM];
            for i in 0..n {
                let up = corner >> i & 1 == 1;
                idx[i] = base[i] + up as i64;
                w *= if up { frac[i] } else { 1.0 - frac[i] };
            }
            let up = corner >> n & 1 == 1;
            if up && ft == 0.0 {
                continue;
            }
            w *= if up { ft } else { 1.0 - ft };
            let j = if up { j0 + 1 } else { j0 };
            acc += w * self.at(&idx[..n], j);
        }
        acc
    }
}

/// One labelled summand of a norm.
#[derive(Clone, Debug, PartialEq)]
pub struct NormTerm {
    pub label: String,
    pub value: f64,
}

/// Itemised norm value.
#[derive(Clone, Debug, PartialEq)]
pub struct NormReport {
    pub value: f64,
    pub terms: Vec<NormTerm>,
    pub truncation_level: u32,
    /// Contribution of the finest level included.
    pub refinement_delta: f64,
    pub note: Option<String>,
}

impl NormReport {
    pub fn from_terms(terms: Vec<NormTerm>, truncation_level: u32, refinement_delta: f64) -> Self {
        let value = terms.iter().map(|t| t.value).sum();
        NormReport { value, terms, truncation_level, refinement_delta, note: None }
    }

    /// `term,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("term,value\n");
        for t in &self.terms {
            s.push_str(&format!("{},{:?}\n", t.label, t.value));
        }
        s
    }
}

/// Resolution knobs of [`weighted_sobolev_norm`].
#[derive(Clone, Copy, Debug)]
pub struct SobolevOptions {
    /// Finest spatial cell level.
    pub x_depth: u32,
    /// Number of dyadic `t` layers below `t = 1`.
    pub t_depth: u32,
    /// Gauss points per spatial axis per cell.
    pub x_points: usize,
    /// Gauss points per `t` layer.
    pub t_points: usize,
    /// Finite-difference step.
    pub fd_step: f64,
}

impl SobolevOptions {
    pub fn for_depth(d: u32) -> Self {
        SobolevOptions { x_depth: d, t_depth: d + 8, x_points: 3, t_points: 5, fd_step: (-(d as f64) - 4.0).exp2() }
    }
}

/// Multi-indices of order `<= l` in `n + 1` variables, ordered by order.
pub fn multi_indices(n: usize, l: u32) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for order in 0..=l {
        let mut cur = vec![0u8; n + 1];
        fn rec(i: usize, left: u32, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
            if i + 1 == cur.len() {
                cur[i] = left as u8;
                out.push(cur.clone());
                return;
            }
            for p in (0..=left).rev() {
                cur[i] = p as u8;
                rec(i + 1, left - p, cur, out);
            }
        }
        rec(0, order, &mut cur, &mut out);
    }
    out
}

fn alpha_label(a: &[u8]) -> String {
    let parts: Vec<String> = a.iter().map(|v| v.to_string()).collect();
    format!("D[{}]", parts.join(" "))
}

/// Spatial cells of level `lx` covering `[lo, hi)` per axis, clipped.
fn x_pieces(region: &RealBox, n: usize, lx: u32) -> Vec<(Vec<f64>, Vec<f64>)> {
    let s = (-(lx as f64)).exp2();
    let axes: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|i| {
            let mut v = Vec::new();
            let mut a = region.lo[i];
            while a < region.hi[i] {
                let next = ((a / s).floor() + 1.0) * s;
                let b = next.min(region.hi[i]);
                v.push((a, b));
                a = b;
            }
            v
        })
        .collect();
    let total: usize = axes.iter().map(|a| a.len()).product();
    (0..total)
        .map(|mut lin| {
            let mut lo = vec![0.0; n];
            let mut hi = vec![0.0; n];
            for i in (0..n).rev() {
                let (a, b) = axes[i][lin % axes[i].len()];
                lin /= axes[i].len();
                lo[i] = a;
                hi[i] = b;
            }
            (lo, hi)
        })
        .collect()
}

struct SobolevParts {
    alphas: Vec<Vec<u8>>,
    per_alpha: Vec<f64>,
    /// `(j, total)` for the layer `(2^{-j-1}, 2^{-j}]`.
    layers: Vec<(i64, f64)>,
    inner: f64,
}

fn sobolev_parts<F: HalfSpaceFunction + ?Sized>(
    f: &F,
    w: &Weight,
    region: &RealBox,
    l: u32,
    opts: &SobolevOptions,
) -> Result<SobolevParts> {
    if !(1..=3).contains(&l) {
        return Err(Error::InvalidArgument(format!("Sobolev order {l} outside 1..=3")));
    }
    let n = f.dim();
    if region.dim != n + 1 {
        return Err(Error::DimensionMismatch { expected: n + 1, got: region.dim });
    }
    let alphas = multi_indices(n, l);
    let (t_lo, t_hi) = (region.lo[n].max(0.0), region.hi[n].min(T_EXTENT));
    let floor_t = (-(opts.t_depth as f64)).exp2();
    let mut bounds: Vec<(i64, f64, f64)> = Vec::new();
    for j in -1..opts.t_depth as i64 {
        let a = (-(j as f64) - 1.0).exp2().max(t_lo);
        let b = (-(j as f64)).exp2().min(t_hi);
        if b > a {
            bounds.push((j, a, b));
        }
    }
    let gx = gauss_legendre(opts.x_points);
    let gt = gauss_legendre(opts.t_points);
    let mut per_alpha = vec![0.0; alphas.len()];
    let mut layers = Vec::with_capacity(bounds.len());
    for &(j, a, b) in &bounds {
        let lx = (j + 2).clamp(0, opts.x_depth as i64) as u32;
        let pieces = x_pieces(region, n, lx);
        let per_piece = par::map_slice(&pieces, |(lo, hi)| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; alphas.len()];
            let npts = gx.nodes.len().pow(n as u32);
            let mut x = [0.0; MAX_DIM];
            for (tn, tw) in gt.nodes.iter().zip(&gt.weights) {
                let t = 0.5 * (a + b) + 0.5 * (b - a) * tn;
                let wt = 0.5 * (b - a) * tw;
                for mut p in 0..npts {
                    let mut wx = 1.0;
                    for i in (0..n).rev() {
                        let k = p % gx.nodes.len();
                        p /= gx.nodes.len();
                        x[i] = 0.5 * (lo[i] + hi[i]) + 0.5 * (hi[i] - lo[i]) * gx.nodes[k];
                        wx *= 0.5 * (hi[i] - lo[i]) * gx.weights[k];
                    }
                    let g = w.value(&x[..n], t);
                    for (s, al) in acc.iter_mut().zip(&alphas) {
                        let dv = derivative(f, al, &x[..n], t, opts.fd_step);
                        if !dv.is_finite() {
                            return Err(Error::NonFiniteDerivative {
                                cell: format!("x={:?} t={t} alpha={al:?}", &x[..n]),
                            });
                        }
                        *s += wt * wx * g * dv.abs();
                    }
                }
            }
            Ok(acc)
        });
        let mut layer_total = 0.0;
        for r in per_piece {
            for (s, v) in per_alpha.iter_mut().zip(r?) {
                *s += v;
                layer_total += v;
            }
        }
        layers.push((j, layer_total));
    }
    let mut inner = 0.0;
    if t_lo < floor_t {
        let pieces = x_pieces(region, n, opts.x_depth);
        let tm = 0.5 * (t_lo + floor_t);
        let per_piece = par::map_slice(&pieces, |(lo, hi)| -> Result<Vec<f64>> {
            let mut rl = lo.clone();
            let mut rh = hi.clone();
            rl.push(t_lo);
            rh.push(floor_t);
            let gi = w.integral(&RealBox::new(&rl, &rh))?;
            let xc: Vec<f64> = (0..n).map(|i| 0.5 * (lo[i] + hi[i])).collect();
            alphas
                .iter()
                .map(|al| {
                    let dv = derivative(f, al, &xc, tm, opts.fd_step);
                    if dv.is_finite() {
                        Ok(gi * dv.abs())
                    } else {
                        Err(Error::NonFiniteDerivative { cell: format!("x={xc:?} t={tm}") })
                    }
                })
                .collect()
        });
        for r in per_piece {
            for (s, v) in per_alpha.iter_mut().zip(r?) {
                *s += v;
                inner += v;
            }
        }
    }
    Ok(SobolevParts { alphas, per_alpha, layers, inner })
}

/// `Σ_{|α| <= l} ‖γ D^α f | L1(region)‖`.
///
/// The `t` range is cut into dyadic layers `(2^{-j-1}, 2^{-j}]`; layer `j`
/// uses spatial cells of level `clamp(j + 2, 0, x_depth)`. Below the finest
/// layer the weight is integrated exactly and the derivative frozen at the
/// layer midpoint.
pub fn weighted_sobolev_norm<F: HalfSpaceFunction + ?Sized>(
    f: &F,
    w: &Weight,
    region: &RealBox,
    l: u32,
    opts: &SobolevOptions,
) -> Result<NormReport> {
    let parts = sobolev_parts(f, w, region, l, opts)?;
    let finest = parts.layers.iter().max_by_key(|l| l.0).map_or(0.0, |l| l.1) + parts.inner;
    let terms = parts
        .alphas
        .iter()
        .zip(parts.per_alpha)
        .map(|(a, v)| NormTerm { label: alpha_label(a), value: v })
        .collect();
    Ok(NormReport::from_terms(terms, opts.t_depth, finest))
}

/// The full window times `(0, T]`.
pub fn half_space_region(win: &Window) -> RealBox {
    let n = win.dim();
    let mut lo = vec![0.0; n + 1];
    let mut hi = vec![win.period() as f64; n + 1];
    lo[n] = 0.0;
    hi[n] = T_EXTENT;
    RealBox::new(&lo, &hi)
}

/// `‖f | W^1_1(window × (0, 2^-l), γ)‖` for `l = 0..=t_depth`.
pub fn sobolev_slab_norms<F: HalfSpaceFunction + ?Sized>(
    f: &F,
    w: &Weight,
    win: &Window,
    opts: &SobolevOptions,
) -> Result<Vec<f64>> {
    let mut region = half_space_region(win);
    region.hi[win.dim()] = 1.0;
    let parts = sobolev_parts(f, w, &region, 1, opts)?;
    let mut slabs = vec![parts.inner; opts.t_depth as usize + 1];
    for &(j, v) in &parts.layers {
        if j >= 0 {
            for slab in slabs.iter_mut().take(j as usize + 1) {
                *slab += v;
            }
        }
    }
    Ok(slabs)
}

/// Boundary values of a half-space function on one cube.
#[derive(Clone, Debug)]
pub struct Trace {
    pub cube: DyadicCube,
    pub depth: u32,
    /// Cell-centre values of `f(·, t_min)`, canonical order within the cube.
    pub values: Vec<f64>,
    /// `∫_Q |f(·, t_i) - f(·, t_{i+1})|` for consecutive pairs.
    pub residuals: Vec<f64>,
    pub tolerance: f64,
    pub converged: bool,
}

impl Trace {
    /// `‖trace - φ‖_{L1(Q)}`.
    pub fn l1_error<B: BoundaryFunction + ?Sized>(&self, phi: &B) -> f64 {
        let n = self.cube.dim();
        let cells = 1i64 << (self.depth - self.cube.level);
        let cv = (-((self.depth as usize * n) as f64)).exp2();
        self.values
            .iter()
            .enumerate()
            .map(|(mut c, v)| {
                let mut idx = [0i64; MAX_DIM];
                for i in (0..n).rev() {
                    idx[i] = self.cube.index()[i] * cells + (c as i64 % cells);
                    c /= cells as usize;
                }
                (v - phi.cell_value(&idx[..n])).abs()
            })
            .sum::<f64>()
            * cv
    }
}

/// Default trace sequence `2^-j`, `j = from..=to`.
pub fn dyadic_t_sequence(from: u32, to: u32) -> Vec<f64> {
    (from..=to).map(|j| (-(j as f64)).exp2()).collect()
}

/// Trace candidate `f(·, t_min)` on `Q` at pitch `2^-depth` with Cauchy
/// residuals along `t_seq`; converged when the largest residual is below
/// `10^-2 ‖candidate‖_{L1(Q)}` and the residuals do not grow.
pub fn trace_of<F: HalfSpaceFunction + ?Sized>(f: &F, q: &DyadicCube, t_seq: &[f64], depth: u32) -> Result<Trace> {
    if t_seq.len() < 2 || t_seq.windows(2).any(|p| !(p[1] < p[0]) || p[1] <= 0.0) {
        return Err(Error::InvalidArgument("t sequence must be strictly decreasing and positive".into()));
    }
    if q.level > depth {
        return Err(Error::Resolution(format!("cube level {} finer than depth {depth}", q.level)));
    }
    let n = q.dim();
    let cells = 1i64 << (depth - q.level);
    let h = (-(depth as f64)).exp2();
    let count = (cells as usize).pow(n as u32);
    let centre = |mut c: usize| {
        let mut x = [0.0; MAX_DIM];
        for i in (0..n).rev() {
            x[i] = ((q.index()[i] * cells + (c as i64 % cells)) as f64 + 0.5) * h;
            c /= cells as usize;
        }
        x
    };
    let layers: Vec<Vec<f64>> = t_seq
        .iter()
        .map(|&t| par::map_range(count, |c| f.value(&centre(c)[..n], t)))
        .collect();
    let cv = h.powi(n as i32);
    let residuals: Vec<f64> = layers
        .windows(2)
        .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| (a - b).abs()).sum::<f64>() * cv)
        .collect();
    let values = layers.last().cloned().unwrap_or_default();
    let norm = values.iter().map(|v| v.abs()).sum::<f64>() * cv;
    let tolerance = (1e-2 * norm).max(1e-12);
    let sup = residuals.iter().copied().fold(0.0, f64::max);
    let tail_ok = residuals.last().copied().unwrap_or(0.0) <= residuals[0] * (1.0 + 1e-9) + 1e-15;
    Ok(Trace { cube: *q, depth, values, residuals, tolerance, converged: sup < tolerance && tail_ok })
}

/// Trace over the whole window as a grid function, with the worst cube's
/// convergence flag.
pub fn trace_window<F: HalfSpaceFunction + ?Sized>(
    f: &F,
    win: &Window,
    t_seq: &[f64],
    depth: u32,
) -> Result<(GridFunction, bool)> {
    let t_min = *t_seq.last().ok_or_else(|| Error::InvalidArgument("empty t sequence".into()))?;
    let g = GridFunction::from_fn(win, depth, |x| f.value(x, t_min));
    let mut ok = true;
    for q in win.cubes_at_level(0) {
        ok &= trace_of(f, &q, t_seq, depth)?.converged;
    }
    Ok((g, ok))
}
