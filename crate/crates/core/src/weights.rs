//! Weights on the half-space window, their box averages, the local A1
//! constant, and the derived scale tables.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{DyadicBox, DyadicCube, RealBox, Window, MAX_DIM, T_EXTENT};
use crate::par;
use crate::quadrature::adaptive_cubature;

/// Relative tolerance of the quadrature path.
pub const QUAD_REL_TOL: f64 = 1e-8;
const QUAD_MAX_REGIONS: usize = 400_000;

type Evaluator = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Built-in weight shapes. All are periodic in `x` with the window period.
#[derive(Clone)]
pub enum WeightKind {
    /// `γ ≡ c`.
    Constant { c: f64 },
    /// `γ = c |t|^{-α}`, `α ∈ [0, 1)`.
    Power { alpha: f64, scale: f64 },
    /// `γ = w(x_1) · c |t|^{-α}` with `w` a positive step function of
    /// period `step_period`, constant on `steps.len()` equal pieces.
    StepPower { alpha: f64, scale: f64, steps: Vec<f64>, step_period: f64 },
    /// Constant on each unit cell of the window (row-major, `M^n` values).
    PiecewiseCells { values: Vec<f64> },
    /// Arbitrary positive evaluator; no exact integrals.
    Custom(Evaluator),
}

impl fmt::Debug for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightKind::Constant { c } => write!(f, "Constant({c})"),
            WeightKind::Power { alpha, scale } => write!(f, "Power(alpha={alpha}, scale={scale})"),
            WeightKind::StepPower { alpha, scale, steps, step_period } => write!(
                f,
                "StepPower(alpha={alpha}, scale={scale}, steps={steps:?}, period={step_period})"
            ),
            WeightKind::PiecewiseCells { values } => write!(f, "PiecewiseCells({values:?})"),
            WeightKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// A weight `γ(x, t)` on `window × (0, T]`.
#[derive(Clone, Debug)]
pub struct Weight {
    kind: WeightKind,
    n: usize,
    period: u32,
    declared_c: Option<f64>,
}

/// Essential-infimum estimate; `certified` is false for sampled minima.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Essinf {
    pub value: f64,
    pub certified: bool,
}

impl Weight {
    pub fn constant(win: &Window, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("constant weight must be positive, got {c}")));
        }
        Ok(Weight { kind: WeightKind::Constant { c }, n: win.dim(), period: win.period(), declared_c: Some(1.0) })
    }

    /// `|t|^{-α}`.
    pub fn power(win: &Window, alpha: f64) -> Result<Self> {
        Weight::scaled_power(win, alpha, 1.0)
    }

    /// `c |t|^{-α}`.
    pub fn scaled_power(win: &Window, alpha: f64, scale: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_positive(scale)?;
        Ok(Weight {
            kind: WeightKind::Power { alpha, scale },
            n: win.dim(),
            period: win.period(),
            declared_c: Some(1.0 / (1.0 - alpha)),
        })
    }

    pub fn step_power(win: &Window, alpha: f64, scale: f64, steps: Vec<f64>, step_period: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_positive(scale)?;
        if steps.is_empty() || steps.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("step values must be positive".into()));
        }
        let ratio = win.period() as f64 / step_period;
        if !(step_period > 0.0) || (ratio - ratio.round()).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "step period {step_period} must divide the window period {}",
                win.period()
            )));
        }
        let (lo, hi) = min_max(&steps);
        Ok(Weight {
            kind: WeightKind::StepPower { alpha, scale, steps, step_period },
            n: win.dim(),
            period: win.period(),
            declared_c: Some(hi / lo / (1.0 - alpha)),
        })
    }

    pub fn piecewise_cells(win: &Window, values: Vec<f64>) -> Result<Self> {
        let expected = (win.period() as usize).pow(win.dim() as u32);
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("cell values must be positive".into()));
        }
        let (lo, hi) = min_max(&values);
        Ok(Weight {
            kind: WeightKind::PiecewiseCells { values },
            n: win.dim(),
            period: win.period(),
            declared_c: Some(hi / lo),
        })
    }

    /// A general weight; `x` is passed already wrapped into `[0, M)`.
    pub fn custom(
        win: &Window,
        f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        declared_c: Option<f64>,
    ) -> Self {
        Weight { kind: WeightKind::Custom(Arc::new(f)), n: win.dim(), period: win.period(), declared_c }
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn declared_c_gamma(&self) -> Option<f64> {
        self.declared_c
    }

    pub fn has_exact_box_integral(&self) -> bool {
        !matches!(self.kind, WeightKind::Custom(_))
    }

    pub fn has_exact_essinf(&self) -> bool {
        self.has_exact_box_integral()
    }

    /// `γ(x, t)` for `t > 0`.
    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        let p = self.period as f64;
        match &self.kind {
            WeightKind::Constant { c } => *c,
            WeightKind::Power { alpha, scale } => scale * t.powf(-alpha),
            WeightKind::StepPower { alpha, scale, steps, step_period } => {
                let len = steps.len();
                let u = x[0].rem_euclid(*step_period) / step_period * len as f64;
                steps[(u as usize).min(len - 1)] * scale * t.powf(-alpha)
            }
            WeightKind::PiecewiseCells { values } => {
                let m = self.period as usize;
                let idx = x[..self.n]
                    .iter()
                    .fold(0usize, |acc, &xi| acc * m + (xi.rem_euclid(p) as usize).min(m - 1));
                values[idx]
            }
            WeightKind::Custom(f) => {
                let mut xs = [0.0; MAX_DIM];
                for i in 0..self.n {
                    xs[i] = x[i].rem_euclid(p);
                }
                f(&xs[..self.n], t)
            }
        }
    }

    fn t_integral(alpha: f64, scale: f64, a: f64, b: f64) -> f64 {
        if alpha == 0.0 {
            scale * (b - a)
        } else {
            scale * (b.powf(1.0 - alpha) - a.powf(1.0 - alpha)) / (1.0 - alpha)
        }
    }

    /// `∫_lo^hi w(x_1) dx_1` for a periodic step profile.
    fn step_integral(steps: &[f64], period: f64, lo: f64, hi: f64) -> f64 {
        let len = steps.len();
        let w = period / len as f64;
        let mut total = 0.0;
        let mut j = (lo / w).floor() as i64;
        loop {
            let a = (j as f64 * w).max(lo);
            let b = ((j + 1) as f64 * w).min(hi);
            if a >= hi {
                break;
            }
            if b > a {
                total += steps[j.rem_euclid(len as i64) as usize] * (b - a);
            }
            j += 1;
        }
        total
    }

    /// Exact `∬_B γ` when the weight has a closed form.
    pub fn exact_integral(&self, b: &RealBox) -> Option<f64> {
        let n = self.n;
        let (t0, t1) = (b.lo[n], b.hi[n]);
        let x_vol: f64 = (0..n).map(|i| b.hi[i] - b.lo[i]).product();
        match &self.kind {
            WeightKind::Constant { c } => Some(c * x_vol * (t1 - t0)),
            WeightKind::Power { alpha, scale } => Some(x_vol * Self::t_integral(*alpha, *scale, t0, t1)),
            WeightKind::StepPower { alpha, scale, steps, step_period } => {
                let rest: f64 = (1..n).map(|i| b.hi[i] - b.lo[i]).product();
                let sx = Self::step_integral(steps, *step_period, b.lo[0], b.hi[0]);
                Some(sx * rest * Self::t_integral(*alpha, *scale, t0, t1))
            }
            WeightKind::PiecewiseCells { values } => {
                let m = self.period as i64;
                let per_axis: Vec<Vec<(usize, f64)>> = (0..n)
                    .map(|i| {
                        let mut v = Vec::new();
                        let mut j = b.lo[i].floor() as i64;
                        while (j as f64) < b.hi[i] {
                            let len = ((j + 1) as f64).min(b.hi[i]) - (j as f64).max(b.lo[i]);
                            if len > 0.0 {
                                v.push((j.rem_euclid(m) as usize, len));
                            }
                            j += 1;
                        }
                        v
                    })
                    .collect();
                let mut total = 0.0;
                let mut idx = vec![0usize; n];
                'outer: loop {
                    let mut lin = 0usize;
                    let mut vol = 1.0;
                    for i in 0..n {
                        let (c, l) = per_axis[i][idx[i]];
                        lin = lin * m as usize + c;
                        vol *= l;
                    }
                    total += values[lin] * vol;
                    for i in 0..n {
                        idx[i] += 1;
                        if idx[i] < per_axis[i].len() {
                            continue 'outer;
                        }
                        idx[i] = 0;
                    }
                    break;
                }
                Some(total * (t1 - t0))
            }
            WeightKind::Custom(_) => None,
        }
    }

    fn x_breaks(&self, b: &RealBox) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut breaks = vec![Vec::new(); n + 1];
        match &self.kind {
            WeightKind::StepPower { steps, step_period, .. } => {
                let w = step_period / steps.len() as f64;
                let mut j = (b.lo[0] / w).floor() as i64 + 1;
                while (j as f64) * w < b.hi[0] {
                    breaks[0].push(j as f64 * w);
                    j += 1;
                }
            }
            WeightKind::PiecewiseCells { .. } => {
                for (i, br) in breaks.iter_mut().enumerate().take(n) {
                    let mut j = b.lo[i].floor() as i64 + 1;
                    while (j as f64) < b.hi[i] {
                        br.push(j as f64);
                        j += 1;
                    }
                }
            }
            _ => {}
        }
        breaks
    }

    /// `∬_B γ` by adaptive cubature.
    pub fn quadrature_integral(&self, b: &RealBox) -> Result<f64> {
        let n = self.n;
        let f = |z: &[f64]| self.value(&z[..n], z[n]);
        let breaks = self.x_breaks(b);
        let vol = b.volume();
        let c = adaptive_cubature(&f, b.lo(), b.hi(), &breaks, QUAD_REL_TOL, 0.0, QUAD_MAX_REGIONS);
        if !c.value.is_finite() {
            return Err(Error::Quadrature { cell: format!("{:?}..{:?}", b.lo(), b.hi()), reason: "non-finite integrand".into() });
        }
        if !c.converged && c.error > 1e-5 * c.value.abs().max(vol * f64::MIN_POSITIVE) {
            return Err(Error::Quadrature {
                cell: format!("{:?}..{:?}", b.lo(), b.hi()),
                reason: format!("no convergence after {} regions (error {:.3e})", c.regions, c.error),
            });
        }
        Ok(c.value)
    }

    /// `∬_B γ`, exact when possible.
    pub fn integral(&self, b: &RealBox) -> Result<f64> {
        match self.exact_integral(b) {
            Some(v) => Ok(v),
            None => self.quadrature_integral(b),
        }
    }

    /// Mean of `γ` over `B`.
    pub fn box_average(&self, b: &RealBox) -> Result<f64> {
        Ok(self.integral(b)? / b.volume())
    }

    /// Mean of `γ` over a dyadic box `Π_{k,m}` or its dilation.
    pub fn dyadic_average(&self, b: &DyadicBox) -> Result<f64> {
        self.box_average(&b.to_real())
    }

    /// Essential infimum of `γ` over the open box `B`.
    pub fn essinf(&self, b: &RealBox) -> Essinf {
        let n = self.n;
        let t1 = b.hi[n];
        let t_min = |alpha: f64, scale: f64| if alpha == 0.0 { scale } else { scale * t1.powf(-alpha) };
        let exact = |value| Essinf { value, certified: true };
        match &self.kind {
            WeightKind::Constant { c } => exact(*c),
            WeightKind::Power { alpha, scale } => exact(t_min(*alpha, *scale)),
            WeightKind::StepPower { alpha, scale, steps, step_period } => {
                let len = steps.len();
                let w = step_period / len as f64;
                let mut best = f64::INFINITY;
                let mut j = (b.lo[0] / w).floor() as i64;
                while (j as f64) * w < b.hi[0] {
                    if ((j + 1) as f64 * w).min(b.hi[0]) > (j as f64 * w).max(b.lo[0]) {
                        best = best.min(steps[j.rem_euclid(len as i64) as usize]);
                    }
                    j += 1;
                }
                exact(best * t_min(*alpha, *scale))
            }
            WeightKind::PiecewiseCells { values } => {
                // cells overlapped with positive measure
                let m = self.period as i64;
                let ranges: Vec<(i64, i64)> = (0..n)
                    .map(|i| {
                        let a = b.lo[i].floor() as i64;
                        let c = b.hi[i].ceil() as i64; // exclusive
                        (a, c)
                    })
                    .collect();
                let mut best = f64::INFINITY;
                let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
                'outer: loop {
                    let lin = idx.iter().fold(0usize, |acc, &j| acc * m as usize + j.rem_euclid(m) as usize);
                    best = best.min(values[lin]);
                    for i in 0..n {
                        idx[i] += 1;
                        if idx[i] < ranges[i].1 {
                            continue 'outer;
                        }
                        idx[i] = ranges[i].0;
                    }
                    break;
                }
                exact(best)
            }
            WeightKind::Custom(_) => self.sampled_min(b),
        }
    }

    /// Grid minimum over cell centres, refined until two successive levels
    /// agree to relative `1e-3`.
    fn sampled_min(&self, b: &RealBox) -> Essinf {
        let d = b.dim;
        let n = self.n;
        let mut prev = f64::INFINITY;
        let max_level = match d {
            1 | 2 => 9,
            3 => 6,
            _ => 4,
        };
        for level in 1..=max_level {
            let per = 1usize << level;
            let total = per.pow(d as u32);
            let cur = (0..total)
                .map(|mut lin| {
                    let mut z = [0.0; MAX_DIM + 1];
                    for i in (0..d).rev() {
                        let j = lin % per;
                        lin /= per;
                        z[i] = b.lo[i] + (j as f64 + 0.5) / per as f64 * (b.hi[i] - b.lo[i]);
                    }
                    self.value(&z[..n], z[n])
                })
                .fold(f64::INFINITY, f64::min);
            if level > 1 && (prev - cur).abs() <= 1e-3 * cur.abs() {
                return Essinf { value: cur, certified: false };
            }
            prev = cur;
        }
        Essinf { value: prev, certified: false }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("power exponent must lie in [0, 1), got {alpha}")))
    }
}

fn check_positive(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("scale must be positive, got {c}")))
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Space-time dyadic cube `Q_{k,m} × (j 2^-k, (j+1) 2^-k)`.
fn st_cube(q: &DyadicCube, j: i64) -> RealBox {
    let s = q.side();
    let c = q.corner();
    let n = q.dim();
    let mut b = RealBox { dim: n + 1, lo: [0.0; MAX_DIM + 1], hi: [0.0; MAX_DIM + 1] };
    for i in 0..n {
        b.lo[i] = c[i];
        b.hi[i] = c[i] + s;
    }
    b.lo[n] = j as f64 * s;
    b.hi[n] = (j + 1) as f64 * s;
    b
}

fn t_layers(k: u32) -> i64 {
    (T_EXTENT as i64) << k
}

/// Empirical local A1 constant.
#[derive(Clone, Debug)]
pub struct A1Estimate {
    pub value: f64,
    /// Level, spatial index and time index of the worst cube.
    pub worst: (u32, Vec<i64>, i64),
    pub certified: bool,
}

/// Max over all space-time dyadic cubes of side `<= 1` down to `depth` of
/// average over essential infimum. Fails if a declared constant is exceeded.
pub fn a1loc_constant(w: &Weight, win: &Window, depth: u32) -> Result<A1Estimate> {
    let mut best = A1Estimate { value: 1.0, worst: (0, vec![0; win.dim()], 0), certified: w.has_exact_essinf() };
    for k in 0..=depth {
        let layers = t_layers(k) as usize;
        let count = win.cube_count(k);
        let ratios = par::map_range(count * layers, |i| -> Result<f64> {
            let q = win.cube_from_linear(k, i / layers);
            let b = st_cube(&q, (i % layers) as i64);
            Ok(w.box_average(&b)? / w.essinf(&b).value)
        });
        for (i, r) in ratios.into_iter().enumerate() {
            let r = r?;
            if r > best.value {
                let q = win.cube_from_linear(k, i / layers);
                best.value = r;
                best.worst = (k, q.index().to_vec(), (i % layers) as i64);
            }
        }
    }
    if let Some(declared) = w.declared_c {
        if best.value > declared * (1.0 + 1e-9) {
            return Err(Error::WeightMisdeclared { empirical: best.value, declared });
        }
    }
    Ok(best)
}

/// Scale tables of a weight over the window, levels `0..=depth`.
#[derive(Clone, Debug)]
pub struct WeightScales {
    window: Window,
    depth: u32,
    hat: Vec<Vec<f64>>,
    pub q_tilde: f64,
    pub c_gamma: f64,
    /// `16 q̃ C_γ 2^{n+1}`.
    pub q: f64,
}

impl WeightScales {
    /// Populates `ĝ_{k,m}` for `k <= depth`, estimates `q̃` on that range and
    /// `C_γ` down to `a1_depth`.
    pub fn populate(w: &Weight, win: &Window, depth: u32, a1_depth: u32) -> Result<Self> {
        let c_gamma = a1loc_constant(w, win, a1_depth)?.value;
        Self::populate_with_constant(w, win, depth, c_gamma)
    }

    /// As [`WeightScales::populate`] with a known `C_γ`.
    pub fn populate_with_constant(w: &Weight, win: &Window, depth: u32, c_gamma: f64) -> Result<Self> {
        let n = win.dim();
        let mut hat = Vec::with_capacity(depth as usize + 1);
        for k in 0..=depth {
            let vals = par::map_range(win.cube_count(k), |i| {
                w.dyadic_average(&DyadicBox::pi(win.cube_from_linear(k, i)))
            });
            hat.push(vals.into_iter().collect::<Result<Vec<f64>>>()?);
        }
        let mut scales =
            WeightScales { window: *win, depth, hat, q_tilde: 1.0, c_gamma, q: 0.0 };
        let mut q_tilde = 1.0f64;
        for k in 0..=depth {
            let ratios = par::map_range(win.cube_count(k), |i| -> Result<f64> {
                let q = win.cube_from_linear(k, i);
                let s = q.side();
                let c = q.corner();
                let mut lo = [0.0; MAX_DIM + 1];
                let mut hi = [0.0; MAX_DIM + 1];
                for a in 0..n {
                    lo[a] = c[a] + 0.5 * s - 4.0 * s;
                    hi[a] = c[a] + 0.5 * s + 4.0 * s;
                }
                hi[n] = s;
                let b = RealBox { dim: n + 1, lo, hi };
                let avg = w.box_average(&b)?;
                let min_nb = scales
                    .neighbours(&q, 3)
                    .map(|nb| scales.hat[k as usize][win.linear_index(&nb)])
                    .fold(f64::INFINITY, f64::min);
                Ok(avg / min_nb)
            });
            for r in ratios {
                q_tilde = q_tilde.max(r?);
            }
        }
        scales.q_tilde = q_tilde;
        scales.q = 16.0 * q_tilde * c_gamma * f64::from(1u32 << (n + 1));
        Ok(scales)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// `q` with the doubled `q̃` used by the tiling construction.
    pub fn q_construction(&self) -> f64 {
        2.0 * self.q
    }

    /// Same-level cubes with `|m_i - m'_i| <= radius` (periodic, distinct
    /// images only).
    pub fn neighbours<'a>(&'a self, q: &'a DyadicCube, radius: i64) -> impl Iterator<Item = DyadicCube> + 'a {
        let n = q.dim();
        let width = 2 * radius + 1;
        let total = (width as usize).pow(n as u32);
        let mut seen = std::collections::HashSet::new();
        (0..total).filter_map(move |mut lin| {
            let mut idx = [0i64; MAX_DIM];
            for i in (0..n).rev() {
                idx[i] = q.index()[i] + (lin as i64 % width) - radius;
                lin /= width as usize;
            }
            let c = self.window.cube(q.level, &idx[..n]);
            seen.insert(c).then_some(c)
        })
    }

    fn check(&self, q: &DyadicCube) -> Result<()> {
        if q.level > self.depth {
            return Err(Error::MissingScale { k: q.level, index: q.index().to_vec() });
        }
        Ok(())
    }

    /// `ĝ_{k,m}`: mean of `γ` over `Π_{k,m}`.
    pub fn hat_gamma(&self, q: &DyadicCube) -> Result<f64> {
        self.check(q)?;
        Ok(self.hat[q.level as usize][self.window.linear_index(q)])
    }

    /// Unchecked `ĝ` lookup for hot loops.
    pub fn hat(&self, q: &DyadicCube) -> f64 {
        self.hat[q.level as usize][self.window.linear_index(q)]
    }

    /// All `ĝ` at one level, in canonical order.
    pub fn level(&self, k: u32) -> &[f64] {
        &self.hat[k as usize]
    }

    /// `∬_{Π_{k,m}} γ = 2^{-k(n+1)} ĝ_{k,m}`.
    pub fn gamma_integral(&self, q: &DyadicCube) -> Result<f64> {
        let n = self.window.dim() as f64;
        Ok((-(q.level as f64) * (n + 1.0)).exp2() * self.hat_gamma(q)?)
    }

    /// `2^{kl} ∬_{Q_{k,m} × (0, 2^-k)} γ`.
    pub fn gamma3(&self, q: &DyadicCube, l: u32) -> Result<f64> {
        Ok((q.level as f64 * l as f64).exp2() * self.gamma_integral(q)?)
    }

    /// CSV rows `k,m...,hat_gamma`.
    pub fn to_csv(&self) -> String {
        let n = self.window.dim();
        let mut out = String::from("k");
        for i in 1..=n {
            out.push_str(&format!(",m{i}"));
        }
        out.push_str(",hat_gamma\n");
        for k in 0..=self.depth {
            for (i, v) in self.hat[k as usize].iter().enumerate() {
                let q = self.window.cube_from_linear(k, i);
                out.push_str(&k.to_string());
                for m in q.index() {
                    out.push_str(&format!(",{m}"));
                }
                out.push_str(&format!(",{v:?}\n"));
            }
        }
        out
    }
}

/// One inequality of the A1 report.
#[derive(Clone, Debug)]
pub struct InequalityCheck {
    pub name: &'static str,
    pub bound: f64,
    pub worst: f64,
    pub pass: bool,
}

/// Outcome of [`verify_a1_inequalities`].
#[derive(Clone, Debug)]
pub struct A1Report {
    pub c_gamma: f64,
    pub q: f64,
    pub checks: Vec<InequalityCheck>,
}

impl A1Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

const REL_SLACK: f64 = 1e-9;

/// Checks the elementary consequences of the A1 condition over every cube
/// down to `depth`. Uses the declared constant when one is given, otherwise
/// the empirical one.
pub fn verify_a1_inequalities(w: &Weight, win: &Window, depth: u32) -> Result<A1Report> {
    let n = win.dim() as i32;
    let c = match w.declared_c {
        Some(c) => c,
        None => a1loc_constant(w, win, depth)?.value,
    };
    let scales = WeightScales::populate_with_constant(w, win, depth, c)?;
    let d1 = 2f64.powi(n + 1);
    let mut checks = Vec::new();
    let mut push = |name, bound: f64, worst: f64| {
        checks.push(InequalityCheck { name, bound, worst, pass: worst <= bound * (1.0 + REL_SLACK) });
    };

    // A1 itself over the enumerated cubes.
    let mut a1_worst = 0.0f64;
    for k in 0..=depth {
        let layers = t_layers(k) as usize;
        let vals = par::map_range(win.cube_count(k) * layers, |i| -> Result<f64> {
            let b = st_cube(&win.cube_from_linear(k, i / layers), (i % layers) as i64);
            Ok(w.box_average(&b)? / w.essinf(&b).value)
        });
        for v in vals {
            a1_worst = a1_worst.max(v?);
        }
    }
    push("(2.1) average <= C essinf", c, a1_worst);

    // Space-time integrals per level, indexed [cube][layer].
    let integrals: Vec<Vec<f64>> = (0..=depth.min(win.d_max()) + 1)
        .map(|k| {
            let layers = t_layers(k) as usize;
            par::map_range(win.cube_count(k) * layers, |i| {
                let b = st_cube(&win.cube_from_linear(k, i / layers), (i % layers) as i64);
                w.integral(&b).unwrap_or(f64::NAN)
            })
        })
        .collect();
    let essinfs: Vec<Vec<f64>> = (0..=depth)
        .map(|k| {
            let layers = t_layers(k) as usize;
            par::map_range(win.cube_count(k) * layers, |i| {
                let b = st_cube(&win.cube_from_linear(k, i / layers), (i % layers) as i64);
                w.essinf(&b).value
            })
        })
        .collect();

    // (2.2): parent over child integrals.
    let mut worst = 0.0f64;
    for k in 0..depth {
        let layers = t_layers(k);
        for (ci, q) in win.cubes_at_level(k).enumerate() {
            for j in 0..layers {
                let parent = integrals[k as usize][ci * layers as usize + j as usize];
                for ch in q.children() {
                    let cl = win.linear_index(&ch);
                    for dj in 0..2 {
                        let child = integrals[k as usize + 1][cl * (2 * layers) as usize + (2 * j + dj) as usize];
                        worst = worst.max(parent / child);
                    }
                }
            }
        }
    }
    push("(2.2) parent/child integral", d1 * c, worst);

    // (2.3): adjacent space-time cubes, k >= 1.
    let (mut w_ess, mut w_int) = (0.0f64, 0.0f64);
    for k in 1..=depth {
        let layers = t_layers(k);
        for (ci, q) in win.cubes_at_level(k).enumerate() {
            for nb in scales.neighbours(&q, 1) {
                let ni = win.linear_index(&nb);
                for j in 0..layers {
                    for dj in -1..=1 {
                        let j2 = j + dj;
                        if !(0..layers).contains(&j2) {
                            continue;
                        }
                        let a = ci * layers as usize + j as usize;
                        let b = ni * layers as usize + j2 as usize;
                        w_ess = w_ess.max(essinfs[k as usize][a] / essinfs[k as usize][b]);
                        w_int = w_int.max(integrals[k as usize][a] / integrals[k as usize][b]);
                    }
                }
            }
        }
    }
    push("(2.3) adjacent essinf", d1 * c, w_ess);
    push("(2.3) adjacent integral", d1 * c * c, w_int);

    // (2.4)/(2.5): concentric doubles clipped to t > 0, k >= 1.
    let (mut w24, mut w25) = (0.0f64, 0.0f64);
    for k in 1..=depth {
        let layers = t_layers(k);
        let per = win.cube_count(k) * layers as usize;
        let vals = par::map_range(per, |i| -> Result<(f64, f64)> {
            let q = win.cube_from_linear(k, i / layers as usize);
            let j = (i % layers as usize) as i64;
            let mut b = st_cube(&q, j);
            let s = q.side();
            let nn = q.dim();
            for a in 0..=nn {
                b.lo[a] -= 0.5 * s;
                b.hi[a] += 0.5 * s;
            }
            b.lo[nn] = b.lo[nn].max(0.0);
            let big = w.integral(&b)?;
            let avg = big / b.volume();
            let ess = w.essinf(&b).value;
            Ok((avg / ess, big / integrals[k as usize][i]))
        });
        for v in vals {
            let (a, b) = v?;
            w24 = w24.max(a);
            w25 = w25.max(b);
        }
    }
    push("(2.4) double average vs essinf", 1.5f64.powi(n + 1) * d1 * d1 * c.powi(3), w24);
    push("(2.5) double vs cube integral", 3f64.powi(n + 1) * d1 * c * c, w25);

    // eq.q and eq.q'
    let (mut wq, mut wq2) = (0.0f64, 0.0f64);
    for k in 0..=depth {
        for q in win.cubes_at_level(k) {
            let h = scales.hat(&q);
            for nb in scales.neighbours(&q, 1) {
                wq = wq.max(h / scales.hat(&nb));
            }
            if k < depth {
                for ch in q.children() {
                    let hc = scales.hat(&ch);
                    wq2 = wq2.max(h / hc).max(hc / h);
                }
            }
        }
    }
    push("eq.q adjacent hat", scales.q / 2.0, wq);
    push("eq.q' parent/child hat", scales.q / 2.0, wq2);
    Ok(A1Report { c_gamma: c, q: scales.q, checks })
}
