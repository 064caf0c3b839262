//! Extension operators.
//!
//! The nonlimiting operator is the linear series `Σ_k ψ_k(t) E_{2^-k} φ(x)`
//! built from a double-convolution mollifier. The limiting operator sums a
//! partition of unity `g^s_α` subordinate to an admissible tiling system,
//! weighted by cell averages of `φ`, and is nonlinear in `φ` because the
//! system is.

use std::f64::consts::LN_2;
use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::functions::{
    cell_average, weighted_sobolev_norm, BoundaryFunction, GridFunction, HalfSpaceFunction, SobolevOptions,
};
use crate::geometry::{DilationParam, DyadicCube, RealBox, Window, MAX_DIM, T_EXTENT};
use crate::jet::{bump, ramp, Jet};
use crate::par;
use crate::quadrature::{gauss_legendre, integrate_1d, GaussRule};
use crate::tilings::{check_admissible, TilingSystem};
use crate::weights::{Weight, WeightScales};

fn theta1(y: f64) -> f64 {
    bump(Jet::constant(y)).value()
}

/// `∫_{-1}^{1} exp(-1/(1-y^2)) dy`.
fn bump_mass() -> f64 {
    let pieces = 64;
    (0..pieces)
        .map(|i| {
            let a = -1.0 + 2.0 * i as f64 / pieces as f64;
            integrate_1d(theta1, a, a + 2.0 / pieces as f64, 16)
        })
        .sum()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if a[p][c].abs() < 1e-300 {
            return Err(Error::InvalidArgument("singular moment system".into()));
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

const RULE_POINTS: usize = 24;
const KERNEL_POINTS: usize = 48;

/// The bump `Θ`, the coefficients `μ_j` and the quadrature used to apply
/// `E_ε`.
///
/// `Θ(x) = Π θ(x_i)` with `θ(y) = θ_1(y / w) / (w Z)`, `w = n^{-1/2}`, so the
/// support is a cube inscribed in the unit ball. After the substitution
/// `y = x + εu`, `z = y + jεv`,
/// `E_ε φ(x) = Σ_j μ_j j^n ∬ Θ(u) Θ(v) φ(x + εu + jεv) du dv`.
#[derive(Clone, Debug)]
pub struct MollifierSpec {
    n: usize,
    l: u32,
    half_width: f64,
    mass: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    mu: Vec<f64>,
    coeff: Vec<f64>,
    kernel_rule: GaussRule,
}

impl MollifierSpec {
    /// Orders `1..=4`. The `j`-masses `c_j = μ_j j^n` make the even moments
    /// of `U + jV` vanish up to order `2l - 2`, so polynomials of degree
    /// `< l` are reproduced.
    pub fn new(n: usize, l: u32) -> Result<Self> {
        if n == 0 || n > MAX_DIM {
            return Err(Error::InvalidArgument(format!("dimension {n} not supported")));
        }
        if !(1..=4).contains(&l) {
            return Err(Error::InvalidArgument(format!("mollifier order {l} outside 1..=4")));
        }
        let w = 1.0 / (n as f64).sqrt();
        let mass = bump_mass();
        let rule = gauss_legendre(RULE_POINTS);
        let nodes: Vec<f64> = rule.nodes.iter().map(|&x| w * x).collect();
        let raw: Vec<f64> = rule.nodes.iter().zip(&rule.weights).map(|(&x, &q)| q * theta1(x)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let l = l as usize;
        let a: Vec<f64> = (0..l)
            .map(|p| nodes.iter().zip(&weights).map(|(u, q)| q * u.powi(2 * p as i32)).sum())
            .collect();
        let matrix: Vec<Vec<f64>> = (0..l)
            .map(|p| {
                (1..=l)
                    .map(|j| {
                        (0..=p)
                            .map(|i| binom(2 * p, 2 * i) * a[i] * a[p - i] * (j as f64).powi(2 * (p - i) as i32))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let mut rhs = vec![0.0; l];
        rhs[0] = 1.0;
        let coeff = solve(matrix, rhs)?;
        let mu = coeff.iter().enumerate().map(|(i, c)| c / ((i + 1) as f64).powi(n as i32)).collect();
        Ok(MollifierSpec {
            n,
            l: l as u32,
            half_width: w,
            mass,
            nodes,
            weights,
            mu,
            coeff,
            kernel_rule: gauss_legendre(KERNEL_POINTS),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> u32 {
        self.l
    }

    /// `μ_1..μ_l`.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// `μ_j j^n`; these sum to one.
    pub fn masses(&self) -> &[f64] {
        &self.coeff
    }

    /// `Θ(x)`.
    pub fn theta(&self, x: &[f64]) -> f64 {
        let w = self.half_width;
        x.iter().map(|&y| theta1(y / w) / (w * self.mass)).product()
    }

    /// Half side of the support cube of `Θ`.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// `θ_a^{(p)}(v)` for the 1-D factor dilated by `a`.
    fn factor_deriv(&self, a: f64, p: usize, v: f64) -> f64 {
        let aw = a * self.half_width;
        let y = v / aw;
        if y.abs() >= 1.0 {
            return 0.0;
        }
        let d = if p == 0 { theta1(y) } else { bump(Jet::var(y)).derivative(p) };
        d / (aw.powi(p as i32 + 1) * self.mass)
    }

    /// CDF of the normalised 1-D bump on `(-1, 1)`.
    fn cdf_unit(&self, y: f64) -> f64 {
        if y <= -1.0 {
            0.0
        } else if y >= 1.0 {
            1.0
        } else if y > 0.0 {
            1.0 - self.cdf_unit(-y)
        } else {
            let mid = 0.5 * (y - 1.0);
            (integrate_1d(theta1, -1.0, mid, RULE_POINTS) + integrate_1d(theta1, mid, y, RULE_POINTS)) / self.mass
        }
    }

    /// CDF of `εU + jεV` along one axis.
    fn cdf_pair(&self, j: usize, eps: f64, s: f64) -> f64 {
        let aw = j as f64 * eps * self.half_width;
        self.nodes.iter().zip(&self.weights).map(|(u, q)| q * self.cdf_unit((s - eps * u) / aw)).sum()
    }

    /// `K^{(p)}(u) = ∫ θ_ε^{(p)}(u - v) θ_{jε}(v) dv`.
    fn kernel(&self, j: usize, eps: f64, p: usize, u: f64) -> f64 {
        let w = self.half_width;
        let lo = (u - eps * w).max(-(j as f64) * eps * w);
        let hi = (u + eps * w).min(j as f64 * eps * w);
        if hi <= lo {
            return 0.0;
        }
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let r = &self.kernel_rule;
        r.nodes
            .iter()
            .zip(&r.weights)
            .map(|(&x, &q)| {
                let v = c + h * x;
                q * self.factor_deriv(eps, p, u - v) * self.factor_deriv(j as f64 * eps, 0, v)
            })
            .sum::<f64>()
            * h
    }

    /// Support radius of the `j`-th composite kernel.
    fn reach(&self, j: usize, eps: f64) -> f64 {
        (1 + j) as f64 * eps * self.half_width
    }
}

/// `E_ε g(x)` for a function given in closed form, by the tensor product of the
/// 1-D rule (`24^{2n}` evaluations).
pub fn mollify_fn(spec: &MollifierSpec, g: &dyn Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> f64 {
    let n = spec.n;
    let q = spec.nodes.len();
    let total = q.pow(2 * n as u32);
    let mut acc = 0.0;
    for (j, c) in spec.coeff.iter().enumerate() {
        let jf = (j + 1) as f64;
        let mut s = 0.0;
        let mut z = [0.0; MAX_DIM];
        for mut lin in 0..total {
            let mut wgt = 1.0;
            for i in 0..n {
                let (a, b) = (lin % q, (lin / q) % q);
                lin /= q * q;
                z[i] = x[i] + eps * spec.nodes[a] + jf * eps * spec.nodes[b];
                wgt *= spec.weights[a] * spec.weights[b];
            }
            s += wgt * g(&z[..n]);
        }
        acc += c * s;
    }
    acc
}

/// `E_ε φ(x)` for piecewise-constant grid data: exact cell weights of the
/// composite kernel along each axis. Requires `ε >= 2 pitch`.
pub fn mollify_e_eps(phi: &GridFunction, eps: f64, spec: &MollifierSpec, x: &[f64]) -> Result<f64> {
    let n = phi.dim();
    if n != spec.n || x.len() != n {
        return Err(Error::DimensionMismatch { expected: spec.n, got: n });
    }
    let h = phi.pitch();
    if !(eps >= 2.0 * h) {
        return Err(Error::Resolution(format!("ε = {eps} below twice the pitch {h}")));
    }
    let mut acc = 0.0;
    for (j0, c) in spec.coeff.iter().enumerate() {
        let j = j0 + 1;
        let reach = spec.reach(j, eps);
        let axes: Vec<(i64, Vec<f64>)> = (0..n)
            .map(|i| {
                let first = ((x[i] - reach) / h).floor() as i64;
                let last = ((x[i] + reach) / h).floor() as i64;
                let w = (first..=last)
                    .map(|cell| {
                        let a = cell as f64 * h;
                        spec.cdf_pair(j, eps, x[i] - a) - spec.cdf_pair(j, eps, x[i] - a - h)
                    })
                    .collect();
                (first, w)
            })
            .collect();
        let counts: Vec<usize> = axes.iter().map(|a| a.1.len()).collect();
        let total: usize = counts.iter().product();
        let mut s = 0.0;
        let mut idx = [0i64; MAX_DIM];
        for mut lin in 0..total {
            let mut w = 1.0;
            for i in (0..n).rev() {
                let k = lin % counts[i];
                lin /= counts[i];
                idx[i] = axes[i].0 + k as i64;
                w *= axes[i].1[k];
            }
            if w != 0.0 {
                s += w * phi.cell_value(&idx[..n]);
            }
        }
        acc += c * s;
    }
    Ok(acc)
}

/// `D^β E_ε φ` for every `|β| <= l`, tabulated at the cell centres of one
/// level and read back by multilinear interpolation.
#[derive(Clone, Debug)]
pub struct MollifiedGrid {
    n: usize,
    period: u32,
    level: u32,
    eps: f64,
    betas: Vec<Vec<u8>>,
    tables: Vec<Vec<f64>>,
}

fn spatial_multi_indices(n: usize, l: u32) -> Vec<Vec<u8>> {
    crate::functions::multi_indices(n - 1, l)
}

/// Periodic 1-D convolution of `data` along `axis` with `kernel` centred at
/// `offset`: `out[c] = Σ_δ kernel[δ + offset] data[c - δ]`.
fn convolve_axis(data: &[f64], n: usize, per: usize, axis: usize, kernel: &[f64], offset: i64) -> Vec<f64> {
    let stride = per.pow((n - 1 - axis) as u32);
    par::map_range(data.len(), |lin| {
        let c = (lin / stride) % per;
        let base = lin - c * stride;
        kernel
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let delta = k as i64 - offset;
                let src = (c as i64 - delta).rem_euclid(per as i64) as usize;
                w * data[base + src * stride]
            })
            .sum()
    })
}

impl MollifiedGrid {
    /// Tables at level `level` (the data are averaged or repeated to it).
    pub fn new(phi: &GridFunction, eps: f64, spec: &MollifierSpec, level: u32) -> Result<Self> {
        let n = phi.dim();
        if n != spec.n {
            return Err(Error::DimensionMismatch { expected: spec.n, got: n });
        }
        let h = (-(level as f64)).exp2();
        if !(eps >= 2.0 * h) || !(eps >= 2.0 * phi.pitch()) {
            return Err(Error::Resolution(format!("ε = {eps} below twice the pitch")));
        }
        let base = phi.at_depth(level);
        let per = base.cells_per_axis() as usize;
        let l = spec.l;
        let betas = spatial_multi_indices(n, l);
        // per j: kernels of order p = 0..=l
        let kernels: Vec<(i64, Vec<Vec<f64>>)> = (1..=spec.coeff.len())
            .map(|j| {
                let reach = spec.reach(j, eps);
                let off = (reach / h + 0.5).ceil() as i64;
                let deltas: Vec<f64> = (-off..=off).map(|d| d as f64).collect();
                let mut w0: Vec<f64> = deltas
                    .iter()
                    .map(|d| integrate_1d(|u| spec.kernel(j, eps, 0, u), (d - 0.5) * h, (d + 0.5) * h, 8))
                    .collect();
                let s: f64 = w0.iter().sum();
                w0.iter_mut().for_each(|v| *v /= s);
                let mut ks = vec![w0];
                for p in 1..=l as usize {
                    ks.push(
                        deltas
                            .iter()
                            .map(|d| spec.kernel(j, eps, p - 1, (d + 0.5) * h) - spec.kernel(j, eps, p - 1, (d - 0.5) * h))
                            .collect(),
                    );
                }
                (off, ks)
            })
            .collect();
        let tables = betas
            .iter()
            .map(|beta| {
                let mut acc = vec![0.0; base.values().len()];
                for ((off, ks), c) in kernels.iter().zip(&spec.coeff) {
                    let mut cur = base.values().to_vec();
                    for (axis, &p) in beta.iter().enumerate() {
                        cur = convolve_axis(&cur, n, per, axis, &ks[p as usize], *off);
                    }
                    acc.iter_mut().zip(cur).for_each(|(a, v)| *a += c * v);
                }
                acc
            })
            .collect();
        Ok(MollifiedGrid { n, period: phi.period(), level, eps, betas, tables })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// `D^β E_ε φ(x)`; `None` when `|β|` exceeds the order.
    pub fn derivative(&self, beta: &[u8], x: &[f64]) -> Option<f64> {
        let b = self.betas.iter().position(|b| b[..] == beta[..self.n])?;
        let table = &self.tables[b];
        let per = (self.period as i64) << self.level;
        let scale = (self.level as f64).exp2();
        let mut base = [0i64; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for i in 0..self.n {
            let s = x[i] * scale - 0.5;
            base[i] = s.floor() as i64;
            frac[i] = s - s.floor();
        }
        let mut acc = 0.0;
        for corner in 0..1usize << self.n {
            let mut w = 1.0;
            let mut lin = 0i64;
            for i in 0..self.n {
                let up = corner >> i & 1 == 1;
                w *= if up { frac[i] } else { 1.0 - frac[i] };
                lin = lin * per + (base[i] + up as i64).rem_euclid(per);
            }
            if w != 0.0 {
                acc += w * table[lin as usize];
            }
        }
        Some(acc)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.derivative(&[0; MAX_DIM][..self.n], x).expect("order 0")
    }
}

/// Which family of `t` cut-offs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsiKind {
    /// `ψ_k`, `k >= 1`, supported in `(2^{-k-1}, 2^{-k+1})`, summing to one
    /// on `(0, 1/2]` and vanishing for `t >= 1`.
    Nonlimiting,
    /// `ψ_k`, `k >= 0`, supported in `(7/8 2^{-k}, 9/8 2^{-k+1})`, summing to
    /// one on `(0, 2)`.
    Limiting,
}

const LIMITING_HALF_WINDOW: f64 = 0.15;
const LIMITING_TOP: f64 = -1.16;

/// Cut-offs `ψ_k(t)`, `k = first..=last`, written as differences of
/// cumulative ramps in `s = -log2 t`; the last one is the tail
/// `Σ_{k >= last} ψ_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiFamily {
    pub kind: PsiKind,
    pub last: u32,
}

impl PsiFamily {
    pub fn nonlimiting(last: u32) -> Self {
        PsiFamily { kind: PsiKind::Nonlimiting, last: last.max(1) }
    }

    pub fn limiting(last: u32) -> Self {
        PsiFamily { kind: PsiKind::Limiting, last }
    }

    pub fn first(&self) -> u32 {
        match self.kind {
            PsiKind::Nonlimiting => 1,
            PsiKind::Limiting => 0,
        }
    }

    fn cumulative(&self, k: u32, s: Jet) -> Jet {
        if k > self.last {
            return Jet::ZERO;
        }
        let a = LIMITING_HALF_WINDOW;
        match self.kind {
            PsiKind::Nonlimiting => ramp(s - Jet::constant(k as f64 - 1.0)),
            PsiKind::Limiting if k == 0 => ramp((s - Jet::constant(LIMITING_TOP)).scale(1.0 / a)),
            PsiKind::Limiting => ramp((s - Jet::constant(k as f64 - 1.0 - a)).scale(0.5 / a)),
        }
    }

    /// `ψ_k` as a jet in `t`.
    pub fn psi(&self, k: u32, t: f64) -> Jet {
        if k < self.first() || k > self.last || !(t > 0.0) {
            return Jet::ZERO;
        }
        let s = Jet::var(t).ln().scale(-1.0 / LN_2);
        self.cumulative(k, s) - self.cumulative(k + 1, s)
    }

    /// Indices that may be nonzero at `t`.
    pub fn active(&self, t: f64) -> RangeInclusive<u32> {
        let s = -t.log2();
        let a = LIMITING_HALF_WINDOW;
        let (lo, hi) = match self.kind {
            PsiKind::Nonlimiting => (s.floor(), s.floor() + 1.0),
            PsiKind::Limiting => ((s - a).floor(), (s + 1.0 + a).ceil()),
        };
        let (first, last) = (self.first() as f64, self.last as f64);
        if lo > last {
            return self.last..=self.last;
        }
        if hi < first {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        (lo.max(first) as u32)..=(hi.min(last) as u32)
    }
}

/// Smooth extension `f(x, t) = Σ_{k=1}^{K} ψ_k(t) E_{2^-k} φ(x)` with the
/// tail cut-off at `K = depth - 1`.
#[derive(Clone, Debug)]
pub struct SmoothExtension {
    n: usize,
    l: u32,
    psi: PsiFamily,
    grids: Vec<MollifiedGrid>,
}

/// Working level for `E_{2^-k}` on data of depth `d`.
pub fn working_level(k: u32, depth: u32) -> u32 {
    depth.min(k + 4)
}

/// The linear extension of order `spec.order()`.
pub fn extend_smooth(phi: &GridFunction, spec: &MollifierSpec) -> Result<SmoothExtension> {
    extend_smooth_to(phi, spec, phi.depth().saturating_sub(1))
}

/// As [`extend_smooth`] with the series cut at `K = last`, which must
/// satisfy `1 <= last < depth`.
pub fn extend_smooth_to(phi: &GridFunction, spec: &MollifierSpec, last: u32) -> Result<SmoothExtension> {
    let d = phi.depth();
    if d < 2 {
        return Err(Error::Resolution(format!("depth {d} leaves no admissible ε")));
    }
    if last == 0 || last >= d {
        return Err(Error::Resolution(format!("cut-off level {last} outside 1..{d}")));
    }
    let grids = (1..=last)
        .map(|k| MollifiedGrid::new(phi, (-(k as f64)).exp2(), spec, working_level(k, d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SmoothExtension { n: phi.dim(), l: spec.l, psi: PsiFamily::nonlimiting(last), grids })
}

impl SmoothExtension {
    pub fn last_level(&self) -> u32 {
        self.psi.last
    }

    pub fn psi(&self) -> &PsiFamily {
        &self.psi
    }
}

impl HalfSpaceFunction for SmoothExtension {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64], t: f64) -> f64 {
        self.psi
            .active(t)
            .map(|k| {
                let p = self.psi.psi(k, t).value();
                if p == 0.0 {
                    0.0
                } else {
                    p * self.grids[k as usize - 1].value(x)
                }
            })
            .sum()
    }

    fn analytic(&self, alpha: &[u8], x: &[f64], t: f64) -> Option<f64> {
        let order: u32 = alpha.iter().map(|&a| a as u32).sum();
        if order > self.l || alpha[self.n] > 3 {
            return None;
        }
        let beta = &alpha[..self.n];
        let a = alpha[self.n] as usize;
        let mut acc = 0.0;
        for k in self.psi.active(t) {
            let p = self.psi.psi(k, t).derivative(a);
            if p != 0.0 {
                acc += p * self.grids[k as usize - 1].derivative(beta, x)?;
            }
        }
        Some(acc)
    }
}

/// `ρ(u) = θ_1(u - 1/2)`, supported in `(-1/2, 3/2)`.
fn rho(u: Jet) -> Jet {
    bump(u - Jet::constant(0.5))
}

/// `χ(u - m) = ρ(u - m) / Σ_j ρ(u - j)` for the `m` with nonzero value,
/// with derivatives in `u`.
fn chi_terms(u: f64) -> impl Iterator<Item = (i64, Jet)> {
    let ju = Jet::var(u);
    let f = u.floor() as i64;
    let total = (f - 2..=f + 2).fold(Jet::ZERO, |acc, j| acc + rho(ju - Jet::constant(j as f64)));
    let inv = total.recip();
    ((u - 1.5).floor() as i64..=(u + 0.5).floor() as i64).filter_map(move |m| {
        let r = rho(ju - Jet::constant(m as f64));
        (r.value() != 0.0).then(|| (m, r * inv))
    })
}

/// One selected cube of the system: `(s, α)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub stage: usize,
    pub cube: DyadicCube,
    /// Position of the cube in the canonical enumeration of its stage.
    pub position: usize,
}

/// Exact accounting of the sets `E^s_α` over `k = 0..=last`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexSetCheck {
    pub last_level: u32,
    pub elements: usize,
    pub uncovered: usize,
    pub multiply_owned: usize,
}

impl IndexSetCheck {
    pub fn is_partition(&self) -> bool {
        self.uncovered == 0 && self.multiply_owned == 0
    }
}

/// `Θ_{k,m} = θ_{k,m} ψ_k` with the owner `(s, α)` of every `(k, m)`, so
/// that `g^s_α = Σ_{(k,m) ∈ E^s_α} Θ_{k,m}`.
#[derive(Clone, Debug)]
pub struct PartitionFamily {
    window: Window,
    psi: PsiFamily,
    atoms: Vec<Atom>,
    /// Per level `k`, owner atom of each `m` (row-major), `u32::MAX` if none.
    owner: Vec<Vec<u32>>,
    check: IndexSetCheck,
}

/// Value and `(∇_x, ∂_t)` of one `Θ_{k,m}` at a point.
#[derive(Clone, Copy, Debug)]
pub struct ThetaSample {
    pub level: u32,
    pub owner: u32,
    pub value: f64,
    pub grad: [f64; MAX_DIM + 1],
}

/// Periodic range of `m` with `Q_{k,m} ⊂ 2Q_{lev,a}` along one axis.
fn b_range(a: i64, lev: u32, k: u32, per: i64) -> impl Iterator<Item = i64> {
    let r = 1i64 << (k - lev);
    let lo = a * r - r / 2;
    let count = if r == 1 { 1 } else { (2 * r).min(per) };
    (0..count).map(move |i| (lo + i).rem_euclid(per))
}

/// The partition family of `sys`. Fails unless `λ = 1` and the system is
/// admissible for `scales` with its own constants.
pub fn build_partition_g(sys: &TilingSystem, scales: &WeightScales) -> Result<PartitionFamily> {
    let report = check_admissible(sys, scales, sys.c1, sys.c2)?;
    if let Some(f) = report.first_failure() {
        return Err(Error::Inadmissible(format!(
            "condition {} fails: worst {} > bound {}",
            f.condition, f.worst, f.bound
        )));
    }
    build_partition_unchecked(sys, sys.window.d_max().max(sys.max_level()))
}

/// The partition family truncated at level `last`, without the
/// admissibility check; [`PartitionFamily::index_check`] reports whether
/// the `E`-sets still partition the index range.
pub fn build_partition_unchecked(sys: &TilingSystem, last: u32) -> Result<PartitionFamily> {
    if sys.lambda != DilationParam::unit() {
        return Err(Error::InvalidArgument("the partition requires λ = 1".into()));
    }
    let win = sys.window;
    let n = win.dim();
    let mut atoms = Vec::new();
    for s in 0..sys.stage_count() {
        for &i in &sys.selected[s] {
            atoms.push(Atom { stage: s, cube: sys.stages[s].cubes()[i], position: i });
        }
    }
    let mut owner = Vec::with_capacity(last as usize + 1);
    let mut check = IndexSetCheck { last_level: last, elements: 0, uncovered: 0, multiply_owned: 0 };
    for k in 0..=last {
        let per = win.cells_per_axis(k);
        let count = (per as usize).pow(n as u32);
        let mut cand: Vec<Vec<u32>> = vec![Vec::new(); count];
        for (id, at) in atoms.iter().enumerate() {
            if at.cube.level > k {
                continue;
            }
            let ranges: Vec<Vec<i64>> =
                (0..n).map(|i| b_range(at.cube.index()[i], at.cube.level, k, per).collect()).collect();
            let total: usize = ranges.iter().map(|r| r.len()).product();
            for mut lin in 0..total {
                let mut cell = 0usize;
                let mut stride = 1usize;
                for i in (0..n).rev() {
                    let len = ranges[i].len();
                    cell += ranges[i][lin % len] as usize * stride;
                    stride *= per as usize;
                    lin /= len;
                }
                cand[cell].push(id as u32);
            }
        }
        let row: Vec<u32> = cand
            .iter()
            .map(|c| {
                let owners: Vec<u32> = c
                    .iter()
                    .copied()
                    .filter(|&a| {
                        let x = &atoms[a as usize];
                        let in_d = !c.iter().any(|&b| {
                            let y = &atoms[b as usize];
                            y.stage == x.stage && y.cube.level == x.cube.level && y.position < x.position
                        });
                        in_d && !c.iter().any(|&b| {
                            let y = &atoms[b as usize];
                            y.stage >= x.stage && y.cube.level > x.cube.level
                        })
                    })
                    .collect();
                match owners.len() {
                    0 => {
                        check.uncovered += 1;
                        u32::MAX
                    }
                    1 => owners[0],
                    _ => {
                        check.multiply_owned += 1;
                        owners[0]
                    }
                }
            })
            .collect();
        check.elements += count;
        owner.push(row);
    }
    Ok(PartitionFamily { window: win, psi: PsiFamily::limiting(last), atoms, owner, check })
}

impl PartitionFamily {
    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn psi(&self) -> &PsiFamily {
        &self.psi
    }

    pub fn last_level(&self) -> u32 {
        self.psi.last
    }

    pub fn index_check(&self) -> IndexSetCheck {
        self.check
    }

    /// Owner of `(k, m)`.
    pub fn owner_of(&self, k: u32, m: &[i64]) -> Option<u32> {
        let per = self.window.cells_per_axis(k);
        let lin = m.iter().fold(0i64, |acc, &j| acc * per + j.rem_euclid(per)) as usize;
        let o = *self.owner.get(k as usize)?.get(lin)?;
        (o != u32::MAX).then_some(o)
    }

    /// Calls `f` for every nonzero `Θ_{k,m}` at `(x, t)`.
    pub fn visit(&self, x: &[f64], t: f64, mut f: impl FnMut(ThetaSample)) {
        let n = self.window.dim();
        for k in self.psi.active(t) {
            let psi = self.psi.psi(k, t);
            let (pv, pd) = (psi.value(), psi.derivative(1));
            if pv == 0.0 && pd == 0.0 {
                continue;
            }
            let scale = (k as f64).exp2();
            let per = self.window.cells_per_axis(k);
            let axes: Vec<Vec<(i64, Jet)>> = (0..n).map(|i| chi_terms(x[i] * scale).collect()).collect();
            let counts: Vec<usize> = axes.iter().map(|a| a.len()).collect();
            let total: usize = counts.iter().product();
            for mut lin in 0..total {
                let mut pick = [0usize; MAX_DIM];
                for i in (0..n).rev() {
                    pick[i] = lin % counts[i];
                    lin /= counts[i];
                }
                let mut theta = 1.0;
                let mut cell = 0i64;
                for i in 0..n {
                    let (m, j) = axes[i][pick[i]];
                    theta *= j.value();
                    cell = cell * per + m.rem_euclid(per);
                }
                let mut grad = [0.0; MAX_DIM + 1];
                for i in 0..n {
                    let mut d = axes[i][pick[i]].1.derivative(1) * scale;
                    for (o, ax) in axes.iter().enumerate() {
                        if o != i {
                            d *= ax[pick[o]].1.value();
                        }
                    }
                    grad[i] = d * pv;
                }
                grad[n] = theta * pd;
                f(ThetaSample { level: k, owner: self.owner[k as usize][cell as usize], value: theta * pv, grad });
            }
        }
    }

    /// `Σ_{k,m} Θ_{k,m}(x, t)`.
    pub fn theta_sum(&self, x: &[f64], t: f64) -> f64 {
        let mut s = 0.0;
        self.visit(x, t, |th| s += th.value);
        s
    }

    /// `(g^s_α(x, t), ∇g^s_α(x, t))` for every atom with a nonzero term,
    /// in atom order.
    pub fn g_values(&self, x: &[f64], t: f64) -> Vec<(u32, f64, [f64; MAX_DIM + 1])> {
        let mut out: Vec<(u32, f64, [f64; MAX_DIM + 1])> = Vec::new();
        self.visit(x, t, |th| match out.iter_mut().find(|e| e.0 == th.owner) {
            Some(e) => {
                e.1 += th.value;
                e.2.iter_mut().zip(th.grad).for_each(|(a, b)| *a += b);
            }
            None => out.push((th.owner, th.value, th.grad)),
        });
        out.sort_by_key(|e| e.0);
        out
    }

    /// `g^s_α` of one atom as a half-space function.
    pub fn g(&self, atom: u32) -> AtomFunction<'_> {
        AtomFunction { part: self, atom }
    }
}

/// `g^s_α` for one atom.
#[derive(Clone, Copy)]
pub struct AtomFunction<'a> {
    part: &'a PartitionFamily,
    atom: u32,
}

impl AtomFunction<'_> {
    fn eval(&self, x: &[f64], t: f64) -> (f64, [f64; MAX_DIM + 1]) {
        let mut v = 0.0;
        let mut g = [0.0; MAX_DIM + 1];
        self.part.visit(x, t, |th| {
            if th.owner == self.atom {
                v += th.value;
                g.iter_mut().zip(th.grad).for_each(|(a, b)| *a += b);
            }
        });
        (v, g)
    }
}

impl HalfSpaceFunction for AtomFunction<'_> {
    fn dim(&self) -> usize {
        self.part.window.dim()
    }
    fn value(&self, x: &[f64], t: f64) -> f64 {
        self.eval(x, t).0
    }
    fn analytic(&self, alpha: &[u8], x: &[f64], t: f64) -> Option<f64> {
        first_order(alpha, || self.eval(x, t))
    }
}

fn first_order(alpha: &[u8], eval: impl FnOnce() -> (f64, [f64; MAX_DIM + 1])) -> Option<f64> {
    match alpha.iter().map(|&a| a as u32).sum::<u32>() {
        0 => Some(eval().0),
        1 => {
            let a = alpha.iter().position(|&o| o == 1)?;
            Some(eval().1[a])
        }
        _ => None,
    }
}

/// `f = Σ_{s,α} g^s_α φ^s_α` with `φ^s_α` the mean of `φ` over `2Q^s_α`.
#[derive(Clone, Debug)]
pub struct LimitingExtension {
    part: PartitionFamily,
    values: Vec<f64>,
}

impl LimitingExtension {
    pub fn from_partition<B: BoundaryFunction + ?Sized>(part: PartitionFamily, phi: &B) -> Result<Self> {
        if phi.dim() != part.window.dim() {
            return Err(Error::DimensionMismatch { expected: part.window.dim(), got: phi.dim() });
        }
        let values = par::map_slice(&part.atoms, |a| {
            cell_average(phi, &a.cube.dilate(DilationParam::unit(), a.cube.level + 1))
        });
        Ok(LimitingExtension { part, values })
    }

    pub fn partition(&self) -> &PartitionFamily {
        &self.part
    }

    /// `φ^s_α` in atom order.
    pub fn coefficients(&self) -> &[f64] {
        &self.values
    }

    fn eval(&self, x: &[f64], t: f64) -> (f64, [f64; MAX_DIM + 1]) {
        let mut v = 0.0;
        let mut g = [0.0; MAX_DIM + 1];
        self.part.visit(x, t, |th| {
            let c = self.values.get(th.owner as usize).copied().unwrap_or(0.0);
            v += c * th.value;
            g.iter_mut().zip(th.grad).for_each(|(a, b)| *a += c * b);
        });
        (v, g)
    }
}

impl HalfSpaceFunction for LimitingExtension {
    fn dim(&self) -> usize {
        self.part.window.dim()
    }
    fn value(&self, x: &[f64], t: f64) -> f64 {
        self.eval(x, t).0
    }
    fn analytic(&self, alpha: &[u8], x: &[f64], t: f64) -> Option<f64> {
        first_order(alpha, || self.eval(x, t))
    }
}

/// The nonlinear extension of `φ` along `sys`.
pub fn extend_limiting<B: BoundaryFunction + ?Sized>(
    phi: &B,
    sys: &TilingSystem,
    scales: &WeightScales,
) -> Result<LimitingExtension> {
    LimitingExtension::from_partition(build_partition_g(sys, scales)?, phi)
}

/// One atom of the gradient-mass sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMass {
    pub stage: usize,
    pub cube: DyadicCube,
    /// `Σ_i ∬ γ |∂_i g^s_α|`.
    pub lhs: f64,
    /// `ĝ^s_α |Q^s_α|`.
    pub rhs: f64,
}

impl GradientMass {
    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs
    }
}

/// Gradient masses of all `g^s_α` against `ĝ^s_α |Q^s_α|`, with the
/// largest ratio.
#[derive(Clone, Debug)]
pub struct GradientMassReport {
    pub rows: Vec<GradientMass>,
    pub constant: f64,
}

/// Integrates `γ|∇g^s_α|` over `3Q^s_α × (0, min(2, 2.25 r))`, which
/// contains the support.
pub fn gradient_mass_sweep(
    part: &PartitionFamily,
    w: &Weight,
    scales: &WeightScales,
    opts: &SobolevOptions,
) -> Result<GradientMassReport> {
    let n = part.window.dim();
    let period = part.window.period() as f64;
    let mut rows = Vec::with_capacity(part.atoms.len());
    for (id, at) in part.atoms.iter().enumerate() {
        let r = at.cube.side();
        let c = at.cube.corner();
        let mut lo = vec![0.0; n + 1];
        let mut hi = vec![0.0; n + 1];
        for i in 0..n {
            if 3.0 * r >= period {
                hi[i] = period;
            } else {
                lo[i] = c[i] - r;
                hi[i] = c[i] + 2.0 * r;
            }
        }
        hi[n] = T_EXTENT.min(2.25 * r);
        let region = RealBox::new(&lo, &hi);
        let report = weighted_sobolev_norm(&part.g(id as u32), w, &region, 1, opts)?;
        let lhs = report.terms[1..].iter().map(|t| t.value).sum();
        rows.push(GradientMass { stage: at.stage, cube: at.cube, lhs, rhs: scales.hat_gamma(&at.cube)? * at.cube.volume() });
    }
    let constant = rows.iter().map(GradientMass::ratio).fold(0.0, f64::max);
    Ok(GradientMassReport { rows, constant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{trace_of, dyadic_t_sequence};
    use crate::tilings::TilingSystem;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn win(n: usize, m: u32, d: u32) -> Window {
        Window::new(n, m, d).unwrap()
    }

    #[test]
    fn theta_has_unit_mass() {
        for n in 1..=2 {
            let spec = MollifierSpec::new(n, 1).unwrap();
            let w = spec.half_width();
            let pieces: usize = 16;
            let mut lo = vec![0.0; n];
            let mut total = 0.0;
            for mut cell in 0..pieces.pow(n as u32) {
                for l in lo.iter_mut() {
                    *l = -w + 2.0 * w * (cell % pieces) as f64 / pieces as f64;
                    cell /= pieces;
                }
                let hi: Vec<f64> = lo.iter().map(|l| l + 2.0 * w / pieces as f64).collect();
                total += crate::quadrature::tensor_gauss(&|x| spec.theta(x), &lo, &hi, &vec![12; n]);
            }
            assert!((total - 1.0).abs() < 1e-10, "n={n}: {total}");
        }
    }

    #[test]
    fn masses_sum_to_one() {
        assert_eq!(MollifierSpec::new(1, 1).unwrap().masses(), &[1.0]);
        for l in 2..=4 {
            for n in 1..=2 {
                let s = MollifierSpec::new(n, l).unwrap();
                assert!((s.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (j, (m, c)) in s.mu().iter().zip(s.masses()).enumerate() {
                    assert!((m * ((j + 1) as f64).powi(n as i32) - c).abs() < 1e-12);
                }
            }
        }
        assert!(MollifierSpec::new(1, 0).is_err());
    }

    #[test]
    fn reproduces_low_degree_monomials() {
        let spec = MollifierSpec::new(1, 3).unwrap();
        for p in 0..3 {
            for &x in &[0.3, 1.7] {
                let e = mollify_fn(&spec, &|z| z[0].powi(p), &[x], 0.2);
                assert!((e - x.powi(p)).abs() < 1e-10, "p={p} x={x} {e}");
            }
        }
        let spec = MollifierSpec::new(2, 2).unwrap();
        let monos: [(&dyn Fn(&[f64]) -> f64, &dyn Fn(f64, f64) -> f64); 3] = [
            (&|_| 1.0, &|_, _| 1.0),
            (&|z| z[0], &|x, _| x),
            (&|z| 3.0 * z[1] - 1.0, &|_, y| 3.0 * y - 1.0),
        ];
        for (g, want) in monos {
            let e = mollify_fn(&spec, g, &[0.4, 0.9], 0.1);
            assert!((e - want(0.4, 0.9)).abs() < 1e-10);
        }
        // degree l is not reproduced
        let spec = MollifierSpec::new(1, 1).unwrap();
        let e = mollify_fn(&spec, &|z| z[0] * z[0], &[0.5], 0.2);
        assert!((e - 0.25).abs() > 1e-4);
    }

    #[test]
    fn grid_path_constants_and_resolution() {
        let w = win(2, 1, 6);
        let phi = GridFunction::constant(&w, 5, 2.5);
        let spec = MollifierSpec::new(2, 2).unwrap();
        let v = mollify_e_eps(&phi, 0.125, &spec, &[0.3, 0.95]).unwrap();
        assert!((v - 2.5).abs() < 1e-12, "{v}");
        assert!(matches!(mollify_e_eps(&phi, 0.05, &spec, &[0.3, 0.3]), Err(Error::Resolution(_))));
    }

    #[test]
    fn grid_path_error_is_order_eps() {
        // l = 1, φ(x) = x on a wide window, far from the wrap
        let w = win(1, 4, 9);
        let phi = GridFunction::from_fn(&w, 9, |x| x[0]);
        let spec = MollifierSpec::new(1, 1).unwrap();
        for k in 3..=6 {
            let eps = (-(k as f64)).exp2();
            let worst = [1.3, 2.0, 2.71]
                .iter()
                .map(|&x| (mollify_e_eps(&phi, eps, &spec, &[x]).unwrap() - x).abs())
                .fold(0.0, f64::max);
            assert!(worst <= eps, "ε={eps}: {worst}");
        }
    }

    #[test]
    fn grid_path_matches_exact_path() {
        let w = win(1, 1, 10);
        let f = |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).sin();
        let phi = GridFunction::from_fn(&w, 10, f);
        let spec = MollifierSpec::new(1, 2).unwrap();
        for &x in &[0.1, 0.45, 0.77] {
            let a = mollify_e_eps(&phi, 1.0 / 16.0, &spec, &[x]).unwrap();
            let b = mollify_fn(&spec, &f, &[x], 1.0 / 16.0);
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn tabulated_derivatives_match_exact_path() {
        let tau = 2.0 * std::f64::consts::PI;
        let w = win(1, 1, 8);
        let phi = GridFunction::from_fn(&w, 8, |x| (tau * x[0]).sin());
        let spec = MollifierSpec::new(1, 2).unwrap();
        let eps = 0.125;
        let g = MollifiedGrid::new(&phi, eps, &spec, working_level(3, 8)).unwrap();
        for &x in &[0.2, 0.61] {
            let v = mollify_fn(&spec, &|z| (tau * z[0]).sin(), &[x], eps);
            assert!((g.value(&[x]) - v).abs() < 2e-3);
            let d1 = mollify_fn(&spec, &|z| tau * (tau * z[0]).cos(), &[x], eps);
            assert!((g.derivative(&[1], &[x]).unwrap() - d1).abs() < 2e-2 * tau, "{}", d1);
            let d2 = mollify_fn(&spec, &|z| -tau * tau * (tau * z[0]).sin(), &[x], eps);
            assert!((g.derivative(&[2], &[x]).unwrap() - d2).abs() < 2e-2 * tau * tau);
        }
        assert!(g.derivative(&[3], &[0.1]).is_none());
        let seq = par::sequential(|| MollifiedGrid::new(&phi, eps, &spec, 7).unwrap());
        assert_eq!(seq.tables, g.tables);
    }

    #[test]
    fn psi_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lim = PsiFamily::limiting(7);
        let non = PsiFamily::nonlimiting(7);
        for _ in 0..2000 {
            let t: f64 = rng.gen_range(1e-4..2.0);
            let s: f64 = (0..=7).map(|k| lim.psi(k, t).value()).sum();
            assert!((s - 1.0).abs() < 1e-12, "t={t}: {s}");
            let active: Vec<u32> = lim.active(t).collect();
            for k in 0..=7 {
                let p = lim.psi(k, t);
                if p.value() != 0.0 {
                    assert!(active.contains(&k));
                    if k < 7 {
                        let (a, b) = (0.875 * (-(k as f64)).exp2(), 1.125 * (1.0 - k as f64).exp2());
                        assert!(t > a && t < b, "k={k} t={t}");
                    }
                }
                assert!(p.derivative(1).abs() <= 20.0 * (k as f64).exp2());
            }
            let nonzero = (1..=7).filter(|&k| non.psi(k, t).value() != 0.0).count();
            assert!(nonzero <= 2);
            let s: f64 = (1..=7).map(|k| non.psi(k, t).value()).sum();
            if t <= 0.5 {
                assert!((s - 1.0).abs() < 1e-12);
            }
            if t >= 1.0 {
                assert_eq!(s, 0.0);
            }
        }
    }

    fn smooth_phi(w: &Window, d: u32) -> GridFunction {
        GridFunction::from_fn(w, d, |x| {
            let tau = 2.0 * std::f64::consts::PI;
            x.iter().map(|v| (tau * v).sin()).sum::<f64>() + 0.5
        })
    }

    #[test]
    fn smooth_extension_of_constant() {
        let w = win(2, 1, 5);
        let phi = GridFunction::constant(&w, 5, 1.75);
        let spec = MollifierSpec::new(2, 2).unwrap();
        let f = extend_smooth(&phi, &spec).unwrap();
        for &(x, y, t) in &[(0.1, 0.2, 0.4), (0.7, 0.9, 0.01), (0.5, 0.5, 1e-5)] {
            assert!((f.value(&[x, y], t) - 1.75).abs() < 1e-12);
            assert!(f.analytic(&[1, 0, 0], &[x, y], t).unwrap().abs() < 1e-9);
            assert!(f.analytic(&[0, 0, 1], &[x, y], t).unwrap().abs() < 1e-9);
        }
        assert_eq!(f.value(&[0.3, 0.3], 1.2), 0.0);
        assert!(f.analytic(&[1, 1, 1], &[0.3, 0.3], 0.2).is_none());
    }

    #[test]
    fn smooth_extension_is_linear_and_recovers_trace() {
        let w = win(1, 1, 7);
        let spec = MollifierSpec::new(1, 2).unwrap();
        let a = smooth_phi(&w, 7);
        let b = GridFunction::from_fn(&w, 7, |x| x[0] * (1.0 - x[0]));
        let ab = a.combine(2.0, &b, -0.5).unwrap();
        let (fa, fb, fab) = (
            extend_smooth(&a, &spec).unwrap(),
            extend_smooth(&b, &spec).unwrap(),
            extend_smooth(&ab, &spec).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = [rng.gen_range(0.0..1.0)];
            let t = rng.gen_range(1e-4..1.5);
            let lhs = fab.value(&x, t);
            let rhs = 2.0 * fa.value(&x, t) - 0.5 * fb.value(&x, t);
            assert!((lhs - rhs).abs() < 1e-12);
        }
        let q = w.cube(0, &[0]);
        let tr = trace_of(&fa, &q, &dyadic_t_sequence(8, 12), 7).unwrap();
        assert!(tr.converged);
        assert!(tr.l1_error(&a) <= 1e-2 * a.l1_norm(), "{}", tr.l1_error(&a));
    }

    fn uniform(w: &Window, levels: &[u32]) -> TilingSystem {
        TilingSystem::uniform(w, levels, DilationParam::unit())
    }

    #[test]
    fn partition_sums_to_one() {
        for (n, m) in [(1usize, 2u32), (2, 1)] {
            let w = win(n, m, 5);
            let sys = uniform(&w, &[0, 2, 4]);
            let part = build_partition_unchecked(&sys, 5).unwrap();
            assert!(part.index_check().is_partition(), "{:?}", part.index_check());
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut worst_mult = 0;
            for _ in 0..3000 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..m as f64)).collect();
                let t = rng.gen_range(1e-4..2.0);
                assert!((part.theta_sum(&x, t) - 1.0).abs() < 1e-10);
                let g = part.g_values(&x, t);
                let s: f64 = g.iter().map(|e| e.1).sum();
                assert!((s - 1.0).abs() < 1e-10);
                worst_mult = worst_mult.max(g.iter().filter(|e| e.1 > 0.0).count());
            }
            assert!(worst_mult <= 2 * 3usize.pow(n as u32), "{worst_mult}");
        }
    }

    #[test]
    fn gradient_of_g_scales_like_inverse_t() {
        let w = win(2, 1, 5);
        let part = build_partition_unchecked(&uniform(&w, &[0, 1, 3, 5]), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut c = 0.0f64;
        for _ in 0..2000 {
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let t: f64 = rng.gen_range(1e-3..2.0);
            for (_, _, g) in part.g_values(&x, t) {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                c = c.max(norm * t);
            }
        }
        assert!(c.is_finite() && c < 50.0, "{c}");
    }

    #[test]
    fn single_stage_owns_everything() {
        let w = win(1, 1, 3);
        let part = build_partition_unchecked(&uniform(&w, &[2]), 3).unwrap();
        let chk = part.index_check();
        // level-0 and level-1 indices are not inside any 2Q at level 2
        assert_eq!(chk.uncovered, 1 + 2);
        assert_eq!(chk.multiply_owned, 0);
        assert_eq!(part.owner_of(3, &[5]), Some(2));
    }

    #[test]
    fn limiting_extension_constant_and_trace() {
        let w = win(1, 2, 7);
        let scales = WeightScales::populate(&Weight::constant(&w, 1.0).unwrap(), &w, 7, 3).unwrap();
        let levels: Vec<u32> = (0..=7).collect();
        let q = scales.q_construction();
        let sys = uniform(&w, &levels).with_constants(q, 5);
        let c = GridFunction::constant(&w, 7, -0.75);
        let f = extend_limiting(&c, &sys, &scales).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let x = [rng.gen_range(0.0..2.0)];
            let t = rng.gen_range(1e-5..2.0);
            assert!((f.value(&x, t) + 0.75).abs() < 1e-12);
            assert!(f.analytic(&[1, 0], &x, t).unwrap().abs() < 1e-9);
        }
        // the partition resolves three levels below the data
        let phi = smooth_phi(&w, 4);
        let f = extend_limiting(&phi, &sys, &scales).unwrap();
        let mut err = 0.0;
        for q in w.cubes_at_level(0) {
            let tr = trace_of(&f, &q, &dyadic_t_sequence(9, 12), 4).unwrap();
            assert!(tr.converged);
            err += tr.l1_error(&phi);
        }
        assert!(err <= 1e-2 * phi.l1_norm(), "{err}");
    }

    #[test]
    fn limiting_extension_is_nonlinear_across_systems() {
        let w = win(1, 1, 6);
        let a = GridFunction::from_fn(&w, 6, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        let b = smooth_phi(&w, 6);
        let ab = a.combine(1.0, &b, 1.0).unwrap();
        let fa = LimitingExtension::from_partition(build_partition_unchecked(&uniform(&w, &[0, 2]), 6).unwrap(), &a).unwrap();
        let fb = LimitingExtension::from_partition(build_partition_unchecked(&uniform(&w, &[0, 5]), 6).unwrap(), &b).unwrap();
        let fab = LimitingExtension::from_partition(build_partition_unchecked(&uniform(&w, &[0, 3]), 6).unwrap(), &ab).unwrap();
        let gap = (0..64)
            .map(|i| {
                let x = [(i as f64 + 0.5) / 64.0];
                (fab.value(&x, 0.01) - fa.value(&x, 0.01) - fb.value(&x, 0.01)).abs()
            })
            .fold(0.0, f64::max);
        assert!(gap > 1e-2, "{gap}");
    }

    #[test]
    fn inadmissible_or_dilated_systems_are_rejected() {
        let w = win(1, 1, 6);
        let scales = WeightScales::populate(&Weight::constant(&w, 1.0).unwrap(), &w, 6, 3).unwrap();
        // stage levels must start at 0
        let sys = uniform(&w, &[1, 3]).with_constants(scales.q_construction(), 5);
        assert!(matches!(build_partition_g(&sys, &scales), Err(Error::Inadmissible(_))));
        let half = TilingSystem::uniform(&w, &[0, 1], DilationParam::new(1));
        assert!(build_partition_unchecked(&half, 3).is_err());
    }

    #[test]
    fn gradient_mass_is_bounded() {
        let w = win(1, 2, 5);
        let weight = Weight::power(&w, 0.5).unwrap();
        let scales = WeightScales::populate(&weight, &w, 5, 3).unwrap();
        let q = scales.q_construction();
        let sys = uniform(&w, &[0, 1, 2, 3, 4, 5]).with_constants(q, 5);
        let part = build_partition_g(&sys, &scales).unwrap();
        let opts = SobolevOptions { x_depth: 6, t_depth: 10, x_points: 3, t_points: 4, fd_step: 1e-4 };
        let rep = gradient_mass_sweep(&part, &weight, &scales, &opts).unwrap();
        assert_eq!(rep.rows.len(), part.atoms().len());
        assert!(rep.rows.iter().all(|r| r.lhs > 0.0 && r.rhs > 0.0));
        assert!(rep.constant.is_finite() && rep.constant < 100.0, "{}", rep.constant);
    }
}
