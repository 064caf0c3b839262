//! Gauss–Legendre rules and adaptive tensor-product cubature on boxes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

/// Nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

const MAX_CACHED: usize = 24;

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn compute_rule(n: usize) -> GaussRule {
    assert!(n >= 1);
    if n == 1 {
        return GaussRule { nodes: vec![0.0], weights: vec![2.0] };
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussRule { nodes, weights }
}

/// The `n`-point Gauss–Legendre rule (cached for small `n`).
pub fn gauss_legendre(n: usize) -> GaussRule {
    static CACHE: OnceLock<Vec<GaussRule>> = OnceLock::new();
    if n <= MAX_CACHED {
        let cache = CACHE.get_or_init(|| (1..=MAX_CACHED).map(compute_rule).collect());
        cache[n - 1].clone()
    } else {
        compute_rule(n)
    }
}

/// `∫_a^b f` with an `n`-point rule.
pub fn integrate_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let rule = gauss_legendre(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    rule.nodes.iter().zip(&rule.weights).map(|(&x, &w)| w * f(c + h * x)).sum::<f64>() * h
}

/// Tensor rule with `pts[i]` nodes along axis `i`.
pub fn tensor_gauss(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], pts: &[usize]) -> f64 {
    let d = lo.len();
    let rules: Vec<GaussRule> = pts.iter().map(|&p| gauss_legendre(p)).collect();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let jac: f64 = (0..d).map(|i| 0.5 * (hi[i] - lo[i])).product();
    let mut sum = 0.0;
    loop {
        let mut w = 1.0;
        for i in 0..d {
            let r = &rules[i];
            x[i] = 0.5 * (lo[i] + hi[i]) + 0.5 * (hi[i] - lo[i]) * r.nodes[idx[i]];
            w *= r.weights[idx[i]];
        }
        sum += w * f(&x);
        let mut axis = 0;
        loop {
            if axis == d {
                return sum * jac;
            }
            idx[axis] += 1;
            if idx[axis] < rules[axis].nodes.len() {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// Outcome of [`adaptive_cubature`].
#[derive(Clone, Copy, Debug)]
pub struct Cubature {
    pub value: f64,
    pub error: f64,
    pub regions: usize,
    pub converged: bool,
}

struct Region {
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: f64,
    error: f64,
    split_axis: usize,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Region {}
impl PartialOrd for Region {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Region {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn evaluate_region(f: &dyn Fn(&[f64]) -> f64, lo: Vec<f64>, hi: Vec<f64>) -> Region {
    let d = lo.len();
    let fine = vec![5usize; d];
    let value = tensor_gauss(f, &lo, &hi, &fine);
    let mut error = 0.0f64;
    let mut split_axis = 0;
    let mut worst = -1.0;
    for axis in 0..d {
        let mut pts = fine.clone();
        pts[axis] = 3;
        let e = (tensor_gauss(f, &lo, &hi, &pts) - value).abs();
        error = error.max(e);
        let e = if e.is_nan() { f64::INFINITY } else { e };
        if e > worst {
            worst = e;
            split_axis = axis;
        }
    }
    // ties: favour the longest axis
    if worst == 0.0 {
        split_axis = (0..d)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
    }
    Region { lo, hi, value, error, split_axis }
}

/// Adaptive tensor Gauss–Legendre cubature of `f` over `[lo, hi]`.
///
/// Each region is integrated with a 5-point tensor rule; the error estimate
/// is the largest change from dropping one axis to 3 points, and that axis is
/// the one bisected. Regions are refined largest-error first until the total
/// error is below `rel_tol * |value|` (or `abs_floor`), or `max_regions` is
/// reached. `breaks` lists interior coordinates per axis where the integrand
/// may be discontinuous; the box is pre-split there.
pub fn adaptive_cubature(
    f: &dyn Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    breaks: &[Vec<f64>],
    rel_tol: f64,
    abs_floor: f64,
    max_regions: usize,
) -> Cubature {
    let d = lo.len();
    // initial pre-split along known discontinuities
    let mut cuts: Vec<Vec<f64>> = Vec::with_capacity(d);
    for i in 0..d {
        let mut c = vec![lo[i]];
        if let Some(b) = breaks.get(i) {
            let mut inner: Vec<f64> = b.iter().copied().filter(|&x| x > lo[i] && x < hi[i]).collect();
            inner.sort_by(f64::total_cmp);
            inner.dedup();
            c.extend(inner);
        }
        c.push(hi[i]);
        cuts.push(c);
    }
    let mut heap = BinaryHeap::new();
    let mut idx = vec![0usize; d];
    loop {
        let rlo: Vec<f64> = (0..d).map(|i| cuts[i][idx[i]]).collect();
        let rhi: Vec<f64> = (0..d).map(|i| cuts[i][idx[i] + 1]).collect();
        heap.push(evaluate_region(f, rlo, rhi));
        let mut axis = 0;
        loop {
            if axis == d {
                break;
            }
            idx[axis] += 1;
            if idx[axis] + 1 < cuts[axis].len() {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
        if axis == d {
            break;
        }
    }
    let total = |h: &BinaryHeap<Region>| {
        let v: f64 = h.iter().map(|r| r.value).sum();
        let e: f64 = h.iter().map(|r| r.error).sum();
        (v, e)
    };
    let (mut value, mut error) = total(&heap);
    let mut regions = heap.len();
    while !(error <= rel_tol * value.abs() || error <= abs_floor) && regions < max_regions {
        let Some(r) = heap.pop() else { break };
        if !r.error.is_finite() && !r.value.is_finite() {
            heap.push(r);
            break;
        }
        let a = r.split_axis;
        let mid = 0.5 * (r.lo[a] + r.hi[a]);
        let mut hi1 = r.hi.clone();
        hi1[a] = mid;
        let mut lo2 = r.lo.clone();
        lo2[a] = mid;
        let c1 = evaluate_region(f, r.lo, hi1);
        let c2 = evaluate_region(f, lo2, r.hi);
        value += c1.value + c2.value - r.value;
        error += c1.error + c2.error - r.error;
        heap.push(c1);
        heap.push(c2);
        regions += 1;
        if regions % 256 == 0 {
            // resynchronise the running sums
            let (v, e) = total(&heap);
            value = v;
            error = e;
        }
    }
    let (value, error) = total(&heap);
    let converged = error <= rel_tol * value.abs() || error <= abs_floor;
    Cubature { value, error, regions, converged }
}
