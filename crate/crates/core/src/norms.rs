//! The variable-smoothness Besov-type norm and the tiling functionals built
//! on an admissible system.

use crate::error::{Error, Result};
use crate::functions::{
    best_l1_poly_error, delta_modulus, l1_on, mean_deviation, BoundaryFunction, NormReport, NormTerm,
};
use crate::geometry::{DilationParam, DyadicCube};
use crate::par;
use crate::tilings::{check_admissible, LevelSchedule, TilingSystem};
use crate::weights::WeightScales;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BesovVariant {
    /// Difference modulus `δ^l(Q_{k,m})`.
    Delta,
    /// `2^{kn} E^l(2 Q_{k,m})`.
    BestApprox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BesovParams {
    pub l: u32,
    pub k_max: u32,
    pub variant: BesovVariant,
}

impl BesovParams {
    pub fn new(l: u32, k_max: u32, variant: BesovVariant) -> Result<Self> {
        if !(1..=3).contains(&l) {
            return Err(Error::InvalidArgument(format!("smoothness order {l} outside 1..=3")));
        }
        if k_max < 1 {
            return Err(Error::InvalidArgument("k_max must be at least 1".into()));
        }
        Ok(BesovParams { l, k_max, variant })
    }
}

fn cube_label(prefix: &str, q: &DyadicCube) -> String {
    let m: Vec<String> = q.index().iter().map(|v| v.to_string()).collect();
    format!("{prefix}k={} m=({})", q.level, m.join(" "))
}

/// `Σ_m ĝ_{0,m} ‖φ | L1(Q_{0,m})‖`, one term per cube.
pub fn level_zero_terms<B: BoundaryFunction + ?Sized>(phi: &B, scales: &WeightScales) -> Result<Vec<NormTerm>> {
    let win = scales.window();
    win.cubes_at_level(0)
        .map(|q| {
            let g = scales.hat_gamma(&q)?;
            Ok(NormTerm { label: cube_label("L1 ", &q), value: g * l1_on(phi, &q.to_box(0)) })
        })
        .collect()
}

fn check_dim<B: BoundaryFunction + ?Sized>(phi: &B, scales: &WeightScales) -> Result<()> {
    let n = scales.window().dim();
    if phi.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: phi.dim() });
    }
    Ok(())
}

/// The Besov-type norm with weights `γ_{k,m} = 2^{kl} ∬_{Π_{k,m}} γ`,
/// truncated at `k_max`. The refinement delta is the level-`k_max` sum.
pub fn besov_variable_norm<B: BoundaryFunction + ?Sized>(
    phi: &B,
    scales: &WeightScales,
    p: &BesovParams,
) -> Result<NormReport> {
    check_dim(phi, scales)?;
    if p.k_max > scales.depth() {
        return Err(Error::MissingScale { k: p.k_max, index: vec![] });
    }
    let win = scales.window();
    let n = win.dim();
    let mut terms = level_zero_terms(phi, scales)?;
    let mut last = 0.0;
    for k in 1..=p.k_max {
        let cubes: Vec<DyadicCube> = win.cubes_at_level(k).collect();
        let vals = par::map_slice(&cubes, |q| -> Result<f64> {
            let g = scales.gamma3(q, p.l)?;
            let m = match p.variant {
                BesovVariant::Delta => delta_modulus(phi, q, p.l)?,
                BesovVariant::BestApprox => {
                    let b = q.scaled(2, k + 1);
                    (k as f64 * n as f64).exp2() * best_l1_poly_error(phi, &b, p.l)?
                }
            };
            Ok(g * m)
        });
        last = 0.0;
        for (q, v) in cubes.iter().zip(vals) {
            let v = v?;
            last += v;
            terms.push(NormTerm { label: cube_label("", q), value: v });
        }
    }
    Ok(NormReport::from_terms(terms, p.k_max, last))
}

/// Per-cube functional on the dilated selected cubes of a system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SystemTerm {
    BestConstant,
    MeanDeviation,
}

fn system_functional<B: BoundaryFunction + ?Sized>(
    phi: &B,
    sys: &TilingSystem,
    scales: &WeightScales,
    kind: SystemTerm,
) -> Result<NormReport> {
    check_dim(phi, scales)?;
    if sys.max_level() > scales.depth() {
        return Err(Error::MissingScale { k: sys.max_level(), index: vec![] });
    }
    let bits = sys.window.lattice_bits(sys.lambda);
    let mut terms = level_zero_terms(phi, scales)?;
    let mut stage_totals = vec![terms.iter().map(|t| t.value).sum::<f64>()];
    let mut last = 0.0;
    for s in 1..sys.stage_count() {
        let cubes: Vec<DyadicCube> = sys.selected_cubes(s).collect();
        let vals = par::map_slice(&cubes, |q| -> Result<f64> {
            let b = q.dilate(sys.lambda, bits);
            let e = match kind {
                SystemTerm::BestConstant => best_l1_poly_error(phi, &b, 1)?,
                SystemTerm::MeanDeviation => mean_deviation(phi, &b),
            };
            Ok(scales.hat(q) * e)
        });
        let mut total = 0.0;
        for (q, v) in cubes.iter().zip(vals) {
            let v = v?;
            total += v;
            terms.push(NormTerm { label: cube_label(&format!("s={s} "), q), value: v });
        }
        stage_totals.push(total);
        last = total;
    }
    let mut report = NormReport::from_terms(terms, sys.max_level(), last);
    let parts: Vec<String> = stage_totals.iter().enumerate().map(|(s, v)| format!("s={s}: {v:.6e}")).collect();
    report.note = Some(format!("level-0 term in L1 form; stage totals {}", parts.join("; ")));
    Ok(report)
}

/// The tiling functional with best-constant errors `E^1(Q̃^s_α)` for the
/// given system. Rejects systems failing admissibility with `sys.c1`,
/// `sys.c2`.
pub fn z_functional<B: BoundaryFunction + ?Sized>(
    phi: &B,
    sys: &TilingSystem,
    scales: &WeightScales,
) -> Result<NormReport> {
    let rep = check_admissible(sys, scales, sys.c1, sys.c2)?;
    if let Some(c) = rep.first_failure() {
        return Err(Error::Inadmissible(format!(
            "condition {} fails: worst {:.6e} against bound {:.6e}{}",
            c.condition,
            c.worst,
            c.bound,
            c.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
        )));
    }
    z_functional_unchecked(phi, sys, scales)
}

/// [`z_functional`] without the admissibility check.
pub fn z_functional_unchecked<B: BoundaryFunction + ?Sized>(
    phi: &B,
    sys: &TilingSystem,
    scales: &WeightScales,
) -> Result<NormReport> {
    system_functional(phi, sys, scales, SystemTerm::BestConstant)
}

/// The same sum with `∫_{Q̃} |φ - φ_{Q̃}|` in place of the best-constant
/// error; between one and two times [`z_functional_unchecked`].
pub fn mean_deviation_functional<B: BoundaryFunction + ?Sized>(
    phi: &B,
    sys: &TilingSystem,
    scales: &WeightScales,
) -> Result<NormReport> {
    system_functional(phi, sys, scales, SystemTerm::MeanDeviation)
}

/// Minimum of the tiling functional over a list of candidate systems.
#[derive(Clone, Debug)]
pub struct ZEstimate {
    pub value: f64,
    /// Index of the minimising candidate.
    pub best: usize,
    /// Per candidate; `None` when the candidate is not admissible.
    pub values: Vec<Option<f64>>,
}

pub fn z_estimate<B: BoundaryFunction + ?Sized>(
    phi: &B,
    candidates: &[TilingSystem],
    scales: &WeightScales,
) -> Result<ZEstimate> {
    let mut values = Vec::with_capacity(candidates.len());
    for sys in candidates {
        match z_functional(phi, sys, scales) {
            Ok(r) => values.push(Some(r.value)),
            Err(Error::Inadmissible(_)) => values.push(None),
            Err(e) => return Err(e),
        }
    }
    let (best, value) = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Inadmissible("no admissible candidate system".into()))?;
    Ok(ZEstimate { value, best, values })
}

/// Uniform systems with levels `{0} ∪ {a, a+1, .., max_level}` for every
/// `a` in `1..=max_level + 1`, carrying the constants of `scales`.
pub fn uniform_candidates(scales: &WeightScales, max_level: u32, lambda: DilationParam, r: u32) -> Vec<TilingSystem> {
    let win = scales.window();
    (1..=max_level + 1)
        .map(|a| {
            let mut levels = vec![0];
            levels.extend(a..=max_level);
            TilingSystem::uniform(win, &levels, lambda).with_constants(scales.q_construction(), r)
        })
        .collect()
}

/// The uniform system following a level schedule.
pub fn schedule_system(scales: &WeightScales, schedule: &LevelSchedule, lambda: DilationParam, r: u32) -> TilingSystem {
    let levels: Vec<u32> = schedule.levels.iter().copied().filter(|&l| l <= scales.depth()).collect();
    TilingSystem::uniform(scales.window(), &levels, lambda).with_constants(scales.q_construction(), r)
}
