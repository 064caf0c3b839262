//! Tilings of the window by dyadic cubes, the greedy cover selection, the
//! function-dependent level schedule, the blue/yellow system construction
//! and admissibility checks.

use std::collections::{HashMap, HashSet};

use rand::Rng;

use crate::error::{Error, Result};
use crate::functions::{sobolev_slab_norms, HalfSpaceFunction, SobolevOptions};
use crate::geometry::{
    boxes_intersect, covered_by_union, intersection_units, window_chart, CountField, DilationParam, DyadicCube,
    LatticeBox, Window,
};
use crate::par;
use crate::weights::{Weight, WeightScales};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Color {
    Blue,
    Yellow,
}

impl Color {
    pub fn as_str(&self) -> &'static str {
        match self {
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn parse(s: &str) -> Option<Color> {
        match s {
            "blue" | "b" => Some(Color::Blue),
            "yellow" | "y" => Some(Color::Yellow),
            _ => None,
        }
    }
}

/// A family of colored dyadic cubes in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tiling {
    window: Window,
    cubes: Vec<DyadicCube>,
    colors: Vec<Color>,
}

impl Tiling {
    pub fn new(window: Window, mut cubes: Vec<(DyadicCube, Color)>) -> Self {
        cubes.sort_by_key(|a| a.0);
        let (cubes, colors) = cubes.into_iter().unzip();
        Tiling { window, cubes, colors }
    }

    /// All level-`k` cubes, yellow.
    pub fn uniform(window: &Window, level: u32) -> Self {
        Tiling::new(*window, window.cubes_at_level(level).map(|q| (q, Color::Yellow)).collect())
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn cubes(&self) -> &[DyadicCube] {
        &self.cubes
    }

    pub fn colors(&self) -> &[Color] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (DyadicCube, Color)> + '_ {
        self.cubes.iter().copied().zip(self.colors.iter().copied())
    }

    pub fn max_level(&self) -> u32 {
        self.cubes.iter().map(|q| q.level).max().unwrap_or(0)
    }

    pub fn min_level(&self) -> u32 {
        self.cubes.iter().map(|q| q.level).min().unwrap_or(0)
    }

    pub fn count(&self, color: Color) -> usize {
        self.colors.iter().filter(|&&c| c == color).count()
    }

    /// Position of `q` in the tiling.
    pub fn position(&self, q: &DyadicCube) -> Option<usize> {
        self.cubes.binary_search(q).ok()
    }

    /// The member containing `q` (or equal to it).
    pub fn ancestor_of(&self, q: &DyadicCube) -> Option<usize> {
        (0..=q.level).rev().find_map(|k| self.position(&q.ancestor(k)))
    }
}

/// Outcome of [`validate_tiling`].
#[derive(Clone, Debug, PartialEq)]
pub struct TilingCheck {
    pub valid: bool,
    pub overlap: Option<(DyadicCube, DyadicCube)>,
    pub gap: Option<DyadicCube>,
    pub too_deep: Option<DyadicCube>,
}

impl TilingCheck {
    pub fn message(&self) -> String {
        if let Some(q) = self.too_deep {
            format!("cube at level {} exceeds depth", q.level)
        } else if let Some((a, b)) = self.overlap {
            format!("overlap: level {} {:?} and level {} {:?}", a.level, a.index(), b.level, b.index())
        } else if let Some(q) = self.gap {
            format!("gap: level {} {:?} is uncovered", q.level, q.index())
        } else {
            "valid tiling".into()
        }
    }
}

/// Checks that the closed cubes have disjoint interiors and cover the
/// window; reports the first offending cube in canonical order.
pub fn validate_tiling(family: &[DyadicCube], win: &Window) -> TilingCheck {
    let mut check = TilingCheck { valid: false, overlap: None, gap: None, too_deep: None };
    let mut sorted = family.to_vec();
    sorted.sort();
    if let Some(q) = sorted.iter().find(|q| q.level > win.d_max() || q.dim() != win.dim()) {
        check.too_deep = Some(*q);
        return check;
    }
    let mut set: HashSet<DyadicCube> = HashSet::with_capacity(sorted.len());
    for q in &sorted {
        if !set.insert(*q) {
            check.overlap = Some((*q, *q));
            return check;
        }
    }
    for q in &sorted {
        if let Some(a) = (0..q.level).rev().map(|k| q.ancestor(k)).find(|a| set.contains(a)) {
            check.overlap = Some((a, *q));
            return check;
        }
    }
    let n = win.dim() as u32;
    let d = win.d_max();
    let total: u128 = sorted.iter().map(|q| 1u128 << ((d - q.level) * n)).sum();
    let full = (win.cells_per_axis(d) as u128).pow(n);
    if total == full {
        check.valid = true;
        return check;
    }
    let prefixes: HashSet<DyadicCube> =
        sorted.iter().flat_map(|q| (0..q.level).map(move |k| q.ancestor(k))).collect();
    let mut stack: Vec<DyadicCube> = win.cubes_at_level(0).collect();
    stack.reverse();
    while let Some(c) = stack.pop() {
        if set.contains(&c) {
            continue;
        }
        if prefixes.contains(&c) {
            let mut ch: Vec<DyadicCube> = c.children().collect();
            ch.reverse();
            stack.extend(ch);
            continue;
        }
        check.gap = Some(c);
        return check;
    }
    check
}

/// Dilations of a cube family indexed by a prefix tree, for intersection
/// queries.
pub struct DilationIndex<'a> {
    win: Window,
    lambda: DilationParam,
    bits: u32,
    cubes: &'a [DyadicCube],
    members: HashMap<DyadicCube, Vec<usize>>,
    internal: HashSet<DyadicCube>,
}

impl<'a> DilationIndex<'a> {
    pub fn new(win: &Window, cubes: &'a [DyadicCube], lambda: DilationParam) -> Self {
        let mut members: HashMap<DyadicCube, Vec<usize>> = HashMap::with_capacity(cubes.len());
        let mut internal = HashSet::new();
        for (i, q) in cubes.iter().enumerate() {
            members.entry(*q).or_default().push(i);
            for k in 0..q.level {
                internal.insert(q.ancestor(k));
            }
        }
        DilationIndex { win: *win, lambda, bits: win.lattice_bits(lambda), cubes, members, internal }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn dilation(&self, i: usize) -> LatticeBox {
        self.cubes[i].dilate(self.lambda, self.bits)
    }

    /// Members whose dilation meets `target` (open sets, periodic).
    pub fn query(&self, target: &LatticeBox) -> Vec<usize> {
        let p = self.win.period();
        let mut out = Vec::new();
        let mut stack: Vec<DyadicCube> = self.win.cubes_at_level(0).collect();
        while let Some(c) = stack.pop() {
            if !boxes_intersect(&c.dilate(self.lambda, self.bits), target, p) {
                continue;
            }
            if let Some(ids) = self.members.get(&c) {
                out.extend_from_slice(ids);
            }
            if self.internal.contains(&c) {
                stack.extend(c.children());
            }
        }
        out.sort_unstable();
        out
    }
}

/// Greedy selection of a non-redundant subcover: in canonical order, a cube
/// is dropped when its dilation lies in the union of the dilations of all
/// other cubes still present. Returns positions of the survivors.
pub fn select_cover(t: &Tiling, lambda: DilationParam) -> Vec<usize> {
    let win = t.window();
    let idx = DilationIndex::new(win, t.cubes(), lambda);
    let mut alive = vec![true; t.len()];
    for i in 0..t.len() {
        let target = idx.dilation(i);
        let others: Vec<LatticeBox> = idx
            .query(&target)
            .into_iter()
            .filter(|&j| j != i && alive[j])
            .map(|j| idx.dilation(j))
            .collect();
        if covered_by_union(&target, &others, win.period()) {
            alive[i] = false;
        }
    }
    (0..t.len()).filter(|&i| alive[i]).collect()
}

/// The four exact properties of a selected cover.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverReport {
    pub covering: bool,
    pub max_multiplicity: u16,
    pub multiplicity_bound: u16,
    /// Smallest `|Q̃ ∩ Q̃'| / ((λ/2)^n min(|Q|, |Q'|))` over intersecting pairs.
    pub min_overlap_ratio: f64,
    /// Survivors whose dilation is covered by the others.
    pub redundant: Vec<usize>,
}

impl CoverReport {
    pub fn overlap_ok(&self) -> bool {
        self.min_overlap_ratio >= 1.0
    }

    pub fn all_pass(&self) -> bool {
        self.covering && self.max_multiplicity <= self.multiplicity_bound && self.overlap_ok() && self.redundant.is_empty()
    }
}

/// Verifies covering, multiplicity, pairwise overlap and non-redundancy of
/// the selection, all in exact arithmetic.
pub fn check_cover_properties(t: &Tiling, selected: &[usize], lambda: DilationParam) -> CoverReport {
    let win = t.window();
    let n = win.dim();
    let p = win.period();
    let chosen: Vec<DyadicCube> = selected.iter().map(|&i| t.cubes()[i]).collect();
    let idx = DilationIndex::new(win, &chosen, lambda);
    let bits = idx.bits();
    let dil: Vec<LatticeBox> = (0..chosen.len()).map(|i| idx.dilation(i)).collect();
    let field = CountField::new(&window_chart(win, bits), &dil, p);
    let covering = field.min_interior() > 0;
    let max_multiplicity = field.max_interior();
    let bound = ((n + 1) << n) as u16;
    let ratios = par::map_range(chosen.len(), |i| {
        let mut worst = f64::INFINITY;
        for j in idx.query(&dil[i]) {
            if j <= i {
                continue;
            }
            let (units, ubits) = intersection_units(&dil[i], &dil[j], p);
            let min_level = chosen[i].level.max(chosen[j].level);
            // (λ/2)^n · 2^{-k n} in units of 2^{-ubits n}
            let side_units = 1u128 << (ubits - min_level - lambda.k0 - 1);
            let need = side_units.pow(n as u32);
            worst = worst.min(units as f64 / need as f64);
        }
        worst
    });
    let min_overlap_ratio = ratios.into_iter().fold(f64::INFINITY, f64::min);
    let redundant = par::map_range(chosen.len(), |i| {
        let others: Vec<LatticeBox> =
            idx.query(&dil[i]).into_iter().filter(|&j| j != i).map(|j| dil[j]).collect();
        covered_by_union(&dil[i], &others, p)
    })
    .into_iter()
    .enumerate()
    .filter_map(|(i, r)| r.then_some(selected[i]))
    .collect();
    CoverReport { covering, max_multiplicity, multiplicity_bound: bound, min_overlap_ratio, redundant }
}

/// Random quadtree tiling: every cube splits with probability `p_split`
/// until `max_level`.
pub fn random_tiling(win: &Window, max_level: u32, p_split: f64, rng: &mut impl Rng) -> Tiling {
    let mut out = Vec::new();
    let mut stack: Vec<DyadicCube> = win.cubes_at_level(0).collect();
    stack.reverse();
    while let Some(q) = stack.pop() {
        if q.level < max_level.min(win.d_max()) && rng.gen_bool(p_split) {
            let mut ch: Vec<DyadicCube> = q.children().collect();
            ch.reverse();
            stack.extend(ch);
        } else {
            out.push((q, Color::Yellow));
        }
    }
    Tiling::new(*win, out)
}

/// Strictly increasing levels `l_0 = 0 < l_1 < ...`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSchedule {
    pub levels: Vec<u32>,
    /// Set when the schedule hit the depth limit before the requested
    /// number of stages.
    pub truncated: bool,
}

impl LevelSchedule {
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        if levels.first() != Some(&0) || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!("schedule {levels:?} must start at 0 and increase")));
        }
        Ok(LevelSchedule { levels, truncated: false })
    }

    /// `l_j = j` for `j = 0..=stages`.
    pub fn linear(stages: u32) -> Self {
        LevelSchedule { levels: (0..=stages).collect(), truncated: false }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Schedule from slab norms `slab[l]`: `l_{j+1}` is the least `l > l_j` with
/// `slab[l] <= slab[l_j] / 2`, or `l_j + 1` when `slab[l_j] = 0`.
pub fn schedule_from_slabs(slab: &[f64], d_max: u32, max_stages: usize) -> LevelSchedule {
    let mut levels = vec![0u32];
    let mut truncated = false;
    let limit = (d_max as usize).min(slab.len().saturating_sub(1));
    while levels.len() <= max_stages {
        let cur = *levels.last().unwrap() as usize;
        let next = if slab[cur] == 0.0 {
            Some(cur + 1).filter(|&l| l <= limit)
        } else {
            (cur + 1..=limit).find(|&l| slab[l] <= 0.5 * slab[cur] * (1.0 + 1e-9))
        };
        match next {
            Some(l) => levels.push(l as u32),
            None => {
                truncated = true;
                break;
            }
        }
    }
    LevelSchedule { levels, truncated }
}

/// The level schedule of `f` under `γ`, at most `max_stages` steps and never
/// past the window depth.
pub fn build_lj_sequence<F: HalfSpaceFunction + ?Sized>(
    f: &F,
    w: &Weight,
    win: &Window,
    max_stages: usize,
    opts: &SobolevOptions,
) -> Result<LevelSchedule> {
    let slabs = sobolev_slab_norms(f, w, win, opts)?;
    Ok(schedule_from_slabs(&slabs, win.d_max(), max_stages))
}

/// A system of tilings with selected covers and its constants.
#[derive(Clone, Debug)]
pub struct TilingSystem {
    pub window: Window,
    pub lambda: DilationParam,
    pub schedule: LevelSchedule,
    pub r: u32,
    pub q: f64,
    pub c1: f64,
    pub c2: f64,
    /// `T^s`.
    pub stages: Vec<Tiling>,
    /// Level bound `l` of each stage: every cube has level `<= l`.
    pub stage_levels: Vec<u32>,
    /// `Ã^s` as positions into `stages[s]`.
    pub selected: Vec<Vec<usize>>,
    /// Set when the construction stopped at the depth limit.
    pub truncated: bool,
    /// Whether a final stage off the `r`-grid was appended.
    pub closing_stage: bool,
}

impl TilingSystem {
    /// Assembles a system, running the cover selection on every stage.
    pub fn from_stages(
        window: &Window,
        lambda: DilationParam,
        schedule: LevelSchedule,
        stages: Vec<Tiling>,
        stage_levels: Vec<u32>,
    ) -> Self {
        let selected = stages.iter().map(|t| select_cover(t, lambda)).collect();
        TilingSystem {
            window: *window,
            lambda,
            schedule,
            r: 1,
            q: 1.0,
            c1: 1.0,
            c2: 1.0,
            stages,
            stage_levels,
            selected,
            truncated: false,
            closing_stage: false,
        }
    }

    /// Uniform tilings at the given strictly increasing levels.
    pub fn uniform(window: &Window, levels: &[u32], lambda: DilationParam) -> Self {
        let stages = levels.iter().map(|&l| Tiling::uniform(window, l)).collect();
        let schedule = LevelSchedule { levels: levels.to_vec(), truncated: false };
        TilingSystem::from_stages(window, lambda, schedule, stages, levels.to_vec())
    }

    /// Sets `q`, `r` and the constants `c1 = q^3`, `c2 = q^r`.
    pub fn with_constants(mut self, q: f64, r: u32) -> Self {
        self.q = q;
        self.r = r;
        self.c1 = q.powi(3);
        self.c2 = q.powi(r as i32);
        self
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn max_level(&self) -> u32 {
        self.stages.iter().map(|t| t.max_level()).max().unwrap_or(0)
    }

    /// Selected cubes of stage `s`.
    pub fn selected_cubes(&self, s: usize) -> impl Iterator<Item = DyadicCube> + '_ {
        self.selected[s].iter().map(move |&i| self.stages[s].cubes()[i])
    }
}

/// Bracket `j` with `q^j <= g < q^{j+1}`.
pub fn q_bracket(g: f64, q: f64) -> i32 {
    let mut j = (g.ln() / q.ln()).floor() as i32;
    while q.powi(j) > g {
        j -= 1;
    }
    while q.powi(j + 1) <= g {
        j += 1;
    }
    j
}

/// One raw refinement step: every cube is subdivided; descendants with
/// `ĝ > q^{j+1}` become blue, the rest are refined down to `next_level`
/// and painted yellow.
fn raw_step(prev: &Tiling, scales: &WeightScales, q: f64, next_level: u32) -> Tiling {
    let pieces = par::map_slice(prev.cubes(), |alpha| {
        let thr = q.powi(q_bracket(scales.hat(alpha), q) + 1);
        let mut out = Vec::new();
        let mut stack: Vec<DyadicCube> = alpha.children().collect();
        while let Some(c) = stack.pop() {
            if scales.hat(&c) > thr {
                out.push((c, Color::Blue));
            } else if c.level >= next_level {
                out.push((c, Color::Yellow));
            } else {
                stack.extend(c.children());
            }
        }
        out
    });
    Tiling::new(*prev.window(), pieces.into_iter().flatten().collect())
}

/// Raw stages `T̊^0, T̊^1, ...` for as many schedule entries as the scale
/// table supports.
pub fn build_raw_stages(scales: &WeightScales, schedule: &LevelSchedule, q: f64) -> (Vec<Tiling>, bool) {
    let win = scales.window();
    let mut stages = vec![Tiling::uniform(win, 0)];
    let mut truncated = schedule.truncated;
    for s in 1..schedule.len() {
        let next = schedule.levels[s];
        if next > scales.depth() || next > win.d_max() {
            truncated = true;
            break;
        }
        let t = raw_step(&stages[s - 1], scales, q, next);
        stages.push(t);
    }
    (stages, truncated)
}

/// The construction of an admissible system: raw stages thinned to every
/// `r`-th one, plus the last raw stage when it is off that grid and keeps
/// the stage separation.
pub fn build_admissible_system(
    scales: &WeightScales,
    schedule: &LevelSchedule,
    r: u32,
    lambda: DilationParam,
) -> Result<TilingSystem> {
    if r < 5 {
        return Err(Error::InvalidArgument(format!("thinning factor r = {r} must be >= 5")));
    }
    let q = scales.q_construction();
    let (raw, truncated) = build_raw_stages(scales, schedule, q);
    let win = *scales.window();
    let mut picks: Vec<usize> = (0..raw.len()).step_by(r as usize).collect();
    let last = raw.len() - 1;
    let mut closing = false;
    if last % r as usize != 0 {
        let prev = &raw[*picks.last().unwrap()];
        if separation_worst(prev, &raw[last], lambda) <= 0.5 {
            picks.push(last);
            closing = true;
        }
    }
    let stages: Vec<Tiling> = picks.iter().map(|&i| raw[i].clone()).collect();
    let levels: Vec<u32> = picks.iter().map(|&i| schedule.levels[i]).collect();
    let mut sys = TilingSystem::from_stages(&win, lambda, schedule.clone(), stages, levels).with_constants(q, r);
    sys.truncated = truncated;
    sys.closing_stage = closing;
    Ok(sys)
}

/// Largest `r(β) / r(α)` over `α ∈ a`, `β ∈ b` with intersecting dilations.
fn separation_worst(a: &Tiling, b: &Tiling, lambda: DilationParam) -> f64 {
    let win = a.window();
    let idx = DilationIndex::new(win, a.cubes(), lambda);
    let bits = idx.bits();
    let worst = par::map_slice(b.cubes(), |beta| {
        let target = beta.dilate(lambda, bits);
        idx.query(&target)
            .into_iter()
            .map(|i| (a.cubes()[i].level as f64 - beta.level as f64).exp2())
            .fold(0.0, f64::max)
    });
    worst.into_iter().fold(0.0, f64::max)
}

/// One admissibility condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionResult {
    pub condition: u8,
    pub worst: f64,
    pub bound: f64,
    pub pass: bool,
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityReport {
    pub conditions: Vec<ConditionResult>,
}

impl AdmissibilityReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| !c.pass)
    }
}

/// Relative slack for the quadrature-based conditions.
pub const RATIO_SLACK: f64 = 1e-6;

/// Checks the four admissibility conditions with constants `c1`, `c2`.
pub fn check_admissible(sys: &TilingSystem, scales: &WeightScales, c1: f64, c2: f64) -> Result<AdmissibilityReport> {
    let need = sys.max_level();
    if need > scales.depth() {
        return Err(Error::MissingScale { k: need, index: vec![] });
    }
    let lambda = sys.lambda;
    // 1: same-stage neighbours
    let mut w1 = 1.0f64;
    for t in &sys.stages {
        let idx = DilationIndex::new(&sys.window, t.cubes(), lambda);
        let bits = idx.bits();
        let worst = par::map_slice(t.cubes(), |a| {
            let ga = scales.hat(a);
            idx.query(&a.dilate(lambda, bits))
                .into_iter()
                .map(|j| ga / scales.hat(&t.cubes()[j]))
                .fold(0.0, f64::max)
        });
        w1 = worst.into_iter().fold(w1, f64::max);
    }
    // 2: succession with comparable scales
    let mut w2 = 1.0f64;
    let mut orphan = None;
    for s in 0..sys.stages.len().saturating_sub(1) {
        let (a, b) = (&sys.stages[s], &sys.stages[s + 1]);
        for beta in b.cubes() {
            match a.ancestor_of(beta) {
                Some(i) => {
                    let (ga, gb) = (scales.hat(&a.cubes()[i]), scales.hat(beta));
                    w2 = w2.max(ga / gb).max(gb / ga);
                }
                None => {
                    orphan.get_or_insert((s + 1, *beta));
                }
            }
        }
    }
    // 3: separation of consecutive stages
    let mut w3 = 0.0f64;
    for s in 0..sys.stages.len().saturating_sub(1) {
        w3 = w3.max(separation_worst(&sys.stages[s], &sys.stages[s + 1], lambda));
    }
    // 4: stage levels bounded by the schedule
    let mut w4 = 0.0f64;
    for (t, &l) in sys.stages.iter().zip(&sys.stage_levels) {
        let deepest = t.max_level();
        w4 = w4.max((deepest as f64 - l as f64).exp2());
    }
    let levels_ok = sys.stage_levels.first() == Some(&0) && sys.stage_levels.windows(2).all(|w| w[1] > w[0]);
    let conditions = vec![
        ConditionResult { condition: 1, worst: w1, bound: c1, pass: w1 <= c1 * (1.0 + RATIO_SLACK), detail: None },
        ConditionResult {
            condition: 2,
            worst: w2,
            bound: c2,
            pass: orphan.is_none() && w2 <= c2 * (1.0 + RATIO_SLACK),
            detail: orphan.map(|(s, q)| format!("stage {s} cube {:?} at level {} has no predecessor", q.index(), q.level)),
        },
        ConditionResult { condition: 3, worst: w3, bound: 0.5, pass: w3 <= 0.5, detail: None },
        ConditionResult {
            condition: 4,
            worst: w4,
            bound: 1.0,
            pass: w4 <= 1.0 && levels_ok,
            detail: (!levels_ok).then(|| format!("stage levels {:?} not strictly increasing from 0", sys.stage_levels)),
        },
    ];
    Ok(AdmissibilityReport { conditions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::FnHalfSpace;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn win(n: usize, m: u32, d: u32) -> Window {
        Window::new(n, m, d).unwrap()
    }

    /// Coverage of every point of the finest lattice, by brute force.
    fn raster_tiling(family: &[DyadicCube], win: &Window) -> bool {
        let d = win.d_max();
        let mut count = vec![0u32; win.cube_count(d)];
        for q in family {
            let sh = d - q.level;
            let side = 1i64 << sh;
            let n = win.dim();
            for off in 0..(side as usize).pow(n as u32) {
                let mut idx = vec![0i64; n];
                let mut o = off;
                for i in (0..n).rev() {
                    idx[i] = q.index()[i] * side + (o % side as usize) as i64;
                    o /= side as usize;
                }
                let c = win.cube(d, &idx);
                count[win.linear_index(&c)] += 1;
            }
        }
        count.iter().all(|&c| c == 1)
    }

    #[test]
    fn uniform_family_is_valid() {
        let w = win(2, 2, 4);
        let fam: Vec<DyadicCube> = w.cubes_at_level(2).collect();
        assert!(validate_tiling(&fam, &w).valid);
    }

    #[test]
    fn missing_cube_reports_gap() {
        let w = win(2, 2, 4);
        let mut fam: Vec<DyadicCube> = w.cubes_at_level(2).collect();
        let removed = fam.remove(17);
        let c = validate_tiling(&fam, &w);
        assert!(!c.valid);
        assert_eq!(c.gap, Some(removed));
    }

    #[test]
    fn overlap_is_reported() {
        let w = win(1, 1, 4);
        let mut fam: Vec<DyadicCube> = w.cubes_at_level(1).collect();
        fam.push(w.cube(2, &[3]));
        let c = validate_tiling(&fam, &w);
        assert_eq!(c.overlap, Some((w.cube(1, &[1]), w.cube(2, &[3]))));
    }

    #[test]
    fn uniform_tiling_keeps_all() {
        for n in 1..=2 {
            let w = win(n, 2, 4);
            let t = Tiling::uniform(&w, 2);
            assert_eq!(select_cover(&t, DilationParam::unit()).len(), t.len());
        }
    }

    #[test]
    fn small_cube_among_large_is_removed() {
        // level-1 cubes everywhere except one level-1 cube split down to level 3
        let w = win(1, 2, 4);
        let mut fam: Vec<(DyadicCube, Color)> =
            w.cubes_at_level(1).filter(|q| q.index()[0] != 1).map(|q| (q, Color::Yellow)).collect();
        for k in [4, 5, 6, 7] {
            fam.push((w.cube(3, &[k]), Color::Yellow));
        }
        let t = Tiling::new(w, fam);
        let sel = select_cover(&t, DilationParam::unit());
        let kept: Vec<DyadicCube> = sel.iter().map(|&i| t.cubes()[i]).collect();
        // 2Q_{3,4} = (7/16, 11/16) ⊂ 2Q_{3,5} ∪ ... is dropped by the greedy pass
        assert!(!kept.contains(&w.cube(3, &[4])) || !kept.contains(&w.cube(3, &[5])));
        assert!(check_cover_properties(&t, &sel, DilationParam::unit()).all_pass());
    }

    #[test]
    fn schedule_examples() {
        let w = win(1, 1, 6);
        let g = Weight::constant(&w, 1.0).unwrap();
        let opts = SobolevOptions::for_depth(6);
        let zero = FnHalfSpace::new(1, |_, _| 0.0);
        assert_eq!(build_lj_sequence(&zero, &g, &w, 4, &opts).unwrap().levels, vec![0, 1, 2, 3, 4]);
        let flat = FnHalfSpace::new(1, |x, _| if x[0] < 0.25 { 1.0 } else { 0.0 });
        assert_eq!(build_lj_sequence(&flat, &g, &w, 4, &opts).unwrap().levels, vec![0, 1, 2, 3, 4]);
        let late = FnHalfSpace::new(1, |_, t| if t > 0.5 && t < 1.0 { ((t - 0.5) * (1.0 - t)).powi(2) } else { 0.0 });
        assert_eq!(build_lj_sequence(&late, &g, &w, 3, &opts).unwrap().levels[1], 1);
        let s = schedule_from_slabs(&[1.0, 0.9, 0.8, 0.7], 3, 5);
        assert!(s.truncated);
        assert_eq!(s.levels, vec![0]);
    }

    #[test]
    fn constant_weight_builds_uniform_stages() {
        let w = win(1, 2, 8);
        let g = Weight::constant(&w, 1.0).unwrap();
        let scales = WeightScales::populate(&g, &w, 8, 3).unwrap();
        let sched = LevelSchedule::linear(8);
        let (raw, _) = build_raw_stages(&scales, &sched, scales.q_construction());
        for (s, t) in raw.iter().enumerate() {
            assert_eq!(t.count(Color::Blue), 0);
            assert_eq!(*t, Tiling::uniform(&w, s as u32));
        }
        let sys = build_admissible_system(&scales, &sched, 5, DilationParam::unit()).unwrap();
        let rep = check_admissible(&sys, &scales, sys.c1, sys.c2).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        assert_eq!(rep.conditions[0].worst, 1.0);
        assert_eq!(sys.stage_levels, vec![0, 5, 8]);
        assert!(sys.closing_stage);
        assert_eq!(rep.conditions[2].worst, 0.125);
        let consecutive = TilingSystem::uniform(&w, &[0, 1, 2], DilationParam::unit());
        let rep = check_admissible(&consecutive, &scales, 1.0, 1.0).unwrap();
        assert!(rep.all_pass());
        assert_eq!(rep.conditions[2].worst, 0.5);
    }

    #[test]
    fn blue_cubes_respect_bracket() {
        let w = win(1, 1, 8);
        let g = Weight::scaled_power(&w, 0.75, 1.0).unwrap();
        let probe = WeightScales::populate(&g, &w, 8, 4).unwrap();
        // scale so that the first ĝ values sit just below a q-power
        let q = probe.q_construction();
        let g = Weight::scaled_power(&w, 0.75, 0.999 * q * 0.25).unwrap();
        let scales = WeightScales::populate(&g, &w, 8, 4).unwrap();
        let (raw, _) = build_raw_stages(&scales, &LevelSchedule::linear(8), q);
        let blues: Vec<DyadicCube> =
            raw.iter().flat_map(|t| t.iter().filter(|c| c.1 == Color::Blue).map(|c| c.0).collect::<Vec<_>>()).collect();
        assert!(!blues.is_empty());
        for t in &raw[1..] {
            for (c, col) in t.iter() {
                if col == Color::Blue {
                    let parent = c.parent().unwrap();
                    let j = q_bracket(scales.hat(&parent), q);
                    let h = scales.hat(&c);
                    assert!(h > q.powi(j) && h <= q.powi(j + 2) / 2.0);
                }
            }
        }
    }

    #[test]
    fn repeated_scale_violates_separation() {
        let w = win(1, 2, 4);
        let mut sys = TilingSystem::uniform(&w, &[0, 1, 2], DilationParam::unit());
        sys.stages[2] = Tiling::uniform(&w, 1);
        sys.selected[2] = select_cover(&sys.stages[2], DilationParam::unit());
        let g = Weight::constant(&w, 1.0).unwrap();
        let scales = WeightScales::populate(&g, &w, 4, 2).unwrap();
        let rep = check_admissible(&sys, &scales, 1.0, 1.0).unwrap();
        assert!(!rep.conditions[2].pass);
        assert!(rep.conditions[0].pass && rep.conditions[3].pass);
    }

    #[test]
    fn systems_are_deterministic() {
        let w = win(2, 2, 6);
        let g = Weight::step_power(&w, 0.5, 1.0, vec![1.0, 4.0], 1.0).unwrap();
        let scales = WeightScales::populate(&g, &w, 6, 3).unwrap();
        let a = build_admissible_system(&scales, &LevelSchedule::linear(6), 5, DilationParam::unit()).unwrap();
        let b = par::sequential(|| build_admissible_system(&scales, &LevelSchedule::linear(6), 5, DilationParam::unit()).unwrap());
        assert_eq!(a.stages, b.stages);
        assert_eq!(a.selected, b.selected);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn validate_agrees_with_raster(seed in 0u64..10_000, n in 1usize..3, drop in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = win(n, 2, 4);
            let t = random_tiling(&w, 4, 0.45, &mut rng);
            let mut fam = t.cubes().to_vec();
            if drop && fam.len() > 1 {
                let i = rng.gen_range(0..fam.len());
                fam.remove(i);
            } else if drop {
                let c = fam[0].children().next().unwrap();
                fam.push(c);
            }
            prop_assert_eq!(validate_tiling(&fam, &w).valid, raster_tiling(&fam, &w));
        }

        #[test]
        fn selected_cover_properties(seed in 0u64..10_000, n in 1usize..3, k0 in 0u32..2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = win(n, 2, 4);
            let t = random_tiling(&w, 4, 0.5, &mut rng);
            let lambda = DilationParam::new(k0);
            let sel = select_cover(&t, lambda);
            let rep = check_cover_properties(&t, &sel, lambda);
            prop_assert!(rep.all_pass(), "{:?}", rep);
        }
    }
}
