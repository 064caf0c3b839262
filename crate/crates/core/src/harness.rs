//! Configuration-driven verification suites, the function catalog they draw
//! from, and deterministic report export.
//!
//! A run goes through two phases. [`ExperimentConfig::resolve`] turns the
//! TOML description into an [`Experiment`], failing with
//! [`Error::Config`] on anything that does not resolve. Only then does
//! [`run_verification_suite`] compute. Numerical failures inside a suite are
//! recorded as failing properties, so a finished run always yields a
//! report.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::extension::{
    build_partition_g, extend_smooth_to, gradient_mass_sweep, mollify_fn, LimitingExtension, MollifierSpec,
    PartitionFamily,
};
use crate::functions::{
    dyadic_t_sequence, half_space_region, trace_window, BoundaryFunction, weighted_sobolev_norm, ChartFunction, FnHalfSpace,
    GridFunction, HalfSpaceFunction, NormReport, NormTerm, SobolevOptions,
};
use crate::geometry::{DilationParam, RealBox, Window, MAX_DIM, T_EXTENT};
use crate::io::write_file;
use crate::norms::{
    besov_variable_norm, mean_deviation_functional, uniform_candidates, z_estimate, z_functional_unchecked,
    BesovParams, BesovVariant,
};
use crate::par;
use crate::svg::norm_bars_svg;
use crate::tilings::{
    build_admissible_system, build_lj_sequence, check_admissible, check_cover_properties, random_tiling,
    select_cover, LevelSchedule, TilingSystem,
};
use crate::weights::{verify_a1_inequalities, Weight, WeightScales};

// ---------------------------------------------------------------------------
// Suites and configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    Lemma41,
    Admissibility,
    TraceIneq,
    ExtensionIneq,
    SmoothL2,
    Gagliardo,
    A1Checks,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Lemma41,
        Suite::Admissibility,
        Suite::TraceIneq,
        Suite::ExtensionIneq,
        Suite::SmoothL2,
        Suite::Gagliardo,
        Suite::A1Checks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma41 => "lemma4.1",
            Suite::Admissibility => "admissibility",
            Suite::TraceIneq => "trace-ineq",
            Suite::ExtensionIneq => "extension-ineq",
            Suite::SmoothL2 => "smooth-l2",
            Suite::Gagliardo => "gagliardo",
            Suite::A1Checks => "a1-checks",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

fn one_u32() -> u32 {
    1
}

fn one_f64() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub n: usize,
    #[serde(default = "one_u32")]
    pub period: u32,
    pub depth: u32,
}

/// `kind` is one of `constant`, `power`, `step-power`, `cells`.
///
/// * `constant`: `γ = scale`.
/// * `power`: `γ = scale · t^{-alpha}`.
/// * `step-power`: `coefficients` are the step values along `x_1`, repeated
///   with `period` (default 1).
/// * `cells`: `coefficients` are the values on the unit cells, row-major.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub kind: String,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default = "one_f64")]
    pub scale: f64,
}

impl WeightSpec {
    pub fn constant(c: f64) -> Self {
        WeightSpec { kind: "constant".into(), alpha: 0.0, coefficients: vec![], period: None, scale: c }
    }

    pub fn power(alpha: f64) -> Self {
        WeightSpec { kind: "power".into(), alpha, coefficients: vec![], period: None, scale: 1.0 }
    }

    pub fn step_power(alpha: f64, steps: Vec<f64>, period: f64) -> Self {
        WeightSpec { kind: "step-power".into(), alpha, coefficients: steps, period: Some(period), scale: 1.0 }
    }

    pub fn cells(values: Vec<f64>) -> Self {
        WeightSpec { kind: "cells".into(), alpha: 0.0, coefficients: values, period: None, scale: 1.0 }
    }

    pub fn label(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        match self.kind.as_str() {
            "constant" => format!("constant({})", self.scale),
            "power" => format!("power(alpha={} scale={})", self.alpha, self.scale),
            "step-power" => format!(
                "step-power(alpha={} steps={} period={})",
                self.alpha,
                list(&self.coefficients),
                self.period.unwrap_or(1.0)
            ),
            "cells" => format!("cells({})", list(&self.coefficients)),
            other => other.to_string(),
        }
    }

    pub fn build(&self, win: &Window) -> Result<Weight> {
        let cfg = |e: Error| Error::Config(format!("weight {}: {e}", self.label()));
        match self.kind.as_str() {
            "constant" => Weight::constant(win, self.scale).map_err(cfg),
            "power" => Weight::scaled_power(win, self.alpha, self.scale).map_err(cfg),
            "step-power" => Weight::step_power(
                win,
                self.alpha,
                self.scale,
                self.coefficients.clone(),
                self.period.unwrap_or(1.0),
            )
            .map_err(cfg),
            "cells" => Weight::piecewise_cells(win, self.coefficients.clone()).map_err(cfg),
            other => Err(Error::Config(format!(
                "unknown weight kind `{other}` (expected constant, power, step-power or cells)"
            ))),
        }
    }
}

fn default_weights() -> Vec<WeightSpec> {
    vec![WeightSpec::constant(1.0)]
}

/// Catalog names, optionally with a numeric argument (`cos:2`).
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    #[serde(default)]
    pub boundary: Vec<String>,
    #[serde(default)]
    pub half_space: Vec<String>,
}

/// Depth and resolution knobs.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Thinning factor of the admissible construction.
    pub r: u32,
    /// Dilation exponents `k0` (`λ = 2^{-k0}`); the first one is used where
    /// a single system is built.
    pub lambdas: Vec<u32>,
    /// Random tilings in `lemma4.1`.
    pub cases: usize,
    /// Depth of the A1 constant estimate.
    pub a1_depth: u32,
    /// Smoothness order of `smooth-l2`.
    pub order: u32,
    /// Random sample points for the partition sums.
    pub samples: usize,
    /// Random boxes for the exact/quadrature comparison.
    pub boxes: usize,
    /// Also run at `depth + 1` and compare constants.
    pub refine: bool,
    /// Partition levels beyond the data depth in `extension-ineq`.
    pub partition_extra: u32,
    /// Sampling levels beyond `depth` for Besov norms of catalog traces.
    pub chart_extra: u32,
    /// Data levels beyond the series cut-off in `smooth-l2`.
    pub data_extra: u32,
    /// Split probability range of the random tilings.
    pub p_split: [f64; 2],
}

impl Default for Params {
    fn default() -> Self {
        Params {
            r: 5,
            lambdas: vec![0],
            cases: 100,
            a1_depth: 4,
            order: 2,
            samples: 10_000,
            boxes: 1000,
            refine: true,
            partition_extra: 3,
            chart_extra: 6,
            data_extra: 3,
            p_split: [0.3, 0.7],
        }
    }
}

/// Pass thresholds.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Bounds {
    /// Upper bound for measured inequality constants.
    pub constant: f64,
    /// Allowed factor between constants at `depth` and `depth + 1`.
    pub stability: f64,
    /// Relative L1 trace error.
    pub trace_rel: f64,
    /// Polynomial reproduction of the mollifier.
    pub reproduction: f64,
    /// Partition-of-unity defect.
    pub partition: f64,
    /// Gradient-mass constant of the partition functions.
    pub gradient_mass: f64,
    /// Relative exact/quadrature disagreement of box averages.
    pub quadrature: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            constant: 1e3,
            stability: 2.0,
            trace_rel: 1e-2,
            reproduction: 1e-6,
            partition: 1e-10,
            gradient_mass: 1e3,
            quadrature: 1e-6,
        }
    }
}

/// The TOML experiment description.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub suite: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub window: WindowSpec,
    #[serde(default = "default_weights")]
    pub weights: Vec<WeightSpec>,
    #[serde(default)]
    pub functions: FunctionSpec,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub bounds: Bounds,
}

/// A resolved configuration.
#[derive(Clone)]
pub struct Experiment {
    pub suite: Suite,
    pub seed: u64,
    pub window: Window,
    pub weights: Vec<(String, Weight)>,
    pub boundary: Vec<CatalogFn>,
    pub half_space: Vec<CatalogFn>,
    pub lambdas: Vec<DilationParam>,
    pub params: Params,
    pub bounds: Bounds,
}

/// Deepest window any suite may request.
const MAX_RUN_DEPTH: u32 = 20;

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.message().trim().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, &[])
    }

    /// Loads `path` after applying `key=value` overrides such as
    /// `bounds.trace_rel=0.02` or `params.lambdas=[0,1]`. Values are TOML;
    /// anything that does not parse is taken as a string.
    pub fn load_with(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Self::from_toml(text);
        }
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))
    }

    /// Checks every field and resolves weights and catalog names.
    pub fn resolve(&self) -> Result<Experiment> {
        let name = self.suite.as_deref().ok_or_else(|| Error::Config("no suite selected".into()))?;
        let suite = Suite::parse(name).ok_or_else(|| {
            let all: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
            Error::Config(format!("unknown suite `{name}` (expected one of {})", all.join(", ")))
        })?;
        let p = &self.params;
        let extra = match suite {
            Suite::ExtensionIneq => p.partition_extra,
            Suite::SmoothL2 => p.chart_extra.max(p.data_extra),
            _ => 0,
        } + u32::from(p.refine);
        if self.window.depth + extra > MAX_RUN_DEPTH {
            return Err(Error::Config(format!(
                "depth {} plus {extra} extra levels exceeds {MAX_RUN_DEPTH}",
                self.window.depth
            )));
        }
        let window = Window::new(self.window.n, self.window.period, self.window.depth)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.weights.is_empty() {
            return Err(Error::Config("at least one weight is required".into()));
        }
        let weights = self
            .weights
            .iter()
            .map(|w| Ok((w.label(), w.build(&window)?)))
            .collect::<Result<Vec<_>>>()?;
        let boundary = self
            .functions
            .boundary
            .iter()
            .map(|s| catalog_function(s, &window, self.seed))
            .collect::<Result<Vec<_>>>()?;
        let half_space = self
            .functions
            .half_space
            .iter()
            .map(|s| {
                let f = catalog_function(s, &window, self.seed)?;
                if f.half.is_none() {
                    return Err(Error::Config(format!("`{s}` has no half-space form")));
                }
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        if p.r < 5 {
            return Err(Error::Config(format!("r = {} must be at least 5", p.r)));
        }
        if p.lambdas.is_empty() || p.lambdas.iter().any(|&k| k > 4) {
            return Err(Error::Config("lambdas must list dilation exponents in 0..=4".into()));
        }
        if !(1..=3).contains(&p.order) {
            return Err(Error::Config(format!("order {} outside 1..=3", p.order)));
        }
        if p.a1_depth == 0 || p.a1_depth > MAX_RUN_DEPTH {
            return Err(Error::Config(format!("a1_depth {} outside 1..={MAX_RUN_DEPTH}", p.a1_depth)));
        }
        let [lo, hi] = p.p_split;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Config(format!("p_split [{lo}, {hi}] is not a range inside [0, 1]")));
        }
        let b = &self.bounds;
        for (k, v) in [
            ("constant", b.constant),
            ("stability", b.stability),
            ("trace_rel", b.trace_rel),
            ("reproduction", b.reproduction),
            ("partition", b.partition),
            ("gradient_mass", b.gradient_mass),
            ("quadrature", b.quadrature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("bound `{k}` must be positive, got {v}")));
            }
        }
        if b.stability < 1.0 {
            return Err(Error::Config("bound `stability` must be at least 1".into()));
        }
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("suite {} needs {what}", suite.name())))
            }
        };
        match suite {
            Suite::Lemma41 => need(p.cases > 0, "cases > 0")?,
            Suite::TraceIneq => need(!half_space.is_empty(), "functions.half_space")?,
            Suite::ExtensionIneq | Suite::Gagliardo => need(!boundary.is_empty(), "functions.boundary")?,
            Suite::SmoothL2 => {
                need(!half_space.is_empty(), "functions.half_space")?;
                need(window.d_max() >= 2, "depth >= 2")?;
            }
            Suite::Admissibility | Suite::A1Checks => {}
        }
        Ok(Experiment {
            suite,
            seed: self.seed,
            window,
            weights,
            boundary,
            half_space,
            lambdas: p.lambdas.iter().map(|&k| DilationParam::new(k)).collect(),
            params: p.clone(),
            bounds: b.clone(),
        })
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not `key=value`")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields one item");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

// ---------------------------------------------------------------------------
// Function catalog
// ---------------------------------------------------------------------------

type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A boundary function, with a half-space function whose trace it is when
/// one is known.
#[derive(Clone)]
pub struct CatalogFn {
    pub name: String,
    trace: PointFn,
    half: Option<FnHalfSpace>,
}

impl CatalogFn {
    pub fn trace_at(&self, x: &[f64]) -> f64 {
        (self.trace)(x)
    }

    /// Cell-centre samples at `depth`.
    pub fn grid(&self, win: &Window, depth: u32) -> GridFunction {
        GridFunction::from_fn(win, depth, |x| (self.trace)(x))
    }

    /// The same function as chart data, for norms needing finer sampling.
    pub fn chart(&self, n: usize, depth: u32) -> ChartFunction {
        let f = self.trace.clone();
        ChartFunction::new(n, depth, move |x| f(x))
    }

    pub fn half_space(&self) -> Option<&FnHalfSpace> {
        self.half.as_ref()
    }
}

/// Catalog entries as `(name, argument, description)`.
pub const CATALOG: &[(&str, &str, &str)] = &[
    ("const", "", "1; half-space form (1 - t/2)^2"),
    ("cos", "k=1", "cos(2πk x1/M) (1 - t/2)^2"),
    ("cos-prod", "k=1", "Π_i cos(2πk x_i/M) (1 - t/2)^2"),
    ("travel", "k=1", "cos(2πk (x1 + t)/M) (1 - t/2)^2"),
    ("harmonic", "k=1", "cos(2πk x1/M) exp(-2πk t/M)"),
    ("bump", "w=0.25", "exp(-d^2/(w + t)^2), d = x1 - M/2"),
    ("cone", "h=0.5", "max(0, 1 - (|d| + t)/h)"),
    ("cusp", "p=0.5", "(|d| + t)^p"),
    ("log", "", "ln(|d| + t)"),
    ("box", "w=0.5", "indicator of |d| < w; half-space form by the Poisson kernel"),
    ("noise", "j=0", "boundary only: seeded random values on level-3 cells"),
    ("checker", "k=1", "boundary only: (-1)^(Σ floor(2^k x_i))"),
    ("saw", "", "boundary only: x1 - floor(x1)"),
    ("step", "a=0.5", "boundary only: indicator of x1 < aM"),
];

fn eta(t: f64) -> (f64, f64) {
    let u = 1.0 - 0.5 * t;
    (u * u, -u)
}

fn parse_arg(name: &str, arg: Option<&str>, default: f64) -> Result<f64> {
    match arg {
        None => Ok(default),
        Some(a) => a
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Config(format!("`{name}`: bad argument `{a}`"))),
    }
}

fn positive_int(name: &str, v: f64) -> Result<f64> {
    if v >= 1.0 && v.fract() == 0.0 && v <= 64.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{name}`: argument must be an integer in 1..=64, got {v}")))
    }
}

/// Resolves a catalog name such as `cos`, `cos:3` or `noise:2`.
pub fn catalog_function(spec: &str, win: &Window, seed: u64) -> Result<CatalogFn> {
    let (name, arg) = match spec.split_once(':') {
        Some((a, b)) => (a, Some(b)),
        None => (spec, None),
    };
    let n = win.dim();
    let m = win.period() as f64;
    let wrap = move |v: f64| v.rem_euclid(m);
    let dist = move |x: &[f64]| wrap(x[0]) - 0.5 * m;
    let no_arg = |a: Option<&str>| match a {
        None => Ok(()),
        Some(_) => Err(Error::Config(format!("`{name}` takes no argument"))),
    };
    let half = |f: Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
                g: Box<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>| {
        Some(FnHalfSpace::new(n, f).with_gradient(g))
    };
    let (trace, half): (PointFn, Option<FnHalfSpace>) = match name {
        "const" => {
            no_arg(arg)?;
            (
                Arc::new(|_| 1.0),
                half(
                    Box::new(|_, t| eta(t).0),
                    Box::new(move |_, t, g| {
                        g.fill(0.0);
                        g[n] = eta(t).1;
                    }),
                ),
            )
        }
        "cos" | "travel" | "harmonic" => {
            let k = positive_int(spec, parse_arg(spec, arg, 1.0)?)?;
            let w = 2.0 * PI * k / m;
            let trace: PointFn = Arc::new(move |x| (w * x[0]).cos());
            let h = match name {
                "cos" => half(
                    Box::new(move |x, t| (w * x[0]).cos() * eta(t).0),
                    Box::new(move |x, t, g| {
                        let (e, de) = eta(t);
                        g.fill(0.0);
                        g[0] = -w * (w * x[0]).sin() * e;
                        g[n] = (w * x[0]).cos() * de;
                    }),
                ),
                "travel" => half(
                    Box::new(move |x, t| (w * (x[0] + t)).cos() * eta(t).0),
                    Box::new(move |x, t, g| {
                        let (e, de) = eta(t);
                        let (s, c) = (w * (x[0] + t)).sin_cos();
                        g.fill(0.0);
                        g[0] = -w * s * e;
                        g[n] = -w * s * e + c * de;
                    }),
                ),
                _ => half(
                    Box::new(move |x, t| (w * x[0]).cos() * (-w * t).exp()),
                    Box::new(move |x, t, g| {
                        let e = (-w * t).exp();
                        let (s, c) = (w * x[0]).sin_cos();
                        g.fill(0.0);
                        g[0] = -w * s * e;
                        g[n] = -w * c * e;
                    }),
                ),
            };
            (trace, h)
        }
        "cos-prod" => {
            let k = positive_int(spec, parse_arg(spec, arg, 1.0)?)?;
            let w = 2.0 * PI * k / m;
            let prod = move |x: &[f64]| x[..n].iter().map(|&v| (w * v).cos()).product::<f64>();
            (
                Arc::new(prod),
                half(
                    Box::new(move |x, t| prod(x) * eta(t).0),
                    Box::new(move |x, t, g| {
                        let (e, de) = eta(t);
                        for i in 0..n {
                            let others: f64 =
                                (0..n).filter(|&j| j != i).map(|j| (w * x[j]).cos()).product();
                            g[i] = -w * (w * x[i]).sin() * others * e;
                        }
                        g[n] = prod(x) * de;
                    }),
                ),
            )
        }
        "bump" => {
            let width = parse_arg(spec, arg, 0.25)?;
            if !(width > 0.0 && width <= 0.25 * m) {
                return Err(Error::Config(format!("`{spec}`: width must lie in (0, M/4]")));
            }
            let val = move |x: &[f64], t: f64| (-(dist(x) / (width + t)).powi(2)).exp();
            (
                Arc::new(move |x| val(x, 0.0)),
                half(
                    Box::new(val),
                    Box::new(move |x, t, g| {
                        let d = dist(x);
                        let s = width + t;
                        let v = val(x, t);
                        g.fill(0.0);
                        g[0] = -2.0 * d / (s * s) * v;
                        g[n] = 2.0 * d * d / (s * s * s) * v;
                    }),
                ),
            )
        }
        "cone" => {
            let h = parse_arg(spec, arg, 0.5)?;
            if !(h > 0.0 && h <= 0.5 * m) {
                return Err(Error::Config(format!("`{spec}`: height must lie in (0, M/2]")));
            }
            let val = move |x: &[f64], t: f64| (1.0 - (dist(x).abs() + t) / h).max(0.0);
            (
                Arc::new(move |x| val(x, 0.0)),
                half(
                    Box::new(val),
                    Box::new(move |x, t, g| {
                        g.fill(0.0);
                        if val(x, t) > 0.0 {
                            g[0] = -dist(x).signum() / h;
                            g[n] = -1.0 / h;
                        }
                    }),
                ),
            )
        }
        "cusp" => {
            let p = parse_arg(spec, arg, 0.5)?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("`{spec}`: exponent must lie in (0, 1]")));
            }
            (
                Arc::new(move |x| dist(x).abs().powf(p)),
                half(
                    Box::new(move |x, t| (dist(x).abs() + t).powf(p)),
                    Box::new(move |x, t, g| {
                        let d = dist(x);
                        let s = p * (d.abs() + t).powf(p - 1.0);
                        g.fill(0.0);
                        g[0] = d.signum() * s;
                        g[n] = s;
                    }),
                ),
            )
        }
        "log" => {
            no_arg(arg)?;
            (
                Arc::new(move |x| dist(x).abs().ln()),
                half(
                    Box::new(move |x, t| (dist(x).abs() + t).ln()),
                    Box::new(move |x, t, g| {
                        let d = dist(x);
                        let s = 1.0 / (d.abs() + t);
                        g.fill(0.0);
                        g[0] = d.signum() * s;
                        g[n] = s;
                    }),
                ),
            )
        }
        "box" => {
            let w = parse_arg(spec, arg, 0.5)?;
            if !(w > 0.0 && w < 0.5 * m) {
                return Err(Error::Config(format!("`{spec}`: half-width must lie in (0, M/2)")));
            }
            (
                Arc::new(move |x| {
                    let d = dist(x).abs();
                    if d < w {
                        1.0
                    } else if d == w {
                        0.5
                    } else {
                        0.0
                    }
                }),
                half(
                    Box::new(move |x, t| {
                        let d = dist(x);
                        (((d + w) / t).atan() - ((d - w) / t).atan()) / PI
                    }),
                    Box::new(move |x, t, g| {
                        let d = dist(x);
                        let (a, b) = (d + w, d - w);
                        let (ra, rb) = (a * a + t * t, b * b + t * t);
                        g.fill(0.0);
                        g[0] = (t / ra - t / rb) / PI;
                        g[n] = (-a / ra + b / rb) / PI;
                    }),
                ),
            )
        }
        "noise" => {
            let j = parse_arg(spec, arg, 0.0)?;
            if !(j >= 0.0 && j.fract() == 0.0) {
                return Err(Error::Config(format!("`{spec}`: index must be a non-negative integer")));
            }
            let per = (win.period() as usize) << 3;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let vals: Vec<f64> = (0..per.pow(n as u32)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (
                Arc::new(move |x| {
                    let idx = x[..n]
                        .iter()
                        .fold(0usize, |acc, &v| acc * per + ((wrap(v) * 8.0) as usize).min(per - 1));
                    vals[idx]
                }),
                None,
            )
        }
        "checker" => {
            let k = positive_int(spec, parse_arg(spec, arg, 1.0)?)?;
            let s = k.exp2();
            (
                Arc::new(move |x| {
                    let sum: i64 = x[..n].iter().map(|&v| (wrap(v) * s).floor() as i64).sum();
                    if sum % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }),
                None,
            )
        }
        "saw" => {
            no_arg(arg)?;
            (Arc::new(move |x| wrap(x[0]).fract()), None)
        }
        "step" => {
            let a = parse_arg(spec, arg, 0.5)?;
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Config(format!("`{spec}`: fraction must lie in (0, 1)")));
            }
            (Arc::new(move |x| if wrap(x[0]) < a * m { 1.0 } else { 0.0 }), None)
        }
        _ => {
            let names: Vec<&str> = CATALOG.iter().map(|c| c.0).collect();
            return Err(Error::Config(format!("unknown function `{spec}` (catalog: {})", names.join(", "))));
        }
    };
    Ok(CatalogFn { name: spec.to_string(), trace, half })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    AtMost,
    AtLeast,
    /// `1/bound <= measured <= bound`.
    WithinFactor,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::WithinFactor => "within-factor",
        }
    }

    fn holds(self, measured: f64, bound: f64) -> bool {
        measured.is_finite()
            && match self {
                Relation::AtMost => measured <= bound,
                Relation::AtLeast => measured >= bound,
                Relation::WithinFactor => measured <= bound && measured * bound >= 1.0,
            }
    }
}

/// One checked property.
#[derive(Clone, Debug, PartialEq)]
pub struct Property {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub relation: Relation,
    pub bound: f64,
    pub detail: String,
}

impl Property {
    pub fn check(name: impl Into<String>, measured: f64, relation: Relation, bound: f64, detail: impl Into<String>) -> Self {
        Property {
            name: name.into(),
            pass: relation.holds(measured, bound),
            measured,
            relation,
            bound,
            detail: detail.into(),
        }
    }

    /// A property that could not be evaluated.
    pub fn failed(name: impl Into<String>, err: &Error) -> Self {
        Property {
            name: name.into(),
            pass: false,
            measured: f64::NAN,
            relation: Relation::AtMost,
            bound: f64::NAN,
            detail: format!("error: {err}"),
        }
    }
}

/// Outcome of one suite run. Timings are kept apart from the rest so that
/// the text and CSV renderings are byte-deterministic.
#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub window: Window,
    pub properties: Vec<Property>,
    /// `(file stem, CSV body)` detail tables.
    pub tables: Vec<(String, String)>,
    /// `(section, seconds)`.
    pub timings: Vec<(String, f64)>,
}

/// Report renderings accepted by [`export_report`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
    Svg,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "text" | "txt" => Some(ReportFormat::Text),
            "svg" => Some(ReportFormat::Svg),
            _ => None,
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6e}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.pass)
    }

    /// `0` when every property holds, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn to_text(&self) -> String {
        let w = &self.window;
        let mut out = format!(
            "suite {} seed {} window n={} M={} depth={}\n",
            self.suite.name(),
            self.seed,
            w.dim(),
            w.period(),
            w.d_max()
        );
        let width = self.properties.iter().map(|p| p.name.len()).max().unwrap_or(0);
        for p in &self.properties {
            let _ = write!(
                out,
                "{} {:width$}  {} {} {}",
                if p.pass { "PASS" } else { "FAIL" },
                p.name,
                fmt_num(p.measured),
                p.relation.symbol(),
                fmt_num(p.bound)
            );
            if !p.detail.is_empty() {
                let _ = write!(out, "  ({})", p.detail);
            }
            out.push('\n');
        }
        let passed = self.properties.iter().filter(|p| p.pass).count();
        let _ = writeln!(
            out,
            "result {} ({passed}/{} properties)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.properties.len()
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("property,status,measured,relation,bound,detail\n");
        for p in &self.properties {
            let _ = writeln!(
                out,
                "{},{},{:?},{},{:?},{}",
                csv_field(&p.name),
                if p.pass { "pass" } else { "fail" },
                p.measured,
                p.relation.symbol(),
                p.bound,
                csv_field(&p.detail)
            );
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("section,seconds\n");
        for (s, t) in &self.timings {
            let _ = writeln!(out, "{},{t:.3}", csv_field(s));
        }
        out
    }

    /// Bars of `measured / bound` per property.
    pub fn to_svg(&self) -> String {
        let terms = self
            .properties
            .iter()
            .map(|p| {
                let r = match p.relation {
                    Relation::AtMost | Relation::WithinFactor => p.measured / p.bound,
                    Relation::AtLeast => p.bound / p.measured,
                };
                NormTerm { label: p.name.clone(), value: if r.is_finite() { r } else { 0.0 } }
            })
            .collect();
        norm_bars_svg(&NormReport::from_terms(terms, 0, 0.0), self.properties.len())
    }
}

/// Writes `report.<ext>` into `dir` and returns its path. CSV export also
/// writes the detail tables next to it.
pub fn export_report(report: &SuiteReport, dir: &Path, format: ReportFormat) -> Result<PathBuf> {
    let (file, body) = match format {
        ReportFormat::Csv => ("report.csv", report.to_csv()),
        ReportFormat::Text => ("report.txt", report.to_text()),
        ReportFormat::Svg => ("report.svg", report.to_svg()),
    };
    let path = dir.join(file);
    write_file(&path, &body)?;
    if format == ReportFormat::Csv {
        for (stem, csv) in &report.tables {
            write_file(&dir.join(format!("{stem}.csv")), csv)?;
        }
    }
    Ok(path)
}

/// Writes every rendering plus `timings.csv`.
pub fn export_all(report: &SuiteReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for f in [ReportFormat::Text, ReportFormat::Csv, ReportFormat::Svg] {
        out.push(export_report(report, dir, f)?);
    }
    let t = dir.join("timings.csv");
    write_file(&t, &report.timings_csv())?;
    out.push(t);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Suite runners
// ---------------------------------------------------------------------------

struct Run<'a> {
    exp: &'a Experiment,
    properties: Vec<Property>,
    tables: Vec<(String, String)>,
    timings: Vec<(String, f64)>,
}

impl Run<'_> {
    fn timed<T>(&mut self, section: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push((section.into(), start.elapsed().as_secs_f64()));
        out
    }

    /// Runs a block of properties; an error becomes one failing property.
    fn block(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<()>) {
        let start = Instant::now();
        if let Err(e) = f(self) {
            self.properties.push(Property::failed(name, &e));
        }
        self.timings.push((name.to_string(), start.elapsed().as_secs_f64()));
    }

    fn push(&mut self, p: Property) {
        self.properties.push(p);
    }

    fn depths(&self) -> Vec<u32> {
        let d = self.exp.window.d_max();
        if self.exp.params.refine {
            vec![d, d + 1]
        } else {
            vec![d]
        }
    }

    fn scales(&self, w: &Weight, win: &Window, depth: u32) -> Result<WeightScales> {
        WeightScales::populate(w, win, depth, self.exp.params.a1_depth)
    }
}

/// Runs the configured suite.
pub fn run_verification_suite(exp: &Experiment) -> SuiteReport {
    let mut run = Run { exp, properties: Vec::new(), tables: Vec::new(), timings: Vec::new() };
    let start = Instant::now();
    match exp.suite {
        Suite::Lemma41 => lemma41(&mut run),
        Suite::Admissibility => admissibility(&mut run),
        Suite::TraceIneq => trace_ineq(&mut run),
        Suite::ExtensionIneq => extension_ineq(&mut run),
        Suite::SmoothL2 => smooth_l2(&mut run),
        Suite::Gagliardo => gagliardo(&mut run),
        Suite::A1Checks => a1_checks(&mut run),
    }
    run.timings.push(("total".into(), start.elapsed().as_secs_f64()));
    SuiteReport {
        suite: exp.suite,
        seed: exp.seed,
        window: exp.window,
        properties: run.properties,
        tables: run.tables,
        timings: run.timings,
    }
}

fn refinement_property(name: String, coarse: f64, fine: f64, factor: f64, depth: u32) -> Property {
    Property::check(
        name,
        fine / coarse,
        Relation::WithinFactor,
        factor,
        format!("C(depth {depth}) = {coarse:.6e}, C(depth {}) = {fine:.6e}", depth + 1),
    )
}

fn lemma41(run: &mut Run) {
    let exp = run.exp;
    let win = exp.window;
    let [lo, hi] = exp.params.p_split;
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed);
    let cases: Vec<_> = (0..exp.params.cases)
        .map(|i| {
            let lambda = exp.lambdas[i % exp.lambdas.len()];
            let p = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            (random_tiling(&win, win.d_max(), p, &mut rng), lambda)
        })
        .collect();
    let reports = run.timed("select and check covers", || {
        par::map_slice(&cases, |(t, lambda)| {
            let sel = select_cover(t, *lambda);
            (sel.len(), check_cover_properties(t, &sel, *lambda))
        })
    });
    let mut table = String::from("case,k0,cubes,selected,covering,max_multiplicity,min_overlap_ratio,redundant\n");
    for (i, ((t, lambda), (sel, r))) in cases.iter().zip(&reports).enumerate() {
        let _ = writeln!(
            table,
            "{i},{},{},{sel},{},{},{:?},{}",
            lambda.k0,
            t.len(),
            r.covering,
            r.max_multiplicity,
            r.min_overlap_ratio,
            r.redundant.len()
        );
    }
    let count = cases.len();
    let uncovered = reports.iter().filter(|r| !r.1.covering).count();
    let mult = reports.iter().map(|r| r.1.max_multiplicity).max().unwrap_or(0);
    let bound = ((win.dim() + 1) << win.dim()) as f64;
    let overlap = reports.iter().map(|r| r.1.min_overlap_ratio).fold(f64::INFINITY, f64::min);
    let redundant: usize = reports.iter().map(|r| r.1.redundant.len()).sum();
    let d = format!("{count} tilings");
    run.push(Property::check("covering (uncovered tilings)", uncovered as f64, Relation::AtMost, 0.0, d.clone()));
    run.push(Property::check("multiplicity", mult as f64, Relation::AtMost, bound, d.clone()));
    // A single-cube cover has no intersecting pairs.
    let overlap = if overlap.is_finite() { overlap } else { f64::MAX };
    run.push(Property::check("pairwise overlap ratio", overlap, Relation::AtLeast, 1.0, d.clone()));
    run.push(Property::check("non-redundancy (redundant cubes)", redundant as f64, Relation::AtMost, 0.0, d));
    run.tables.push(("covers".into(), table));
}

fn admissibility(run: &mut Run) {
    let exp = run.exp;
    let win = exp.window;
    let depth = win.d_max();
    let mut table = String::from("weight,schedule,k0,stages,condition,worst,bound,pass\n");
    for (wi, (label, w)) in exp.weights.iter().enumerate() {
        let name = format!("w{wi} {label}");
        run.block(&name.clone(), |run| {
            let scales = run.scales(w, &win, depth)?;
            let q = scales.q_construction();
            let (c1, c2) = (q.powi(3), q.powi(5));
            let mut schedules = vec![("linear".to_string(), LevelSchedule::linear(depth))];
            let opts = SobolevOptions::for_depth(depth);
            for f in &exp.half_space {
                let h = f.half_space().expect("resolved half-space entry");
                schedules.push((f.name.clone(), build_lj_sequence(h, w, &win, depth as usize, &opts)?));
            }
            // (worst/bound, worst, bound, pass) per condition
            let mut agg = [(0.0f64, 0.0f64, 0.0f64, true); 4];
            let mut systems = 0;
            for (sname, sched) in &schedules {
                for &lambda in &exp.lambdas {
                    let sys = build_admissible_system(&scales, sched, exp.params.r, lambda)?;
                    let rep = check_admissible(&sys, &scales, c1, c2)?;
                    systems += 1;
                    for c in &rep.conditions {
                        let a = &mut agg[c.condition as usize - 1];
                        let rel = c.worst / c.bound;
                        if rel >= a.0 || systems == 1 {
                            a.0 = rel;
                            a.1 = c.worst;
                            a.2 = c.bound;
                        }
                        a.3 &= c.pass;
                        let _ = writeln!(
                            table,
                            "{wi},{sname},{},{},{},{:?},{:?},{}",
                            lambda.k0,
                            sys.stage_count(),
                            c.condition,
                            c.worst,
                            c.bound,
                            c.pass
                        );
                    }
                }
            }
            for (i, a) in agg.iter().enumerate() {
                let mut p = Property::check(
                    format!("{name}: condition {}", i + 1),
                    a.1,
                    Relation::AtMost,
                    a.2,
                    format!("{systems} systems; q = {q:.6e}"),
                );
                p.pass = a.3;
                run.push(p);
            }
            Ok(())
        });
    }
    run.tables.push(("admissibility".into(), table));
}

fn trace_rel_error<F: HalfSpaceFunction + ?Sized>(f: &F, phi: &GridFunction, t_seq: &[f64]) -> Result<f64> {
    let (tr, _) = trace_window(f, &phi.window(), t_seq, phi.depth())?;
    let diff = tr.combine(1.0, phi, -1.0)?;
    Ok(diff.l1_norm() / phi.l1_norm().max(f64::MIN_POSITIVE))
}

fn trace_ineq(run: &mut Run) {
    let exp = run.exp;
    let base = exp.window;
    let depths = run.depths();
    let lambda = exp.lambdas[0];
    let mut table = String::from("weight,depth,function,sobolev_norm,trace_functional,ratio,stages\n");
    for (wi, (label, w)) in exp.weights.iter().enumerate() {
        let name = format!("w{wi} {label}");
        run.block(&name.clone(), |run| {
            let mut constants = Vec::new();
            let mut worst_trace = 0.0f64;
            for &d in &depths {
                let win = base.with_depth(d)?;
                let scales = run.scales(w, &win, d)?;
                let opts = SobolevOptions::for_depth(d);
                let region = half_space_region(&win);
                let mut c = 0.0f64;
                for f in &exp.half_space {
                    let h = f.half_space().expect("resolved half-space entry");
                    let norm = weighted_sobolev_norm(h, w, &region, 1, &opts)?.value;
                    let sched = build_lj_sequence(h, w, &win, d as usize, &opts)?;
                    let sys = build_admissible_system(&scales, &sched, exp.params.r, lambda)?;
                    let phi = f.grid(&win, d);
                    let lhs = mean_deviation_functional(&phi, &sys, &scales)?.value;
                    let ratio = lhs / norm;
                    c = c.max(ratio);
                    let _ = writeln!(
                        table,
                        "{wi},{d},{},{norm:?},{lhs:?},{ratio:?},{}",
                        f.name,
                        sys.stage_count()
                    );
                    if d == depths[0] {
                        worst_trace = worst_trace.max(trace_rel_error(h, &phi, &dyadic_t_sequence(d + 4, d + 12))?);
                    }
                }
                constants.push(c);
            }
            let d0 = depths[0];
            run.push(Property::check(
                format!("{name}: trace constant"),
                constants[0],
                Relation::AtMost,
                exp.bounds.constant,
                format!("max over {} functions at depth {d0}", exp.half_space.len()),
            ));
            if constants.len() > 1 {
                run.push(refinement_property(
                    format!("{name}: trace constant refinement"),
                    constants[0],
                    constants[1],
                    exp.bounds.stability,
                    d0,
                ));
            }
            run.push(Property::check(
                format!("{name}: known traces"),
                worst_trace,
                Relation::AtMost,
                exp.bounds.trace_rel,
                "relative L1 error of the computed trace",
            ));
            Ok(())
        });
    }
    run.tables.push(("trace_ineq".into(), table));
}

/// Sample points in `window × (0, T)`.
fn sample_points(win: &Window, count: usize, seed: u64) -> Vec<([f64; MAX_DIM], f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = win.period() as f64;
    (0..count)
        .map(|_| {
            let mut x = [0.0; MAX_DIM];
            for v in x.iter_mut().take(win.dim()) {
                *v = rng.gen_range(0.0..m);
            }
            (x, rng.gen_range(0.0..T_EXTENT))
        })
        .collect()
}

fn partition_checks(run: &mut Run, name: &str, part: &PartitionFamily) {
    let exp = run.exp;
    let win = *part.window();
    let n = win.dim();
    let pts = sample_points(&win, exp.params.samples, exp.seed);
    let defects = run.timed(format!("{name}: partition sums"), || {
        par::map_slice(&pts, |(x, t)| {
            let theta = (part.theta_sum(&x[..n], *t) - 1.0).abs();
            let g = part.g_values(&x[..n], *t);
            let sum: f64 = g.iter().map(|v| v.1).sum();
            let positive = g.iter().filter(|v| v.1 > 0.0).count();
            (theta, (sum - 1.0).abs(), positive)
        })
    });
    let theta = defects.iter().map(|d| d.0).fold(0.0, f64::max);
    let g = defects.iter().map(|d| d.1).fold(0.0, f64::max);
    let mult = defects.iter().map(|d| d.2).max().unwrap_or(0);
    let d = format!("{} points", pts.len());
    run.push(Property::check(format!("{name}: sum of Theta"), theta, Relation::AtMost, exp.bounds.partition, d.clone()));
    run.push(Property::check(format!("{name}: sum of g"), g, Relation::AtMost, exp.bounds.partition, d.clone()));
    run.push(Property::check(
        format!("{name}: g multiplicity"),
        mult as f64,
        Relation::AtMost,
        2.0 * 3f64.powi(n as i32),
        d,
    ));
    let ic = part.index_check();
    run.push(Property::check(
        format!("{name}: E-sets partition the index range"),
        (ic.uncovered + ic.multiply_owned) as f64,
        Relation::AtMost,
        0.0,
        format!("{} elements through level {}", ic.elements, ic.last_level),
    ));
}

fn extension_ineq(run: &mut Run) {
    let exp = run.exp;
    let base = exp.window;
    let depths = run.depths();
    let extra = exp.params.partition_extra;
    let mut table = String::from("weight,depth,partition_level,function,sobolev_norm,z_functional,ratio,trace_rel_error\n");
    let mut sweep_table = String::from("weight,system,stage,level,index,lhs,rhs,ratio\n");
    for (wi, (label, w)) in exp.weights.iter().enumerate() {
        let name = format!("w{wi} {label}");
        run.block(&name.clone(), |run| {
            let mut constants = Vec::new();
            let mut worst_trace = 0.0f64;
            let mut mass = 0.0f64;
            for &d in &depths {
                let l = d + extra;
                let win = base.with_depth(l)?;
                let scales = run.scales(w, &win, l)?;
                let levels: Vec<u32> = (0..=l).collect();
                let sys = TilingSystem::uniform(&win, &levels, DilationParam::unit())
                    .with_constants(scales.q_construction(), exp.params.r);
                let part = build_partition_g(&sys, &scales)?;
                if d == depths[0] {
                    partition_checks(run, &format!("{name}: uniform system"), &part);
                }
                let opts = SobolevOptions::for_depth(l);
                let region = half_space_region(&win);
                let t_seq = dyadic_t_sequence(l + 1, l + 4);
                let mut c = 0.0f64;
                for f in &exp.boundary {
                    let phi = f.grid(&win, d);
                    let ext = LimitingExtension::from_partition(part.clone(), &phi)?;
                    let norm = weighted_sobolev_norm(&ext, w, &region, 1, &opts)?.value;
                    let z = z_functional_unchecked(&phi, &sys, &scales)?.value;
                    let ratio = norm / z;
                    c = c.max(ratio);
                    let err = trace_rel_error(&ext, &phi, &t_seq)?;
                    worst_trace = worst_trace.max(err);
                    let _ = writeln!(table, "{wi},{d},{l},{},{norm:?},{z:?},{ratio:?},{err:?}", f.name);
                }
                constants.push(c);
                if d == depths[0] {
                    let rep = run.timed(format!("{name}: gradient mass (uniform)"), || {
                        gradient_mass_sweep(&part, w, &scales, &opts)
                    })?;
                    mass = mass.max(rep.constant);
                    for row in &rep.rows {
                        let idx: Vec<String> = row.cube.index().iter().map(|v| v.to_string()).collect();
                        let _ = writeln!(
                            sweep_table,
                            "{wi},uniform,{},{},{},{:?},{:?},{:?}",
                            row.stage,
                            row.cube.level,
                            idx.join(" "),
                            row.lhs,
                            row.rhs,
                            row.ratio()
                        );
                    }
                }
            }
            // Systems built from the half-space functions, at the base depth.
            let d = depths[0];
            let win = base.with_depth(d)?;
            let scales = run.scales(w, &win, d)?;
            let opts = SobolevOptions::for_depth(d);
            for f in &exp.half_space {
                let h = f.half_space().expect("resolved half-space entry");
                let sched = build_lj_sequence(h, w, &win, d as usize, &opts)?;
                let sys = build_admissible_system(&scales, &sched, exp.params.r, DilationParam::unit())?;
                let part = build_partition_g(&sys, &scales)?;
                let rep = gradient_mass_sweep(&part, w, &scales, &opts)?;
                mass = mass.max(rep.constant);
                for row in &rep.rows {
                    let idx: Vec<String> = row.cube.index().iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(
                        sweep_table,
                        "{wi},{},{},{},{},{:?},{:?},{:?}",
                        f.name,
                        row.stage,
                        row.cube.level,
                        idx.join(" "),
                        row.lhs,
                        row.rhs,
                        row.ratio()
                    );
                }
            }
            let d0 = depths[0];
            run.push(Property::check(
                format!("{name}: extension constant"),
                constants[0],
                Relation::AtMost,
                exp.bounds.constant,
                format!("max over {} functions; data depth {d0}, partition level {}", exp.boundary.len(), d0 + extra),
            ));
            if constants.len() > 1 {
                run.push(refinement_property(
                    format!("{name}: extension constant refinement"),
                    constants[0],
                    constants[1],
                    exp.bounds.stability,
                    d0,
                ));
            }
            run.push(Property::check(
                format!("{name}: trace recovery"),
                worst_trace,
                Relation::AtMost,
                exp.bounds.trace_rel,
                "relative L1 error, all depths",
            ));
            run.push(Property::check(
                format!("{name}: gradient mass constant"),
                mass,
                Relation::AtMost,
                exp.bounds.gradient_mass,
                format!("all atoms of {} systems", 1 + exp.half_space.len()),
            ));
            Ok(())
        });
    }
    run.tables.push(("extension_ineq".into(), table));
    run.tables.push(("gradient_mass".into(), sweep_table));
}

/// Largest deviation of the mollifier from random affine functions.
fn affine_reproduction(spec: &MollifierSpec, win: &Window, seed: u64) -> f64 {
    let n = win.dim();
    let m = win.period() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let cases: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..8)
        .map(|i| {
            let coef: Vec<f64> = (0..=n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..m)).collect();
            (coef, x, 0.5f64.powi(i % 4 + 1))
        })
        .collect();
    par::map_slice(&cases, |(coef, x, eps)| {
        let g = |y: &[f64]| coef[0] + (0..n).map(|i| coef[i + 1] * y[i]).sum::<f64>();
        (mollify_fn(spec, &g, x, *eps) - g(x)).abs()
    })
    .into_iter()
    .fold(0.0, f64::max)
}

fn smooth_l2(run: &mut Run) {
    let exp = run.exp;
    let base = exp.window;
    let n = base.dim();
    let depths = run.depths();
    let l = exp.params.order;
    let mut table = String::from("weight,depth,direction,function,sobolev_norm,besov_norm,ratio,trace_rel_error\n");
    let spec = match MollifierSpec::new(n, l) {
        Ok(s) => s,
        Err(e) => {
            run.push(Property::failed("mollifier", &e));
            return;
        }
    };
    let rep = run.timed("affine reproduction", || affine_reproduction(&spec, &base, exp.seed));
    run.push(Property::check(
        "mollifier reproduces affine functions",
        rep,
        Relation::AtMost,
        exp.bounds.reproduction,
        format!("l = {l}, 8 random affine functions"),
    ));
    let mut corpus: Vec<&CatalogFn> = exp.half_space.iter().collect();
    corpus.extend(exp.boundary.iter());
    for (wi, (label, w)) in exp.weights.iter().enumerate() {
        let name = format!("w{wi} {label}");
        run.block(&name.clone(), |_run| {
            let mut trace_c = Vec::new();
            let mut ext_c = Vec::new();
            let mut worst_trace = 0.0f64;
            for &d in &depths {
                let data_depth = d + exp.params.data_extra;
                let win = base.with_depth(data_depth.max(d + exp.params.chart_extra))?;
                let scales = WeightScales::populate(w, &win, d, exp.params.a1_depth)?;
                let bp = BesovParams::new(l, d, BesovVariant::Delta)?;
                let opts = SobolevOptions::for_depth(d);
                let region = half_space_region(&win);
                let besov = |f: &CatalogFn| -> Result<f64> {
                    Ok(besov_variable_norm(&f.chart(n, d + exp.params.chart_extra), &scales, &bp)?.value)
                };
                let mut ct = 0.0f64;
                for f in &exp.half_space {
                    let h = f.half_space().expect("resolved half-space entry");
                    let norm = weighted_sobolev_norm(h, w, &region, l, &opts)?.value;
                    let b = besov(f)?;
                    ct = ct.max(b / norm);
                    let _ = writeln!(table, "{wi},{d},trace,{},{norm:?},{b:?},{:?},", f.name, b / norm);
                }
                let mut ce = 0.0f64;
                for f in &corpus {
                    let phi = f.grid(&win, data_depth);
                    let ext = extend_smooth_to(&phi, &spec, d)?;
                    let norm = weighted_sobolev_norm(&ext, w, &region, l, &opts)?.value;
                    let b = besov(f)?;
                    ce = ce.max(norm / b);
                    let err = trace_rel_error(&ext, &phi, &dyadic_t_sequence(d + 2, d + 6))?;
                    worst_trace = worst_trace.max(err);
                    let _ = writeln!(table, "{wi},{d},extension,{},{norm:?},{b:?},{:?},{err:?}", f.name, norm / b);
                }
                trace_c.push(ct);
                ext_c.push(ce);
            }
            let d0 = depths[0];
            for (dir, c) in [("trace", &trace_c), ("extension", &ext_c)] {
                _run.push(Property::check(
                    format!("{name}: {dir} constant"),
                    c[0],
                    Relation::AtMost,
                    exp.bounds.constant,
                    format!("order {l}, depth {d0}"),
                ));
                if c.len() > 1 {
                    _run.push(refinement_property(
                        format!("{name}: {dir} constant refinement"),
                        c[0],
                        c[1],
                        exp.bounds.stability,
                        d0,
                    ));
                }
            }
            _run.push(Property::check(
                format!("{name}: Tr(Ext phi) = phi"),
                worst_trace,
                Relation::AtMost,
                exp.bounds.trace_rel,
                "relative L1 error, all depths",
            ));
            Ok(())
        });
    }
    run.tables.push(("smooth_l2".into(), table));
}

fn gagliardo(run: &mut Run) {
    let exp = run.exp;
    let win = exp.window;
    let d = win.d_max();
    let mut table = String::from("weight,function,l1_norm,z_estimate,besov_l1,z_over_l1\n");
    for (wi, (label, w)) in exp.weights.iter().enumerate() {
        let name = format!("w{wi} {label}");
        run.block(&name.clone(), |run| {
            let scales = run.scales(w, &win, d)?;
            let cands = uniform_candidates(&scales, d, exp.lambdas[0], exp.params.r);
            let bp = BesovParams::new(1, d, BesovVariant::Delta)?;
            let mut c = 0.0f64;
            let mut exceed = 0usize;
            for f in &exp.boundary {
                let phi = f.grid(&win, d);
                let l1 = phi.l1_norm();
                let z = z_estimate(&phi, &cands, &scales)?.value;
                let b = besov_variable_norm(&phi, &scales, &bp)?.value;
                c = c.max(z / l1);
                if b > z * (1.0 + 1e-9) {
                    exceed += 1;
                }
                let _ = writeln!(table, "{wi},{},{l1:?},{z:?},{b:?},{:?}", f.name, z / l1);
            }
            run.push(Property::check(
                format!("{name}: z <= C L1"),
                c,
                Relation::AtMost,
                exp.bounds.constant,
                format!("max over {} functions, {} candidate systems", exp.boundary.len(), cands.len()),
            ));
            run.push(Property::check(
                format!("{name}: Besov l=1 exceeds z"),
                exceed as f64,
                Relation::AtLeast,
                1.0,
                "number of functions with strict excess",
            ));
            Ok(())
        });
    }
    run.tables.push(("gagliardo".into(), table));
}

/// Random boxes in `window × (0, T)`, a quarter of them touching `t = 0`.
fn random_boxes(win: &Window, count: usize, seed: u64) -> Vec<RealBox> {
    let n = win.dim();
    let m = win.period() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    (0..count)
        .map(|i| {
            let mut lo = vec![0.0; n + 1];
            let mut hi = vec![0.0; n + 1];
            for a in 0..n {
                lo[a] = rng.gen_range(0.0..m);
                hi[a] = lo[a] + rng.gen_range(0.01..m.min(1.5));
            }
            lo[n] = if i % 4 == 0 { 0.0 } else { rng.gen_range(0.0..1.5) };
            hi[n] = lo[n] + rng.gen_range(0.01..0.5);
            RealBox::new(&lo, &hi)
        })
        .collect()
}

fn a1_checks(run: &mut Run) {
    let exp = run.exp;
    let win = exp.window;
    let d = win.d_max();
    for (wi, (label, w)) in exp.weights.iter().enumerate() {
        let name = format!("w{wi} {label}");
        run.block(&name.clone(), |run| {
            let rep = verify_a1_inequalities(w, &win, d)?;
            for c in &rep.checks {
                let mut p = Property::check(
                    format!("{name}: {}", c.name),
                    c.worst,
                    Relation::AtMost,
                    c.bound,
                    format!("C_gamma = {:.6e}", rep.c_gamma),
                );
                p.pass = c.pass;
                run.push(p);
            }
            if w.has_exact_box_integral() && exp.params.boxes > 0 {
                let boxes = random_boxes(&win, exp.params.boxes, exp.seed.wrapping_add(wi as u64));
                let errs = par::map_slice(&boxes, |b| -> Result<f64> {
                    let exact = w.exact_integral(b).expect("closed form");
                    let quad = w.quadrature_integral(b)?;
                    Ok((exact - quad).abs() / exact.abs().max(f64::MIN_POSITIVE))
                });
                let worst = errs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
                run.push(Property::check(
                    format!("{name}: exact vs quadrature averages"),
                    worst,
                    Relation::AtMost,
                    exp.bounds.quadrature,
                    format!("{} random boxes, relative", boxes.len()),
                ));
            }
            Ok(())
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    #[test]
    fn defaults_and_resolution() {
        let c = cfg("suite = \"lemma4.1\"\nseed = 7\n[window]\nn = 1\nperiod = 4\ndepth = 6\n");
        assert_eq!(c.params.r, 5);
        assert_eq!(c.params.lambdas, vec![0]);
        let e = c.resolve().unwrap();
        assert_eq!(e.suite, Suite::Lemma41);
        assert_eq!(e.weights.len(), 1);
    }

    #[test]
    fn overrides_replace_fields() {
        let base = "suite = \"lemma4.1\"\n[window]\nn = 1\ndepth = 3\n";
        let c = ExperimentConfig::from_toml_with(
            base,
            &["params.lambdas=[0, 1]".into(), "bounds.trace_rel=0.5".into(), "suite=gagliardo".into()],
        )
        .unwrap();
        assert_eq!(c.params.lambdas, vec![0, 1]);
        assert_eq!(c.bounds.trace_rel, 0.5);
        assert_eq!(c.suite.as_deref(), Some("gagliardo"));
        assert!(ExperimentConfig::from_toml_with(base, &["params.bogus=1".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with(base, &["noequals".into()]).is_err());
    }

    #[test]
    fn config_errors_are_reported() {
        let bad = [
            "[window]\nn = 1\ndepth = 3\n",
            "suite = \"nope\"\n[window]\nn = 1\ndepth = 3\n",
            "suite = \"gagliardo\"\n[window]\nn = 1\ndepth = 3\n[functions]\nboundary = [\"missing\"]\n",
            "suite = \"trace-ineq\"\n[window]\nn = 1\ndepth = 3\n[functions]\nhalf_space = [\"noise\"]\n",
            "suite = \"a1-checks\"\n[window]\nn = 1\ndepth = 3\n[[weights]]\nkind = \"power\"\nalpha = 1.5\n",
            "suite = \"a1-checks\"\n[window]\nn = 1\ndepth = 3\n[params]\nr = 2\n",
            "suite = \"a1-checks\"\n[window]\nn = 9\ndepth = 3\n",
        ];
        for b in bad {
            match ExperimentConfig::from_toml(b).and_then(|c| c.resolve()) {
                Err(Error::Config(_)) => {}
                Err(e) => panic!("{b}: unexpected {e}"),
                Ok(_) => panic!("{b}: accepted"),
            }
        }
        assert!(matches!(ExperimentConfig::from_toml("[window]\nn = 1\ndepth = 3\nbogus = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn catalog_traces_match_half_space_forms() {
        let win = Window::new(1, 2, 6).unwrap();
        for (name, _, _) in CATALOG {
            let f = catalog_function(name, &win, 1).unwrap();
            let Some(h) = f.half_space() else { continue };
            for &x in &[0.13, 0.77, 1.31, 1.9] {
                let want = f.trace_at(&[x]);
                let got = h.value(&[x], 1e-9);
                assert!((want - got).abs() < 1e-6 * want.abs().max(1.0), "{name} at {x}: {want} vs {got}");
                // gradient against central differences
                let g = [h.analytic(&[1, 0], &[x], 0.3).unwrap(), h.analytic(&[0, 1], &[x], 0.3).unwrap()];
                let e = 1e-6;
                let fx = (h.value(&[x + e], 0.3) - h.value(&[x - e], 0.3)) / (2.0 * e);
                let ft = (h.value(&[x], 0.3 + e) - h.value(&[x], 0.3 - e)) / (2.0 * e);
                assert!((g[0] - fx).abs() < 1e-5 * fx.abs().max(1.0), "{name} d/dx at {x}");
                assert!((g[1] - ft).abs() < 1e-5 * ft.abs().max(1.0), "{name} d/dt at {x}");
            }
        }
        let win2 = Window::new(2, 1, 4).unwrap();
        let f = catalog_function("cos-prod:2", &win2, 0).unwrap();
        let h = f.half_space().unwrap();
        let x = [0.2, 0.7];
        let e = 1e-6;
        let fy = (h.value(&[0.2, 0.7 + e], 0.5) - h.value(&[0.2, 0.7 - e], 0.5)) / (2.0 * e);
        assert!((h.analytic(&[0, 1, 0], &x, 0.5).unwrap() - fy).abs() < 1e-6);
    }

    #[test]
    fn noise_depends_on_seed_only() {
        let win = Window::new(1, 1, 4).unwrap();
        let a = catalog_function("noise:3", &win, 9).unwrap().grid(&win, 4);
        let b = catalog_function("noise:3", &win, 9).unwrap().grid(&win, 4);
        let c = catalog_function("noise:3", &win, 10).unwrap().grid(&win, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn lemma41_suite_is_deterministic() {
        let text = "suite = \"lemma4.1\"\nseed = 7\n[window]\nn = 1\nperiod = 4\ndepth = 6\n[params]\ncases = 20\nlambdas = [0, 1]\n";
        let e = cfg(text).resolve().unwrap();
        let a = run_verification_suite(&e);
        let b = run_verification_suite(&e);
        assert!(a.passed(), "{}", a.to_text());
        assert_eq!(a.properties.len(), 4);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.tables, b.tables);
        assert_eq!(a.exit_code(), 0);
    }

    #[test]
    fn a1_checks_constant_weight() {
        let e = cfg("suite = \"a1-checks\"\n[window]\nn = 1\nperiod = 2\ndepth = 3\n[params]\nboxes = 50\n")
            .resolve()
            .unwrap();
        let r = run_verification_suite(&e);
        assert!(r.passed(), "{}", r.to_text());
        let quad = r.properties.iter().find(|p| p.name.ends_with("exact vs quadrature averages")).unwrap();
        assert!(quad.measured < 1e-12, "{quad:?}");
    }

    #[test]
    fn failing_property_sets_exit_code() {
        let mut e = cfg("suite = \"gagliardo\"\n[window]\nn = 1\nperiod = 1\ndepth = 3\n[functions]\nboundary = [\"const\"]\n")
            .resolve()
            .unwrap();
        let r = run_verification_suite(&e);
        // a constant has no excess of the Besov expression over z
        assert_eq!(r.exit_code(), 1, "{}", r.to_text());
        e.boundary.push(catalog_function("step", &e.window, 0).unwrap());
        assert_eq!(run_verification_suite(&e).exit_code(), 0);
    }

    #[test]
    fn export_writes_files() {
        let e = cfg("suite = \"lemma4.1\"\n[window]\nn = 1\nperiod = 2\ndepth = 3\n[params]\ncases = 3\n")
            .resolve()
            .unwrap();
        let r = run_verification_suite(&e);
        let dir = std::env::temp_dir().join(format!("tracelab-export-{}", std::process::id()));
        let files = export_all(&r, &dir).unwrap();
        assert_eq!(files.len(), 4);
        assert!(dir.join("covers.csv").exists());
        let csv = std::fs::read_to_string(dir.join("report.csv")).unwrap();
        assert!(csv.starts_with("property,status,measured,relation,bound,detail\n"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
