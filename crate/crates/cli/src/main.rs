//! `trace-lab`: runs verification suites and single computations from a TOML
//! experiment description.
//!
//! Exit codes: 0 when every property holds, 1 when one fails, 2 on a
//! configuration or input error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracelab::extension::{extend_limiting, extend_smooth_to, MollifierSpec};
use tracelab::functions::{
    half_space_region, weighted_sobolev_norm, NormReport, SampledHalfSpace, SobolevOptions,
};
use tracelab::harness::{
    catalog_function, export_all, export_report, run_verification_suite, Experiment, ExperimentConfig,
    ReportFormat, Suite, CATALOG,
};
use tracelab::io::{parse_grid, parse_system, read_file, write_file, write_half_space, write_system};
use tracelab::norms::{
    besov_variable_norm, mean_deviation_functional, uniform_candidates, z_estimate, z_functional, BesovParams, BesovVariant,
};
use tracelab::svg::{norm_bars_svg, system_svg};
use tracelab::tilings::{build_admissible_system, build_lj_sequence, LevelSchedule};
use tracelab::weights::WeightScales;

#[derive(Parser)]
#[command(name = "trace-lab", version, about = "Verification suites for weighted trace and extension operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the window depth.
    #[arg(long)]
    depth: Option<u32>,
    /// Overrides the thinning factor r.
    #[arg(long)]
    r: Option<u32>,
    /// Overrides the dilation exponents (lambda = 2^-k0), comma separated.
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<u32>,
    /// Further `key=value` overrides, e.g. `bounds.trace_rel=0.02`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SuiteArgs {
    #[command(flatten)]
    common: Common,
    /// Report rendering; all renderings are written when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
    Svg,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormKind {
    /// Weighted Sobolev norm of the half-space form.
    Sobolev,
    /// Besov-type norm of the trace.
    Besov,
    /// Minimum of the Z functional over uniform candidate systems.
    Z,
    /// Mean-deviation functional on the system built for the function.
    MeanDeviation,
}

#[derive(Subcommand)]
enum Command {
    #[command(name = "lemma4.1")]
    Lemma41(SuiteArgs),
    Admissibility(SuiteArgs),
    TraceIneq(SuiteArgs),
    ExtensionIneq(SuiteArgs),
    SmoothL2(SuiteArgs),
    Gagliardo(SuiteArgs),
    A1Checks(SuiteArgs),
    /// Builds the admissible system for one half-space function (or the
    /// linear schedule) and writes it as text and SVG.
    Tile {
        #[command(flatten)]
        common: Common,
        /// Catalog name; defaults to the first `functions.half_space` entry.
        #[arg(long)]
        function: Option<String>,
        /// Index into the configured weights.
        #[arg(long, default_value_t = 0)]
        weight: usize,
    },
    /// Computes one norm and writes its terms as CSV and SVG.
    Norm {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "sobolev")]
        kind: NormKind,
        /// Catalog name.
        #[arg(long)]
        function: String,
        /// Smoothness order.
        #[arg(long, default_value_t = 1)]
        order: u32,
        #[arg(long, default_value_t = 0)]
        weight: usize,
    },
    /// Extends boundary samples into the half space and writes the samples.
    Extend {
        /// Boundary samples (`n M d` header, one value per line).
        #[arg(long)]
        phi: PathBuf,
        /// Tiling system file; selects the partition-of-unity extension.
        /// Without it the mollifier extension of order `--order` is used.
        #[arg(long)]
        system: Option<PathBuf>,
        /// Weight description; the constant weight 1 when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: u32,
        /// Time levels of the output samples.
        #[arg(long, default_value_t = 6)]
        t_depth: u32,
        #[arg(long, default_value_t = 0)]
        weight: usize,
    },
    /// Lists the function catalog.
    Catalog,
}

/// Separates configuration problems (exit 2) from the rest.
struct ConfigError(anyhow::Error);

fn config_err(e: impl Into<anyhow::Error>) -> ConfigError {
    ConfigError(e.into())
}

enum Outcome {
    Pass,
    Fail,
    Config(anyhow::Error),
    Failed(anyhow::Error),
}

fn load(common: &Common, suite: Option<Suite>) -> Result<Experiment, ConfigError> {
    let mut cfg = ExperimentConfig::load_with(&common.config, &common.set).map_err(config_err)?;
    if let Some(s) = suite {
        cfg.suite = Some(s.name().to_string());
    } else if cfg.suite.is_none() {
        // Commands other than the suites only use the window, weights and
        // functions; any suite name resolves them.
        cfg.suite = Some(Suite::A1Checks.name().to_string());
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(d) = common.depth {
        cfg.window.depth = d;
    }
    if let Some(r) = common.r {
        cfg.params.r = r;
    }
    if !common.lambda.is_empty() {
        cfg.params.lambdas = common.lambda.clone();
    }
    cfg.resolve().map_err(config_err)
}

fn run_suite(suite: Suite, args: &SuiteArgs) -> Outcome {
    let exp = match load(&args.common, Some(suite)) {
        Ok(e) => e,
        Err(ConfigError(e)) => return Outcome::Config(e),
    };
    let report = run_verification_suite(&exp);
    let written = match args.format {
        None => export_all(&report, &args.common.out).map(|_| ()),
        Some(f) => {
            let f = match f {
                Format::Csv => ReportFormat::Csv,
                Format::Text => ReportFormat::Text,
                Format::Svg => ReportFormat::Svg,
            };
            export_report(&report, &args.common.out, f)
                .and_then(|_| write_file(&args.common.out.join("timings.csv"), &report.timings_csv()))
        }
    };
    if let Err(e) = written {
        return Outcome::Failed(anyhow!(e));
    }
    print!("{}", report.to_text());
    if report.passed() {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn weight_of(exp: &Experiment, i: usize) -> Result<&tracelab::weights::Weight, ConfigError> {
    exp.weights
        .get(i)
        .map(|w| &w.1)
        .ok_or_else(|| config_err(anyhow!("weight index {i} out of range ({} configured)", exp.weights.len())))
}

fn tile(common: &Common, function: Option<&str>, weight: usize) -> Outcome {
    let prep = || -> Result<_, ConfigError> {
        let exp = load(common, None)?;
        let w = weight_of(&exp, weight)?.clone();
        let f = match function {
            Some(name) => {
                let f = catalog_function(name, &exp.window, exp.seed).map_err(config_err)?;
                if f.half_space().is_none() {
                    return Err(config_err(anyhow!("`{name}` has no half-space form")));
                }
                Some(f)
            }
            None => exp.half_space.first().cloned(),
        };
        Ok((exp, w, f))
    };
    let (exp, w, f) = match prep() {
        Ok(v) => v,
        Err(ConfigError(e)) => return Outcome::Config(e),
    };
    let work = || -> anyhow::Result<()> {
        let win = exp.window;
        let d = win.d_max();
        let scales = WeightScales::populate(&w, &win, d, exp.params.a1_depth)?;
        let schedule = match &f {
            Some(f) => {
                let h = f.half_space().expect("checked above");
                build_lj_sequence(h, &w, &win, d as usize, &SobolevOptions::for_depth(d))?
            }
            None => LevelSchedule::linear(d),
        };
        let sys = build_admissible_system(&scales, &schedule, exp.params.r, exp.lambdas[0])?;
        write_file(&common.out.join("system.txt"), &write_system(&sys))?;
        write_file(&common.out.join("scales.csv"), &scales.to_csv())?;
        if win.dim() <= 2 {
            write_file(&common.out.join("system.svg"), &system_svg(&sys)?)?;
        }
        println!(
            "system: {} stages, levels {:?}, {} cubes",
            sys.stage_count(),
            sys.stage_levels,
            sys.stages.iter().map(|t| t.len()).sum::<usize>()
        );
        Ok(())
    };
    match work() {
        Ok(()) => Outcome::Pass,
        Err(e) => Outcome::Failed(e),
    }
}

fn norm(common: &Common, kind: NormKind, function: &str, order: u32, weight: usize) -> Outcome {
    let prep = || -> Result<_, ConfigError> {
        let exp = load(common, None)?;
        let w = weight_of(&exp, weight)?.clone();
        let f = catalog_function(function, &exp.window, exp.seed).map_err(config_err)?;
        if matches!(kind, NormKind::Sobolev | NormKind::MeanDeviation) && f.half_space().is_none() {
            return Err(config_err(anyhow!("`{function}` has no half-space form")));
        }
        if !(1..=3).contains(&order) {
            return Err(config_err(anyhow!("order {order} outside 1..=3")));
        }
        Ok((exp, w, f))
    };
    let (exp, w, f) = match prep() {
        Ok(v) => v,
        Err(ConfigError(e)) => return Outcome::Config(e),
    };
    let work = || -> anyhow::Result<NormReport> {
        let win = exp.window;
        let d = win.d_max();
        let scales = WeightScales::populate(&w, &win, d, exp.params.a1_depth)?;
        let opts = SobolevOptions::for_depth(d);
        Ok(match kind {
            NormKind::Sobolev => {
                weighted_sobolev_norm(f.half_space().expect("checked"), &w, &half_space_region(&win), order, &opts)?
            }
            NormKind::Besov => {
                let bp = BesovParams::new(order, d, BesovVariant::Delta)?;
                besov_variable_norm(&f.chart(win.dim(), d + exp.params.chart_extra), &scales, &bp)?
            }
            NormKind::Z => {
                let cands = uniform_candidates(&scales, d, exp.lambdas[0], exp.params.r);
                let phi = f.grid(&win, d);
                let best = z_estimate(&phi, &cands, &scales)?.best;
                z_functional(&phi, &cands[best], &scales)?
            }
            NormKind::MeanDeviation => {
                let h = f.half_space().expect("checked");
                let sched = build_lj_sequence(h, &w, &win, d as usize, &opts)?;
                let sys = build_admissible_system(&scales, &sched, exp.params.r, exp.lambdas[0])?;
                mean_deviation_functional(&f.grid(&win, d), &sys, &scales)?
            }
        })
    };
    match work() {
        Ok(rep) => {
            let res = write_file(&common.out.join("norm.csv"), &rep.to_csv())
                .and_then(|_| write_file(&common.out.join("norm.svg"), &norm_bars_svg(&rep, 64)));
            if let Err(e) = res {
                return Outcome::Failed(anyhow!(e));
            }
            println!("{function}: {:.6e} ({} terms)", rep.value, rep.terms.len());
            Outcome::Pass
        }
        Err(e) => Outcome::Failed(e),
    }
}

struct ExtendArgs<'a> {
    phi: &'a Path,
    system: Option<&'a Path>,
    config: Option<&'a Path>,
    out: &'a Path,
    order: u32,
    t_depth: u32,
    weight: usize,
}

fn extend(a: ExtendArgs) -> Outcome {
    let prep = || -> anyhow::Result<_> {
        let phi = parse_grid(&read_file(a.phi)?)?;
        let sys = a.system.map(|p| read_file(p).and_then(|s| parse_system(&s))).transpose()?;
        let w = match a.config {
            Some(p) => {
                let mut cfg = ExperimentConfig::load(p)?;
                cfg.suite.get_or_insert_with(|| Suite::A1Checks.name().into());
                let exp = cfg.resolve()?;
                exp.weights
                    .get(a.weight)
                    .map(|w| w.1.clone())
                    .ok_or_else(|| anyhow!("weight index {} out of range", a.weight))?
            }
            None => tracelab::weights::Weight::constant(&phi.window(), 1.0)?,
        };
        if let Some(s) = &sys {
            if s.window.dim() != phi.window().dim() || s.window.period() != phi.period() {
                bail!("system window does not match the samples");
            }
        }
        Ok((phi, sys, w))
    };
    let (phi, sys, w) = match prep() {
        Ok(v) => v,
        Err(e) => return Outcome::Config(e),
    };
    let work = || -> anyhow::Result<()> {
        use tracelab::functions::BoundaryFunction;
        let win = phi.window();
        let sampled = match &sys {
            Some(sys) => {
                let scales = WeightScales::populate(&w, &sys.window, sys.window.d_max(), 4)?;
                let ext = extend_limiting(&phi, sys, &scales)?;
                SampledHalfSpace::sample(&ext, &win, phi.depth(), a.t_depth)
            }
            None => {
                if phi.depth() < 2 {
                    bail!("the mollifier extension needs samples of depth >= 2");
                }
                let spec = MollifierSpec::new(win.dim(), a.order)?;
                let ext = extend_smooth_to(&phi, &spec, phi.depth() - 1)?;
                SampledHalfSpace::sample(&ext, &win, phi.depth(), a.t_depth)
            }
        };
        write_file(&a.out.join("extension.csv"), &write_half_space(&sampled))
            .with_context(|| "writing extension samples")?;
        println!("extension: {} samples", sampled.values.len());
        Ok(())
    };
    match work() {
        Ok(()) => Outcome::Pass,
        Err(e) => Outcome::Failed(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Lemma41(a) => run_suite(Suite::Lemma41, a),
        Command::Admissibility(a) => run_suite(Suite::Admissibility, a),
        Command::TraceIneq(a) => run_suite(Suite::TraceIneq, a),
        Command::ExtensionIneq(a) => run_suite(Suite::ExtensionIneq, a),
        Command::SmoothL2(a) => run_suite(Suite::SmoothL2, a),
        Command::Gagliardo(a) => run_suite(Suite::Gagliardo, a),
        Command::A1Checks(a) => run_suite(Suite::A1Checks, a),
        Command::Tile { common, function, weight } => tile(common, function.as_deref(), *weight),
        Command::Norm { common, kind, function, order, weight } => norm(common, *kind, function, *order, *weight),
        Command::Extend { phi, system, config, out, order, t_depth, weight } => extend(ExtendArgs {
            phi,
            system: system.as_deref(),
            config: config.as_deref(),
            out,
            order: *order,
            t_depth: *t_depth,
            weight: *weight,
        }),
        Command::Catalog => {
            for (name, arg, desc) in CATALOG {
                let head = if arg.is_empty() { name.to_string() } else { format!("{name}[:{arg}]") };
                println!("{head:16} {desc}");
            }
            Outcome::Pass
        }
    };
    match outcome {
        Outcome::Pass => ExitCode::SUCCESS,
        Outcome::Fail => ExitCode::from(1),
        Outcome::Config(e) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Outcome::Failed(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
