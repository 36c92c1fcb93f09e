//! Command-line front end: spec parsing, subcommands and report emission.

pub mod report;
pub mod specfile;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ehi_core::catalog::{list_builtins, BuiltinInfo, ProcessSpec};
use ehi_core::classifier::{
    classify, grid_profiles, ClassifierConfig, ClassifierError, Conclusion, Direction,
    FiredCondition, NegativeReport, RatioFit,
};
use ehi_core::kernels::ScaleProfile;
use ehi_core::probe::{
    counterexample_experiment, exit_histogram, harnack_ratio, monotone_separation,
    CounterexampleParams, EstimateWithCI, HarnackExperiment, HistogramBin, ProbeError,
    SeparationStep,
};
use ehi_core::simulate::{Mode, SimConfig, SimError, Simulator, Trajectory};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use report::{emit, fmt_f64, manifest_path, to_csv, to_json, to_json_line, RunManifest};
use specfile::{parse_spec, LoadedSpec, SpecError};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "EHI_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Spec(_) | CliError::Usage(_) => 2,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => CliError::Usage(m),
            SimError::NotSimulable(m) => CliError::Usage(format!("process is not simulable: {m}")),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::Config(m) | ProbeError::Domain(m) => CliError::Usage(m),
            ProbeError::Sim(s) => s.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Config(m) => CliError::Usage(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn json_err(e: serde_json::Error) -> CliError {
    CliError::Io(e.into())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

#[derive(Parser, Debug)]
#[command(
    name = "ehi",
    version,
    about = "Elliptic Harnack inequality analysis for isotropic Lévy jump processes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// RNG seed; generated, printed and recorded when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Emit JSON instead of CSV or text.
    #[arg(long)]
    pub json: bool,
    /// Output file (default: stdout). A `<out>.manifest.json` sidecar is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    #[arg(long, default_value = "small")]
    pub direction: Direction,
    /// Number of grid scales.
    #[arg(long, default_value_t = 30)]
    pub scales: usize,
    /// Grid base M: r_n = r_start·M^{∓n}.
    #[arg(long, default_value_t = 2.0)]
    pub base: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r_start: f64,
}

impl GridArgs {
    fn config(&self) -> ClassifierConfig {
        ClassifierConfig {
            direction: self.direction,
            grid_base: self.base,
            n_scales: self.scales,
            r_start: self.r_start,
            ..ClassifierConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    /// subordinator, sbm or direct; default direct for kernels, sbm for subordinators.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    /// Small-jump cutoff ε.
    #[arg(long, default_value_t = 1e-2)]
    pub cutoff: f64,
    /// Surrogate time step h.
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    /// Drop the small jumps instead of replacing them by a Gaussian.
    #[arg(long)]
    pub no_surrogate: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Classify a process by its scale profile.
    Classify {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Dump the scale profile (r, jd2, m2, tail2).
    Profile {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Sample paths.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        paths: u64,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo probes.
    Probe {
        #[command(subcommand)]
        probe: ProbeCommand,
    },
    /// Built-in process families.
    Catalog {
        #[command(subcommand)]
        catalog: CatalogCommand,
    },
}

#[derive(Subcommand, Debug)]
pub enum ProbeCommand {
    /// Harnack ratio h(0)/h(y) for the geometry (R1, R2, R3).
    Harnack {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        r1: f64,
        #[arg(long, default_value_t = 5.0)]
        r2: f64,
        #[arg(long, default_value_t = 30.0)]
        r3: f64,
        #[arg(long, default_value_t = 10_000)]
        replicas: u64,
        #[command(flatten)]
        sim: SimArgs,
        /// Also write the exit histogram of B(0, R1+R2) from the origin as CSV.
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Counterexample levels: sandwich probabilities and Harnack ratios.
    Counterexample {
        /// Levels n, comma separated, each in 2..=6.
        #[arg(long, value_delimiter = ',', default_value = "2,3")]
        levels: Vec<u32>,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 10_000)]
        replicas: u64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
pub enum CatalogCommand {
    /// One line per builtin with its parameter schema.
    List {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictDetails {
    pub notes: Vec<String>,
    pub doubling_constant: f64,
    pub ratio: Option<RatioFit>,
    pub negative: Option<NegativeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub verdict: Conclusion,
    pub fired: Vec<FiredCondition>,
    pub profiles: Vec<ScaleProfile>,
    pub config: ClassifierConfig,
    pub details: VerdictDetails,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub profiles: Vec<ScaleProfile>,
    pub config: ClassifierConfig,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub process: String,
    pub dim: usize,
    pub mode: Mode,
    pub config: SimConfig,
    pub trajectories: Vec<Trajectory>,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl From<&EstimateWithCI> for Estimate {
    fn from(e: &EstimateWithCI) -> Self {
        Self {
            mean: e.mean,
            stderr: e.stderr,
            n: e.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackParams {
    pub process: String,
    pub process_params: BTreeMap<String, f64>,
    pub dim: usize,
    pub mode: Mode,
    pub sim: SimConfig,
    pub experiment: HarnackExperiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub params: HarnackParams,
    /// `h0`, `hy` and `ratio`; the ratio carries the delta-method standard error.
    pub estimates: BTreeMap<String, Estimate>,
    pub ratio_ci: (f64, f64),
    pub censored: u64,
    pub seed: u64,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRunParams {
    pub dim: usize,
    pub replicas: u64,
    pub levels: Vec<CounterexampleParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRunReport {
    pub params: CounterexampleRunParams,
    /// `n<k>.p_exit`, `n<k>.h0`, `n<k>.hy`, `n<k>.ratio` per level.
    pub estimates: BTreeMap<String, Estimate>,
    /// `n<k>.lambda_s_over_h`, `n<k>.p_scatter_small`, `n<k>.ratio_ci_lo`, `n<k>.ratio_ci_hi`.
    pub derived: BTreeMap<String, f64>,
    pub separation: Vec<SeparationStep>,
    pub seed: u64,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogReport {
    pub builtins: Vec<BuiltinInfo>,
    pub manifest: RunManifest,
}

/// Outcome of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Inconclusive,
}

struct Ctx {
    started: Instant,
    manifest: RunManifest,
    out: Option<PathBuf>,
}

impl Ctx {
    fn new(argv: &[String], common: &Common, digest: Option<String>) -> Self {
        let (seed, generated) = match common.seed {
            Some(s) => (s, false),
            None => (fresh_seed(), true),
        };
        if generated {
            eprintln!("seed: {seed} (generated)");
        }
        let mut manifest = RunManifest::new(argv.to_vec(), digest, seed, generated);
        manifest.outputs = common.out.iter().map(|p| p.display().to_string()).collect();
        Self {
            started: Instant::now(),
            manifest,
            out: common.out.clone(),
        }
    }

    fn seed(&self) -> u64 {
        self.manifest.seed
    }

    fn add_output(&mut self, p: &Path) {
        self.manifest.outputs.push(p.display().to_string());
    }

    /// Write the main artifact and the timed manifest (sidecar, or stderr without `--out`).
    fn finish(&self, text: &str) -> Result<(), CliError> {
        emit(text, self.out.as_deref())?;
        let timed = self.manifest.timed(self.started.elapsed().as_secs_f64());
        match &self.out {
            Some(p) => emit(&to_json(&timed).map_err(json_err)?, Some(&manifest_path(p)))?,
            None => eprintln!("manifest: {}", to_json_line(&timed).map_err(json_err)?),
        }
        Ok(())
    }
}

fn fresh_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    nanos ^ ((std::process::id() as u64) << 32)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|n| *n >= 1).ok_or_else(|| {
        CliError::Usage(format!(
            "{THREADS_ENV} must be a positive integer, got `{v}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn profile_rows(profiles: &[ScaleProfile]) -> Vec<Vec<String>> {
    profiles
        .iter()
        .map(|p| {
            vec![
                fmt_f64(p.r),
                fmt_f64(p.jd2),
                fmt_f64(p.m2),
                fmt_f64(p.tail2),
            ]
        })
        .collect()
}

fn kernel_of(loaded: &LoadedSpec) -> Result<ehi_core::kernels::RadialJumpKernel, CliError> {
    loaded
        .process
        .kernel()
        .map_err(|e| CliError::Numerical(e.to_string()))
}

fn sim_config(sim: &SimArgs, seed: u64) -> SimConfig {
    SimConfig {
        cutoff: sim.cutoff,
        step: sim.step,
        horizon: sim.horizon,
        seed,
        gaussian_surrogate: !sim.no_surrogate,
    }
}

fn default_mode(process: &ProcessSpec) -> Mode {
    if process.has_explicit_kernel() || process.subordinator().is_none() {
        Mode::DirectKernel
    } else {
        Mode::Sbm
    }
}

fn cmd_classify(
    argv: &[String],
    spec: &Path,
    grid: &GridArgs,
    common: &Common,
) -> Result<Outcome, CliError> {
    let loaded = parse_spec(spec)?;
    let ctx = Ctx::new(argv, common, Some(loaded.digest.clone()));
    let cfg = grid.config();
    let verdict = classify(&kernel_of(&loaded)?, &cfg)?;
    let report = ClassifyReport {
        verdict: verdict.conclusion,
        fired: verdict.fired,
        profiles: verdict.profiles,
        config: cfg,
        details: VerdictDetails {
            notes: verdict.notes,
            doubling_constant: verdict.doubling_constant,
            ratio: verdict.ratio,
            negative: verdict.negative,
        },
        manifest: ctx.manifest.clone(),
    };
    let text = if common.json {
        to_json(&report).map_err(json_err)?
    } else {
        classify_text(&loaded, &report)
    };
    ctx.finish(&text)?;
    Ok(if report.verdict == Conclusion::Inconclusive {
        Outcome::Inconclusive
    } else {
        Outcome::Ok
    })
}

fn classify_text(loaded: &LoadedSpec, r: &ClassifyReport) -> String {
    let verdict = serde_json::to_value(r.verdict)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for f in &r.fired {
        *counts.entry(f.condition.to_string()).or_default() += 1;
    }
    let mut s = format!(
        "process: {} (d = {})\nverdict: {verdict}\n",
        loaded.process.name, loaded.process.dim
    );
    for (c, n) in &counts {
        s.push_str(&format!(
            "fired: {c} at {n} of {} scales\n",
            r.profiles.len()
        ));
    }
    for n in &r.details.notes {
        s.push_str(&format!("note: {n}\n"));
    }
    s
}

fn cmd_profile(
    argv: &[String],
    spec: &Path,
    grid: &GridArgs,
    common: &Common,
) -> Result<Outcome, CliError> {
    let loaded = parse_spec(spec)?;
    let ctx = Ctx::new(argv, common, Some(loaded.digest.clone()));
    let cfg = grid.config();
    let profiles: Vec<ScaleProfile> = grid_profiles(&kernel_of(&loaded)?, &cfg)?
        .into_iter()
        .map(|p| p.to_profile())
        .collect();
    let text = if common.json {
        to_json(&ProfileReport {
            profiles,
            config: cfg,
            manifest: ctx.manifest.clone(),
        })
        .map_err(json_err)?
    } else {
        let header = ["r", "jd2", "m2", "tail2"].map(String::from);
        to_csv(&header, &profile_rows(&profiles)).map_err(csv_err)?
    };
    ctx.finish(&text)?;
    Ok(Outcome::Ok)
}

/// Trajectory CSV: `path, t, dx1..dxd, tag`, one row per recorded event.
pub fn trajectory_csv(dim: usize, trajectories: &[Trajectory]) -> csv::Result<String> {
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|i| format!("dx{i}")));
    header.push("tag".into());
    let rows: Vec<Vec<String>> = trajectories
        .iter()
        .flat_map(|tr| {
            tr.events.iter().map(move |e| {
                let mut row = vec![tr.replica.to_string(), fmt_f64(e.t)];
                row.extend(e.dx.iter().map(|x| fmt_f64(*x)));
                row.push(e.tag.to_string());
                row
            })
        })
        .collect();
    to_csv(&header, &rows)
}

fn cmd_simulate(
    argv: &[String],
    spec: &Path,
    paths: u64,
    sim: &SimArgs,
    common: &Common,
) -> Result<Outcome, CliError> {
    let loaded = parse_spec(spec)?;
    let ctx = Ctx::new(argv, common, Some(loaded.digest.clone()));
    if paths < 1 {
        return Err(CliError::Usage("--paths must be at least 1".into()));
    }
    let cfg = sim_config(sim, ctx.seed());
    let mode = sim.mode.unwrap_or_else(|| default_mode(&loaded.process));
    let simulator = Simulator::new(&loaded.process, &cfg, mode)?;
    let trajectories = simulator.sample_paths(0..paths);
    let text = if common.json {
        let report = SimulateReport {
            process: loaded.process.name.clone(),
            dim: simulator.dim,
            mode,
            config: cfg,
            trajectories,
            manifest: ctx.manifest.clone(),
        };
        to_json(&report).map_err(json_err)?
    } else {
        trajectory_csv(simulator.dim, &trajectories).map_err(csv_err)?
    };
    ctx.finish(&text)?;
    Ok(Outcome::Ok)
}

/// Signed bins outside the exit ball, cut at multiples of its radius.
pub fn default_bins(radius: f64) -> Vec<(f64, f64)> {
    const CUTS: [f64; 11] = [1.0, 1.05, 1.1, 1.2, 1.35, 1.5, 2.0, 3.0, 5.0, 10.0, 30.0];
    let mut bins: Vec<(f64, f64)> = CUTS
        .windows(2)
        .rev()
        .map(|w| (-w[1] * radius, -w[0] * radius))
        .collect();
    bins.extend(CUTS.windows(2).map(|w| (w[0] * radius, w[1] * radius)));
    bins
}

pub fn histogram_csv(bins: &[HistogramBin]) -> csv::Result<String> {
    let header = ["bin_lo", "bin_hi", "count", "phat", "stderr"].map(String::from);
    let rows: Vec<Vec<String>> = bins
        .iter()
        .map(|b| {
            vec![
                fmt_f64(b.lo),
                fmt_f64(b.hi),
                b.count.to_string(),
                fmt_f64(b.phat),
                fmt_f64(b.stderr),
            ]
        })
        .collect();
    to_csv(&header, &rows)
}

#[allow(clippy::too_many_arguments)]
fn cmd_harnack(
    argv: &[String],
    spec: &Path,
    (r1, r2, r3): (f64, f64, f64),
    replicas: u64,
    sim: &SimArgs,
    histogram: Option<&Path>,
    common: &Common,
) -> Result<Outcome, CliError> {
    let loaded = parse_spec(spec)?;
    let mut ctx = Ctx::new(argv, common, Some(loaded.digest.clone()));
    if let Some(h) = histogram {
        ctx.add_output(h);
    }
    let cfg = sim_config(sim, ctx.seed());
    let mode = sim.mode.unwrap_or_else(|| default_mode(&loaded.process));
    let simulator = Simulator::new(&loaded.process, &cfg, mode)?;
    let experiment = HarnackExperiment::new(r1, r2, r3, simulator.dim, replicas)?;
    let result = harnack_ratio(&simulator, &experiment)?;
    if let Some(h) = histogram {
        let radius = experiment.exit_radius();
        let hist = exit_histogram(
            &simulator,
            radius,
            &vec![0.0; simulator.dim],
            &default_bins(radius),
            2 * replicas..3 * replicas,
        )?;
        emit(&histogram_csv(&hist.bins).map_err(csv_err)?, Some(h))?;
    }
    let estimates = [
        ("h0".to_string(), Estimate::from(&result.h0)),
        ("hy".to_string(), Estimate::from(&result.hy)),
        (
            "ratio".to_string(),
            Estimate {
                mean: result.ratio,
                stderr: result.ratio_stderr,
                n: result.h0.n.min(result.hy.n),
            },
        ),
    ]
    .into_iter()
    .collect();
    let report = HarnackReport {
        params: HarnackParams {
            process: loaded.process.name.clone(),
            process_params: loaded.process.params.clone(),
            dim: simulator.dim,
            mode,
            sim: cfg,
            experiment,
        },
        estimates,
        ratio_ci: result.ratio_ci,
        censored: result.censored,
        seed: ctx.seed(),
        manifest: ctx.manifest.clone(),
    };
    let text = if common.json {
        to_json(&report).map_err(json_err)?
    } else {
        harnack_text(&report)
    };
    ctx.finish(&text)?;
    Ok(Outcome::Ok)
}

fn harnack_text(r: &HarnackReport) -> String {
    let mut s = format!(
        "process: {} (d = {}, mode {:?})\n",
        r.params.process, r.params.dim, r.params.mode
    );
    for (k, e) in &r.estimates {
        s.push_str(&format!(
            "{k}: {} ± {} (n = {})\n",
            fmt_f64(e.mean),
            fmt_f64(e.stderr),
            e.n
        ));
    }
    s.push_str(&format!(
        "ratio 95% CI: [{}, {}]\ncensored: {}\nseed: {}\n",
        fmt_f64(r.ratio_ci.0),
        fmt_f64(r.ratio_ci.1),
        r.censored,
        r.seed
    ));
    s
}

fn cmd_counterexample(
    argv: &[String],
    levels: &[u32],
    dim: usize,
    replicas: u64,
    common: &Common,
) -> Result<Outcome, CliError> {
    let ctx = Ctx::new(argv, common, None);
    if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Usage(
            "--levels must be strictly increasing".into(),
        ));
    }
    let mut params = Vec::new();
    let mut estimates = BTreeMap::new();
    let mut derived = BTreeMap::new();
    let mut ratios = Vec::new();
    for &n in levels {
        let rep = counterexample_experiment(n, dim, replicas, ctx.seed())?;
        let key = |s: &str| format!("n{n}.{s}");
        estimates.insert(key("p_exit"), Estimate::from(&rep.sandwich.p_exit));
        estimates.insert(key("h0"), Estimate::from(&rep.harnack.h0));
        estimates.insert(key("hy"), Estimate::from(&rep.harnack.hy));
        let h = &rep.harnack;
        estimates.insert(
            key("ratio"),
            Estimate {
                mean: h.ratio,
                stderr: h.ratio_stderr,
                n: h.h0.n.min(h.hy.n),
            },
        );
        derived.insert(
            key("lambda_s_over_h"),
            rep.sandwich.lambda_s / rep.params.h_n,
        );
        derived.insert(key("p_scatter_small"), rep.sandwich.p_scatter_small);
        derived.insert(key("ratio_ci_lo"), h.ratio_ci.0);
        derived.insert(key("ratio_ci_hi"), h.ratio_ci.1);
        ratios.push((n, rep.harnack));
        params.push(rep.params);
    }
    let report = CounterexampleRunReport {
        params: CounterexampleRunParams {
            dim,
            replicas,
            levels: params,
        },
        estimates,
        derived,
        separation: monotone_separation(&ratios),
        seed: ctx.seed(),
        manifest: ctx.manifest.clone(),
    };
    let text = if common.json {
        to_json(&report).map_err(json_err)?
    } else {
        let mut s = String::new();
        for (k, e) in &report.estimates {
            s.push_str(&format!(
                "{k}: {} ± {} (n = {})\n",
                fmt_f64(e.mean),
                fmt_f64(e.stderr),
                e.n
            ));
        }
        for (k, v) in &report.derived {
            s.push_str(&format!("{k}: {}\n", fmt_f64(*v)));
        }
        s
    };
    ctx.finish(&text)?;
    Ok(Outcome::Ok)
}

fn cmd_catalog(argv: &[String], common: &Common) -> Result<Outcome, CliError> {
    let ctx = Ctx::new(argv, common, None);
    let builtins = list_builtins();
    let text = if common.json {
        to_json(&CatalogReport {
            builtins,
            manifest: ctx.manifest.clone(),
        })
        .map_err(json_err)?
    } else {
        builtins
            .iter()
            .map(|b| {
                let params: Vec<String> =
                    b.params.iter().map(|(k, v)| format!("{k}: {v}")).collect();
                let sim = if b.simulable {
                    "simulable"
                } else {
                    "model kernel"
                };
                format!("{}({}) [{sim}] {}\n", b.name, params.join("; "), b.summary)
            })
            .collect()
    };
    ctx.finish(&text)?;
    Ok(Outcome::Ok)
}

pub fn execute(cli: &Cli, argv: &[String]) -> Result<Outcome, CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Classify { spec, grid, common } => cmd_classify(argv, spec, grid, common),
        Command::Profile { spec, grid, common } => cmd_profile(argv, spec, grid, common),
        Command::Simulate {
            spec,
            paths,
            sim,
            common,
        } => cmd_simulate(argv, spec, *paths, sim, common),
        Command::Probe { probe } => match probe {
            ProbeCommand::Harnack {
                spec,
                r1,
                r2,
                r3,
                replicas,
                sim,
                histogram,
                common,
            } => cmd_harnack(
                argv,
                spec,
                (*r1, *r2, *r3),
                *replicas,
                sim,
                histogram.as_deref(),
                common,
            ),
            ProbeCommand::Counterexample {
                levels,
                dim,
                replicas,
                common,
            } => cmd_counterexample(argv, levels, *dim, *replicas, common),
        },
        Command::Catalog {
            catalog: CatalogCommand::List { common },
        } => cmd_catalog(argv, common),
    }
}

/// Parse arguments, run, and map the outcome to the process exit code.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> ExitCode {
    let argv: Vec<OsString> = args.into_iter().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli, &argv) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Inconclusive) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
