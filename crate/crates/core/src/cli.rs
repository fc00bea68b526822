//! Command-line front end.
//!
//! Settings are layered: built-in defaults, then a replayed manifest
//! (`--manifest`), then a config file (`--config`), then explicit flags.
//! Config files hold `key = value` lines under optional `[section]` headers;
//! the headers only group lines, and keys are the long flag names (`_` and
//! `-` are interchangeable).
//!
//! Exit codes: 0 on success, 1 for domain errors raised by the estimators,
//! 2 for usage errors such as unknown flags or a missing input file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::DteError;
use crate::estimation::{
    default_quantile_probs, dte, estimate_adjusted, make_folds, pte, quantile_grid,
    AdjustedEstimate, PteBoundary,
};
use crate::inference::{bootstrap_band, se_reduction, BootstrapConfig, CriticalValue, Functional};
use crate::io::{self, CsvSchema};
use crate::learners::{bench, LearnerKind, Profile};
use crate::model::{EffectKind, ExperimentData, LocationGrid, Method};
use crate::seed::derive_seed;
use crate::simulation::{
    oracle_dte, oracle_dte_cached, run_study_with_oracle, DgpConfig, StudyConfig,
};

const BOOTSTRAP_STREAM: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Estimate,
    BootstrapBand,
    Benchmark,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Estimate => "estimate",
            Mode::BootstrapBand => "bootstrap-band",
            Mode::Benchmark => "benchmark",
        }
    }
}

/// How the location grid is built.
///
/// Text forms: `quantiles` (probabilities 0.05..0.95), `q=0.1,0.5,0.9`,
/// `values=1,2.5,4`, and `range=1:200` or `range=0:50:5` for integer grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum GridSpec {
    /// Pooled lower quantiles of the observed outcomes.
    Quantiles { probs: Vec<f64> },
    Values { values: Vec<f64> },
    Range { start: i64, end: i64, step: i64 },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Quantiles {
            probs: default_quantile_probs(),
        }
    }
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad number {s:?}: {e}"))
        })
        .collect()
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        if text == "quantiles" {
            return Ok(Self::default());
        }
        let (kind, body) = text
            .split_once('=')
            .ok_or_else(|| format!("unrecognised grid {text:?}"))?;
        match kind.trim() {
            "q" | "quantiles" => Ok(GridSpec::Quantiles {
                probs: parse_f64_list(body)?,
            }),
            "values" => Ok(GridSpec::Values {
                values: parse_f64_list(body)?,
            }),
            "range" => {
                let parts: Vec<i64> = body
                    .split(':')
                    .map(|s| s.trim().parse::<i64>().map_err(|e| format!("bad range {body:?}: {e}")))
                    .collect::<Result<_, _>>()?;
                let (start, end, step) = match parts.as_slice() {
                    [a, b] => (*a, *b, 1),
                    [a, b, s] => (*a, *b, *s),
                    _ => return Err(format!("range needs start:end[:step], got {body:?}")),
                };
                if step <= 0 || start > end {
                    return Err(format!("empty range {body:?}"));
                }
                Ok(GridSpec::Range { start, end, step })
            }
            other => Err(format!("unknown grid kind {other:?}")),
        }
    }

    pub fn resolve(&self, outcomes: &[f64]) -> crate::Result<LocationGrid> {
        match self {
            GridSpec::Quantiles { probs } => quantile_grid(outcomes, probs),
            GridSpec::Values { values } => LocationGrid::new(values.clone()),
            GridSpec::Range { start, end, step } => LocationGrid::new(
                (*start..=*end)
                    .step_by(*step as usize)
                    .map(|v| v as f64)
                    .collect(),
            ),
        }
    }
}

/// Everything a run depends on. `threads`, `out` and `oracle_cache` are not
/// part of the manifest, so a replay into another directory gives identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub learner: Method,
    pub profile: Profile,
    pub epochs: Option<usize>,
    pub folds: usize,
    pub grid: GridSpec,
    pub bootstrap_reps: usize,
    pub alpha: f64,
    pub critical_value: CriticalValue,
    pub seed: u64,
    /// Worker threads; 0 lets the pool pick. Results do not depend on it.
    #[serde(skip)]
    pub threads: usize,
    pub input: Option<String>,
    pub schema: CsvSchema,
    pub n: usize,
    pub d_x: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub n_oracle: usize,
    pub functional: EffectKind,
    pub arm: usize,
    pub baseline: usize,
    pub pte_boundary: PteBoundary,
    pub bench_locations: Vec<usize>,
    pub bench_repeats: usize,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub oracle_cache: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            learner: Method::NnMultiMonotone,
            profile: Profile::Simulation,
            epochs: None,
            folds: 2,
            grid: GridSpec::default(),
            bootstrap_reps: 5000,
            alpha: 0.05,
            critical_value: CriticalValue::TwoSided,
            seed: 0,
            threads: 0,
            input: None,
            schema: CsvSchema::default(),
            n: 1000,
            d_x: 20,
            reps: 10,
            methods: vec![Method::LinearAdjusted, Method::NnMulti, Method::NnMultiMonotone],
            n_oracle: 100_000,
            functional: EffectKind::Dte,
            arm: 2,
            baseline: 1,
            pte_boundary: PteBoundary::Consecutive,
            bench_locations: vec![19],
            bench_repeats: 1,
            out: PathBuf::from("dte-out"),
            oracle_cache: None,
        }
    }

    /// Sets one option from its flag name and text value.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("{key}: cannot parse {v:?}: {e}"))
        }
        let method = |v: &str| Method::parse(v).ok_or_else(|| format!("unknown learner {v:?}"));
        match key.as_str() {
            "n" => self.n = num(&key, value)?,
            "dx" | "d-x" => self.d_x = num(&key, value)?,
            "reps" => self.reps = num(&key, value)?,
            "folds" => self.folds = num(&key, value)?,
            "learner" => self.learner = method(value)?,
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(|m| method(m.trim()))
                    .collect::<Result<_, _>>()?
            }
            "grid" => self.grid = GridSpec::parse(value)?,
            "B" | "b" | "bootstrap-reps" => self.bootstrap_reps = num(&key, value)?,
            "alpha" => self.alpha = num(&key, value)?,
            "critical" => {
                self.critical_value = match value {
                    "two-sided" => CriticalValue::TwoSided,
                    "one-sided" => CriticalValue::OneSided,
                    _ => return Err(format!("critical: expected two-sided or one-sided, got {value:?}")),
                }
            }
            "seed" => self.seed = num(&key, value)?,
            "threads" => self.threads = num(&key, value)?,
            "out" => self.out = PathBuf::from(value),
            "oracle-cache" => self.oracle_cache = Some(PathBuf::from(value)),
            "input" => self.input = Some(value.to_string()),
            "covariates" => {
                self.schema.covariates = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "arm-column" => self.schema.arm = value.to_string(),
            "outcome-column" => self.schema.outcome = value.to_string(),
            "epochs" => self.epochs = Some(num(&key, value)?),
            "profile" => {
                self.profile =
                    Profile::parse(value).ok_or_else(|| format!("unknown profile {value:?}"))?
            }
            "n-oracle" => self.n_oracle = num(&key, value)?,
            "functional" => {
                self.functional = match value {
                    "cdf" => EffectKind::Cdf,
                    "dte" => EffectKind::Dte,
                    "pte" => EffectKind::Pte,
                    _ => return Err(format!("functional: expected cdf, dte or pte, got {value:?}")),
                }
            }
            "arm" => self.arm = num(&key, value)?,
            "baseline" => self.baseline = num(&key, value)?,
            "pte-boundary" => {
                self.pte_boundary = match value {
                    "consecutive" => PteBoundary::Consecutive,
                    "open-lower" => PteBoundary::OpenLower,
                    _ => return Err(format!("pte-boundary: unknown value {value:?}")),
                }
            }
            "locations" => {
                self.bench_locations = value
                    .split(',')
                    .map(|s| num::<usize>(&key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "repeats" => self.bench_repeats = num(&key, value)?,
            _ => return Err(format!("unknown option {key:?}")),
        }
        Ok(())
    }

    /// Usage-level checks that do not need any data.
    pub fn check_usage(&self) -> Result<(), String> {
        match self.mode {
            Mode::Estimate | Mode::BootstrapBand if self.input.is_none() => {
                Err(format!("{} needs --input", self.mode.as_str()))
            }
            Mode::Simulate if !matches!(self.grid, GridSpec::Quantiles { .. }) => {
                Err("simulate builds its grid from oracle quantiles; use a quantile grid".into())
            }
            Mode::Simulate if self.methods.is_empty() => Err("simulate needs --methods".into()),
            _ => Ok(()),
        }
    }

    /// The learner for `method` under this run's profile and epoch override.
    pub fn learner_kind(&self, method: Method) -> Option<LearnerKind> {
        let mut kind = LearnerKind::from_method(method, self.profile)?;
        if let (Some(e), Some(train)) = (self.epochs, kind.train_config_mut()) {
            train.epochs = e;
        }
        Some(kind)
    }

    fn functional(&self) -> Functional {
        match self.functional {
            EffectKind::Cdf => Functional::Cdf { arm: self.arm },
            EffectKind::Dte => Functional::Dte {
                arm: self.arm,
                baseline: self.baseline,
            },
            EffectKind::Pte => Functional::Pte {
                arm: self.arm,
                baseline: self.baseline,
                boundary: self.pte_boundary,
            },
        }
    }
}

/// Parses config-file text into ordered `(key, value)` pairs.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(format!("line {}: unterminated section header", i + 1));
            }
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        if k.trim().is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSummary {
    pub rows: usize,
    pub arm_labels: Vec<String>,
    pub arm_counts: Vec<usize>,
}

/// Written next to the outputs; replaying it reproduces them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
    pub data: Option<DataSummary>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(DteError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Domain(e) => write!(f, "{e}"),
        }
    }
}

impl From<DteError> for CliError {
    fn from(e: DteError) -> Self {
        CliError::Domain(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "dte", version, about = "Distributional treatment effects with regression adjustment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo study against a large-sample oracle.
    Simulate(Flags),
    /// Adjusted CDFs, DTE and PTE for a CSV experiment.
    Estimate(Flags),
    /// Pointwise multiplier-bootstrap band for a CSV experiment.
    BootstrapBand(Flags),
    /// Training-time table for the four learners.
    Benchmark(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest of an earlier run to replay.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Units per replication (simulate) or rows of the synthetic problem (benchmark).
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    /// empirical | linear | nn-single | nn-multi | nn-multi-monotone
    #[arg(long)]
    learner: Option<String>,
    /// quantiles | q=.. | values=.. | range=a:b[:step]
    #[arg(long)]
    grid: Option<String>,
    /// Bootstrap repetitions.
    #[arg(long = "B")]
    b: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// two-sided | one-sided
    #[arg(long)]
    critical: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    input: Option<String>,
    /// Comma-separated covariate columns; default is every other column.
    #[arg(long)]
    covariates: Option<String>,
    #[arg(long)]
    arm_column: Option<String>,
    #[arg(long)]
    outcome_column: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// simulation | water | abema
    #[arg(long)]
    profile: Option<String>,
    /// Comma-separated methods compared by simulate.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    n_oracle: Option<String>,
    /// Directory for reusable oracle files.
    #[arg(long)]
    oracle_cache: Option<String>,
    #[arg(long)]
    dx: Option<String>,
    /// cdf | dte | pte
    #[arg(long)]
    functional: Option<String>,
    #[arg(long)]
    arm: Option<String>,
    #[arg(long)]
    baseline: Option<String>,
    /// consecutive | open-lower
    #[arg(long)]
    pte_boundary: Option<String>,
    /// Comma-separated location counts for benchmark.
    #[arg(long)]
    locations: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("n", &self.n),
            ("reps", &self.reps),
            ("folds", &self.folds),
            ("learner", &self.learner),
            ("grid", &self.grid),
            ("B", &self.b),
            ("alpha", &self.alpha),
            ("critical", &self.critical),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("out", &self.out),
            ("input", &self.input),
            ("covariates", &self.covariates),
            ("arm-column", &self.arm_column),
            ("outcome-column", &self.outcome_column),
            ("epochs", &self.epochs),
            ("profile", &self.profile),
            ("methods", &self.methods),
            ("n-oracle", &self.n_oracle),
            ("oracle-cache", &self.oracle_cache),
            ("dx", &self.dx),
            ("functional", &self.functional),
            ("arm", &self.arm),
            ("baseline", &self.baseline),
            ("pte-boundary", &self.pte_boundary),
            ("locations", &self.locations),
            ("repeats", &self.repeats),
        ]
    }
}

fn resolve_config(mode: Mode, flags: &Flags) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::new(mode);
    if let Some(path) = &flags.manifest {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("manifest {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("manifest {}: {e}", path.display())))?;
        if manifest.config.mode != mode {
            return Err(CliError::Usage(format!(
                "manifest was written by {}, not {}",
                manifest.config.mode.as_str(),
                mode.as_str()
            )));
        }
        let out = cfg.out.clone();
        cfg = manifest.config;
        cfg.out = out;
    }
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let pairs = parse_config_text(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        for (k, v) in pairs {
            cfg.apply(&k, &v)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        }
    }
    for (k, v) in flags.pairs() {
        if let Some(v) = v {
            cfg.apply(k, v).map_err(CliError::Usage)?;
        }
    }
    cfg.check_usage().map_err(CliError::Usage)?;
    Ok(cfg)
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code. Errors are reported on standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (mode, flags) = match &cli.command {
        Command::Simulate(f) => (Mode::Simulate, f),
        Command::Estimate(f) => (Mode::Estimate, f),
        Command::BootstrapBand(f) => (Mode::BootstrapBand, f),
        Command::Benchmark(f) => (Mode::Benchmark, f),
    };
    let result = resolve_config(mode, flags).and_then(|cfg| run(&cfg));
    match result {
        Ok(outputs) => {
            for p in outputs {
                eprintln!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("dte: {e}");
            e.exit_code()
        }
    }
}

/// Runs one configured mode and returns the files written.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("threads: {e}")))?;
    pool.install(|| {
        std::fs::create_dir_all(&cfg.out).map_err(DteError::from)?;
        match cfg.mode {
            Mode::Simulate => run_simulate(cfg),
            Mode::Estimate => run_estimate(cfg),
            Mode::BootstrapBand => run_bootstrap(cfg),
            Mode::Benchmark => run_benchmark(cfg),
        }
    })
}

struct Outputs<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Self {
            dir,
            names: Vec::new(),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }

    fn finish(
        mut self,
        cfg: &RunConfig,
        seeds: BTreeMap<String, u64>,
        data: Option<DataSummary>,
    ) -> Result<Vec<PathBuf>, CliError> {
        let manifest_path = self.path("manifest.json");
        let manifest = Manifest {
            tool: "dte".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            seeds,
            outputs: self.names.clone(),
            data,
        };
        io::write_json(&manifest, &manifest_path)?;
        Ok(self.names.iter().map(|n| self.dir.join(n)).collect())
    }
}

fn run_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let probs = match &cfg.grid {
        GridSpec::Quantiles { probs } => probs.clone(),
        _ => unreachable!("checked in check_usage"),
    };
    let study = StudyConfig {
        dgp: DgpConfig {
            n: cfg.n,
            d_x: cfg.d_x,
            seed: cfg.seed,
            ..DgpConfig::default()
        },
        methods: cfg.methods.clone(),
        replications: cfg.reps,
        folds: cfg.folds,
        probs: probs.clone(),
        n_oracle: cfg.n_oracle,
        profile: cfg.profile,
        epochs: cfg.epochs,
    };
    eprintln!("simulate: oracle from {} draws", cfg.n_oracle);
    let oracle = match &cfg.oracle_cache {
        Some(dir) => oracle_dte_cached(&study.dgp, &probs, cfg.n_oracle, dir)?,
        None => oracle_dte(&study.dgp, &probs, cfg.n_oracle)?,
    };
    eprintln!(
        "simulate: {} replications of n={} with {} method(s)",
        cfg.reps,
        cfg.n,
        study.report_methods().len()
    );
    let report = run_study_with_oracle(&study, oracle)?;

    let mut out = Outputs::new(&cfg.out);
    io::write_study_csv(&report, &out.path("study.csv"))?;
    let rows: Vec<Vec<String>> = report
        .oracle
        .probs
        .iter()
        .zip(report.oracle.grid.locations())
        .zip(&report.oracle.dte)
        .map(|((p, l), d)| vec![p.to_string(), l.to_string(), d.to_string()])
        .collect();
    io::write_table_csv(&["prob", "location", "dte"], &rows, &out.path("oracle.csv"))?;
    for s in report.summarize() {
        let mid = s.reduction_pct.len() / 2;
        eprintln!(
            "simulate: {:<18} mse reduction at middle location {:.1}%",
            s.method.as_str(),
            s.reduction_pct[mid]
        );
    }
    // Wall times vary run to run, so they go outside the manifest's outputs.
    let timings: BTreeMap<&str, f64> = report
        .methods
        .iter()
        .map(|m| (m.method.as_str(), m.fit_seconds))
        .collect();
    io::write_json(&timings, &cfg.out.join("timings.json"))?;

    let mut seeds = BTreeMap::new();
    seeds.insert("master".into(), cfg.seed);
    out.finish(cfg, seeds, None)
}

struct Prepared {
    data: ExperimentData,
    labels: Vec<String>,
    grid: LocationGrid,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let input = cfg.input.as_ref().expect("checked in check_usage");
    let loaded = io::load_csv(Path::new(input), &cfg.schema)?;
    eprintln!(
        "{}: read {} rows, {} covariates, arms {:?}",
        cfg.mode.as_str(),
        loaded.data.n(),
        loaded.data.n_covariates(),
        loaded.arm_labels
    );
    let grid = cfg.grid.resolve(loaded.data.outcomes())?;
    Ok(Prepared {
        data: loaded.data,
        labels: loaded.arm_labels,
        grid,
    })
}

fn summary(p: &Prepared) -> DataSummary {
    DataSummary {
        rows: p.data.n(),
        arm_labels: p.labels.clone(),
        arm_counts: (1..=p.data.n_arms())
            .map(|w| p.data.units_in_arm(w).len())
            .collect(),
    }
}

fn fit_estimate(cfg: &RunConfig, p: &Prepared, method: Method) -> crate::Result<AdjustedEstimate> {
    match cfg.learner_kind(method) {
        None => AdjustedEstimate::empirical(&p.data, &p.grid),
        Some(kind) => {
            eprintln!(
                "{}: cross-fitting {} with {} folds over {} locations",
                cfg.mode.as_str(),
                method.as_str(),
                cfg.folds,
                p.grid.len()
            );
            let plan = make_folds(p.data.n(), cfg.folds, cfg.seed)?;
            estimate_adjusted(&p.data, &p.grid, &kind, &plan)
        }
    }
}

fn run_estimate(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let p = prepare(cfg)?;
    let est = fit_estimate(cfg, &p, cfg.learner)?;
    let mut out = Outputs::new(&cfg.out);
    io::write_cdf_csv(&est.theta, &p.grid, &p.labels, &out.path("cdf.csv"))?;
    if p.data.n_arms() >= 2 {
        let d = dte(&est.theta, cfg.arm, cfg.baseline)?;
        io::write_series_csv(p.grid.locations(), &d, "dte", &out.path("dte.csv"))?;
        let functional = Functional::Pte {
            arm: cfg.arm,
            baseline: cfg.baseline,
            boundary: cfg.pte_boundary,
        };
        if p.grid.len() >= 2 || cfg.pte_boundary == PteBoundary::OpenLower {
            let values = pte(&est.theta, cfg.arm, cfg.baseline, cfg.pte_boundary)?;
            io::write_series_csv(&functional.locations(&p.grid), &values, "pte", &out.path("pte.csv"))?;
        }
    }
    let mut seeds = BTreeMap::new();
    seeds.insert("crossfit".into(), cfg.seed);
    let s = summary(&p);
    out.finish(cfg, seeds, Some(s))
}

fn run_bootstrap(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let p = prepare(cfg)?;
    let functional = cfg.functional();
    let boot = BootstrapConfig {
        repetitions: cfg.bootstrap_reps,
        alpha: cfg.alpha,
        seed: derive_seed(cfg.seed, &[BOOTSTRAP_STREAM]),
        critical_value: cfg.critical_value,
        reject_degenerate: false,
    };
    let est = fit_estimate(cfg, &p, cfg.learner)?;
    eprintln!("bootstrap-band: {} multiplier draws", cfg.bootstrap_reps);
    let band = bootstrap_band(&p.data, &p.grid, &est, &functional, &boot)?;
    let mut out = Outputs::new(&cfg.out);
    io::write_band_csv(&band, &out.path("band.csv"))?;
    if cfg.learner != Method::Empirical {
        // Same multipliers for both bands, so the SE ratio is paired.
        let base = AdjustedEstimate::empirical(&p.data, &p.grid)?;
        let base_band = bootstrap_band(&p.data, &p.grid, &base, &functional, &boot)?;
        io::write_band_csv(&base_band, &out.path("band_empirical.csv"))?;
        let reduction = se_reduction(&base_band, &band)?;
        let rows: Vec<Vec<String>> = (0..band.len())
            .map(|j| {
                vec![
                    band.locations[j].to_string(),
                    base_band.se[j].to_string(),
                    band.se[j].to_string(),
                    reduction[j].to_string(),
                ]
            })
            .collect();
        io::write_table_csv(
            &["location", "se_empirical", "se_adjusted", "reduction_pct"],
            &rows,
            &out.path("se_reduction.csv"),
        )?;
    }
    let mut seeds = BTreeMap::new();
    seeds.insert("crossfit".into(), cfg.seed);
    seeds.insert("bootstrap".into(), boot.seed);
    let s = summary(&p);
    out.finish(cfg, seeds, Some(s))
}

fn run_benchmark(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let methods = [
        Method::LinearAdjusted,
        Method::NnSingle,
        Method::NnMulti,
        Method::NnMultiMonotone,
    ];
    let mut rows = Vec::new();
    for &m in &cfg.bench_locations {
        if m == 0 {
            return Err(DteError::InvalidConfig("location count must be >= 1".into()).into());
        }
        let (x, labels) = bench::synthetic_problem(cfg.n, cfg.d_x, m, cfg.seed);
        for method in methods {
            let kind = cfg.learner_kind(method).expect("adjusting method");
            let seconds = bench::time_fit(&kind, x.view(), labels.view(), cfg.seed, cfg.bench_repeats)?;
            eprintln!("benchmark: {:<18} M={m:<4} {seconds:.3}s", method.as_str());
            rows.push(vec![method.as_str().to_string(), m.to_string(), seconds.to_string()]);
        }
    }
    let mut out = Outputs::new(&cfg.out);
    io::write_table_csv(&["method", "locations", "seconds"], &rows, &out.path("benchmark.csv"))?;
    let mut seeds = BTreeMap::new();
    seeds.insert("master".into(), cfg.seed);
    out.finish(cfg, seeds, None)
}
