//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data or precondition, 3 environment
//! (network, credentials, model weights). Failures print one JSON line on
//! stderr: `{"error":"data","code":2,"message":"..."}`.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::{Read as _, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use flakeshot_core::baseline::{predict_sota, train_sota, SotaSample};
use flakeshot_core::fewshot::{train_bundle, EmbeddingProvider, FewShotHyperParams};
use flakeshot_core::harness::report::{
    labeling_row, render_cross_table, render_labeling_table, render_performance_table, LabelingRow, PerformanceRow,
};
use flakeshot_core::harness::{
    pooled_p_values, sample_shots, BaselineTrainer, CrossMatrix, EvalReport, FewShotTrainer, HarnessError, MccvConfig,
    ProjectData, SweepReport,
};
use flakeshot_core::labeler::{self, OverlayRow};
use flakeshot_core::logprep::{reduction_stats, ReductionStats};
use flakeshot_core::{preprocess, seed, LabeledSample, PrepConfig};
use serde::{Deserialize, Serialize};

use crate::bundle::{load_baseline, load_bundle, save_baseline, save_bundle, BundleError};
use crate::config::RunConfig;
use crate::ingest::{FetchOptions, FetchReport, GitlabClient, IngestError, TOKEN_ENV};
use crate::overlay::{read_overlay, write_overlay};
use crate::parallel;
use crate::provider::{Provider, ProviderError, ProviderSpec};
use crate::store::{read_samples, ProjectStore, StoreError};

const DEFAULT_API: &str = "https://gitlab.com/api/v4";
const PREP_FILE: &str = "prep.json";
const TRAINING_IDS_FILE: &str = "training_ids.json";

#[derive(Debug, Parser)]
#[command(name = "flakeshot", version, about = "Few-shot detection of intermittent CI job failures")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Let stochastic commands run without --seed.
    #[arg(long, global = true, conflicts_with = "seed")]
    nondeterministic: bool,
    /// Worker threads for downloads and MCCV repeats.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Experiment manifest (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Download job records and traces into a project store.
    Fetch(FetchArgs),
    /// Label failed jobs with the rerun heuristic and an optional overlay.
    Label(LabelArgs),
    /// Draw a stratified sample for manual labeling.
    Sample(SampleArgs),
    /// Pre-process a directory of raw logs.
    Prep(PrepArgs),
    /// Train a few-shot model bundle.
    Train(TrainArgs),
    /// Classify raw logs with a trained bundle.
    Predict(PredictArgs),
    /// Train or apply the comparator model.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Monte Carlo cross-validation on one project.
    Mccv(MccvArgs),
    /// MCCV over a range of shot counts.
    Sweep(SweepArgs),
    /// One-to-one cross-project evaluation.
    Cross(CrossArgs),
    /// Labeling, performance and cross-project tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct FetchArgs {
    /// Store directory, created if missing. Without it every project in
    /// --config is fetched.
    #[arg(long, requires = "project")]
    store: Option<PathBuf>,
    /// Project id or path, e.g. `veloren/veloren`.
    #[arg(long)]
    project: Option<String>,
    /// API root.
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long, default_value_t = 100)]
    page_size: u32,
    /// Re-fetch jobs already in the store.
    #[arg(long)]
    refresh: bool,
}

#[derive(Debug, Args, Clone, Default)]
struct PrepFlags {
    /// Leave ANSI escapes and section markers in place.
    #[arg(long)]
    keep_ansi: bool,
    /// Turn a numbered rule off; repeatable.
    #[arg(long = "disable-rule", value_name = "N", value_parser = clap::value_parser!(u8).range(1..=7))]
    disable_rules: Vec<u8>,
}

impl PrepFlags {
    fn config(&self) -> PrepConfig {
        let mut c = PrepConfig { ansi_strip: !self.keep_ansi, ..PrepConfig::default() };
        for &n in &self.disable_rules {
            c.disable_rule(usize::from(n));
        }
        c
    }
}

#[derive(Debug, Args)]
struct LabelArgs {
    /// Store directory. Without it every project in --config is labeled.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Manual-label overlay CSV.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Print statistics only; nothing is written.
    #[arg(long)]
    stats: bool,
    #[command(flatten)]
    prep: PrepFlags,
}

#[derive(Debug, Args, Clone, Default)]
struct DataArgs {
    /// Project store holding labeled samples.
    #[arg(long, visible_alias = "project", conflicts_with = "samples")]
    store: Option<PathBuf>,
    /// Labeled samples file (JSON lines).
    #[arg(long)]
    samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Sample size; computed from --confidence and --margin when absent.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    /// Overlay template to write, pre-filled with the automated labels.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PrepArgs {
    /// Directory of raw logs.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for `<job_id>.prep.txt` files and `stats.json`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    prep: PrepFlags,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Examples per class.
    #[arg(long)]
    shots: Option<usize>,
    /// `test` or `pretrained:<model dir>`.
    #[arg(long)]
    provider: Option<String>,
    /// Bundle directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    batch_size: Option<u32>,
    #[arg(long)]
    max_iter: Option<u32>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Raw log file, `-` for stdin; repeatable.
    #[arg(long = "log", required = true)]
    logs: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum BaselineCommand {
    /// Train on automatically labeled samples.
    Train(BaselineTrainArgs),
    /// Score labeled samples with a trained model.
    Predict(BaselinePredictArgs),
}

#[derive(Debug, Args)]
struct BaselineTrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// File of job ids to leave out, one per line (`#` starts a comment).
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Also leave out every manually labeled sample.
    #[arg(long)]
    exclude_manual: bool,
    /// Model directory to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BaselinePredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Restrict to these job ids; repeatable.
    #[arg(long = "job")]
    job_ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrainerKind {
    Fewshot,
    Baseline,
}

#[derive(Debug, Args, Clone, Default)]
struct MccvFlags {
    #[arg(long)]
    repeats: Option<u32>,
    #[arg(long)]
    trials: Option<u32>,
    /// `test` or `pretrained:<model dir>`.
    #[arg(long)]
    provider: Option<String>,
}

#[derive(Debug, Args)]
struct MccvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    flags: MccvFlags,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long, value_enum, default_value_t = TrainerKind::Fewshot)]
    trainer: TrainerKind,
    /// Baseline model directory, for `--trainer baseline`.
    #[arg(long, required_if_eq("trainer", "baseline"))]
    model: Option<PathBuf>,
    /// Write the JSON report here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `NAME=PATH` with PATH a store or samples file; repeatable. Several
    /// projects add pooled p-values.
    #[arg(long = "project-data", value_name = "NAME=PATH", value_parser = parse_named, conflicts_with_all = ["store", "samples"])]
    projects: Vec<(String, PathBuf)>,
    #[command(flatten)]
    flags: MccvFlags,
    /// Shot counts; the largest is the reference. Default 1 to 15.
    #[arg(long = "shots", value_delimiter = ',')]
    shots: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CrossArgs {
    /// `NAME=PATH` with PATH a store or samples file; repeatable. Defaults
    /// to the projects in --config.
    #[arg(long = "project-data", value_name = "NAME=PATH", value_parser = parse_named)]
    projects: Vec<(String, PathBuf)>,
    #[command(flatten)]
    flags: MccvFlags,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
    /// Labeling statistics: `NAME=PATH` (store or samples file); repeatable.
    #[arg(long = "labels", value_name = "NAME=PATH", value_parser = parse_named)]
    labels: Vec<(String, PathBuf)>,
    /// MCCV report: `PROJECT:APPROACH=REPORT`; repeatable.
    #[arg(long = "result", value_name = "PROJECT:APPROACH=REPORT", value_parser = parse_result)]
    results: Vec<(String, String, PathBuf)>,
    /// Matrix written by `cross`.
    #[arg(long)]
    cross: Option<PathBuf>,
    /// Baseline MCCV report for the cross table: `PROJECT=REPORT`; repeatable.
    #[arg(long = "cross-baseline", value_name = "PROJECT=REPORT", value_parser = parse_named)]
    cross_baseline: Vec<(String, PathBuf)>,
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

fn parse_result(s: &str) -> Result<(String, String, PathBuf), String> {
    let (key, path) = s.split_once('=').ok_or_else(|| format!("expected PROJECT:APPROACH=REPORT, got {s:?}"))?;
    match key.split_once(':') {
        Some((p, a)) if !p.is_empty() && !a.is_empty() && !path.is_empty() => Ok((p.into(), a.into(), PathBuf::from(path))),
        _ => Err(format!("expected PROJECT:APPROACH=REPORT, got {s:?}")),
    }
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Environment(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Environment(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data(_) => "data",
            Failure::Environment(_) => "environment",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Environment(m) => m,
        }
    }
}

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn data(e: impl Display) -> Failure {
    Failure::Data(e.to_string())
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        data(e)
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        if e.is_environment() {
            Failure::Environment(e.to_string())
        } else {
            data(e)
        }
    }
}

impl From<BundleError> for Failure {
    fn from(e: BundleError) -> Self {
        if e.is_environment() {
            Failure::Environment(e.to_string())
        } else {
            data(e)
        }
    }
}

impl From<ProviderError> for Failure {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::NotCompiled | ProviderError::Weights(_) => Failure::Environment(e.to_string()),
            ProviderError::Model(_) => data(e),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidConfig(_) => usage(e),
            _ => data(e),
        }
    }
}

struct Ctx<'a> {
    json: bool,
    seed: Option<u64>,
    nondeterministic: bool,
    jobs: usize,
    verbose: u8,
    config: RunConfig,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn seed(&mut self, command: &str) -> Result<u64, Failure> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        if self.config.seed_explicit {
            return Ok(self.config.mccv.master_seed);
        }
        if self.nondeterministic {
            let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
            let s = seed::derive(nanos as u64, &[u64::from(std::process::id())]);
            self.note(&format!("seed {s}"));
            self.seed = Some(s);
            return Ok(s);
        }
        Err(Failure::Usage(format!("{command} is stochastic: pass --seed <n> or --nondeterministic")))
    }

    fn note(&mut self, msg: &str) {
        if self.verbose > 0 {
            let _ = writeln!(self.err, "{msg}");
        }
    }

    /// Prints `value` as JSON under `--json`, `human` otherwise.
    fn emit<T: Serialize>(&mut self, value: &T, human: impl FnOnce() -> String) -> Result<(), Failure> {
        let text = if self.json { to_json(value) } else { human() };
        self.out.write_all(text.as_bytes()).map_err(|e| Failure::Environment(format!("stdout: {e}")))
    }

    fn provider_spec(&self, flag: &Option<String>) -> Result<ProviderSpec, Failure> {
        let s = flag.as_deref().unwrap_or(&self.config.provider);
        ProviderSpec::parse(s).ok_or_else(|| Failure::Usage(format!("provider {s:?} is neither \"test\" nor \"pretrained:<dir>\"")))
    }

    fn mccv_config(&mut self, flags: &MccvFlags, shots: Option<usize>, command: &str) -> Result<MccvConfig, Failure> {
        let mut cfg = self.config.mccv.clone();
        if let Some(r) = flags.repeats {
            cfg.repeats = r;
        }
        if let Some(t) = flags.trials {
            cfg.trials = t;
        }
        if let Some(n) = shots {
            cfg.shots = n;
        }
        cfg.master_seed = self.seed(command)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("outputs serialize") + "\n"
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Runs the tool on `args` (program name first) with the process streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            return report_failure(err, &Failure::Usage(first));
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => 0,
        Err(f) => report_failure(err, &f),
    }
}

fn report_failure(err: &mut dyn Write, f: &Failure) -> i32 {
    let message = f.message().replace(['\n', '\r'], " ");
    #[derive(Serialize)]
    struct Line<'a> {
        error: &'a str,
        code: i32,
        message: &'a str,
    }
    let line = serde_json::to_string(&Line { error: f.kind(), code: f.code(), message: &message }).expect("error line serializes");
    let _ = writeln!(err, "{line}");
    f.code()
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    let jobs = cli.jobs.unwrap_or(config.jobs);
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let mut ctx = Ctx {
        json: cli.json,
        seed: cli.seed,
        nondeterministic: cli.nondeterministic,
        jobs,
        verbose: cli.verbose.max(config.verbosity),
        config,
        out,
        err,
    };
    match cli.command {
        Command::Fetch(a) => fetch(&mut ctx, a),
        Command::Label(a) => label(&mut ctx, a),
        Command::Sample(a) => sample(&mut ctx, a),
        Command::Prep(a) => prep(&mut ctx, a),
        Command::Train(a) => train(&mut ctx, a),
        Command::Predict(a) => predict(&mut ctx, a),
        Command::Baseline(BaselineCommand::Train(a)) => baseline_train(&mut ctx, a),
        Command::Baseline(BaselineCommand::Predict(a)) => baseline_predict(&mut ctx, a),
        Command::Mccv(a) => mccv(&mut ctx, a),
        Command::Sweep(a) => sweep(&mut ctx, a),
        Command::Cross(a) => cross(&mut ctx, a),
        Command::Report(a) => report(&mut ctx, a),
    }
}

// ---------------------------------------------------------------------------
// data access

/// Samples file behind a store directory or a samples path.
fn samples_path(path: &Path) -> Result<PathBuf, Failure> {
    if path.is_dir() {
        Ok(ProjectStore::open(path)?.samples_path())
    } else {
        Ok(path.to_path_buf())
    }
}

fn read_samples_at(path: &Path) -> Result<Vec<LabeledSample>, Failure> {
    let file = samples_path(path)?;
    if !file.is_file() {
        return Err(data(format!("{}: no labeled samples (run `label` first)", file.display())));
    }
    Ok(read_samples(&file)?)
}

/// Pre-processing settings recorded by `label` next to the samples.
fn prep_for(path: &Path) -> Result<PrepConfig, Failure> {
    let file = samples_path(path)?;
    let sidecar = file.with_file_name(PREP_FILE);
    if !sidecar.is_file() {
        return Ok(PrepConfig::default());
    }
    let text = fs::read_to_string(&sidecar).map_err(|e| data(format!("{}: {e}", sidecar.display())))?;
    serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", sidecar.display())))
}

struct Dataset {
    name: String,
    path: PathBuf,
    samples: Vec<LabeledSample>,
}

fn dataset(ctx: &Ctx<'_>, d: &DataArgs) -> Result<Dataset, Failure> {
    let path = match (&d.store, &d.samples) {
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => match ctx.config.projects.as_slice() {
            [one] => one.store.clone(),
            _ => return Err(usage("pass --store or --samples (or a --config with exactly one project)")),
        },
    };
    let samples = read_samples_at(&path)?;
    let name = samples.first().map(|s| s.project_id.clone()).unwrap_or_else(|| path.display().to_string());
    Ok(Dataset { name, path, samples })
}

/// The manually labeled samples when there are any, all samples otherwise.
fn evaluation_set(ctx: &mut Ctx<'_>, name: &str, samples: Vec<LabeledSample>) -> Vec<LabeledSample> {
    if samples.iter().any(|s| s.manual_label.is_some()) {
        samples.into_iter().filter(|s| s.manual_label.is_some()).collect()
    } else {
        ctx.note(&format!("{name}: no manual labels, evaluating against automated labels"));
        samples
    }
}

fn fewshot_trainer(spec: &ProviderSpec, prep: PrepConfig) -> Result<FewShotTrainer<Provider>, Failure> {
    Ok(FewShotTrainer { base: Provider::load(spec)?, prep_config: prep })
}

// ---------------------------------------------------------------------------
// fetch, label, sample, prep

#[derive(Serialize)]
struct FetchOutput {
    project_id: String,
    store: PathBuf,
    #[serde(flatten)]
    report: FetchReport,
}

fn fetch(ctx: &mut Ctx<'_>, a: FetchArgs) -> Result<(), Failure> {
    let targets: Vec<(String, PathBuf, String)> = match (&a.store, &a.project) {
        (Some(store), Some(project)) => {
            vec![(project.clone(), store.clone(), a.base_url.clone().unwrap_or_else(|| DEFAULT_API.into()))]
        }
        _ if !ctx.config.projects.is_empty() => ctx
            .config
            .projects
            .iter()
            .map(|p| {
                let base = a.base_url.clone().or_else(|| p.base_url.clone()).unwrap_or_else(|| DEFAULT_API.into());
                (p.id.clone(), p.store.clone(), base)
            })
            .collect(),
        _ => return Err(usage("pass --store and --project, or a --config listing projects")),
    };
    let token = std::env::var(TOKEN_ENV).unwrap_or_default();
    if token.is_empty() {
        ctx.note(&format!("{TOKEN_ENV} not set, fetching anonymously"));
    }
    let opts = FetchOptions { page_size: a.page_size, refresh: a.refresh, parallelism: ctx.jobs, ..FetchOptions::default() };
    let mut results = Vec::new();
    for (project_id, store, base) in targets {
        let client = GitlabClient::new(&base, &token, opts.clone()).map_err(|e| match e {
            IngestError::PageSize(_) | IngestError::BaseUrl(_) => usage(e),
            other => other.into(),
        })?;
        let st = ProjectStore::create(&store)?;
        let report = client.fetch_jobs(&project_id, &st)?;
        ctx.note(&format!("{project_id}: {} new jobs over {} pages", report.new_jobs, report.pages));
        results.push(FetchOutput { project_id, store, report });
    }
    ctx.emit(&results, || {
        results
            .iter()
            .map(|r| {
                format!(
                    "{}: {} new, {} updated, {} discarded, {} missing logs, {} empty logs\n",
                    r.project_id, r.report.new_jobs, r.report.updated_jobs, r.report.discarded, r.report.missing_logs, r.report.empty_logs
                )
            })
            .collect()
    })
}

#[derive(Serialize)]
struct LabelOutput {
    project_id: String,
    store: PathBuf,
    n_failed: usize,
    n_brown: usize,
    bfr: f64,
    sample_size: u64,
    error_rate: Option<f64>,
    n_manual: usize,
    missing_logs: usize,
    samples_written: bool,
}

fn label_store(store: &ProjectStore, overlay: Option<&Path>, prep: &PrepConfig) -> Result<(Vec<LabeledSample>, usize), Failure> {
    let jobs = store.jobs()?;
    let excluded = store.excluded()?;
    let groups = labeler::build_rerun_groups(&jobs);
    let mut read_error = None;
    let outcome = labeler::auto_label(&groups, &jobs, |job| {
        if excluded.contains(&job.job_id) {
            return None;
        }
        let rel = job.log_path.as_deref()?;
        match store.read_log(rel) {
            Ok(raw) => Some(preprocess(&raw, prep).text),
            Err(StoreError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => {
                read_error.get_or_insert(e);
                None
            }
        }
    });
    if let Some(e) = read_error {
        return Err(e.into());
    }
    let labels = labeler::auto_labels(&groups);
    let metrics = flakeshot_core::baseline::compute_all_job_metrics(&jobs, &labels);
    let mut samples = outcome.samples;
    for s in &mut samples {
        s.metrics = metrics.get(&s.job_id).copied();
    }
    if let Some(path) = overlay {
        let rows = read_overlay(path).map_err(data)?;
        samples = labeler::apply_manual_overlay(samples, &rows).map_err(data)?;
    }
    Ok((samples, outcome.missing_logs))
}

fn label(ctx: &mut Ctx<'_>, a: LabelArgs) -> Result<(), Failure> {
    let targets: Vec<(Option<String>, PathBuf, Option<PathBuf>)> = match &a.store {
        Some(s) => vec![(None, s.clone(), a.overlay.clone())],
        None if !ctx.config.projects.is_empty() => ctx
            .config
            .projects
            .iter()
            .map(|p| (Some(p.id.clone()), p.store.clone(), a.overlay.clone().or_else(|| p.overlay.clone())))
            .collect(),
        None => return Err(usage("pass --store or a --config listing projects")),
    };
    let prep = a.prep.config();
    let mut results = Vec::new();
    for (id, root, overlay) in targets {
        let store = ProjectStore::open(&root)?;
        let (samples, missing_logs) = label_store(&store, overlay.as_deref(), &prep)?;
        let stats = labeler::project_stats(&samples).map_err(|e| data(format!("{}: {e}", root.display())))?;
        let project_id = id
            .or_else(|| samples.first().map(|s| s.project_id.clone()))
            .unwrap_or_else(|| root.display().to_string());
        if !a.stats {
            store.save_samples(&samples)?;
            write_file(&root.join(PREP_FILE), &to_json(&prep))?;
        }
        results.push(LabelOutput {
            project_id,
            store: root,
            n_failed: stats.n_failed,
            n_brown: stats.n_brown,
            bfr: stats.bfr,
            sample_size: labeler::sample_size(stats.n_failed as u64, 0.95, 0.05).map_err(data)?,
            error_rate: stats.error_rate,
            n_manual: stats.n,
            missing_logs,
            samples_written: !a.stats,
        });
    }
    ctx.emit(&results, || {
        results
            .iter()
            .map(|r| {
                let e = r.error_rate.map(|e| format!(", error rate {:.2}% over {} manual labels", e * 100.0, r.n_manual)).unwrap_or_default();
                format!(
                    "{}: {} failed, {} brown, bfr {}, sample size {}{e}\n",
                    r.project_id, r.n_failed, r.n_brown, r.bfr, r.sample_size
                )
            })
            .collect()
    })
}

#[derive(Serialize)]
struct SampleOutput {
    population: usize,
    size: usize,
    intermittent: usize,
    regular: usize,
    seed: u64,
    job_ids: Vec<u64>,
    template: Option<PathBuf>,
}

fn sample(ctx: &mut Ctx<'_>, a: SampleArgs) -> Result<(), Failure> {
    let seed = ctx.seed("sample")?;
    let ds = dataset(ctx, &a.data)?;
    let size = match a.size {
        Some(n) => n,
        None => labeler::sample_size(ds.samples.len() as u64, a.confidence, a.margin).map_err(usage)? as usize,
    };
    let chosen = labeler::stratified_sample(&ds.samples, size, seed).map_err(data)?;
    if let Some(out) = &a.out {
        let rows: Vec<OverlayRow> = chosen
            .iter()
            .map(|s| OverlayRow { job_id: s.job_id, manual_label: s.auto_label, justification: String::new(), category: String::new() })
            .collect();
        write_overlay(out, &rows).map_err(data)?;
    }
    let intermittent = chosen.iter().filter(|s| s.auto_label.is_intermittent()).count();
    let o = SampleOutput {
        population: ds.samples.len(),
        size: chosen.len(),
        intermittent,
        regular: chosen.len() - intermittent,
        seed,
        job_ids: chosen.iter().map(|s| s.job_id).collect(),
        template: a.out,
    };
    ctx.emit(&o, || {
        format!("sampled {} of {} failures ({} intermittent, {} regular)\n", o.size, o.population, o.intermittent, o.regular)
    })
}

#[derive(Serialize)]
struct PrepOutput {
    files: usize,
    original_bytes: usize,
    processed_bytes: usize,
    reduction: ReductionStats,
}

fn prep(ctx: &mut Ctx<'_>, a: PrepArgs) -> Result<(), Failure> {
    let cfg = a.prep.config();
    let entries = fs::read_dir(&a.input).map_err(|e| data(format!("{}: {e}", a.input.display())))?;
    let mut inputs: Vec<PathBuf> = entries.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.is_file()).collect();
    inputs.sort();
    fs::create_dir_all(&a.out).map_err(|e| data(format!("{}: {e}", a.out.display())))?;
    let mut logs = Vec::with_capacity(inputs.len());
    for path in &inputs {
        let bytes = fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let processed = preprocess(&String::from_utf8_lossy(&bytes), &cfg);
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("log");
        let stem = name.strip_suffix(".log").or_else(|| name.strip_suffix(".txt")).unwrap_or(name);
        write_file(&a.out.join(format!("{stem}.prep.txt")), &processed.text)?;
        logs.push(processed);
    }
    let reduction = reduction_stats(&logs).map_err(|e| data(format!("{}: {e}", a.input.display())))?;
    let o = PrepOutput {
        files: logs.len(),
        original_bytes: logs.iter().map(|l| l.original_bytes).sum(),
        processed_bytes: logs.iter().map(|l| l.processed_bytes).sum(),
        reduction,
    };
    write_file(&a.out.join("stats.json"), &to_json(&o))?;
    ctx.emit(&o, || {
        format!("{} logs, mean reduction {:.1}% (median {:.1}%)\n", o.files, o.reduction.mean * 100.0, o.reduction.median * 100.0)
    })
}

// ---------------------------------------------------------------------------
// models

#[derive(Serialize)]
struct TrainOutput {
    bundle: PathBuf,
    shots: usize,
    seed: u64,
    provider_model_id: String,
    train_job_ids: Vec<u64>,
    hyperparams: FewShotHyperParams,
}

fn train(ctx: &mut Ctx<'_>, a: TrainArgs) -> Result<(), Failure> {
    let seed = ctx.seed("train")?;
    let spec = ctx.provider_spec(&a.provider)?;
    let shots = a.shots.unwrap_or(ctx.config.mccv.shots);
    let ds = dataset(ctx, &a.data)?;
    let prep_cfg = prep_for(&ds.path)?;
    let pool = evaluation_set(ctx, &ds.name, ds.samples);
    let defaults = FewShotHyperParams::default();
    let hp = FewShotHyperParams {
        body_learning_rate: a.learning_rate.unwrap_or(defaults.body_learning_rate),
        num_epochs: a.epochs.unwrap_or(defaults.num_epochs),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        max_iter: a.max_iter.unwrap_or(defaults.max_iter),
        seed,
        ..defaults
    };
    hp.validate().map_err(usage)?;
    let labels: Vec<_> = pool.iter().map(LabeledSample::effective_label).collect();
    let all: Vec<usize> = (0..pool.len()).collect();
    let chosen = sample_shots(&all, &labels, shots, seed::derive(seed, &[1]))?;
    let refs: Vec<&LabeledSample> = chosen.iter().map(|&i| &pool[i]).collect();
    let provider = Provider::load(&spec)?;
    let bundle = train_bundle(&provider, &refs, &hp, &prep_cfg).map_err(data)?;
    save_bundle(&bundle, &a.out)?;
    let o = TrainOutput {
        bundle: a.out,
        shots,
        seed,
        provider_model_id: bundle.provider.model_id().to_string(),
        train_job_ids: bundle.metadata.train_job_ids.clone(),
        hyperparams: hp,
    };
    ctx.emit(&o, || format!("trained {}-shot bundle in {}\n", o.shots, o.bundle.display()))
}

#[derive(Serialize)]
struct PredictItem {
    log: String,
    label: flakeshot_core::Label,
    probability: f64,
}

#[derive(Serialize)]
struct PredictOutput {
    predictions: Vec<PredictItem>,
}

fn predict(ctx: &mut Ctx<'_>, a: PredictArgs) -> Result<(), Failure> {
    let bundle = load_bundle(&a.bundle)?;
    let mut predictions = Vec::with_capacity(a.logs.len());
    for path in &a.logs {
        let (name, bytes) = if path.as_os_str() == "-" {
            let mut buf = Vec::new();
            std::io::stdin().read_to_end(&mut buf).map_err(|e| data(format!("stdin: {e}")))?;
            ("-".to_string(), buf)
        } else {
            (path.display().to_string(), fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?)
        };
        let p = bundle.predict(&String::from_utf8_lossy(&bytes)).map_err(|e| data(format!("{name}: {e}")))?;
        predictions.push(PredictItem { log: name, label: p.label, probability: p.probability });
    }
    let o = PredictOutput { predictions };
    ctx.emit(&o, || o.predictions.iter().map(|p| format!("{}\t{}\t{:.4}\n", p.log, p.label, p.probability)).collect())
}

fn read_id_file(path: &Path) -> Result<BTreeSet<u64>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let id = line.parse().map_err(|_| data(format!("{}:{}: not a job id: {line:?}", path.display(), i + 1)))?;
        ids.insert(id);
    }
    Ok(ids)
}

#[derive(Serialize)]
struct BaselineTrainOutput {
    model: PathBuf,
    training_samples: usize,
    excluded: usize,
    seed: u64,
    hyperparams: flakeshot_core::baseline::SotaHyperParams,
    w1: f64,
    w2: f64,
    cv_f1: Option<f64>,
}

fn baseline_train(ctx: &mut Ctx<'_>, a: BaselineTrainArgs) -> Result<(), Failure> {
    let seed = ctx.seed("baseline train")?;
    ctx.config.baseline.validate().map_err(usage)?;
    let ds = dataset(ctx, &a.data)?;
    let mut exclude = match &a.exclude {
        Some(p) => read_id_file(p)?,
        None => BTreeSet::new(),
    };
    if a.exclude_manual {
        exclude.extend(ds.samples.iter().filter(|s| s.manual_label.is_some()).map(|s| s.job_id));
    }
    let kept: Vec<&LabeledSample> = ds.samples.iter().filter(|s| !exclude.contains(&s.job_id)).collect();
    let sota = kept.iter().map(|s| SotaSample::from_auto_labeled(s)).collect::<Result<Vec<_>, _>>().map_err(data)?;
    let model = train_sota(&sota, &ctx.config.baseline, seed).map_err(data)?;
    save_baseline(&model, &a.out)?;
    let ids: Vec<u64> = kept.iter().map(|s| s.job_id).collect();
    write_file(&a.out.join(TRAINING_IDS_FILE), &to_json(&ids))?;
    let o = BaselineTrainOutput {
        model: a.out,
        training_samples: kept.len(),
        excluded: ds.samples.len() - kept.len(),
        seed,
        hyperparams: model.hyperparams,
        w1: model.w1,
        w2: model.w2,
        cv_f1: model.cv_f1,
    };
    ctx.emit(&o, || format!("trained baseline on {} samples in {}\n", o.training_samples, o.model.display()))
}

fn load_baseline_trainer(dir: &Path) -> Result<BaselineTrainer, Failure> {
    let model = load_baseline(dir)?;
    let ids_path = dir.join(TRAINING_IDS_FILE);
    let text = fs::read_to_string(&ids_path).map_err(|e| data(format!("{}: {e}", ids_path.display())))?;
    let ids: Vec<u64> = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", ids_path.display())))?;
    Ok(BaselineTrainer { model, training_ids: ids.into_iter().collect() })
}

#[derive(Serialize)]
struct BaselinePrediction {
    job_id: u64,
    label: flakeshot_core::Label,
    score: f64,
    p1: f64,
    p2: f64,
}

#[derive(Serialize)]
struct BaselinePredictOutput {
    predictions: Vec<BaselinePrediction>,
}

fn baseline_predict(ctx: &mut Ctx<'_>, a: BaselinePredictArgs) -> Result<(), Failure> {
    let model = load_baseline(&a.model)?;
    let ds = dataset(ctx, &a.data)?;
    let wanted: BTreeSet<u64> = a.job_ids.iter().copied().collect();
    let known: BTreeSet<u64> = ds.samples.iter().map(|s| s.job_id).collect();
    if let Some(missing) = wanted.difference(&known).next() {
        return Err(data(format!("job {missing} is not among the labeled samples")));
    }
    let mut predictions = Vec::new();
    for s in ds.samples.iter().filter(|s| wanted.is_empty() || wanted.contains(&s.job_id)) {
        let p = predict_sota(&model, &s.processed_log, s.metrics.as_ref()).map_err(|e| data(format!("job {}: {e}", s.job_id)))?;
        predictions.push(BaselinePrediction { job_id: s.job_id, label: p.label, score: p.score, p1: p.p1, p2: p.p2 });
    }
    let o = BaselinePredictOutput { predictions };
    ctx.emit(&o, || o.predictions.iter().map(|p| format!("{}\t{}\t{:.4}\n", p.job_id, p.label, p.score)).collect())
}

// ---------------------------------------------------------------------------
// evaluation

fn summary_line<P>(r: &EvalReport<P>) -> String {
    format!(
        "{}: F1 {:.1} ± {:.1} over {} repeats ({} shots)\n",
        r.trainer,
        r.mean_f1 * 100.0,
        r.std_f1 * 100.0,
        r.per_repeat.len(),
        r.config.shots
    )
}

fn finish_report<T: Serialize>(ctx: &mut Ctx<'_>, value: &T, out: Option<&Path>, human: String) -> Result<(), Failure> {
    let text = to_json(value);
    if let Some(path) = out {
        write_file(path, &text)?;
    }
    ctx.emit(value, || human)
}

fn mccv(ctx: &mut Ctx<'_>, a: MccvArgs) -> Result<(), Failure> {
    let cfg = ctx.mccv_config(&a.flags, a.shots, "mccv")?;
    let ds = dataset(ctx, &a.data)?;
    let prep_cfg = prep_for(&ds.path)?;
    let set = evaluation_set(ctx, &ds.name, ds.samples);
    match a.trainer {
        TrainerKind::Fewshot => {
            let trainer = fewshot_trainer(&ctx.provider_spec(&a.flags.provider)?, prep_cfg)?;
            let report = parallel::mccv(&set, &cfg, &trainer, ctx.jobs)?;
            finish_report(ctx, &report, a.out.as_deref(), summary_line(&report))
        }
        TrainerKind::Baseline => {
            let dir = a.model.as_deref().ok_or_else(|| usage("--trainer baseline needs --model"))?;
            let trainer = load_baseline_trainer(dir)?;
            let report = parallel::mccv(&set, &cfg, &trainer, ctx.jobs)?;
            finish_report(ctx, &report, a.out.as_deref(), summary_line(&report))
        }
    }
}

#[derive(Serialize)]
struct NamedSweep {
    name: String,
    sweep: SweepReport<FewShotHyperParams>,
}

#[derive(Serialize)]
struct PooledPoint {
    shots: usize,
    p_value: f64,
}

#[derive(Serialize)]
struct SweepOutput {
    projects: Vec<NamedSweep>,
    pooled: Vec<PooledPoint>,
}

fn sweep(ctx: &mut Ctx<'_>, a: SweepArgs) -> Result<(), Failure> {
    let cfg = ctx.mccv_config(&a.flags, None, "sweep")?;
    let shots: Vec<usize> = if a.shots.is_empty() { (1..=15).collect() } else { a.shots.clone() };
    if shots.contains(&0) {
        return Err(usage("shot counts must be at least 1"));
    }
    let datasets = if a.projects.is_empty() {
        vec![dataset(ctx, &a.data)?]
    } else {
        a.projects
            .iter()
            .map(|(name, path)| Ok(Dataset { name: name.clone(), path: path.clone(), samples: read_samples_at(path)? }))
            .collect::<Result<Vec<_>, Failure>>()?
    };
    let spec = ctx.provider_spec(&a.flags.provider)?;
    let mut projects = Vec::new();
    for ds in datasets {
        let trainer = fewshot_trainer(&spec, prep_for(&ds.path)?)?;
        let set = evaluation_set(ctx, &ds.name, ds.samples);
        ctx.note(&format!("{}: sweeping {} shot counts", ds.name, shots.len()));
        let sweep = parallel::shots_sweep(&set, &cfg, &shots, &trainer, ctx.jobs)?;
        projects.push(NamedSweep { name: ds.name, sweep });
    }
    let pooled = if projects.len() > 1 {
        let sweeps: Vec<_> = projects.iter().map(|p| p.sweep.clone()).collect();
        pooled_p_values(&sweeps)?.into_iter().map(|(shots, p_value)| PooledPoint { shots, p_value }).collect()
    } else {
        Vec::new()
    };
    let o = SweepOutput { projects, pooled };
    let mut human = String::new();
    for p in &o.projects {
        for pt in &p.sweep.points {
            let pv = pt.p_value.map(|v| format!(", p = {v:.3}")).unwrap_or_default();
            human += &format!("{}\t{} shots\tF1 {:.1} ± {:.1}{pv}\n", p.name, pt.shots, pt.report.mean_f1 * 100.0, pt.report.std_f1 * 100.0);
        }
    }
    for pt in &o.pooled {
        human += &format!("pooled\t{} shots\tp = {:.3}\n", pt.shots, pt.p_value);
    }
    finish_report(ctx, &o, a.out.as_deref(), human)
}

fn cross(ctx: &mut Ctx<'_>, a: CrossArgs) -> Result<(), Failure> {
    let cfg = ctx.mccv_config(&a.flags, a.shots, "cross")?;
    let named: Vec<(String, PathBuf)> = if a.projects.is_empty() {
        ctx.config.projects.iter().map(|p| (p.id.clone(), p.store.clone())).collect()
    } else {
        a.projects.clone()
    };
    if named.is_empty() {
        return Err(usage("pass --project-data NAME=PATH or a --config listing projects"));
    }
    let mut loaded = Vec::new();
    for (name, path) in &named {
        let samples = read_samples_at(path)?;
        loaded.push((name.clone(), evaluation_set(ctx, name, samples)));
    }
    let prep_cfg = prep_for(&named[0].1)?;
    let trainer = fewshot_trainer(&ctx.provider_spec(&a.flags.provider)?, prep_cfg)?;
    let projects: Vec<ProjectData<'_>> = loaded.iter().map(|(n, s)| ProjectData { name: n.clone(), samples: s }).collect();
    let matrix = parallel::cross_project(&projects, &cfg, &trainer, ctx.jobs)?;
    let human = render_cross_table(&matrix, &BTreeMap::new());
    finish_report(ctx, &matrix, a.out.as_deref(), human)
}

#[derive(Serialize)]
struct PerformanceOutput {
    approaches: Vec<String>,
    rows: Vec<PerformanceRow>,
}

#[derive(Serialize)]
struct CrossOutput {
    matrix: CrossMatrix,
    baseline: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct ReportOutput {
    labeling: Vec<LabelingRow>,
    performance: Option<PerformanceOutput>,
    cross: Option<CrossOutput>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn report(ctx: &mut Ctx<'_>, a: ReportArgs) -> Result<(), Failure> {
    if a.labels.is_empty() && a.results.is_empty() && a.cross.is_none() {
        return Err(usage("nothing to report: pass --labels, --result or --cross"));
    }
    let mut labeling = Vec::new();
    for (name, path) in &a.labels {
        labeling.push(labeling_row(name, &read_samples_at(path)?));
    }
    let performance = if a.results.is_empty() {
        None
    } else {
        let mut approaches: Vec<String> = Vec::new();
        let mut projects: Vec<String> = Vec::new();
        let mut cells = BTreeMap::new();
        for (project, approach, path) in &a.results {
            let r: EvalReport<serde_json::Value> = read_json(path)?;
            if !approaches.contains(approach) {
                approaches.push(approach.clone());
            }
            if !projects.contains(project) {
                projects.push(project.clone());
            }
            cells.insert((project.clone(), approach.clone()), r.summary);
        }
        let rows = projects
            .iter()
            .map(|p| PerformanceRow {
                project: p.clone(),
                columns: approaches.iter().map(|a| cells.get(&(p.clone(), a.clone())).copied()).collect(),
            })
            .collect();
        Some(PerformanceOutput { approaches, rows })
    };
    let cross = match &a.cross {
        None => None,
        Some(path) => {
            let matrix: CrossMatrix = read_json(path)?;
            let mut baseline = BTreeMap::new();
            for (project, p) in &a.cross_baseline {
                let r: EvalReport<serde_json::Value> = read_json(p)?;
                baseline.insert(project.clone(), r.mean_f1);
            }
            Some(CrossOutput { matrix, baseline })
        }
    };
    let o = ReportOutput { labeling, performance, cross };
    if a.format == Format::Json {
        ctx.json = true;
    }
    ctx.emit(&o, || {
        let mut md = Vec::new();
        if !o.labeling.is_empty() {
            md.push(format!("## Labeling\n\n{}", render_labeling_table(&o.labeling)));
        }
        if let Some(p) = &o.performance {
            let names: Vec<&str> = p.approaches.iter().map(String::as_str).collect();
            md.push(format!("## Performance\n\n{}", render_performance_table(&names, &p.rows)));
        }
        if let Some(c) = &o.cross {
            md.push(format!("## Cross-project\n\n{}", render_cross_table(&c.matrix, &c.baseline)));
        }
        md.join("\n")
    })
}
