//! The `smap` command line. [`dispatch`] runs one invocation against
//! arbitrary output streams so it can be driven in-process.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;
use smap_core::allocator::{soma_topk, AllocOptions, AttentionScoreFn, ScoreFn, ScoreTable, TopK};
use smap_core::baselines::BaselineError;
use smap_core::eval::{generate_synthetic, run_experiment, EvalError, ExperimentConfig, SynthConfig};
use smap_core::mnemonic::{allocate_with_cache, MnemonicCenter, MnemonicError};
use smap_core::registry::{Dataset, Entity, Model, PerformanceRecord, Registry, RegistryError, Scenario};
use smap_core::scorer::{
    gradient_check, read_samples_csv, read_scorer, train_scorer, write_samples_csv, write_scorer, Hyperparams,
    ScorerError, ScorerParams, TrainedScorer, TrainingLog,
};
use smap_core::Scalar;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONSTRAINT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    Validation,
    ConstraintViolation,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => EXIT_VALIDATION,
            ErrorKind::ConstraintViolation => EXIT_CONSTRAINT,
            ErrorKind::Numeric => EXIT_NUMERIC,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Numeric,
            message: message.into(),
        }
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        let kind = match e {
            RegistryError::DatasetConstraintViolation { .. } | RegistryError::ModelConstraintViolation { .. } => {
                ErrorKind::ConstraintViolation
            }
            _ => ErrorKind::Validation,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<ScorerError> for CliError {
    fn from(e: ScorerError) -> Self {
        let kind = match e {
            ScorerError::NonFinite { .. } | ScorerError::NonFiniteLoss { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Validation,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        let kind = match e {
            BaselineError::NonFiniteLoss { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Validation,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<MnemonicError> for CliError {
    fn from(e: MnemonicError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Registry(e) => e.into(),
            EvalError::Scorer(e) => e.into(),
            EvalError::Baseline(e) => e.into(),
            other => Self::validation(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(name = "smap", version, about = "Scenario-to-model allocation")]
struct Cli {
    /// File of `key = value` lines supplying default flags; command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output format for results and errors.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inspect or edit a registry document.
    Registry {
        #[command(subcommand)]
        action: RegistryCommand,
    },
    /// Train the attention scorer on a labeled-sample CSV.
    Train(TrainArgs),
    /// Allocate one model per scenario, consulting the cache.
    Allocate(AllocateArgs),
    /// Run repeated trials on the synthetic benchmark.
    Evaluate(EvaluateArgs),
    /// Emit a synthetic labeled-sample CSV and its registry.
    Synth(SynthArgs),
    /// Inspect or clear the assignment cache.
    Cache {
        #[command(subcommand)]
        action: CacheCommand,
    },
    /// Compare analytic and finite-difference gradients on seeded networks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EntityKind {
    Scenario,
    Dataset,
    Model,
    Performance,
}

#[derive(Debug, Subcommand)]
enum RegistryCommand {
    /// Add or replace entities read from JSON files (an object or an array).
    Add {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long, value_enum)]
        kind: EntityKind,
        /// JSON files; `-` is not accepted.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// List registered entities.
    List {
        #[arg(long)]
        registry: PathBuf,
    },
    /// Check every invariant and reference; exits 1 on the first violation.
    Validate {
        #[arg(long)]
        registry: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum CacheCommand {
    /// Print cached assignments.
    Show {
        #[arg(long, default_value = "./smap-cache.jsonl")]
        cache: PathBuf,
    },
    /// Remove every cached assignment.
    Clear {
        #[arg(long, default_value = "./smap-cache.jsonl")]
        cache: PathBuf,
    },
}

#[derive(Debug, Args)]
struct HyperArgs {
    /// Attention heads.
    #[arg(long, default_value_t = Hyperparams::default().heads)]
    heads: usize,
    /// Attention blocks.
    #[arg(long, default_value_t = Hyperparams::default().blocks)]
    blocks: usize,
    /// Per-head dimension.
    #[arg(long, default_value_t = Hyperparams::default().head_dim)]
    head_dim: usize,
    /// Hidden width of the output head.
    #[arg(long, default_value_t = Hyperparams::default().hidden)]
    hidden: usize,
    #[arg(long, default_value_t = Hyperparams::default().batch_size)]
    batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = Hyperparams::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = Hyperparams::default().epochs)]
    epochs: usize,
    /// Arithmetic used for training.
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
}

impl HyperArgs {
    fn hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            heads: self.heads,
            blocks: self.blocks,
            head_dim: self.head_dim,
            hidden: self.hidden,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            epochs: self.epochs,
            seed,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training samples (CSV).
    #[arg(long)]
    samples: PathBuf,
    /// Validation samples (CSV); without them the best training epoch is kept.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output parameter file.
    #[arg(long)]
    params: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("scorer").required(true).args(["params", "scores"])))]
struct AllocateArgs {
    #[arg(long)]
    registry: PathBuf,
    /// Trained scorer parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// JSON score table `{"scores": {scenario: {model: score}}}` used instead of a trained scorer.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value = "./smap-cache.jsonl")]
    cache: PathBuf,
    /// Score every type-matching dataset rather than only the most downloaded.
    #[arg(long)]
    search_datasets: bool,
    /// List the k best models per scenario instead of allocating (bypasses the cache).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
}

#[derive(Debug, Args)]
struct SynthSettings {
    #[arg(long, default_value_t = SynthConfig::default().n_scenarios)]
    n_scenarios: usize,
    #[arg(long, default_value_t = SynthConfig::default().n_models_per_scenario)]
    models_per_scenario: usize,
    /// Noise added to the planted utility.
    #[arg(long, default_value_t = SynthConfig::default().noise_sigma)]
    sigma: f64,
}

impl SynthSettings {
    fn config(&self) -> SynthConfig {
        SynthConfig {
            n_scenarios: self.n_scenarios,
            n_models_per_scenario: self.models_per_scenario,
            noise_sigma: self.sigma,
            ..SynthConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, default_value_t = ExperimentConfig::default().trials)]
    trials: usize,
    #[command(flatten)]
    synth: SynthSettings,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    synth: SynthSettings,
    /// Labeled samples CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the generated registry.
    #[arg(long)]
    registry_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 1)]
    blocks: usize,
    #[arg(long, default_value_t = 2)]
    head_dim: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    /// Number of seeded (network, input) pairs.
    #[arg(long, default_value_t = 5)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    format: Format,
}

impl Io<'_> {
    fn print(&mut self, text: &str) -> CliResult {
        self.out
            .write_all(text.as_bytes())
            .map_err(|e| CliError::validation(format!("stdout: {e}")))
    }

    fn note(&mut self, text: &str) {
        let _ = writeln!(self.err, "{text}");
    }
}

fn command_tree() -> clap::Command {
    fn override_all(cmd: clap::Command) -> clap::Command {
        let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
        let mut cmd = cmd.args_override_self(true);
        for n in names {
            cmd = cmd.mut_subcommand(n, override_all);
        }
        cmd
    }
    override_all(Cli::command())
}

/// Turns `key = value` lines into flags. `true` becomes a bare switch and
/// `false` is dropped.
fn config_args(text: &str, path: &Path) -> CliResult<Vec<OsString>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key == "config" {
            return Err(CliError::validation(format!(
                "{}:{}: nested config",
                path.display(),
                n + 1
            )));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => {
                out.push(format!("--{key}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

const NESTED: [&str; 2] = ["registry", "cache"];

/// Inserts config-file flags right after the subcommand path so that flags
/// given on the command line, which come later, override them.
fn expand_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let pos = argv.iter().position(|a| a == "--config");
    let inline = argv
        .iter()
        .position(|a| a.to_str().is_some_and(|s| s.starts_with("--config=")));
    let path: PathBuf = match (pos, inline) {
        (Some(i), _) => match argv.get(i + 1) {
            Some(p) => PathBuf::from(p),
            None => return Ok(argv),
        },
        (None, Some(i)) => PathBuf::from(&argv[i].to_str().expect("checked utf-8")["--config=".len()..]),
        (None, None) => return Ok(argv),
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let extra = config_args(&text, &path)?;

    let names: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    let mut insert_at = argv.len();
    if let Some(i) = argv.iter().skip(1).position(|a| names.iter().any(|n| a == n.as_str())) {
        let i = i + 1;
        insert_at = i + 1;
        if NESTED.iter().any(|n| argv[i] == *n) && argv.len() > i + 1 && !argv[i + 1].to_string_lossy().starts_with('-')
        {
            insert_at = i + 2;
        }
    }
    let mut out = argv;
    out.splice(insert_at..insert_at, extra);
    Ok(out)
}

/// Runs one invocation and returns its exit code.
pub fn dispatch<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let wants_json =
        argv.windows(2).any(|w| w[0] == "--format" && w[1] == "json") || argv.iter().any(|a| a == "--format=json");
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => return report_error(err, if wants_json { Format::Json } else { Format::Table }, &e),
    };
    let matches = match command_tree().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind as K;
            let text = e.render().to_string();
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_VALIDATION
                }
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = err.write_all(e.render().to_string().as_bytes());
            return EXIT_VALIDATION;
        }
    };
    let format = cli.format;
    let mut io = Io { out, err, format };
    match run(cli, &mut io) {
        Ok(code) => code,
        Err(e) => report_error(io.err, format, &e),
    }
}

fn report_error(err: &mut dyn Write, format: Format, e: &CliError) -> i32 {
    let code = e.kind.exit_code();
    match format {
        Format::Json => {
            let body = serde_json::json!({
                "error": { "kind": e.kind, "exit_code": code, "message": e.message }
            });
            let _ = writeln!(err, "{body}");
        }
        Format::Table => {
            let _ = writeln!(err, "error: {}", e.message);
        }
    }
    code
}

fn run(cli: Cli, io: &mut Io) -> CliResult<i32> {
    let seed = cli.seed;
    match cli.command {
        Command::Registry { action } => registry_cmd(action, io),
        Command::Train(args) => train_cmd(args, seed, io),
        Command::Allocate(args) => allocate_cmd(args, io),
        Command::Evaluate(args) => evaluate_cmd(args, seed, io),
        Command::Synth(args) => synth_cmd(args, seed, io),
        Command::Cache { action } => cache_cmd(action, io),
        Command::Gradcheck(args) => gradcheck_cmd(args, seed, io),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn parse_entities(text: &str, kind: EntityKind, path: &Path) -> CliResult<Vec<Entity>> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let items = match value {
        Value::Array(items) => items,
        other => vec![other],
    };
    items
        .into_iter()
        .map(|v| {
            let bad = |e: serde_json::Error| CliError::validation(format!("{}: {e}", path.display()));
            Ok(match kind {
                EntityKind::Scenario => Entity::Scenario(serde_json::from_value::<Scenario>(v).map_err(bad)?),
                EntityKind::Dataset => Entity::Dataset(serde_json::from_value::<Dataset>(v).map_err(bad)?),
                EntityKind::Model => Entity::Model(serde_json::from_value::<Model>(v).map_err(bad)?),
                EntityKind::Performance => {
                    Entity::Performance(serde_json::from_value::<PerformanceRecord>(v).map_err(bad)?)
                }
            })
        })
        .collect()
}

fn registry_cmd(action: RegistryCommand, io: &mut Io) -> CliResult<i32> {
    match action {
        RegistryCommand::Add { registry, kind, files } => {
            let mut reg = if registry.exists() {
                Registry::load(&registry)?
            } else {
                Registry::new()
            };
            let mut added = 0;
            for f in &files {
                for entity in parse_entities(&read_text(f)?, kind, f)? {
                    reg.register(entity)?;
                    added += 1;
                }
            }
            reg.save(&registry)?;
            let text = match io.format {
                Format::Json => json_line(&serde_json::json!({ "added": added, "revision": reg.revision() })),
                Format::Table => format!("added {added} entities; revision {}\n", reg.revision()),
            };
            io.print(&text)?;
        }
        RegistryCommand::List { registry } => {
            let reg = Registry::load(&registry)?;
            let text = match io.format {
                Format::Json => reg.to_json() + "\n",
                Format::Table => list_table(&reg),
            };
            io.print(&text)?;
        }
        RegistryCommand::Validate { registry } => {
            let reg = Registry::from_json_unchecked(&read_text(&registry)?)?;
            let warnings = reg.validate()?;
            let text = match io.format {
                Format::Json => json_line(&serde_json::json!({
                    "valid": true,
                    "revision": reg.revision(),
                    "warnings": warnings,
                })),
                Format::Table => {
                    let mut s = String::new();
                    for w in &warnings {
                        let _ = writeln!(s, "warning: {w}");
                    }
                    let _ = writeln!(s, "ok (revision {})", reg.revision());
                    s
                }
            };
            io.print(&text)?;
        }
    }
    Ok(EXIT_OK)
}

fn list_table(reg: &Registry) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "revision {}", reg.revision());
    let _ = writeln!(s, "scenarios:");
    for x in reg.scenarios() {
        let c: Vec<String> = x.constraints.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(s, "  {}  [{}]  {}", x.id, x.scenario_type, c.join(","));
    }
    let _ = writeln!(s, "datasets:");
    for x in reg.datasets() {
        let _ = writeln!(
            s,
            "  {}  [{}]  downloads={}",
            x.id, x.dataset_type, x.features.downloads
        );
    }
    let _ = writeln!(s, "models:");
    for x in reg.models() {
        let _ = writeln!(
            s,
            "  {}  [{}]  citations={} stars={}",
            x.id, x.model_type, x.features.citations, x.features.github_stars
        );
    }
    let _ = writeln!(s, "performance records: {}", reg.performance_records().count());
    s
}

fn train_typed<T: Scalar>(
    train: &[smap_core::scorer::ScoreSample],
    val: &[smap_core::scorer::ScoreSample],
    hyper: &Hyperparams,
    path: &Path,
) -> CliResult<TrainingLog> {
    let (scorer, log): (TrainedScorer<T>, _) = train_scorer(train, val, hyper)?;
    let mut buf = Vec::new();
    write_scorer(&mut buf, &scorer)?;
    write_bytes(path, &buf)?;
    Ok(log)
}

fn read_samples(path: &Path) -> CliResult<Vec<smap_core::scorer::ScoreSample>> {
    let file = fs::File::open(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok(read_samples_csv(file)?)
}

fn train_cmd(args: TrainArgs, seed: u64, io: &mut Io) -> CliResult<i32> {
    let train = read_samples(&args.samples)?;
    let val = match &args.val {
        Some(p) => read_samples(p)?,
        None => Vec::new(),
    };
    let hyper = args.hyper.hyperparams(seed);
    let log = match args.hyper.precision {
        Precision::F32 => train_typed::<f32>(&train, &val, &hyper, &args.params)?,
        Precision::F64 => train_typed::<f64>(&train, &val, &hyper, &args.params)?,
    };
    let text = match io.format {
        Format::Json => json_line(&log),
        Format::Table => {
            let mut s = String::from("epoch  train_mse  val_mse\n");
            for e in &log.epochs {
                let val = e.val_mse.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(s, "{:>5}  {:.6}  {val}", e.epoch, e.train_mse);
            }
            let _ = writeln!(
                s,
                "best epoch {}; parameters written to {}",
                log.best_epoch,
                args.params.display()
            );
            s
        }
    };
    io.print(&text)?;
    Ok(EXIT_OK)
}

fn render_topk(top: &TopK, format: Format) -> String {
    match format {
        Format::Json => json_line(top),
        Format::Table => {
            let mut s = String::from("scenario  rank  dataset  model  score\n");
            for (sid, list) in &top.lists {
                for (i, e) in list.iter().enumerate() {
                    let _ = writeln!(s, "{sid}  {}  {}  {}  {:.6}", i + 1, e.dataset_id, e.model_id, e.score);
                }
            }
            for u in &top.unassigned {
                let _ = writeln!(s, "unassigned {}: {}", u.scenario_id, u.detail);
            }
            s
        }
    }
}

fn allocate_cmd(args: AllocateArgs, io: &mut Io) -> CliResult<i32> {
    let registry = Registry::load(&args.registry)?;
    let scorer: Option<TrainedScorer<f64>> = match &args.params {
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
            Some(read_scorer(std::io::BufReader::new(file))?)
        }
        None => None,
    };
    let table = match &args.scores {
        Some(p) => Some(
            ScoreTable::from_json(&read_text(p)?).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    let attention;
    let score_fn: &dyn ScoreFn = match (&scorer, &table) {
        (Some(s), _) => {
            attention = AttentionScoreFn {
                registry: &registry,
                scorer: s,
            };
            &attention
        }
        (None, Some(t)) => t,
        (None, None) => unreachable!("clap requires --params or --scores"),
    };
    let opts = AllocOptions {
        search_datasets: args.search_datasets,
    };

    if args.k > 1 {
        let top = soma_topk(
            registry.scenarios(),
            registry.datasets(),
            registry.models(),
            score_fn,
            args.k as usize,
            opts,
        );
        io.print(&render_topk(&top, io.format))?;
        return Ok(if top.unassigned.is_empty() {
            EXIT_OK
        } else {
            EXIT_CONSTRAINT
        });
    }

    let mut center = MnemonicCenter::load(&args.cache)?;
    let result = allocate_with_cache(&registry, &mut center, score_fn, opts)?;
    center.persist(&args.cache)?;
    io.note(&format!("cache-hit: {}/{}", result.hits, result.total));
    if result.stale > 0 {
        io.note(&format!("cache-stale: {}", result.stale));
    }
    let alloc = result.allocation;
    alloc
        .validate(&registry)
        .map_err(|e| CliError::validation(format!("allocation failed re-validation: {e}")))?;
    let text = match io.format {
        Format::Json => alloc.to_json(),
        Format::Table => alloc.render_table(&registry),
    };
    io.print(&text)?;
    Ok(if alloc.unassigned.is_empty() {
        EXIT_OK
    } else {
        EXIT_CONSTRAINT
    })
}

fn evaluate_cmd(args: EvaluateArgs, seed: u64, io: &mut Io) -> CliResult<i32> {
    let config = ExperimentConfig {
        trials: args.trials,
        hyper: args.hyper.hyperparams(seed),
        synth: args.synth.config(),
        master_seed: seed,
        ..ExperimentConfig::default()
    };
    let report = match args.hyper.precision {
        Precision::F32 => run_experiment::<f32>(&config)?,
        Precision::F64 => run_experiment::<f64>(&config)?,
    };
    let text = match io.format {
        Format::Json => report.to_json(),
        Format::Table => report.render_table(),
    };
    match &args.out {
        Some(p) => write_bytes(p, text.as_bytes())?,
        None => io.print(&text)?,
    }
    io.note(&format!(
        "runtime: {:.2}s over {} trials",
        report.runtime.total.as_secs_f64(),
        report.trials.len()
    ));
    let problems = report.problems();
    for p in &problems {
        io.note(&format!("check failed: {p}"));
    }
    Ok(if problems.is_empty() { EXIT_OK } else { EXIT_NUMERIC })
}

fn synth_cmd(args: SynthArgs, seed: u64, io: &mut Io) -> CliResult<i32> {
    let data = generate_synthetic(&args.synth.config(), seed)?;
    let mut csv = Vec::new();
    write_samples_csv(&mut csv, &data.samples)?;
    match &args.out {
        Some(p) => write_bytes(p, &csv)?,
        None => io
            .out
            .write_all(&csv)
            .map_err(|e| CliError::validation(format!("stdout: {e}")))?,
    }
    if let Some(p) = &args.registry_out {
        data.registry.save(p)?;
    }
    if args.out.is_some() {
        io.note(&format!(
            "{} samples over {} scenarios",
            data.samples.len(),
            data.truth.len()
        ));
    }
    Ok(EXIT_OK)
}

fn cache_cmd(action: CacheCommand, io: &mut Io) -> CliResult<i32> {
    match action {
        CacheCommand::Show { cache } => {
            let center = MnemonicCenter::load(&cache)?;
            let text = match io.format {
                Format::Json => center.to_jsonl(),
                Format::Table => {
                    let mut s = String::from("scenario_key  dataset  model  score  revision\n");
                    for e in center.entries() {
                        let _ = writeln!(
                            s,
                            "{}  {}  {}  {:.6}  {}",
                            &e.scenario_key[..12.min(e.scenario_key.len())],
                            e.dataset_id,
                            e.model_id,
                            e.score,
                            e.registry_revision
                        );
                    }
                    let _ = writeln!(s, "{} entries", center.len());
                    s
                }
            };
            io.print(&text)?;
        }
        CacheCommand::Clear { cache } => {
            let mut center = MnemonicCenter::load(&cache)?;
            let n = center.len();
            center.clear();
            center.persist(&cache)?;
            io.print(&format!("cleared {n} entries\n"))?;
        }
    }
    Ok(EXIT_OK)
}

fn gradcheck_cmd(args: GradcheckArgs, seed: u64, io: &mut Io) -> CliResult<i32> {
    use rand::{Rng, SeedableRng};
    let hyper = Hyperparams {
        heads: args.heads,
        blocks: args.blocks,
        head_dim: args.head_dim,
        hidden: args.hidden,
        ..Hyperparams::default()
    };
    hyper.validate()?;
    #[derive(Serialize)]
    struct Row {
        sample: usize,
        score: f64,
        max_relative_error: f64,
    }
    let mut rows = Vec::new();
    for i in 0..args.samples {
        let s = seed.wrapping_add(i as u64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
        let mut params = ScorerParams::<f64>::init(hyper.shape(), &mut rng);
        // open outer ReLU, as at the start of training
        *params.head_mut().3 = 0.5;
        let input: Vec<f64> = (0..hyper.shape().n_features)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let label = rng.random_range(0.0..1.0);
        let score = params.score(&input)?;
        let err = gradient_check(&params, &input, label, args.epsilon)?;
        rows.push(Row {
            sample: i,
            score,
            max_relative_error: err,
        });
    }
    let worst = rows.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    let text = match io.format {
        Format::Json => json_line(&serde_json::json!({
            "parameters": hyper.shape().param_count(),
            "samples": rows,
            "max_relative_error": worst,
            "tolerance": args.tolerance,
        })),
        Format::Table => {
            let mut s = format!(
                "parameters {}\nsample  score  max_rel_err\n",
                hyper.shape().param_count()
            );
            for r in &rows {
                let _ = writeln!(s, "{:>6}  {:.6}  {:.3e}", r.sample, r.score, r.max_relative_error);
            }
            let _ = writeln!(s, "max {:.3e} (tolerance {:.1e})", worst, args.tolerance);
            s
        }
    };
    io.print(&text)?;
    if worst < args.tolerance {
        Ok(EXIT_OK)
    } else {
        Err(CliError::numeric(format!(
            "gradient check failed: max relative error {worst:.3e} >= {:.1e}",
            args.tolerance
        )))
    }
}
