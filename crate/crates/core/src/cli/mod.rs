//! The `hlr` command line: preprocess, train, evaluate, grid-search and
//! recommend, driven by a flat `key=value` config with flag overrides.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

use crate::dataset::{
    dataset_stats, k_core_filter, load_interactions_path, read_split, split_dataset, write_split, DatasetError,
    LoadOptions, SplitDataset,
};
use crate::evaluation::{evaluate_model, format_table, rank_items, EvalError, ModelRanker};
use crate::parameters::{read_checkpoint, read_header, write_checkpoint, CheckpointError, CheckpointHeader, ParameterStore};
use crate::training::{grid_search, train, TrainError};

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const LEADERBOARD_FILE: &str = "leaderboard.tsv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(m) => CliError::Usage(m),
            TrainError::Data(m) => CliError::Data(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn io_err(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "hlr", version, about = "Collaborative metric learning with hierarchical latent relations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Binarize, k-core filter and split an event file into a dataset directory.
    Preprocess(Overrides),
    /// Train one model on a dataset directory.
    Train(Overrides),
    /// Rank the full catalog with a checkpoint and report top-K metrics.
    Evaluate(Overrides),
    /// Train every grid cell and rank cells by validation NDCG.
    #[command(name = "grid-search")]
    GridSearch(Overrides),
    /// Print top-K item keys for user keys.
    Recommend(Overrides),
}

/// Options shared by every command. Each flag overrides the config key of
/// the same name (dashes become underscores).
#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Flat key=value config file applied before flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra key=value setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub threshold: Option<String>,
    /// Minimum interactions per user and item.
    #[arg(long = "core-k")]
    pub core_k: Option<String>,
    /// train,validation,test shares.
    #[arg(long)]
    pub ratios: Option<String>,
    /// cml | lrml | adacml | hlr | hlr++
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    #[arg(long)]
    pub slices: Option<String>,
    #[arg(long)]
    pub margin: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<String>,
    #[arg(long = "max-epochs")]
    pub max_epochs: Option<String>,
    #[arg(long = "history-cap")]
    pub history_cap: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long = "top-k")]
    pub top_k: Option<String>,
    /// validation | test
    #[arg(long)]
    pub phase: Option<String>,
    /// Single worker; results never depend on the worker count anyway.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<String>,
    #[arg(long = "grid-lr")]
    pub grid_lr: Option<String>,
    #[arg(long = "grid-slices")]
    pub grid_slices: Option<String>,
    #[arg(long = "grid-margins")]
    pub grid_margins: Option<String>,
    /// Comma-separated user keys for `recommend`.
    #[arg(long)]
    pub users: Option<String>,
}

impl Overrides {
    fn flags(&self) -> [(&'static str, &Option<String>); 24] {
        [
            ("input", &self.input),
            ("dataset", &self.dataset),
            ("out", &self.out),
            ("checkpoint", &self.checkpoint),
            ("threshold", &self.threshold),
            ("core_k", &self.core_k),
            ("ratios", &self.ratios),
            ("model", &self.model),
            ("dim", &self.dim),
            ("slices", &self.slices),
            ("margin", &self.margin),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("history_cap", &self.history_cap),
            ("seed", &self.seed),
            ("top_k", &self.top_k),
            ("phase", &self.phase),
            ("deterministic", &self.deterministic),
            ("workers", &self.workers),
            ("grid_lr", &self.grid_lr),
            ("grid_slices", &self.grid_slices),
            ("grid_margins", &self.grid_margins),
            ("users", &self.users),
        ]
    }

    /// Applies the config file, then `--set` pairs, then typed flags.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(CliError::Usage)?;
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
            cfg.set(k.trim(), v).map_err(CliError::Usage)?;
        }
        for (key, value) in self.flags() {
            if let Some(v) = value {
                cfg.set(key, v).map_err(CliError::Usage)?;
            }
        }
        Ok(())
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        self.apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required setting `{key}` (flag --{} or config key)", key.replace('_', "-"))))
}

fn echo_config(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    writeln!(out, "# effective config").and_then(|_| write!(out, "{}", cfg.to_text())).map_err(io_err("stdout"))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir.display()))
}

fn save_checkpoint(store: &ParameterStore, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path.display()))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(store, &mut w)?;
    w.flush().map_err(io_err(path.display()))
}

fn load_checkpoint(path: &Path) -> Result<ParameterStore, CliError> {
    let file = File::open(path).map_err(io_err(path.display()))?;
    Ok(read_checkpoint(BufReader::new(file))?)
}

/// Parses `argv` and runs the chosen command, writing human output to `out`.
pub fn run<I, T>(argv: I, out: &mut (dyn Write + Send)) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}").map_err(io_err("stdout"))?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let cfg = match &cli.command {
        Command::Evaluate(o) | Command::Recommend(o) => resolve_with_run_config(o)?,
        Command::Preprocess(o) | Command::Train(o) | Command::GridSearch(o) => o.resolve()?,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads())
        .build()
        .map_err(|e| CliError::Usage(format!("cannot build worker pool: {e}")))?;
    echo_config(&cfg, out)?;
    pool.install(|| match cli.command {
        Command::Preprocess(_) => cmd_preprocess(&cfg, out),
        Command::Train(_) => cmd_train(&cfg, out),
        Command::Evaluate(_) => cmd_evaluate(&cfg, out),
        Command::GridSearch(_) => cmd_grid(&cfg, out),
        Command::Recommend(_) => cmd_recommend(&cfg, out),
    })
}

/// Layers the `config.txt` stored beside the checkpoint under the user's
/// own settings, so evaluation inherits the model kind and seeds.
fn resolve_with_run_config(o: &Overrides) -> Result<RunConfig, CliError> {
    let first = o.resolve()?;
    let ckpt = require(&first.checkpoint, "checkpoint")?;
    let mut cfg = RunConfig::default();
    let beside = ckpt.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE);
    if beside.is_file() {
        cfg.apply_file(&beside).map_err(CliError::Usage)?;
    } else {
        log::warn!("no {} next to the checkpoint; using defaults for unspecified settings", CONFIG_FILE);
    }
    o.apply(&mut cfg)?;
    Ok(cfg)
}

pub fn cmd_preprocess(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let input = require(&cfg.input, "input")?;
    let raw = load_interactions_path(input, &LoadOptions::with_threshold(cfg.threshold))?;
    let ds = k_core_filter(&raw, cfg.core_k)?;
    let stats = dataset_stats(&ds)?;
    let split = split_dataset(ds, cfg.ratios, cfg.hyperparams.seed)?;
    create_dir(&cfg.out)?;
    write_split(&split, &cfg.out)?;
    write_text(&cfg.out.join(CONFIG_FILE), &cfg.to_text())?;
    writeln!(
        out,
        "{stats}\ntrain/validation/test      {}/{}/{}",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    )
    .map_err(io_err("stdout"))?;
    if split.small_users > 0 {
        writeln!(out, "users kept whole in train  {}", split.small_users).map_err(io_err("stdout"))?;
    }
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<SplitDataset, CliError> {
    Ok(read_split(require(&cfg.dataset, "dataset")?)?)
}

pub fn cmd_train(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let split = load_dataset(cfg)?;
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join(CONFIG_FILE), &cfg.to_text())?;
    let ckpt = cfg.out.join(CHECKPOINT_FILE);
    match train(&split, &cfg.hyperparams) {
        Ok((store, mut report)) => {
            save_checkpoint(&store, &ckpt)?;
            report.checkpoint = Some(CHECKPOINT_FILE.into());
            write_text(&cfg.out.join(TRAIN_LOG_FILE), &report.to_log())?;
            write!(out, "{}", report.summary()).map_err(io_err("stdout"))?;
            Ok(())
        }
        Err(TrainError::Diverged {
            epoch,
            cause,
            last_finite,
            mut report,
        }) => {
            let path = cfg.out.join("last_finite.ckpt");
            save_checkpoint(&last_finite, &path)?;
            report.checkpoint = Some("last_finite.ckpt".into());
            write_text(&cfg.out.join(TRAIN_LOG_FILE), &report.to_log())?;
            let diag = format!("diverged at epoch {epoch}: {cause}\nlast finite parameters: {}\n", path.display());
            write_text(&cfg.out.join("diagnostics.txt"), &diag)?;
            Err(CliError::Numerical(diag.trim_end().to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

fn check_shape(header: &CheckpointHeader, split: &SplitDataset, cfg: &RunConfig) -> Result<(), CliError> {
    if header.num_users != split.num_users() || header.num_items != split.num_items() {
        return Err(CliError::Data(format!(
            "checkpoint shape ({} users × {} items) disagrees with dataset shape ({} users × {} items)",
            header.num_users,
            header.num_items,
            split.num_users(),
            split.num_items()
        )));
    }
    let kind = cfg.hyperparams.kind;
    if header.item_memory != kind.uses_item_memory() {
        return Err(CliError::Data(format!(
            "checkpoint ({header}) does not fit model {kind}: item-side memory {}",
            if header.item_memory { "present but unused" } else { "missing" }
        )));
    }
    Ok(())
}

fn load_model(cfg: &RunConfig, split: &SplitDataset) -> Result<ParameterStore, CliError> {
    let path = require(&cfg.checkpoint, "checkpoint")?;
    let mut file = BufReader::new(File::open(path).map_err(io_err(path.display()))?);
    let header = read_header(&mut file)?;
    check_shape(&header, split, cfg)?;
    load_checkpoint(path)
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let split = load_dataset(cfg)?;
    let store = load_model(cfg, &split)?;
    let hp = &cfg.hyperparams;
    let report = evaluate_model(&store, hp.kind, &split, cfg.phase, cfg.top_k, hp.history_cap, hp.seed)?;
    create_dir(&cfg.out)?;
    let stem = format!("eval_{}", cfg.phase);
    let table = format_table(&[(hp.kind.name(), &report)]);
    write_text(&cfg.out.join(format!("{stem}.csv")), &report.to_csv())?;
    write_text(&cfg.out.join(format!("{stem}.txt")), &table)?;
    write_text(&cfg.out.join(format!("{stem}_users.tsv")), &report.per_user_tsv())?;
    write_text(&cfg.out.join(format!("{stem}_config.txt")), &cfg.to_text())?;
    let flagged = report.per_user.iter().filter(|r| r.fallback).count();
    writeln!(out, "{table}users evaluated: {}", report.num_evaluated_users).map_err(io_err("stdout"))?;
    if flagged > 0 {
        writeln!(out, "users ranked with the empty-history fallback: {flagged}").map_err(io_err("stdout"))?;
    }
    Ok(())
}

pub fn cmd_grid(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let split = load_dataset(cfg)?;
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join(CONFIG_FILE), &cfg.to_text())?;
    let cells = cfg.grid.cells(&cfg.hyperparams).len();
    writeln!(out, "grid cells: {cells}").map_err(io_err("stdout"))?;
    let outcome = grid_search(&split, &cfg.hyperparams, &cfg.grid, cfg.top_k)?;
    write_text(&cfg.out.join(LEADERBOARD_FILE), &outcome.to_tsv())?;
    write!(out, "{}", outcome.to_tsv()).map_err(io_err("stdout"))?;
    let (Some(best), Some(store)) = (outcome.best(), outcome.best_store.as_ref()) else {
        return Err(CliError::Numerical(format!("all {cells} grid cells failed")));
    };
    save_checkpoint(store, &cfg.out.join(CHECKPOINT_FILE))?;
    let best_cfg = RunConfig {
        hyperparams: best.clone(),
        ..cfg.clone()
    };
    write_text(&cfg.out.join("best_config.txt"), &best_cfg.to_text())?;
    Ok(())
}

pub fn cmd_recommend(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let split = load_dataset(cfg)?;
    let store = load_model(cfg, &split)?;
    if cfg.users.is_empty() {
        return Err(CliError::Usage("no user keys given (flag --users or config key users)".into()));
    }
    let hp = &cfg.hyperparams;
    let ranker = ModelRanker::new(&store, hp.kind, &split, hp.history_cap, hp.seed);
    let full = &split.full.interactions;
    let mut skipped = Vec::new();
    let w = |e| io_err("stdout")(e);
    writeln!(out, "# recommendations\nuser\titems").map_err(w)?;
    for key in &cfg.users {
        let Some(u) = split.full.users.index_of(key) else {
            skipped.push(key.as_str());
            continue;
        };
        let ranked = rank_items(&ranker, u, split.num_items(), full.items_of(u), cfg.top_k);
        let items: Vec<&str> = ranked.iter().map(|&v| split.full.items.key(v)).collect();
        writeln!(out, "{key}\t{}", items.join(",")).map_err(w)?;
    }
    if !skipped.is_empty() {
        writeln!(out, "# skipped keys\n{}", skipped.join("\n")).map_err(w)?;
    }
    Ok(())
}
