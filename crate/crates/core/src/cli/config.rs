use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::{Phase, SplitRatios};
use crate::training::{GridAxes, Hyperparams};

/// Every knob of a run. Keys in the flat `key=value` form match the field
/// names; [`RunConfig::to_text`] lists them all.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub threshold: f64,
    pub core_k: usize,
    pub ratios: SplitRatios,
    pub hyperparams: Hyperparams,
    pub top_k: usize,
    pub phase: Phase,
    pub deterministic: bool,
    pub workers: usize,
    pub grid: GridAxes,
    pub users: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            dataset: None,
            out: PathBuf::from("out"),
            checkpoint: None,
            threshold: 0.0,
            core_k: 10,
            ratios: SplitRatios::default(),
            hyperparams: Hyperparams::default(),
            top_k: 10,
            phase: Phase::Test,
            deterministic: false,
            workers: 0,
            grid: GridAxes::default(),
            users: Vec::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| format!("invalid value {value:?} for {key}: {e}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

fn opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let hp = &mut self.hyperparams;
        match key {
            "input" => self.input = opt_path(value),
            "dataset" => self.dataset = opt_path(value),
            "out" => self.out = PathBuf::from(value.trim()),
            "checkpoint" => self.checkpoint = opt_path(value),
            "threshold" => self.threshold = parse(key, value)?,
            "core_k" => self.core_k = parse(key, value)?,
            "ratios" => {
                let r: Vec<f64> = parse_list(key, value)?;
                let [train, validation, test] = r[..] else {
                    return Err(format!("ratios needs three values, got {value:?}"));
                };
                self.ratios = SplitRatios { train, validation, test };
                self.ratios.validate().map_err(|e| e.to_string())?;
            }
            "model" => hp.kind = parse(key, value)?,
            "dim" => hp.dim = parse(key, value)?,
            "slices" => hp.slices = parse(key, value)?,
            "margin" => hp.margin = parse(key, value)?,
            "lr" => hp.lr = parse(key, value)?,
            "batch_size" => hp.batch_size = parse(key, value)?,
            "max_epochs" => hp.max_epochs = parse(key, value)?,
            "history_cap" => hp.history_cap = parse(key, value)?,
            "seed" => hp.seed = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "phase" => self.phase = parse(key, value)?,
            "deterministic" => self.deterministic = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "grid_lr" => self.grid.learning_rates = parse_list(key, value)?,
            "grid_slices" => self.grid.slices = parse_list(key, value)?,
            "grid_margins" => self.grid.margins = parse_list(key, value)?,
            "users" => self.users = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Applies a `key=value` document; blank lines and `#` comments are
    /// skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got {line:?}", n + 1))?;
            self.set(k.trim(), v).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.apply_text(&text)
    }

    /// The fully resolved configuration, one `key=value` per line.
    pub fn to_text(&self) -> String {
        let hp = &self.hyperparams;
        let r = &self.ratios;
        let rows: Vec<(&str, String)> = vec![
            ("input", path_text(&self.input)),
            ("dataset", path_text(&self.dataset)),
            ("out", self.out.display().to_string()),
            ("checkpoint", path_text(&self.checkpoint)),
            ("threshold", self.threshold.to_string()),
            ("core_k", self.core_k.to_string()),
            ("ratios", format!("{},{},{}", r.train, r.validation, r.test)),
            ("model", hp.kind.to_string()),
            ("dim", hp.dim.to_string()),
            ("slices", hp.slices.to_string()),
            ("margin", hp.margin.to_string()),
            ("lr", hp.lr.to_string()),
            ("batch_size", hp.batch_size.to_string()),
            ("max_epochs", hp.max_epochs.to_string()),
            ("history_cap", hp.history_cap.to_string()),
            ("seed", hp.seed.to_string()),
            ("top_k", self.top_k.to_string()),
            ("phase", self.phase.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("workers", self.workers.to_string()),
            ("grid_lr", join(&self.grid.learning_rates)),
            ("grid_slices", join(&self.grid.slices)),
            ("grid_margins", join(&self.grid.margins)),
            ("users", self.users.join(",")),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Thread count for the worker pool; deterministic runs use one.
    pub fn threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers
        }
    }
}
