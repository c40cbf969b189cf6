//! Triplet sampling, the epoch loop with validation-loss model selection,
//! and grid search over learning rate, memory slices and margin.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::dataset::{capped_support, Interactions, Phase, SplitDataset};
use crate::evaluation::{evaluate_model, EvalError};
use crate::models::{backward, batch_loss, ModelError, ModelKind, TripletContext};
use crate::parameters::{
    adam_step, init_parameters, project_rows_touched, AdamConfig, AdamState, ParamError, ParameterStore,
};
use crate::rng::{stream_rng, Rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub kind: ModelKind,
    pub dim: usize,
    /// Memory slices `N`; ignored by models without a memory.
    pub slices: usize,
    pub margin: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Upper bound on attention supports (user and item histories).
    pub history_cap: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            kind: ModelKind::Hlr,
            dim: 100,
            slices: 10,
            margin: 0.5,
            lr: 0.001,
            batch_size: 1000,
            max_epochs: 100,
            history_cap: 50,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Checks the invariants. A zero learning rate is accepted so that the
    /// null-update path can be exercised.
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be > 0, got {}", self.margin));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.lr));
        }
        if self.dim == 0 {
            return bad("dimension must be >= 1".into());
        }
        if self.kind.uses_memory() && self.slices == 0 {
            return bad(format!("{} needs at least one memory slice", self.kind));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.history_cap == 0 && self.kind.uses_history() {
            return bad("history cap must be >= 1".into());
        }
        Ok(())
    }

    /// Slices actually allocated for this model.
    pub fn effective_slices(&self) -> usize {
        if self.kind.uses_memory() {
            self.slices
        } else {
            1
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid hyperparameters: {0}")]
    InvalidConfig(String),
    #[error("training data unusable: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}: {cause}")]
    Diverged {
        epoch: usize,
        cause: String,
        /// Parameters from just before the failing step.
        last_finite: Box<ParameterStore>,
        report: TrainReport,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

impl TrainError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, TrainError::Diverged { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub user: u32,
    pub positive: u32,
    pub negative: u32,
}

/// One epoch of triplets plus the number of train positives skipped
/// because their user has no valid negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochTriplets {
    pub triplets: Vec<Triplet>,
    pub skipped: usize,
}

fn draw_negative(full: &Interactions, user: u32, rng: &mut Rng) -> u32 {
    loop {
        let v = rng.random_range(0..full.num_items() as u32);
        if !full.contains(user, v) {
            return v;
        }
    }
}

/// One triplet per train positive in shuffled order, with a negative drawn
/// uniformly from items the user never interacted with in any split.
pub fn sample_triplets(split: &SplitDataset, rng: &mut Rng) -> Result<EpochTriplets, TrainError> {
    if split.train.is_empty() {
        return Err(TrainError::Data("train view is empty".into()));
    }
    let full = &split.full.interactions;
    let num_items = full.num_items();
    let mut positives: Vec<(u32, u32)> = split.train.pairs().collect();
    positives.shuffle(rng);
    let mut triplets = Vec::with_capacity(positives.len());
    let mut skipped = 0;
    let mut warned = std::collections::HashSet::new();
    for (u, v) in positives {
        if full.items_of(u).len() >= num_items {
            skipped += 1;
            if warned.insert(u) {
                log::warn!("user {u} interacted with every item; no negative exists, skipping");
            }
            continue;
        }
        triplets.push(Triplet {
            user: u,
            positive: v,
            negative: draw_negative(full, u, rng),
        });
    }
    Ok(EpochTriplets { triplets, skipped })
}

/// Attaches capped attention supports drawn from the train view: the
/// user's items without the target, and each item's users without `u`.
pub fn build_context(train: &Interactions, t: Triplet, kind: ModelKind, cap: usize, rng: &mut Rng) -> TripletContext {
    let mut ctx = TripletContext {
        user: t.user,
        positive: t.positive,
        negative: t.negative,
        ..Default::default()
    };
    if kind.uses_history() {
        ctx.history = capped_support(train.items_of(t.user), Some(t.positive), cap, rng);
    }
    if kind.uses_item_memory() {
        ctx.positive_item_history = capped_support(train.users_of(t.positive), Some(t.user), cap, rng);
        ctx.negative_item_history = capped_support(train.users_of(t.negative), Some(t.user), cap, rng);
    }
    ctx
}

/// Fixed validation triplets: every validation positive with one negative
/// from the dedicated stream.
pub fn validation_triplets(split: &SplitDataset, hp: &Hyperparams) -> Vec<TripletContext> {
    let full = &split.full.interactions;
    let mut neg_rng = stream_rng(hp.seed, Stream::ValidationNegatives, 0);
    let mut hist_rng = stream_rng(hp.seed, Stream::ValidationNegatives, 1);
    split
        .validation
        .pairs()
        .filter(|&(u, _)| full.items_of(u).len() < full.num_items())
        .map(|(u, v)| {
            let t = Triplet {
                user: u,
                positive: v,
                negative: draw_negative(full, u, &mut neg_rng),
            };
            build_context(&split.train, t, hp.kind, hp.history_cap, &mut hist_rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean hinge loss per train triplet.
    pub train_loss: f64,
    /// Mean hinge loss per validation triplet.
    pub valid_loss: f64,
    pub seconds: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    /// Validation loss of the initialization, logged as epoch 0.
    pub initial_valid_loss: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    /// Tab-separated per-epoch log followed by a `#`-prefixed summary.
    pub fn to_log(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tvalid_loss\tseconds\n");
        let _ = writeln!(out, "0\tnan\t{:.9}\t0.000", self.initial_valid_loss);
        for e in &self.epochs {
            let _ = writeln!(out, "{}\t{:.9}\t{:.9}\t{:.3}", e.epoch, e.train_loss, e.valid_loss, e.seconds);
        }
        out.push_str(&self.summary());
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let total: f64 = self.epochs.iter().map(|e| e.seconds).sum();
        let _ = writeln!(out, "# epochs_run={}", self.epochs.len());
        let _ = writeln!(out, "# best_epoch={}", self.best_epoch);
        let _ = writeln!(out, "# best_valid_loss={:.9}", self.best_valid_loss);
        let _ = writeln!(out, "# total_seconds={total:.3}");
        if let Some(c) = &self.checkpoint {
            let _ = writeln!(out, "# checkpoint={c}");
        }
        out
    }
}

/// Trains one model and returns the parameters of the epoch with the
/// lowest validation loss (first on ties) together with its report.
///
/// Any non-finite loss or gradient aborts with [`TrainError::Diverged`],
/// which carries the last finite parameters and the partial report.
pub fn train(split: &SplitDataset, hp: &Hyperparams) -> Result<(ParameterStore, TrainReport), TrainError> {
    train_with(split, hp, |_, _| {})
}

/// [`train`] with a callback that sees each epoch's record and the
/// parameters at the end of that epoch.
pub fn train_with(
    split: &SplitDataset,
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochRecord, &ParameterStore),
) -> Result<(ParameterStore, TrainReport), TrainError> {
    hp.validate()?;
    let valid = validation_triplets(split, hp);
    if valid.is_empty() {
        return Err(TrainError::Data("validation view is empty; epoch selection needs it".into()));
    }
    let mut store = init_parameters(
        split.num_users(),
        split.num_items(),
        hp.dim,
        hp.effective_slices(),
        hp.kind.uses_item_memory(),
        hp.seed,
    )?;
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let valid_loss_of = |store: &ParameterStore| -> Result<f64, ModelError> {
        Ok(batch_loss(&valid, hp.kind, store, hp.margin)? / valid.len() as f64)
    };
    let mut report = TrainReport {
        initial_valid_loss: valid_loss_of(&store)?,
        ..Default::default()
    };
    report.best_valid_loss = f64::INFINITY;
    let mut best = store.clone();

    for epoch in 1..=hp.max_epochs {
        let started = Instant::now();
        let mut rng = stream_rng(hp.seed, Stream::Sampling, epoch as u64);
        let sampled = sample_triplets(split, &mut rng)?;
        let mut hist_rng = stream_rng(hp.seed, Stream::History, epoch as u64);
        let contexts: Vec<TripletContext> = sampled
            .triplets
            .iter()
            .map(|&t| build_context(&split.train, t, hp.kind, hp.history_cap, &mut hist_rng))
            .collect();
        if contexts.is_empty() {
            return Err(TrainError::Data("no trainable triplets".into()));
        }

        let mut total = 0.0;
        for batch in contexts.chunks(hp.batch_size) {
            let step = backward(batch, hp.kind, &store, hp.margin)
                .map_err(TrainError::from)
                .and_then(|(grads, loss)| {
                    adam_step(&mut store, &grads, &mut adam, hp.lr)?;
                    Ok((grads, loss))
                });
            match step {
                Ok((grads, loss)) => {
                    project_rows_touched(&mut store, &grads);
                    total += loss;
                }
                Err(e @ (TrainError::Model(_) | TrainError::Param(ParamError::NonFiniteGradient { .. }))) => {
                    return Err(diverged(epoch, e.to_string(), store, report));
                }
                Err(e) => return Err(e),
            }
        }
        if !store.is_finite() {
            return Err(diverged(epoch, "non-finite parameters".into(), best, report));
        }

        let valid_loss = match valid_loss_of(&store) {
            Ok(l) => l,
            Err(e) => return Err(diverged(epoch, e.to_string(), store, report)),
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / contexts.len() as f64,
            valid_loss,
            seconds: started.elapsed().as_secs_f64(),
            skipped: sampled.skipped,
        };
        log::info!(
            "epoch {epoch}: train_loss={:.6} valid_loss={:.6} ({:.1}s)",
            record.train_loss,
            record.valid_loss,
            record.seconds
        );
        if valid_loss < report.best_valid_loss {
            report.best_valid_loss = valid_loss;
            report.best_epoch = epoch;
            best.clone_from(&store);
        }
        on_epoch(&record, &store);
        report.epochs.push(record);
    }
    Ok((best, report))
}

fn diverged(epoch: usize, cause: String, store: ParameterStore, report: TrainReport) -> TrainError {
    log::error!("training diverged at epoch {epoch}: {cause}");
    TrainError::Diverged {
        epoch,
        cause,
        last_finite: Box::new(store),
        report,
    }
}

/// Axes of a grid search; every combination is trained once.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxes {
    pub learning_rates: Vec<f64>,
    pub slices: Vec<usize>,
    pub margins: Vec<f64>,
}

impl Default for GridAxes {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.0002, 0.0005, 0.00075, 0.001],
            slices: vec![5, 10, 20, 50],
            margins: vec![0.2, 0.5, 0.75, 1.0],
        }
    }
}

impl GridAxes {
    /// Grid points for `base.kind`. Models without a memory collapse the
    /// slices axis onto `base.slices`.
    pub fn cells(&self, base: &Hyperparams) -> Vec<Hyperparams> {
        let slices: &[usize] = if base.kind.uses_memory() {
            &self.slices
        } else {
            std::slice::from_ref(&base.slices)
        };
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &n in slices {
                for &m in &self.margins {
                    out.push(Hyperparams {
                        lr,
                        slices: n,
                        margin: m,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub hyperparams: Hyperparams,
    pub valid_ndcg: f64,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFailure {
    pub hyperparams: Hyperparams,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    /// Successful cells by descending validation NDCG@10, stable in grid order.
    pub leaderboard: Vec<GridEntry>,
    pub failures: Vec<GridFailure>,
    /// Parameters of the leading cell.
    pub best_store: Option<ParameterStore>,
}

impl GridOutcome {
    pub fn best(&self) -> Option<&Hyperparams> {
        self.leaderboard.first().map(|e| &e.hyperparams)
    }

    /// Tab-separated leaderboard followed by the failed cells.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rank\tlr\tslices\tmargin\tvalid_ndcg@10\tbest_epoch\tbest_valid_loss\n");
        for (i, e) in self.leaderboard.iter().enumerate() {
            let h = &e.hyperparams;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}\t{}\t{:.9}",
                i + 1,
                h.lr,
                h.slices,
                h.margin,
                e.valid_ndcg * 100.0,
                e.best_epoch,
                e.best_valid_loss
            );
        }
        for f in &self.failures {
            let h = &f.hyperparams;
            let _ = writeln!(out, "# failed lr={} slices={} margin={}: {}", h.lr, h.slices, h.margin, f.reason);
        }
        out
    }
}

/// Trains every grid cell and ranks them by validation NDCG at `cutoff`.
/// A failing cell is recorded and the search continues.
pub fn grid_search(
    split: &SplitDataset,
    base: &Hyperparams,
    axes: &GridAxes,
    cutoff: usize,
) -> Result<GridOutcome, TrainError> {
    if axes.learning_rates.is_empty() || axes.slices.is_empty() || axes.margins.is_empty() {
        return Err(TrainError::InvalidConfig("grid axes must be non-empty".into()));
    }
    let mut leaderboard: Vec<GridEntry> = Vec::new();
    let mut best_store: Option<ParameterStore> = None;
    let mut failures = Vec::new();
    for hp in axes.cells(base) {
        let outcome = train(split, &hp).map_err(|e| e.to_string()).and_then(|(store, report)| {
            evaluate_model(&store, hp.kind, split, Phase::Validation, cutoff, hp.history_cap, hp.seed)
                .map_err(|e: EvalError| e.to_string())
                .map(|r| (store, report, r))
        });
        match outcome {
            Ok((store, report, eval)) => {
                log::info!(
                    "grid cell lr={} N={} m={}: valid NDCG@{cutoff}={:.4}",
                    hp.lr,
                    hp.slices,
                    hp.margin,
                    eval.ndcg
                );
                if leaderboard.iter().all(|e| eval.ndcg > e.valid_ndcg) {
                    best_store = Some(store);
                }
                leaderboard.push(GridEntry {
                    hyperparams: hp,
                    valid_ndcg: eval.ndcg,
                    best_epoch: report.best_epoch,
                    best_valid_loss: report.best_valid_loss,
                });
            }
            Err(reason) => {
                log::warn!("grid cell lr={} N={} m={} failed: {reason}", hp.lr, hp.slices, hp.margin);
                failures.push(GridFailure { hyperparams: hp, reason });
            }
        }
    }
    leaderboard.sort_by(|a, b| b.valid_ndcg.total_cmp(&a.valid_ndcg));
    Ok(GridOutcome {
        leaderboard,
        failures,
        best_store,
    })
}
