//! Scoring and analytic gradients for the metric-learning model family:
//! CML, LRML, AdaCML, HLR and HLR++.
//!
//! Every model scores a user–item pair by the translated squared distance
//! `‖p_u + r̄_{u,v} − q_v‖²`; they differ only in how the relation vector
//! `r̄_{u,v}` is built:
//!
//! | kind    | relation                                                        |
//! |---------|-----------------------------------------------------------------|
//! | CML     | zero                                                            |
//! | LRML    | memory read of `p_u ⊙ q_v`                                      |
//! | AdaCML  | softmax(`q_vᵀ q_j`)-weighted sum of history items `q_j`         |
//! | HLR     | softmax(`p_uᵀ r_{v,j}`)-weighted sum of item–item relations     |
//! | HLR++   | HLR plus the symmetric user–user module over the item's users   |

mod forward;
mod relation;

use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::parameters::{ParameterStore, SparseGradients};

pub(crate) use forward::Forward;
use forward::{memory_read, GradSink};
pub use relation::{joint_embedding, key_attention, relation_vector, softmax, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Cml,
    Lrml,
    AdaCml,
    Hlr,
    HlrPlusPlus,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Cml,
        ModelKind::Lrml,
        ModelKind::AdaCml,
        ModelKind::Hlr,
        ModelKind::HlrPlusPlus,
    ];

    /// Uses the key/memory matrices.
    pub fn uses_memory(self) -> bool {
        matches!(self, ModelKind::Lrml | ModelKind::Hlr | ModelKind::HlrPlusPlus)
    }

    pub fn uses_item_memory(self) -> bool {
        self == ModelKind::HlrPlusPlus
    }

    /// Attends over the user's item history.
    pub fn uses_history(self) -> bool {
        matches!(self, ModelKind::AdaCml | ModelKind::Hlr | ModelKind::HlrPlusPlus)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cml => "cml",
            ModelKind::Lrml => "lrml",
            ModelKind::AdaCml => "adacml",
            ModelKind::Hlr => "hlr",
            ModelKind::HlrPlusPlus => "hlr++",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cml" => Ok(ModelKind::Cml),
            "lrml" => Ok(ModelKind::Lrml),
            "adacml" => Ok(ModelKind::AdaCml),
            "hlr" => Ok(ModelKind::Hlr),
            "hlr++" | "hlrpp" | "hlrplusplus" => Ok(ModelKind::HlrPlusPlus),
            other => Err(format!(
                "unknown model {other:?} (expected cml|lrml|adacml|hlr|hlr++)"
            )),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value for triplet #{index} (user {user}, positive {positive}, negative {negative})")]
    NonFinite {
        index: usize,
        user: u32,
        positive: u32,
        negative: u32,
    },
}

/// Attention support sets for scoring one `(u, v)` pair.
#[derive(Debug, Clone, Copy)]
pub struct RelationContext<'a> {
    pub user: u32,
    pub item: u32,
    /// Train items of `u` other than `v`, possibly capped.
    pub history: &'a [u32],
    /// Train users of `v` other than `u`, possibly capped. HLR++ only.
    pub item_history: &'a [u32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    pub distance: f64,
    pub relation: Vec<f64>,
    /// Post-softmax key weights, one `N`-vector per attended pair.
    pub key_weights: Vec<Vec<f64>>,
    /// Post-softmax attention over `history`.
    pub history_weights: Vec<f64>,
    /// Post-softmax attention over `item_history` (HLR++).
    pub item_history_weights: Vec<f64>,
}

fn check_store(kind: ModelKind, store: &ParameterStore) -> Result<(), ModelError> {
    if kind.uses_item_memory() && store.item_memory.is_none() {
        return Err(ModelError::Contract("HLR++ requires an item-side memory".into()));
    }
    if store.memory.keys.cols() != store.dim()
        || store.items.cols() != store.dim()
        || store.memory.values.rows() != store.slices()
    {
        return Err(ModelError::Contract("tensor shapes disagree".into()));
    }
    Ok(())
}

fn check_context(ctx: &RelationContext<'_>, store: &ParameterStore) -> Result<(), ModelError> {
    let (nu, ni) = (store.num_users() as u32, store.num_items() as u32);
    if ctx.user >= nu || ctx.item >= ni {
        return Err(ModelError::Contract(format!(
            "user {} / item {} out of range ({nu} users, {ni} items)",
            ctx.user, ctx.item
        )));
    }
    if let Some(bad) = ctx.history.iter().find(|&&j| j >= ni || j == ctx.item) {
        return Err(ModelError::Contract(format!(
            "history item {bad} is out of range or equals the target item"
        )));
    }
    if let Some(bad) = ctx.item_history.iter().find(|&&j| j >= nu || j == ctx.user) {
        return Err(ModelError::Contract(format!(
            "item-history user {bad} is out of range or equals the target user"
        )));
    }
    Ok(())
}

/// `r_{v1,v2}`: memory read of `q_{v1} ⊙ q_{v2}`.
pub fn item_item_relation(v1: u32, v2: u32, store: &ParameterStore) -> Vec<f64> {
    memory_read(
        store.items.row(v1 as usize),
        store.items.row(v2 as usize),
        &store.memory,
    )
    .1
}

/// User attention module: `(r̄ᵁ_{u,v}, α)`. Empty history → zero vector.
pub fn user_relation(ctx: &RelationContext<'_>, store: &ParameterStore) -> (Vec<f64>, Vec<f64>) {
    let mut fwd = Forward::default();
    fwd.run(ctx, ModelKind::Hlr, store);
    (fwd.relation, fwd.user_side.weights[..fwd.user_side.len].to_vec())
}

/// Item attention module of HLR++: `(r̄ᴵ_{u,v}, β)`. Empty item history →
/// zero vector.
pub fn item_relation(ctx: &RelationContext<'_>, store: &ParameterStore) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    check_store(ModelKind::HlrPlusPlus, store)?;
    let no_items = RelationContext { history: &[], ..*ctx };
    let mut fwd = Forward::default();
    fwd.run(&no_items, ModelKind::HlrPlusPlus, store);
    let side = &fwd.item_side;
    Ok((side.output.clone(), side.weights[..side.len].to_vec()))
}

/// Full forward pass with attention traces.
pub fn score(ctx: &RelationContext<'_>, kind: ModelKind, store: &ParameterStore) -> Result<ScoreBreakdown, ModelError> {
    check_store(kind, store)?;
    check_context(ctx, store)?;
    let mut fwd = Forward::default();
    let distance = fwd.run(ctx, kind, store);
    let attn_keys = |a: &relation::Attention| -> Vec<Vec<f64>> {
        (0..a.len).map(|j| a.key_weights_of(j).to_vec()).collect()
    };
    let (key_weights, history_weights, item_history_weights) = match kind {
        ModelKind::Cml => (Vec::new(), Vec::new(), Vec::new()),
        ModelKind::Lrml => (attn_keys(&fwd.direct), Vec::new(), Vec::new()),
        ModelKind::AdaCml => (Vec::new(), fwd.user_side.weights[..fwd.user_side.len].to_vec(), Vec::new()),
        ModelKind::Hlr => (
            attn_keys(&fwd.user_side),
            fwd.user_side.weights[..fwd.user_side.len].to_vec(),
            Vec::new(),
        ),
        ModelKind::HlrPlusPlus => {
            let mut keys = attn_keys(&fwd.user_side);
            keys.extend(attn_keys(&fwd.item_side));
            (
                keys,
                fwd.user_side.weights[..fwd.user_side.len].to_vec(),
                fwd.item_side.weights[..fwd.item_side.len].to_vec(),
            )
        }
    };
    Ok(ScoreBreakdown {
        distance,
        relation: fwd.relation,
        key_weights,
        history_weights,
        item_history_weights,
    })
}

/// Hinge `[d_pos − d_neg + m]₊`.
pub fn triplet_margin_loss(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    (d_pos - d_neg + margin).max(0.0)
}

/// One training instance `(u, v, v⁻)` with its attention supports. Both
/// distances share `history`; each item carries its own item history.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletContext {
    pub user: u32,
    pub positive: u32,
    pub negative: u32,
    pub history: Vec<u32>,
    pub positive_item_history: Vec<u32>,
    pub negative_item_history: Vec<u32>,
}

impl TripletContext {
    pub fn positive_ctx(&self) -> RelationContext<'_> {
        RelationContext {
            user: self.user,
            item: self.positive,
            history: &self.history,
            item_history: &self.positive_item_history,
        }
    }

    pub fn negative_ctx(&self) -> RelationContext<'_> {
        RelationContext {
            user: self.user,
            item: self.negative,
            history: &self.history,
            item_history: &self.negative_item_history,
        }
    }
}

/// Triplets per gradient-accumulation chunk. Chunks are reduced in index
/// order, so the summed gradient does not depend on the thread count.
const CHUNK: usize = 32;

/// Loss of a batch without gradients.
pub fn batch_loss(batch: &[TripletContext], kind: ModelKind, store: &ParameterStore, margin: f64) -> Result<f64, ModelError> {
    check_store(kind, store)?;
    let per_chunk: Vec<Result<f64, ModelError>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut fwd = Forward::default();
            let mut total = 0.0;
            for (i, t) in chunk.iter().enumerate() {
                let dp = fwd.run(&t.positive_ctx(), kind, store);
                let dn = fwd.run(&t.negative_ctx(), kind, store);
                let loss = triplet_margin_loss(dp, dn, margin);
                if !loss.is_finite() {
                    return Err(non_finite(c * CHUNK + i, t));
                }
                total += loss;
            }
            Ok(total)
        })
        .collect();
    per_chunk.into_iter().try_fold(0.0, |acc, r| r.map(|x| acc + x))
}

fn non_finite(index: usize, t: &TripletContext) -> ModelError {
    ModelError::NonFinite {
        index,
        user: t.user,
        positive: t.positive,
        negative: t.negative,
    }
}

/// Exact subgradient of `Σ [d(u,v) − d(u,v⁻) + m]₊` over the batch, and the
/// summed loss. Inactive hinges (slack ≤ 0) contribute nothing.
pub fn backward(
    batch: &[TripletContext],
    kind: ModelKind,
    store: &ParameterStore,
    margin: f64,
) -> Result<(SparseGradients, f64), ModelError> {
    check_store(kind, store)?;
    if batch.is_empty() {
        return Err(ModelError::Contract("empty batch".into()));
    }
    for t in batch {
        check_context(&t.positive_ctx(), store)?;
        check_context(&t.negative_ctx(), store)?;
    }
    let per_chunk: Vec<Result<(SparseGradients, f64), ModelError>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut sink = GradSink::new(store);
            let mut pos = Forward::default();
            let mut neg = Forward::default();
            let mut total = 0.0;
            for (i, t) in chunk.iter().enumerate() {
                let dp = pos.run(&t.positive_ctx(), kind, store);
                let dn = neg.run(&t.negative_ctx(), kind, store);
                let slack = dp - dn + margin;
                if !slack.is_finite() {
                    return Err(non_finite(c * CHUNK + i, t));
                }
                if slack > 0.0 {
                    total += slack;
                    pos.backward(1.0, store, &mut sink);
                    neg.backward(-1.0, store, &mut sink);
                }
            }
            Ok((sink.into_sparse(), total))
        })
        .collect();

    let mut grads = SparseGradients::new(store.dim());
    let mut loss = 0.0;
    for part in per_chunk {
        let (g, l) = part?;
        grads.merge(&g);
        loss += l;
    }
    if let Some(id) = crate::parameters::TensorId::ALL.iter().find(|&&id| {
        grads
            .rows(id)
            .iter()
            .any(|(_, g)| g.iter().any(|x| !x.is_finite()))
    }) {
        return Err(ModelError::Contract(format!("non-finite gradient in {id:?}")));
    }
    Ok((grads, loss))
}
