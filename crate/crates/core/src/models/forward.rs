use super::relation::{axpy, read_memory, read_memory_backward, Attention, BankGrad};
use super::{ModelKind, RelationContext};
use crate::parameters::{ParameterStore, SparseGradients, TensorId};

/// Reusable forward-pass workspace. After [`Forward::run`] it holds every
/// intermediate needed by [`Forward::backward`].
#[derive(Debug, Clone, Default)]
pub(crate) struct Forward {
    pub kind: Option<ModelKind>,
    pub user: u32,
    pub item: u32,
    pub history: Vec<u32>,
    pub item_history: Vec<u32>,
    /// Item-history attention (HLR, HLR++) or raw item attention (AdaCML).
    pub user_side: Attention,
    /// User-history attention over the item-side memory (HLR++).
    pub item_side: Attention,
    /// LRML's single user–item memory read.
    pub direct: Attention,
    pub relation: Vec<f64>,
    pub residual: Vec<f64>,
    pub distance: f64,
}

/// Gradient sink for one worker: sparse user/item rows plus dense memory
/// banks.
#[derive(Debug, Clone)]
pub(crate) struct GradSink {
    pub rows: SparseGradients,
    pub memory: BankGrad,
    pub item_memory: Option<BankGrad>,
    grad_relations: Vec<f64>,
    scratch: Vec<f64>,
    tmp_x: Vec<f64>,
    tmp_y: Vec<f64>,
}

impl GradSink {
    pub fn new(store: &ParameterStore) -> Self {
        let (d, n) = (store.dim(), store.slices());
        Self {
            rows: SparseGradients::new(d),
            memory: BankGrad::new(n, d),
            item_memory: store.item_memory.as_ref().map(|b| BankGrad::new(b.slices(), d)),
            grad_relations: Vec::new(),
            scratch: Vec::new(),
            tmp_x: vec![0.0; d],
            tmp_y: vec![0.0; d],
        }
    }

    /// Flushes dense memory gradients into the sparse map.
    pub fn into_sparse(mut self) -> SparseGradients {
        let d = self.rows.dim();
        let banks = [
            (Some(self.memory), TensorId::Key, TensorId::Memory),
            (self.item_memory, TensorId::ItemKey, TensorId::ItemMemory),
        ];
        for (bank, key_id, value_id) in banks {
            let Some(bank) = bank else { continue };
            if !bank.touched {
                continue;
            }
            for (i, (k, v)) in bank.keys.chunks_exact(d).zip(bank.values.chunks_exact(d)).enumerate() {
                self.rows.add_row(key_id, i as u32, k);
                self.rows.add_row(value_id, i as u32, v);
            }
        }
        self.rows
    }
}

impl Forward {
    /// Computes `‖p_u + r̄ − q_v‖²` for `ctx` under `kind`.
    pub fn run(&mut self, ctx: &RelationContext<'_>, kind: ModelKind, store: &ParameterStore) -> f64 {
        let d = store.dim();
        let p = store.users.row(ctx.user as usize);
        let q = store.items.row(ctx.item as usize);
        self.kind = Some(kind);
        self.user = ctx.user;
        self.item = ctx.item;
        self.history.clear();
        self.history.extend_from_slice(ctx.history);
        self.item_history.clear();
        self.relation.clear();
        self.relation.resize(d, 0.0);

        match kind {
            ModelKind::Cml => {}
            ModelKind::Lrml => {
                self.direct.memory_relations(p, 1, |_| q, &store.memory);
                self.relation.copy_from_slice(self.direct.relation(0));
            }
            ModelKind::AdaCml => {
                let items = &store.items;
                let h = ctx.history;
                self.user_side.raw_relations(d, h.len(), |j| items.row(h[j] as usize));
                self.user_side.attend(q);
                self.relation.copy_from_slice(&self.user_side.output);
            }
            ModelKind::Hlr | ModelKind::HlrPlusPlus => {
                let items = &store.items;
                let h = ctx.history;
                self.user_side
                    .memory_relations(q, h.len(), |j| items.row(h[j] as usize), &store.memory);
                self.user_side.attend(p);
                self.relation.copy_from_slice(&self.user_side.output);
                if kind == ModelKind::HlrPlusPlus {
                    let bank = store
                        .item_memory
                        .as_ref()
                        .expect("HLR++ store carries an item-side memory");
                    self.item_history.extend_from_slice(ctx.item_history);
                    let users = &store.users;
                    let ih = ctx.item_history;
                    self.item_side
                        .memory_relations(p, ih.len(), |j| users.row(ih[j] as usize), bank);
                    self.item_side.attend(q);
                    for (r, x) in self.relation.iter_mut().zip(&self.item_side.output) {
                        *r += x;
                    }
                }
            }
        }

        self.residual.clear();
        self.residual
            .extend(p.iter().zip(&self.relation).zip(q).map(|((p, r), q)| p + r - q));
        self.distance = self.residual.iter().map(|e| e * e).sum();
        self.distance
    }

    /// Accumulates `coeff · ∂distance/∂θ` into `sink`.
    pub fn backward(&self, coeff: f64, store: &ParameterStore, sink: &mut GradSink) {
        let kind = self.kind.expect("forward ran before backward");
        let (u, v) = (self.user, self.item);
        let p = store.users.row(u as usize);
        let q = store.items.row(v as usize);
        let g: Vec<f64> = self.residual.iter().map(|e| 2.0 * coeff * e).collect();
        axpy(1.0, &g, sink.rows.row_mut(TensorId::User, u));
        axpy(-1.0, &g, sink.rows.row_mut(TensorId::Item, v));

        match kind {
            ModelKind::Cml => {}
            ModelKind::Lrml => {
                let (gx, gy) = zeroed(&mut sink.tmp_x, &mut sink.tmp_y);
                read_memory_backward(
                    p,
                    q,
                    &store.memory,
                    self.direct.joint(0),
                    self.direct.key_weights_of(0),
                    &g,
                    gx,
                    gy,
                    &mut sink.memory,
                    &mut sink.scratch,
                );
                axpy(1.0, gx, sink.rows.row_mut(TensorId::User, u));
                axpy(1.0, gy, sink.rows.row_mut(TensorId::Item, v));
            }
            ModelKind::AdaCml => {
                let attn = &self.user_side;
                let d = attn.dim;
                self.user_side
                    .attend_backward(q, &g, sink.rows.row_mut(TensorId::Item, v), &mut sink.grad_relations);
                for (j, &item) in self.history.iter().enumerate() {
                    let gr = &sink.grad_relations[j * d..(j + 1) * d];
                    axpy(1.0, gr, sink.rows.row_mut(TensorId::Item, item));
                }
            }
            ModelKind::Hlr | ModelKind::HlrPlusPlus => {
                backward_hier(
                    &self.user_side,
                    &self.history,
                    (TensorId::User, u),
                    (TensorId::Item, v),
                    TensorId::Item,
                    &g,
                    store,
                    false,
                    sink,
                );
                if kind == ModelKind::HlrPlusPlus {
                    backward_hier(
                        &self.item_side,
                        &self.item_history,
                        (TensorId::Item, v),
                        (TensorId::User, u),
                        TensorId::User,
                        &g,
                        store,
                        true,
                        sink,
                    );
                }
            }
        }
    }
}

fn zeroed<'a>(a: &'a mut Vec<f64>, b: &'a mut Vec<f64>) -> (&'a mut [f64], &'a mut [f64]) {
    a.iter_mut().for_each(|x| *x = 0.0);
    b.iter_mut().for_each(|x| *x = 0.0);
    (a.as_mut_slice(), b.as_mut_slice())
}

fn row_of(store: &ParameterStore, (id, row): (TensorId, u32)) -> &[f64] {
    store.tensor(id).expect("user/item tensor").row(row as usize)
}

/// Backward through one hierarchical attention module: softmax over
/// `query · r_j` with `r_j = read_memory(anchor, support_j)`.
#[allow(clippy::too_many_arguments)]
fn backward_hier(
    attn: &Attention,
    support: &[u32],
    query: (TensorId, u32),
    anchor: (TensorId, u32),
    support_tensor: TensorId,
    grad_output: &[f64],
    store: &ParameterStore,
    item_bank: bool,
    sink: &mut GradSink,
) {
    if support.is_empty() {
        return;
    }
    let d = attn.dim;
    let query_vec = row_of(store, query);
    let anchor_vec = row_of(store, anchor);
    let support_rows = store.tensor(support_tensor).expect("user/item tensor");
    let bank = if item_bank {
        store.item_memory.as_ref().expect("item memory present")
    } else {
        &store.memory
    };
    let mut grad_relations = std::mem::take(&mut sink.grad_relations);
    attn.attend_backward(
        query_vec,
        grad_output,
        sink.rows.row_mut(query.0, query.1),
        &mut grad_relations,
    );
    let mut grad_anchor = vec![0.0; d];
    for (j, &s) in support.iter().enumerate() {
        let sv = support_rows.row(s as usize);
        sink.tmp_y.iter_mut().for_each(|x| *x = 0.0);
        let bank_grad = if item_bank {
            sink.item_memory.as_mut().expect("item memory sink")
        } else {
            &mut sink.memory
        };
        read_memory_backward(
            anchor_vec,
            sv,
            bank,
            attn.joint(j),
            attn.key_weights_of(j),
            &grad_relations[j * d..(j + 1) * d],
            &mut grad_anchor,
            &mut sink.tmp_y,
            bank_grad,
            &mut sink.scratch,
        );
        axpy(1.0, &sink.tmp_y, sink.rows.row_mut(support_tensor, s));
    }
    axpy(1.0, &grad_anchor, sink.rows.row_mut(anchor.0, anchor.1));
    sink.grad_relations = grad_relations;
}

/// Standalone memory read used by the public relation helpers.
pub(crate) fn memory_read(x: &[f64], y: &[f64], bank: &crate::parameters::MemoryBank) -> (Vec<f64>, Vec<f64>) {
    let d = x.len();
    let mut joint = vec![0.0; d];
    let mut weights = vec![0.0; bank.slices()];
    let mut relation = vec![0.0; d];
    read_memory(x, y, bank, &mut joint, &mut weights, &mut relation);
    (weights, relation)
}
