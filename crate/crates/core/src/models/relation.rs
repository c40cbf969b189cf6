//! Relation building blocks: joint embeddings, key addressing, memory
//! readout and softmax attention over a support set, with their
//! vector-Jacobian products.

use crate::parameters::MemoryBank;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Elementwise product `q1 ⊙ q2`.
pub fn joint_embedding(q1: &[f64], q2: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; q1.len()];
    joint_embedding_into(q1, q2, &mut out);
    out
}

#[inline]
pub(crate) fn joint_embedding_into(q1: &[f64], q2: &[f64], out: &mut [f64]) {
    debug_assert_eq!(q1.len(), q2.len());
    for ((o, a), b) in out.iter_mut().zip(q1).zip(q2) {
        *o = a * b;
    }
}

/// Max-shifted softmax in place.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in logits.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in logits.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

#[inline]
fn key_attention_into(s: &[f64], keys: &crate::parameters::Matrix, out: &mut [f64]) {
    for (i, w) in out.iter_mut().enumerate() {
        *w = dot(s, keys.row(i));
    }
    softmax_in_place(out);
}

/// `softmax(K s)`: attention of a joint embedding over the `N` keys.
pub fn key_attention(s: &[f64], keys: &crate::parameters::Matrix) -> Vec<f64> {
    let mut out = vec![0.0; keys.rows()];
    key_attention_into(s, keys, &mut out);
    out
}

#[inline]
fn relation_vector_into(w: &[f64], values: &crate::parameters::Matrix, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, &wi) in w.iter().enumerate() {
        axpy(wi, values.row(i), out);
    }
}

/// `Σᵢ wᵢ mᵢ`.
pub fn relation_vector(w: &[f64], values: &crate::parameters::Matrix) -> Vec<f64> {
    let mut out = vec![0.0; values.cols()];
    relation_vector_into(w, values, &mut out);
    out
}

/// Dense gradient accumulator for one memory bank.
#[derive(Debug, Clone)]
pub(crate) struct BankGrad {
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
    pub touched: bool,
}

impl BankGrad {
    pub fn new(slices: usize, dim: usize) -> Self {
        Self {
            keys: vec![0.0; slices * dim],
            values: vec![0.0; slices * dim],
            touched: false,
        }
    }
}

/// Reads the memory for the pair `(x, y)`, writing the joint embedding,
/// key weights and relation vector into the provided buffers.
#[inline]
pub(crate) fn read_memory(
    x: &[f64],
    y: &[f64],
    bank: &MemoryBank,
    joint: &mut [f64],
    weights: &mut [f64],
    relation: &mut [f64],
) {
    joint_embedding_into(x, y, joint);
    key_attention_into(joint, &bank.keys, weights);
    relation_vector_into(weights, &bank.values, relation);
}

/// Backpropagates `grad_relation` through one memory read.
#[allow(clippy::too_many_arguments)]
pub(crate) fn read_memory_backward(
    x: &[f64],
    y: &[f64],
    bank: &MemoryBank,
    joint: &[f64],
    weights: &[f64],
    grad_relation: &[f64],
    grad_x: &mut [f64],
    grad_y: &mut [f64],
    bank_grad: &mut BankGrad,
    scratch: &mut Vec<f64>,
) {
    let d = joint.len();
    let n = weights.len();
    bank_grad.touched = true;
    // a_i = g · m_i ; dz_i = w_i (a_i - Σ w a)
    scratch.clear();
    scratch.extend((0..n).map(|i| dot(grad_relation, bank.values.row(i))));
    let mean: f64 = weights.iter().zip(scratch.iter()).map(|(w, a)| w * a).sum();
    let (dz, grad_joint) = {
        scratch.resize(n + d, 0.0);
        let (a, gj) = scratch.split_at_mut(n);
        gj.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            a[i] = weights[i] * (a[i] - mean);
        }
        (a, gj)
    };
    for i in 0..n {
        axpy(weights[i], grad_relation, &mut bank_grad.values[i * d..(i + 1) * d]);
        axpy(dz[i], joint, &mut bank_grad.keys[i * d..(i + 1) * d]);
        axpy(dz[i], bank.keys.row(i), grad_joint);
    }
    for k in 0..d {
        grad_x[k] += grad_joint[k] * y[k];
        grad_y[k] += grad_joint[k] * x[k];
    }
}

/// Attention over a support set. Each support element contributes a
/// relation vector (either a memory read or a raw embedding); the query
/// scores them by inner product and the output is their softmax-weighted
/// sum.
#[derive(Debug, Clone, Default)]
pub(crate) struct Attention {
    pub len: usize,
    pub dim: usize,
    pub slices: usize,
    pub joints: Vec<f64>,
    pub key_weights: Vec<f64>,
    pub relations: Vec<f64>,
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

impl Attention {
    fn reset(&mut self, len: usize, dim: usize, slices: usize) {
        self.len = len;
        self.dim = dim;
        self.slices = slices;
        self.joints.resize(len * dim, 0.0);
        self.key_weights.resize(len * slices, 0.0);
        self.relations.resize(len * dim, 0.0);
        self.weights.resize(len, 0.0);
        self.output.clear();
        self.output.resize(dim, 0.0);
    }

    pub fn relation(&self, j: usize) -> &[f64] {
        &self.relations[j * self.dim..(j + 1) * self.dim]
    }

    pub fn joint(&self, j: usize) -> &[f64] {
        &self.joints[j * self.dim..(j + 1) * self.dim]
    }

    pub fn key_weights_of(&self, j: usize) -> &[f64] {
        &self.key_weights[j * self.slices..(j + 1) * self.slices]
    }

    /// `relations[j] = read_memory(anchor, support(j))`.
    pub fn memory_relations<'a>(
        &mut self,
        anchor: &[f64],
        len: usize,
        support: impl Fn(usize) -> &'a [f64],
        bank: &MemoryBank,
    ) {
        let (d, n) = (anchor.len(), bank.slices());
        self.reset(len, d, n);
        for j in 0..len {
            read_memory(
                anchor,
                support(j),
                bank,
                &mut self.joints[j * d..(j + 1) * d],
                &mut self.key_weights[j * n..(j + 1) * n],
                &mut self.relations[j * d..(j + 1) * d],
            );
        }
    }

    /// `relations[j] = support(j)`, no memory stage.
    pub fn raw_relations<'a>(&mut self, dim: usize, len: usize, support: impl Fn(usize) -> &'a [f64]) {
        self.reset(len, dim, 0);
        for j in 0..len {
            self.relations[j * dim..(j + 1) * dim].copy_from_slice(support(j));
        }
    }

    /// Softmax over `query · relations[j]` and weighted sum. An empty
    /// support yields a zero output.
    pub fn attend(&mut self, query: &[f64]) {
        let d = self.dim;
        for j in 0..self.len {
            self.weights[j] = dot(query, &self.relations[j * d..(j + 1) * d]);
        }
        if self.len == 0 {
            return;
        }
        softmax_in_place(&mut self.weights);
        self.output.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..self.len {
            axpy(self.weights[j], &self.relations[j * d..(j + 1) * d], &mut self.output);
        }
    }

    /// Given `∂L/∂output`, accumulates `∂L/∂query` and writes
    /// `∂L/∂relations[j]` into `grad_relations` (len × d).
    pub fn attend_backward(
        &self,
        query: &[f64],
        grad_output: &[f64],
        grad_query: &mut [f64],
        grad_relations: &mut Vec<f64>,
    ) {
        let d = self.dim;
        grad_relations.clear();
        grad_relations.resize(self.len * d, 0.0);
        if self.len == 0 {
            return;
        }
        let b: Vec<f64> = (0..self.len).map(|j| dot(grad_output, self.relation(j))).collect();
        let mean: f64 = self.weights.iter().zip(&b).map(|(w, b)| w * b).sum();
        for j in 0..self.len {
            let w = self.weights[j];
            let dc = w * (b[j] - mean);
            axpy(dc, self.relation(j), grad_query);
            let g = &mut grad_relations[j * d..(j + 1) * d];
            axpy(w, grad_output, g);
            axpy(dc, query, g);
        }
    }
}
