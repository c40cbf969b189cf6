use std::collections::HashMap;

use super::{Matrix, ParamError, ParameterStore, TensorId};

/// Accumulated gradients for the touched rows of one tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowGrads {
    dim: usize,
    slots: HashMap<u32, usize>,
    ids: Vec<u32>,
    data: Vec<f64>,
}

impl RowGrads {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Row ids in first-touch order.
    pub fn row_ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn get(&self, row: u32) -> Option<&[f64]> {
        self.slots
            .get(&row)
            .map(|&s| &self.data[s * self.dim..(s + 1) * self.dim])
    }

    pub fn row_mut(&mut self, row: u32) -> &mut [f64] {
        let dim = self.dim;
        let slot = *self.slots.entry(row).or_insert_with(|| {
            self.ids.push(row);
            self.data.resize(self.data.len() + dim, 0.0);
            self.ids.len() - 1
        });
        &mut self.data[slot * dim..(slot + 1) * dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.ids
            .iter()
            .zip(self.data.chunks_exact(self.dim.max(1)))
            .map(|(&r, g)| (r, g))
    }
}

/// Map from `(tensor, row)` to an accumulated `d`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradients {
    dim: usize,
    tensors: [RowGrads; 6],
}

impl SparseGradients {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tensors: std::array::from_fn(|_| RowGrads::new(dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self, id: TensorId) -> &RowGrads {
        &self.tensors[id.slot()]
    }

    pub fn row_mut(&mut self, id: TensorId, row: u32) -> &mut [f64] {
        self.tensors[id.slot()].row_mut(row)
    }

    pub fn add_row(&mut self, id: TensorId, row: u32, grad: &[f64]) {
        let acc = self.row_mut(id, row);
        for (a, g) in acc.iter_mut().zip(grad) {
            *a += g;
        }
    }

    pub fn get(&self, id: TensorId, row: u32) -> Option<&[f64]> {
        self.tensors[id.slot()].get(row)
    }

    /// Adds `other` into `self`, visiting rows in `other`'s insertion order.
    pub fn merge(&mut self, other: &SparseGradients) {
        for id in TensorId::ALL {
            for (row, g) in other.rows(id).iter() {
                self.add_row(id, row, g);
            }
        }
    }

    pub fn num_rows(&self) -> usize {
        self.tensors.iter().map(RowGrads::len).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|&x| x == 0.0))
    }

    fn check_finite(&self) -> Result<(), ParamError> {
        for id in TensorId::ALL {
            for (row, g) in self.rows(id).iter() {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(ParamError::NonFiniteGradient { tensor: id, row });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: [Option<Matrix>; 6],
    second: [Option<Matrix>; 6],
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParameterStore, config: AdamConfig) -> Self {
        let zeros = |id: TensorId| store.tensor(id).map(|m| Matrix::zeros(m.rows(), m.cols()));
        Self {
            config,
            first: TensorId::ALL.map(zeros),
            second: TensorId::ALL.map(zeros),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: TensorId) -> Option<&Matrix> {
        self.first[id.slot()].as_ref()
    }

    pub fn second_moment(&self, id: TensorId) -> Option<&Matrix> {
        self.second[id.slot()].as_ref()
    }
}

/// One bias-corrected Adam update over the rows present in `grads`.
/// Rows absent from `grads` keep both their parameters and their moments.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &SparseGradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), ParamError> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(ParamError::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
    }
    grads.check_finite()?;
    for id in TensorId::ALL {
        let rows = grads.rows(id);
        if rows.is_empty() {
            continue;
        }
        let limit = store.tensor(id).map_or(0, Matrix::rows);
        if let Some(&bad) = rows.row_ids().iter().find(|&&r| r as usize >= limit) {
            return Err(ParamError::MissingRow { tensor: id, row: bad });
        }
    }

    state.step += 1;
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correct1 = 1.0 - beta1.powi(t);
    let correct2 = 1.0 - beta2.powi(t);

    for id in TensorId::ALL {
        let rows = grads.rows(id);
        if rows.is_empty() {
            continue;
        }
        let param = store.tensor_mut(id).expect("checked above");
        let m = state.first[id.slot()].as_mut().expect("moment shaped like store");
        let v = state.second[id.slot()].as_mut().expect("moment shaped like store");
        for (row, g) in rows.iter() {
            let r = row as usize;
            let (p, m, v) = (param.row_mut(r), m.row_mut(r), v.row_mut(r));
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
    Ok(())
}
