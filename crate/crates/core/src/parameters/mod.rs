//! Learnable tensors, their initialization and the unit-ball projection.

mod adam;
mod checkpoint;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::rng::{stream_rng, Stream};

pub use adam::{adam_step, AdamConfig, AdamState, RowGrads, SparseGradients};
pub use checkpoint::{read_checkpoint, read_header, write_checkpoint, CheckpointError, CheckpointHeader};

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("non-finite gradient in {tensor:?} row {row}")]
    NonFiniteGradient { tensor: TensorId, row: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gradient refers to {tensor:?} row {row}, which does not exist")]
    MissingRow { tensor: TensorId, row: u32 },
}

/// Identifies one learnable matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TensorId {
    User,
    Item,
    Key,
    Memory,
    ItemKey,
    ItemMemory,
}

impl TensorId {
    pub const ALL: [TensorId; 6] = [
        TensorId::User,
        TensorId::Item,
        TensorId::Key,
        TensorId::Memory,
        TensorId::ItemKey,
        TensorId::ItemMemory,
    ];

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.rows).map(|i| norm(self.row(i))).fold(0.0, f64::max)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Key–value memory: `N` relation keys and their memory vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub keys: Matrix,
    pub values: Matrix,
}

impl MemoryBank {
    pub fn slices(&self) -> usize {
        self.keys.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    /// `P`: one row per user.
    pub users: Matrix,
    /// `Q`: one row per item.
    pub items: Matrix,
    /// Item–item (and, for LRML, user–item) relation memory.
    pub memory: MemoryBank,
    /// User–user relation memory of the item attention module.
    pub item_memory: Option<MemoryBank>,
}

impl ParameterStore {
    pub fn dim(&self) -> usize {
        self.users.cols()
    }

    pub fn slices(&self) -> usize {
        self.memory.slices()
    }

    pub fn num_users(&self) -> usize {
        self.users.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    pub fn tensor(&self, id: TensorId) -> Option<&Matrix> {
        match id {
            TensorId::User => Some(&self.users),
            TensorId::Item => Some(&self.items),
            TensorId::Key => Some(&self.memory.keys),
            TensorId::Memory => Some(&self.memory.values),
            TensorId::ItemKey => self.item_memory.as_ref().map(|b| &b.keys),
            TensorId::ItemMemory => self.item_memory.as_ref().map(|b| &b.values),
        }
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> Option<&mut Matrix> {
        match id {
            TensorId::User => Some(&mut self.users),
            TensorId::Item => Some(&mut self.items),
            TensorId::Key => Some(&mut self.memory.keys),
            TensorId::Memory => Some(&mut self.memory.values),
            TensorId::ItemKey => self.item_memory.as_mut().map(|b| &mut b.keys),
            TensorId::ItemMemory => self.item_memory.as_mut().map(|b| &mut b.values),
        }
    }

    pub fn is_finite(&self) -> bool {
        TensorId::ALL
            .iter()
            .filter_map(|&id| self.tensor(id))
            .all(Matrix::is_finite)
    }
}

/// Draws every entry i.i.d. from `N(0, 1/d)` and projects `P`, `Q` into
/// the unit ball.
pub fn init_parameters(
    num_users: usize,
    num_items: usize,
    dim: usize,
    slices: usize,
    with_item_memory: bool,
    seed: u64,
) -> Result<ParameterStore, ParamError> {
    if dim == 0 || slices == 0 {
        return Err(ParamError::InvalidArgument(format!(
            "dimension and slice count must be >= 1 (d={dim}, N={slices})"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Init, 0);
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
    let mut draw = |rows: usize| {
        let data = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
        Matrix::from_vec(rows, dim, data)
    };
    let users = draw(num_users);
    let items = draw(num_items);
    let memory = MemoryBank {
        keys: draw(slices),
        values: draw(slices),
    };
    let item_memory = with_item_memory.then(|| MemoryBank {
        keys: draw(slices),
        values: draw(slices),
    });
    let mut store = ParameterStore {
        users,
        items,
        memory,
        item_memory,
    };
    project_unit_ball(&mut store);
    Ok(store)
}

/// Rescales `row` onto the unit sphere when it lies outside the ball. The
/// result is guaranteed to satisfy `norm(row) <= 1` as recomputed in
/// floating point, so a second projection is a no-op.
fn project_row(row: &mut [f64]) {
    let n = norm(row);
    if n <= 1.0 {
        return;
    }
    row.iter_mut().for_each(|x| *x /= n);
    while norm(row) > 1.0 {
        row.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
    }
}

fn project_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        project_row(m.row_mut(i));
    }
}

/// Replaces every row `r` of `P` and `Q` by `r / max(1, ‖r‖₂)`.
/// Keys and memories are left untouched.
pub fn project_unit_ball(store: &mut ParameterStore) {
    project_rows(&mut store.users);
    project_rows(&mut store.items);
}

/// Projects only the listed rows; used after a sparse step.
pub(crate) fn project_rows_touched(store: &mut ParameterStore, grads: &SparseGradients) {
    for id in [TensorId::User, TensorId::Item] {
        let m = store.tensor_mut(id).expect("user and item tensors always exist");
        for &row in grads.rows(id).row_ids() {
            project_row(m.row_mut(row as usize));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_is_deterministic() {
        let a = init_parameters(10, 12, 100, 5, true, 7).unwrap();
        let b = init_parameters(10, 12, 100, 5, true, 7).unwrap();
        assert_eq!(a, b);
        let c = init_parameters(10, 12, 100, 5, true, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rows_inside_ball() {
        let s = init_parameters(50, 40, 16, 4, false, 1).unwrap();
        assert!(s.users.max_row_norm() <= 1.0 + 1e-12);
        assert!(s.items.max_row_norm() <= 1.0 + 1e-12);
        assert!(s.item_memory.is_none());
    }

    #[test]
    fn init_minimal_shape() {
        let s = init_parameters(1, 1, 1, 1, true, 0).unwrap();
        assert_eq!(s.users.as_slice().len(), 1);
        assert_eq!(s.items.as_slice().len(), 1);
        assert_eq!(s.memory.keys.as_slice().len(), 1);
        assert_eq!(s.memory.values.as_slice().len(), 1);
        assert!(s.is_finite());
        assert!(init_parameters(1, 1, 0, 1, false, 0).is_err());
    }

    fn store_with_user_row(row: Vec<f64>) -> ParameterStore {
        let d = row.len();
        ParameterStore {
            users: Matrix::from_vec(1, d, row),
            items: Matrix::zeros(1, d),
            memory: MemoryBank {
                keys: Matrix::from_vec(1, d, vec![5.0; d]),
                values: Matrix::from_vec(1, d, vec![5.0; d]),
            },
            item_memory: None,
        }
    }

    #[test]
    fn projection_cases() {
        let mut inside = store_with_user_row(vec![0.3, 0.4]);
        project_unit_ball(&mut inside);
        assert_eq!(inside.users.row(0), &[0.3, 0.4]);

        let mut outside = store_with_user_row(vec![1.2, 1.6]);
        project_unit_ball(&mut outside);
        assert!((norm(outside.users.row(0)) - 1.0).abs() < 1e-6);
        // keys and memories are unconstrained
        assert_eq!(outside.memory.keys.row(0), &[5.0, 5.0]);

        let mut zero = store_with_user_row(vec![0.0, 0.0]);
        project_unit_ball(&mut zero);
        assert_eq!(zero.users.row(0), &[0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(row in prop::collection::vec(-5.0f64..5.0, 1..8)) {
            let mut once = store_with_user_row(row);
            project_unit_ball(&mut once);
            let mut twice = once.clone();
            project_unit_ball(&mut twice);
            prop_assert_eq!(once, twice);
        }
    }
}
