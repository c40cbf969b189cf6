//! Python bindings: datasets, training, scoring, evaluation and metrics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::sync::Arc;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hlr_core::dataset::{
    dataset_stats, k_core_filter, load_interactions_path, read_split, split_dataset, write_split, LoadOptions, Phase,
    SplitDataset, SplitRatios,
};
use hlr_core::evaluation::{self, evaluate, evaluate_model, rank_items, EvalReport, ModelRanker, PopularityRanker};
use hlr_core::models::{score, ModelKind, RelationContext};
use hlr_core::parameters::{read_checkpoint, write_checkpoint, ParameterStore};
use hlr_core::synthetic::{planted_split, PlantedConfig};
use hlr_core::training::{train as train_model, Hyperparams, TrainError};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn parse_phase(phase: &str) -> PyResult<Phase> {
    phase.parse().map_err(value_err)
}

/// A k-core filtered, split interaction dataset.
#[pyclass(name = "Dataset", module = "hlr", frozen)]
struct PyDataset {
    inner: Arc<SplitDataset>,
}

#[pymethods]
impl PyDataset {
    /// Loads `user,item[,value]` events, keeps values >= threshold,
    /// applies the k-core filter and splits 80/10/10 per user.
    #[staticmethod]
    #[pyo3(signature = (path, threshold = 0.0, k = 10, seed = 0))]
    fn from_events(path: &str, threshold: f64, k: usize, seed: u64) -> PyResult<Self> {
        let raw = load_interactions_path(path, &LoadOptions::with_threshold(threshold)).map_err(value_err)?;
        let ds = k_core_filter(&raw, k).map_err(value_err)?;
        let split = split_dataset(ds, SplitRatios::default(), seed).map_err(value_err)?;
        Ok(Self { inner: Arc::new(split) })
    }

    /// Planted-cluster synthetic data.
    #[staticmethod]
    #[pyo3(signature = (num_users = 500, num_items = 300, num_clusters = 10, interactions_per_user = 30, seed = 0))]
    fn planted(num_users: usize, num_items: usize, num_clusters: usize, interactions_per_user: usize, seed: u64) -> PyResult<Self> {
        let cfg = PlantedConfig {
            num_users,
            num_items,
            num_clusters,
            interactions_per_user,
            ..PlantedConfig::default()
        };
        let split = planted_split(&cfg, seed).map_err(value_err)?;
        Ok(Self { inner: Arc::new(split) })
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(read_split(dir).map_err(value_err)?),
        })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        std::fs::create_dir_all(dir).map_err(io_err)?;
        write_split(&self.inner, dir).map_err(value_err)
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users()
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.num_items()
    }

    /// `(train, validation, test)` interaction counts.
    #[getter]
    fn sizes(&self) -> (usize, usize, usize) {
        (self.inner.train.len(), self.inner.validation.len(), self.inner.test.len())
    }

    fn stats(&self) -> PyResult<String> {
        Ok(dataset_stats(&self.inner.full).map_err(value_err)?.to_string())
    }

    fn user_index(&self, key: &str) -> Option<u32> {
        self.inner.full.users.index_of(key)
    }

    fn item_key(&self, index: u32) -> PyResult<String> {
        if index as usize >= self.inner.num_items() {
            return Err(value_err(format!("item index {index} out of range")));
        }
        Ok(self.inner.full.items.key(index).to_string())
    }

    fn train_items(&self, user: u32) -> PyResult<Vec<u32>> {
        if user as usize >= self.inner.num_users() {
            return Err(value_err(format!("user index {user} out of range")));
        }
        Ok(self.inner.train.items_of(user).to_vec())
    }

    fn __repr__(&self) -> String {
        let (tr, va, te) = self.sizes();
        format!(
            "Dataset(users={}, items={}, train={tr}, validation={va}, test={te})",
            self.num_users(),
            self.num_items()
        )
    }
}

/// Trained parameters together with the model kind they belong to.
#[pyclass(name = "Model", module = "hlr", frozen)]
struct PyModel {
    store: ParameterStore,
    kind: ModelKind,
    history_cap: usize,
    seed: u64,
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("k", r.cutoff)?;
    d.set_item("precision", r.precision)?;
    d.set_item("recall", r.recall)?;
    d.set_item("ndcg", r.ndcg)?;
    d.set_item("map", r.map)?;
    d.set_item("mrr", r.mrr)?;
    d.set_item("median_popularity", r.median_popularity)?;
    d.set_item("num_evaluated_users", r.num_evaluated_users)?;
    Ok(d)
}

#[pymethods]
impl PyModel {
    #[getter]
    fn kind(&self) -> &'static str {
        self.kind.name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.store.dim()
    }

    #[getter]
    fn slices(&self) -> usize {
        self.store.slices()
    }

    /// Translated distance `‖p_u + r − q_v‖²`; lower is better.
    #[pyo3(signature = (user, item, history = Vec::new(), item_history = Vec::new()))]
    fn score(&self, user: u32, item: u32, history: Vec<u32>, item_history: Vec<u32>) -> PyResult<f64> {
        let ctx = RelationContext {
            user,
            item,
            history: &history,
            item_history: &item_history,
        };
        Ok(score(&ctx, self.kind, &self.store).map_err(value_err)?.distance)
    }

    #[pyo3(signature = (dataset, phase = "test", k = 10))]
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &PyDataset, phase: &str, k: usize) -> PyResult<Bound<'py, PyDict>> {
        let phase = parse_phase(phase)?;
        let r = evaluate_model(&self.store, self.kind, &dataset.inner, phase, k, self.history_cap, self.seed)
            .map_err(value_err)?;
        report_dict(py, &r)
    }

    /// Top-`k` item indices for `user`, skipping every item they interacted with.
    #[pyo3(signature = (dataset, user, k = 10))]
    fn recommend(&self, dataset: &PyDataset, user: u32, k: usize) -> PyResult<Vec<u32>> {
        let split = &dataset.inner;
        if user as usize >= split.num_users() || self.store.num_items() != split.num_items() {
            return Err(value_err("user out of range or dataset does not match the model"));
        }
        let ranker = ModelRanker::new(&self.store, self.kind, split, self.history_cap, self.seed);
        Ok(rank_items(&ranker, user, split.num_items(), split.full.interactions.items_of(user), k))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        write_checkpoint(&self.store, &mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, kind, history_cap = 50, seed = 0))]
    fn load(path: &str, kind: &str, history_cap: usize, seed: u64) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(value_err)?;
        let store = read_checkpoint(BufReader::new(File::open(path).map_err(io_err)?)).map_err(value_err)?;
        Ok(Self {
            store,
            kind,
            history_cap,
            seed,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={}, users={}, items={}, dim={})",
            self.kind,
            self.store.num_users(),
            self.store.num_items(),
            self.store.dim()
        )
    }
}

/// Trains a model and returns it with a report dict holding `best_epoch`
/// and per-epoch `(epoch, train_loss, valid_loss, seconds)` tuples.
#[pyfunction]
#[pyo3(signature = (
    dataset, model = "hlr", dim = 100, slices = 10, margin = 0.5, lr = 0.001,
    batch_size = 1000, max_epochs = 100, history_cap = 50, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    model: &str,
    dim: usize,
    slices: usize,
    margin: f64,
    lr: f64,
    batch_size: usize,
    max_epochs: usize,
    history_cap: usize,
    seed: u64,
) -> PyResult<(PyModel, Bound<'py, PyDict>)> {
    let hp = Hyperparams {
        kind: model.parse().map_err(value_err)?,
        dim,
        slices,
        margin,
        lr,
        batch_size,
        max_epochs,
        history_cap,
        seed,
    };
    let split = Arc::clone(&dataset.inner);
    let (store, report) = py.detach(|| train_model(&split, &hp)).map_err(|e| match e {
        TrainError::Diverged { .. } => PyArithmeticError::new_err(e.to_string()),
        other => value_err(other),
    })?;
    let d = PyDict::new(py);
    d.set_item("best_epoch", report.best_epoch)?;
    d.set_item("best_valid_loss", report.best_valid_loss)?;
    d.set_item("initial_valid_loss", report.initial_valid_loss)?;
    let epochs: Vec<(usize, f64, f64, f64)> = report
        .epochs
        .iter()
        .map(|e| (e.epoch, e.train_loss, e.valid_loss, e.seconds))
        .collect();
    d.set_item("epochs", epochs)?;
    let m = PyModel {
        store,
        kind: hp.kind,
        history_cap,
        seed,
    };
    Ok((m, d))
}

/// Metrics of the most-popular-items baseline.
#[pyfunction]
#[pyo3(signature = (dataset, phase = "test", k = 10))]
fn popularity_baseline<'py>(py: Python<'py>, dataset: &PyDataset, phase: &str, k: usize) -> PyResult<Bound<'py, PyDict>> {
    let split = &dataset.inner;
    let r = evaluate(&PopularityRanker::new(&split.train), split, parse_phase(phase)?, k).map_err(value_err)?;
    report_dict(py, &r)
}

fn relevant_set(mut relevant: Vec<u32>) -> PyResult<Vec<u32>> {
    relevant.sort_unstable();
    relevant.dedup();
    if relevant.is_empty() {
        return Err(value_err("relevant set must be non-empty"));
    }
    Ok(relevant)
}

#[pyfunction]
fn precision_recall_at_k(ranked: Vec<u32>, relevant: Vec<u32>, k: usize) -> PyResult<(f64, f64)> {
    Ok(evaluation::precision_recall_at_k(&ranked, &relevant_set(relevant)?, k))
}

#[pyfunction]
fn ndcg_at_k(ranked: Vec<u32>, relevant: Vec<u32>, k: usize) -> PyResult<f64> {
    Ok(evaluation::ndcg_at_k(&ranked, &relevant_set(relevant)?, k))
}

#[pyfunction]
fn average_precision_at_k(ranked: Vec<u32>, relevant: Vec<u32>, k: usize) -> PyResult<f64> {
    Ok(evaluation::average_precision_at_k(&ranked, &relevant_set(relevant)?, k))
}

#[pyfunction]
fn reciprocal_rank_at_k(ranked: Vec<u32>, relevant: Vec<u32>, k: usize) -> PyResult<f64> {
    Ok(evaluation::reciprocal_rank_at_k(&ranked, &relevant_set(relevant)?, k))
}

#[pymodule]
fn hlr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(popularity_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(reciprocal_rank_at_k, m)?)?;
    m.add("MODELS", ModelKind::ALL.map(ModelKind::name).to_vec())?;
    Ok(())
}
