//! Python bindings: tokenizer and distant labeling, metrics, word-vector
//! tables, corpus loading, joint training and frozen evaluation.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use emo2vec_core::checkpoint::{load_checkpoint, save_checkpoint};
use emo2vec_core::cnn::CnnConfig;
use emo2vec_core::corpus::{build_corpus_vocab, load_corpus_dir};
use emo2vec_core::eval::summarize;
use emo2vec_core::trainer::{history_to_jsonl, Checkpoint};
use emo2vec_core::{
    metrics, EmbeddingMatrix, Error, EvalConfig, LooConfig, ModelConfig, MultiTaskCorpus,
    TrainerConfig,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    emo2vec_core::tokenize(text)
}

/// Returns `(label, cleaned_text)` or `None` if a filter rejects the text.
#[pyfunction]
fn distant_label(text: &str, hashtags: HashMap<String, usize>) -> Option<(usize, String)> {
    emo2vec_core::distant_label(text, &hashtags)
}

#[pyfunction]
fn accuracy(pred: Vec<usize>, gold: Vec<usize>) -> PyResult<f64> {
    metrics::metric_accuracy(&pred, &gold).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (pred, gold, positive=1))]
fn f1_positive(pred: Vec<usize>, gold: Vec<usize>, positive: usize) -> PyResult<f64> {
    metrics::metric_f1_positive(&pred, &gold, positive).map_err(py_err)
}

#[pyfunction]
fn f1_ovr_mean(pred: Vec<usize>, gold: Vec<usize>, num_classes: usize) -> PyResult<f64> {
    metrics::metric_f1_ovr_mean(&pred, &gold, num_classes).map_err(py_err)
}

/// A word-vector table.
#[pyclass(name = "Embedding", module = "emo2vec", frozen)]
struct PyEmbedding {
    inner: EmbeddingMatrix,
}

#[pymethods]
impl PyEmbedding {
    /// Reads a `word v1 .. vk` text file (optionally gzipped, optional header).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = EmbeddingMatrix::import_text(&path).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (path, header=false))]
    fn save(&self, path: PathBuf, header: bool) -> PyResult<()> {
        self.inner.export_text(&path, header).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Vocabulary words, padding and unknown tokens excluded.
    #[getter]
    fn words(&self) -> Vec<String> {
        self.inner.vocab().words()[2..].to_vec()
    }

    fn vector(&self, word: &str) -> Option<Vec<f64>> {
        self.inner.vector(word).map(<[f64]>::to_vec)
    }

    fn concat(&self, other: &PyEmbedding) -> PyResult<PyEmbedding> {
        let inner = EmbeddingMatrix::concat(&self.inner, &other.inner).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.vocab().len() - 2
    }

    fn __repr__(&self) -> String {
        format!("Embedding(words={}, dim={})", self.__len__(), self.dim())
    }
}

/// A corpus directory: the large distant-labeled set plus small datasets.
#[pyclass(name = "Corpus", module = "emo2vec", frozen)]
struct PyCorpus {
    inner: MultiTaskCorpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    #[pyo3(signature = (path, seed=13))]
    fn load(path: PathBuf, seed: u64) -> PyResult<Self> {
        let inner = load_corpus_dir(&path, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn datasets(&self) -> Vec<String> {
        self.inner
            .small_names()
            .into_iter()
            .map(String::from)
            .collect()
    }

    /// `{dataset: [(label, count, fraction), ...]}` including the large set.
    fn stats(&self) -> HashMap<String, Vec<(String, usize, f64)>> {
        std::iter::once(&self.inner.large)
            .chain(&self.inner.smalls)
            .map(|d| (d.name.clone(), d.label_distribution()))
            .collect()
    }
}

/// A trained checkpoint.
#[pyclass(name = "Model", module = "emo2vec", frozen)]
struct PyModel {
    inner: Checkpoint,
    history: String,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = load_checkpoint(&path).map_err(py_err)?;
        Ok(Self {
            inner,
            history: String::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn embedding(&self) -> PyEmbedding {
        PyEmbedding {
            inner: self.inner.model.embedding.clone(),
        }
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn heads(&self) -> Vec<String> {
        self.inner
            .model
            .heads
            .iter()
            .map(|h| h.name.clone())
            .collect()
    }

    /// Per-epoch records of the training run (empty for loaded models).
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyAny>>> {
        self.history
            .lines()
            .map(|l| py.import("json")?.call_method1("loads", (l,)))
            .collect()
    }
}

fn model_config(dim: usize, filters: usize, widths: Vec<usize>) -> ModelConfig {
    ModelConfig {
        dim,
        cnn: CnnConfig { widths, filters },
    }
}

/// Joint training on every dataset of `corpus`.
#[pyfunction]
#[pyo3(signature = (corpus, dim=100, filters=1024, widths=vec![1, 3, 5, 7], lr=0.001, l2=1.0,
                    epochs=20, patience=3, pretrain=false, seed=13))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    corpus: &PyCorpus,
    dim: usize,
    filters: usize,
    widths: Vec<usize>,
    lr: f64,
    l2: f64,
    epochs: usize,
    patience: usize,
    pretrain: bool,
    seed: u64,
) -> PyResult<PyModel> {
    let cfg = TrainerConfig {
        lr,
        lambda: l2,
        max_epochs: epochs,
        patience,
        pretrain,
        seed,
        ..TrainerConfig::multitask_defaults()
    };
    let pre = TrainerConfig {
        seed,
        ..TrainerConfig::pretrain_defaults()
    };
    let mc = model_config(dim, filters, widths);
    let corpus = &corpus.inner;
    let out = py
        .detach(|| {
            let vocab = build_corpus_vocab(corpus, Default::default());
            emo2vec_core::train_pipeline(corpus, vocab, &mc, &pre, &cfg)
        })
        .map_err(py_err)?;
    let history = history_to_jsonl(&out.outcome.history).map_err(py_err)?;
    Ok(PyModel {
        inner: out.outcome.checkpoint,
        history,
    })
}

/// Fits a logistic regression on the frozen `embedding` for each small
/// dataset (or only `dataset`) and returns the test results.
#[pyfunction]
#[pyo3(signature = (embedding, corpus, dataset=None, epochs=200, patience=10, seed=13))]
fn eval_frozen<'py>(
    py: Python<'py>,
    embedding: &PyEmbedding,
    corpus: &PyCorpus,
    dataset: Option<&str>,
    epochs: usize,
    patience: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = EvalConfig {
        max_epochs: epochs,
        patience,
        seed,
        ..EvalConfig::default()
    };
    let targets: Vec<_> = corpus
        .inner
        .smalls
        .iter()
        .filter(|d| dataset.is_none_or(|n| n == d.name))
        .collect();
    if targets.is_empty() {
        return Err(PyValueError::new_err(format!(
            "unknown dataset {dataset:?}"
        )));
    }
    let emb = &embedding.inner;
    let results = py
        .detach(|| {
            targets
                .into_iter()
                .map(|d| emo2vec_core::eval_frozen_embedding(emb, d, &cfg))
                .collect::<emo2vec_core::Result<Vec<_>>>()
        })
        .map_err(py_err)?;
    to_py(py, &summarize(results))
}

/// Trains on everything except small dataset `hold_out`, then evaluates
/// the frozen embedding on it.
#[pyfunction]
#[pyo3(signature = (corpus, hold_out, dim=100, filters=1024, epochs=20, eval_epochs=200, seed=13))]
#[allow(clippy::too_many_arguments)]
fn leave_one_out<'py>(
    py: Python<'py>,
    corpus: &PyCorpus,
    hold_out: usize,
    dim: usize,
    filters: usize,
    epochs: usize,
    eval_epochs: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let defaults = LooConfig::default();
    let cfg = LooConfig {
        model: model_config(dim, filters, defaults.model.cnn.widths.clone()),
        multitask: TrainerConfig {
            max_epochs: epochs,
            seed,
            ..defaults.multitask
        },
        eval: EvalConfig {
            max_epochs: eval_epochs,
            seed,
            ..defaults.eval
        },
        ..defaults
    };
    let corpus = &corpus.inner;
    let out = py
        .detach(|| emo2vec_core::leave_one_out_eval(corpus, hold_out, &cfg))
        .map_err(py_err)?;
    let value = serde_json::json!({ "result": out.result, "trained_on": out.trained_on });
    to_py(py, &value)
}

#[pymodule]
fn emo2vec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(distant_label, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(f1_positive, m)?)?;
    m.add_function(wrap_pyfunction!(f1_ovr_mean, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(eval_frozen, m)?)?;
    m.add_function(wrap_pyfunction!(leave_one_out, m)?)?;
    m.add_class::<PyEmbedding>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
