//! Downstream evaluation of frozen embeddings and the leave-one-dataset-out
//! protocol.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{build_corpus_vocab, Dataset, MultiTaskCorpus, VocabPolicy};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kernels::{adam_step, argmax, AdamState};
use crate::logreg::{l2_penalty, logreg_backward_into, logreg_forward, LogRegParams, PenaltyKind};
use crate::metrics::{compute_metric, metric_accuracy, MetricKind};
use crate::trainer::{
    derive_seed, sentence_features, train_pipeline, Checkpoint, EarlyStopping, EpochRecord,
    ModelConfig, TaskData, TrainerConfig,
};

/// Settings for the downstream logistic regression fitted on frozen
/// features. Optimizer and early stopping mirror the trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// z-score each feature with training-split statistics.
    pub standardize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            lambda: 0.0,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 13,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset: String,
    pub metric: MetricKind,
    pub value: f64,
    /// Test accuracy, reported alongside whatever `metric` is.
    pub accuracy: f64,
    pub seed: u64,
    pub config_hash: String,
}

pub fn config_fingerprint<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).unwrap_or_default();
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(6).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

struct FeatureSet {
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
}

fn features(embedding: &EmbeddingMatrix, data: &[crate::trainer::Example]) -> Result<FeatureSet> {
    let x = data
        .iter()
        .map(|e| sentence_features(embedding, &e.ids))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet {
        x,
        y: data.iter().map(|e| e.label).collect(),
    })
}

/// Per-feature affine map fitted on the training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>], dim: usize) -> Self {
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        // constant features are centred but not scaled
        let scale = var
            .iter()
            .map(|&v| if v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

/// Logistic regression on frozen features, early-stopped on dev accuracy.
#[derive(Clone, Debug)]
pub struct FrozenClassifier {
    pub head: LogRegParams,
    pub standardizer: Standardizer,
    pub best_epoch: usize,
    pub best_dev: f64,
}

impl FrozenClassifier {
    pub fn predict(&self, embedding: &EmbeddingMatrix, ids: &[usize]) -> Result<usize> {
        let f = self.standardizer.apply(&sentence_features(embedding, ids)?);
        Ok(argmax(&logreg_forward(&f, &self.head)?))
    }
}

fn predict_all(head: &LogRegParams, x: &[Vec<f64>]) -> Result<Vec<usize>> {
    x.iter()
        .map(|f| Ok(argmax(&logreg_forward(f, head)?)))
        .collect()
}

pub fn fit_frozen_logreg(
    embedding: &EmbeddingMatrix,
    task: &TaskData,
    config: &EvalConfig,
) -> Result<FrozenClassifier> {
    if task.train.is_empty() {
        return Err(Error::EmptyTrainSet(task.name.clone()));
    }
    if task.dev.is_empty() {
        return Err(Error::EmptyDevSet(task.name.clone()));
    }
    if config.batch_size == 0 || config.patience == 0 {
        return Err(Error::Config(
            "batch size and patience must be positive".into(),
        ));
    }
    let dim = embedding.dim();
    let mut train = features(embedding, &task.train)?;
    let mut dev = features(embedding, &task.dev)?;
    let standardizer = if config.standardize {
        Standardizer::fit(&train.x, dim)
    } else {
        Standardizer::identity(dim)
    };
    for x in train.x.iter_mut().chain(dev.x.iter_mut()) {
        *x = standardizer.apply(x);
    }

    let mut head = LogRegParams::zeros(task.name.clone(), dim, task.num_classes);
    let mut st_w = AdamState::new(head.weights.values().len());
    let mut st_b = AdamState::new(head.bias.len());
    let hyper = crate::kernels::AdamHyper::with_lr(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 200));
    let mut order: Vec<usize> = (0..train.x.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = (head.clone(), 0usize, f64::NEG_INFINITY);

    for epoch in 1..=config.max_epochs.max(1) {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut grads = head.zeros_like();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                logreg_backward_into(&train.x[i], &head, train.y[i], scale, &mut grads)?;
            }
            if config.lambda != 0.0 {
                let (_, pg) = l2_penalty(&[&head], PenaltyKind::Squared);
                grads.weights.add_scaled(&pg[0], config.lambda)?;
            }
            adam_step(
                head.weights.values_mut(),
                grads.weights.values(),
                &mut st_w,
                &hyper,
            )?;
            adam_step(&mut head.bias, &grads.bias, &mut st_b, &hyper)?;
        }
        let acc = metric_accuracy(&predict_all(&head, &dev.x)?, &dev.y)?;
        let decision = stopper.observe(epoch, acc);
        if decision.improved {
            best = (head.clone(), epoch, acc);
        }
        if decision.stop {
            break;
        }
    }
    Ok(FrozenClassifier {
        head: best.0,
        standardizer,
        best_epoch: best.1,
        best_dev: best.2,
    })
}

/// Fits a fresh classifier on the frozen `embedding` and reports the
/// dataset's test metric.
pub fn eval_frozen_embedding(
    embedding: &EmbeddingMatrix,
    dataset: &Dataset,
    config: &EvalConfig,
) -> Result<EvalResult> {
    if dataset.test.is_empty() {
        return Err(Error::Config(format!(
            "dataset `{}` has no test split",
            dataset.name
        )));
    }
    let task = TaskData::from_dataset(dataset, embedding.vocab());
    let clf = fit_frozen_logreg(embedding, &task, config)?;
    let pred = task
        .test
        .iter()
        .map(|e| clf.predict(embedding, &e.ids))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<usize> = task.test.iter().map(|e| e.label).collect();
    Ok(EvalResult {
        dataset: dataset.name.clone(),
        metric: dataset.metric,
        value: compute_metric(dataset.metric, &pred, &gold, dataset.num_classes())?,
        accuracy: metric_accuracy(&pred, &gold)?,
        seed: config.seed,
        config_hash: config_fingerprint(config),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooConfig {
    pub model: ModelConfig,
    pub vocab: VocabPolicy,
    pub pretrain: TrainerConfig,
    pub multitask: TrainerConfig,
    pub eval: EvalConfig,
}

impl Default for LooConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            vocab: VocabPolicy::default(),
            pretrain: TrainerConfig::pretrain_defaults(),
            multitask: TrainerConfig::multitask_defaults(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LooOutcome {
    pub result: EvalResult,
    /// Names of the small datasets the embedding was trained on.
    pub trained_on: Vec<String>,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Trains on every small dataset except `held_out` (plus the large one),
/// then evaluates the frozen embedding on the held-out dataset.
pub fn leave_one_out_eval(
    corpus: &MultiTaskCorpus,
    held_out: usize,
    config: &LooConfig,
) -> Result<LooOutcome> {
    let target = corpus.smalls.get(held_out).ok_or_else(|| {
        Error::Config(format!(
            "hold-out index {held_out} out of range for {} small datasets",
            corpus.smalls.len()
        ))
    })?;
    let training = corpus.without(&[target.name.as_str()]);
    let trained_on: Vec<String> = training.smalls.iter().map(|d| d.name.clone()).collect();
    if trained_on.contains(&target.name) {
        return Err(Error::Config(format!(
            "held-out dataset `{}` leaked into training",
            target.name
        )));
    }
    let vocab = build_corpus_vocab(&training, config.vocab);
    let pipeline = train_pipeline(
        &training,
        vocab,
        &config.model,
        &config.pretrain,
        &config.multitask,
    )?;
    let checkpoint = pipeline.outcome.checkpoint;
    let result = eval_frozen_embedding(&checkpoint.model.embedding, target, &config.eval)?;
    Ok(LooOutcome {
        result: EvalResult {
            config_hash: config_fingerprint(config),
            ..result
        },
        trained_on,
        checkpoint,
        history: pipeline.outcome.history,
    })
}

pub fn results_tsv(results: &[EvalResult]) -> String {
    let mut s = String::from("dataset\tmetric\tvalue\tseed\tconfig_hash\n");
    for r in results {
        let _ = writeln!(
            s,
            "{}\t{}\t{:.6}\t{}\t{}",
            r.dataset, r.metric, r.value, r.seed, r.config_hash
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub results: Vec<EvalResult>,
    pub average: f64,
}

pub fn summarize(results: Vec<EvalResult>) -> EvalSummary {
    let average = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.value).sum::<f64>() / results.len() as f64
    };
    EvalSummary { results, average }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::corpus::{split_dataset, LabeledDocument, DEFAULT_SPLIT};

    fn dataset() -> Dataset {
        let docs: Vec<LabeledDocument> = (0..60)
            .map(|i| LabeledDocument {
                text: if i % 3 == 0 {
                    "good fine".into()
                } else {
                    "bad awful".into()
                },
                label: usize::from(i % 3 == 0),
            })
            .collect();
        split_dataset(
            "t",
            vec!["neg".into(), "pos".into()],
            docs,
            DEFAULT_SPLIT,
            4,
        )
        .unwrap()
    }

    #[test]
    fn zero_embedding_predicts_majority() {
        let ds = dataset();
        let vocab =
            Vocabulary::from_words(["<pad>", "<unk>", "good", "bad"].map(String::from).to_vec())
                .unwrap();
        let emb = EmbeddingMatrix::zeros(vocab, 5).unwrap();
        let cfg = EvalConfig {
            max_epochs: 50,
            lr: 0.05,
            ..EvalConfig::default()
        };
        let r = eval_frozen_embedding(&emb, &ds, &cfg).unwrap();
        let train_majority =
            usize::from(ds.train.iter().filter(|d| d.label == 1).count() * 2 > ds.train.len());
        let want = ds.test.iter().filter(|d| d.label == train_majority).count() as f64
            / ds.test.len() as f64;
        assert_eq!(r.accuracy, want);
    }

    #[test]
    fn informative_embedding_separates_and_is_deterministic() {
        let ds = dataset();
        let vocab =
            Vocabulary::from_words(["<pad>", "<unk>", "good", "bad"].map(String::from).to_vec())
                .unwrap();
        let table = crate::kernels::DenseMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
        ])
        .unwrap();
        let emb = EmbeddingMatrix::new(vocab, table).unwrap();
        let cfg = EvalConfig {
            lr: 0.05,
            ..EvalConfig::default()
        };
        let a = eval_frozen_embedding(&emb, &ds, &cfg).unwrap();
        assert_eq!(a.accuracy, 1.0);
        assert_eq!(a.metric, MetricKind::F1Positive);
        assert_eq!(a.value, 1.0);
        assert_eq!(a, eval_frozen_embedding(&emb, &ds, &cfg).unwrap());
    }

    #[test]
    fn tsv_and_summary() {
        let r = EvalResult {
            dataset: "x".into(),
            metric: MetricKind::Accuracy,
            value: 0.5,
            accuracy: 0.5,
            seed: 13,
            config_hash: "abc".into(),
        };
        let tsv = results_tsv(std::slice::from_ref(&r));
        assert_eq!(
            tsv.lines().nth(1).unwrap(),
            "x\taccuracy\t0.500000\t13\tabc"
        );
        let s = summarize(vec![r.clone(), EvalResult { value: 1.0, ..r }]);
        assert_eq!(s.average, 0.75);
    }

    #[test]
    fn standardizer_handles_constant_features() {
        let s = Standardizer::fit(&[vec![1.0, 2.0], vec![1.0, 4.0]], 2);
        assert_eq!(s.apply(&[1.0, 3.0]), vec![0.0, 0.0]);
        assert_eq!(s.apply(&[1.0, 4.0]), vec![0.0, 1.0]);
    }
}
