//! Pre-training on the large corpus and joint multi-task training of the
//! shared embedding table.
//!
//! A training step draws one mini-batch from every participating dataset
//! (round-robin, each dataset cycling through its own seeded shuffles) and
//! minimizes
//!
//! ```text
//! L = [L_large] + (1/n) * sum_j L_j + lambda * penalty(heads)
//! ```
//!
//! where every `L_*` is a batch-mean NLL. An epoch is one pass over the
//! largest participating training set. After each epoch the mean dev
//! accuracy over all participating datasets drives early stopping, and the
//! best epoch's parameters are returned.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnn::{cnn_backward_into, cnn_forward, CnnConfig, CnnParams};
use crate::corpus::{batch_padded_len, encode_ids, tokenize, Dataset, MultiTaskCorpus, Vocabulary};
use crate::embedding::{
    accumulate_sparse_grad, adam_update_embedding, EmbeddingMatrix, SparseGrad, DEFAULT_DIM,
};
use crate::error::{Error, Result};
use crate::kernels::{adam_step, argmax, AdamHyper, AdamState, DenseMatrix};
use crate::logreg::{
    l2_penalty, logreg_backward_into, logreg_forward, mean_pool, mean_pool_backward, LogRegParams,
    PenaltyKind,
};
use crate::metrics::MetricKind;

/// Independent stream of randomness for a sub-component.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub cnn: CnnConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            cnn: CnnConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub lr: f64,
    /// Weight of the head penalty.
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Pre-train embedding and CNN on the large dataset before joint training.
    pub pretrain: bool,
    pub include_large_in_joint: bool,
    pub penalty: PenaltyKind,
}

impl TrainerConfig {
    /// Large-corpus pre-training: batch 16, lr 0.001.
    pub fn pretrain_defaults() -> Self {
        Self {
            lr: 0.001,
            lambda: 0.0,
            batch_size: 16,
            max_epochs: 20,
            patience: 3,
            seed: 13,
            pretrain: false,
            include_large_in_joint: true,
            penalty: PenaltyKind::Squared,
        }
    }

    /// Joint training: lr 0.001, lambda 1.0, batch 32.
    pub fn multitask_defaults() -> Self {
        Self {
            lr: 0.001,
            lambda: 1.0,
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            seed: 13,
            pretrain: false,
            include_large_in_joint: true,
            penalty: PenaltyKind::Squared,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be non-negative, got {}",
                self.lr
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper::with_lr(self.lr)
    }
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self::multitask_defaults()
    }
}

/// Every trainable parameter: the shared table, the large-dataset CNN and
/// one logistic-regression head per small dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emo2VecModel {
    pub embedding: EmbeddingMatrix,
    pub cnn: CnnParams,
    pub heads: Vec<LogRegParams>,
}

impl Emo2VecModel {
    /// Random embedding and CNN, zero heads for each `(name, classes)`.
    pub fn init(
        vocab: Vocabulary,
        config: &ModelConfig,
        large_classes: usize,
        heads: &[(String, usize)],
        seed: u64,
    ) -> Result<Self> {
        let embedding = EmbeddingMatrix::init_random(vocab, config.dim, derive_seed(seed, 1))?;
        let cnn = CnnParams::init(&config.cnn, config.dim, large_classes, derive_seed(seed, 2))?;
        let heads = heads
            .iter()
            .map(|(name, c)| LogRegParams::zeros(name.clone(), config.dim, *c))
            .collect();
        Ok(Self {
            embedding,
            cnn,
            heads,
        })
    }

    /// Model shaped for `corpus`, vocabulary built from it.
    pub fn for_corpus(
        corpus: &MultiTaskCorpus,
        vocab: Vocabulary,
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        let heads: Vec<(String, usize)> = corpus
            .smalls
            .iter()
            .map(|d| (d.name.clone(), d.num_classes()))
            .collect();
        Self::init(vocab, config, corpus.large.num_classes(), &heads, seed)
    }

    pub fn head(&self, name: &str) -> Option<&LogRegParams> {
        self.heads.iter().find(|h| h.name == name)
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.embedding.dim(),
            cnn: self.cnn.config(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadAdam {
    pub weights: AdamState,
    pub bias: AdamState,
}

/// Adam moments for every tensor of an [`Emo2VecModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub embedding: AdamState,
    pub cnn: Vec<AdamState>,
    pub heads: BTreeMap<String, HeadAdam>,
}

impl OptimizerState {
    pub fn new(model: &Emo2VecModel) -> Self {
        Self {
            embedding: AdamState::new(model.embedding.table().values().len()),
            cnn: model
                .cnn
                .tensors()
                .iter()
                .map(|t| AdamState::new(t.len()))
                .collect(),
            heads: model
                .heads
                .iter()
                .map(|h| {
                    (
                        h.name.clone(),
                        HeadAdam {
                            weights: AdamState::new(h.weights.values().len()),
                            bias: AdamState::new(h.bias.len()),
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub label: usize,
}

/// A dataset mapped through a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub num_classes: usize,
    pub metric: MetricKind,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl TaskData {
    pub fn from_dataset(ds: &Dataset, vocab: &Vocabulary) -> Self {
        let conv = |docs: &[crate::corpus::LabeledDocument]| -> Vec<Example> {
            docs.iter()
                .map(|d| Example {
                    ids: tokenize(&d.text)
                        .iter()
                        .map(|t| vocab.id_or_unk(t))
                        .collect(),
                    label: d.label,
                })
                .collect()
        };
        Self {
            name: ds.name.clone(),
            num_classes: ds.num_classes(),
            metric: ds.metric,
            train: conv(&ds.train),
            dev: conv(&ds.dev),
            test: conv(&ds.test),
        }
    }
}

/// The encoded corpus the trainer works on.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedCorpus {
    pub large: TaskData,
    pub smalls: Vec<TaskData>,
}

impl EncodedCorpus {
    pub fn new(corpus: &MultiTaskCorpus, vocab: &Vocabulary) -> Self {
        Self {
            large: TaskData::from_dataset(&corpus.large, vocab),
            smalls: corpus
                .smalls
                .iter()
                .map(|d| TaskData::from_dataset(d, vocab))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskRef {
    Large,
    /// Index into the model's heads.
    Head(usize),
}

#[derive(Clone, Debug)]
pub struct TaskBatch<'a> {
    pub task: TaskRef,
    pub examples: &'a [Example],
}

/// Loss terms of one joint step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Batch-mean NLL of the large dataset, when it took part.
    pub large_loss: Option<f64>,
    /// Batch-mean NLL per small dataset, in batch order.
    pub task_losses: Vec<(String, f64)>,
    pub penalty: f64,
    pub lambda: f64,
    pub combined: f64,
}

/// Gradients matching [`Emo2VecModel`]; `cnn` and heads without a batch
/// stay zero.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub embedding: SparseGrad,
    pub cnn: CnnParams,
    pub heads: Vec<LogRegParams>,
    pub touched_cnn: bool,
    pub touched_heads: Vec<bool>,
}

impl ModelGrads {
    pub fn zeros(model: &Emo2VecModel) -> Self {
        Self {
            embedding: SparseGrad::new(model.embedding.dim()),
            cnn: model.cnn.zeros_like(),
            heads: model.heads.iter().map(LogRegParams::zeros_like).collect(),
            touched_cnn: false,
            touched_heads: vec![false; model.heads.len()],
        }
    }
}

fn large_batch_grads(
    model: &Emo2VecModel,
    examples: &[Example],
    weight: f64,
    grads: &mut ModelGrads,
) -> Result<f64> {
    let padded = batch_padded_len(examples.iter().map(|e| e.ids.len()), model.cnn.max_width());
    let scale = weight / examples.len() as f64;
    let mut total = 0.0;
    for ex in examples {
        let sent = encode_ids(&ex.ids, padded);
        let emb = model.embedding.lookup(&sent)?;
        let acts = cnn_forward(&emb, &model.cnn)?;
        let mut grad_emb = DenseMatrix::zeros(emb.rows(), emb.cols());
        total += cnn_backward_into(
            &emb,
            &model.cnn,
            &acts,
            ex.label,
            scale,
            &mut grads.cnn,
            &mut grad_emb,
        )?;
        accumulate_sparse_grad(&mut grads.embedding, &sent, &grad_emb)?;
    }
    grads.touched_cnn = true;
    Ok(total / examples.len() as f64)
}

fn small_batch_grads(
    model: &Emo2VecModel,
    head: usize,
    examples: &[Example],
    weight: f64,
    grads: &mut ModelGrads,
) -> Result<f64> {
    let params = &model.heads[head];
    let scale = weight / examples.len() as f64;
    let mut total = 0.0;
    for ex in examples {
        let n = ex.ids.len();
        let sent = encode_ids(&ex.ids, n);
        let emb = model.embedding.lookup(&sent)?;
        let feats = mean_pool(&emb, n);
        let (dfeat, loss) =
            logreg_backward_into(&feats, params, ex.label, scale, &mut grads.heads[head])?;
        total += loss;
        if n > 0 {
            let gemb = mean_pool_backward(n, n, &dfeat);
            accumulate_sparse_grad(&mut grads.embedding, &sent, &gemb)?;
        }
    }
    grads.touched_heads[head] = true;
    Ok(total / examples.len() as f64)
}

/// Loss report and gradients of the combined objective for one set of
/// batches (at most one per dataset).
pub fn joint_gradients(
    model: &Emo2VecModel,
    batches: &[TaskBatch<'_>],
    lambda: f64,
    penalty: PenaltyKind,
) -> Result<(LossReport, ModelGrads)> {
    let n_small = batches
        .iter()
        .filter(|b| matches!(b.task, TaskRef::Head(_)))
        .count();
    let n_large = batches.len() - n_small;
    if batches.is_empty() {
        return Err(Error::NoTasks);
    }
    if n_large > 1 {
        return Err(Error::Config(
            "more than one large-dataset batch in a step".into(),
        ));
    }
    let mut seen = vec![false; model.heads.len()];
    for b in batches {
        if b.examples.is_empty() {
            return Err(Error::Config("empty mini-batch".into()));
        }
        if let TaskRef::Head(h) = b.task {
            if h >= model.heads.len() {
                return Err(Error::Config(format!("no head with index {h}")));
            }
            if std::mem::replace(&mut seen[h], true) {
                return Err(Error::Config(format!(
                    "dataset `{}` has more than one batch",
                    model.heads[h].name
                )));
            }
        }
    }

    let mut grads = ModelGrads::zeros(model);
    let small_weight = if n_small > 0 {
        1.0 / n_small as f64
    } else {
        0.0
    };
    let mut large_loss = None;
    let mut task_losses = Vec::with_capacity(n_small);
    for b in batches {
        match b.task {
            TaskRef::Large => {
                large_loss = Some(large_batch_grads(model, b.examples, 1.0, &mut grads)?)
            }
            TaskRef::Head(h) => {
                let l = small_batch_grads(model, h, b.examples, small_weight, &mut grads)?;
                task_losses.push((model.heads[h].name.clone(), l));
            }
        }
    }

    let active: Vec<usize> = (0..model.heads.len()).filter(|&h| seen[h]).collect();
    let heads: Vec<&LogRegParams> = active.iter().map(|&h| &model.heads[h]).collect();
    let (pen, pen_grads) = l2_penalty(&heads, penalty);
    if lambda != 0.0 {
        for (&h, g) in active.iter().zip(&pen_grads) {
            grads.heads[h].weights.add_scaled(g, lambda)?;
        }
    }

    let mean_small = if n_small > 0 {
        task_losses.iter().map(|(_, l)| l).sum::<f64>() / n_small as f64
    } else {
        0.0
    };
    let combined = large_loss.unwrap_or(0.0) + mean_small + lambda * pen;
    Ok((
        LossReport {
            large_loss,
            task_losses,
            penalty: pen,
            lambda,
            combined,
        },
        grads,
    ))
}

pub fn joint_loss(
    model: &Emo2VecModel,
    batches: &[TaskBatch<'_>],
    lambda: f64,
    penalty: PenaltyKind,
) -> Result<LossReport> {
    joint_gradients(model, batches, lambda, penalty).map(|(r, _)| r)
}

/// One Adam update of every tensor that received gradient this step. The
/// embedding table is always updated (its padding row stays fixed).
pub fn apply_gradients(
    model: &mut Emo2VecModel,
    grads: &ModelGrads,
    opt: &mut OptimizerState,
    hyper: &AdamHyper,
) -> Result<()> {
    adam_update_embedding(
        &mut model.embedding,
        &grads.embedding,
        &mut opt.embedding,
        hyper,
    )?;
    if grads.touched_cnn {
        for ((p, g), st) in model
            .cnn
            .tensors_mut()
            .into_iter()
            .zip(grads.cnn.tensors())
            .zip(opt.cnn.iter_mut())
        {
            adam_step(p, g, st, hyper)?;
        }
    }
    for (h, head) in model.heads.iter_mut().enumerate() {
        if !grads.touched_heads[h] {
            continue;
        }
        let st = opt
            .heads
            .entry(head.name.clone())
            .or_insert_with(|| HeadAdam {
                weights: AdamState::new(head.weights.values().len()),
                bias: AdamState::new(head.bias.len()),
            });
        adam_step(
            head.weights.values_mut(),
            grads.heads[h].weights.values(),
            &mut st.weights,
            hyper,
        )?;
        adam_step(&mut head.bias, &grads.heads[h].bias, &mut st.bias, hyper)?;
    }
    Ok(())
}

pub fn predict_large(
    model: &Emo2VecModel,
    examples: &[Example],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let padded = batch_padded_len(chunk.iter().map(|e| e.ids.len()), model.cnn.max_width());
        for ex in chunk {
            let emb = model.embedding.lookup(&encode_ids(&ex.ids, padded))?;
            out.push(argmax(&cnn_forward(&emb, &model.cnn)?.probs));
        }
    }
    Ok(out)
}

pub fn sentence_features(embedding: &EmbeddingMatrix, ids: &[usize]) -> Result<Vec<f64>> {
    let emb = embedding.lookup(&encode_ids(ids, ids.len()))?;
    Ok(mean_pool(&emb, ids.len()))
}

pub fn predict_head(model: &Emo2VecModel, head: usize, examples: &[Example]) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|ex| {
            let f = sentence_features(&model.embedding, &ex.ids)?;
            Ok(argmax(&logreg_forward(&f, &model.heads[head])?))
        })
        .collect()
}

fn accuracy(pred: &[usize], examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = pred
        .iter()
        .zip(examples)
        .filter(|(p, e)| **p == e.label)
        .count();
    hits as f64 / examples.len() as f64
}

/// Early-stopping bookkeeping. Only a strict improvement resets the
/// counter, so ties keep the first epoch that reached the best score.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    bad_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        let improved = self.best.is_none_or(|b| score > b);
        if improved {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        StopDecision {
            improved,
            stop: self.bad_epochs >= self.patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// One line of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training NLL per task over the epoch's steps.
    pub task_loss: BTreeMap<String, f64>,
    pub dev_accuracy: BTreeMap<String, f64>,
    pub avg_dev_accuracy: f64,
    pub combined_loss: f64,
}

pub fn history_to_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut s = String::new();
    for r in history {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// Model plus everything needed to resume or reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Emo2VecModel,
    pub optimizer: OptimizerState,
    pub config: TrainerConfig,
    pub epoch: usize,
    pub best_dev: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Deterministic mini-batch source for one dataset. A batch never spans two
/// passes; the last batch of a pass may be short.
struct BatchCycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchCycler {
    fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    fn next_batch(&mut self, size: usize) -> &[usize] {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = &self.order[self.pos..end];
        self.pos = end;
        batch
    }
}

/// Participant in a training run.
struct Participant<'a> {
    task: TaskRef,
    data: &'a TaskData,
    cycler: BatchCycler,
}

fn evaluate_dev(
    model: &Emo2VecModel,
    participants: &[Participant<'_>],
    batch_size: usize,
) -> Result<(BTreeMap<String, f64>, f64)> {
    let mut dev = BTreeMap::new();
    for p in participants {
        if p.data.dev.is_empty() {
            continue;
        }
        let pred = match p.task {
            TaskRef::Large => predict_large(model, &p.data.dev, batch_size)?,
            TaskRef::Head(h) => predict_head(model, h, &p.data.dev)?,
        };
        dev.insert(p.data.name.clone(), accuracy(&pred, &p.data.dev));
    }
    if dev.is_empty() {
        let name = participants
            .first()
            .map_or_else(String::new, |p| p.data.name.clone());
        return Err(Error::EmptyDevSet(name));
    }
    let avg = dev.values().sum::<f64>() / dev.len() as f64;
    Ok((dev, avg))
}

/// Shared loop behind [`pretrain_large`] and [`train_multitask`].
fn run_training(
    mut model: Emo2VecModel,
    large: Option<&TaskData>,
    smalls: &[&TaskData],
    config: &TrainerConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut participants: Vec<Participant<'_>> = Vec::new();
    if let Some(l) = large {
        if l.train.is_empty() {
            return Err(Error::EmptyTrainSet(l.name.clone()));
        }
        if l.num_classes != model.cnn.num_classes() {
            return Err(Error::Config(format!(
                "large dataset has {} classes, CNN has {}",
                l.num_classes,
                model.cnn.num_classes()
            )));
        }
        participants.push(Participant {
            task: TaskRef::Large,
            data: l,
            cycler: BatchCycler::new(l.train.len(), derive_seed(config.seed, 100)),
        });
    }
    for (i, s) in smalls.iter().enumerate() {
        if s.train.is_empty() {
            return Err(Error::EmptyTrainSet(s.name.clone()));
        }
        let h = model
            .head_index(&s.name)
            .ok_or_else(|| Error::Config(format!("model has no head for `{}`", s.name)))?;
        if model.heads[h].num_classes() != s.num_classes {
            return Err(Error::Config(format!(
                "head `{}` has the wrong class count",
                s.name
            )));
        }
        participants.push(Participant {
            task: TaskRef::Head(h),
            data: s,
            cycler: BatchCycler::new(s.train.len(), derive_seed(config.seed, 101 + i as u64)),
        });
    }
    if participants.is_empty() {
        return Err(Error::NoTasks);
    }

    let hyper = config.adam();
    let mut opt = OptimizerState::new(&model);
    let steps = participants
        .iter()
        .map(|p| p.data.train.len())
        .max()
        .unwrap_or(0)
        .div_ceil(config.batch_size);

    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs.max(1) {
        let mut loss_sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut combined_sum = 0.0;
        for _ in 0..steps {
            let gathered: Vec<(TaskRef, Vec<Example>)> = participants
                .iter_mut()
                .map(|p| {
                    let idx = p.cycler.next_batch(config.batch_size);
                    (
                        p.task,
                        idx.iter().map(|&i| p.data.train[i].clone()).collect(),
                    )
                })
                .collect();
            let batches: Vec<TaskBatch<'_>> = gathered
                .iter()
                .map(|(task, ex)| TaskBatch {
                    task: *task,
                    examples: ex,
                })
                .collect();
            let (report, grads) = joint_gradients(&model, &batches, config.lambda, config.penalty)?;
            apply_gradients(&mut model, &grads, &mut opt, &hyper)?;
            if let Some(l) = report.large_loss {
                *loss_sums
                    .entry(participants[0].data.name.clone())
                    .or_insert(0.0) += l;
            }
            for (name, l) in &report.task_losses {
                *loss_sums.entry(name.clone()).or_insert(0.0) += l;
            }
            combined_sum += report.combined;
        }
        let (dev_accuracy, avg) = evaluate_dev(&model, &participants, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            task_loss: loss_sums
                .into_iter()
                .map(|(k, v)| (k, v / steps as f64))
                .collect(),
            dev_accuracy,
            avg_dev_accuracy: avg,
            combined_loss: combined_sum / steps as f64,
        };
        history.push(record);
        let decision = stopper.observe(epoch, avg);
        if decision.improved {
            best = Some(Checkpoint {
                model: model.clone(),
                optimizer: opt.clone(),
                config: config.clone(),
                epoch,
                best_dev: avg,
            });
        }
        if decision.stop {
            break;
        }
    }
    let checkpoint = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        checkpoint,
        history,
    })
}

/// Trains the embedding and CNN on the large dataset alone.
pub fn pretrain_large(
    model: Emo2VecModel,
    large: &TaskData,
    config: &TrainerConfig,
) -> Result<TrainOutcome> {
    if large.dev.is_empty() {
        return Err(Error::EmptyDevSet(large.name.clone()));
    }
    run_training(model, Some(large), &[], config)
}

/// Joint training over the large dataset (when enabled) and every small
/// dataset of `corpus`. Heads for datasets absent from `corpus` are carried
/// along untouched.
pub fn train_multitask(
    model: Emo2VecModel,
    corpus: &EncodedCorpus,
    config: &TrainerConfig,
) -> Result<TrainOutcome> {
    let large = config.include_large_in_joint.then_some(&corpus.large);
    let smalls: Vec<&TaskData> = corpus.smalls.iter().collect();
    run_training(model, large, &smalls, config)
}

/// Result of the whole pipeline: optional pre-training, then joint training.
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub pretrain_history: Vec<EpochRecord>,
    pub outcome: TrainOutcome,
}

/// Builds a model for `corpus` over `vocab`, pre-trains it when
/// `config.pretrain` is set, then runs joint training.
pub fn train_pipeline(
    corpus: &MultiTaskCorpus,
    vocab: Vocabulary,
    model_config: &ModelConfig,
    pretrain_config: &TrainerConfig,
    config: &TrainerConfig,
) -> Result<PipelineOutcome> {
    let encoded = EncodedCorpus::new(corpus, &vocab);
    let mut model = Emo2VecModel::for_corpus(corpus, vocab, model_config, config.seed)?;
    let mut pretrain_history = Vec::new();
    if config.pretrain {
        let pre = pretrain_large(model, &encoded.large, pretrain_config)?;
        pretrain_history = pre.history;
        model = pre.checkpoint.model;
    }
    let outcome = train_multitask(model, &encoded, config)?;
    Ok(PipelineOutcome {
        pretrain_history,
        outcome,
    })
}
