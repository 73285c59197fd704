//! Emotion-specific word embeddings learned from a large distantly labelled
//! corpus and a suite of small labelled datasets.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernels`] – dense matrices, convolution, pooling, softmax, Adam;
//! * [`corpus`] – tokenisation, distant labelling, vocabularies, splits;
//! * [`embedding`] – the shared embedding table and its text format;
//! * [`cnn`] / [`logreg`] – the large-dataset CNN and the small-dataset heads;
//! * [`trainer`] – pre-training and joint multi-task training;
//! * [`eval`] – frozen-embedding evaluation and leave-one-out;
//! * [`cli`] – the `emo2vec` command line.

pub mod checkpoint;
pub mod cli;
pub mod cnn;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod logreg;
pub mod metrics;
pub mod synthetic;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use corpus::{distant_label, tokenize, Dataset, MultiTaskCorpus, Vocabulary};
pub use embedding::EmbeddingMatrix;
pub use error::{Error, Result};
pub use eval::{eval_frozen_embedding, leave_one_out_eval, EvalConfig, EvalResult, LooConfig};
pub use metrics::{
    compute_metric, metric_accuracy, metric_f1_ovr_mean, metric_f1_positive, MetricKind,
};
pub use trainer::{train_multitask, train_pipeline, Emo2VecModel, ModelConfig, TrainerConfig};
