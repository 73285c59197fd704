//! Per-dataset logistic regression over mean-pooled embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{axpy, dot, nll_loss, softmax, DenseMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegParams {
    pub name: String,
    /// `k x C`
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl LogRegParams {
    pub fn zeros(name: impl Into<String>, dim: usize, classes: usize) -> Self {
        Self {
            name: name.into(),
            weights: DenseMatrix::zeros(dim, classes),
            bias: vec![0.0; classes],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.name.clone(), self.dim(), self.num_classes())
    }

    pub fn add_scaled(&mut self, other: &LogRegParams, alpha: f64) {
        axpy(self.weights.values_mut(), alpha, other.weights.values());
        axpy(&mut self.bias, alpha, &other.bias);
    }

    pub fn weight_norm(&self) -> f64 {
        dot(self.weights.values(), self.weights.values()).sqrt()
    }
}

/// Mean of the first `true_len` rows; zero vector when `true_len == 0`.
pub fn mean_pool(emb: &DenseMatrix, true_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; emb.cols()];
    let n = true_len.min(emb.rows());
    if n == 0 {
        return out;
    }
    for t in 0..n {
        axpy(&mut out, 1.0, emb.row(t));
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Adjoint of [`mean_pool`]: each real row receives `upstream / true_len`.
pub fn mean_pool_backward(rows: usize, true_len: usize, upstream: &[f64]) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(rows, upstream.len());
    let n = true_len.min(rows);
    if n == 0 {
        return g;
    }
    let inv = 1.0 / n as f64;
    for t in 0..n {
        axpy(g.row_mut(t), inv, upstream);
    }
    g
}

pub fn logreg_logits(features: &[f64], params: &LogRegParams) -> Result<Vec<f64>> {
    if features.len() != params.dim() {
        return Err(Error::Shape(format!(
            "{} features for a head of dim {}",
            features.len(),
            params.dim()
        )));
    }
    let mut logits = params.bias.clone();
    for (d, &x) in features.iter().enumerate() {
        if x != 0.0 {
            axpy(&mut logits, x, params.weights.row(d));
        }
    }
    Ok(logits)
}

pub fn logreg_forward(features: &[f64], params: &LogRegParams) -> Result<Vec<f64>> {
    Ok(softmax(&logreg_logits(features, params)?))
}

/// NLL of `gold`; accumulates `scale * grad` into `grads` and returns
/// `(grad_features (scaled), loss (unscaled))`.
pub fn logreg_backward_into(
    features: &[f64],
    params: &LogRegParams,
    gold: usize,
    scale: f64,
    grads: &mut LogRegParams,
) -> Result<(Vec<f64>, f64)> {
    let probs = logreg_forward(features, params)?;
    let (loss, mut dlogits) = nll_loss(&probs, gold)?;
    dlogits.iter_mut().for_each(|g| *g *= scale);
    axpy(&mut grads.bias, 1.0, &dlogits);
    let mut dfeat = vec![0.0; features.len()];
    for (d, &x) in features.iter().enumerate() {
        if x != 0.0 {
            axpy(grads.weights.row_mut(d), x, &dlogits);
        }
        dfeat[d] = dot(params.weights.row(d), &dlogits);
    }
    Ok((dfeat, loss))
}

pub fn logreg_backward(
    features: &[f64],
    params: &LogRegParams,
    gold: usize,
) -> Result<(Vec<f64>, LogRegParams, f64)> {
    let mut grads = params.zeros_like();
    let (dfeat, loss) = logreg_backward_into(features, params, gold, 1.0, &mut grads)?;
    Ok((dfeat, grads, loss))
}

/// How the weight penalty is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// Sum of squared weights.
    #[default]
    Squared,
    /// Euclidean norm of each head's weights, summed over heads; subgradient
    /// 0 at the origin.
    Norm,
}

/// Penalty over the weights (biases excluded) of every head, with the
/// gradient for each head's weights.
pub fn l2_penalty(heads: &[&LogRegParams], kind: PenaltyKind) -> (f64, Vec<DenseMatrix>) {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(heads.len());
    for h in heads {
        let w = h.weights.values();
        let sq = dot(w, w);
        let mut g = DenseMatrix::zeros(h.weights.rows(), h.weights.cols());
        match kind {
            PenaltyKind::Squared => {
                total += sq;
                g.values_mut()
                    .iter_mut()
                    .zip(w)
                    .for_each(|(gi, wi)| *gi = 2.0 * wi);
            }
            PenaltyKind::Norm => {
                let norm = sq.sqrt();
                total += norm;
                if norm > 0.0 {
                    g.values_mut()
                        .iter_mut()
                        .zip(w)
                        .for_each(|(gi, wi)| *gi = wi / norm);
                }
            }
        }
        grads.push(g);
    }
    (total, grads)
}
