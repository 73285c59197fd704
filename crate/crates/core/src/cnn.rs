//! Convolutional classifier for the large distantly-labeled dataset:
//! multi-width filter banks, ReLU, max-over-time pooling, then an affine
//! layer and softmax over the pooled features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    axpy, conv1d_backward_into, conv1d_forward, maxpool_backward, maxpool_time, nll_loss, relu,
    relu_backward, softmax, DenseMatrix,
};

pub const DEFAULT_WIDTHS: [usize; 4] = [1, 3, 5, 7];
pub const DEFAULT_FILTERS: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub widths: Vec<usize>,
    /// Total filter count, split evenly across widths.
    pub filters: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            widths: DEFAULT_WIDTHS.to_vec(),
            filters: DEFAULT_FILTERS,
        }
    }
}

impl CnnConfig {
    pub fn per_width(&self) -> Result<usize> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("filter widths must be positive".into()));
        }
        if self.filters == 0 || !self.filters.is_multiple_of(self.widths.len()) {
            return Err(Error::Config(format!(
                "{} filters cannot be split evenly over {} widths",
                self.filters,
                self.widths.len()
            )));
        }
        Ok(self.filters / self.widths.len())
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }
}

/// Filters of one width. Each filter is `width x k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub width: usize,
    pub filters: Vec<DenseMatrix>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnParams {
    pub banks: Vec<FilterBank>,
    /// `J x C`
    pub out_w: DenseMatrix,
    pub out_b: Vec<f64>,
}

impl CnnParams {
    /// Filters uniform in `±sqrt(6 / (width * dim + 1))`, biases and output
    /// layer zero (so initial predictions are exactly uniform).
    pub fn init(config: &CnnConfig, dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let per_width = config.per_width()?;
        if dim == 0 || classes == 0 {
            return Err(Error::Config(
                "embedding dim and class count must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let banks = config
            .widths
            .iter()
            .map(|&width| {
                let bound = (6.0 / (width * dim + 1) as f64).sqrt();
                let filters = (0..per_width)
                    .map(|_| {
                        let v = (0..width * dim)
                            .map(|_| rng.gen_range(-bound..=bound))
                            .collect();
                        DenseMatrix::from_vec(width, dim, v).expect("filter shape")
                    })
                    .collect();
                FilterBank {
                    width,
                    filters,
                    bias: vec![0.0; per_width],
                }
            })
            .collect();
        Ok(Self {
            banks,
            out_w: DenseMatrix::zeros(config.filters, classes),
            out_b: vec![0.0; classes],
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            banks: self
                .banks
                .iter()
                .map(|b| FilterBank {
                    width: b.width,
                    filters: b
                        .filters
                        .iter()
                        .map(|f| DenseMatrix::zeros(f.rows(), f.cols()))
                        .collect(),
                    bias: vec![0.0; b.bias.len()],
                })
                .collect(),
            out_w: DenseMatrix::zeros(self.out_w.rows(), self.out_w.cols()),
            out_b: vec![0.0; self.out_b.len()],
        }
    }

    pub fn num_filters(&self) -> usize {
        self.banks.iter().map(|b| b.filters.len()).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.out_b.len()
    }

    pub fn dim(&self) -> usize {
        self.banks
            .first()
            .and_then(|b| b.filters.first())
            .map_or(0, DenseMatrix::cols)
    }

    pub fn max_width(&self) -> usize {
        self.banks.iter().map(|b| b.width).max().unwrap_or(1)
    }

    pub fn config(&self) -> CnnConfig {
        CnnConfig {
            widths: self.banks.iter().map(|b| b.width).collect(),
            filters: self.num_filters(),
        }
    }

    /// Every trainable tensor in a fixed order: per bank its filters then
    /// its biases, then the output weights and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.banks {
            out.extend(b.filters.iter().map(DenseMatrix::values));
            out.push(&b.bias);
        }
        out.push(self.out_w.values());
        out.push(&self.out_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.banks {
            out.extend(b.filters.iter_mut().map(DenseMatrix::values_mut));
            out.push(&mut b.bias);
        }
        out.push(self.out_w.values_mut());
        out.push(&mut self.out_b);
        out
    }

    pub fn add_scaled(&mut self, other: &CnnParams, alpha: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(dst, alpha, src);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnActivations {
    /// Per filter, width-major order.
    pub conv: Vec<Vec<f64>>,
    pub relu: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
    pub argmax: Vec<usize>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn cnn_forward(emb: &DenseMatrix, params: &CnnParams) -> Result<CnnActivations> {
    if emb.cols() != params.dim() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs filter dim {}",
            emb.cols(),
            params.dim()
        )));
    }
    let j = params.num_filters();
    let mut acts = CnnActivations {
        conv: Vec::with_capacity(j),
        relu: Vec::with_capacity(j),
        pooled: Vec::with_capacity(j),
        argmax: Vec::with_capacity(j),
        logits: Vec::new(),
        probs: Vec::new(),
    };
    for bank in &params.banks {
        for (filter, &b) in bank.filters.iter().zip(&bank.bias) {
            let c = conv1d_forward(emb, filter, b)?;
            let r = relu(&c);
            let (fm, idx) = maxpool_time(&r)?;
            acts.conv.push(c);
            acts.relu.push(r);
            acts.pooled.push(fm);
            acts.argmax.push(idx);
        }
    }
    let mut logits = params.out_b.clone();
    for (jj, &fm) in acts.pooled.iter().enumerate() {
        if fm != 0.0 {
            axpy(&mut logits, fm, params.out_w.row(jj));
        }
    }
    acts.probs = softmax(&logits);
    acts.logits = logits;
    Ok(acts)
}

/// Backward pass for one sentence, accumulating `scale * gradient` into
/// `grads` and `grad_emb`. Returns the unscaled NLL.
pub fn cnn_backward_into(
    emb: &DenseMatrix,
    params: &CnnParams,
    acts: &CnnActivations,
    gold: usize,
    scale: f64,
    grads: &mut CnnParams,
    grad_emb: &mut DenseMatrix,
) -> Result<f64> {
    let (loss, mut dlogits) = nll_loss(&acts.probs, gold)?;
    dlogits.iter_mut().for_each(|g| *g *= scale);

    axpy(&mut grads.out_b, 1.0, &dlogits);
    let mut jj = 0;
    for (bank, gbank) in params.banks.iter().zip(grads.banks.iter_mut()) {
        for (fi, filter) in bank.filters.iter().enumerate() {
            let fm = acts.pooled[jj];
            if fm != 0.0 {
                axpy(grads.out_w.row_mut(jj), fm, &dlogits);
            }
            let dfm = crate::kernels::dot(params.out_w.row(jj), &dlogits);
            let dr = maxpool_backward(acts.relu[jj].len(), acts.argmax[jj], dfm)?;
            let dc = relu_backward(&acts.conv[jj], &dr)?;
            gbank.bias[fi] +=
                conv1d_backward_into(emb, filter, &dc, grad_emb, &mut gbank.filters[fi])?;
            jj += 1;
        }
    }
    Ok(loss)
}

/// Gradients of the NLL of `gold` with respect to the embedded sentence and
/// every CNN parameter.
pub fn cnn_backward(
    emb: &DenseMatrix,
    params: &CnnParams,
    acts: &CnnActivations,
    gold: usize,
) -> Result<(DenseMatrix, CnnParams, f64)> {
    let mut grads = params.zeros_like();
    let mut grad_emb = DenseMatrix::zeros(emb.rows(), emb.cols());
    let loss = cnn_backward_into(emb, params, acts, gold, 1.0, &mut grads, &mut grad_emb)?;
    Ok((grad_emb, grads, loss))
}

pub fn cnn_predict(emb: &DenseMatrix, params: &CnnParams) -> Result<usize> {
    Ok(crate::kernels::argmax(&cnn_forward(emb, params)?.probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{finite_diff_grad, max_relative_error};

    fn tiny(seed: u64) -> (DenseMatrix, CnnParams) {
        let cfg = CnnConfig {
            widths: vec![1, 3],
            filters: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = CnnParams::init(&cfg, 4, 3, seed).unwrap();
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
        }
        let emb = DenseMatrix::from_vec(7, 4, (0..28).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        (emb, p)
    }

    /// Independent straight-line forward pass.
    fn oracle_probs(emb: &DenseMatrix, p: &CnnParams) -> Vec<f64> {
        let (m, k) = emb.shape();
        let mut feats = Vec::new();
        for bank in &p.banks {
            for (f, &b) in bank.filters.iter().zip(&bank.bias) {
                let mut best = f64::NEG_INFINITY;
                for t in 0..=(m - bank.width) {
                    let mut s = b;
                    for r in 0..bank.width {
                        for c in 0..k {
                            s += emb.get(t + r, c) * f.get(r, c);
                        }
                    }
                    best = best.max(if s > 0.0 { s } else { 0.0 });
                }
                feats.push(best);
            }
        }
        let classes = p.out_b.len();
        let logits: Vec<f64> = (0..classes)
            .map(|c| {
                p.out_b[c]
                    + feats
                        .iter()
                        .enumerate()
                        .map(|(j, f)| f * p.out_w.get(j, c))
                        .sum::<f64>()
            })
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        logits.iter().map(|l| l.exp() / z).collect()
    }

    #[test]
    fn zero_forward_is_uniform() {
        let cfg = CnnConfig {
            widths: vec![1, 3],
            filters: 2,
        };
        let mut p = CnnParams::init(&cfg, 3, 4, 0).unwrap();
        p.scale(0.0);
        let acts = cnn_forward(&DenseMatrix::zeros(7, 3), &p).unwrap();
        assert_eq!(acts.probs, vec![0.25; 4]);
    }

    #[test]
    fn initial_predictions_are_uniform() {
        let (emb, _) = tiny(1);
        let p = CnnParams::init(
            &CnnConfig {
                widths: vec![1, 3],
                filters: 4,
            },
            4,
            3,
            9,
        )
        .unwrap();
        let acts = cnn_forward(&emb, &p).unwrap();
        for v in acts.probs {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn width_one_basis_filter_reduces_to_max() {
        let mut p = CnnParams::init(
            &CnnConfig {
                widths: vec![1],
                filters: 1,
            },
            3,
            2,
            0,
        )
        .unwrap();
        p.banks[0].filters[0] = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let emb = DenseMatrix::from_rows(&[
            vec![0.2, 9.0, 9.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.7, -9.0, 1.0],
            vec![0.1, 0.0, 0.0],
        ])
        .unwrap();
        let acts = cnn_forward(&emb, &p).unwrap();
        assert_eq!(acts.pooled, vec![0.7]);
        assert_eq!(acts.argmax, vec![2]);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        for seed in 0..5 {
            let (emb, p) = tiny(seed);
            let got = cnn_forward(&emb, &p).unwrap().probs;
            let want = oracle_probs(&emb, &p);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    fn loss_at(emb: &DenseMatrix, p: &CnnParams, gold: usize) -> f64 {
        nll_loss(&cnn_forward(emb, p).unwrap().probs, gold)
            .unwrap()
            .0
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..3 {
            let (emb, p) = tiny(seed);
            let gold = (seed % 3) as usize;
            let acts = cnn_forward(&emb, &p).unwrap();
            let (gemb, gp, loss) = cnn_backward(&emb, &p, &acts, gold).unwrap();
            assert!((loss - loss_at(&emb, &p, gold)).abs() < 1e-15);

            let num = finite_diff_grad(
                |v| loss_at(&DenseMatrix::from_vec(7, 4, v.to_vec()).unwrap(), &p, gold),
                emb.values(),
                1e-4,
            );
            assert!(max_relative_error(gemb.values(), &num) <= 1e-4);

            let n_tensors = p.tensors().len();
            for ti in 0..n_tensors {
                let base = p.tensors()[ti].to_vec();
                let num = finite_diff_grad(
                    |v| {
                        let mut q = p.clone();
                        q.tensors_mut()[ti].copy_from_slice(v);
                        loss_at(&emb, &q, gold)
                    },
                    &base,
                    1e-4,
                );
                let err = max_relative_error(gp.tensors()[ti], &num);
                assert!(err <= 1e-4, "tensor {ti}: {err}");
            }
        }
    }

    #[test]
    fn saturated_gold_has_vanishing_gradient() {
        let (emb, mut p) = tiny(4);
        p.out_b = vec![60.0, -60.0, -60.0];
        let acts = cnn_forward(&emb, &p).unwrap();
        let (gemb, gp, loss) = cnn_backward(&emb, &p, &acts, 0).unwrap();
        assert!(loss < 1e-20);
        assert!(gemb.values().iter().all(|v| v.abs() < 1e-20));
        assert!(gp
            .tensors()
            .iter()
            .flat_map(|t| t.iter())
            .all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn permuting_filters_leaves_prediction_unchanged() {
        let (emb, p) = tiny(6);
        let mut q = p.clone();
        // swap the two width-3 filters and the matching output rows (2, 3)
        q.banks[1].filters.swap(0, 1);
        q.banks[1].bias.swap(0, 1);
        let (r2, r3) = (p.out_w.row(2).to_vec(), p.out_w.row(3).to_vec());
        q.out_w.row_mut(2).copy_from_slice(&r3);
        q.out_w.row_mut(3).copy_from_slice(&r2);
        let a = cnn_forward(&emb, &p).unwrap();
        let b = cnn_forward(&emb, &q).unwrap();
        assert_eq!(a.pooled[2], b.pooled[3]);
        assert_eq!(a.pooled[3], b.pooled[2]);
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    fn pad_rows(emb: &DenseMatrix, extra: usize) -> DenseMatrix {
        let mut vals = emb.values().to_vec();
        vals.extend(std::iter::repeat_n(0.0, extra * emb.cols()));
        DenseMatrix::from_vec(emb.rows() + extra, emb.cols(), vals).unwrap()
    }

    #[test]
    fn extra_padding_is_invisible_once_an_all_pad_window_exists() {
        // 7 real rows padded to 7 + max width: every width already sees its
        // tail windows and at least one all-PAD window.
        for seed in 0..20 {
            let (emb, p) = tiny(seed);
            let base_emb = pad_rows(&emb, p.max_width());
            let base = cnn_forward(&base_emb, &p).unwrap();
            for extra in 1..=5 {
                let grown = cnn_forward(&pad_rows(&base_emb, extra), &p).unwrap();
                assert_eq!(grown.pooled, base.pooled);
                assert_eq!(grown.probs, base.probs);
            }
        }
    }

    #[test]
    fn extra_padding_can_expose_new_tail_windows() {
        // Without an all-PAD window, growing the padding adds windows that
        // straddle the last real rows and the padding; with a non-positive
        // bias these can still win the max.
        let cfg = CnnConfig {
            widths: vec![3],
            filters: 1,
        };
        let mut p = CnnParams::init(&cfg, 1, 2, 0).unwrap();
        p.banks[0].filters[0] =
            DenseMatrix::from_rows(&[vec![1.0], vec![-1.0], vec![-1.0]]).unwrap();
        p.banks[0].bias[0] = -0.1;
        let emb = DenseMatrix::from_rows(&[vec![0.0], vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(cnn_forward(&emb, &p).unwrap().pooled, vec![0.0]);
        let grown = cnn_forward(&pad_rows(&emb, 2), &p).unwrap();
        assert!((grown.pooled[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn full_batch_descent_decreases_loss() {
        let (_, p0) = tiny(10);
        let mut p = p0.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let batch: Vec<(DenseMatrix, usize)> = (0..6)
            .map(|i| {
                let e = DenseMatrix::from_vec(
                    7,
                    4,
                    (0..28).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                (e, i % 3)
            })
            .collect();
        let total = |p: &CnnParams| batch.iter().map(|(e, g)| loss_at(e, p, *g)).sum::<f64>();
        let mut prev = total(&p);
        for _ in 0..20 {
            let mut g = p.zeros_like();
            for (e, gold) in &batch {
                let acts = cnn_forward(e, &p).unwrap();
                let mut ge = DenseMatrix::zeros(7, 4);
                cnn_backward_into(e, &p, &acts, *gold, 1.0, &mut g, &mut ge).unwrap();
            }
            p.add_scaled(&g, -1e-3);
            let cur = total(&p);
            assert!(cur < prev, "{cur} >= {prev}");
            prev = cur;
        }
    }

    #[test]
    fn config_split() {
        assert_eq!(CnnConfig::default().per_width().unwrap(), 256);
        assert!(CnnConfig {
            widths: vec![1, 3, 5],
            filters: 1024
        }
        .per_width()
        .is_err());
    }
}
