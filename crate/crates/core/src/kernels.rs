//! Dense numeric primitives with hand-derived gradients.
//!
//! Everything is `f64`. Layers above this module (the CNN and logistic
//! regression heads) compose these kernels and never differentiate
//! anything themselves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot form a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Contiguous slice covering rows `start..start + count`.
    #[inline]
    pub fn row_block(&self, start: usize, count: usize) -> &[f64] {
        &self.values[start * self.cols..(start + count) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &DenseMatrix, alpha: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        axpy(&mut self.values, alpha, &other.values);
        Ok(())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Valid 1-D convolution of a `k_j x k` filter over an `M x k` embedded
/// sentence; output has `M - k_j + 1` positions.
pub fn conv1d_forward(emb: &DenseMatrix, filter: &DenseMatrix, bias: f64) -> Result<Vec<f64>> {
    if filter.cols() != emb.cols() {
        return Err(Error::Shape(format!(
            "filter width {} does not match embedding dim {}",
            filter.cols(),
            emb.cols()
        )));
    }
    let width = filter.rows();
    if width == 0 {
        return Err(Error::Shape("filter has zero rows".into()));
    }
    if emb.rows() < width {
        return Err(Error::SentenceShorterThanFilter {
            len: emb.rows(),
            width,
        });
    }
    let f = filter.values();
    Ok((0..=emb.rows() - width)
        .map(|t| dot(emb.row_block(t, width), f) + bias)
        .collect())
}

/// Adjoint of [`conv1d_forward`] for upstream gradient `upstream` on the
/// output positions. Returns `(grad_emb, grad_filter, grad_bias)`.
pub fn conv1d_backward(
    emb: &DenseMatrix,
    filter: &DenseMatrix,
    upstream: &[f64],
) -> Result<(DenseMatrix, DenseMatrix, f64)> {
    let mut grad_emb = DenseMatrix::zeros(emb.rows(), emb.cols());
    let mut grad_filter = DenseMatrix::zeros(filter.rows(), filter.cols());
    let grad_bias = conv1d_backward_into(emb, filter, upstream, &mut grad_emb, &mut grad_filter)?;
    Ok((grad_emb, grad_filter, grad_bias))
}

/// Accumulating form of [`conv1d_backward`]: adds into the given buffers and
/// returns the bias gradient. Zero upstream positions are skipped.
pub fn conv1d_backward_into(
    emb: &DenseMatrix,
    filter: &DenseMatrix,
    upstream: &[f64],
    grad_emb: &mut DenseMatrix,
    grad_filter: &mut DenseMatrix,
) -> Result<f64> {
    let width = filter.rows();
    if filter.cols() != emb.cols() || width == 0 || emb.rows() < width {
        return Err(Error::Shape(format!(
            "filter {:?} incompatible with embedding {:?}",
            filter.shape(),
            emb.shape()
        )));
    }
    if grad_emb.shape() != emb.shape() || grad_filter.shape() != filter.shape() {
        return Err(Error::Shape("gradient buffers do not match inputs".into()));
    }
    let positions = emb.rows() - width + 1;
    if upstream.len() != positions {
        return Err(Error::Shape(format!(
            "upstream has {} positions, expected {positions}",
            upstream.len()
        )));
    }
    let k = emb.cols();
    for (t, &g) in upstream.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        axpy(grad_filter.values_mut(), g, emb.row_block(t, width));
        axpy(
            &mut grad_emb.values_mut()[t * k..(t + width) * k],
            g,
            filter.values(),
        );
    }
    Ok(upstream.iter().sum())
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Subgradient at exactly zero is 0.
pub fn relu_backward(x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if x.len() != upstream.len() {
        return Err(Error::Shape(format!(
            "relu input has {} entries, upstream {}",
            x.len(),
            upstream.len()
        )));
    }
    Ok(x.iter()
        .zip(upstream)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect())
}

/// Max over time. Ties go to the first index.
pub fn maxpool_time(c: &[f64]) -> Result<(f64, usize)> {
    let (&first, rest) = c.split_first().ok_or(Error::EmptySequence)?;
    let mut best = (first, 0);
    for (i, &v) in rest.iter().enumerate() {
        if v > best.0 {
            best = (v, i + 1);
        }
    }
    Ok(best)
}

/// Routes the pooled gradient to the argmax position only.
pub fn maxpool_backward(len: usize, argmax: usize, upstream: f64) -> Result<Vec<f64>> {
    if argmax >= len {
        return Err(Error::Shape(format!(
            "argmax {argmax} out of range for length {len}"
        )));
    }
    let mut g = vec![0.0; len];
    g[argmax] = upstream;
    Ok(g)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Negative log likelihood of `gold` under `probs` (clamped at
/// [`PROB_FLOOR`]) and its gradient with respect to the pre-softmax logits,
/// `probs - onehot(gold)`.
pub fn nll_loss(probs: &[f64], gold: usize) -> Result<(f64, Vec<f64>)> {
    if gold >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label: gold,
            classes: probs.len(),
        });
    }
    let loss = -probs[gold].max(PROB_FLOOR).ln();
    let mut grad = probs.to_vec();
    grad[gold] -= 1.0;
    Ok((loss, grad))
}

pub fn argmax(v: &[f64]) -> usize {
    maxpool_time(v).map_or(0, |(_, i)| i)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self::with_lr(0.001)
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam update. `frozen` indexes entries that must never move (the
/// padding row of the embedding table); their moments stay at zero.
pub fn adam_step_masked(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    hyper: &AdamHyper,
    frozen: Option<std::ops::Range<usize>>,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.len() {
        return Err(Error::Shape(format!(
            "adam: param {} grad {} state {}",
            param.len(),
            grad.len(),
            state.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::GradientExploded);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let frozen = frozen.unwrap_or(0..0);
    for i in 0..param.len() {
        if frozen.contains(&i) {
            continue;
        }
        let g = grad[i];
        let m = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        let v = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        param[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    adam_step_masked(param, grad, state, hyper, None)
}

/// Central-difference numeric gradient of `f` at `params`.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let plus = f(&p);
            p[i] = orig - h;
            let minus = f(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, 1e-8)`, the gradient-check error measure.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        let v = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, v).unwrap()
    }

    #[test]
    fn conv_hand_example() {
        let emb = DenseMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let filter = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(conv1d_forward(&emb, &filter, 0.0).unwrap(), vec![3.0, 5.0]);
    }

    #[test]
    fn conv_zero_filter_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = random_matrix(&mut rng, 6, 3);
        let filter = DenseMatrix::zeros(2, 3);
        let out = conv1d_forward(&emb, &filter, 0.5).unwrap();
        assert_eq!(out, vec![0.5; 5]);
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let emb = random_matrix(&mut rng, 7, 4);
        let filter = random_matrix(&mut rng, 3, 4);
        let out = conv1d_forward(&emb, &filter, 0.25).unwrap();
        assert_eq!(out.len(), 5);
        for (t, &got) in out.iter().enumerate() {
            let mut want = 0.25;
            for r in 0..3 {
                for c in 0..4 {
                    want += emb.get(t + r, c) * filter.get(r, c);
                }
            }
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_short_sentence() {
        let emb = DenseMatrix::zeros(2, 3);
        let filter = DenseMatrix::zeros(3, 3);
        let err = conv1d_forward(&emb, &filter, 0.0).unwrap_err();
        assert!(err.to_string().contains("sentence shorter than filter"));
    }

    #[test]
    fn conv_backward_zero_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = random_matrix(&mut rng, 5, 2);
        let filter = random_matrix(&mut rng, 2, 2);
        let (ge, gf, gb) = conv1d_backward(&emb, &filter, &[0.0; 4]).unwrap();
        assert!(ge.values().iter().all(|&v| v == 0.0));
        assert!(gf.values().iter().all(|&v| v == 0.0));
        assert_eq!(gb, 0.0);
    }

    #[test]
    fn conv_backward_linear_case() {
        let emb = DenseMatrix::from_rows(&[vec![4.0], vec![5.0], vec![6.0]]).unwrap();
        let filter = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let (ge, gf, gb) = conv1d_backward(&emb, &filter, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(ge.values(), &[1.0, 1.0, 1.0]);
        assert_eq!(gf.values(), &[15.0]);
        assert_eq!(gb, 3.0);
    }

    #[test]
    fn conv_backward_shape_mismatch() {
        let emb = DenseMatrix::zeros(5, 2);
        let filter = DenseMatrix::zeros(2, 2);
        assert!(conv1d_backward(&emb, &filter, &[1.0; 3]).is_err());
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let emb = random_matrix(&mut rng, 7, 4);
        let filter = random_matrix(&mut rng, 3, 4);
        let bias = 0.1;
        let upstream: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (ge, gf, gb) = conv1d_backward(&emb, &filter, &upstream).unwrap();

        let objective = |e: &DenseMatrix, f: &DenseMatrix, b: f64| -> f64 {
            dot(&conv1d_forward(e, f, b).unwrap(), &upstream)
        };
        let num_e = finite_diff_grad(
            |p| {
                objective(
                    &DenseMatrix::from_vec(7, 4, p.to_vec()).unwrap(),
                    &filter,
                    bias,
                )
            },
            emb.values(),
            1e-4,
        );
        let num_f = finite_diff_grad(
            |p| {
                objective(
                    &emb,
                    &DenseMatrix::from_vec(3, 4, p.to_vec()).unwrap(),
                    bias,
                )
            },
            filter.values(),
            1e-4,
        );
        let num_b = finite_diff_grad(|p| objective(&emb, &filter, p[0]), &[bias], 1e-4);
        assert!(max_relative_error(ge.values(), &num_e) <= 1e-4);
        assert!(max_relative_error(gf.values(), &num_f) <= 1e-4);
        assert!(relative_error(gb, num_b[0]) <= 1e-4);
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(
            relu_backward(&[-1.0, 0.0, 2.0], &[5.0, 5.0, 5.0]).unwrap(),
            vec![0.0, 0.0, 5.0]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for (a, b) in relu(&x).iter().zip(&x) {
            assert_eq!(*a, if *b > 0.0 { *b } else { 0.0 });
        }
    }

    #[test]
    fn maxpool_cases() {
        assert_eq!(maxpool_time(&[1.0, 3.0, 2.0]).unwrap(), (3.0, 1));
        assert_eq!(maxpool_time(&[2.0, 2.0, 2.0]).unwrap(), (2.0, 0));
        assert!(matches!(maxpool_time(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn maxpool_gradient_is_one_hot() {
        let x = [0.3, -0.2, 0.9, 0.1];
        let (_, idx) = maxpool_time(&x).unwrap();
        let analytic = maxpool_backward(x.len(), idx, 1.0).unwrap();
        let numeric = finite_diff_grad(|p| maxpool_time(p).unwrap().0, &x, 1e-4);
        assert_eq!(analytic, vec![0.0, 0.0, 1.0, 0.0]);
        assert!(max_relative_error(&analytic, &numeric) <= 1e-4);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300 && p[1] >= 0.0);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_matches_direct_formula() {
        // Direct formula without max subtraction, summed largest-last for
        // a little extra accuracy. Values are small so nothing overflows.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let exps: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let mut sorted = exps.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let total: f64 = sorted.iter().sum();
        for (got, e) in softmax(&z).iter().zip(&exps) {
            assert!((got - e / total).abs() < 1e-12);
        }
    }

    #[test]
    fn nll_cases() {
        assert_eq!(nll_loss(&[1.0, 0.0], 0).unwrap().0, 0.0);
        let (l, _) = nll_loss(&[0.25; 4], 2).unwrap();
        assert!((l - 1.3862944).abs() < 1e-7);
        assert!(matches!(
            nll_loss(&[0.5, 0.5], 2),
            Err(Error::LabelOutOfRange { .. })
        ));
        // clamped, not infinite
        assert!((nll_loss(&[1.0, 0.0], 1).unwrap().0 - 27.631021115928547).abs() < 1e-9);
    }

    #[test]
    fn nll_logit_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, analytic) = nll_loss(&softmax(&z), 3).unwrap();
        let numeric = finite_diff_grad(|p| nll_loss(&softmax(p), 3).unwrap().0, &z, 1e-4);
        assert!(max_relative_error(&analytic, &numeric) <= 1e-4);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut p = [0.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st, &AdamHyper::with_lr(0.001)).unwrap();
        assert!((p[0] - (-0.001 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr() {
        let mut p = vec![0.3, -0.7];
        let mut st = AdamState::new(2);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0, 0.0], &mut st, &AdamHyper::default()).unwrap();
        }
        assert_eq!(p, vec![0.3, -0.7]);
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[1.0, -2.0], &mut st, &AdamHyper::with_lr(0.0)).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = [0.0];
        let mut st = AdamState::new(1);
        let err = adam_step(&mut p, &[f64::NAN], &mut st, &AdamHyper::default()).unwrap_err();
        assert_eq!(err.to_string(), "gradient exploded");
    }

    #[test]
    fn adam_masked_range_is_frozen() {
        let mut p = vec![0.0, 0.0, 1.0];
        let mut st = AdamState::new(3);
        adam_step_masked(
            &mut p,
            &[1.0, 1.0, 1.0],
            &mut st,
            &AdamHyper::default(),
            Some(0..2),
        )
        .unwrap();
        assert_eq!(&p[..2], &[0.0, 0.0]);
        assert_eq!(&st.m[..2], &[0.0, 0.0]);
        assert!(p[2] < 1.0);
    }

    #[test]
    fn finite_diff_basics() {
        let g = finite_diff_grad(|p| p[0] * p[0], &[3.0], 1e-4);
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert_eq!(finite_diff_grad(|_| 4.2, &[1.0, 2.0], 1e-4), vec![0.0, 0.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn softmax_normalized_and_shift_invariant(
                z in prop::collection::vec(-50.0f64..50.0, 1..20),
                shift in -100.0f64..100.0,
            ) {
                let p = softmax(&z);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
                let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
                for (a, b) in p.iter().zip(softmax(&shifted)) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }

            #[test]
            fn conv_is_linear(
                seed in any::<u64>(),
                alpha in -3.0f64..3.0,
                width in 1usize..4,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let emb = random_matrix(&mut rng, 6, 3);
                let filter = random_matrix(&mut rng, width, 3);
                let mut scaled = emb.clone();
                scaled.values_mut().iter_mut().for_each(|v| *v *= alpha);
                let base = conv1d_forward(&emb, &filter, 0.0).unwrap();
                let out = conv1d_forward(&scaled, &filter, 0.0).unwrap();
                for (a, b) in base.iter().zip(&out) {
                    prop_assert!((alpha * a - b).abs() < 1e-12);
                }
                let mut sf = filter.clone();
                sf.values_mut().iter_mut().for_each(|v| *v *= alpha);
                let out = conv1d_forward(&emb, &sf, 0.0).unwrap();
                for (a, b) in base.iter().zip(&out) {
                    prop_assert!((alpha * a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn adam_zero_lr_is_identity(
                p in prop::collection::vec(-5.0f64..5.0, 1..30),
                seed in any::<u64>(),
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g: Vec<f64> = p.iter().map(|_| rng.gen_range(-10.0..10.0)).collect();
                let mut q = p.clone();
                let mut st = AdamState::new(p.len());
                adam_step(&mut q, &g, &mut st, &AdamHyper::with_lr(0.0)).unwrap();
                prop_assert_eq!(p, q);
            }

            #[test]
            fn gradients_match_finite_differences(seed in any::<u64>(), len in 1usize..50) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let z: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let gold = rng.gen_range(0..len);
                let (_, analytic) = nll_loss(&softmax(&z), gold).unwrap();
                let numeric = finite_diff_grad(|p| nll_loss(&softmax(p), gold).unwrap().0, &z, 1e-4);
                prop_assert!(max_relative_error(&analytic, &numeric) <= 1e-4);
            }
        }
    }
}
