//! Cross-entropy and label-smoothed cross-entropy.
//!
//! With smoothing mass `ε` over `K` classes the target distribution for a
//! sample of class `y` is `q(k) = (1 - ε)·[k = y] + ε / K`, and the loss is
//! `-Σ_k q(k) log softmax(z)_k`, averaged over the batch. The gradient with
//! respect to the logits is `(softmax(z) - q) / batch`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    SmoothCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Smoothing mass; ignored by [`LossKind::CrossEntropy`].
    pub epsilon: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::smooth(0.2)
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// dLoss/dLogits, same shape as the logits.
    pub grad: Matrix,
}

impl LossSpec {
    pub fn smooth(epsilon: f64) -> Self {
        LossSpec {
            kind: LossKind::SmoothCrossEntropy,
            epsilon,
        }
    }

    pub fn plain() -> Self {
        LossSpec {
            kind: LossKind::CrossEntropy,
            epsilon: 0.0,
        }
    }

    pub fn effective_epsilon(&self) -> f64 {
        match self.kind {
            LossKind::CrossEntropy => 0.0,
            LossKind::SmoothCrossEntropy => self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::config("epsilon", format!("{} is outside [0, 1)", self.epsilon)));
        }
        Ok(())
    }

    pub fn evaluate(&self, logits: &Matrix, targets: &[usize]) -> Result<LossOutput> {
        smooth_cross_entropy(logits, targets, self.effective_epsilon())
    }

    /// Per-sample loss values (not averaged), without the gradient.
    pub fn per_sample(&self, logits: &Matrix, targets: &[usize]) -> Result<Vec<f64>> {
        check(logits, targets)?;
        let eps = self.effective_epsilon();
        Ok(logits
            .row_iter()
            .zip(targets)
            .map(|(z, &y)| row_loss(z, y, eps, &mut vec![0.0; z.len()]))
            .collect())
    }
}

fn check(logits: &Matrix, targets: &[usize]) -> Result<()> {
    if logits.rows() != targets.len() {
        return Err(Error::LengthMismatch(format!(
            "{} logit rows for {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    let k = logits.cols();
    if let Some(&y) = targets.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label: y, classes: k });
    }
    if logits.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("non-finite logit".into()));
    }
    Ok(())
}

/// Loss of one row; leaves `softmax(z)` in `probs`.
fn row_loss(z: &[f64], y: usize, eps: f64, probs: &mut [f64]) -> f64 {
    let k = z.len() as f64;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &v) in probs.iter_mut().zip(z) {
        *p = (v - max).exp();
        sum += *p;
    }
    let log_sum = sum.ln();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    // -Σ q_k (z_k - max - log_sum) = log_sum - Σ q_k (z_k - max), since Σ q = 1
    let mut weighted = 0.0;
    for (j, &v) in z.iter().enumerate() {
        let q = if j == y { 1.0 - eps + eps / k } else { eps / k };
        weighted += q * (v - max);
    }
    log_sum - weighted
}

/// Batch-mean label-smoothed cross-entropy and its gradient.
pub fn smooth_cross_entropy(logits: &Matrix, targets: &[usize], epsilon: f64) -> Result<LossOutput> {
    check(logits, targets)?;
    let n = logits.rows();
    let k = logits.cols();
    let mut grad = Matrix::zeros(n, k);
    let mut total = 0.0;
    for (r, &y) in targets.iter().enumerate() {
        let g = grad.row_mut(r);
        total += row_loss(logits.row(r), y, epsilon, g);
        for (j, gv) in g.iter_mut().enumerate() {
            let q = if j == y {
                1.0 - epsilon + epsilon / k as f64
            } else {
                epsilon / k as f64
            };
            *gv = (*gv - q) / n as f64;
        }
    }
    let loss = if n == 0 { 0.0 } else { total / n as f64 };
    Ok(LossOutput { loss, grad })
}

pub fn cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<LossOutput> {
    smooth_cross_entropy(logits, targets, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        for eps in [0.0, 0.2, 0.7] {
            let out = smooth_cross_entropy(&m(&[vec![0.0; 4]]), &[2], eps).unwrap();
            assert!((out.loss - 4f64.ln()).abs() < 1e-12);
        }
        let out = cross_entropy(&m(&[vec![3.0; 7]]), &[6]).unwrap();
        assert!((out.loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_class_hand_value() {
        // q = [0.9, 0.1]: 0.9 ln(1 + e^-2) + 0.1 ln(1 + e^2)
        let expected = 0.9 * (1.0 + (-2f64).exp()).ln() + 0.1 * (1.0 + 2f64.exp()).ln();
        let out = smooth_cross_entropy(&m(&[vec![2.0, 0.0]]), &[0], 0.2).unwrap();
        assert!((out.loss - expected).abs() < 1e-15);
        assert!((out.loss - 0.326928).abs() < 5e-7);
    }

    #[test]
    fn confident_margin_loss_vanishes() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 10.0, 20.0, 30.0] {
            let out = cross_entropy(&m(&[vec![margin, 0.0, 0.0]]), &[0]).unwrap();
            assert!(out.loss < prev);
            prev = out.loss;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn gradient_is_softmax_minus_target() {
        let z = m(&[vec![0.5, -1.0, 2.0], vec![0.0, 0.1, -0.3]]);
        let out = cross_entropy(&z, &[2, 0]).unwrap();
        let p = crate::nn::softmax(&z);
        for r in 0..2 {
            for j in 0..3 {
                let onehot = if j == [2, 0][r] { 1.0 } else { 0.0 };
                assert!((out.grad.row(r)[j] - (p.row(r)[j] - onehot) / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            cross_entropy(&m(&[vec![0.0, 1.0]]), &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(matches!(
            cross_entropy(&m(&[vec![0.0, 1.0]]), &[0, 1]),
            Err(Error::LengthMismatch(_))
        ));
        assert!(matches!(
            cross_entropy(&m(&[vec![f64::NAN, 1.0]]), &[0]),
            Err(Error::NumericInput(_))
        ));
        assert!(LossSpec::smooth(1.0).validate().is_err());
    }

    #[test]
    fn plain_kind_ignores_epsilon() {
        let z = m(&[vec![0.3, 1.2]]);
        let spec = LossSpec { kind: LossKind::CrossEntropy, epsilon: 0.4 };
        assert_eq!(spec.evaluate(&z, &[0]).unwrap().loss, cross_entropy(&z, &[0]).unwrap().loss);
        assert_eq!(spec.per_sample(&z, &[0]).unwrap()[0], cross_entropy(&z, &[0]).unwrap().loss);
    }
}
