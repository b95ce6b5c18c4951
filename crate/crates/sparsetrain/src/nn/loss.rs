//! Classification losses and their output-layer link functions.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    SoftmaxCrossEntropy,
    MseSigmoid,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            LossKind::MseSigmoid => "mse_sigmoid",
        }
    }

    /// Applies the output link function to a logit matrix in place.
    pub fn link<T: Real>(self, logits: &mut DenseMatrix<T>) {
        match self {
            LossKind::SoftmaxCrossEntropy => softmax_rows(logits),
            LossKind::MseSigmoid => logits.map_in_place(sigmoid),
        }
    }

    /// Mean loss over the batch given linked outputs.
    pub fn loss<T: Real>(self, outputs: &DenseMatrix<T>, labels: &[u32]) -> Result<f64> {
        check_labels(outputs.cols(), labels)?;
        let b = outputs.rows();
        let mut total = 0.0;
        match self {
            LossKind::SoftmaxCrossEntropy => {
                for (r, &y) in labels.iter().enumerate() {
                    let p = outputs.get(r, y as usize).to_f64().max(f64::MIN_POSITIVE);
                    total -= p.ln();
                }
            }
            LossKind::MseSigmoid => {
                for (r, &y) in labels.iter().enumerate() {
                    for (c, &o) in outputs.row(r).iter().enumerate() {
                        let target = if c == y as usize { 1.0 } else { 0.0 };
                        let d = o.to_f64() - target;
                        total += d * d;
                    }
                }
            }
        }
        Ok(total / b as f64)
    }

    /// Per-sample loss gradient with respect to the logits
    /// (`∂L_b/∂z`, un-normalized; layer gradients average over the batch).
    pub fn output_delta<T: Real>(self, outputs: &DenseMatrix<T>, labels: &[u32]) -> Result<DenseMatrix<T>> {
        check_labels(outputs.cols(), labels)?;
        let mut delta = outputs.clone();
        match self {
            LossKind::SoftmaxCrossEntropy => {
                for (r, &y) in labels.iter().enumerate() {
                    let row = delta.row_mut(r);
                    row[y as usize] = row[y as usize] - T::one();
                }
            }
            LossKind::MseSigmoid => {
                let two = T::from_f64(2.0);
                for (r, &y) in labels.iter().enumerate() {
                    let row = delta.row_mut(r);
                    for (c, slot) in row.iter_mut().enumerate() {
                        let o = *slot;
                        let target = if c == y as usize { T::one() } else { T::zero() };
                        *slot = two * (o - target) * o * (T::one() - o);
                    }
                }
            }
        }
        Ok(delta)
    }
}

/// Mean batch loss and the gradient of that mean with respect to the
/// logits. For softmax cross-entropy: `loss = mean(−ln p[label])`,
/// `dlogits = (p − onehot)/B`.
pub fn loss_and_output_grad<T: Real>(
    kind: LossKind,
    logits: &DenseMatrix<T>,
    labels: &[u32],
) -> Result<(f64, DenseMatrix<T>)> {
    let mut outputs = logits.clone();
    kind.link(&mut outputs);
    let loss = kind.loss(&outputs, labels)?;
    let mut dlogits = kind.output_delta(&outputs, labels)?;
    let inv_b = T::from_f64(1.0 / logits.rows() as f64);
    dlogits.map_in_place(|v| v * inv_b);
    Ok((loss, dlogits))
}

fn check_labels(classes: usize, labels: &[u32]) -> Result<()> {
    match labels.iter().position(|&y| y as usize >= classes) {
        Some(i) => Err(Error::Data(format!(
            "label {} at row {i} out of range [0, {classes})",
            labels[i]
        ))),
        None => Ok(()),
    }
}

pub fn softmax_rows<T: Real>(m: &mut DenseMatrix<T>) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_loss_is_ln_classes() {
        let logits = DenseMatrix::from_rows(&[vec![0.0f64; 5], vec![2.0; 5]]);
        let (loss, _) = loss_and_output_grad(LossKind::SoftmaxCrossEntropy, &logits, &[0, 3]).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_two_class_gradient() {
        let logits = DenseMatrix::from_rows(&[vec![0.0f64, 0.0]]);
        let (_, d) = loss_and_output_grad(LossKind::SoftmaxCrossEntropy, &logits, &[0]).unwrap();
        assert!((d.get(0, 0) + 0.5).abs() < 1e-15);
        assert!((d.get(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut m = DenseMatrix::from_rows(&[vec![1.0f32, 2.0, 3.0], vec![-1.0, 0.0, 1.0]]);
        softmax_rows(&mut m);
        for r in 0..2 {
            let s: f32 = m.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let logits = DenseMatrix::from_rows(&[vec![0.0f64, 0.0]]);
        assert!(loss_and_output_grad(LossKind::SoftmaxCrossEntropy, &logits, &[2]).is_err());
    }

    #[test]
    fn dlogits_matches_finite_differences() {
        use rand::Rng as _;
        let mut rng = crate::seeds::rng_for(5, 3);
        for kind in [LossKind::SoftmaxCrossEntropy, LossKind::MseSigmoid] {
            let logits = DenseMatrix::from_vec(
                3,
                4,
                (0..12).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>(),
            );
            let labels = [1u32, 0, 3];
            let (_, d) = loss_and_output_grad(kind, &logits, &labels).unwrap();
            let h = 1e-6;
            for r in 0..3 {
                for c in 0..4 {
                    let mut plus = logits.clone();
                    plus.set(r, c, plus.get(r, c) + h);
                    let mut minus = logits.clone();
                    minus.set(r, c, minus.get(r, c) - h);
                    let (lp, _) = loss_and_output_grad(kind, &plus, &labels).unwrap();
                    let (lm, _) = loss_and_output_grad(kind, &minus, &labels).unwrap();
                    let fd = (lp - lm) / (2.0 * h);
                    assert!(
                        (fd - d.get(r, c)).abs() < 1e-6,
                        "{kind:?} fd {fd} vs {g}",
                        g = d.get(r, c)
                    );
                }
            }
        }
    }

    #[test]
    fn saturated_sigmoid_has_exactly_zero_gradient() {
        // ±800 saturates σ to exactly 1.0 / 0.0 in both precisions, so a
        // perfect prediction yields a bit-exact zero loss and gradient.
        let logits = DenseMatrix::from_rows(&[vec![800.0f64, -800.0]]);
        let (loss, d) = loss_and_output_grad(LossKind::MseSigmoid, &logits, &[0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(d.as_slice().iter().all(|&g| g == 0.0));
    }
}
