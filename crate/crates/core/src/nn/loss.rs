//! Batch losses and their gradients with respect to the network outputs.

use serde::{Deserialize, Serialize};

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean over batch and output components of `|prediction - target|`.
    MeanAbsoluteError,
    /// Softmax followed by negative log-likelihood, averaged over the batch.
    CategoricalCrossEntropy,
}

/// Target of one sample: regression values or a class index.
#[derive(Debug, Clone, PartialEq)]
pub enum Target<T> {
    Values(Vec<T>),
    Class(usize),
}

/// Loss of one sample and its output gradient, both already divided by
/// `batch` so that summing over the batch yields the batch mean.
pub fn sample_loss<T: Scalar>(kind: LossKind, output: &[T], target: &Target<T>, batch: usize) -> (T, Vec<T>) {
    let b = T::from(batch).unwrap();
    match (kind, target) {
        (LossKind::MeanAbsoluteError, Target::Values(y)) => {
            let n = T::from(output.len()).unwrap();
            let mut loss = T::zero();
            let grad = output
                .iter()
                .zip(y)
                .map(|(&p, &t)| {
                    let d = p - t;
                    loss = loss + d.abs();
                    let sign = if d > T::zero() {
                        T::one()
                    } else if d < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    sign / (n * b)
                })
                .collect();
            (loss / (n * b), grad)
        }
        (LossKind::CategoricalCrossEntropy, Target::Class(c)) => {
            let probs = softmax(output);
            let loss = -(probs[*c].max(T::min_positive_value())).ln() / b;
            let grad = probs
                .iter()
                .enumerate()
                .map(|(i, &p)| (p - if i == *c { T::one() } else { T::zero() }) / b)
                .collect();
            (loss, grad)
        }
        (kind, target) => panic!("loss {kind:?} cannot score target {target:?}"),
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_averages_components_and_batch() {
        let (loss, grad) = sample_loss(LossKind::MeanAbsoluteError, &[1.0f64, -1.0], &Target::Values(vec![0.5, 0.0]), 2);
        assert!((loss - 0.375).abs() < 1e-15);
        assert_eq!(grad, vec![0.25, -0.25]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let (loss, grad) = sample_loss(LossKind::CategoricalCrossEntropy, &[0.0f64; 3], &Target::Class(1), 1);
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((grad[1] + 2.0 / 3.0).abs() < 1e-12);
        assert!((grad.iter().sum::<f64>()).abs() < 1e-12);
    }
}
