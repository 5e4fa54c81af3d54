use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use super::NnError;

/// Floor applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// Regression or classification target for [`loss`].
#[derive(Clone, Copy, Debug)]
pub enum Target<'a, T> {
    Classes(&'a [usize]),
    Values(&'a Tensor<T>),
}

/// Scalar loss with its gradient with respect to the prediction.
pub fn loss<T: Real>(
    kind: LossKind,
    prediction: &Tensor<T>,
    target: Target<'_, T>,
) -> Result<(T, Tensor<T>), NnError> {
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Classes(c)) => cross_entropy(prediction, c),
        (LossKind::Mse, Target::Values(t)) => mse(prediction, t),
        _ => Err(NnError::InvalidConfig(format!(
            "{kind:?} loss does not accept this target kind"
        ))),
    }
}

/// Mean negative log-likelihood of `labels` under row-wise probabilities.
pub fn cross_entropy<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>), NnError> {
    let n = probs.batch();
    if labels.len() != n {
        return Err(NnError::ShapeMismatch {
            expected: vec![n],
            found: vec![labels.len()],
        });
    }
    let k = probs.len() / n;
    let floor = T::lit(PROB_FLOOR);
    let inv_n = T::one() / T::lit(n as f64);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); probs.len()];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(NnError::InvalidClass {
                class: y,
                classes: k,
            });
        }
        let p = probs.sample(i)[y].max(floor);
        total = total - p.ln();
        grad[i * k + y] = -inv_n / p;
    }
    Ok((
        total * inv_n,
        Tensor::from_parts(probs.shape().to_vec(), grad),
    ))
}

/// Mean squared error over all elements.
pub fn mse<T: Real>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>), NnError> {
    if prediction.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            expected: prediction.shape().to_vec(),
            found: target.shape().to_vec(),
        });
    }
    let m = T::lit(prediction.len() as f64);
    let two = T::lit(2.0);
    let mut total = T::zero();
    let grad = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = *p - *t;
            total = total + d * d;
            two * d / m
        })
        .collect();
    Ok((
        total / m,
        Tensor::from_parts(prediction.shape().to_vec(), grad),
    ))
}
