//! Mean hinge loss over raw scores, `mean(max(0, 1 - y·s))`.

use super::Scalar;
use crate::error::NeuralError;

/// Returns `(loss, dloss/dscores)`. Labels must be exactly ±1. A margin that
/// is met exactly (`1 - y·s == 0`) contributes neither loss nor gradient.
pub fn hinge_loss<F: Scalar>(scores: &[F], labels: &[F]) -> Result<(F, Vec<F>), NeuralError> {
    if scores.len() != labels.len() {
        return Err(NeuralError::ShapeMismatch {
            context: "hinge loss".into(),
            expected: format!("{} labels", scores.len()),
            found: format!("{} labels", labels.len()),
        });
    }
    let one = F::one();
    for &y in labels {
        if y != one && y != -one {
            return Err(NeuralError::LabelDomain(y.to_f64()));
        }
    }
    if scores.is_empty() {
        return Ok((F::zero(), Vec::new()));
    }
    let n = F::from_f64(scores.len() as f64);
    let mut total = F::zero();
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let margin = one - y * s;
        if margin > F::zero() {
            total = total + margin;
            grad.push(-y / n);
        } else {
            grad.push(F::zero());
        }
    }
    Ok((total / n, grad))
}
