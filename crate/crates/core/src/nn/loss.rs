use super::{NnError, Tensor};
use crate::Scalar;

/// Contrastive pair loss `y·d² + (1−y)·max(0, margin − d)²` on the Euclidean
/// distance `d` between two embeddings, with gradients for both sides.
pub fn contrastive_loss<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    matched: bool,
    margin: T,
) -> Result<(T, Tensor<T>, Tensor<T>), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::Shape {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    let mut grad_a = vec![T::zero(); a.len()];
    let loss = contrastive_slices(a.data(), b.data(), matched, margin, &mut grad_a);
    let grad_b = grad_a.iter().map(|&g| -g).collect();
    Ok((
        loss,
        Tensor::from_parts_unchecked(a.shape().to_vec(), grad_a),
        Tensor::from_parts_unchecked(a.shape().to_vec(), grad_b),
    ))
}

/// Writes dL/da into `grad_a`; dL/db is its negation.
pub(crate) fn contrastive_slices<T: Scalar>(a: &[T], b: &[T], matched: bool, margin: T, grad_a: &mut [T]) -> T {
    let two = T::of(2.0);
    let sq: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    if matched {
        for ((g, &x), &y) in grad_a.iter_mut().zip(a).zip(b) {
            *g = two * (x - y);
        }
        return sq;
    }
    let d = sq.sqrt();
    let gap = margin - d;
    // d = 0 has no direction to push along; the subgradient 0 is used.
    if gap <= T::zero() || d == T::zero() {
        grad_a.fill(T::zero());
        return if gap > T::zero() { gap * gap } else { T::zero() };
    }
    let scale = -two * gap / d;
    for ((g, &x), &y) in grad_a.iter_mut().zip(a).zip(b) {
        *g = scale * (x - y);
    }
    gap * gap
}

/// Whether the non-match hinge is active, for kink detection in gradient checks.
pub(crate) fn hinge_active<T: Scalar>(a: &[T], b: &[T], margin: T) -> bool {
    let sq: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    sq.sqrt() < margin
}

/// Softmax cross-entropy, stabilised by subtracting the max logit.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>), NnError> {
    if label >= logits.len() {
        return Err(NnError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let mut grad = vec![T::zero(); logits.len()];
    let loss = softmax_xent_slices(logits.data(), label, &mut grad);
    Ok((loss, Tensor::from_parts_unchecked(logits.shape().to_vec(), grad)))
}

pub(crate) fn softmax_xent_slices<T: Scalar>(logits: &[T], label: usize, grad: &mut [T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g = (z - max).exp();
        total += *g;
    }
    for g in grad.iter_mut() {
        *g /= total;
    }
    let loss = total.ln() - (logits[label] - max);
    grad[label] -= T::one();
    loss.max(T::zero())
}
