use rand::Rng;
use rand_distr::StandardNormal;

use super::{ClientUpdate, DpConfig};
use crate::Scalar;

/// Clips the delta to L2 norm `clip_norm`, then adds N(0, σ²) to every
/// coordinate. Sample count and local loss pass through unchanged.
pub fn dp_sanitize<T: Scalar, R: Rng + ?Sized>(
    update: &ClientUpdate<T>,
    dp: &DpConfig,
    rng: &mut R,
) -> ClientUpdate<T> {
    let mut out = update.clone();
    let clip = dp.clip_norm;
    let norm = out.delta.l2_norm().as_f64();
    if norm > clip {
        let mut factor = clip / norm;
        let original = out.delta.clone();
        loop {
            out.delta = original.clone();
            out.delta.scale(T::of(factor));
            let clipped = out.delta.l2_norm().as_f64();
            if clipped <= clip {
                break;
            }
            // Rounding can leave the norm a few ulps above the bound.
            factor *= clip / clipped * (1.0 - 4.0 * f64::EPSILON);
        }
    }
    if dp.noise_sigma > 0.0 {
        for v in out.delta.values_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += T::of(dp.noise_sigma * z);
        }
    }
    out
}
