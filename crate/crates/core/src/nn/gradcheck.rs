//! Finite-difference verification of the analytic gradients.
//!
//! Coordinates whose ±h perturbation flips a ReLU sign, a pool winner or
//! the contrastive hinge are skipped: the loss is not differentiable there
//! and central differences are meaningless.
//!
//! The central difference cannot resolve gradients below the rounding error
//! of the loss itself, about `ε·|L|/h`. Directions in which the loss is
//! exactly invariant (shifting a unit that both branches of every pair keep
//! moves both embeddings equally) have an analytic gradient of exactly zero
//! and a numeric one made of rounding alone. The relative error denominator
//! is therefore never smaller than that resolution divided by the tolerance.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Batch, Mode, NnError, ParamVector, SiameseModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Central difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error; raised per coordinate to
    /// the finite-difference resolution over the tolerance.
    pub floor: f64,
    /// Check at most this many coordinates per block; `None` checks all.
    pub max_coords_per_block: Option<usize>,
    /// Seed for coordinate sampling.
    pub seed: u64,
    /// Frozen dropout masks are drawn from this seed; `None` disables dropout.
    pub mask_seed: Option<u64>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords_per_block: Some(48),
            seed: 0,
            mask_seed: Some(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn worst_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.worst_rel_error).fold(0.0, f64::max)
    }

    pub fn failing_blocks(&self) -> impl Iterator<Item = &BlockReport> {
        self.blocks.iter().filter(|b| !b.passed)
    }
}

/// Rounding error, in units of machine epsilon times |loss|, assumed for
/// one loss evaluation.
const LOSS_ROUNDING_ULPS: f64 = 4.0;

/// Smallest gradient the central difference of `up` and `down` resolves.
pub fn fd_resolution(up: f64, down: f64, step: f64) -> f64 {
    LOSS_ROUNDING_ULPS * f64::EPSILON * (up.abs() + down.abs()) / (2.0 * step)
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `model.backward` against central differences.
pub fn gradcheck(
    model: &SiameseModel,
    params: &ParamVector<f64>,
    batch: Batch<'_, f64>,
    config: &GradcheckConfig,
) -> Result<GradcheckReport, NnError> {
    let analytic = match config.mask_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model.backward(params, batch, Mode::Train(&mut rng))?.1
        }
        None => model.backward(params, batch, Mode::Eval)?.1,
    };
    compare_gradient(model, params, batch, &analytic, config)
}

/// Checks an externally supplied gradient; used directly for fault injection.
pub fn compare_gradient(
    model: &SiameseModel,
    params: &ParamVector<f64>,
    batch: Batch<'_, f64>,
    analytic: &ParamVector<f64>,
    config: &GradcheckConfig,
) -> Result<GradcheckReport, NnError> {
    params.ensure_compatible(analytic)?;
    let (loss, base_pattern) = model.loss_with_pattern(params.values(), batch, config.mask_seed)?;
    let mut blocks = Vec::new();
    for (b, block) in params.layout().blocks().iter().enumerate() {
        let range = block.range();
        let coords: Vec<usize> = match config.max_coords_per_block {
            Some(max) if block.len() > max => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (b as u64).wrapping_mul(0x9e37_79b9));
                let mut picked: Vec<usize> = sample(&mut rng, block.len(), max.max(1) - 1)
                    .into_iter()
                    .map(|i| range.start + i)
                    .collect();
                // Always include the largest analytic entry.
                let largest = range
                    .max_by(|&i, &j| analytic.values()[i].abs().total_cmp(&analytic.values()[j].abs()))
                    .expect("non-empty block");
                if !picked.contains(&largest) {
                    picked.push(largest);
                }
                picked.sort_unstable();
                picked
            }
            _ => block.range().collect(),
        };
        let results: Vec<Option<(f64, usize)>> = coords
            .par_iter()
            .map(|&i| -> Result<Option<(f64, usize)>, NnError> {
                let mut probe = params.values().to_vec();
                let original = probe[i];
                probe[i] = original + config.step;
                let (up, up_pattern) = model.loss_with_pattern(&probe, batch, config.mask_seed)?;
                probe[i] = original - config.step;
                let (down, down_pattern) = model.loss_with_pattern(&probe, batch, config.mask_seed)?;
                if up_pattern != base_pattern || down_pattern != base_pattern {
                    return Ok(None);
                }
                let numeric = (up - down) / (2.0 * config.step);
                let floor = config
                    .floor
                    .max(fd_resolution(up, down, config.step) / config.tolerance);
                Ok(Some((relative_error(analytic.values()[i], numeric, floor), i)))
            })
            .collect::<Result<_, _>>()?;
        let skipped = results.iter().filter(|r| r.is_none()).count();
        let (worst, worst_index) =
            results
                .iter()
                .flatten()
                .fold((0.0, block.offset), |acc, &(e, i)| if e > acc.0 { (e, i) } else { acc });
        let checked = results.len() - skipped;
        blocks.push(BlockReport {
            name: block.name.clone(),
            checked,
            skipped_kinks: skipped,
            worst_rel_error: worst,
            worst_index,
            passed: checked > 0 && worst < config.tolerance,
        });
    }
    Ok(GradcheckReport {
        loss,
        tolerance: config.tolerance,
        blocks,
    })
}
