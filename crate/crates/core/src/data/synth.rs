//! Fingerprint-like synthetic subjects: each subject is the sum of two
//! oriented sinusoid gratings, and every impression re-renders that pattern
//! under a small rigid jitter, contrast change and additive noise.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Subject};
use crate::nn::Tensor;
use crate::rng::{stream, tag};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_subjects: usize,
    pub impressions_per_subject: usize,
    pub image_size: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise_level: f64,
    /// Maximum rotation jitter in degrees.
    pub max_rotation_deg: f64,
    /// Maximum translation jitter as a fraction of the image side.
    pub max_shift: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_subjects: 100,
            impressions_per_subject: 8,
            image_size: 128,
            noise_level: 0.05,
            max_rotation_deg: 8.0,
            max_shift: 0.06,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Grating {
    cos: f64,
    sin: f64,
    freq: f64,
    phase: f64,
}

impl Grating {
    fn eval(&self, u: f64, v: f64) -> f64 {
        (2.0 * PI * self.freq * (u * self.cos + v * self.sin) + self.phase).sin()
    }
}

/// Subjects get ids `1..=num_subjects`.
pub fn synth_generate<T: Scalar>(config: &SynthConfig, seed: u64) -> Result<Vec<Subject<T>>, DataError> {
    if config.num_subjects < 2 || config.impressions_per_subject < 2 || config.image_size < 4 {
        return Err(DataError::InvalidArgument(format!(
            "synthetic corpus needs >=2 subjects, >=2 impressions and image side >=4 (got {}, {}, {})",
            config.num_subjects, config.impressions_per_subject, config.image_size
        )));
    }
    if !(config.noise_level >= 0.0) {
        return Err(DataError::InvalidArgument("noise_level must be non-negative".into()));
    }
    let subjects = (0..config.num_subjects)
        .map(|s| {
            let mut rng = stream(seed, &[tag::SYNTH, s as u64]);
            let theta1 = rng.random_range(0.0..PI);
            let theta2 = theta1 + rng.random_range(PI / 4.0..3.0 * PI / 4.0);
            let gratings = [
                Grating {
                    cos: theta1.cos(),
                    sin: theta1.sin(),
                    freq: rng.random_range(1.5..4.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                },
                Grating {
                    cos: theta2.cos(),
                    sin: theta2.sin(),
                    freq: rng.random_range(1.0..3.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                },
            ];
            let impressions = (0..config.impressions_per_subject)
                .map(|_| Arc::new(render(&gratings, config, &mut rng)))
                .collect();
            Subject {
                id: s as u32 + 1,
                impressions,
            }
        })
        .collect();
    Ok(subjects)
}

fn render<T: Scalar, R: Rng>(gratings: &[Grating; 2], config: &SynthConfig, rng: &mut R) -> Tensor<T> {
    let n = config.image_size;
    let rot = rng.random_range(-1.0..=1.0) * config.max_rotation_deg.to_radians();
    let (rc, rs) = (rot.cos(), rot.sin());
    let tx = rng.random_range(-1.0..=1.0) * config.max_shift;
    let ty = rng.random_range(-1.0..=1.0) * config.max_shift;
    let contrast = rng.random_range(0.8..1.2);
    let brightness = rng.random_range(-0.05..0.05);
    Tensor::from_fn(vec![n, n], |i| {
        let (y, x) = (i / n, i % n);
        let u = (x as f64 + 0.5) / n as f64 - 0.5 - tx;
        let v = (y as f64 + 0.5) / n as f64 - 0.5 - ty;
        let (ru, rv) = (rc * u + rs * v, -rs * u + rc * v);
        let base = 0.25 * gratings[0].eval(ru, rv) + 0.25 * gratings[1].eval(ru, rv);
        let noise: f64 = if config.noise_level > 0.0 {
            config.noise_level * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        T::of((0.5 + contrast * base + brightness + noise).clamp(0.0, 1.0))
    })
}
