//! Seeded in-place perturbation of a tensor subset.
//!
//! The noise vector is never stored: it is regenerated from the step seed
//! whenever it is needed again (restore, update).

use crate::rng::{derive_seed, stream_seed, GaussianStream, Stream};
use crate::tensor::ParamSet;

/// Source of the probe direction `u`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NoiseMode {
    /// `u ~ N(0, I)` from the step seed.
    #[default]
    Gaussian,
    /// `u = 0` (test hook).
    Zero,
    /// Every coordinate of `u` equals the constant (test hook).
    Constant(f64),
}

/// Seed of the probe direction for one step.
pub fn step_seed(master_seed: u64, step: u64) -> u64 {
    derive_seed(stream_seed(master_seed, Stream::StepNoise), step)
}

/// `theta[mask] += scale * u`, where `u` is generated from `seed`.
/// Returns `|u|^2` over the masked coordinates.
pub fn add_scaled_noise(params: &mut ParamSet, mask: &[bool], seed: u64, scale: f64, mode: NoiseMode) -> f64 {
    let mut stream = GaussianStream::new(seed);
    let mut norm_sq = 0.0;
    for (k, t) in params.iter_mut().enumerate() {
        if !mask[k] {
            continue;
        }
        for w in t.data_mut() {
            let u = match mode {
                NoiseMode::Gaussian => stream.next(),
                NoiseMode::Zero => 0.0,
                NoiseMode::Constant(c) => c,
            };
            *w += scale * u;
            norm_sq += u * u;
        }
    }
    norm_sq
}

/// Size of one unit in the last place at the magnitude of `x`.
pub fn ulp(x: f64) -> f64 {
    let a = x.abs();
    if a == 0.0 {
        f64::from_bits(1)
    } else if a.is_finite() {
        f64::from_bits(a.to_bits() + 1) - a
    } else {
        f64::NAN
    }
}

/// Largest restore residue in ulps. Each coordinate is judged at the
/// magnitude of the larger operand of the add/subtract pair, since that is
/// where the rounding of `(theta + e) - e` happens.
pub fn restore_deviation_ulps(before: &[f64], perturbed: &[f64], after: &[f64]) -> f64 {
    before
        .iter()
        .zip(perturbed)
        .zip(after)
        .map(|((b, p), a)| {
            let diff = (a - b).abs();
            if diff == 0.0 {
                0.0
            } else {
                diff / ulp(b.abs().max(p.abs()))
            }
        })
        .fold(0.0, f64::max)
}

/// Copy of the masked coordinates in canonical order.
pub(crate) fn gather(params: &ParamSet, mask: &[bool]) -> Vec<f64> {
    params
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .flat_map(|(t, _)| t.data().iter().copied())
        .collect()
}
