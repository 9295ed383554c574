//! Central finite-difference gradient checks.

use rand::Rng;

use crate::data::Batch;
use crate::error::Result;
use crate::model::LayeredModel;
use crate::rng::rng_from_seed;
use crate::tensor::ParamSet;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so that coordinates with a
/// vanishing gradient are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub tensor: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.coords.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compare the full backward pass against central differences on `n_coords`
/// coordinates drawn uniformly (with replacement) over all parameters.
pub fn check_gradients(
    model: &LayeredModel,
    params: &ParamSet,
    batch: &Batch,
    n_coords: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let grads = model.full_gradient(params, batch)?;
    let total = params.num_params();
    let mut rng = rng_from_seed(seed);
    let mut probe = params.clone();
    let mut coords = Vec::with_capacity(n_coords);
    for _ in 0..n_coords {
        let mut flat = rng.random_range(0..total);
        let mut k = 0;
        while flat >= params.tensor(k).numel() {
            flat -= params.tensor(k).numel();
            k += 1;
        }
        let orig = params.tensor(k).data()[flat];
        probe.tensor_mut(k).data_mut()[flat] = orig + step;
        let plus = model.forward(&probe, batch)?;
        probe.tensor_mut(k).data_mut()[flat] = orig - step;
        let minus = model.forward(&probe, batch)?;
        probe.tensor_mut(k).data_mut()[flat] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads.by_index(k).expect("full gradient covers every tensor")[flat];
        coords.push(CoordCheck {
            tensor: params.tensor(k).name().to_string(),
            offset: flat,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    Ok(GradCheckReport { coords })
}
