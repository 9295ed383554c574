//! Closed-form objectives: separable quadratics and the Rosenbrock valley.

use rand::Rng;

use super::{check_finite, LayerSpec, TensorSpec};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, stream_seed, Stream};
use crate::tensor::ParamSet;

/// One tensor of a separable quadratic with diagonal curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBlock {
    pub name: String,
    pub curvature: Vec<f64>,
    pub target: Vec<f64>,
    /// Fixed starting point; seeded `U(-1, 1)` when absent.
    pub init: Option<Vec<f64>>,
}

impl QuadraticBlock {
    pub fn isotropic(name: &str, dim: usize) -> Self {
        Self::uniform(name, dim, 1.0)
    }

    pub fn uniform(name: &str, dim: usize, curvature: f64) -> Self {
        Self {
            name: name.to_string(),
            curvature: vec![curvature; dim],
            target: vec![0.0; dim],
            init: None,
        }
    }

    pub fn with_init(mut self, init: Vec<f64>) -> Self {
        self.init = Some(init);
        self
    }

    pub fn with_target(mut self, target: Vec<f64>) -> Self {
        self.target = target;
        self
    }

    pub fn dim(&self) -> usize {
        self.curvature.len()
    }
}

pub(super) fn validate_blocks(blocks: &[QuadraticBlock]) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::config("quadratic needs at least one block"));
    }
    for b in blocks {
        if b.dim() == 0 || b.target.len() != b.dim() {
            return Err(Error::config(format!("quadratic block {}: bad dimensions", b.name)));
        }
        if let Some(init) = &b.init {
            if init.len() != b.dim() {
                return Err(Error::config(format!("quadratic block {}: init length", b.name)));
            }
        }
        if b.curvature.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::config(format!("quadratic block {}: curvature must be >= 0", b.name)));
        }
    }
    Ok(())
}

pub(super) fn quadratic_layers(blocks: &[QuadraticBlock]) -> Vec<LayerSpec> {
    blocks
        .iter()
        .map(|b| LayerSpec {
            name: b.name.clone(),
            tensors: vec![TensorSpec { name: b.name.clone(), shape: vec![b.dim()] }],
        })
        .collect()
}

pub(super) fn quadratic_init(blocks: &[QuadraticBlock], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(stream_seed(seed, Stream::Init));
    blocks
        .iter()
        .map(|b| match &b.init {
            Some(v) => v.clone(),
            None => (0..b.dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

/// `(t_fwd, t_dw, t_dy)` per tensor: three FLOPs per coordinate forward,
/// one per coordinate for the gradient, nothing to propagate.
pub(super) fn quadratic_costs(blocks: &[QuadraticBlock]) -> Vec<(u64, u64, u64)> {
    blocks.iter().map(|b| (3 * b.dim() as u64, b.dim() as u64, 0)).collect()
}

pub(super) fn quadratic_loss(blocks: &[QuadraticBlock], params: &ParamSet) -> Result<f64> {
    let mut loss = 0.0;
    for (k, b) in blocks.iter().enumerate() {
        let theta = params.tensor(k).data();
        let part: f64 = theta
            .iter()
            .zip(&b.target)
            .zip(&b.curvature)
            .map(|((x, t), c)| 0.5 * c * (x - t) * (x - t))
            .sum();
        check_finite(&[part], k)?;
        loss += part;
    }
    Ok(loss)
}

pub(super) fn quadratic_backward(
    blocks: &[QuadraticBlock],
    params: &ParamSet,
    active: &[bool],
    out: &mut [Option<Vec<f64>>],
) {
    for (k, b) in blocks.iter().enumerate() {
        if !active[k] {
            continue;
        }
        let theta = params.tensor(k).data();
        out[k] = Some(
            theta
                .iter()
                .zip(&b.target)
                .zip(&b.curvature)
                .map(|((x, t), c)| c * (x - t))
                .collect(),
        );
    }
}

/// `(a - x)^2 + b (y - x^2)^2` with scalar tensors `x` (layer 0) and `y` (layer 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosenbrockSpec {
    pub a: f64,
    pub b: f64,
    pub init: (f64, f64),
}

impl Default for RosenbrockSpec {
    fn default() -> Self {
        Self { a: 1.0, b: 100.0, init: (-1.2, 1.0) }
    }
}

pub(super) fn rosenbrock_layers() -> Vec<LayerSpec> {
    ["x", "y"]
        .iter()
        .map(|n| LayerSpec {
            name: n.to_string(),
            tensors: vec![TensorSpec { name: n.to_string(), shape: vec![1] }],
        })
        .collect()
}

pub(super) fn rosenbrock_costs() -> Vec<(u64, u64, u64)> {
    vec![(3, 1, 0), (4, 1, 0)]
}

pub(super) fn rosenbrock_loss(spec: &RosenbrockSpec, params: &ParamSet) -> Result<f64> {
    let x = params.tensor(0).data()[0];
    let y = params.tensor(1).data()[0];
    let first = (spec.a - x) * (spec.a - x);
    check_finite(&[first], 0)?;
    let r = y - x * x;
    let second = spec.b * r * r;
    check_finite(&[second], 1)?;
    let loss = first + second;
    check_finite(&[loss], 0)?;
    Ok(loss)
}

pub(super) fn rosenbrock_backward(
    spec: &RosenbrockSpec,
    params: &ParamSet,
    active: &[bool],
    out: &mut [Option<Vec<f64>>],
) {
    let x = params.tensor(0).data()[0];
    let y = params.tensor(1).data()[0];
    let r = y - x * x;
    if active[0] {
        out[0] = Some(vec![-2.0 * (spec.a - x) - 4.0 * spec.b * x * r]);
    }
    if active[1] {
        out[1] = Some(vec![2.0 * spec.b * r]);
    }
}
