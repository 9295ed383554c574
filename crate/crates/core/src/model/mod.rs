//! The model zoo: layered differentiable objectives with truncated backward.
//!
//! Layers are indexed from the output (layer 0 is output-nearest) and the
//! tensors of a [`ParamSet`] follow that order. A backward pass over an
//! active tensor set only walks down to the deepest active tensor.

mod analytic;
mod attention;
mod mlp;

use serde::{Deserialize, Serialize};

use crate::cost::{CostModel, TensorCost};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, ParamTensor};

pub use analytic::{QuadraticBlock, RosenbrockSpec};
pub use attention::TinyLmSpec;
pub use mlp::MlpSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Quadratic,
    Rosenbrock,
    Mlp,
    TinyAttentionLm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Mse,
    CrossEntropy,
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub tensors: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
enum Arch {
    Quadratic(Vec<QuadraticBlock>),
    Rosenbrock(RosenbrockSpec),
    Mlp(MlpSpec),
    TinyLm(TinyLmSpec),
}

/// Architecture description. Parameters live separately in a [`ParamSet`],
/// so one model can be shared read-only across many runs.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredModel {
    arch: Arch,
    layers: Vec<LayerSpec>,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    loss: f64,
    forward_flops: u64,
    batch_size: usize,
    inner: TapeInner,
}

#[derive(Debug, Clone)]
enum TapeInner {
    Analytic,
    Mlp(mlp::MlpTape),
    TinyLm(Box<attention::LmTape>),
}

impl Tape {
    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn forward_flops(&self) -> u64 {
        self.forward_flops
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }
}

/// Weight gradients of a (possibly truncated) backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    names: Vec<String>,
    grads: Vec<Option<Vec<f64>>>,
    backward_flops: u64,
}

impl Gradients {
    fn empty(names: Vec<String>) -> Self {
        let n = names.len();
        Self { names, grads: vec![None; n], backward_flops: 0 }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        let i = self.names.iter().position(|n| n == name)?;
        self.grads[i].as_deref()
    }

    pub fn by_index(&self, idx: usize) -> Option<&[f64]> {
        self.grads[idx].as_deref()
    }

    /// Number of tensors that received a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn backward_flops(&self) -> u64 {
        self.backward_flops
    }

    /// `(name, gradient)` pairs for tensors that received a gradient.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .zip(&self.grads)
            .filter_map(|(n, g)| g.as_deref().map(|g| (n.as_str(), g)))
    }

    pub fn into_indexed(self) -> Vec<Option<Vec<f64>>> {
        self.grads
    }

    /// Squared L2 norm over all present gradients.
    pub fn norm_sq(&self) -> f64 {
        self.grads.iter().flatten().flat_map(|g| g.iter()).map(|v| v * v).sum()
    }
}

impl LayeredModel {
    fn from_arch(arch: Arch) -> Self {
        let layers = match &arch {
            Arch::Quadratic(blocks) => analytic::quadratic_layers(blocks),
            Arch::Rosenbrock(_) => analytic::rosenbrock_layers(),
            Arch::Mlp(spec) => spec.layers(),
            Arch::TinyLm(spec) => spec.layers(),
        };
        Self { arch, layers }
    }

    /// `L = 1/2 * sum_k sum_i c_ki (theta_ki - target_ki)^2`, one layer per block.
    pub fn quadratic(blocks: Vec<QuadraticBlock>) -> Result<Self> {
        analytic::validate_blocks(&blocks)?;
        Ok(Self::from_arch(Arch::Quadratic(blocks)))
    }

    /// Single tensor `theta` of length `dim`, unit curvature, minimum at zero.
    pub fn isotropic_quadratic(dim: usize) -> Result<Self> {
        Self::quadratic(vec![QuadraticBlock::isotropic("theta", dim)])
    }

    pub fn rosenbrock(spec: RosenbrockSpec) -> Result<Self> {
        Ok(Self::from_arch(Arch::Rosenbrock(spec)))
    }

    pub fn mlp(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self::from_arch(Arch::Mlp(spec)))
    }

    pub fn tiny_lm(spec: TinyLmSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self::from_arch(Arch::TinyLm(spec)))
    }

    pub fn kind(&self) -> ModelKind {
        match self.arch {
            Arch::Quadratic(_) => ModelKind::Quadratic,
            Arch::Rosenbrock(_) => ModelKind::Rosenbrock,
            Arch::Mlp(_) => ModelKind::Mlp,
            Arch::TinyLm(_) => ModelKind::TinyAttentionLm,
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match &self.arch {
            Arch::Quadratic(_) | Arch::Rosenbrock(_) => LossKind::Analytic,
            Arch::Mlp(spec) => spec.loss,
            Arch::TinyLm(_) => LossKind::CrossEntropy,
        }
    }

    /// Layers, output-nearest first.
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Tensor specs in canonical order with their layer index.
    pub fn tensor_specs(&self) -> impl Iterator<Item = (usize, &TensorSpec)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(li, l)| l.tensors.iter().map(move |t| (li, t)))
    }

    pub fn num_tensors(&self) -> usize {
        self.layers.iter().map(|l| l.tensors.len()).sum()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.tensor_specs().map(|(_, t)| t.name.clone()).collect()
    }

    /// Whether the loss ignores the batch.
    pub fn is_analytic(&self) -> bool {
        self.loss_kind() == LossKind::Analytic
    }

    /// Seeded initial parameters. All roles start as FO.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let data: Vec<Vec<f64>> = match &self.arch {
            Arch::Quadratic(blocks) => analytic::quadratic_init(blocks, seed),
            Arch::Rosenbrock(spec) => vec![vec![spec.init.0], vec![spec.init.1]],
            Arch::Mlp(spec) => spec.init(seed),
            Arch::TinyLm(spec) => spec.init(seed),
        };
        let tensors = self
            .tensor_specs()
            .zip(data)
            .map(|((li, spec), values)| {
                ParamTensor::new(spec.name.clone(), spec.shape.clone(), values, li)
                    .expect("init matches declared shape")
            })
            .collect();
        ParamSet::new(tensors).expect("declared names are unique")
    }

    /// Check that `params` carries exactly this model's tensors.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.len() != self.num_tensors() {
            return Err(Error::config(format!(
                "model declares {} tensors, parameter set has {}",
                self.num_tensors(),
                params.len()
            )));
        }
        for ((li, spec), t) in self.tensor_specs().zip(params.iter()) {
            if spec.name != t.name() || spec.shape != t.shape() || li != t.layer_index() {
                return Err(Error::config(format!(
                    "parameter {} {:?} (layer {}) does not match declared {} {:?} (layer {li})",
                    t.name(),
                    t.shape(),
                    t.layer_index(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Rows the cost model should be evaluated at for this batch.
    fn cost_rows(&self, batch: &Batch) -> usize {
        if self.is_analytic() {
            1
        } else {
            batch.size
        }
    }

    /// FLOPs profile for batches of `batch_size` rows.
    pub fn flops_profile(&self, batch_size: usize) -> CostModel {
        let raw: Vec<(u64, u64, u64)> = match &self.arch {
            Arch::Quadratic(blocks) => analytic::quadratic_costs(blocks),
            Arch::Rosenbrock(_) => analytic::rosenbrock_costs(),
            Arch::Mlp(spec) => spec.costs(batch_size as u64),
            Arch::TinyLm(spec) => spec.costs(batch_size as u64),
        };
        let tensors = self
            .tensor_specs()
            .zip(raw)
            .map(|((li, spec), (t_fwd, t_dw, t_dy))| TensorCost {
                name: spec.name.clone(),
                layer_index: li,
                t_fwd,
                t_dw,
                t_dy,
            })
            .collect();
        let batch_size = if self.is_analytic() { 1 } else { batch_size };
        CostModel { batch_size, tensors }
    }

    /// Loss only.
    pub fn forward(&self, params: &ParamSet, batch: &Batch) -> Result<f64> {
        Ok(self.forward_tape(params, batch)?.loss)
    }

    /// Forward pass retaining the activations needed for backward.
    pub fn forward_tape(&self, params: &ParamSet, batch: &Batch) -> Result<Tape> {
        self.check_params(params)?;
        let (loss, inner) = match &self.arch {
            Arch::Quadratic(blocks) => (analytic::quadratic_loss(blocks, params)?, TapeInner::Analytic),
            Arch::Rosenbrock(spec) => (analytic::rosenbrock_loss(spec, params)?, TapeInner::Analytic),
            Arch::Mlp(spec) => {
                let tape = spec.forward(params, batch)?;
                (tape.loss, TapeInner::Mlp(tape))
            }
            Arch::TinyLm(spec) => {
                let tape = spec.forward(params, batch)?;
                (tape.loss, TapeInner::TinyLm(Box::new(tape)))
            }
        };
        let rows = self.cost_rows(batch);
        Ok(Tape {
            loss,
            forward_flops: self.flops_profile(rows).forward_flops(),
            batch_size: rows,
            inner,
        })
    }

    /// Backward from a retained tape, computing weight gradients only for
    /// `active` (mask over canonical tensor indices).
    pub fn backward(&self, params: &ParamSet, tape: &Tape, active: &[bool]) -> Result<Gradients> {
        self.check_params(params)?;
        if active.len() != params.len() {
            return Err(Error::config("active mask length does not match the model"));
        }
        let mut out = Gradients::empty(params.names());
        if !active.iter().any(|&a| a) {
            return Ok(out);
        }
        match (&self.arch, &tape.inner) {
            (Arch::Quadratic(blocks), TapeInner::Analytic) => {
                analytic::quadratic_backward(blocks, params, active, &mut out.grads)
            }
            (Arch::Rosenbrock(spec), TapeInner::Analytic) => {
                analytic::rosenbrock_backward(spec, params, active, &mut out.grads)
            }
            (Arch::Mlp(spec), TapeInner::Mlp(t)) => {
                spec.backward(params, t, active, &mut out.grads, &mut mlp::OpCount::default())
            }
            (Arch::TinyLm(spec), TapeInner::TinyLm(t)) => spec.backward(params, t, active, &mut out.grads),
            _ => return Err(Error::config("tape was produced by a different model")),
        }
        out.backward_flops = self.flops_profile(tape.batch_size).backward_flops(active);
        Ok(out)
    }

    /// Mask over canonical indices for the named tensors.
    pub fn active_mask<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<bool>> {
        let all = self.tensor_names();
        let mut mask = vec![false; all.len()];
        for n in names {
            let i = all
                .iter()
                .position(|a| a == n.as_ref())
                .ok_or_else(|| Error::config(format!("unknown tensor {}", n.as_ref())))?;
            mask[i] = true;
        }
        Ok(mask)
    }

    /// Forward + truncated backward for the named tensors.
    pub fn backward_truncated<S: AsRef<str>>(
        &self,
        params: &ParamSet,
        batch: &Batch,
        active: &[S],
    ) -> Result<Gradients> {
        let mask = self.active_mask(active)?;
        if !mask.iter().any(|&a| a) {
            self.check_params(params)?;
            return Ok(Gradients::empty(params.names()));
        }
        let tape = self.forward_tape(params, batch)?;
        self.backward(params, &tape, &mask)
    }

    /// Gradients of every tensor.
    pub fn full_gradient(&self, params: &ParamSet, batch: &Batch) -> Result<Gradients> {
        let tape = self.forward_tape(params, batch)?;
        self.backward(params, &tape, &vec![true; params.len()])
    }

    /// Backward multiply-add count of the MLP, instrumented at the loops.
    /// Returns `None` for other model kinds.
    pub fn counted_backward_flops(
        &self,
        params: &ParamSet,
        batch: &Batch,
        active: &[bool],
    ) -> Result<Option<u64>> {
        let Arch::Mlp(spec) = &self.arch else { return Ok(None) };
        let tape = spec.forward(params, batch)?;
        let mut grads = vec![None; params.len()];
        let mut count = mlp::OpCount::default();
        if active.iter().any(|&a| a) {
            spec.backward(params, &tape, active, &mut grads, &mut count);
        }
        Ok(Some(count.flops))
    }
}

/// Index of the deepest (largest canonical index) active tensor.
pub(crate) fn deepest(active: &[bool]) -> Option<usize> {
    active.iter().rposition(|&a| a)
}

pub(crate) fn check_finite(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow { layer })
    }
}
