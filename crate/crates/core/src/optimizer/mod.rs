//! The hybrid optimizer and its baselines.
//!
//! One Hi-ZFO step runs a clean forward/backward over the FO tensors, shifts
//! the ZO tensors by `eps * u` (with `u` drawn from a per-step seed), runs a
//! second forward/backward at the shifted point, undoes the shift by
//! regenerating `u`, and then applies
//!
//! * an FO update with the gradient of `L_FO + alpha * L_ZO`, and
//! * a ZO update `theta_zo -= eta_zo * (L_ZO - L_FO) / eps * u`.

mod fo_rule;
pub mod perturb;
mod train;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use fo_rule::FoRule;
use fo_rule::{AdamParams, FoState};
pub use perturb::{add_scaled_noise, restore_deviation_ulps, step_seed, ulp, NoiseMode};
pub use train::{train, EvalPoint, MemoryProxy, RunReport};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::LayeredModel;
use crate::tensor::{ParamSet, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Hizfo,
    FullFo,
    FrozenSubset,
    Mezo,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Hizfo => "hizfo",
            Algorithm::FullFo => "full_fo",
            Algorithm::FrozenSubset => "frozen_subset",
            Algorithm::Mezo => "mezo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hizfo" => Ok(Algorithm::Hizfo),
            "full_fo" => Ok(Algorithm::FullFo),
            "frozen_subset" => Ok(Algorithm::FrozenSubset),
            "mezo" => Ok(Algorithm::Mezo),
            other => Err(Error::config(format!("unknown algorithm {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub eta_fo: f64,
    pub eta_zo: f64,
    pub eps: f64,
    pub alpha: f64,
    pub master_seed: u64,
    pub fo_rule: FoRule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub max_steps: usize,
    /// Evaluate the held-out loss every this many steps (0: only at the end).
    pub eval_interval: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta_fo: 2e-5,
            eta_zo: 2e-6,
            eps: 1e-3,
            alpha: 0.1,
            master_seed: 0,
            fo_rule: FoRule::Sgd,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            max_steps: 100,
            eval_interval: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.eta_fo) || !pos(self.eta_zo) {
            return Err(Error::config("learning rates must be positive and finite"));
        }
        if !pos(self.eps) {
            return Err(Error::config("perturbation scale eps must be positive"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !pos(self.adam_eps) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("Adam eps must be positive and weight decay non-negative"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamParams {
        AdamParams { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps, weight_decay: self.weight_decay }
    }
}

/// Per-step measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss_fo: f64,
    pub loss_zo: f64,
    pub loss_total: f64,
    pub fo_grad_norm: f64,
    pub zo_est_norm: f64,
    pub backward_flops: u64,
    pub forward_flops: u64,
    pub wall_ns: u64,
    /// Scalar finite-difference coefficient multiplying `u` in the ZO update.
    pub zo_projected_grad: f64,
    /// Largest post-restore deviation in ulps (only measured when audited).
    pub restore_max_ulp: f64,
}

pub const STEP_CSV_HEADER: &str = "step,L_FO,L_ZO,L_total,fo_grad_norm,zo_est_norm,bwd_flops,fwd_flops,wall_ns";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            self.step,
            self.loss_fo,
            self.loss_zo,
            self.loss_total,
            self.fo_grad_norm,
            self.zo_est_norm,
            self.backward_flops,
            self.forward_flops,
            self.wall_ns
        )
    }
}

pub fn records_to_csv(records: &[StepRecord]) -> String {
    let mut s = String::from(STEP_CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Test hooks on the perturbation path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepHooks {
    pub noise: NoiseMode,
    /// Fault injection: restore by adding the perturbation a second time.
    pub negate_on_restore: bool,
    /// Measure the restore residue of every step (costs two copies of the
    /// ZO coordinates).
    pub audit_restore: bool,
}

#[derive(Debug, Clone)]
pub struct HybridOptimizer {
    cfg: OptimizerConfig,
    hooks: StepHooks,
    state: FoState,
}

fn diverged(step: u64, e: Error) -> Error {
    match e {
        Error::NumericOverflow { layer } => {
            Error::Diverged { step, reason: format!("non-finite value at layer {layer}") }
        }
        other => other,
    }
}

impl HybridOptimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, hooks: StepHooks::default(), state: FoState::new(0) })
    }

    pub fn with_hooks(mut self, hooks: StepHooks) -> Self {
        self.hooks = hooks;
        self
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn hooks(&self) -> StepHooks {
        self.hooks
    }

    /// Number of scalars held as first-order optimizer state.
    pub fn state_len(&self) -> usize {
        self.state.len()
    }

    fn apply_fo(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>]) {
        if self.state.slots() != params.len() {
            self.state = FoState::new(params.len());
        }
        self.state.begin_step();
        let adam = self.cfg.adam();
        for (k, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                self.state.apply(self.cfg.fo_rule, k, self.cfg.eta_fo, adam, params.tensor_mut(k).data_mut(), g);
            }
        }
    }

    fn noise_seed(&self, step: u64) -> u64 {
        step_seed(self.cfg.master_seed, step)
    }

    /// One Hi-ZFO step over the current roles.
    pub fn hizfo_step(&mut self, model: &LayeredModel, params: &mut ParamSet, batch: &Batch, step: u64) -> Result<StepRecord> {
        let start = Instant::now();
        let fo_mask = params.role_mask(Role::Fo);
        let zo_mask = params.role_mask(Role::Zo);
        let has_fo = fo_mask.iter().any(|&m| m);
        let eps = self.cfg.eps;
        let alpha = self.cfg.alpha;
        let noise = self.hooks.noise;
        let seed = self.noise_seed(step);

        // (1) clean stream
        let clean = model.forward_tape(params, batch).map_err(|e| diverged(step, e))?;
        let loss_fo = clean.loss();
        let mut backward_flops = 0;
        let mut fo_grads = vec![None; params.len()];
        if has_fo {
            let g = model.backward(params, &clean, &fo_mask)?;
            backward_flops += g.backward_flops();
            fo_grads = g.into_indexed();
        }
        drop(clean);

        // (2) shift the ZO tensors
        let before = self.hooks.audit_restore.then(|| perturb::gather(params, &zo_mask));
        let u_norm_sq = add_scaled_noise(params, &zo_mask, seed, eps, noise);
        let perturbed = self.hooks.audit_restore.then(|| perturb::gather(params, &zo_mask));

        // (3) perturbed stream; its FO gradient must be taken at the shifted point
        let pert = model.forward_tape(params, batch);
        let pert_result = pert.and_then(|tape| {
            let loss_zo = tape.loss();
            let grads = if has_fo && alpha > 0.0 { Some(model.backward(params, &tape, &fo_mask)?) } else { None };
            Ok((loss_zo, grads))
        });

        // (4) restore by regenerating u
        let restore_scale = if self.hooks.negate_on_restore { eps } else { -eps };
        add_scaled_noise(params, &zo_mask, seed, restore_scale, noise);
        let restore_max_ulp = match (before, perturbed) {
            (Some(b), Some(p)) => restore_deviation_ulps(&b, &p, &perturb::gather(params, &zo_mask)),
            _ => 0.0,
        };
        let (loss_zo, pert_grads) = pert_result.map_err(|e| diverged(step, e))?;
        if !loss_zo.is_finite() {
            return Err(Error::Diverged { step, reason: "non-finite perturbed loss".into() });
        }

        // (5) FO update on grad(L_FO + alpha * L_ZO)
        if let Some(pg) = pert_grads {
            backward_flops += pg.backward_flops();
            for (acc, g) in fo_grads.iter_mut().zip(pg.into_indexed()) {
                if let (Some(acc), Some(g)) = (acc.as_mut(), g) {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += alpha * b;
                    }
                }
            }
        }
        let fo_grad_norm = grad_norm(&fo_grads);
        if has_fo {
            self.apply_fo(params, &fo_grads);
        }

        // (6) ZO update
        let projected = (loss_zo - loss_fo) / eps;
        add_scaled_noise(params, &zo_mask, seed, -self.cfg.eta_zo * projected, noise);

        Ok(StepRecord {
            step,
            loss_fo,
            loss_zo,
            loss_total: loss_fo + alpha * loss_zo,
            fo_grad_norm,
            zo_est_norm: projected.abs() * u_norm_sq.sqrt(),
            backward_flops,
            forward_flops: 2 * model.flops_profile(batch.size).forward_flops(),
            wall_ns: start.elapsed().as_nanos() as u64,
            zo_projected_grad: projected,
            restore_max_ulp,
        })
    }

    /// Backprop and FO update on the tensors selected by `mask`.
    fn fo_only_step(&mut self, model: &LayeredModel, params: &mut ParamSet, batch: &Batch, step: u64, mask: &[bool]) -> Result<StepRecord> {
        let start = Instant::now();
        let tape = model.forward_tape(params, batch).map_err(|e| diverged(step, e))?;
        let loss = tape.loss();
        let grads = model.backward(params, &tape, mask)?;
        let backward_flops = grads.backward_flops();
        let grads = grads.into_indexed();
        let fo_grad_norm = grad_norm(&grads);
        if !fo_grad_norm.is_finite() {
            return Err(Error::Diverged { step, reason: "non-finite gradient".into() });
        }
        self.apply_fo(params, &grads);
        Ok(StepRecord {
            step,
            loss_fo: loss,
            loss_zo: 0.0,
            loss_total: loss,
            fo_grad_norm,
            zo_est_norm: 0.0,
            backward_flops,
            forward_flops: tape.forward_flops(),
            wall_ns: start.elapsed().as_nanos() as u64,
            zo_projected_grad: 0.0,
            restore_max_ulp: 0.0,
        })
    }

    /// Full backprop and FO update on every tensor, whatever its role.
    pub fn full_fo_step(&mut self, model: &LayeredModel, params: &mut ParamSet, batch: &Batch, step: u64) -> Result<StepRecord> {
        let mask = vec![true; params.len()];
        self.fo_only_step(model, params, batch, step, &mask)
    }

    /// FO update on the FO-role tensors; everything else stays fixed.
    pub fn frozen_subset_step(&mut self, model: &LayeredModel, params: &mut ParamSet, batch: &Batch, step: u64) -> Result<StepRecord> {
        let mask = params.role_mask(Role::Fo);
        self.fo_only_step(model, params, batch, step, &mask)
    }

    /// Central-difference ZO step over every tensor:
    /// `g = (L(theta + eps u) - L(theta - eps u)) / (2 eps) * u`.
    /// The record stores the mean of the two probe losses as `loss_fo`.
    pub fn mezo_step(&mut self, model: &LayeredModel, params: &mut ParamSet, batch: &Batch, step: u64) -> Result<StepRecord> {
        let start = Instant::now();
        let mask = vec![true; params.len()];
        let eps = self.cfg.eps;
        let noise = self.hooks.noise;
        let seed = self.noise_seed(step);
        let before = self.hooks.audit_restore.then(|| perturb::gather(params, &mask));

        let u_norm_sq = add_scaled_noise(params, &mask, seed, eps, noise);
        let plus = model.forward(params, batch);
        add_scaled_noise(params, &mask, seed, -2.0 * eps, noise);
        let minus = model.forward(params, batch);
        let perturbed = self.hooks.audit_restore.then(|| perturb::gather(params, &mask));
        let restore_scale = if self.hooks.negate_on_restore { -eps } else { eps };
        add_scaled_noise(params, &mask, seed, restore_scale, noise);
        let restore_max_ulp = match (before, perturbed) {
            (Some(b), Some(p)) => restore_deviation_ulps(&b, &p, &perturb::gather(params, &mask)),
            _ => 0.0,
        };
        let plus = plus.map_err(|e| diverged(step, e))?;
        let minus = minus.map_err(|e| diverged(step, e))?;

        let projected = (plus - minus) / (2.0 * eps);
        if !projected.is_finite() {
            return Err(Error::Diverged { step, reason: "non-finite finite difference".into() });
        }
        add_scaled_noise(params, &mask, seed, -self.cfg.eta_zo * projected, noise);
        let loss = 0.5 * (plus + minus);
        Ok(StepRecord {
            step,
            loss_fo: loss,
            loss_zo: 0.0,
            loss_total: loss,
            fo_grad_norm: 0.0,
            zo_est_norm: projected.abs() * u_norm_sq.sqrt(),
            backward_flops: 0,
            forward_flops: 2 * model.flops_profile(batch.size).forward_flops(),
            wall_ns: start.elapsed().as_nanos() as u64,
            zo_projected_grad: projected,
            restore_max_ulp,
        })
    }

    pub fn step(&mut self, algorithm: Algorithm, model: &LayeredModel, params: &mut ParamSet, batch: &Batch, step: u64) -> Result<StepRecord> {
        match algorithm {
            Algorithm::Hizfo => self.hizfo_step(model, params, batch, step),
            Algorithm::FullFo => self.full_fo_step(model, params, batch, step),
            Algorithm::FrozenSubset => self.frozen_subset_step(model, params, batch, step),
            Algorithm::Mezo => self.mezo_step(model, params, batch, step),
        }
    }
}

fn grad_norm(grads: &[Option<Vec<f64>>]) -> f64 {
    grads.iter().flatten().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests;
