//! The outer training loop.

use serde::{Deserialize, Serialize};

use super::{Algorithm, HybridOptimizer, OptimizerConfig, StepHooks, StepRecord};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::LayeredModel;
use crate::tensor::{ParamSet, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub loss: f64,
}

/// Desk-scale stand-in for accelerator memory: scalars held in gradient
/// buffers plus scalars of optimizer state. It is a proxy, not a measurement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryProxy {
    pub label: String,
    pub tape_params: usize,
    pub optimizer_state: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: Algorithm,
    pub steps_completed: usize,
    pub diverged: bool,
    pub divergence: Option<String>,
    pub eval: Vec<EvalPoint>,
    pub final_train_loss: Option<f64>,
    pub final_eval_loss: Option<f64>,
    pub total_backward_flops: u64,
    pub total_forward_flops: u64,
    pub t_full: u64,
    pub fo_tensors: Vec<String>,
    pub zo_tensors: Vec<String>,
    pub memory_proxy: MemoryProxy,
    /// Per-step records (written separately as CSV).
    #[serde(skip)]
    pub records: Vec<StepRecord>,
}

impl RunReport {
    /// JSON summary; contains no wall-clock values, so identical runs give
    /// identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Final held-out loss, with divergence counted as infinitely bad.
    pub fn score(&self) -> f64 {
        match (self.diverged, self.final_eval_loss) {
            (false, Some(l)) => l,
            _ => f64::INFINITY,
        }
    }
}

fn names_with(params: &ParamSet, role: Role) -> Vec<String> {
    params.iter().filter(|t| t.role() == role).map(|t| t.name().to_string()).collect()
}

/// Run `cfg.max_steps` steps of `algorithm`, cycling through `train_batches`.
/// Roles must already be assigned (see [`crate::partition::apply_plan`]).
pub fn train(
    model: &LayeredModel,
    params: &mut ParamSet,
    train_batches: &[Batch],
    eval_batch: Option<&Batch>,
    cfg: &OptimizerConfig,
    algorithm: Algorithm,
    hooks: StepHooks,
) -> Result<RunReport> {
    if train_batches.is_empty() {
        return Err(Error::config("training needs at least one batch"));
    }
    model.check_params(params)?;
    let mut opt = HybridOptimizer::new(cfg.clone())?.with_hooks(hooks);
    let mut records = Vec::with_capacity(cfg.max_steps);
    let mut eval = Vec::new();
    let mut divergence = None;

    let evaluate = |params: &ParamSet, step: u64| -> std::result::Result<Option<EvalPoint>, String> {
        match eval_batch {
            None => Ok(None),
            Some(b) => match model.forward(params, b) {
                Ok(loss) => Ok(Some(EvalPoint { step, loss })),
                Err(e) => Err(format!("evaluation at step {step} failed: {e}")),
            },
        }
    };

    for step in 0..cfg.max_steps {
        let batch = &train_batches[step % train_batches.len()];
        match opt.step(algorithm, model, params, batch, step as u64) {
            Ok(r) => records.push(r),
            Err(e @ Error::Diverged { .. }) => {
                divergence = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
        if cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0 && step + 1 < cfg.max_steps {
            match evaluate(params, step as u64 + 1) {
                Ok(p) => eval.extend(p),
                Err(msg) => {
                    divergence = Some(msg);
                    break;
                }
            }
        }
    }

    let mut final_eval_loss = None;
    if divergence.is_none() {
        match evaluate(params, records.len() as u64) {
            Ok(p) => {
                final_eval_loss = p.as_ref().map(|p| p.loss);
                eval.extend(p);
            }
            Err(msg) => divergence = Some(msg),
        }
    }

    let fo_scalars = params.count_role(Role::Fo);
    let tape_params = match algorithm {
        Algorithm::Hizfo if cfg.alpha > 0.0 => 2 * fo_scalars,
        Algorithm::Hizfo | Algorithm::FrozenSubset => fo_scalars,
        Algorithm::FullFo => params.num_params(),
        Algorithm::Mezo => 0,
    };
    let optimizer_state = opt.state_len();
    Ok(RunReport {
        algorithm,
        steps_completed: records.len(),
        diverged: divergence.is_some(),
        divergence,
        eval,
        final_train_loss: records.last().map(|r| r.loss_fo),
        final_eval_loss,
        total_backward_flops: records.iter().map(|r| r.backward_flops).sum(),
        total_forward_flops: records.iter().map(|r| r.forward_flops).sum(),
        t_full: model.flops_profile(train_batches[0].size).t_full(),
        fo_tensors: names_with(params, Role::Fo),
        zo_tensors: names_with(params, Role::Zo),
        memory_proxy: MemoryProxy {
            label: "proxy: gradient-buffer scalars + optimizer-state scalars".into(),
            tape_params,
            optimizer_state,
            total: tape_params + optimizer_state,
        },
        records,
    })
}
