//! Building models and data from a config, and running one experiment.

use hizfo_core::data::{char_windows, split_batches, two_moons, ByteVocab, BUILTIN_CORPUS};
use hizfo_core::importance::WarmupConfig;
use hizfo_core::optimizer::{train, StepHooks};
use hizfo_core::rng::{stream_seed, Stream};
use hizfo_core::{
    apply_plan, estimate_importance, solve_dp, Algorithm, Batch, CostModel, ImportanceProfile, LayeredModel, LossKind,
    MlpSpec, PartitionPlan, QuadraticBlock, Role, RosenbrockSpec, RunReport, TinyLmSpec,
};

use crate::config::{ExperimentConfig, ModelChoice};
use crate::error::{CliError, CliResult};

/// A model together with its training and evaluation data.
#[derive(Debug, Clone)]
pub struct Workload {
    pub model: LayeredModel,
    pub train: Vec<Batch>,
    pub eval: Batch,
}

impl Workload {
    pub fn batch_size(&self) -> usize {
        self.train[0].size
    }

    pub fn cost_model(&self) -> CostModel {
        self.model.flops_profile(self.batch_size())
    }
}

fn one_hot(batch: Batch, classes: usize) -> CliResult<Batch> {
    let n = batch.size;
    let targets = batch
        .targets
        .iter()
        .flat_map(|&y| (0..classes).map(move |c| if c == y as usize { 1.0 } else { 0.0 }))
        .collect();
    Ok(Batch::new(batch.inputs, batch.input_shape, targets, vec![n, classes])?)
}

fn corpus_bytes(spec: &str) -> CliResult<Vec<u8>> {
    if spec == "builtin" {
        return Ok(BUILTIN_CORPUS.as_bytes().to_vec());
    }
    let text = std::fs::read_to_string(spec).map_err(|e| CliError::config(format!("cannot read corpus {spec}: {e}")))?;
    Ok(text.into_bytes())
}

pub fn build_workload(cfg: &ExperimentConfig) -> CliResult<Workload> {
    cfg.validate()?;
    let seed = cfg.run.seed;
    let m = &cfg.model;
    let t = &cfg.task;
    let analytic = |model: LayeredModel| Workload { model, train: vec![Batch::analytic()], eval: Batch::analytic() };
    let w = match m.kind {
        ModelChoice::Quadratic => {
            let blocks = (0..m.blocks).map(|i| QuadraticBlock::uniform(&format!("q{i}"), m.block_dim, m.curvature)).collect();
            analytic(LayeredModel::quadratic(blocks)?)
        }
        ModelChoice::Rosenbrock => analytic(LayeredModel::rosenbrock(RosenbrockSpec { a: m.a, b: m.b, ..RosenbrockSpec::default() })?),
        ModelChoice::Mlp => {
            let model = LayeredModel::mlp(MlpSpec::new(m.dims.clone(), m.loss))?;
            let classes = *m.dims.last().expect("validated dims");
            let mut train_all = two_moons(t.train_size, t.noise, stream_seed(seed, Stream::TrainData))?;
            let mut eval = two_moons(t.eval_size, t.noise, stream_seed(seed, Stream::EvalData))?;
            if m.loss == LossKind::Mse {
                train_all = one_hot(train_all, classes)?;
                eval = one_hot(eval, classes)?;
            }
            Workload { model, train: split_batches(&train_all, t.batch_size)?, eval }
        }
        ModelChoice::TinyLm => {
            let bytes = corpus_bytes(&t.corpus)?;
            let vocab = ByteVocab::build(&bytes, t.vocab_cap)?;
            let tokens = vocab.encode(&bytes);
            let spec = TinyLmSpec { vocab: vocab.size(), context: m.context, d_model: m.d_model, d_ff: m.d_ff, depth: m.depth };
            let model = LayeredModel::tiny_lm(spec)?;
            let train_all = char_windows(&tokens, m.context, t.train_size, stream_seed(seed, Stream::TrainData))?;
            let eval = char_windows(&tokens, m.context, t.eval_size, stream_seed(seed, Stream::EvalData))?;
            Workload { model, train: split_batches(&train_all, t.batch_size)?, eval }
        }
    };
    Ok(w)
}

/// Importance from a short full-FO warm-up at the config's initial point.
pub fn profile(cfg: &ExperimentConfig, w: &Workload) -> CliResult<ImportanceProfile> {
    let mut params = w.model.init_params(cfg.run.seed);
    let warmup = WarmupConfig { steps: cfg.warmup.steps, lr: cfg.warmup.lr };
    Ok(estimate_importance(&w.model, &mut params, &w.train, warmup)?)
}

/// The DP plan, or the fixed FO list when the config gives one.
pub fn plan(cfg: &ExperimentConfig, profile: &ImportanceProfile, cost: &CostModel) -> CliResult<PartitionPlan> {
    let p = &cfg.partition;
    if p.fo.is_empty() {
        Ok(solve_dp(profile, cost, p.rho, p.buckets)?)
    } else {
        Ok(PartitionPlan::fixed(profile, cost, p.rho, &p.fo)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub profile: ImportanceProfile,
    /// The plan that set the roles (absent for the all-FO and all-ZO baselines).
    pub plan: Option<PartitionPlan>,
    pub report: RunReport,
}

/// Profile, partition and train as the config says. Divergence is recorded
/// in the report, not returned as an error.
pub fn run(cfg: &ExperimentConfig) -> CliResult<RunOutcome> {
    run_with_hooks(cfg, StepHooks::default())
}

pub fn run_with_hooks(cfg: &ExperimentConfig, hooks: StepHooks) -> CliResult<RunOutcome> {
    let w = build_workload(cfg)?;
    let profile = profile(cfg, &w)?;
    let mut params = w.model.init_params(cfg.run.seed);
    let plan = match cfg.algorithm {
        Algorithm::Hizfo | Algorithm::FrozenSubset => {
            let plan = plan(cfg, &profile, &w.cost_model())?;
            apply_plan(&mut params, &plan)?;
            Some(plan)
        }
        Algorithm::FullFo => None,
        Algorithm::Mezo => {
            params.set_all_roles(Role::Zo);
            None
        }
    };
    let opt = hizfo_core::OptimizerConfig { master_seed: cfg.run.seed, ..cfg.optimizer.clone() };
    let report = train(&w.model, &mut params, &w.train, Some(&w.eval), &opt, cfg.algorithm, hooks)?;
    Ok(RunOutcome { profile, plan, report })
}
