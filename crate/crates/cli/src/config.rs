//! Experiment configuration: sectioned `key = value` text.
//!
//! Every run is fully determined by an [`ExperimentConfig`]. Parsing rejects
//! unknown sections and keys, keys that do not apply to the selected model or
//! task kind, and duplicates. [`ExperimentConfig::to_text`] emits a canonical
//! form, so `to_text(parse(text))` is a fixed point.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hizfo_core::{Algorithm, FoRule, LossKind, OptimizerConfig};
use ini::{EscapePolicy, Ini, LineSeparator, WriteOption};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Quadratic,
    Rosenbrock,
    Mlp,
    TinyLm,
}

impl ModelChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelChoice::Quadratic => "quadratic",
            ModelChoice::Rosenbrock => "rosenbrock",
            ModelChoice::Mlp => "mlp",
            ModelChoice::TinyLm => "tiny_lm",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "quadratic" => Ok(ModelChoice::Quadratic),
            "rosenbrock" => Ok(ModelChoice::Rosenbrock),
            "mlp" => Ok(ModelChoice::Mlp),
            "tiny_lm" => Ok(ModelChoice::TinyLm),
            other => Err(CliError::config(format!("unknown model kind {other}"))),
        }
    }

    /// The only task each model accepts.
    pub fn task(self) -> TaskChoice {
        match self {
            ModelChoice::Quadratic | ModelChoice::Rosenbrock => TaskChoice::Analytic,
            ModelChoice::Mlp => TaskChoice::TwoMoons,
            ModelChoice::TinyLm => TaskChoice::CharCorpus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskChoice {
    Analytic,
    TwoMoons,
    CharCorpus,
}

impl TaskChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskChoice::Analytic => "analytic",
            TaskChoice::TwoMoons => "two_moons",
            TaskChoice::CharCorpus => "char_corpus",
        }
    }

    fn parse(s: &str) -> CliResult<Self> {
        match s {
            "analytic" => Ok(TaskChoice::Analytic),
            "two_moons" => Ok(TaskChoice::TwoMoons),
            "char_corpus" => Ok(TaskChoice::CharCorpus),
            other => Err(CliError::config(format!("unknown task kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub kind: ModelChoice,
    /// MLP widths, input first.
    pub dims: Vec<usize>,
    pub loss: LossKind,
    /// Quadratic: number of tensors, coordinates per tensor, curvature.
    pub blocks: usize,
    pub block_dim: usize,
    pub curvature: f64,
    /// Rosenbrock coefficients.
    pub a: f64,
    pub b: f64,
    /// Attention LM shape; the vocabulary comes from the corpus.
    pub context: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSection {
    pub kind: TaskChoice,
    pub train_size: usize,
    pub eval_size: usize,
    pub batch_size: usize,
    pub noise: f64,
    /// `builtin` or a path to any UTF-8 file.
    pub corpus: String,
    pub vocab_cap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSection {
    pub rho: f64,
    pub buckets: u64,
    /// Explicit FO tensor list; empty means solve the DP.
    pub fo: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmupSection {
    pub steps: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub seed: u64,
    /// Seeds per sweep point: `seed, seed + 1, ...`.
    pub seeds: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub task: TaskSection,
    pub algorithm: Algorithm,
    pub optimizer: OptimizerConfig,
    pub partition: PartitionSection,
    pub warmup: WarmupSection,
    pub run: RunSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::two_moons()
    }
}

impl ExperimentConfig {
    /// The two-moons MLP experiment used for the comparative runs.
    pub fn two_moons() -> Self {
        Self {
            model: ModelSection {
                kind: ModelChoice::Mlp,
                dims: vec![2, 64, 64, 64, 2],
                loss: LossKind::CrossEntropy,
                blocks: 1,
                block_dim: 8,
                curvature: 1.0,
                a: 1.0,
                b: 100.0,
                context: 8,
                d_model: 16,
                d_ff: 32,
                depth: 2,
            },
            task: TaskSection {
                kind: TaskChoice::TwoMoons,
                train_size: 256,
                eval_size: 512,
                batch_size: 64,
                noise: 0.1,
                corpus: "builtin".into(),
                vocab_cap: 64,
            },
            algorithm: Algorithm::Hizfo,
            optimizer: OptimizerConfig {
                eta_fo: 0.7,
                eta_zo: 0.07,
                eps: 1e-3,
                alpha: 0.1,
                max_steps: 400,
                eval_interval: 0,
                ..OptimizerConfig::default()
            },
            partition: PartitionSection { rho: 0.6, buckets: 10_000, fo: Vec::new() },
            warmup: WarmupSection { steps: 5, lr: 1e-3 },
            run: RunSection { seed: 0, seeds: 5, out: PathBuf::from("runs") },
        }
    }

    /// Rosenbrock valley with `x` trained first-order and `y` zeroth-order.
    pub fn rosenbrock() -> Self {
        let mut c = Self::two_moons();
        c.model.kind = ModelChoice::Rosenbrock;
        c.task.kind = TaskChoice::Analytic;
        c.optimizer.eta_fo = 1e-3;
        c.optimizer.eta_zo = 1e-3;
        c.optimizer.max_steps = 50_000;
        c.partition.fo = vec!["x".into()];
        c.warmup.lr = 1e-2;
        c
    }

    /// Character-level attention LM on the built-in corpus.
    pub fn tiny_lm() -> Self {
        let mut c = Self::two_moons();
        c.model.kind = ModelChoice::TinyLm;
        c.task.kind = TaskChoice::CharCorpus;
        c.task.train_size = 64;
        c.task.eval_size = 64;
        c.task.batch_size = 16;
        c.optimizer.eta_fo = 1e-2;
        c.optimizer.eta_zo = 1e-3;
        c.optimizer.max_steps = 200;
        c
    }

    /// Separable quadratic.
    pub fn quadratic() -> Self {
        let mut c = Self::two_moons();
        c.model.kind = ModelChoice::Quadratic;
        c.task.kind = TaskChoice::Analytic;
        c.optimizer.eta_fo = 0.1;
        c.optimizer.eta_zo = 0.01;
        c.optimizer.max_steps = 200;
        c.warmup.lr = 1e-2;
        c
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        text.parse()
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.task.kind != self.model.kind.task() {
            return Err(CliError::config(format!(
                "model {} needs task {}, got {}",
                self.model.kind.as_str(),
                self.model.kind.task().as_str(),
                self.task.kind.as_str()
            )));
        }
        self.optimizer.validate()?;
        if !(self.partition.rho > 0.0 && self.partition.rho <= 1.0) {
            return Err(CliError::config("partition.rho must lie in (0, 1]"));
        }
        if self.partition.buckets < 10 {
            return Err(CliError::config("partition.buckets must be at least 10"));
        }
        if self.run.seeds == 0 {
            return Err(CliError::config("run.seeds must be positive"));
        }
        if self.warmup.steps == 0 || !(self.warmup.lr > 0.0) {
            return Err(CliError::config("warmup needs positive steps and lr"));
        }
        if self.task.kind != TaskChoice::Analytic && (self.task.batch_size == 0 || self.task.train_size == 0 || self.task.eval_size == 0) {
            return Err(CliError::config("task sizes must be positive"));
        }
        if self.task.kind == TaskChoice::CharCorpus && !(2..=64).contains(&self.task.vocab_cap) {
            return Err(CliError::config("task.vocab_cap must lie in [2, 64]"));
        }
        Ok(())
    }

    /// Canonical text form.
    pub fn to_text(&self) -> String {
        let mut ini = Ini::new();
        let m = &self.model;
        {
            let mut s = ini.with_section(Some("model"));
            s.set("kind", m.kind.as_str());
            match m.kind {
                ModelChoice::Mlp => {
                    s.set("dims", join(&m.dims, "-"));
                    s.set("loss", loss_str(m.loss));
                }
                ModelChoice::Quadratic => {
                    s.set("blocks", m.blocks.to_string());
                    s.set("block_dim", m.block_dim.to_string());
                    s.set("curvature", fmt_f64(m.curvature));
                }
                ModelChoice::Rosenbrock => {
                    s.set("a", fmt_f64(m.a));
                    s.set("b", fmt_f64(m.b));
                }
                ModelChoice::TinyLm => {
                    s.set("context", m.context.to_string());
                    s.set("d_model", m.d_model.to_string());
                    s.set("d_ff", m.d_ff.to_string());
                    s.set("depth", m.depth.to_string());
                }
            }
        }
        {
            let t = &self.task;
            let mut s = ini.with_section(Some("task"));
            s.set("kind", t.kind.as_str());
            match t.kind {
                TaskChoice::Analytic => {}
                TaskChoice::TwoMoons => {
                    s.set("train_size", t.train_size.to_string());
                    s.set("eval_size", t.eval_size.to_string());
                    s.set("batch_size", t.batch_size.to_string());
                    s.set("noise", fmt_f64(t.noise));
                }
                TaskChoice::CharCorpus => {
                    s.set("train_size", t.train_size.to_string());
                    s.set("eval_size", t.eval_size.to_string());
                    s.set("batch_size", t.batch_size.to_string());
                    s.set("corpus", t.corpus.clone());
                    s.set("vocab_cap", t.vocab_cap.to_string());
                }
            }
        }
        {
            let o = &self.optimizer;
            let mut s = ini.with_section(Some("optimizer"));
            s.set("algorithm", self.algorithm.as_str())
                .set("eta_fo", fmt_f64(o.eta_fo))
                .set("eta_zo", fmt_f64(o.eta_zo))
                .set("eps", fmt_f64(o.eps))
                .set("alpha", fmt_f64(o.alpha))
                .set("fo_rule", fo_rule_str(o.fo_rule))
                .set("beta1", fmt_f64(o.beta1))
                .set("beta2", fmt_f64(o.beta2))
                .set("adam_eps", fmt_f64(o.adam_eps))
                .set("weight_decay", fmt_f64(o.weight_decay))
                .set("max_steps", o.max_steps.to_string())
                .set("eval_interval", o.eval_interval.to_string());
        }
        ini.with_section(Some("partition"))
            .set("rho", fmt_f64(self.partition.rho))
            .set("buckets", self.partition.buckets.to_string())
            .set("fo", self.partition.fo.join(","));
        ini.with_section(Some("warmup"))
            .set("steps", self.warmup.steps.to_string())
            .set("lr", fmt_f64(self.warmup.lr));
        ini.with_section(Some("run"))
            .set("seed", self.run.seed.to_string())
            .set("seeds", self.run.seeds.to_string())
            .set("out", self.run.out.display().to_string());

        let mut buf = Vec::new();
        let opt = WriteOption { escape_policy: EscapePolicy::Basics, line_separator: LineSeparator::CR, kv_separator: " = " };
        ini.write_to_opt(&mut buf, opt).expect("writing to memory");
        String::from_utf8(buf).expect("config text is UTF-8")
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for ExperimentConfig {
    type Err = CliError;

    /// Missing keys keep the values of [`ExperimentConfig::two_moons`].
    fn from_str(text: &str) -> CliResult<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::config(format!("config syntax: {e}")))?;
        let mut cfg = Self::two_moons();
        let mut seen_sections = HashSet::new();

        // Kinds first: they decide which keys are legal.
        if let Some(kind) = ini.section(Some("model")).and_then(|p| p.get("kind")) {
            cfg.model.kind = ModelChoice::parse(kind)?;
            cfg.task.kind = cfg.model.kind.task();
        }
        if let Some(kind) = ini.section(Some("task")).and_then(|p| p.get("kind")) {
            cfg.task.kind = TaskChoice::parse(kind)?;
        }

        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(CliError::config(format!("key {k} appears before any section")));
                }
                continue;
            };
            if !seen_sections.insert(section.to_string()) {
                return Err(CliError::config(format!("section [{section}] appears twice")));
            }
            let mut seen_keys = HashSet::new();
            for (key, value) in props.iter() {
                if !seen_keys.insert(key.to_string()) {
                    return Err(CliError::config(format!("key {section}.{key} appears twice")));
                }
                cfg.set(section, key, value.trim())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    /// Assign one `section.key`; rejects keys foreign to the selected kinds.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> CliResult<()> {
        let unknown = || CliError::config(format!("unknown key {section}.{key}"));
        let wrong_kind = |kind: &str| CliError::config(format!("key {section}.{key} does not apply to {kind}"));
        match section {
            "model" => {
                let m = &mut self.model;
                let needs = |k: ModelChoice| if m.kind == k { Ok(()) } else { Err(wrong_kind(m.kind.as_str())) };
                match key {
                    "kind" => {}
                    "dims" => {
                        needs(ModelChoice::Mlp)?;
                        m.dims = value.split('-').map(|d| num(section, key, d)).collect::<CliResult<_>>()?;
                    }
                    "loss" => {
                        needs(ModelChoice::Mlp)?;
                        m.loss = parse_loss(value)?;
                    }
                    "blocks" | "block_dim" | "curvature" => {
                        needs(ModelChoice::Quadratic)?;
                        match key {
                            "blocks" => m.blocks = num(section, key, value)?,
                            "block_dim" => m.block_dim = num(section, key, value)?,
                            _ => m.curvature = num(section, key, value)?,
                        }
                    }
                    "a" | "b" => {
                        needs(ModelChoice::Rosenbrock)?;
                        let v = num(section, key, value)?;
                        if key == "a" { m.a = v } else { m.b = v }
                    }
                    "context" | "d_model" | "d_ff" | "depth" => {
                        needs(ModelChoice::TinyLm)?;
                        let v = num(section, key, value)?;
                        match key {
                            "context" => m.context = v,
                            "d_model" => m.d_model = v,
                            "d_ff" => m.d_ff = v,
                            _ => m.depth = v,
                        }
                    }
                    _ => return Err(unknown()),
                }
            }
            "task" => {
                let t = &mut self.task;
                let kind = t.kind;
                let sized = || if kind == TaskChoice::Analytic { Err(wrong_kind(kind.as_str())) } else { Ok(()) };
                match key {
                    "kind" => {}
                    "train_size" => {
                        sized()?;
                        t.train_size = num(section, key, value)?;
                    }
                    "eval_size" => {
                        sized()?;
                        t.eval_size = num(section, key, value)?;
                    }
                    "batch_size" => {
                        sized()?;
                        t.batch_size = num(section, key, value)?;
                    }
                    "noise" if kind == TaskChoice::TwoMoons => t.noise = num(section, key, value)?,
                    "corpus" if kind == TaskChoice::CharCorpus => t.corpus = value.to_string(),
                    "vocab_cap" if kind == TaskChoice::CharCorpus => t.vocab_cap = num(section, key, value)?,
                    "noise" | "corpus" | "vocab_cap" => return Err(wrong_kind(kind.as_str())),
                    _ => return Err(unknown()),
                }
            }
            "optimizer" => {
                let o = &mut self.optimizer;
                match key {
                    "algorithm" => self.algorithm = Algorithm::parse(value)?,
                    "eta_fo" => o.eta_fo = num(section, key, value)?,
                    "eta_zo" => o.eta_zo = num(section, key, value)?,
                    "eps" => o.eps = num(section, key, value)?,
                    "alpha" => o.alpha = num(section, key, value)?,
                    "fo_rule" => o.fo_rule = parse_fo_rule(value)?,
                    "beta1" => o.beta1 = num(section, key, value)?,
                    "beta2" => o.beta2 = num(section, key, value)?,
                    "adam_eps" => o.adam_eps = num(section, key, value)?,
                    "weight_decay" => o.weight_decay = num(section, key, value)?,
                    "max_steps" => o.max_steps = num(section, key, value)?,
                    "eval_interval" => o.eval_interval = num(section, key, value)?,
                    _ => return Err(unknown()),
                }
            }
            "partition" => match key {
                "rho" => self.partition.rho = num(section, key, value)?,
                "buckets" => self.partition.buckets = num(section, key, value)?,
                "fo" => {
                    self.partition.fo = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
                }
                _ => return Err(unknown()),
            },
            "warmup" => match key {
                "steps" => self.warmup.steps = num(section, key, value)?,
                "lr" => self.warmup.lr = num(section, key, value)?,
                _ => return Err(unknown()),
            },
            "run" => match key {
                "seed" => self.run.seed = num(section, key, value)?,
                "seeds" => self.run.seeds = num(section, key, value)?,
                "out" => self.run.out = PathBuf::from(value),
                _ => return Err(unknown()),
            },
            other => return Err(CliError::config(format!("unknown section [{other}]"))),
        }
        Ok(())
    }
}

fn num<T: FromStr>(section: &str, key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::config(format!("{section}.{key}: cannot parse {value:?}")))
}

/// Shortest text that parses back to the same value.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn join(v: &[usize], sep: &str) -> String {
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(sep)
}

fn loss_str(l: LossKind) -> &'static str {
    match l {
        LossKind::Mse => "mse",
        LossKind::CrossEntropy => "cross_entropy",
        LossKind::Analytic => "analytic",
    }
}

fn parse_loss(s: &str) -> CliResult<LossKind> {
    match s {
        "mse" => Ok(LossKind::Mse),
        "cross_entropy" => Ok(LossKind::CrossEntropy),
        other => Err(CliError::config(format!("unknown MLP loss {other}"))),
    }
}

fn fo_rule_str(r: FoRule) -> &'static str {
    match r {
        FoRule::Sgd => "sgd",
        FoRule::AdamLike => "adam",
    }
}

fn parse_fo_rule(s: &str) -> CliResult<FoRule> {
    match s {
        "sgd" => Ok(FoRule::Sgd),
        "adam" => Ok(FoRule::AdamLike),
        other => Err(CliError::config(format!("unknown fo_rule {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for cfg in [
            ExperimentConfig::two_moons(),
            ExperimentConfig::rosenbrock(),
            ExperimentConfig::tiny_lm(),
            ExperimentConfig::quadratic(),
        ] {
            let text = cfg.to_text();
            let back: ExperimentConfig = text.parse().unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn unknown_and_foreign_keys_are_rejected() {
        for bad in [
            "[model]\nkind = mlp\nwidth = 3\n",
            "[nope]\nx = 1\n",
            "[model]\nkind = quadratic\ndims = 2-2\n",
            "[model]\nkind = mlp\n[task]\nkind = two_moons\ncorpus = a.txt\n",
            "[optimizer]\neta_fo = 1\neta_fo = 2\n",
            "stray = 1\n[run]\nseed = 1\n",
        ] {
            assert!(bad.parse::<ExperimentConfig>().is_err(), "{bad}");
        }
    }

    #[test]
    fn values_are_validated() {
        assert!("[optimizer]\neps = 0\n".parse::<ExperimentConfig>().is_err());
        assert!("[optimizer]\neta_fo = fast\n".parse::<ExperimentConfig>().is_err());
        assert!("[partition]\nrho = 1.5\n".parse::<ExperimentConfig>().is_err());
        assert!("[model]\nkind = mlp\n[task]\nkind = analytic\n".parse::<ExperimentConfig>().is_err());
    }

    #[test]
    fn partial_text_keeps_defaults() {
        let cfg: ExperimentConfig = "[model]\nkind = rosenbrock\n[partition]\nfo = x\n".parse().unwrap();
        assert_eq!(cfg.task.kind, TaskChoice::Analytic);
        assert_eq!(cfg.partition.fo, vec!["x"]);
        assert_eq!(cfg.optimizer.alpha, 0.1);
    }
}
