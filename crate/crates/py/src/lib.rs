//! Python bindings: experiment configs, importance profiles, budgeted
//! partitions, training runs, sweeps and the numerical self-checks.
//!
//! Long computations release the GIL.

use hizfo_cli::experiment::{build_workload, plan, profile};
use hizfo_cli::{run, run_sweep, Axis, CliError, ExperimentConfig};
use hizfo_core::optimizer::records_to_csv;
use hizfo_core::verify::{run_all, VerifyOptions};
use hizfo_core::{solve_dp, CostModel, ImportanceProfile, PartitionPlan, RunReport, TensorCost};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(hizfo, HizfoError, PyException, "A run or computation failed.");

fn to_py(e: CliError) -> PyErr {
    match e {
        CliError::Config(msg) => PyValueError::new_err(msg),
        other => HizfoError::new_err(other.to_string()),
    }
}

fn core_err(e: hizfo_core::Error) -> PyErr {
    to_py(CliError::Core(e))
}

/// Experiment configuration. Build one from a preset name or config text.
#[pyclass(name = "Config", module = "hizfo")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// `preset` is one of two_moons, rosenbrock, tiny_lm, quadratic.
    #[new]
    #[pyo3(signature = (preset = "two_moons"))]
    fn new(preset: &str) -> PyResult<Self> {
        let inner = match preset {
            "two_moons" => ExperimentConfig::two_moons(),
            "rosenbrock" => ExperimentConfig::rosenbrock(),
            "tiny_lm" => ExperimentConfig::tiny_lm(),
            "quadratic" => ExperimentConfig::quadratic(),
            other => return Err(PyValueError::new_err(format!("unknown preset {other}"))),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        text.parse().map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        ExperimentConfig::from_file(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    /// Set one `section.key` with the same rules as the config file.
    fn set(&mut self, section: &str, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(section, key, value).map_err(to_py)?;
        next.validate().map_err(to_py)?;
        self.inner = next;
        Ok(())
    }

    fn copy(&self) -> Self {
        Self { inner: self.inner.clone() }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.run.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.run.seed = v;
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.inner.optimizer.max_steps
    }

    #[setter]
    fn set_max_steps(&mut self, v: usize) {
        self.inner.optimizer.max_steps = v;
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.partition.rho
    }

    #[setter]
    fn set_rho(&mut self, v: f64) -> PyResult<()> {
        self.set("partition", "rho", &v.to_string())
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.optimizer.alpha
    }

    #[setter]
    fn set_alpha(&mut self, v: f64) -> PyResult<()> {
        self.set("optimizer", "alpha", &v.to_string())
    }

    #[getter]
    fn algorithm(&self) -> &'static str {
        self.inner.algorithm.as_str()
    }

    #[setter]
    fn set_algorithm(&mut self, v: &str) -> PyResult<()> {
        self.set("optimizer", "algorithm", v)
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(model={}, algorithm={}, rho={}, alpha={}, seed={})",
            self.inner.model.kind.as_str(),
            self.inner.algorithm.as_str(),
            self.inner.partition.rho,
            self.inner.optimizer.alpha,
            self.inner.run.seed
        )
    }
}

/// FO/ZO split of the parameter tensors under a FLOPs budget.
#[pyclass(name = "Plan", module = "hizfo", frozen)]
struct PyPlan {
    inner: PartitionPlan,
}

#[pymethods]
impl PyPlan {
    #[getter]
    fn fo(&self) -> Vec<String> {
        self.inner.fo.clone()
    }

    #[getter]
    fn zo(&self) -> Vec<String> {
        self.inner.zo.clone()
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }

    #[getter]
    fn consumed_flops(&self) -> u64 {
        self.inner.consumed_flops
    }

    #[getter]
    fn budget_flops(&self) -> f64 {
        self.inner.budget_flops
    }

    #[getter]
    fn t_full(&self) -> u64 {
        self.inner.t_full
    }

    #[getter]
    fn achieved_importance(&self) -> f64 {
        self.inner.achieved_importance
    }

    #[getter]
    fn warning(&self) -> Option<String> {
        self.inner.warning.clone()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Plan(rho={}, fo={:?}, consumed_flops={})", self.inner.rho, self.inner.fo, self.inner.consumed_flops)
    }
}

/// Outcome of one training run.
#[pyclass(name = "Report", module = "hizfo", frozen)]
struct PyReport {
    inner: RunReport,
    plan: Option<PartitionPlan>,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn steps_completed(&self) -> usize {
        self.inner.steps_completed
    }

    #[getter]
    fn diverged(&self) -> bool {
        self.inner.diverged
    }

    #[getter]
    fn final_train_loss(&self) -> Option<f64> {
        self.inner.final_train_loss
    }

    #[getter]
    fn final_eval_loss(&self) -> Option<f64> {
        self.inner.final_eval_loss
    }

    #[getter]
    fn total_backward_flops(&self) -> u64 {
        self.inner.total_backward_flops
    }

    #[getter]
    fn plan(&self) -> Option<PyPlan> {
        self.plan.clone().map(|inner| PyPlan { inner })
    }

    /// Per-step `(L_FO, L_ZO)` pairs.
    fn losses(&self) -> Vec<(f64, f64)> {
        self.inner.records.iter().map(|r| (r.loss_fo, r.loss_zo)).collect()
    }

    fn steps_csv(&self) -> String {
        records_to_csv(&self.inner.records)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(algorithm={}, steps={}, diverged={}, final_eval_loss={:?})",
            self.inner.algorithm.as_str(),
            self.inner.steps_completed,
            self.inner.diverged,
            self.inner.final_eval_loss
        )
    }
}

/// Warm-up importance as `(tensor, layer_index, raw, normalized)` rows.
#[pyfunction]
fn importance(py: Python<'_>, config: &PyConfig) -> PyResult<Vec<(String, usize, f64, f64)>> {
    let cfg = config.inner.clone();
    let p = py
        .detach(move || build_workload(&cfg).and_then(|w| profile(&cfg, &w)))
        .map_err(to_py)?;
    Ok((0..p.len()).map(|i| (p.names()[i].clone(), p.layer_indices()[i], p.raw_scores()[i], p.scores()[i])).collect())
}

#[pyfunction]
fn partition(py: Python<'_>, config: &PyConfig) -> PyResult<PyPlan> {
    let cfg = config.inner.clone();
    py.detach(move || {
        let w = build_workload(&cfg)?;
        let p = profile(&cfg, &w)?;
        plan(&cfg, &p, &w.cost_model())
    })
    .map(|inner| PyPlan { inner })
    .map_err(to_py)
}

/// Budgeted selection on explicit numbers. Tensors are listed output-first;
/// `t_dy[i]` is the cost of passing the gradient through tensor `i`.
#[pyfunction]
#[pyo3(signature = (names, scores, t_dw, t_dy, rho, buckets = 10_000))]
fn select(names: Vec<String>, scores: Vec<f64>, t_dw: Vec<u64>, t_dy: Vec<u64>, rho: f64, buckets: u64) -> PyResult<PyPlan> {
    let n = names.len();
    if scores.len() != n || t_dw.len() != n || t_dy.len() != n {
        return Err(PyValueError::new_err("names, scores, t_dw and t_dy must have equal lengths"));
    }
    let tensors = names
        .iter()
        .zip(t_dw.iter().zip(&t_dy))
        .enumerate()
        .map(|(i, (name, (&t_dw, &t_dy)))| TensorCost { name: name.clone(), layer_index: i, t_fwd: 0, t_dw, t_dy })
        .collect();
    let cost = CostModel { batch_size: 1, tensors };
    let profile = ImportanceProfile::from_scores(names, (0..n).collect(), scores).map_err(core_err)?;
    solve_dp(&profile, &cost, rho, buckets).map(|inner| PyPlan { inner }).map_err(core_err)
}

/// Profile, partition and train; divergence is reported, not raised.
#[pyfunction]
fn train(py: Python<'_>, config: &PyConfig) -> PyResult<PyReport> {
    let cfg = config.inner.clone();
    let out = py.detach(move || run(&cfg)).map_err(to_py)?;
    Ok(PyReport { inner: out.report, plan: out.plan })
}

/// Sweep `axis` (rho, r or alpha) over `values` for `config.run.seeds`
/// seeds. Rows are `(value, seed, final_eval_loss, diverged)`.
#[pyfunction]
fn sweep(py: Python<'_>, config: &PyConfig, axis: &str, values: Vec<f64>) -> PyResult<Vec<(f64, u64, Option<f64>, bool)>> {
    let axis = Axis::parse(axis).map_err(to_py)?;
    let cfg = config.inner.clone();
    let res = py.detach(move || run_sweep(&cfg, axis, &values, None)).map_err(to_py)?;
    Ok(res.rows.into_iter().map(|r| (r.value, r.seed, r.final_eval_loss, r.diverged)).collect())
}

/// Numerical self-checks as `(name, passed, detail)` rows.
#[pyfunction]
#[pyo3(signature = (fast = true))]
fn verify(py: Python<'_>, fast: bool) -> Vec<(String, bool, String)> {
    let opts = VerifyOptions { fast, ..VerifyOptions::default() };
    py.detach(move || run_all(opts)).into_iter().map(|r| (r.name, r.passed, r.detail)).collect()
}

#[pymodule]
pub fn hizfo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HizfoError", m.py().get_type::<HizfoError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(importance, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_checks_lengths_and_respects_the_budget() {
        assert!(select(vec!["a".into()], vec![1.0, 2.0], vec![1], vec![0], 0.5, 100).is_err());
        let names = vec!["a".into(), "b".into(), "c".into()];
        let plan = select(names, vec![0.9, 0.1, 0.5], vec![10, 10, 10], vec![5, 5, 0], 0.5, 1000).unwrap();
        assert!(plan.inner.consumed_flops as f64 <= plan.inner.budget_flops + plan.inner.bucket_flops as f64);
        assert_eq!(plan.inner.fo.len() + plan.inner.zo.len(), 3);
    }

    #[test]
    fn unknown_presets_are_rejected() {
        assert!(PyConfig::new("resnet").is_err());
        assert_eq!(PyConfig::new("rosenbrock").unwrap().inner, ExperimentConfig::rosenbrock());
    }
}
