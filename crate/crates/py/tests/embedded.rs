//! Drives the module from an embedded interpreter.

use pyo3::ffi::c_str;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hizfo::hizfo as hizfo_module;

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(f: F) {
    pyo3::append_to_inittab!(hizfo_module);
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("hizfo", py.import("hizfo").unwrap()).unwrap();
        f(py, &globals);
    });
}

#[test]
fn module_round_trip() {
    with_module(|py, g| {
        py.run(
            c_str!(
                r#"
cfg = hizfo.Config("quadratic")
cfg.max_steps = 25
assert cfg.algorithm == "hizfo"
report = hizfo.train(cfg)
assert report.steps_completed == 25 and not report.diverged
first, last = report.losses()[0][0], report.losses()[-1][0]
assert last < first, (first, last)

plan = hizfo.select(["a", "b"], [1.0, 0.5], [4, 4], [2, 0], rho=1.0)
assert plan.fo == ["a", "b"] and plan.zo == []

try:
    hizfo.select(["a"], [1.0, 2.0], [1], [0], rho=0.5)
except ValueError:
    pass
else:
    raise AssertionError("length mismatch accepted")

try:
    hizfo.Config.from_text("[partition]\nrho = 0\n")
except ValueError:
    pass
else:
    raise AssertionError("rho = 0 accepted")
"#
            ),
            Some(g),
            None,
        )
        .unwrap();
    });
}
