use biobj_tune_py::biobj_tune_module;
use pyo3::prelude::*;

#[test]
fn module_works_from_embedded_interpreter() {
    pyo3::append_to_inittab!(biobj_tune_module);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            cr#"
import json
import biobj_tune as bt

assert len(bt.enumerate_configurations(2)) == 3
assert bt.Configuration(2, 3).total_threads() == 6
front = bt.front_build([(1, 1, 1.0, 2.0), (1, 2, 0.5, 3.0), (2, 1, 2.0, 5.0)])
assert [(t, e) for t, e, _ in front] == [(0.5, 3.0), (1.0, 2.0)]
eye = [[1.0, 0.0], [0.0, 1.0]]
assert bt.gemm(eye, [[1.0, 2.0], [3.0, 4.0]], eye, 1.0, 0.0, "v", 2, 1) == [[1.0, 2.0], [3.0, 4.0]]
assert abs(bt.t_quantile(0.95, 14) - 1.7613) < 1e-4
assert bt.mean_using_ttest(lambda: 2.0)["reps"] == 16
assert json.loads(bt.run_sweep("stub", 2))["status"]["state"] == "complete"
try:
    bt.Configuration(0, 1)
    raise AssertionError("accepted zero groups")
except ValueError:
    pass
"#,
            None,
            None,
        )
        .inspect_err(|e| e.print(py))
        .unwrap();
    });
}
