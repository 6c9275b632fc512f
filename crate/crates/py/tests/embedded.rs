use pyo3::ffi::c_str;
use pyo3::prelude::*;

use ::drivewatch::drivewatch as extension;

#[test]
fn module_works_from_embedded_python() {
    pyo3::append_to_inittab!(extension);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            c_str!(
                r#"
import json
import drivewatch as dw

assert dw.window_count(600_000) == 119
s = dw.Session.synthetic("pd01", "irregular", 3, duration_ms=60_000)
r = dw.Session.synthetic("nc01", "regular", 4, duration_ms=60_000)
assert s.group == "pd" and r.group == "non_pd" and s.span_ms == 60_000
model, report = dw.Model.train([s, r])
assert json.loads(report)["n_windows"] == 22
line = json.loads(s.windows().splitlines()[0])
p1 = json.loads(model.predict(json.dumps(line["features"])))
p2 = json.loads(dw.Model.from_json(model.to_json()).predict(json.dumps(line["features"])))
assert p1 == p2
log = dw.replay(s, model, privacy=[(0, True)])
assert all(json.loads(l)["suppressed"] for l in log.splitlines())
try:
    dw.replay(s)
    raise AssertionError("experience mode without a model must fail")
except dw.DrivewatchError:
    pass
"#
            ),
            None,
            None,
        )
        .inspect_err(|e| e.print(py))
        .unwrap();
    });
}
