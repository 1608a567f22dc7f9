use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn run(code: &str) {
    Python::attach(|py| {
        let m = wrap_pymodule!(preffuse::preffuse)(py);
        let globals = PyDict::new(py);
        globals.set_item("pf", m).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn trajectory_round_trip_and_keyframes() {
    run(r#"
states = [[0.02 * t, 0.01 * t] for t in range(20)]
actions = [[0.0, 0.0]] + [[0.02, 0.01]] * 19
t = pf.Trajectory("t", states, actions)
assert len(t) == 20 and t.id == "t" and t.states == states
kf = pf.extract_keyframes(t)
assert kf[0] == 1 and kf[-1] == 20
"#);
}

#[test]
fn errors_map_to_python_exceptions() {
    run(r#"
try:
    pf.Trajectory("x", [[0.0]], [[0.0]])
    raise AssertionError("expected ValueError")
except ValueError as e:
    assert "below the minimum" in str(e)
try:
    pf.load_trajectories("/nonexistent/file.jsonl")
    raise AssertionError("expected OSError")
except OSError:
    pass
try:
    pf.preference_prob(float("nan"), 0.0)
    raise AssertionError("expected ValueError")
except ValueError:
    pass
"#);
}

#[test]
fn scripted_fusion_prefers_progress() {
    run(r#"
n = 50
def traj(name, scale):
    s = [[0.8 * scale * t / (n - 1), 0.7 * scale * t / (n - 1)] for t in range(n)]
    a = [[0.0, 0.0]] + [[s[i][0] - s[i - 1][0], s[i][1] - s[i - 1][1]] for i in range(1, n)]
    return pf.Trajectory(name, s, a)
good, idle = traj("good", 1.0), traj("idle", 0.05)
assert pf.scripted_label(good, idle) == 1
label, scores = pf.fuse_scripted(good, idle)
assert label == 1 and scores[2] == max(scores)
label, _ = pf.fuse_scripted(idle, good)
assert label == 0
"#);
}
