use std::fs;

use ensemble_control::ensemble::{integrate, read_trajectory_csv, write_trajectory_csv, ControlSignal, TimeGrid};
use ensemble_control::measure::ParameterSpace;
use ensemble_control::problem::{builtin, BuiltinParams, ProblemFile};
use ensemble_control::value::{terminal_functional, value_dp, Axis, ValueGrid};
use ensemble_control::verify::{write_reports_csv, CheckReport};
use ensemble_control::{EnsembleState, Error};

const SPACE: &str = r#"
[[atom]]
id = "low"
weight = 0.25
coords = [0.0]

[[atom]]
id = "high"
weight = 0.75
coords = [2.0]
"#;

#[test]
fn space_toml_round_trip() {
    let space = ParameterSpace::from_toml_str(SPACE).unwrap();
    assert_eq!(space.weights(), &[0.25, 0.75]);
    assert_eq!(space.distance(0, 1), 2.0);
    let again = ParameterSpace::from_toml_str(&space.to_toml_string()).unwrap();
    assert_eq!(again, space);
}

#[test]
fn space_rejects_bad_weights() {
    let bad = SPACE.replace("0.25", "-1.0");
    assert!(ParameterSpace::from_toml_str(&bad).is_err());
    let bad = SPACE.replace("coords = [2.0]", "");
    assert!(ParameterSpace::from_toml_str(&bad).is_err());
}

#[test]
fn problem_file_with_space_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("atoms.toml"), SPACE).unwrap();
    let problem = r#"
format = "ensemble-problem/1"
name = "drift"
space_file = "atoms.toml"

[custom]
grammar = "expr/1"
state_dim = 1
horizon = 1.0
f = ["w1 * x1 + u1"]
g = "(x1 - 1)^2"
growth = 3.0
lipschitz = 2.0
modulus = "r * 5"
cost_a = 0.0
cost_b = 0.0
control_bounds = [[-1.0, 1.0]]

[[custom.controls]]
start = 0.0
points = [[-1.0], [0.0], [1.0]]
"#;
    let path = dir.path().join("drift.toml");
    fs::write(&path, problem).unwrap();
    let p = ProblemFile::load(&path).unwrap();
    assert_eq!((p.name.as_str(), p.atoms(), p.state_dim), ("drift", 2, 1));
    // g = (x − 1)², weights 0.25 and 0.75
    let phi = EnsembleState::scalar(&[3.0, 0.0]).unwrap();
    assert!((terminal_functional(&p, &phi).unwrap() - (0.25 * 4.0 + 0.75 * 1.0)).abs() < 1e-12);
    // f = ω x + u at ω = 2, x = 1.5, u = 1
    let v = p.velocity(0.0, &EnsembleState::scalar(&[0.0, 1.5]).unwrap(), &[1.0]);
    assert_eq!(v.as_slice(), &[1.0, 4.0]);

    fs::write(&path, problem.replace("ensemble-problem/1", "ensemble-problem/9")).unwrap();
    assert!(matches!(ProblemFile::load(&path), Err(Error::Format(_))));
}

#[test]
fn trajectory_csv_round_trip() {
    let p = builtin("bilinear", &BuiltinParams { atoms: 3, ..Default::default() }).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 7).unwrap();
    let u = ControlSignal::new(grid, (0..7).map(|j| vec![(j as f64 * 0.3).sin()]).collect()).unwrap();
    let phi = EnsembleState::scalar(&[0.1, -0.4, 1.0 / 3.0]).unwrap();
    let traj = integrate(&p, &phi, &u).unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&traj, &p.space, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("t,atom,x1,u1\n"));
    assert_eq!(text.lines().count(), 1 + 8 * 3);
    let (back, ids) = read_trajectory_csv(buf.as_slice()).unwrap();
    assert_eq!(ids.len(), 3);
    assert_eq!(back.states(), traj.states());
    assert_eq!(back.control().values(), u.values());
}

#[test]
fn value_grid_binary_and_slice() {
    let p = builtin("decoupled-quadratic", &BuiltinParams::default()).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
    let vg = value_dp(&p, &[Axis::new(-2.0, 2.0, 9).unwrap(); 2], &grid).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.bin");
    vg.save(&path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"ENSVGRD1");
    let back = ValueGrid::load(&path).unwrap();
    for j in 0..=4 {
        assert_eq!(back.slice(j), vg.slice(j));
    }
    for j in 0..4 {
        assert_eq!(back.argmin_slice(j), vg.argmin_slice(j));
    }
    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 3);
    assert!(ValueGrid::read_from(truncated.as_slice()).is_err());

    let mut csv = Vec::new();
    vg.write_slice_csv(2, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("t,z1,z2,value,argmin\n"));
    assert_eq!(text.lines().count(), 1 + 81);
}

#[test]
fn reports_csv_header() {
    let reports: Vec<CheckReport> = Vec::new();
    let mut buf = Vec::new();
    write_reports_csv(&reports, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap().trim_end(),
        "check,instance,tolerance,worst,samples,skipped,seed,passed,witness_t,witness_state,note"
    );
}
