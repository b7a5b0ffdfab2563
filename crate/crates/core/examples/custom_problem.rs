//! A problem defined in a file with the expression sub-language, solved by
//! enumeration and by adjoint descent.

use ensemble_control::ensemble::TimeGrid;
use ensemble_control::problem::ProblemFile;
use ensemble_control::value::{value_adjoint, value_oracle, AdjointConfig};
use ensemble_control::EnsembleState;

const PROBLEM: &str = r#"
format = "ensemble-problem/1"
name = "damped-pair"

[[space.atom]]
id = "soft"
weight = 0.5
coords = [0.5]

[[space.atom]]
id = "stiff"
weight = 0.5
coords = [1.5]

[custom]
grammar = "expr/1"
state_dim = 2
horizon = 1.0
f = ["x2", "-w1 * x1 - 0.2 * x2 + u1"]
g = "x1^2 + 0.1 * x2^2"
growth = 3.0
lipschitz = 2.0
modulus = "2 * r"
cost_a = 0.0
cost_b = 0.0
control_bounds = [[-1.0, 1.0]]

[[custom.controls]]
start = 0.0
points = [[-1.0], [0.0], [1.0]]
"#;

fn main() -> ensemble_control::Result<()> {
    let p = ProblemFile::parse(PROBLEM)?.build(None)?;
    let phi = EnsembleState::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]])?;
    let grid = TimeGrid::new(0.0, 1.0, 8)?;
    let o = value_oracle(&p, &phi, &grid)?;
    println!("oracle  {:.8}  indices {:?}", o.value, o.indices);
    let a = value_adjoint(&p, &phi, &grid, &AdjointConfig::default())?;
    println!("adjoint {:.8}  on the control set: {}", a.value, a.on_set);
    Ok(())
}
