//! Integrate an ensemble under a shared control, export the trajectory and
//! run the randomized trajectory estimates against their explicit
//! constants.

use std::fs::File;

use ensemble_control::ensemble::{integrate, estimate_suite, write_trajectory_csv, ControlSignal, EstimateConfig, TimeGrid};
use ensemble_control::problem::{builtin, BuiltinParams};
use ensemble_control::EnsembleState;

fn main() -> ensemble_control::Result<()> {
    let params = BuiltinParams { atoms: 5, a_offset: -1.0, a_slope: 2.0, ..Default::default() };
    let p = builtin("linear-ensemble", &params)?;

    let grid = TimeGrid::new(0.0, p.horizon, 100)?;
    let u = ControlSignal::new(
        grid,
        (0..100).map(|j| vec![if j < 50 { 1.0 } else { -1.0 }]).collect(),
    )?;
    let phi = EnsembleState::constant(5, &[0.5]);
    let traj = integrate(&p, &phi, &u)?;
    for i in 0..5 {
        println!("atom {i}: x(T) = {:+.6}", traj.terminal().atom(i)[0]);
    }
    write_trajectory_csv(&traj, &p.space, File::create("trajectory.csv")?)?;
    println!("wrote trajectory.csv");

    let report = estimate_suite(&p, 500, &EstimateConfig::default())?;
    print!("{report}");
    Ok(())
}
