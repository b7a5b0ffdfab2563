//! Finite-difference HJB residual of the semi-Lagrangian table under
//! refinement. Kink-suspect nodes, where the stored argmin changes between
//! neighbours, are skipped and counted.

use ensemble_control::ensemble::TimeGrid;
use ensemble_control::problem::{builtin, BuiltinParams};
use ensemble_control::value::{value_dp, Axis};
use ensemble_control::verify::{hjb_residual, interior_samples, DEFAULT_KAPPA};

fn main() -> ensemble_control::Result<()> {
    let problems = [
        ("linear-ensemble", BuiltinParams { a: Some(vec![-0.4, 0.3]), c: Some(vec![1.0, 0.5]), ..Default::default() }),
        ("decoupled-quadratic", BuiltinParams::default()),
    ];
    for (name, params) in problems {
        let p = builtin(name, &params)?;
        println!("== {name}");
        for (steps, count) in [(25, 21), (50, 41), (100, 81)] {
            let grid = TimeGrid::new(0.0, 1.0, steps)?;
            let vg = value_dp(&p, &[Axis::new(-4.0, 4.0, count)?; 2], &grid)?;
            let r = hjb_residual(&vg, &p, &interior_samples(&vg, 0.5, 4000), DEFAULT_KAPPA)?;
            println!(
                "N = {steps:>3}, {count:>2} pts/axis: residual {:.4e}, tol {:.3}, {} samples, {} skipped",
                r.worst, r.tolerance, r.samples, r.skipped
            );
        }
    }
    Ok(())
}
