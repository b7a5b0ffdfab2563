//! V stays constant along the enumerated optimum and never decreases along
//! any other control.

use ensemble_control::ensemble::{ControlSignal, TimeGrid};
use ensemble_control::problem::{builtin, BuiltinParams};
use ensemble_control::value::DEFAULT_BUDGET;
use ensemble_control::verify::{epigraph_invariance, value_along, EpigraphConfig};
use ensemble_control::EnsembleState;

fn main() -> ensemble_control::Result<()> {
    let p = builtin("decoupled-quadratic", &BuiltinParams::default())?;
    let grid = TimeGrid::new(0.0, 1.0, 6)?;
    let r = epigraph_invariance(&p, &grid, &EpigraphConfig::default())?;
    println!("{}\n{}", r.weak, r.strong);

    // along a deliberately poor control the value climbs
    let phi = EnsembleState::scalar(&[0.0, 0.0])?;
    let u = ControlSignal::constant(grid, &[-1.0]);
    for (j, v) in value_along(&p, &phi, &u, DEFAULT_BUDGET)?.iter().enumerate() {
        println!("t = {:.3}  V = {v:.6}", grid.node(j));
    }
    Ok(())
}
