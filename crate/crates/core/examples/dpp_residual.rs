//! Two-stage minimization against direct enumeration at every split.

use ensemble_control::ensemble::TimeGrid;
use ensemble_control::problem::{builtin, BuiltinParams};
use ensemble_control::value::{dpp_residual, DEFAULT_BUDGET};
use ensemble_control::EnsembleState;

fn main() -> ensemble_control::Result<()> {
    let p = builtin("bilinear", &BuiltinParams { atoms: 3, ..Default::default() })?;
    let grid = TimeGrid::new(0.0, 1.0, 5)?;
    let phi = EnsembleState::scalar(&[1.0, -0.5, 0.25])?;
    for split in 0..=grid.steps() {
        let r = dpp_residual(&p, &phi, &grid, split, DEFAULT_BUDGET)?;
        println!(
            "s2 = {:.2}  V = {:.12}  two-stage = {:.12}  residual {:.1e}  head {:?} tail {:?}",
            r.s2, r.value, r.split_value, r.residual, r.head, r.tail
        );
    }
    Ok(())
}
