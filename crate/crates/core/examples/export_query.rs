//! Save a value table, reload it and answer queries without recomputing.
//! Also writes one time slice as CSV for `plot_value_slice.py`.

use std::fs::File;

use ensemble_control::ensemble::TimeGrid;
use ensemble_control::problem::{builtin, BuiltinParams};
use ensemble_control::value::{value_dp, Axis, ValueGrid};
use ensemble_control::EnsembleState;

fn main() -> ensemble_control::Result<()> {
    let p = builtin("decoupled-quadratic", &BuiltinParams::default())?;
    let grid = TimeGrid::new(0.0, 1.0, 40)?;
    let vg = value_dp(&p, &[Axis::new(-3.0, 3.0, 61)?; 2], &grid)?;
    vg.save("value_grid.bin")?;
    vg.write_slice_csv(0, File::create("value_slice.csv")?)?;

    let back = ValueGrid::load("value_grid.bin")?;
    for (s, x) in [(0.0, [0.0, 1.0]), (0.5, [0.5, 0.5]), (0.9, [0.1, 0.9])] {
        let phi = EnsembleState::scalar(&x)?;
        println!("V({s}, {x:?}) = {:.6}", back.value(s, &phi)?);
    }
    Ok(())
}
