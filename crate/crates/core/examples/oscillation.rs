//! Mean oscillation of the integrated velocity over metric balls, against
//! the bound from the parameter modulus.

use ensemble_control::ensemble::TimeGrid;
use ensemble_control::problem::{builtin, BuiltinParams};
use ensemble_control::verify::{oscillation_diagnostic, sample_controls};
use ensemble_control::EnsembleState;

fn main() -> ensemble_control::Result<()> {
    let params = BuiltinParams { atoms: 8, a_offset: -1.0, a_slope: 2.0, ..Default::default() };
    let p = builtin("linear-ensemble", &params)?;
    let theta = p.dynamics.modulus().expect("builtin carries a modulus");
    let grid = TimeGrid::new(0.0, 1.0, 40)?;
    let controls = sample_controls(&p, &grid, 32, 1)?;
    let phi = EnsembleState::constant(8, &[1.0]);
    let radii: Vec<f64> = (1..=8).map(|k| k as f64 / 8.0).collect();
    let r = oscillation_diagnostic(&p, &phi, &controls, &radii)?;
    println!("{:>6} {:>14} {:>14} {:>8}", "r", "oscillation", "bound", "h(r)");
    for &(rad, osc) in &r.series {
        println!(
            "{rad:>6.3} {osc:>14.6e} {:>14.6e} {:>8.4}",
            p.space.total_mass() * theta(rad).powi(2),
            p.space.ball_mass(rad)?
        );
    }
    println!("{r}");
    Ok(())
}
