//! Atom spaces: weights, the weighted L² pairing, open balls and their
//! averages.
//!
//! cargo run --example measure_space

use ensemble_control::measure::{Atom, Metric, ParameterSpace};
use ensemble_control::{EnsembleState, Result};

fn main() -> Result<()> {
    let space = ParameterSpace::new(
        (0..5).map(|i| Atom::with_coords(format!("w{i}"), vec![i as f64 * 0.25])).collect(),
        vec![0.1, 0.2, 0.4, 0.2, 0.1],
        Metric::Euclidean,
    )?;
    println!("mass {}  diameter {}", space.total_mass(), space.diameter());

    let field = EnsembleState::scalar(&[1.0, 0.0, -1.0, 0.0, 1.0])?;
    println!("‖F‖ = {:.6}", space.norm(&field)?);

    println!("{:>6} {:>8} {:>12}", "r", "h(r)", "osc(F, r)");
    for r in [0.1, 0.3, 0.6, 1.2] {
        let avg = space.ball_average(&field, r)?;
        let osc = space.distance_l2(&field, &avg)?.powi(2);
        println!("{r:>6} {:>8.3} {osc:>12.6}", space.ball_mass(r)?);
    }

    print!("{}", space.to_toml_string());
    Ok(())
}
