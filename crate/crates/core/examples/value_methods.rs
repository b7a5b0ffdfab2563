//! The value function three ways on the linear ensemble, next to its
//! closed form.
//!
//! Enumeration is exact on its grid but exponential in the step count. The
//! semi-Lagrangian table is first order in `Δt + Δz`. Adjoint descent
//! finds a local optimum of the discretized cost.

use std::time::Instant;

use ensemble_control::ensemble::TimeGrid;
use ensemble_control::problem::{builtin, BuiltinParams};
use ensemble_control::value::{value_adjoint, value_dp, value_oracle, AdjointConfig, Axis};
use ensemble_control::EnsembleState;

fn main() -> ensemble_control::Result<()> {
    let params = BuiltinParams { a: Some(vec![-0.4, 0.3]), c: Some(vec![1.0, 0.5]), ..Default::default() };
    let p = builtin("linear-ensemble", &params)?;
    let cf = p.closed_form.clone().expect("linear ensemble has a closed form");
    let phi = EnsembleState::scalar(&[0.4, -0.7])?;

    println!("closed form  {:.10}", cf.value(0.0, &phi));

    let clock = Instant::now();
    let r = value_oracle(&p, &phi, &TimeGrid::new(0.0, 1.0, 8)?)?;
    println!("oracle       {:.10}  ({} signals, {:?})", r.value, r.evaluated, clock.elapsed());

    let clock = Instant::now();
    let grid = TimeGrid::new(0.0, 1.0, 100)?;
    let vg = value_dp(&p, &[Axis::new(-4.0, 4.0, 81)?; 2], &grid)?;
    println!("dp           {:.10}  ({:?})", vg.value_at(0, &phi)?, clock.elapsed());
    for w in vg.warnings() {
        println!("  warning: {w}");
    }

    let clock = Instant::now();
    let a = value_adjoint(&p, &phi, &TimeGrid::new(0.0, 1.0, 20)?, &AdjointConfig::default())?;
    println!("adjoint      {:.10}  ({} iterations, {:?})", a.value, a.iterations, clock.elapsed());
    Ok(())
}
