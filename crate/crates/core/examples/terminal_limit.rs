//! |V(T − δ, φ) − J(φ)| against δ, with the fitted slope next to the
//! Lipschitz constant derived from the trajectory estimates.

use ensemble_control::problem::{builtin, BuiltinParams};
use ensemble_control::value::DEFAULT_BUDGET;
use ensemble_control::verify::terminal_limit;
use ensemble_control::EnsembleState;

fn main() -> ensemble_control::Result<()> {
    let params = BuiltinParams { a: Some(vec![-0.4, 0.3]), c: Some(vec![1.0, 0.5]), ..Default::default() };
    let p = builtin("linear-ensemble", &params)?;
    let phi = EnsembleState::zeros(2, 1);
    let r = terminal_limit(&p, &phi, &[0.2, 0.1, 0.05, 0.025], 4, DEFAULT_BUDGET, 0)?;
    for (gap, diff) in &r.series {
        println!("δ = {gap:<6} |V − J| = {diff:.6e}  ratio {:.4}", diff / gap);
    }
    println!(
        "slope {:.4}, derived L {:.4}",
        r.metric("slope").unwrap_or(f64::NAN),
        r.metric("derived_L").unwrap_or(f64::NAN)
    );
    Ok(())
}
