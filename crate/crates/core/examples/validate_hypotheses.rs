//! Spot-check the structural hypotheses of each builtin: growth, Lipschitz
//! continuity in the state, the affine lower bound on the cost and the
//! modulus of continuity in the parameter.

use ensemble_control::problem::{
    builtin, modulus_check, validate_cost_bound, validate_growth, validate_lipschitz, BuiltinParams,
    Pairing, BUILTIN_NAMES,
};

fn main() -> ensemble_control::Result<()> {
    let params = BuiltinParams { atoms: 4, ..Default::default() };
    for name in BUILTIN_NAMES {
        let p = builtin(name, &params)?;
        println!("== {name}");
        println!("{}", validate_growth(&p, 2000, 0));
        println!("{}", validate_lipschitz(&p, 2000, 0));
        println!("{}", validate_cost_bound(&p, 2000, 0));
        match modulus_check(&p, 64, Pairing::Shared, 0) {
            Ok(r) => println!("{r}"),
            Err(e) => println!("modulus: {e}"),
        }
    }
    Ok(())
}
