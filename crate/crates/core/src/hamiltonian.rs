//! The Hamiltonian `H(t, φ, p) = min_{u ∈ U(t)} ⟨p, f(t, φ(·), u, ·)⟩`,
//! evaluated by enumerating the finite active control set.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;

/// A costate, paired with ensemble velocities through the weighted L²
/// inner product of the parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Costate(pub EnsembleState);

impl Costate {
    pub fn zeros(atoms: usize, dim: usize) -> Self {
        Self(EnsembleState::zeros(atoms, dim))
    }

    pub fn state(&self) -> &EnsembleState {
        &self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }
}

impl From<EnsembleState> for Costate {
    fn from(s: EnsembleState) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HamiltonianValue {
    pub value: f64,
    pub minimizer: Vec<f64>,
    pub index: usize,
}

/// Minimum over the active control set; ties go to the lowest index.
pub fn hamiltonian(
    p: &ProblemSpec,
    t: f64,
    phi: &EnsembleState,
    costate: &Costate,
) -> Result<HamiltonianValue> {
    p.check_time(t)?;
    p.check_state(phi)?;
    p.check_state(&costate.0)?;
    let set = p.controls.active(t);
    if set.is_empty() {
        return Err(Error::Schedule(format!("no control values active at t = {t}")));
    }
    let n = p.state_dim;
    let mut v = vec![0.0; n];
    let mut best: Option<(f64, usize)> = None;
    for (k, u) in set.iter().enumerate() {
        let mut pairing = 0.0;
        for i in 0..phi.atoms() {
            p.dynamics.eval(t, phi.atom(i), u, i, &mut v);
            let pi = costate.0.atom(i);
            pairing += p.space.weight(i) * pi.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        }
        if best.is_none_or(|(b, _)| pairing < b) {
            best = Some((pairing, k));
        }
    }
    let (value, index) = best.expect("nonempty set");
    Ok(HamiltonianValue {
        value,
        minimizer: set[index].clone(),
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{Atom, Metric, ParameterSpace};
    use crate::problem::{
        builtin, BuiltinParams, ControlSchedule, DynamicsSpec, TerminalCostSpec, ValidationBox,
    };

    fn pure_control(weights: Vec<f64>) -> ProblemSpec {
        let atoms = (0..weights.len()).map(|i| Atom::new(format!("a{i}"))).collect();
        let m = weights.len();
        let d = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        let space = ParameterSpace::new(atoms, weights, Metric::Explicit(d)).unwrap();
        let dynamics = DynamicsSpec::new(|_, _, u, _, out| out[0] = u[0], 1.0, 1e-12).unwrap();
        let cost = TerminalCostSpec::new(|x, _| x[0], vec![-1.0; m], 1.0).unwrap();
        let controls =
            ControlSchedule::constant(1.0, vec![vec![-1.0], vec![1.0]], vec![(-1.0, 1.0)]).unwrap();
        let vb = ValidationBox { state_radius: 1.0 };
        ProblemSpec::new("u", space, 1, dynamics, cost, controls, 1.0, vb).unwrap()
    }

    #[test]
    fn zero_costate() {
        let p = pure_control(vec![0.5, 0.5]);
        let phi = EnsembleState::scalar(&[0.3, -2.0]).unwrap();
        let h = hamiltonian(&p, 0.2, &phi, &Costate::zeros(2, 1)).unwrap();
        assert_eq!((h.value, h.index), (0.0, 0));
    }

    #[test]
    fn velocity_equal_to_control() {
        let p = pure_control(vec![0.25, 0.75]);
        let phi = EnsembleState::scalar(&[0.0, 0.0]).unwrap();
        for (costate, sum) in [([2.0, -1.0], -0.25), ([1.0, 1.0], 1.0), ([3.0, -1.0], 0.0)] {
            let q = Costate(EnsembleState::scalar(&costate).unwrap());
            let h = hamiltonian(&p, 0.5, &phi, &q).unwrap();
            assert_eq!(h.value, -f64::abs(sum));
            let expected = if sum > 0.0 { -1.0 } else if sum < 0.0 { 1.0 } else { -1.0 };
            assert_eq!(h.minimizer, vec![expected]);
            if sum == 0.0 {
                assert_eq!(h.index, 0);
            }
        }
    }

    #[test]
    fn linear_ensemble_formula() {
        let params = BuiltinParams {
            atoms: 3,
            a_slope: 1.5,
            a_offset: -0.5,
            rho: 2.0,
            ..Default::default()
        };
        let p = builtin("linear-ensemble", &params).unwrap();
        let cf = p.closed_form.clone().unwrap();
        let phi = EnsembleState::scalar(&[0.4, -1.0, 2.0]).unwrap();
        let q = EnsembleState::scalar(&[1.0, -0.3, 0.6]).unwrap();
        let w = p.space.weights();
        let drift: f64 = (0..3).map(|i| w[i] * q.atom(i)[0] * cf.a[i] * phi.atom(i)[0]).sum();
        let mass: f64 = (0..3).map(|i| w[i] * q.atom(i)[0]).sum();
        let h = hamiltonian(&p, 0.1, &phi, &Costate(q)).unwrap();
        assert!((h.value - (drift - 2.0 * mass.abs())).abs() < 1e-12);
    }
}
