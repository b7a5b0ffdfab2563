//! The value function `V(s, φ)` by exhaustive enumeration, by a
//! semi-Lagrangian backward sweep on a state grid, and by projected
//! adjoint descent, plus the two-stage dynamic-programming residual.

mod adjoint;
mod dp;
mod oracle;

use serde::{Deserialize, Serialize};

use crate::ensemble::{integrate, ControlSignal, TimeGrid};
use crate::error::{Error, Result};
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;

pub(crate) use oracle::advance;
pub use adjoint::{value_adjoint, AdjointConfig, AdjointResult};
pub use dp::{value_dp, Axis, ValueGrid, VALUE_GRID_MAGIC};
pub use oracle::{
    dpp_residual, enumerate_values, signal_count, value_oracle, value_oracle_with, DppResidual,
    OracleResult, DEFAULT_BUDGET,
};

/// `Σ_i w_i g(φ_i, ω_i)`. May be `+∞`.
pub fn terminal_functional(p: &ProblemSpec, phi: &EnsembleState) -> Result<f64> {
    p.check_state(phi)?;
    Ok((0..phi.atoms())
        .map(|i| p.space.weight(i) * p.cost.eval(phi.atom(i), i))
        .sum())
}

/// Terminal functional of the trajectory driven by `u` from `φ` at the
/// start of `u`'s grid, which must end at the horizon.
pub fn reduced_cost(p: &ProblemSpec, phi: &EnsembleState, u: &ControlSignal) -> Result<f64> {
    check_horizon(p, u.grid())?;
    let traj = integrate(p, phi, u)?;
    terminal_functional(p, traj.terminal())
}

pub(crate) fn check_horizon(p: &ProblemSpec, grid: &TimeGrid) -> Result<()> {
    if grid.end() != p.horizon {
        return Err(Error::Argument(format!(
            "time grid ends at {} but the horizon is {}",
            grid.end(),
            p.horizon
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Oracle,
    Dp,
    Adjoint,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Oracle, Method::Dp, Method::Adjoint];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Dp => "dp",
            Method::Adjoint => "adjoint",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Method::Oracle),
            "dp" => Ok(Method::Dp),
            "adjoint" => Ok(Method::Adjoint),
            other => Err(Error::Argument(format!(
                "unknown method `{other}` (oracle, dp, adjoint)"
            ))),
        }
    }
}

/// A single value request.
#[derive(Debug, Clone)]
pub struct ValueQuery {
    pub s: f64,
    pub phi: EnsembleState,
    pub method: Method,
    pub steps: usize,
    /// Per stacked coordinate; used by `dp` only.
    pub axes: Vec<Axis>,
    pub budget: u64,
    pub adjoint: AdjointConfig,
}

impl ValueQuery {
    pub fn new(s: f64, phi: EnsembleState, method: Method, steps: usize) -> Self {
        Self {
            s,
            phi,
            method,
            steps,
            axes: Vec::new(),
            budget: DEFAULT_BUDGET,
            adjoint: AdjointConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValueAnswer {
    pub value: f64,
    /// Absent for `dp`, which answers from its table.
    pub control: Option<ControlSignal>,
}

pub fn solve(p: &ProblemSpec, q: &ValueQuery) -> Result<ValueAnswer> {
    p.check_time(q.s)?;
    p.check_state(&q.phi)?;
    if q.s == p.horizon {
        return Ok(ValueAnswer {
            value: terminal_functional(p, &q.phi)?,
            control: None,
        });
    }
    let grid = TimeGrid::new(q.s, p.horizon, q.steps)?;
    match q.method {
        Method::Oracle => {
            let r = value_oracle_with(p, &q.phi, &grid, q.budget)?;
            Ok(ValueAnswer {
                value: r.value,
                control: Some(r.best),
            })
        }
        Method::Adjoint => {
            let r = value_adjoint(p, &q.phi, &grid, &q.adjoint)?;
            Ok(ValueAnswer {
                value: r.value,
                control: Some(r.control),
            })
        }
        Method::Dp => {
            let vg = value_dp(p, &q.axes, &grid)?;
            Ok(ValueAnswer {
                value: vg.value_at(0, &q.phi)?,
                control: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin, BuiltinParams};

    #[test]
    fn terminal_functional_examples() {
        let params = BuiltinParams {
            c: Some(vec![1.0, 2.0]),
            space: Some(
                crate::measure::ParameterSpace::new(
                    vec![crate::measure::Atom::new("a"), crate::measure::Atom::new("b")],
                    vec![0.25, 0.75],
                    crate::measure::Metric::Explicit(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
                )
                .unwrap(),
            ),
            a: Some(vec![0.0, 0.0]),
            ..Default::default()
        };
        let p = builtin("linear-ensemble", &params).unwrap();
        let phi = EnsembleState::scalar(&[2.0, -1.0]).unwrap();
        assert_eq!(terminal_functional(&p, &phi).unwrap(), -1.0);

        let b = builtin("bilinear", &BuiltinParams::default()).unwrap();
        let phi = EnsembleState::scalar(&[3.0, 4.0]).unwrap();
        // weights 0.5 each: 0.5·9 + 0.5·16, the squared norm
        let norm = b.space.norm(&phi).unwrap();
        assert!((terminal_functional(&b, &phi).unwrap() - norm * norm).abs() < 1e-12);
    }

    #[test]
    fn reduced_cost_linear_flow() {
        let params = BuiltinParams {
            atoms: 3,
            a_slope: 0.0,
            c_slope: 1.0,
            ..Default::default()
        };
        let p = builtin("linear-ensemble", &params).unwrap();
        let phi = EnsembleState::scalar(&[0.5, -1.0, 2.0]).unwrap();
        let grid = TimeGrid::new(0.25, 1.0, 7).unwrap();
        let u = ControlSignal::constant(grid, &[0.6]);
        let j = reduced_cost(&p, &phi, &u).unwrap();
        let cf = p.closed_form.unwrap();
        let expected: f64 = (0..3)
            .map(|i| p.space.weight(i) * cf.c[i] * (phi.atom(i)[0] + 0.75 * 0.6))
            .sum();
        assert!((j - expected).abs() < 1e-12);
    }

    #[test]
    fn reduced_cost_steering_to_targets() {
        let params = BuiltinParams {
            target_slope: 0.0,
            target_offset: 1.0,
            rho: 2.0,
            ..Default::default()
        };
        let p = builtin("decoupled-quadratic", &params).unwrap();
        let grid = TimeGrid::new(0.5, 1.0, 4).unwrap();
        // τ − φ is the same on both atoms, so one control steers both.
        let phi = EnsembleState::scalar(&[0.5, 0.5]).unwrap();
        let u = ControlSignal::constant(grid, &[1.0]);
        assert!(reduced_cost(&p, &phi, &u).unwrap().abs() < 1e-24);
    }

    #[test]
    fn solve_at_horizon_is_terminal() {
        let p = builtin("bilinear", &BuiltinParams::default()).unwrap();
        let phi = EnsembleState::scalar(&[1.0, 2.0]).unwrap();
        for m in Method::ALL {
            let a = solve(&p, &ValueQuery::new(1.0, phi.clone(), m, 4)).unwrap();
            assert_eq!(a.value, terminal_functional(&p, &phi).unwrap());
        }
    }
}
