//! Problem data: dynamics, terminal cost, control schedule and the
//! user-declared regularity certificates, with sampling validators and a
//! library of built-in instances.

mod builtin;
mod file;
mod validate;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{EnsembleState, ParameterSpace};

pub use builtin::{builtin, BuiltinParams, LinearEnsembleClosedForm, BUILTIN_NAMES};
pub use file::{ProblemFile, PROBLEM_FORMAT};
pub use validate::{
    modulus_check, validate_cost_bound, validate_growth, validate_lipschitz, Pairing, Sample,
    ValidationReport,
};

/// `(t, x, u, atom, out)`: writes `f(t, x, u, ω_atom)` into `out`.
pub type FieldFn = dyn Fn(f64, &[f64], &[f64], usize, &mut [f64]) + Send + Sync;
/// `(t, x, u, atom, d_x, d_u)`: row-major Jacobians `n×n` and `n×m`.
pub type JacobianFn = dyn Fn(f64, &[f64], &[f64], usize, &mut [f64], &mut [f64]) + Send + Sync;
pub type CostFn = dyn Fn(&[f64], usize) -> f64 + Send + Sync;
pub type CostGradFn = dyn Fn(&[f64], usize, &mut [f64]) + Send + Sync;
pub type ModulusFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Velocity field with its growth and Lipschitz certificates and an
/// optional modulus of continuity in the parameter.
#[derive(Clone)]
pub struct DynamicsSpec {
    eval: Arc<FieldFn>,
    jacobian: Option<Arc<JacobianFn>>,
    pub growth_c: f64,
    pub lipschitz_k: f64,
    omega_modulus: Option<Arc<ModulusFn>>,
    /// Velocity does not depend on the parameter atom.
    pub parameter_free: bool,
}

impl DynamicsSpec {
    pub fn new(
        eval: impl Fn(f64, &[f64], &[f64], usize, &mut [f64]) + Send + Sync + 'static,
        growth_c: f64,
        lipschitz_k: f64,
    ) -> Result<Self> {
        check_certificate("growth constant c", growth_c)?;
        check_certificate("Lipschitz constant k", lipschitz_k)?;
        Ok(Self {
            eval: Arc::new(eval),
            jacobian: None,
            growth_c,
            lipschitz_k,
            omega_modulus: None,
            parameter_free: false,
        })
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(f64, &[f64], &[f64], usize, &mut [f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_modulus(mut self, theta: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.omega_modulus = Some(Arc::new(theta));
        self
    }

    pub fn parameter_free(mut self) -> Self {
        self.parameter_free = true;
        self
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], u: &[f64], atom: usize, out: &mut [f64]) {
        (self.eval)(t, x, u, atom, out)
    }

    pub fn jacobian(&self) -> Option<&JacobianFn> {
        self.jacobian.as_deref()
    }

    pub fn modulus(&self) -> Option<&ModulusFn> {
        self.omega_modulus.as_deref()
    }
}

/// Terminal cost `g(x, ω)` with the lower bound `g ≥ a(ω) − b|x|²`.
#[derive(Clone)]
pub struct TerminalCostSpec {
    eval: Arc<CostFn>,
    gradient: Option<Arc<CostGradFn>>,
    pub lower_bound_a: Vec<f64>,
    pub lower_bound_b: f64,
}

impl TerminalCostSpec {
    pub fn new(
        eval: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static,
        lower_bound_a: Vec<f64>,
        lower_bound_b: f64,
    ) -> Result<Self> {
        if !(lower_bound_b.is_finite() && lower_bound_b >= 0.0) {
            return Err(Error::Argument(format!(
                "lower bound b must be a nonnegative real, got {lower_bound_b}"
            )));
        }
        if lower_bound_a.iter().any(|a| !a.is_finite()) {
            return Err(Error::Argument("lower bound a(ω) must be finite".into()));
        }
        Ok(Self {
            eval: Arc::new(eval),
            gradient: None,
            lower_bound_a,
            lower_bound_b,
        })
    }

    pub fn with_gradient(
        mut self,
        grad: impl Fn(&[f64], usize, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Arc::new(grad));
        self
    }

    #[inline]
    pub fn eval(&self, x: &[f64], atom: usize) -> f64 {
        (self.eval)(x, atom)
    }

    pub fn gradient(&self) -> Option<&CostGradFn> {
        self.gradient.as_deref()
    }
}

fn check_certificate(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::Argument(format!(
            "certificate {name} must be a positive real, got {v}"
        )));
    }
    Ok(())
}

/// Piecewise-constant control constraint: on `[b_k, b_{k+1})` the control
/// ranges over a finite list of points inside a global box.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    breakpoints: Vec<f64>,
    sets: Vec<Vec<Vec<f64>>>,
    bounds: Vec<(f64, f64)>,
}

impl ControlSchedule {
    pub fn new(
        breakpoints: Vec<f64>,
        sets: Vec<Vec<Vec<f64>>>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Schedule("at least two breakpoints are required".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Schedule("breakpoints must be strictly increasing".into()));
        }
        if sets.len() != breakpoints.len() - 1 {
            return Err(Error::Schedule(format!(
                "{} control sets for {} intervals",
                sets.len(),
                breakpoints.len() - 1
            )));
        }
        if bounds.iter().any(|(lo, hi)| !(lo <= hi && lo.is_finite() && hi.is_finite())) {
            return Err(Error::Schedule("control box bounds must be finite with lo <= hi".into()));
        }
        let m = bounds.len();
        for (k, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Schedule(format!("control set on interval {k} is empty")));
            }
            for (j, p) in set.iter().enumerate() {
                if p.len() != m {
                    return Err(Error::Schedule(format!(
                        "control point {j} on interval {k} has dimension {}, expected {m}",
                        p.len()
                    )));
                }
                if p.iter().zip(&bounds).any(|(v, (lo, hi))| !(lo <= v && v <= hi)) {
                    return Err(Error::Schedule(format!(
                        "control point {j} on interval {k} lies outside the control box"
                    )));
                }
            }
        }
        Ok(Self {
            breakpoints,
            sets,
            bounds,
        })
    }

    /// One set for the whole horizon `[0, horizon]`.
    pub fn constant(horizon: f64, set: Vec<Vec<f64>>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![set], bounds)
    }

    /// Tensor grid of `levels` points per axis on `[-rho, rho]^m`, ordered
    /// lexicographically (last axis fastest). `levels = 1` gives `{0}`.
    pub fn box_grid(horizon: f64, m: usize, rho: f64, levels: usize) -> Result<Self> {
        if levels == 0 || m == 0 {
            return Err(Error::Schedule("box grid needs m >= 1 and levels >= 1".into()));
        }
        let axis: Vec<f64> = if levels == 1 {
            vec![0.0]
        } else {
            (0..levels)
                .map(|i| {
                    // exact endpoints and exact zero for odd level counts
                    let mid = (levels - 1) as f64 / 2.0;
                    rho * (i as f64 - mid) / mid
                })
                .collect()
        };
        let count = levels.pow(m as u32);
        let set = (0..count)
            .map(|mut idx| {
                let mut p = vec![0.0; m];
                for k in (0..m).rev() {
                    p[k] = axis[idx % levels];
                    idx /= levels;
                }
                p
            })
            .collect();
        Self::constant(horizon, set, vec![(-rho, rho); m])
    }

    pub fn control_dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn sets(&self) -> &[Vec<Vec<f64>>] {
        &self.sets
    }

    /// Control set active at time `t` (right-continuous; the last interval
    /// also covers its right endpoint and anything beyond).
    pub fn active(&self, t: f64) -> &[Vec<f64>] {
        let k = self.breakpoints[1..self.breakpoints.len() - 1]
            .iter()
            .take_while(|&&b| b <= t)
            .count();
        &self.sets[k]
    }

    pub fn max_set_size(&self) -> usize {
        self.sets.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn covers(&self, horizon: f64) -> bool {
        self.breakpoints[0] <= 0.0 && *self.breakpoints.last().unwrap() >= horizon
    }
}

/// Sampling domain used by the validators. Reports always carry it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationBox {
    /// States are sampled in the Euclidean ball `|x| <= state_radius`.
    pub state_radius: f64,
}

/// The average optimal control problem on `[0, horizon]`.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub space: Arc<ParameterSpace>,
    pub state_dim: usize,
    pub control_dim: usize,
    pub dynamics: DynamicsSpec,
    pub cost: TerminalCostSpec,
    pub controls: ControlSchedule,
    pub horizon: f64,
    pub validation: ValidationBox,
    pub closed_form: Option<LinearEnsembleClosedForm>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("atoms", &self.space.len())
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("horizon", &self.horizon)
            .field("growth_c", &self.dynamics.growth_c)
            .field("lipschitz_k", &self.dynamics.lipschitz_k)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        space: ParameterSpace,
        state_dim: usize,
        dynamics: DynamicsSpec,
        cost: TerminalCostSpec,
        controls: ControlSchedule,
        horizon: f64,
        validation: ValidationBox,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Argument(format!("horizon T must be positive, got {horizon}")));
        }
        if state_dim == 0 {
            return Err(Error::Dimension("state dimension must be at least 1".into()));
        }
        if !controls.covers(horizon) {
            return Err(Error::Schedule(format!(
                "control schedule does not cover [0, {horizon}]"
            )));
        }
        if cost.lower_bound_a.len() != space.len() {
            return Err(Error::Dimension(format!(
                "lower bound a(ω) has {} entries for {} atoms",
                cost.lower_bound_a.len(),
                space.len()
            )));
        }
        if !(validation.state_radius.is_finite() && validation.state_radius > 0.0) {
            return Err(Error::Argument("validation state radius must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            control_dim: controls.control_dim(),
            space: Arc::new(space),
            state_dim,
            dynamics,
            cost,
            controls,
            horizon,
            validation,
            closed_form: None,
        })
    }

    pub fn atoms(&self) -> usize {
        self.space.len()
    }

    /// Dimension of the stacked ensemble coordinates, `n·M`.
    pub fn stacked_dim(&self) -> usize {
        self.state_dim * self.space.len()
    }

    /// Dynamics and cost both carry derivatives.
    pub fn is_differentiable(&self) -> bool {
        self.dynamics.jacobian().is_some() && self.cost.gradient().is_some()
    }

    pub fn check_state(&self, phi: &EnsembleState) -> Result<()> {
        self.space.check_state(phi)?;
        if phi.dim() != self.state_dim {
            return Err(Error::Dimension(format!(
                "state dimension {} does not match problem dimension {}",
                phi.dim(),
                self.state_dim
            )));
        }
        Ok(())
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Argument(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Ensemble velocity `f(t, φ(·), u, ·)`.
    pub fn velocity(&self, t: f64, phi: &EnsembleState, u: &[f64]) -> EnsembleState {
        let n = self.state_dim;
        let mut out = EnsembleState::zeros(phi.atoms(), n);
        for i in 0..phi.atoms() {
            self.dynamics.eval(t, phi.atom(i), u, i, out.atom_mut(i));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_grid_ordering() {
        let s = ControlSchedule::box_grid(1.0, 2, 1.0, 3).unwrap();
        let set = s.active(0.3);
        assert_eq!(set.len(), 9);
        assert_eq!(set[0], vec![-1.0, -1.0]);
        assert_eq!(set[1], vec![-1.0, 0.0]);
        assert_eq!(set[4], vec![0.0, 0.0]);
        assert_eq!(set[8], vec![1.0, 1.0]);
        let one = ControlSchedule::box_grid(1.0, 1, 2.0, 1).unwrap();
        assert_eq!(one.active(0.0), &[vec![0.0]]);
    }

    #[test]
    fn schedule_active_is_right_continuous() {
        let s = ControlSchedule::new(
            vec![0.0, 0.5, 1.0],
            vec![vec![vec![-1.0]], vec![vec![1.0]]],
            vec![(-1.0, 1.0)],
        )
        .unwrap();
        assert_eq!(s.active(0.0), &[vec![-1.0]]);
        assert_eq!(s.active(0.4999), &[vec![-1.0]]);
        assert_eq!(s.active(0.5), &[vec![1.0]]);
        assert_eq!(s.active(1.0), &[vec![1.0]]);
    }

    #[test]
    fn schedule_rejects_bad_sets() {
        let b = vec![(-1.0, 1.0)];
        assert!(ControlSchedule::new(vec![0.0, 1.0], vec![vec![]], b.clone()).is_err());
        assert!(ControlSchedule::new(vec![0.0, 1.0], vec![vec![vec![2.0]]], b.clone()).is_err());
        assert!(ControlSchedule::new(vec![1.0, 0.0], vec![vec![vec![0.0]]], b.clone()).is_err());
        assert!(ControlSchedule::new(vec![0.0, 1.0], vec![vec![vec![0.0, 0.0]]], b).is_err());
    }

    #[test]
    fn certificates_must_be_positive() {
        assert!(DynamicsSpec::new(|_, _, _, _, _| {}, 0.0, 1.0).is_err());
        assert!(DynamicsSpec::new(|_, _, _, _, _| {}, 1.0, f64::NAN).is_err());
        assert!(TerminalCostSpec::new(|_, _| 0.0, vec![0.0], -1.0).is_err());
    }
}
