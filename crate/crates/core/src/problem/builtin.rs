//! Built-in problem library.
//!
//! | name                  | dynamics            | terminal cost          |
//! |-----------------------|---------------------|------------------------|
//! | `linear-ensemble`     | `ẋ = a(ω) x + u`    | `c(ω) Σ_k x_k`         |
//! | `decoupled-quadratic` | `ẋ = u`             | `|x − τ(ω)|²`          |
//! | `bilinear`            | `ẋ = u a(ω) x`      | `|x|²`                 |
//! | `static`              | `ẋ = 0`             | `|x − τ(ω)|²`          |
//!
//! Controls range over a tensor grid of `levels` points per axis on
//! `[-ρ, ρ]^m`. Per-atom coefficients default to affine functions of the
//! first atom coordinate, e.g. `a(ω) = a_offset + a_slope ω₁`.

use serde::{Deserialize, Serialize};

use super::{
    ControlSchedule, DynamicsSpec, ProblemSpec, TerminalCostSpec, ValidationBox,
};
use crate::ensemble::TimeGrid;
use crate::error::{Error, Result};
use crate::measure::{EnsembleState, ParameterSpace};

pub const BUILTIN_NAMES: [&str; 4] = ["linear-ensemble", "decoupled-quadratic", "bilinear", "static"];

/// Certificates must be positive; exact zeros are replaced by this.
const MIN_CERTIFICATE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuiltinParams {
    /// Number of atoms, evenly spaced on `omega` with equal weights.
    pub atoms: usize,
    pub omega: (f64, f64),
    pub mass: f64,
    pub dim: usize,
    pub horizon: f64,
    pub rho: f64,
    pub levels: usize,
    pub a: Option<Vec<f64>>,
    pub a_offset: f64,
    pub a_slope: f64,
    pub c: Option<Vec<f64>>,
    pub c_offset: f64,
    pub c_slope: f64,
    pub targets: Option<Vec<f64>>,
    pub target_offset: f64,
    pub target_slope: f64,
    /// Radius of the state ball sampled by the validators.
    pub state_radius: f64,
    /// Overrides `atoms`, `omega` and `mass` when set.
    #[serde(skip)]
    pub space: Option<ParameterSpace>,
}

impl Default for BuiltinParams {
    fn default() -> Self {
        Self {
            atoms: 2,
            omega: (0.0, 1.0),
            mass: 1.0,
            dim: 1,
            horizon: 1.0,
            rho: 1.0,
            levels: 3,
            a: None,
            a_offset: 0.0,
            a_slope: 1.0,
            c: None,
            c_offset: 1.0,
            c_slope: 0.0,
            targets: None,
            target_offset: 0.0,
            target_slope: 1.0,
            state_radius: 5.0,
            space: None,
        }
    }
}

impl BuiltinParams {
    fn space(&self) -> Result<ParameterSpace> {
        match &self.space {
            Some(s) => Ok(s.clone()),
            None => ParameterSpace::uniform_line(self.atoms, self.omega.0, self.omega.1, self.mass),
        }
    }

    fn per_atom(
        space: &ParameterSpace,
        explicit: &Option<Vec<f64>>,
        offset: f64,
        slope: f64,
        what: &str,
    ) -> Result<Vec<f64>> {
        match explicit {
            Some(v) if v.len() == space.len() => Ok(v.clone()),
            Some(v) => Err(Error::Dimension(format!(
                "{what} has {} entries for {} atoms",
                v.len(),
                space.len()
            ))),
            None => (0..space.len())
                .map(|i| match space.coords(i).first() {
                    Some(w) => Ok(offset + slope * w),
                    None if slope == 0.0 => Ok(offset),
                    None => Err(Error::Argument(format!(
                        "atom {i} has no coordinates; give `{what}` explicitly"
                    ))),
                })
                .collect(),
        }
    }
}

/// Smallest `L` with `|v_i − v_j| <= L d(ω_i, ω_j)` over all atom pairs.
fn lipschitz_in_omega(space: &ParameterSpace, v: &[f64]) -> Result<f64> {
    let mut l: f64 = 0.0;
    for i in 0..space.len() {
        for j in 0..i {
            let d = space.distance(i, j);
            let dv = (v[i] - v[j]).abs();
            if d == 0.0 {
                if dv > 0.0 {
                    return Err(Error::Argument(format!(
                        "atoms {j} and {i} are at distance 0 but carry different coefficients"
                    )));
                }
            } else {
                l = l.max(dv / d);
            }
        }
    }
    Ok(l)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn builtin(name: &str, params: &BuiltinParams) -> Result<ProblemSpec> {
    let space = params.space()?;
    let n = params.dim;
    if n == 0 {
        return Err(Error::Dimension("state dimension must be at least 1".into()));
    }
    if !(params.rho.is_finite() && params.rho >= 0.0) {
        return Err(Error::Argument(format!("rho must be nonnegative, got {}", params.rho)));
    }
    let horizon = params.horizon;
    let rho = params.rho;
    let radius = params.state_radius;
    let validation = ValidationBox {
        state_radius: radius,
    };
    match name {
        "linear-ensemble" => {
            let a = BuiltinParams::per_atom(&space, &params.a, params.a_offset, params.a_slope, "a")?;
            let c = BuiltinParams::per_atom(&space, &params.c, params.c_offset, params.c_slope, "c")?;
            let lip = lipschitz_in_omega(&space, &a)?;
            let amax = max_abs(&a);
            let growth = amax.max(rho * (n as f64).sqrt()).max(MIN_CERTIFICATE);
            let (af, aj) = (a.clone(), a.clone());
            let dynamics = DynamicsSpec::new(
                move |_, x, u, i, out| {
                    for k in 0..out.len() {
                        out[k] = af[i] * x[k] + u[k];
                    }
                },
                growth,
                amax.max(MIN_CERTIFICATE),
            )?
            .with_jacobian(move |_, x, _, i, dx, du| {
                let n = x.len();
                dx.fill(0.0);
                du.fill(0.0);
                for k in 0..n {
                    dx[k * n + k] = aj[i];
                    du[k * n + k] = 1.0;
                }
            })
            .with_modulus(move |r| horizon * lip * radius * r);
            let (cg, cd) = (c.clone(), c.clone());
            let cost = TerminalCostSpec::new(
                move |x, i| cg[i] * x.iter().sum::<f64>(),
                c.iter().map(|ci| -(n as f64) * ci * ci / 4.0).collect(),
                1.0,
            )?
            .with_gradient(move |_, i, out| out.fill(cd[i]));
            let controls = ControlSchedule::box_grid(horizon, n, rho, params.levels)?;
            let mut p = ProblemSpec::new(
                name, space, n, dynamics, cost, controls, horizon, validation,
            )?;
            p.closed_form = Some(LinearEnsembleClosedForm {
                a,
                c,
                weights: p.space.weights().to_vec(),
                rho,
                horizon,
                dim: n,
            });
            Ok(p)
        }
        "decoupled-quadratic" | "static" => {
            let tau = BuiltinParams::per_atom(
                &space,
                &params.targets,
                params.target_offset,
                params.target_slope,
                "targets",
            )?;
            let moving = name == "decoupled-quadratic";
            let (dynamics, controls) = if moving {
                let d = DynamicsSpec::new(
                    |_, _, u, _, out| out.copy_from_slice(u),
                    (rho * (n as f64).sqrt()).max(MIN_CERTIFICATE),
                    MIN_CERTIFICATE,
                )?
                .with_jacobian(|_, x, _, _, dx, du| {
                    let n = x.len();
                    dx.fill(0.0);
                    du.fill(0.0);
                    for k in 0..n {
                        du[k * n + k] = 1.0;
                    }
                });
                (d, ControlSchedule::box_grid(horizon, n, rho, params.levels)?)
            } else {
                let d = DynamicsSpec::new(
                    |_, _, _, _, out| out.fill(0.0),
                    MIN_CERTIFICATE,
                    MIN_CERTIFICATE,
                )?
                .with_jacobian(|_, _, _, _, dx, du| {
                    dx.fill(0.0);
                    du.fill(0.0);
                });
                (d, ControlSchedule::box_grid(horizon, 1, rho, params.levels)?)
            };
            let dynamics = dynamics.with_modulus(|_| 0.0).parameter_free();
            let (tg, td) = (tau.clone(), tau);
            let cost = TerminalCostSpec::new(
                move |x, i| x.iter().map(|v| (v - tg[i]) * (v - tg[i])).sum(),
                vec![0.0; space.len()],
                0.0,
            )?
            .with_gradient(move |x, i, out| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * (v - td[i]);
                }
            });
            ProblemSpec::new(name, space, n, dynamics, cost, controls, horizon, validation)
        }
        "bilinear" => {
            let a = BuiltinParams::per_atom(&space, &params.a, params.a_offset, params.a_slope, "a")?;
            let lip = lipschitz_in_omega(&space, &a)?;
            let bound = (rho * max_abs(&a)).max(MIN_CERTIFICATE);
            let (af, aj) = (a.clone(), a);
            let dynamics = DynamicsSpec::new(
                move |_, x, u, i, out| {
                    for k in 0..out.len() {
                        out[k] = u[0] * af[i] * x[k];
                    }
                },
                bound,
                bound,
            )?
            .with_jacobian(move |_, x, u, i, dx, du| {
                let n = x.len();
                dx.fill(0.0);
                for k in 0..n {
                    dx[k * n + k] = u[0] * aj[i];
                    du[k] = aj[i] * x[k];
                }
            })
            .with_modulus(move |r| horizon * rho * lip * radius * r);
            let cost = TerminalCostSpec::new(
                |x, _| x.iter().map(|v| v * v).sum(),
                vec![0.0; space.len()],
                0.0,
            )?
            .with_gradient(|x, _, out| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * v;
                }
            });
            let controls = ControlSchedule::box_grid(horizon, 1, rho, params.levels)?;
            ProblemSpec::new(name, space, n, dynamics, cost, controls, horizon, validation)
        }
        other => Err(Error::Lookup(other.to_string())),
    }
}

/// Closed-form solution of `linear-ensemble`.
///
/// The terminal state is `x_i(T) = e^{a_i(T−s)} φ_i + ∫_s^T e^{a_i(T−σ)} u(σ) dσ`,
/// so the cost is affine in `u` with per-component switching function
/// `ψ(σ) = Σ_i w_i c_i e^{a_i(T−σ)}`, and `u*(σ) = −ρ sign ψ(σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEnsembleClosedForm {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub weights: Vec<f64>,
    pub rho: f64,
    pub horizon: f64,
    pub dim: usize,
}

impl LinearEnsembleClosedForm {
    pub fn switching(&self, sigma: f64) -> f64 {
        self.terms()
            .map(|(w, a, c)| w * c * (a * (self.horizon - sigma)).exp())
            .sum()
    }

    fn terms(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.a)
            .zip(&self.c)
            .map(|((&w, &a), &c)| (w, a, c))
    }

    /// `u*(σ)`, the same in every component.
    pub fn optimal_control(&self, sigma: f64) -> f64 {
        let psi = self.switching(sigma);
        if psi > 0.0 {
            -self.rho
        } else if psi < 0.0 {
            self.rho
        } else {
            0.0
        }
    }

    /// `∫_{t0}^{t1} ψ(σ) dσ`, exact.
    pub fn switching_integral(&self, t0: f64, t1: f64) -> f64 {
        let big_t = self.horizon;
        self.terms()
            .map(|(w, a, c)| {
                let integral = if a == 0.0 {
                    t1 - t0
                } else {
                    // e^{a(T−t1)} (e^{a(t1−t0)} − 1) / a
                    (a * (big_t - t1)).exp() * (a * (t1 - t0)).exp_m1() / a
                };
                w * c * integral
            })
            .sum()
    }

    /// Cost contribution of the free drift, `Σ_i w_i c_i e^{a_i(T−s)} Σ_k φ_ik`.
    pub fn drift_cost(&self, s: f64, phi: &EnsembleState) -> f64 {
        self.terms()
            .enumerate()
            .map(|(i, (w, a, c))| w * c * (a * (self.horizon - s)).exp() * phi.atom(i).iter().sum::<f64>())
            .sum()
    }

    /// Cost of the ensemble driven by `u` from `(s, φ)`, exact flow.
    pub fn cost(&self, phi: &EnsembleState, grid: &TimeGrid, u: &[Vec<f64>]) -> f64 {
        let s = grid.start();
        let mut j = self.drift_cost(s, phi);
        for (step, uj) in u.iter().enumerate() {
            let psi = self.switching_integral(grid.node(step), grid.node(step + 1));
            j += psi * uj.iter().sum::<f64>();
        }
        j
    }

    /// Optimal piecewise-constant control on `grid`: `−ρ sign Ψ_j` with
    /// `Ψ_j` the integral of `ψ` over interval `j`. When `Ψ_j = 0` every
    /// value is optimal and `−ρ` (the first grid point) is returned.
    pub fn optimal_piecewise(&self, grid: &TimeGrid) -> Vec<Vec<f64>> {
        (0..grid.steps())
            .map(|j| {
                let psi = self.switching_integral(grid.node(j), grid.node(j + 1));
                let u = if psi < 0.0 { self.rho } else { -self.rho };
                vec![u; self.dim]
            })
            .collect()
    }

    /// Optimal cost over piecewise-constant controls on `grid`.
    pub fn value_piecewise(&self, phi: &EnsembleState, grid: &TimeGrid) -> f64 {
        let total: f64 = (0..grid.steps())
            .map(|j| self.switching_integral(grid.node(j), grid.node(j + 1)).abs())
            .sum();
        self.drift_cost(grid.start(), phi) - self.rho * self.dim as f64 * total
    }

    /// Optimal cost over measurable controls:
    /// `drift − ρ n ∫_s^T |ψ(σ)| dσ`. Sign changes of `ψ` are located by a
    /// fine scan and bisection; the pieces are integrated exactly.
    pub fn value(&self, s: f64, phi: &EnsembleState) -> f64 {
        const SCAN: usize = 4096;
        let big_t = self.horizon;
        let mut cuts = vec![s];
        let mut prev_t = s;
        let mut prev = self.switching(s);
        for q in 1..=SCAN {
            let t = s + (big_t - s) * q as f64 / SCAN as f64;
            let v = self.switching(t);
            if prev != 0.0 && v != 0.0 && prev.signum() != v.signum() {
                let (mut lo, mut hi) = (prev_t, t);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.switching(mid).signum() == prev.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                cuts.push(0.5 * (lo + hi));
            }
            prev_t = t;
            prev = v;
        }
        cuts.push(big_t);
        let total: f64 = cuts
            .windows(2)
            .map(|w| self.switching_integral(w[0], w[1]).abs())
            .sum();
        self.drift_cost(s, phi) - self.rho * self.dim as f64 * total
    }
}
