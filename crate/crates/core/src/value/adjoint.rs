//! Projected gradient descent on the discretized control, with the
//! gradient of the RK4-discretized cost obtained by reverse sweeps through
//! the Runge–Kutta stages of every atom.

use rayon::prelude::*;
use serde::Serialize;

use super::{check_horizon, reduced_cost};
use crate::ensemble::{ControlSignal, TimeGrid};
use crate::error::{Error, Result};
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;

const PAR_MIN_ATOMS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjointConfig {
    /// Cap on objective evaluations (accepted plus rejected steps).
    pub iterations: usize,
    /// Stop once a projected step moves the control by at most this much.
    pub step_tol: f64,
}

impl Default for AdjointConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            step_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AdjointResult {
    /// Best objective found; an upper bound on the value over the hull.
    pub value: f64,
    pub control: ControlSignal,
    /// Accepted descent steps.
    pub iterations: usize,
    /// Objective after each accepted step, starting from the initial guess.
    pub history: Vec<f64>,
    /// Every interval's control is a point of the finite control set; when
    /// false the control uses the convex hull and may beat the oracle.
    pub on_set: bool,
}

/// Projected descent from the centroid of each interval's control set.
pub fn value_adjoint(
    p: &ProblemSpec,
    phi: &EnsembleState,
    grid: &TimeGrid,
    cfg: &AdjointConfig,
) -> Result<AdjointResult> {
    if !p.is_differentiable() {
        return Err(Error::Capability(format!(
            "`{}` does not declare derivatives of its dynamics and cost",
            p.name
        )));
    }
    p.check_state(phi)?;
    check_horizon(p, grid)?;
    let steps = grid.steps();
    let hulls: Vec<Hull> = (0..steps)
        .map(|j| Hull::new(p.controls.active(grid.node(j))))
        .collect::<Result<_>>()?;

    let mut u: Vec<Vec<f64>> = hulls.iter().map(Hull::centroid).collect();
    let signal = |u: &Vec<Vec<f64>>| ControlSignal::new(*grid, u.clone());
    let mut value = reduced_cost(p, phi, &signal(&u)?)?;
    let mut grad = gradient(p, phi, grid, &u)?;
    let mut history = vec![value];
    let span = hulls.iter().map(Hull::span).fold(0.0, f64::max);
    let gmax = grad.iter().flatten().fold(0.0_f64, |m, g| m.max(g.abs()));
    let mut alpha = if gmax > 0.0 { span / gmax } else { 0.0 };
    let mut accepted = 0;

    for _ in 0..cfg.iterations {
        if alpha == 0.0 || !alpha.is_finite() {
            break;
        }
        let cand: Vec<Vec<f64>> = u
            .iter()
            .zip(&grad)
            .zip(&hulls)
            .map(|((uj, gj), h)| {
                let y: Vec<f64> = uj.iter().zip(gj).map(|(a, g)| a - alpha * g).collect();
                h.project(&y)
            })
            .collect();
        let moved = cand
            .iter()
            .flatten()
            .zip(u.iter().flatten())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if moved <= cfg.step_tol {
            break;
        }
        let trial = reduced_cost(p, phi, &signal(&cand)?)?;
        if trial < value {
            u = cand;
            value = trial;
            grad = gradient(p, phi, grid, &u)?;
            history.push(value);
            accepted += 1;
            alpha *= 2.0;
        } else {
            alpha *= 0.5;
        }
    }

    let on_set = u.iter().enumerate().all(|(j, uj)| {
        p.controls.active(grid.node(j)).iter().any(|v| v == uj)
    });
    Ok(AdjointResult {
        value,
        control: signal(&u)?,
        iterations: accepted,
        history,
        on_set,
    })
}

/// Gradient of the discretized cost with respect to each interval's
/// control value, `steps × m`.
pub(crate) fn gradient(
    p: &ProblemSpec,
    phi: &EnsembleState,
    grid: &TimeGrid,
    u: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let m = p.control_dim;
    let per_atom = |i: usize| atom_gradient(p, phi.atom(i), i, grid, u);
    let parts: Vec<Vec<f64>> = if phi.atoms() >= PAR_MIN_ATOMS {
        (0..phi.atoms()).into_par_iter().map(per_atom).collect()
    } else {
        (0..phi.atoms()).map(per_atom).collect()
    };
    let mut total = vec![0.0; grid.steps() * m];
    for part in &parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    if total.iter().any(|g| !g.is_finite()) {
        return Err(Error::Argument("non-finite cost gradient".into()));
    }
    Ok(total.chunks(m.max(1)).map(<[f64]>::to_vec).collect())
}

fn atom_gradient(
    p: &ProblemSpec,
    x0: &[f64],
    atom: usize,
    grid: &TimeGrid,
    u: &[Vec<f64>],
) -> Vec<f64> {
    let n = x0.len();
    let m = p.control_dim;
    let steps = grid.steps();
    let h = grid.step();
    let f = &p.dynamics;
    let jac = f.jacobian().expect("checked differentiable");

    // Stage inputs y1..y4 for every step; y1 is the node state.
    let mut stages = vec![0.0; steps * 4 * n];
    let mut x = x0.to_vec();
    let mut k = vec![vec![0.0; n]; 4];
    for j in 0..steps {
        let t = grid.node(j);
        let base = j * 4 * n;
        let times = [t, t + 0.5 * h, t + 0.5 * h, t + h];
        let coef = [0.0, 0.5 * h, 0.5 * h, h];
        for s in 0..4 {
            let y: Vec<f64> = if s == 0 {
                x.clone()
            } else {
                x.iter().zip(&k[s - 1]).map(|(a, b)| a + coef[s] * b).collect()
            };
            f.eval(times[s], &y, &u[j], atom, &mut k[s]);
            stages[base + s * n..base + (s + 1) * n].copy_from_slice(&y);
        }
        let sixth = h / 6.0;
        for c in 0..n {
            x[c] += sixth * (k[0][c] + 2.0 * k[1][c] + 2.0 * k[2][c] + k[3][c]);
        }
    }

    let mut lambda = vec![0.0; n];
    (p.cost.gradient().expect("checked differentiable"))(&x, atom, &mut lambda);
    let w = p.space.weight(atom);
    lambda.iter_mut().for_each(|l| *l *= w);

    let b = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
    let back = [0.0, 0.5 * h, 0.5 * h, h];
    let mut grad = vec![0.0; steps * m];
    let mut dx = vec![0.0; n * n];
    let mut du = vec![0.0; n * m];
    let mut kappa = vec![0.0; n];
    let mut mu = vec![0.0; n];
    for j in (0..steps).rev() {
        let t = grid.node(j);
        let times = [t, t + 0.5 * h, t + 0.5 * h, t + h];
        let base = j * 4 * n;
        let mut next_lambda = lambda.clone();
        mu.fill(0.0);
        for s in (0..4).rev() {
            // κ_s = b_s λ + c_{s+1} h μ_{s+1}
            for c in 0..n {
                kappa[c] = b[s] * lambda[c] + if s < 3 { back[s + 1] * mu[c] } else { 0.0 };
            }
            let y = &stages[base + s * n..base + (s + 1) * n];
            jac(times[s], y, &u[j], atom, &mut dx, &mut du);
            for c in 0..n {
                mu[c] = (0..n).map(|r| dx[r * n + c] * kappa[r]).sum();
                next_lambda[c] += mu[c];
            }
            for c in 0..m {
                grad[j * m + c] += (0..n).map(|r| du[r * m + c] * kappa[r]).sum::<f64>();
            }
        }
        lambda = next_lambda;
    }
    grad
}

/// Convex hull of a finite control set.
struct Hull {
    points: Vec<Vec<f64>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    is_box: bool,
}

impl Hull {
    fn new(points: &[Vec<f64>]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Schedule("empty control set".into()))?;
        let m = first.len();
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in points {
            for c in 0..m {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        let is_box = m <= 16
            && (0..1usize << m).all(|mask| {
                let corner: Vec<f64> = (0..m)
                    .map(|c| if mask >> c & 1 == 1 { hi[c] } else { lo[c] })
                    .collect();
                points.contains(&corner)
            });
        Ok(Self {
            points: points.to_vec(),
            lo,
            hi,
            is_box,
        })
    }

    fn centroid(&self) -> Vec<f64> {
        let k = self.points.len() as f64;
        let mut c = vec![0.0; self.lo.len()];
        for p in &self.points {
            for (a, b) in c.iter_mut().zip(p) {
                *a += b / k;
            }
        }
        self.project(&c)
    }

    fn span(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .fold(0.0_f64, |m, (a, b)| m.max(b - a))
    }

    fn project(&self, y: &[f64]) -> Vec<f64> {
        if self.is_box {
            return y
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .map(|(v, (a, b))| v.clamp(*a, *b))
                .collect();
        }
        // min ‖Σ λ_k v_k − y‖² over the simplex, by projected gradient.
        let k = self.points.len();
        let lip: f64 = self.points.iter().map(|v| v.iter().map(|a| a * a).sum::<f64>()).sum();
        let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
        let mut lambda = vec![1.0 / k as f64; k];
        let combine = |l: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; y.len()];
            for (lk, v) in l.iter().zip(&self.points) {
                for (o, a) in out.iter_mut().zip(v) {
                    *o += lk * a;
                }
            }
            out
        };
        for _ in 0..2000 {
            let r: Vec<f64> = combine(&lambda).iter().zip(y).map(|(a, b)| a - b).collect();
            let moved: Vec<f64> = lambda
                .iter()
                .zip(&self.points)
                .map(|(l, v)| l - step * v.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let next = simplex_projection(&moved);
            let delta = next
                .iter()
                .zip(&lambda)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            lambda = next;
            if delta < 1e-15 {
                break;
            }
        }
        combine(&lambda)
    }
}

fn simplex_projection(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &x) in s.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin, BuiltinParams, ControlSchedule};
    use crate::value::{terminal_functional, value_oracle};

    #[test]
    fn static_problem_needs_no_steps() {
        let p = builtin("static", &BuiltinParams::default()).unwrap();
        let phi = EnsembleState::scalar(&[0.3, 2.0]).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 6).unwrap();
        let r = value_adjoint(&p, &phi, &grid, &AdjointConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.value, terminal_functional(&p, &phi).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let params = BuiltinParams {
            atoms: 3,
            a_slope: 1.2,
            ..Default::default()
        };
        let p = builtin("bilinear", &params).unwrap();
        let phi = EnsembleState::scalar(&[0.4, -0.8, 1.1]).unwrap();
        let grid = TimeGrid::new(0.2, 1.0, 5).unwrap();
        let u: Vec<Vec<f64>> = [0.3, -0.1, 0.7, 0.0, -0.5].iter().map(|&v| vec![v]).collect();
        let g = gradient(&p, &phi, &grid, &u).unwrap();
        let cost = |u: &Vec<Vec<f64>>| {
            reduced_cost(&p, &phi, &ControlSignal::new(grid, u.clone()).unwrap()).unwrap()
        };
        for j in 0..5 {
            let eps = 1e-6;
            let mut up = u.clone();
            let mut dn = u.clone();
            up[j][0] += eps;
            dn[j][0] -= eps;
            let fd = (cost(&up) - cost(&dn)) / (2.0 * eps);
            assert!((fd - g[j][0]).abs() < 1e-7, "interval {j}: {fd} vs {}", g[j][0]);
        }
    }

    #[test]
    fn recovers_bang_bang_on_linear_ensemble() {
        let params = BuiltinParams {
            atoms: 3,
            a_offset: -0.4,
            a_slope: 0.8,
            c_offset: 1.0,
            c_slope: 0.5,
            rho: 1.5,
            ..Default::default()
        };
        let p = builtin("linear-ensemble", &params).unwrap();
        let cf = p.closed_form.clone().unwrap();
        let phi = EnsembleState::scalar(&[0.2, -0.6, 1.0]).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let r = value_adjoint(&p, &phi, &grid, &AdjointConfig::default()).unwrap();
        assert!((r.value - cf.value_piecewise(&phi, &grid)).abs() < 1e-6);
        assert_eq!(r.control.values(), &cf.optimal_piecewise(&grid)[..]);
        assert!(r.on_set);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn not_below_oracle_on_box_sets() {
        let p = builtin("bilinear", &BuiltinParams::default()).unwrap();
        let phi = EnsembleState::scalar(&[1.0, -0.5]).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let oracle = value_oracle(&p, &phi, &grid).unwrap().value;
        let r = value_adjoint(&p, &phi, &grid, &AdjointConfig::default()).unwrap();
        // The hull is larger than the three-point set, so only a small
        // undershoot is possible.
        assert!(r.value >= oracle - 0.05, "{} vs {oracle}", r.value);
    }

    #[test]
    fn projection_onto_triangle() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let hull = Hull::new(&pts).unwrap();
        assert!(!hull.is_box);
        let q = hull.project(&[1.0, 1.0]);
        assert!((q[0] - 0.5).abs() < 1e-9 && (q[1] - 0.5).abs() < 1e-9);
        let inside = hull.project(&[0.2, 0.3]);
        assert!((inside[0] - 0.2).abs() < 1e-9 && (inside[1] - 0.3).abs() < 1e-9);
        let boxed = Hull::new(&ControlSchedule::box_grid(1.0, 2, 1.0, 3).unwrap().sets()[0]).unwrap();
        assert!(boxed.is_box);
        assert_eq!(boxed.project(&[3.0, -0.2]), vec![1.0, -0.2]);
    }

    #[test]
    fn capability_required() {
        let p = builtin("static", &BuiltinParams::default()).unwrap();
        let mut q = p.clone();
        q.cost = crate::problem::TerminalCostSpec::new(|x, _| x[0], vec![-1.0; 2], 1.0).unwrap();
        let phi = EnsembleState::scalar(&[0.0, 0.0]).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        assert!(matches!(
            value_adjoint(&q, &phi, &grid, &AdjointConfig::default()),
            Err(Error::Capability(_))
        ));
    }
}
