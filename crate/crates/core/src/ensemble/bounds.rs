//! Explicit Grönwall constants for the trajectory estimates and a
//! randomized suite that checks them on integrated trajectories.
//!
//! With `|f| <= c(1 + |x|)` and `f` `k`-Lipschitz in `x`, per atom
//! `1 + |x(t)| <= (1 + |φ|) e^{c(t−s)}`, which gives, in the weighted L²
//! norm and with `Δ = t − s`:
//!
//! 1. `‖x_{s,φ}(t)‖ <= e^{cΔ} (‖φ‖ + cΔ μ(Ω)^{1/2})`
//! 2. `‖x_{s,φ}(t) − x_{s,φ̄}(t)‖ <= e^{kΔ} ‖φ − φ̄‖`
//! 3. `‖x_{τ,φ}(t) − x_{s,φ}(t)‖ <= c e^{c(τ−s)} e^{k(t−τ)} (μ(Ω)^{1/2} + ‖φ‖)(τ − s)`
//! 4. `‖x_{s,φ}(t) − x_{s,φ}(τ)‖ <= c e^{c(t−s)} (μ(Ω)^{1/2} + ‖φ‖)(t − τ)`
//!
//! (3) follows from (4) at `t = τ` propagated by (2).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{integrate, ControlSignal, TimeGrid};
use crate::error::Result;
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallBounds {
    pub growth_c: f64,
    pub lipschitz_k: f64,
    pub mass: f64,
}

impl GronwallBounds {
    pub fn for_problem(p: &ProblemSpec) -> Self {
        Self {
            growth_c: p.dynamics.growth_c,
            lipschitz_k: p.dynamics.lipschitz_k,
            mass: p.space.total_mass(),
        }
    }

    /// Bound 1, `elapsed = t − s`.
    pub fn norm(&self, elapsed: f64, datum_norm: f64) -> f64 {
        let c = self.growth_c;
        (c * elapsed).exp() * (datum_norm + c * elapsed * self.mass.sqrt())
    }

    /// Bound 2 factor.
    pub fn flow_lipschitz(&self, elapsed: f64) -> f64 {
        (self.lipschitz_k * elapsed).exp()
    }

    /// Bound 3.
    pub fn time_shift(&self, shift: f64, after: f64, datum_norm: f64) -> f64 {
        let c = self.growth_c;
        c * (c * shift).exp()
            * (self.lipschitz_k * after).exp()
            * (self.mass.sqrt() + datum_norm)
            * shift
    }

    /// Bound 4, `elapsed = t − s`, `increment = t − τ`.
    pub fn time_increment(&self, elapsed: f64, increment: f64, datum_norm: f64) -> f64 {
        let c = self.growth_c;
        c * (c * elapsed).exp() * (self.mass.sqrt() + datum_norm) * increment
    }

    /// Pointwise radius `(|φ_i| + cΔ) e^{cΔ}` bounding `|x_i(t)|`.
    pub fn atom_radius(&self, elapsed: f64, datum_abs: f64) -> f64 {
        let c = self.growth_c;
        (datum_abs + c * elapsed) * (c * elapsed).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    Norm,
    InitialData,
    TimeShift,
    TimeIncrement,
}

impl BoundKind {
    pub const ALL: [BoundKind; 4] = [
        BoundKind::Norm,
        BoundKind::InitialData,
        BoundKind::TimeShift,
        BoundKind::TimeIncrement,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BoundKind::Norm => "(1) norm growth",
            BoundKind::InitialData => "(2) initial-data Lipschitz",
            BoundKind::TimeShift => "(3) start-time shift",
            BoundKind::TimeIncrement => "(4) time increment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundWitness {
    pub trial: usize,
    pub s: f64,
    pub tau: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub kind: BoundKind,
    /// Largest `lhs / rhs` seen.
    pub worst_ratio: f64,
    pub witness: Option<BoundWitness>,
    pub violations: usize,
}

impl BoundCheck {
    fn new(kind: BoundKind) -> Self {
        Self {
            kind,
            worst_ratio: 0.0,
            witness: None,
            violations: 0,
        }
    }

    fn observe(&mut self, w: BoundWitness, limit: f64) {
        let ratio = ratio(w.lhs, w.rhs);
        if !(ratio <= limit) {
            self.violations += 1;
        }
        if ratio > self.worst_ratio || ratio.is_nan() || self.witness.is_none() {
            self.worst_ratio = ratio;
            self.witness = Some(w);
        }
    }

    fn merge(&mut self, other: &BoundCheck) {
        self.violations += other.violations;
        if other.worst_ratio > self.worst_ratio || self.witness.is_none() {
            self.worst_ratio = other.worst_ratio;
            self.witness = other.witness;
        }
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs <= 1e-300 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub name: String,
    pub trials: usize,
    pub steps: usize,
    pub slack: f64,
    pub seed: u64,
    pub constants: GronwallBounds,
    pub checks: Vec<BoundCheck>,
    pub passed: bool,
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} trials, N = {}, slack {} -> {}",
            self.name,
            self.trials,
            self.steps,
            self.slack,
            if self.passed { "pass" } else { "FAIL" }
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<28} worst ratio {:.6} violations {}",
                c.kind.label(),
                c.worst_ratio,
                c.violations
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateConfig {
    pub steps: usize,
    /// Discretization slack `ε`: bounds must hold up to a factor `1 + ε`.
    pub slack: f64,
    pub seed: u64,
    /// Initial data are drawn per component in `[-r, r]`.
    pub datum_radius: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            slack: 0.05,
            seed: 0,
            datum_radius: 1.0,
        }
    }
}

/// Checks the four trajectory estimates on `trials` random draws of
/// `(s, τ, φ, φ̄, u)`. Times are nodes of a uniform grid on `[0, T]`;
/// controls pick uniformly from the active control set.
pub fn estimate_suite(p: &ProblemSpec, trials: usize, cfg: &EstimateConfig) -> Result<PropertyReport> {
    let grid = TimeGrid::new(0.0, p.horizon, cfg.steps)?;
    let bounds = GronwallBounds::for_problem(p);
    let limit = 1.0 + cfg.slack;

    let per_trial: Vec<Result<[BoundCheck; 4]>> = (0..trials)
        .into_par_iter()
        .map(|trial| run_trial(p, &grid, &bounds, cfg, limit, trial))
        .collect();

    let mut checks = BoundKind::ALL.map(BoundCheck::new);
    for r in per_trial {
        let r = r?;
        for (acc, c) in checks.iter_mut().zip(&r) {
            acc.merge(c);
        }
    }
    let passed = checks.iter().all(|c| c.violations == 0);
    Ok(PropertyReport {
        name: format!("trajectory estimates on `{}`", p.name),
        trials,
        steps: cfg.steps,
        slack: cfg.slack,
        seed: cfg.seed,
        constants: bounds,
        checks: checks.to_vec(),
        passed,
    })
}

fn random_state(rng: &mut ChaCha8Rng, atoms: usize, dim: usize, r: f64) -> EnsembleState {
    let values = (0..atoms * dim).map(|_| rng.gen_range(-r..=r)).collect();
    EnsembleState::from_flat(atoms, dim, values).expect("finite draw")
}

fn run_trial(
    p: &ProblemSpec,
    grid: &TimeGrid,
    b: &GronwallBounds,
    cfg: &EstimateConfig,
    limit: f64,
    trial: usize,
) -> Result<[BoundCheck; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64);
    let n_steps = grid.steps();
    let s_idx = rng.gen_range(0..n_steps);
    let tau_idx = rng.gen_range(s_idx..n_steps);
    let phi = random_state(&mut rng, p.atoms(), p.state_dim, cfg.datum_radius);
    let phi_bar = random_state(&mut rng, p.atoms(), p.state_dim, cfg.datum_radius);
    let indices: Vec<usize> = (0..n_steps)
        .map(|j| rng.gen_range(0..p.controls.active(grid.node(j)).len()))
        .collect();
    let u = ControlSignal::from_indices(p, *grid, &indices)?;

    let x_s = integrate(p, &phi, &u.tail(s_idx)?)?;
    let x_bar = integrate(p, &phi_bar, &u.tail(s_idx)?)?;
    let x_tau = integrate(p, &phi, &u.tail(tau_idx)?)?;

    let space = &p.space;
    let phi_norm = space.norm(&phi)?;
    let gap0 = space.distance_l2(&phi, &phi_bar)?;
    let s = grid.node(s_idx);
    let tau = grid.node(tau_idx);
    let x_s_tau = x_s.state(tau_idx - s_idx);

    let mut checks = BoundKind::ALL.map(BoundCheck::new);
    for (j, state) in x_s.states().iter().enumerate() {
        let t = x_s.grid().node(j);
        let elapsed = t - s;
        let w = |lhs: f64, rhs: f64| BoundWitness {
            trial,
            s,
            tau,
            t,
            lhs,
            rhs,
        };
        checks[0].observe(w(space.norm(state)?, b.norm(elapsed, phi_norm)), limit);
        checks[1].observe(
            w(
                space.distance_l2(state, x_bar.state(j))?,
                b.flow_lipschitz(elapsed) * gap0,
            ),
            limit,
        );
        let global = s_idx + j;
        if global >= tau_idx {
            let shifted = x_tau.state(global - tau_idx);
            checks[2].observe(
                w(
                    space.distance_l2(shifted, state)?,
                    b.time_shift(tau - s, t - tau, phi_norm),
                ),
                limit,
            );
            checks[3].observe(
                w(
                    space.distance_l2(state, x_s_tau)?,
                    b.time_increment(elapsed, t - tau, phi_norm),
                ),
                limit,
            );
        }
    }
    Ok(checks)
}
