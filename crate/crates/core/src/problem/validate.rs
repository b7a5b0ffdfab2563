//! Monte Carlo spot checks of the declared certificates. A passing report
//! is evidence on the sampled domain, not a proof.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ProblemSpec;
use crate::error::{Error, Result};
use crate::measure::norm2;

const MAX_RECORDED_VIOLATIONS: usize = 16;
const RATIO_RTOL: f64 = 1e-12;

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub atoms: Vec<usize>,
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    pub u: Vec<f64>,
    /// Ratio to the certificate (growth, Lipschitz, modulus) or slack
    /// (cost bound).
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub check: String,
    /// Sampled domain, e.g. `t in [0, 1], |x| <= 5, u in [-1, 1]^1`.
    pub domain: String,
    pub samples: usize,
    /// Worst ratio (≤ 1 passes) or worst slack (≥ 0 passes).
    pub worst: f64,
    pub worst_sample: Option<Sample>,
    pub violations: Vec<Sample>,
    pub violation_count: usize,
    pub passed: bool,
    pub note: &'static str,
}

const EVIDENCE_NOTE: &str = "sampled evidence on the stated domain, not a proof";

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}]: {} samples, worst {:.6e}, {} violation(s) -> {} ({})",
            self.check,
            self.domain,
            self.samples,
            self.worst,
            self.violation_count,
            if self.passed { "pass" } else { "FAIL" },
            self.note
        )
    }
}

/// How the two states are drawn in the modulus-of-continuity estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Pairing {
    /// `x = y`: compares the two parameters on the same state.
    #[default]
    Shared,
    /// `x` and `y` drawn independently.
    Independent,
}

struct Sampler<'a> {
    p: &'a ProblemSpec,
    rng: ChaCha8Rng,
    draws: usize,
}

impl<'a> Sampler<'a> {
    fn new(p: &'a ProblemSpec, seed: u64) -> Self {
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
        }
    }

    fn time(&mut self) -> f64 {
        self.rng.gen_range(0.0..=self.p.horizon)
    }

    fn atom(&mut self) -> usize {
        self.rng.gen_range(0..self.p.atoms())
    }

    /// Point in the ball `|x| <= R`; every fourth draw lies on the sphere.
    fn state(&mut self) -> Vec<f64> {
        let n = self.p.state_dim;
        let r = self.p.validation.state_radius;
        self.draws += 1;
        let dir = loop {
            let v: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-1.0..=1.0)).collect();
            let len = norm2(&v);
            if len > 1e-3 && len <= 1.0 {
                break v.into_iter().map(|c| c / len).collect::<Vec<_>>();
            }
        };
        let scale = if self.draws.is_multiple_of(4) {
            1.0
        } else {
            self.rng.gen::<f64>().powf(1.0 / n as f64)
        };
        dir.into_iter().map(|c| c * r * scale).collect()
    }

    fn control(&mut self) -> Vec<f64> {
        let bounds = self.p.controls.bounds().to_vec();
        bounds
            .iter()
            .map(|&(lo, hi)| if lo == hi { lo } else { self.rng.gen_range(lo..=hi) })
            .collect()
    }
}

fn domain(p: &ProblemSpec) -> String {
    let b = p.controls.bounds();
    let u: Vec<String> = b.iter().map(|(lo, hi)| format!("[{lo}, {hi}]")).collect();
    format!(
        "t in [0, {}], |x| <= {}, u in {}",
        p.horizon,
        p.validation.state_radius,
        u.join(" x ")
    )
}

struct Tally {
    worst: f64,
    worst_sample: Option<Sample>,
    violations: Vec<Sample>,
    violation_count: usize,
    maximize: bool,
}

impl Tally {
    fn new(maximize: bool) -> Self {
        Self {
            worst: if maximize { 0.0 } else { f64::INFINITY },
            worst_sample: None,
            violations: Vec::new(),
            violation_count: 0,
            maximize,
        }
    }

    fn record(&mut self, s: Sample, violated: bool) {
        let worse = s.score.is_nan()
            || self.worst_sample.is_none()
            || if self.maximize {
                s.score > self.worst
            } else {
                s.score < self.worst
            };
        if worse && !self.worst.is_nan() {
            self.worst = s.score;
            self.worst_sample = Some(s.clone());
        }
        if violated {
            self.violation_count += 1;
            if self.violations.len() < MAX_RECORDED_VIOLATIONS {
                self.violations.push(s);
            }
        }
    }

    fn finish(self, check: &str, p: &ProblemSpec, samples: usize) -> ValidationReport {
        ValidationReport {
            check: check.into(),
            domain: domain(p),
            samples,
            worst: self.worst,
            worst_sample: self.worst_sample,
            passed: self.violation_count == 0,
            violations: self.violations,
            violation_count: self.violation_count,
            note: EVIDENCE_NOTE,
        }
    }
}

/// Checks `|f(t,x,u,ω)| <= c (1 + |x|)`; the score is the ratio of the two
/// sides.
pub fn validate_growth(p: &ProblemSpec, samples: usize, seed: u64) -> ValidationReport {
    let c = p.dynamics.growth_c;
    let mut s = Sampler::new(p, seed);
    let mut tally = Tally::new(true);
    let mut out = vec![0.0; p.state_dim];
    for _ in 0..samples {
        let (t, i, x, u) = (s.time(), s.atom(), s.state(), s.control());
        p.dynamics.eval(t, &x, &u, i, &mut out);
        let ratio = norm2(&out) / (c * (1.0 + norm2(&x)));
        let violated = !(ratio <= 1.0 + RATIO_RTOL);
        tally.record(
            Sample {
                t,
                atoms: vec![i],
                x,
                y: None,
                u,
                score: ratio,
            },
            violated,
        );
    }
    tally.finish("growth", p, samples)
}

/// Checks `|f(t,x,u,ω) − f(t,x',u,ω)| <= k |x − x'|` on sampled pairs.
pub fn validate_lipschitz(p: &ProblemSpec, samples: usize, seed: u64) -> ValidationReport {
    let k = p.dynamics.lipschitz_k;
    let mut s = Sampler::new(p, seed);
    let mut tally = Tally::new(true);
    let n = p.state_dim;
    let (mut fx, mut fy) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..samples {
        let (t, i, x, y, u) = (s.time(), s.atom(), s.state(), s.state(), s.control());
        let gap: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dist = norm2(&gap);
        if dist == 0.0 {
            continue;
        }
        p.dynamics.eval(t, &x, &u, i, &mut fx);
        p.dynamics.eval(t, &y, &u, i, &mut fy);
        let diff: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
        let ratio = norm2(&diff) / (k * dist);
        let violated = !(ratio <= 1.0 + RATIO_RTOL);
        tally.record(
            Sample {
                t,
                atoms: vec![i],
                x,
                y: Some(y),
                u,
                score: ratio,
            },
            violated,
        );
    }
    tally.finish("lipschitz", p, samples)
}

/// Checks `g(x, ω_i) >= a(ω_i) − b|x|²`; the score is the slack.
pub fn validate_cost_bound(p: &ProblemSpec, samples: usize, seed: u64) -> ValidationReport {
    let b = p.cost.lower_bound_b;
    let mut s = Sampler::new(p, seed);
    let mut tally = Tally::new(false);
    for _ in 0..samples {
        let (i, x) = (s.atom(), s.state());
        let g = p.cost.eval(&x, i);
        let bound = p.cost.lower_bound_a[i] - b * x.iter().map(|v| v * v).sum::<f64>();
        let slack = g - bound;
        let tol = RATIO_RTOL * (1.0 + bound.abs());
        let violated = !(slack >= -tol);
        tally.record(
            Sample {
                t: p.horizon,
                atoms: vec![i],
                x,
                y: None,
                u: Vec::new(),
                score: slack,
            },
            violated,
        );
    }
    tally.finish("cost-lower-bound", p, samples)
}

/// Number of quadrature nodes in time for [`modulus_check`].
const MODULUS_TIME_NODES: usize = 16;
/// `(x, y, u)` draws per time node for the inner supremum.
const MODULUS_SUP_DRAWS: usize = 48;

/// Estimates `∫_0^T sup_{x,y,u} |f(t,x,u,ω_i) − f(t,y,u,ω_j)| dt` for sampled
/// atom pairs (midpoint rule in `t`, sampled supremum) and compares it
/// with `θ_f(d(ω_i, ω_j))`. The score is estimate / bound.
pub fn modulus_check(
    p: &ProblemSpec,
    pairs: usize,
    pairing: Pairing,
    seed: u64,
) -> Result<ValidationReport> {
    let theta = p.dynamics.modulus().ok_or_else(|| {
        Error::Capability("no modulus of continuity declared for the dynamics".into())
    })?;
    let m = p.atoms();
    let mut s = Sampler::new(p, seed);
    let mut tally = Tally::new(true);
    if m == 1 {
        return Ok(tally.finish("modulus", p, 0));
    }
    let n = p.state_dim;
    let (mut fx, mut fy) = (vec![0.0; n], vec![0.0; n]);
    let dt = p.horizon / MODULUS_TIME_NODES as f64;
    let control_points: Vec<Vec<f64>> = p.controls.sets().iter().flatten().cloned().collect();
    for _ in 0..pairs {
        let i = s.atom();
        let j = loop {
            let j = s.atom();
            if j != i {
                break j;
            }
        };
        let mut integral = 0.0;
        let mut worst_point = (0.0, Vec::new(), Vec::new(), Vec::new());
        let mut worst_local = -1.0;
        for q in 0..MODULUS_TIME_NODES {
            let t = (q as f64 + 0.5) * dt;
            let mut sup: f64 = 0.0;
            for d in 0..MODULUS_SUP_DRAWS {
                let x = s.state();
                let y = match pairing {
                    Pairing::Shared => x.clone(),
                    Pairing::Independent => s.state(),
                };
                // alternate between admissible set points and box draws
                let u = if d % 2 == 0 && !control_points.is_empty() {
                    control_points[d / 2 % control_points.len()].clone()
                } else {
                    s.control()
                };
                p.dynamics.eval(t, &x, &u, i, &mut fx);
                p.dynamics.eval(t, &y, &u, j, &mut fy);
                let diff: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
                let v = norm2(&diff);
                if v > sup {
                    sup = v;
                }
                if v > worst_local {
                    worst_local = v;
                    worst_point = (t, x, y, u);
                }
            }
            integral += sup * dt;
        }
        let bound = theta(p.space.distance(i, j));
        let score = if bound > 0.0 {
            integral / bound
        } else if integral == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let violated = !(integral <= bound * (1.0 + RATIO_RTOL) + 1e-14);
        let (t, x, y, u) = worst_point;
        tally.record(
            Sample {
                t,
                atoms: vec![i, j],
                x,
                y: Some(y),
                u,
                score,
            },
            violated,
        );
    }
    Ok(tally.finish("modulus", p, pairs))
}
