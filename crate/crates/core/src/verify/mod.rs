//! Numerical checks of the value function: finite-difference HJB
//! residuals, invariance of the epigraph along trajectories, the limit at
//! the horizon, and the mean-oscillation diagnostic.

mod hjb;
mod invariance;
mod oscillation;

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ensemble::{ControlSignal, TimeGrid};
use crate::error::Result;
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;

pub use hjb::{hjb_residual, hjb_tolerance, interior_samples, HjbSample, DEFAULT_KAPPA};
pub use invariance::{
    epigraph_invariance, terminal_limit, value_along, EpigraphConfig, EpigraphReport,
};
pub use oscillation::oscillation_diagnostic;

/// Inputs at which a check attained its worst residual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    /// Stacked state.
    pub state: Vec<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub instance: String,
    pub tolerance: f64,
    /// Largest residual seen; the check passes iff it is at most `tolerance`.
    pub worst: f64,
    pub witness: Option<Witness>,
    pub samples: usize,
    /// Samples skipped by design (for instance suspected kinks).
    pub skipped: usize,
    pub seed: u64,
    pub passed: bool,
    /// Named scalars specific to the check.
    pub metrics: Vec<(String, f64)>,
    /// Check-specific curve, such as `(r, oscillation)`.
    pub series: Vec<(f64, f64)>,
}

impl CheckReport {
    pub(crate) fn new(check: &str, instance: &str, tolerance: f64, seed: u64) -> Self {
        Self {
            check: check.into(),
            instance: instance.into(),
            tolerance,
            worst: 0.0,
            witness: None,
            samples: 0,
            skipped: 0,
            seed,
            passed: false,
            metrics: Vec::new(),
            series: Vec::new(),
        }
    }

    /// Records one residual; NaN always counts as worst.
    pub(crate) fn observe(&mut self, residual: f64, witness: impl FnOnce() -> Witness) {
        self.samples += 1;
        let worse = residual > self.worst || residual.is_nan() || self.witness.is_none();
        if worse && !self.worst.is_nan() {
            self.worst = residual;
            self.witness = Some(witness());
        }
    }

    pub(crate) fn finish(mut self) -> Self {
        self.passed = self.worst <= self.tolerance;
        self
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} on {}: worst {:.3e} (tol {:.3e}), {} samples",
            if self.passed { "pass" } else { "FAIL" },
            self.check,
            self.instance,
            self.worst,
            self.tolerance,
            self.samples
        )?;
        if self.skipped > 0 {
            write!(f, ", {} skipped", self.skipped)?;
        }
        for (k, v) in &self.metrics {
            write!(f, ", {k} = {v:.6}")?;
        }
        if let Some(w) = &self.witness {
            write!(f, "\n    witness t = {} state = {:?}", w.t, w.state)?;
            if !w.note.is_empty() {
                write!(f, " ({})", w.note)?;
            }
        }
        Ok(())
    }
}

/// One row per report:
/// `check,instance,tolerance,worst,samples,skipped,seed,passed,witness_t,witness_state,note`.
/// The state cell joins coordinates with `;`.
pub fn write_reports_csv<W: Write>(reports: &[CheckReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "check",
        "instance",
        "tolerance",
        "worst",
        "samples",
        "skipped",
        "seed",
        "passed",
        "witness_t",
        "witness_state",
        "note",
    ])?;
    for r in reports {
        let (t, state, note) = match &r.witness {
            Some(w) => (
                w.t.to_string(),
                w.state.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
                w.note.clone(),
            ),
            None => Default::default(),
        };
        w.write_record([
            r.check.clone(),
            r.instance.clone(),
            r.tolerance.to_string(),
            r.worst.to_string(),
            r.samples.to_string(),
            r.skipped.to_string(),
            r.seed.to_string(),
            r.passed.to_string(),
            t,
            state,
            note,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `count` signals drawing uniformly from each interval's control set.
pub fn sample_controls(
    p: &ProblemSpec,
    grid: &TimeGrid,
    count: usize,
    seed: u64,
) -> Result<Vec<ControlSignal>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let idx: Vec<usize> = (0..grid.steps())
                .map(|j| rng.gen_range(0..p.controls.active(grid.node(j)).len()))
                .collect();
            ControlSignal::from_indices(p, *grid, &idx)
        })
        .collect()
}

/// Initial data drawn per component from `[-radius, radius]`.
pub fn sample_states(
    p: &ProblemSpec,
    count: usize,
    radius: f64,
    seed: u64,
) -> Vec<EnsembleState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = (0..p.stacked_dim())
                .map(|_| rng.gen_range(-radius..=radius))
                .collect();
            EnsembleState::from_flat(p.atoms(), p.state_dim, v).expect("finite draw")
        })
        .collect()
}
