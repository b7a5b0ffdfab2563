//! Time grids, piecewise-constant controls and ensemble trajectories.

mod bounds;
mod export;
mod integrate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;

pub use bounds::{estimate_suite, BoundCheck, BoundKind, GronwallBounds, EstimateConfig, PropertyReport};
pub use export::{read_trajectory_csv, write_trajectory_csv};
pub use integrate::{integrate, rk4_atom_step, rk4_step};

/// Uniform grid on `[s, T]`.
///
/// A grid remembers the parent grid it was split from, so that nodes of
/// head and tail pieces are bit-identical to the parent's nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    origin: f64,
    end: f64,
    total: usize,
    offset: usize,
    steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, steps: usize) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && 0.0 <= start && start < end) {
            return Err(Error::Argument(format!(
                "time grid needs 0 <= s < T, got s = {start}, T = {end}"
            )));
        }
        if steps == 0 {
            return Err(Error::Argument("time grid needs at least one step".into()));
        }
        Ok(Self {
            origin: start,
            end,
            total: steps,
            offset: 0,
            steps,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> f64 {
        (self.end - self.origin) / self.total as f64
    }

    /// Time of node `j`, `0 <= j <= steps`.
    pub fn node(&self, j: usize) -> f64 {
        debug_assert!(j <= self.steps);
        let g = self.offset + j;
        if g == self.total {
            self.end
        } else if g == 0 {
            self.origin
        } else {
            self.origin + g as f64 * self.step()
        }
    }

    pub fn start(&self) -> f64 {
        self.node(0)
    }

    pub fn end(&self) -> f64 {
        self.node(self.steps)
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |j| self.node(j))
    }

    /// Sub-grid of nodes `0..=k`.
    pub fn head(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.steps {
            return Err(Error::Argument(format!(
                "head length {k} outside 1..={}",
                self.steps
            )));
        }
        Ok(Self { steps: k, ..*self })
    }

    /// Sub-grid of nodes `k..=steps`.
    pub fn tail(&self, k: usize) -> Result<Self> {
        if k >= self.steps {
            return Err(Error::Argument(format!(
                "tail start {k} outside 0..{}",
                self.steps
            )));
        }
        Ok(Self {
            offset: self.offset + k,
            steps: self.steps - k,
            ..*self
        })
    }

    /// `(origin, end, total, offset, steps)`, for binary serialization.
    pub(crate) fn parts(&self) -> (f64, f64, usize, usize, usize) {
        (self.origin, self.end, self.total, self.offset, self.steps)
    }

    pub(crate) fn from_parts(
        origin: f64,
        end: f64,
        total: usize,
        offset: usize,
        steps: usize,
    ) -> Result<Self> {
        let base = Self::new(origin, end, total)?;
        if steps == 0 || offset + steps > total {
            return Err(Error::Format(format!(
                "time grid window {offset}+{steps} exceeds {total} steps"
            )));
        }
        Ok(Self {
            offset,
            steps,
            ..base
        })
    }

    /// Index of the node equal to `t`, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        (0..=self.steps).find(|&j| self.node(j) == t)
    }
}

/// Control value per grid interval. Interval `j` uses the control set
/// active at its left node `t_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    grid: TimeGrid,
    values: Vec<Vec<f64>>,
}

impl ControlSignal {
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grid.steps() {
            return Err(Error::Dimension(format!(
                "{} control values for {} intervals",
                values.len(),
                grid.steps()
            )));
        }
        let m = values.first().map_or(0, Vec::len);
        if values.iter().any(|v| v.len() != m) {
            return Err(Error::Dimension("control values have mixed dimensions".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("control values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, u: &[f64]) -> Self {
        Self {
            values: vec![u.to_vec(); grid.steps()],
            grid,
        }
    }

    /// Picks `set[indices[j]]` from the set active on each interval.
    pub fn from_indices(p: &ProblemSpec, grid: TimeGrid, indices: &[usize]) -> Result<Self> {
        if indices.len() != grid.steps() {
            return Err(Error::Dimension(format!(
                "{} control indices for {} intervals",
                indices.len(),
                grid.steps()
            )));
        }
        let values = indices
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                let set = p.controls.active(grid.node(j));
                set.get(k).cloned().ok_or_else(|| {
                    Error::Schedule(format!(
                        "control index {k} out of range on interval {j} (set size {})",
                        set.len()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn head(&self, k: usize) -> Result<Self> {
        Ok(Self {
            grid: self.grid.head(k)?,
            values: self.values[..k].to_vec(),
        })
    }

    pub fn tail(&self, k: usize) -> Result<Self> {
        Ok(Self {
            grid: self.grid.tail(k)?,
            values: self.values[k..].to_vec(),
        })
    }

    /// Every value is a point of the set active on its interval.
    pub fn is_admissible(&self, p: &ProblemSpec) -> bool {
        self.values
            .iter()
            .enumerate()
            .all(|(j, v)| p.controls.active(self.grid.node(j)).iter().any(|q| q == v))
    }

    /// Every value lies in the control box.
    pub fn within_bounds(&self, p: &ProblemSpec) -> bool {
        self.values.iter().all(|v| {
            v.iter()
                .zip(p.controls.bounds())
                .all(|(x, (lo, hi))| lo <= x && x <= hi)
        })
    }
}

/// States at every node of a grid together with the generating control.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub(crate) grid: TimeGrid,
    pub(crate) states: Vec<EnsembleState>,
    pub(crate) control: ControlSignal,
}

impl Trajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[EnsembleState] {
        &self.states
    }

    pub fn state(&self, j: usize) -> &EnsembleState {
        &self.states[j]
    }

    pub fn initial(&self) -> &EnsembleState {
        &self.states[0]
    }

    pub fn terminal(&self) -> &EnsembleState {
        self.states.last().expect("trajectory has at least two nodes")
    }

    pub fn control(&self) -> &ControlSignal {
        &self.control
    }

    /// Re-runs each step and compares with the stored next state.
    pub fn is_consistent(&self, p: &ProblemSpec) -> bool {
        let h = self.grid.step();
        (0..self.grid.steps()).all(|j| {
            let next = rk4_step(p, self.grid.node(j), h, &self.states[j], self.control.value(j));
            next == self.states[j + 1]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_grids_share_nodes_exactly() {
        let g = TimeGrid::new(0.1, 1.0, 7).unwrap();
        let tail = g.tail(3).unwrap();
        let head = g.head(3).unwrap();
        for j in 0..=4 {
            assert_eq!(tail.node(j).to_bits(), g.node(j + 3).to_bits());
        }
        assert_eq!(head.end(), g.node(3));
        assert_eq!(tail.end(), 1.0);
        assert_eq!(g.tail(3).unwrap().tail(2).unwrap().node(0), g.node(5));
        assert_eq!(g.index_of(g.node(4)), Some(4));
        assert!(g.tail(7).is_err());
        assert!(g.head(0).is_err());
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(-0.5, 1.0, 4).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn signal_shape_checks() {
        let g = TimeGrid::new(0.0, 1.0, 3).unwrap();
        assert!(ControlSignal::new(g, vec![vec![0.0]; 2]).is_err());
        assert!(ControlSignal::new(g, vec![vec![0.0], vec![0.0, 1.0], vec![0.0]]).is_err());
        let s = ControlSignal::new(g, vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(s.tail(1).unwrap().values(), &[vec![2.0], vec![3.0]]);
        assert_eq!(s.head(1).unwrap().values(), &[vec![1.0]]);
    }
}
