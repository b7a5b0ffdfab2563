use rayon::prelude::*;
use serde::Serialize;

use super::{check_horizon, terminal_functional};
use crate::ensemble::{rk4_step, ControlSignal, TimeGrid};
use crate::error::{Error, Result};
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;

/// Largest number of signals the oracle will enumerate by default.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// Prefixes at least this numerous are searched as independent tasks.
const PARALLEL_PREFIXES: u128 = 64;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub best: ControlSignal,
    /// Control-set indices of `best`, one per interval.
    pub indices: Vec<usize>,
    pub evaluated: u64,
}

/// Number of piecewise-constant signals on `grid` (saturating).
pub fn signal_count(p: &ProblemSpec, grid: &TimeGrid) -> u128 {
    (0..grid.steps()).fold(1u128, |acc, j| {
        acc.saturating_mul(p.controls.active(grid.node(j)).len() as u128)
    })
}

fn check_budget(p: &ProblemSpec, grid: &TimeGrid, budget: u64) -> Result<()> {
    let count = signal_count(p, grid);
    if count > budget as u128 {
        return Err(Error::Capacity(format!(
            "{count} control signals on {} intervals exceed the enumeration budget {budget}",
            grid.steps()
        )));
    }
    Ok(())
}

/// Exact minimum of the reduced cost over all piecewise-constant signals
/// drawn from the active control sets. Ties go to the lexicographically
/// first index sequence.
pub fn value_oracle(p: &ProblemSpec, phi: &EnsembleState, grid: &TimeGrid) -> Result<OracleResult> {
    value_oracle_with(p, phi, grid, DEFAULT_BUDGET)
}

pub fn value_oracle_with(
    p: &ProblemSpec,
    phi: &EnsembleState,
    grid: &TimeGrid,
    budget: u64,
) -> Result<OracleResult> {
    p.check_state(phi)?;
    check_horizon(p, grid)?;
    check_budget(p, grid, budget)?;
    let leaf = |x: &EnsembleState, _: &[usize]| terminal_functional(p, x);
    let found = search(p, phi, grid, &leaf)?;
    Ok(OracleResult {
        value: found.value,
        best: ControlSignal::from_indices(p, *grid, &found.path)?,
        indices: found.path,
        evaluated: found.leaves,
    })
}

/// Reduced cost of every signal, in lexicographic index order.
pub fn enumerate_values(
    p: &ProblemSpec,
    phi: &EnsembleState,
    grid: &TimeGrid,
    budget: u64,
) -> Result<Vec<f64>> {
    p.check_state(phi)?;
    check_horizon(p, grid)?;
    check_budget(p, grid, budget)?;
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(grid.steps());
    let mut visit = |x: &EnsembleState, _: &[usize]| -> Result<()> {
        out.push(terminal_functional(p, x)?);
        Ok(())
    };
    walk(p, grid, phi, &mut path, &mut visit)?;
    Ok(out)
}

struct Found {
    value: f64,
    path: Vec<usize>,
    leaves: u64,
}

impl Found {
    /// Keeps `self` on ties, which preserves lexicographic order when
    /// candidates are offered in that order. NaN ranks as `+∞`.
    fn absorb(&mut self, other: Found) {
        self.leaves += other.leaves;
        if rank(other.value) < rank(self.value) {
            self.value = other.value;
            self.path = other.path;
        }
    }
}

fn rank(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

type Leaf<'a> = dyn Fn(&EnsembleState, &[usize]) -> Result<f64> + Sync + 'a;

/// Minimizes `leaf` over the terminal states of all signals on `grid`.
fn search(p: &ProblemSpec, phi: &EnsembleState, grid: &TimeGrid, leaf: &Leaf<'_>) -> Result<Found> {
    let steps = grid.steps();
    let sizes: Vec<usize> = (0..steps).map(|j| p.controls.active(grid.node(j)).len()).collect();
    if sizes.contains(&0) {
        return Err(Error::Schedule("empty control set on the grid".into()));
    }
    // Split depth depends only on the problem, so results are identical
    // for any worker count.
    let mut depth = 0;
    let mut count: u128 = 1;
    while depth < steps && count < PARALLEL_PREFIXES {
        count *= sizes[depth] as u128;
        depth += 1;
    }
    let prefixes: Vec<Vec<usize>> = odometer(&sizes[..depth]);
    let results: Vec<Result<Found>> = prefixes
        .into_par_iter()
        .map(|prefix| {
            let mut x = phi.clone();
            for (j, &k) in prefix.iter().enumerate() {
                x = advance(p, grid, j, &x, k)?;
            }
            let mut best: Option<Found> = None;
            let mut path = prefix;
            let mut visit = |state: &EnsembleState, path: &[usize]| -> Result<()> {
                let f = Found {
                    value: leaf(state, path)?,
                    path: path.to_vec(),
                    leaves: 1,
                };
                match &mut best {
                    None => best = Some(f),
                    Some(b) => b.absorb(f),
                }
                Ok(())
            };
            walk(p, grid, &x, &mut path, &mut visit)?;
            Ok(best.expect("at least one leaf"))
        })
        .collect();
    let mut iter = results.into_iter();
    let mut best = iter.next().expect("at least one prefix")?;
    for r in iter {
        best.absorb(r?);
    }
    Ok(best)
}

/// All index tuples in lexicographic order.
fn odometer(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &s in sizes {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..s).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}

/// One RK4 step on interval `j` of `grid` with control index `k`.
pub(crate) fn advance(
    p: &ProblemSpec,
    grid: &TimeGrid,
    j: usize,
    x: &EnsembleState,
    k: usize,
) -> Result<EnsembleState> {
    let t = grid.node(j);
    let u = &p.controls.active(t)[k];
    let next = rk4_step(p, t, grid.step(), x, u);
    if !next.is_finite() {
        let atom = (0..next.atoms())
            .find(|&i| next.atom(i).iter().any(|v| !v.is_finite()))
            .unwrap_or(0);
        return Err(Error::Divergence {
            t: grid.node(j + 1),
            node: j + 1,
            atom,
        });
    }
    Ok(next)
}

/// Depth-first walk over the signals extending `path`, sharing prefixes.
fn walk(
    p: &ProblemSpec,
    grid: &TimeGrid,
    x: &EnsembleState,
    path: &mut Vec<usize>,
    visit: &mut dyn FnMut(&EnsembleState, &[usize]) -> Result<()>,
) -> Result<()> {
    let j = path.len();
    if j == grid.steps() {
        return visit(x, path);
    }
    for k in 0..p.controls.active(grid.node(j)).len() {
        let next = advance(p, grid, j, x, k)?;
        path.push(k);
        walk(p, grid, &next, path, visit)?;
        path.pop();
    }
    Ok(())
}

/// Two-stage minimization at a split of the grid.
#[derive(Debug, Clone, Serialize)]
pub struct DppResidual {
    pub s1: f64,
    pub s2: f64,
    /// `V(s1, φ)` by direct enumeration on the whole grid.
    pub value: f64,
    /// `min_u V(s2, x_u(s2))` over head signals `u` on `[s1, s2]`.
    pub split_value: f64,
    /// `value − split_value`; zero in exact arithmetic.
    pub residual: f64,
    pub head: Vec<usize>,
    pub tail: Vec<usize>,
    pub best: Vec<usize>,
}

/// Compares the one-shot oracle with the two-stage minimization that
/// splits `grid` at node `split`.
pub fn dpp_residual(
    p: &ProblemSpec,
    phi: &EnsembleState,
    grid: &TimeGrid,
    split: usize,
    budget: u64,
) -> Result<DppResidual> {
    if split > grid.steps() {
        return Err(Error::Argument(format!(
            "split node {split} beyond {} steps",
            grid.steps()
        )));
    }
    let whole = value_oracle_with(p, phi, grid, budget)?;
    let (split_value, head, tail) = if split == 0 {
        let again = value_oracle_with(p, phi, grid, budget)?;
        (again.value, Vec::new(), again.indices)
    } else {
        let head_grid = grid.head(split)?;
        check_budget(p, &head_grid, budget)?;
        let tail_grid = if split < grid.steps() {
            let t = grid.tail(split)?;
            check_budget(p, &t, budget)?;
            Some(t)
        } else {
            None
        };
        let leaf = |x: &EnsembleState, _: &[usize]| match &tail_grid {
            Some(t) => value_oracle_with(p, x, t, budget).map(|r| r.value),
            None => terminal_functional(p, x),
        };
        let found = search(p, phi, &head_grid, &leaf)?;
        let tail = match &tail_grid {
            Some(t) => {
                let mut x = phi.clone();
                for (j, &k) in found.path.iter().enumerate() {
                    x = advance(p, &head_grid, j, &x, k)?;
                }
                value_oracle_with(p, &x, t, budget)?.indices
            }
            None => Vec::new(),
        };
        (found.value, found.path, tail)
    };
    Ok(DppResidual {
        s1: grid.start(),
        s2: grid.node(split),
        value: whole.value,
        split_value,
        residual: whole.value - split_value,
        head,
        tail,
        best: whole.indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin, BuiltinParams};
    use crate::value::reduced_cost;

    fn linear(a_slope: f64, c_offset: f64) -> ProblemSpec {
        let params = BuiltinParams {
            atoms: 3,
            a_slope,
            c_offset,
            c_slope: 0.5,
            ..Default::default()
        };
        builtin("linear-ensemble", &params).unwrap()
    }

    #[test]
    fn static_problem_keeps_terminal_value() {
        let p = builtin("static", &BuiltinParams::default()).unwrap();
        let phi = EnsembleState::scalar(&[0.2, 0.7]).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let r = value_oracle(&p, &phi, &grid).unwrap();
        assert_eq!(r.value, terminal_functional(&p, &phi).unwrap());
        assert_eq!(r.indices, vec![0, 0, 0]);
        assert_eq!(r.evaluated, 27);
    }

    #[test]
    fn one_step_matches_affine_formula() {
        let p = linear(0.0, 1.0);
        let phi = EnsembleState::scalar(&[0.3, -0.2, 1.1]).unwrap();
        let grid = TimeGrid::new(0.4, 1.0, 1).unwrap();
        let r = value_oracle(&p, &phi, &grid).unwrap();
        let w = p.space.weights();
        let c = &p.closed_form.as_ref().unwrap().c;
        let sc: f64 = (0..3).map(|i| w[i] * c[i]).sum();
        let sp: f64 = (0..3).map(|i| w[i] * c[i] * phi.atom(i)[0]).sum();
        assert!((r.value - (-sc.abs() * 0.6 + sp)).abs() < 1e-12);
    }

    #[test]
    fn refinement_does_not_change_affine_value() {
        let p = linear(0.0, 1.0);
        let phi = EnsembleState::scalar(&[0.3, -0.2, 1.1]).unwrap();
        let one = value_oracle(&p, &phi, &TimeGrid::new(0.0, 1.0, 1).unwrap()).unwrap();
        let two = value_oracle(&p, &phi, &TimeGrid::new(0.0, 1.0, 2).unwrap()).unwrap();
        assert!((one.value - two.value).abs() < 1e-12);
    }

    #[test]
    fn oracle_is_the_minimum_of_the_enumeration() {
        let p = linear(1.0, -0.3);
        let phi = EnsembleState::scalar(&[0.5, 0.1, -0.4]).unwrap();
        let grid = TimeGrid::new(0.2, 1.0, 5).unwrap();
        let all = enumerate_values(&p, &phi, &grid, DEFAULT_BUDGET).unwrap();
        let r = value_oracle(&p, &phi, &grid).unwrap();
        assert_eq!(all.len(), 243);
        let min = all.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(r.value, min);
        let first = all.iter().position(|&v| v == min).unwrap();
        let mut idx = Vec::new();
        let mut rest = first;
        for _ in 0..5 {
            idx.push(rest % 3);
            rest /= 3;
        }
        idx.reverse();
        assert_eq!(r.indices, idx);
        assert_eq!(reduced_cost(&p, &phi, &r.best).unwrap(), r.value);
    }

    #[test]
    fn budget_is_enforced() {
        let p = linear(1.0, 1.0);
        let phi = EnsembleState::scalar(&[0.0; 3]).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 13).unwrap();
        assert!(matches!(
            value_oracle(&p, &phi, &grid),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn dpp_splits() {
        let p = linear(1.0, -0.3);
        let phi = EnsembleState::scalar(&[0.5, 0.1, -0.4]).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        for split in 0..=4 {
            let r = dpp_residual(&p, &phi, &grid, split, DEFAULT_BUDGET).unwrap();
            assert!(r.residual.abs() <= 1e-10, "split {split}: {}", r.residual);
            assert_eq!(r.head.len() + r.tail.len(), 4);
        }
        let r = dpp_residual(&p, &phi, &grid, 0, DEFAULT_BUDGET).unwrap();
        assert_eq!(r.residual, 0.0);
    }
}
