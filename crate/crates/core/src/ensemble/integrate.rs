use rayon::prelude::*;

use super::{ControlSignal, Trajectory};
use crate::error::{Error, Result};
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;

/// Atoms per rayon task; below this the ensemble is integrated serially.
const PAR_MIN_ATOMS: usize = 16;

/// Work buffers for one classical Runge–Kutta step of a single atom.
#[derive(Debug, Clone)]
pub(crate) struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    y: Vec<f64>,
}

impl Rk4Scratch {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            y: vec![0.0; n],
        }
    }
}

/// One classical fourth-order step for atom `atom`, writing into `out`.
pub(crate) fn rk4_atom_into(
    p: &ProblemSpec,
    t: f64,
    h: f64,
    x: &[f64],
    u: &[f64],
    atom: usize,
    out: &mut [f64],
    s: &mut Rk4Scratch,
) {
    let f = &p.dynamics;
    let half = 0.5 * h;
    f.eval(t, x, u, atom, &mut s.k1);
    for (y, (xi, k)) in s.y.iter_mut().zip(x.iter().zip(&s.k1)) {
        *y = xi + half * k;
    }
    f.eval(t + half, &s.y, u, atom, &mut s.k2);
    for (y, (xi, k)) in s.y.iter_mut().zip(x.iter().zip(&s.k2)) {
        *y = xi + half * k;
    }
    f.eval(t + half, &s.y, u, atom, &mut s.k3);
    for (y, (xi, k)) in s.y.iter_mut().zip(x.iter().zip(&s.k3)) {
        *y = xi + h * k;
    }
    f.eval(t + h, &s.y, u, atom, &mut s.k4);
    let sixth = h / 6.0;
    for (i, o) in out.iter_mut().enumerate() {
        *o = x[i] + sixth * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
    }
}

/// One step for a single atom.
pub fn rk4_atom_step(p: &ProblemSpec, t: f64, h: f64, x: &[f64], u: &[f64], atom: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    rk4_atom_into(p, t, h, x, u, atom, &mut out, &mut Rk4Scratch::new(x.len()));
    out
}

/// One step for the whole ensemble. Atoms are independent for a fixed
/// control value.
pub fn rk4_step(p: &ProblemSpec, t: f64, h: f64, x: &EnsembleState, u: &[f64]) -> EnsembleState {
    let mut out = EnsembleState::zeros(x.atoms(), x.dim());
    let mut s = Rk4Scratch::new(x.dim());
    for i in 0..x.atoms() {
        rk4_atom_into(p, t, h, x.atom(i), u, i, out.atom_mut(i), &mut s);
    }
    out
}

/// Integrates every atom of `phi` over the control's grid with the
/// classical fourth-order rule. The start time is the grid's first node.
pub fn integrate(p: &ProblemSpec, phi: &EnsembleState, u: &ControlSignal) -> Result<Trajectory> {
    p.check_state(phi)?;
    let grid = *u.grid();
    if grid.end() > p.horizon {
        return Err(Error::Argument(format!(
            "control grid ends at {} beyond the horizon {}",
            grid.end(),
            p.horizon
        )));
    }
    if u.dim() != p.control_dim {
        return Err(Error::Dimension(format!(
            "control dimension {} does not match problem dimension {}",
            u.dim(),
            p.control_dim
        )));
    }
    let n = p.state_dim;
    let steps = grid.steps();
    let h = grid.step();

    // Each atom yields its node states and the first non-finite node.
    let run_atom = |i: usize| -> (Vec<f64>, Option<usize>) {
        let mut path = Vec::with_capacity((steps + 1) * n);
        path.extend_from_slice(phi.atom(i));
        let mut s = Rk4Scratch::new(n);
        let mut next = vec![0.0; n];
        let mut bad = None;
        for j in 0..steps {
            let x = &path[j * n..(j + 1) * n];
            rk4_atom_into(p, grid.node(j), h, x, u.value(j), i, &mut next, &mut s);
            if bad.is_none() && next.iter().any(|v| !v.is_finite()) {
                bad = Some(j + 1);
            }
            path.extend_from_slice(&next);
        }
        (path, bad)
    };
    let atoms = phi.atoms();
    let paths: Vec<(Vec<f64>, Option<usize>)> = if atoms >= PAR_MIN_ATOMS {
        (0..atoms).into_par_iter().map(run_atom).collect()
    } else {
        (0..atoms).map(run_atom).collect()
    };

    if let Some((node, atom)) = paths
        .iter()
        .enumerate()
        .filter_map(|(i, (_, bad))| bad.map(|j| (j, i)))
        .min()
    {
        return Err(Error::Divergence {
            t: grid.node(node),
            node,
            atom,
        });
    }

    let states = (0..=steps)
        .map(|j| {
            let mut values = Vec::with_capacity(atoms * n);
            for (path, _) in &paths {
                values.extend_from_slice(&path[j * n..(j + 1) * n]);
            }
            EnsembleState::from_flat(atoms, n, values).expect("finite by construction")
        })
        .collect();
    Ok(Trajectory {
        grid,
        states,
        control: u.clone(),
    })
}
