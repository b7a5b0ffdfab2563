//! Trajectory CSV.
//!
//! Header: `t,atom,x1..xn,u1..um`. One row per (node, atom), nodes in time
//! order and atoms in space order. Row `j` carries the control applied on
//! `[t_j, t_{j+1})`; the control cells of the terminal node are empty.
//! Floats are written in shortest round-trip form.

use std::io::{Read, Write};

use super::{ControlSignal, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::measure::{EnsembleState, ParameterSpace};

pub fn write_trajectory_csv<W: Write>(
    traj: &Trajectory,
    space: &ParameterSpace,
    out: W,
) -> Result<()> {
    let n = traj.initial().dim();
    let m = traj.control().dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "atom".to_string()];
    header.extend((1..=n).map(|k| format!("x{k}")));
    header.extend((1..=m).map(|k| format!("u{k}")));
    w.write_record(&header)?;
    let steps = traj.grid().steps();
    for (j, state) in traj.states().iter().enumerate() {
        let t = traj.grid().node(j);
        for i in 0..state.atoms() {
            let mut row = vec![t.to_string(), space.atoms()[i].id.clone()];
            row.extend(state.atom(i).iter().map(f64::to_string));
            if j < steps {
                row.extend(traj.control().value(j).iter().map(f64::to_string));
            } else {
                row.extend(std::iter::repeat_n(String::new(), m));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory_csv`]. Returns the
/// trajectory and the atom ids in file order. The grid is rebuilt as a
/// uniform grid from the first and last node times.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<(Trajectory, Vec<String>)> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") || header.get(1) != Some("atom") {
        return Err(Error::Format("trajectory CSV must start with `t,atom`".into()));
    }
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('u')).count();
    if n == 0 || header.len() != 2 + n + m {
        return Err(Error::Format("unexpected trajectory CSV header".into()));
    }

    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("bad number `{s}` in trajectory CSV")))
    };

    let mut times: Vec<f64> = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new(); // per node: stacked states
    let mut controls: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let t = parse(&rec[0])?;
        let id = rec[1].to_string();
        if times.last() != Some(&t) {
            times.push(t);
            rows.push(Vec::new());
            let u: Vec<&str> = (0..m).map(|k| &rec[2 + n + k]).collect();
            if m > 0 && u.iter().all(|c| !c.is_empty()) {
                controls.push(u.into_iter().map(parse).collect::<Result<_>>()?);
            }
        }
        if times.len() == 1 {
            ids.push(id.clone());
        }
        let node = rows.last_mut().unwrap();
        let atom = node.len() / n;
        if ids.get(atom) != Some(&id) {
            return Err(Error::Format(format!(
                "atom `{id}` out of order at t = {t} (expected `{}`)",
                ids.get(atom).map_or("<none>", String::as_str)
            )));
        }
        for k in 0..n {
            node.push(parse(&rec[2 + k])?);
        }
    }
    if times.len() < 2 {
        return Err(Error::Format("trajectory CSV needs at least two nodes".into()));
    }
    let steps = times.len() - 1;
    if controls.len() != steps {
        return Err(Error::Format(format!(
            "{} control rows for {steps} intervals",
            controls.len()
        )));
    }
    let grid = TimeGrid::new(times[0], times[steps], steps)?;
    let atoms = ids.len();
    let states = rows
        .into_iter()
        .map(|v| EnsembleState::from_flat(atoms, n, v))
        .collect::<Result<Vec<_>>>()?;
    let control = if m == 0 {
        ControlSignal::new(grid, vec![Vec::new(); steps])?
    } else {
        ControlSignal::new(grid, controls)?
    };
    Ok((
        Trajectory {
            grid,
            states,
            control,
        },
        ids,
    ))
}
