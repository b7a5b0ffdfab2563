//! Semi-Lagrangian backward sweep on the stacked ensemble coordinates.
//!
//! Binary layout of a saved [`ValueGrid`] (all little-endian):
//!
//! ```text
//! magic     8 bytes  "ENSVGRD1"
//! atoms     u64
//! dim       u64      state dimension per atom
//! axes      u64      d = atoms · dim
//! grid      f64 origin, f64 end, u64 total, u64 offset, u64 steps
//! axis × d  f64 lo, f64 hi, u64 count
//! clamped   u64
//! radius    f64      coverage radius
//! values    f64 × (steps + 1) · nodes   time-major, last axis fastest
//! argmin    u32 × steps · nodes
//! ```
//!
//! Stacked coordinate `q = i·dim + k` is component `k` of atom `i`.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_horizon, terminal_functional};
use crate::ensemble::{GronwallBounds, TimeGrid};
use crate::error::{Error, Result};
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;

pub const VALUE_GRID_MAGIC: &[u8; 8] = b"ENSVGRD1";

/// Largest stacked dimension `n·M` the sweep accepts.
pub const MAX_STACKED_DIM: usize = 4;

const MAX_TABLE: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || count < 2 {
            return Err(Error::Argument(format!(
                "axis needs lo < hi and at least 2 points, got [{lo}, {hi}] × {count}"
            )));
        }
        Ok(Self { lo, hi, count })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        if k + 1 == self.count {
            self.hi
        } else {
            self.lo + k as f64 * self.spacing()
        }
    }
}

/// Tabulated value function with its argmin policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    grid: TimeGrid,
    axes: Vec<Axis>,
    atoms: usize,
    dim: usize,
    values: Vec<f64>,
    argmin: Vec<u32>,
    /// Semi-Lagrangian lookups that left the box and were clamped.
    pub clamped: u64,
    /// Grönwall radius of states reachable from zero data over the grid.
    pub coverage_radius: f64,
}

impl ValueGrid {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    /// Largest axis spacing `max Δz`.
    pub fn max_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(0.0, f64::max)
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        let n = self.node_count();
        &self.values[j * n..(j + 1) * n]
    }

    /// Control index chosen on `[t_j, t_{j+1})`; `j < steps`.
    pub fn argmin_slice(&self, j: usize) -> &[u32] {
        let n = self.node_count();
        &self.argmin[j * n..(j + 1) * n]
    }

    /// Multi-index of a node, last axis fastest.
    pub fn multi_index(&self, mut node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (q, a) in self.axes.iter().enumerate().rev() {
            idx[q] = node % a.count;
            node /= a.count;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&k, a)| acc * a.count + k)
    }

    pub fn node_point(&self, node: usize) -> Vec<f64> {
        self.multi_index(node)
            .iter()
            .zip(&self.axes)
            .map(|(&k, a)| a.point(k))
            .collect()
    }

    /// Covered iff every axis contains `[−r, r]` for the coverage radius.
    pub fn covers_reach(&self) -> bool {
        self.axes
            .iter()
            .all(|a| a.lo <= -self.coverage_radius && a.hi >= self.coverage_radius)
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.covers_reach() {
            w.push(format!(
                "state axes do not contain the reachable radius {:.6} from zero data",
                self.coverage_radius
            ));
        }
        if self.clamped > 0 {
            w.push(format!("{} lookups were clamped to the grid boundary", self.clamped));
        }
        w
    }

    /// Multilinear interpolation of slice `j` at stacked point `z`, clamped
    /// to the box. The flag reports whether clamping happened.
    pub fn interpolate(&self, j: usize, z: &[f64]) -> (f64, bool) {
        interpolate(&self.axes, self.slice(j), z)
    }

    /// `V(t_j, φ)`; `φ` must lie in the box.
    pub fn value_at(&self, j: usize, phi: &EnsembleState) -> Result<f64> {
        if phi.atoms() != self.atoms || phi.dim() != self.dim {
            return Err(Error::Dimension(format!(
                "state of shape {}×{} for a value grid over {}×{}",
                phi.atoms(),
                phi.dim(),
                self.atoms,
                self.dim
            )));
        }
        if j > self.grid.steps() {
            return Err(Error::Argument(format!("time index {j} beyond the grid")));
        }
        let (v, clamped) = self.interpolate(j, phi.as_slice());
        if clamped {
            return Err(Error::Argument("query state lies outside the value grid".into()));
        }
        Ok(v)
    }

    /// `V(s, φ)` at a grid node time `s`.
    pub fn value(&self, s: f64, phi: &EnsembleState) -> Result<f64> {
        let j = self
            .grid
            .index_of(s)
            .ok_or_else(|| Error::Argument(format!("time {s} is not a node of the value grid")))?;
        self.value_at(j, phi)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(VALUE_GRID_MAGIC)?;
        for v in [self.atoms, self.dim, self.axes.len()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        let (origin, end, total, offset, steps) = self.grid.parts();
        w.write_all(&origin.to_le_bytes())?;
        w.write_all(&end.to_le_bytes())?;
        for v in [total, offset, steps] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for a in &self.axes {
            w.write_all(&a.lo.to_le_bytes())?;
            w.write_all(&a.hi.to_le_bytes())?;
            w.write_all(&(a.count as u64).to_le_bytes())?;
        }
        w.write_all(&self.clamped.to_le_bytes())?;
        w.write_all(&self.coverage_radius.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.argmin {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != VALUE_GRID_MAGIC {
            return Err(Error::Format("not a value grid file".into()));
        }
        let atoms = read_usize(&mut r)?;
        let dim = read_usize(&mut r)?;
        let d = read_usize(&mut r)?;
        if d != atoms * dim || d == 0 || d > MAX_STACKED_DIM {
            return Err(Error::Format(format!(
                "inconsistent value grid shape: {atoms} atoms × {dim} with {d} axes"
            )));
        }
        let origin = read_f64(&mut r)?;
        let end = read_f64(&mut r)?;
        let total = read_usize(&mut r)?;
        let offset = read_usize(&mut r)?;
        let steps = read_usize(&mut r)?;
        let grid = TimeGrid::from_parts(origin, end, total, offset, steps)?;
        let axes = (0..d)
            .map(|_| {
                let lo = read_f64(&mut r)?;
                let hi = read_f64(&mut r)?;
                Axis::new(lo, hi, read_usize(&mut r)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let clamped = read_u64(&mut r)?;
        let coverage_radius = read_f64(&mut r)?;
        let nodes: usize = axes.iter().map(|a| a.count).product();
        if nodes.saturating_mul(steps + 1) > MAX_TABLE {
            return Err(Error::Format("value grid too large".into()));
        }
        let values = (0..(steps + 1) * nodes)
            .map(|_| read_f64(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let argmin = (0..steps * nodes)
            .map(|_| {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                Ok(u32::from_le_bytes(b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            axes,
            atoms,
            dim,
            values,
            argmin,
            clamped,
            coverage_radius,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Slice `j` as CSV: `t,z1..zd,value,argmin`. The terminal slice has
    /// an empty argmin column.
    pub fn write_slice_csv<W: Write>(&self, j: usize, out: W) -> Result<()> {
        if j > self.grid.steps() {
            return Err(Error::Argument(format!("time index {j} beyond the grid")));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.axes.len()).map(|q| format!("z{q}")));
        header.push("value".into());
        header.push("argmin".into());
        w.write_record(&header)?;
        let t = self.grid.node(j);
        let values = self.slice(j);
        for node in 0..self.node_count() {
            let mut row = vec![t.to_string()];
            row.extend(self.node_point(node).iter().map(f64::to_string));
            row.push(values[node].to_string());
            row.push(if j < self.grid.steps() {
                self.argmin_slice(j)[node].to_string()
            } else {
                String::new()
            });
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_usize<R: Read>(r: &mut R) -> Result<usize> {
    usize::try_from(read_u64(r)?).map_err(|_| Error::Format("integer out of range".into()))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn interpolate(axes: &[Axis], slice: &[f64], z: &[f64]) -> (f64, bool) {
    let d = axes.len();
    let mut cell = [0usize; MAX_STACKED_DIM];
    let mut frac = [0.0f64; MAX_STACKED_DIM];
    let mut clamped = false;
    for q in 0..d {
        let a = &axes[q];
        let h = a.spacing();
        let slack = 1e-12 * (a.hi - a.lo);
        if z[q] < a.lo - slack || z[q] > a.hi + slack || z[q].is_nan() {
            clamped = true;
        }
        let mut pos = ((z[q] - a.lo) / h).clamp(0.0, (a.count - 1) as f64);
        // lookups at a node return the node value exactly
        if (pos - pos.round()).abs() < 1e-9 {
            pos = pos.round();
        }
        let k = (pos.floor() as usize).min(a.count - 2);
        cell[q] = k;
        frac[q] = pos - k as f64;
    }
    let mut total = 0.0;
    for corner in 0..(1usize << d) {
        let mut weight = 1.0;
        let mut flat = 0;
        for q in 0..d {
            let up = (corner >> (d - 1 - q)) & 1;
            weight *= if up == 1 { frac[q] } else { 1.0 - frac[q] };
            flat = flat * axes[q].count + cell[q] + up;
        }
        if weight != 0.0 {
            total += weight * slice[flat];
        }
    }
    (total, clamped)
}

/// Backward sweep `V(t_j, z) = min_u V(t_{j+1}, z + Δt f(t_j, z, u))` from
/// `V(T, ·) = 𝒥` on the tensor grid spanned by `axes`, one axis per stacked
/// coordinate. Lookups outside the box are clamped and counted.
pub fn value_dp(p: &ProblemSpec, axes: &[Axis], grid: &TimeGrid) -> Result<ValueGrid> {
    check_horizon(p, grid)?;
    let d = p.stacked_dim();
    if d > MAX_STACKED_DIM {
        return Err(Error::Capacity(format!(
            "dynamic programming needs n·M <= {MAX_STACKED_DIM}, got {d}"
        )));
    }
    if axes.len() != d {
        return Err(Error::Dimension(format!(
            "{} axes for {d} stacked coordinates",
            axes.len()
        )));
    }
    for a in axes {
        Axis::new(a.lo, a.hi, a.count)?;
    }
    let nodes: usize = axes.iter().map(|a| a.count).product();
    let steps = grid.steps();
    if nodes.saturating_mul(steps + 1) > MAX_TABLE {
        return Err(Error::Capacity(format!(
            "{nodes} nodes × {} slices exceed the table limit",
            steps + 1
        )));
    }
    let atoms = p.atoms();
    let n = p.state_dim;
    let mut vg = ValueGrid {
        grid: *grid,
        axes: axes.to_vec(),
        atoms,
        dim: n,
        values: vec![0.0; (steps + 1) * nodes],
        argmin: vec![0; steps * nodes],
        clamped: 0,
        coverage_radius: GronwallBounds::for_problem(p).atom_radius(grid.end() - grid.start(), 0.0),
    };

    let terminal: Vec<f64> = (0..nodes)
        .into_par_iter()
        .map(|node| {
            let z = vg.node_point(node);
            let phi = EnsembleState::from_flat(atoms, n, z).expect("finite grid point");
            terminal_functional(p, &phi).expect("shape checked")
        })
        .collect();
    if let Some(node) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::Terminal {
            node,
            value: terminal[node],
        });
    }
    vg.values[steps * nodes..].copy_from_slice(&terminal);

    let h = grid.step();
    for j in (0..steps).rev() {
        let t = grid.node(j);
        let set = p.controls.active(t);
        if set.is_empty() {
            return Err(Error::Schedule(format!("no control values active at t = {t}")));
        }
        let (head, tail) = vg.values.split_at_mut((j + 1) * nodes);
        let next = &tail[..nodes];
        let axes = &vg.axes;
        let slice: Vec<(f64, u32, u64)> = (0..nodes)
            .into_par_iter()
            .map(|node| {
                let z = node_point(axes, node);
                let mut v = vec![0.0; n];
                let mut moved = z.clone();
                let mut best = (f64::INFINITY, 0u32);
                let mut clamps = 0;
                for (k, u) in set.iter().enumerate() {
                    for i in 0..atoms {
                        p.dynamics.eval(t, &z[i * n..(i + 1) * n], u, i, &mut v);
                        for c in 0..n {
                            moved[i * n + c] = z[i * n + c] + h * v[c];
                        }
                    }
                    let (val, clamped) = interpolate(axes, next, &moved);
                    clamps += clamped as u64;
                    if k == 0 || val < best.0 {
                        best = (val, k as u32);
                    }
                }
                (best.0, best.1, clamps)
            })
            .collect();
        let out = &mut head[j * nodes..];
        for (node, (v, k, c)) in slice.into_iter().enumerate() {
            out[node] = v;
            vg.argmin[j * nodes + node] = k;
            vg.clamped += c;
        }
    }
    Ok(vg)
}

fn node_point(axes: &[Axis], mut node: usize) -> Vec<f64> {
    let mut z = vec![0.0; axes.len()];
    for (q, a) in axes.iter().enumerate().rev() {
        z[q] = a.point(node % a.count);
        node /= a.count;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::TimeGrid;
    use crate::problem::{builtin, BuiltinParams};
    use crate::value::value_oracle;

    fn axes(d: usize, lo: f64, hi: f64, count: usize) -> Vec<Axis> {
        vec![Axis::new(lo, hi, count).unwrap(); d]
    }

    #[test]
    fn static_problem_slices_are_equal() {
        let p = builtin("static", &BuiltinParams::default()).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 5).unwrap();
        let vg = value_dp(&p, &axes(2, -2.0, 2.0, 9), &grid).unwrap();
        for j in 0..5 {
            assert_eq!(vg.slice(j), vg.slice(5));
        }
        assert_eq!(vg.clamped, 0);
    }

    #[test]
    fn reachable_target_has_zero_value() {
        let params = BuiltinParams {
            atoms: 1,
            targets: Some(vec![0.5]),
            ..Default::default()
        };
        let p = builtin("decoupled-quadratic", &params).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let vg = value_dp(&p, &axes(1, -3.0, 3.0, 61), &grid).unwrap();
        for x in [-0.3, 0.0, 0.5, 1.2] {
            let v = vg.value_at(0, &EnsembleState::scalar(&[x]).unwrap()).unwrap();
            assert!(v.abs() < 0.02, "V(0, {x}) = {v}");
        }
    }

    #[test]
    fn matches_oracle_on_linear_ensemble() {
        let params = BuiltinParams {
            a: Some(vec![-0.5, 0.5]),
            c: Some(vec![1.0, 0.5]),
            ..Default::default()
        };
        let p = builtin("linear-ensemble", &params).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 40).unwrap();
        let vg = value_dp(&p, &axes(2, -4.0, 4.0, 41), &grid).unwrap();
        let coarse = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let tol = 5.0 * (grid.step() + vg.max_spacing());
        for (x, y) in [(0.0, 0.0), (0.7, -0.4), (-1.0, 1.0), (0.3, 0.9)] {
            let phi = EnsembleState::scalar(&[x, y]).unwrap();
            let dp = vg.value_at(0, &phi).unwrap();
            let oracle = value_oracle(&p, &phi, &coarse).unwrap().value;
            assert!((dp - oracle).abs() <= tol, "{dp} vs {oracle}");
        }
    }

    #[test]
    fn guards() {
        let params = BuiltinParams {
            atoms: 3,
            dim: 2,
            ..Default::default()
        };
        let p = builtin("linear-ensemble", &params).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        assert!(matches!(
            value_dp(&p, &axes(6, -1.0, 1.0, 3), &grid),
            Err(Error::Capacity(_))
        ));
        assert!(Axis::new(1.0, 1.0, 3).is_err());
        assert!(Axis::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let p = builtin("linear-ensemble", &BuiltinParams::default()).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let vg = value_dp(&p, &axes(2, -2.0, 2.0, 5), &grid).unwrap();
        let mut buf = Vec::new();
        vg.write_to(&mut buf).unwrap();
        let back = ValueGrid::read_from(&buf[..]).unwrap();
        assert_eq!(back, vg);
        assert!(ValueGrid::read_from(&buf[..20]).is_err());
        let mut csv = Vec::new();
        vg.write_slice_csv(4, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 26);
        assert!(text.starts_with("t,z1,z2,value,argmin"));
    }

    #[test]
    fn interpolation_is_exact_on_affine_data() {
        let ax = axes(2, -1.0, 1.0, 5);
        let slice: Vec<f64> = (0..25)
            .map(|node| {
                let z = node_point(&ax, node);
                2.0 * z[0] - 3.0 * z[1] + 0.5
            })
            .collect();
        let (v, c) = interpolate(&ax, &slice, &[0.13, -0.71]);
        assert!(!c);
        assert!((v - (2.0 * 0.13 + 3.0 * 0.71 + 0.5)).abs() < 1e-12);
        let (_, c) = interpolate(&ax, &slice, &[1.5, 0.0]);
        assert!(c);
    }
}
