//! Finite atomization of the parameter space and the weighted L² geometry
//! on ensemble states.
//!
//! A [`ParameterSpace`] is a list of atoms `ω_i` with positive masses `w_i`
//! and a pairwise metric `d(ω_i, ω_j)`. Masses need not sum to one: any
//! finite positive total is accepted. An [`EnsembleState`] holds one
//! `n`-vector per atom and is the discrete counterpart of a square
//! integrable map `Ω → ℝⁿ`.
//!
//! Balls are open: `B_r(ω_i) = { ω_j : d(ω_i, ω_j) < r }`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when validating the triangle inequality.
const TRIANGLE_RTOL: f64 = 1e-12;

/// One parameter point. Coordinates are optional; they are only needed
/// when the metric is induced from a Euclidean embedding or when problem
/// expressions refer to `ω`-coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<f64>>,
}

impl Atom {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            coords: None,
        }
    }

    pub fn with_coords(id: impl Into<String>, coords: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            coords: Some(coords),
        }
    }
}

/// How the pairwise metric is supplied.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    /// Row-major `M × M` matrix.
    Explicit(Vec<Vec<f64>>),
    /// Euclidean distance between atom coordinates.
    Euclidean,
}

/// Finite metric measure space `(Ω, d, μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpace {
    atoms: Vec<Atom>,
    weights: Vec<f64>,
    metric: Vec<f64>,
}

impl ParameterSpace {
    pub fn new(atoms: Vec<Atom>, weights: Vec<f64>, metric: Metric) -> Result<Self> {
        let m = atoms.len();
        if m == 0 {
            return Err(Error::Space("at least one atom is required".into()));
        }
        if weights.len() != m {
            return Err(Error::Space(format!(
                "{} weights given for {} atoms",
                weights.len(),
                m
            )));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Space(format!(
                    "atom {i} (`{}`) has non-positive or non-finite weight {w}",
                    atoms[i].id
                )));
            }
        }
        let metric = match metric {
            Metric::Explicit(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::Space(format!("metric matrix must be {m}x{m}")));
                }
                rows.into_iter().flatten().collect()
            }
            Metric::Euclidean => euclidean_metric(&atoms)?,
        };
        let space = Self {
            atoms,
            weights,
            metric,
        };
        space.check_metric()?;
        Ok(space)
    }

    /// Atoms evenly spaced on `[lo, hi]` with equal weights summing to `mass`.
    pub fn uniform_line(count: usize, lo: f64, hi: f64, mass: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Space("at least one atom is required".into()));
        }
        let atoms = (0..count)
            .map(|i| {
                let x = if count == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                };
                Atom::with_coords(format!("w{i}"), vec![x])
            })
            .collect();
        let weights = vec![mass / count as f64; count];
        Self::new(atoms, weights, Metric::Euclidean)
    }

    /// Single atom of unit mass: the classical, non-ensemble problem.
    pub fn singleton() -> Self {
        Self::new(
            vec![Atom::with_coords("w0", vec![0.0])],
            vec![1.0],
            Metric::Euclidean,
        )
        .expect("singleton space is valid")
    }

    fn check_metric(&self) -> Result<()> {
        let m = self.len();
        for i in 0..m {
            let dii = self.distance(i, i);
            if dii != 0.0 {
                return Err(Error::Space(format!(
                    "metric diagonal entry ({i},{i}) is {dii}, expected 0"
                )));
            }
            for j in 0..m {
                let dij = self.distance(i, j);
                if !(dij.is_finite() && dij >= 0.0) {
                    return Err(Error::Space(format!(
                        "metric entry ({i},{j}) is negative or non-finite: {dij}"
                    )));
                }
                if dij != self.distance(j, i) {
                    return Err(Error::Space(format!(
                        "metric is not symmetric at atoms ({i},{j})"
                    )));
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let lhs = self.distance(i, k);
                    let rhs = self.distance(i, j) + self.distance(j, k);
                    if lhs > rhs * (1.0 + TRIANGLE_RTOL) + f64::MIN_POSITIVE {
                        return Err(Error::Space(format!(
                            "triangle inequality fails for atoms ({i},{j},{k}): \
                             d({i},{k}) = {lhs} > {rhs}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.metric[i * self.len() + j]
    }

    /// `μ(Ω)`.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn diameter(&self) -> f64 {
        self.metric.iter().copied().fold(0.0, f64::max)
    }

    /// Coordinates of atom `i`, or an empty slice when none were given.
    pub fn coords(&self, i: usize) -> &[f64] {
        self.atoms[i].coords.as_deref().unwrap_or(&[])
    }

    /// Indices of the atoms in the open ball `B_r(ω_i)`.
    pub fn ball(&self, i: usize, r: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| self.distance(i, j) < r)
    }

    /// `h(r) = min_i μ(B_r(ω_i))`.
    pub fn ball_mass(&self, r: f64) -> Result<f64> {
        check_radius(r)?;
        Ok((0..self.len())
            .map(|i| self.ball(i, r).map(|j| self.weights[j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min))
    }

    /// Replaces every `F_i` by the weighted mean of `F` over `B_r(ω_i)`.
    pub fn ball_average(&self, field: &EnsembleState, r: f64) -> Result<EnsembleState> {
        check_radius(r)?;
        self.check_state(field)?;
        let n = field.dim();
        let mut out = EnsembleState::zeros(self.len(), n);
        for i in 0..self.len() {
            let mut mass = 0.0;
            let acc = out.atom_mut(i);
            for j in self.ball(i, r) {
                let w = self.weights[j];
                mass += w;
                for (a, v) in acc.iter_mut().zip(field.atom(j)) {
                    *a += w * v;
                }
            }
            for a in acc.iter_mut() {
                *a /= mass;
            }
        }
        Ok(out)
    }

    /// `⟨φ, ψ⟩ = Σ_i w_i φ_i · ψ_i`.
    pub fn inner(&self, phi: &EnsembleState, psi: &EnsembleState) -> Result<f64> {
        self.check_state(phi)?;
        self.check_state(psi)?;
        if phi.dim() != psi.dim() {
            return Err(Error::Dimension(format!(
                "state dimensions differ: {} vs {}",
                phi.dim(),
                psi.dim()
            )));
        }
        Ok(self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * dot(phi.atom(i), psi.atom(i)))
            .sum())
    }

    pub fn norm(&self, phi: &EnsembleState) -> Result<f64> {
        Ok(self.inner(phi, phi)?.sqrt())
    }

    /// `‖φ − ψ‖`.
    pub fn distance_l2(&self, phi: &EnsembleState, psi: &EnsembleState) -> Result<f64> {
        let diff = phi.sub(psi)?;
        self.norm(&diff)
    }

    pub fn check_state(&self, phi: &EnsembleState) -> Result<()> {
        if phi.atoms() != self.len() {
            return Err(Error::Dimension(format!(
                "state has {} atoms, parameter space has {}",
                phi.atoms(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SpaceFile = toml::from_str(text)?;
        file.into_space()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SpaceFile::from_space(self, true);
        toml::to_string(&file).expect("space file serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::Argument(format!("ball radius must be positive, got {r}")));
    }
    Ok(())
}

fn euclidean_metric(atoms: &[Atom]) -> Result<Vec<f64>> {
    let m = atoms.len();
    let mut coords = Vec::with_capacity(m);
    for (i, a) in atoms.iter().enumerate() {
        match &a.coords {
            Some(c) => coords.push(c.as_slice()),
            None => {
                return Err(Error::Space(format!(
                    "atom {i} (`{}`) has no coordinates; an explicit metric is required",
                    a.id
                )))
            }
        }
    }
    let d = coords[0].len();
    if let Some(i) = coords.iter().position(|c| c.len() != d) {
        return Err(Error::Space(format!(
            "atom {i} has {} coordinates, atom 0 has {d}",
            coords[i].len()
        )));
    }
    let mut metric = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            metric[i * m + j] = coords[i]
                .iter()
                .zip(coords[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(metric)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Serialize, Deserialize)]
struct SpaceFile {
    #[serde(rename = "atom")]
    atoms: Vec<AtomEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metric: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AtomEntry {
    id: String,
    weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<f64>>,
}

impl SpaceFile {
    fn into_space(self) -> Result<ParameterSpace> {
        let (atoms, weights) = self
            .atoms
            .into_iter()
            .map(|e| {
                (
                    Atom {
                        id: e.id,
                        coords: e.coords,
                    },
                    e.weight,
                )
            })
            .unzip();
        let metric = match self.metric {
            Some(rows) => Metric::Explicit(rows),
            None => Metric::Euclidean,
        };
        ParameterSpace::new(atoms, weights, metric)
    }

    fn from_space(space: &ParameterSpace, explicit_metric: bool) -> Self {
        let m = space.len();
        Self {
            atoms: space
                .atoms
                .iter()
                .zip(&space.weights)
                .map(|(a, &w)| AtomEntry {
                    id: a.id.clone(),
                    weight: w,
                    coords: a.coords.clone(),
                })
                .collect(),
            metric: explicit_metric
                .then(|| (0..m).map(|i| space.metric[i * m..(i + 1) * m].to_vec()).collect()),
        }
    }
}

/// One `n`-vector per atom, stored atom-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    values: Vec<f64>,
    atoms: usize,
    dim: usize,
}

impl EnsembleState {
    pub fn zeros(atoms: usize, dim: usize) -> Self {
        Self {
            values: vec![0.0; atoms * dim],
            atoms,
            dim,
        }
    }

    pub fn from_flat(atoms: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != atoms * dim {
            return Err(Error::Dimension(format!(
                "expected {atoms}x{dim} = {} values, got {}",
                atoms * dim,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite entry at atom {}, component {}",
                k / dim.max(1),
                k % dim.max(1)
            )));
        }
        Ok(Self {
            values,
            atoms,
            dim,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("ragged ensemble state rows".into()));
        }
        Self::from_flat(rows.len(), dim, rows.concat())
    }

    /// Scalar state per atom (`n = 1`).
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::from_flat(values.len(), 1, values.to_vec())
    }

    /// The same vector at every atom.
    pub fn constant(atoms: usize, value: &[f64]) -> Self {
        Self {
            values: value.repeat(atoms),
            atoms,
            dim: value.len(),
        }
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atom_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Stacked coordinates in `ℝ^{nM}`, atom-major.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.atoms != other.atoms || self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "shapes differ: {}x{} vs {}x{}",
                self.atoms, self.dim, other.atoms, other.dim
            )));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            ..*self
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
            ..*self
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| s * v).collect(),
            ..*self
        }
    }

    /// Keeps only the atoms listed in `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.atom(i));
        }
        Self {
            values,
            atoms: indices.len(),
            dim: self.dim,
        }
    }
}

impl fmt::Display for EnsembleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.atoms {
            if i > 0 {
                write!(f, "; ")?;
            }
            let parts: Vec<String> = self.atom(i).iter().map(|v| format!("{v}")).collect();
            write!(f, "{}", parts.join(", "))?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_atoms(w: (f64, f64), d: f64) -> ParameterSpace {
        ParameterSpace::new(
            vec![Atom::new("a"), Atom::new("b")],
            vec![w.0, w.1],
            Metric::Explicit(vec![vec![0.0, d], vec![d, 0.0]]),
        )
        .unwrap()
    }

    #[test]
    fn inner_cancels_by_symmetry() {
        let s = two_atoms((0.5, 0.5), 1.0);
        let phi = EnsembleState::scalar(&[2.0, -2.0]).unwrap();
        let psi = EnsembleState::scalar(&[1.0, 1.0]).unwrap();
        assert_eq!(s.inner(&phi, &psi).unwrap(), 0.0);
        let zero = EnsembleState::zeros(2, 1);
        assert_eq!(s.inner(&zero, &zero).unwrap(), 0.0);
    }

    #[test]
    fn norm_examples() {
        let s = ParameterSpace::singleton();
        assert_eq!(s.norm(&EnsembleState::scalar(&[3.0]).unwrap()).unwrap(), 3.0);
        let s = two_atoms((1.0, 1.0), 1.0);
        assert_eq!(s.norm(&EnsembleState::scalar(&[3.0, 4.0]).unwrap()).unwrap(), 5.0);
        assert_eq!(s.norm(&EnsembleState::zeros(2, 1)).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let s = two_atoms((1.0, 1.0), 1.0);
        let a = EnsembleState::zeros(2, 1);
        let b = EnsembleState::zeros(2, 2);
        assert!(matches!(s.inner(&a, &b), Err(Error::Dimension(_))));
        let c = EnsembleState::zeros(3, 1);
        assert!(matches!(s.inner(&c, &c), Err(Error::Dimension(_))));
    }

    #[test]
    fn ball_mass_examples() {
        let s = two_atoms((0.3, 0.7), 1.0);
        assert_eq!(s.ball_mass(0.5).unwrap(), 0.3);
        assert_eq!(s.ball_mass(1.5).unwrap(), 1.0);
        let one = ParameterSpace::singleton();
        for r in [1e-6, 0.3, 10.0] {
            assert_eq!(one.ball_mass(r).unwrap(), 1.0);
        }
        assert!(matches!(s.ball_mass(0.0), Err(Error::Argument(_))));
        assert!(matches!(s.ball_mass(-1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn ball_is_open() {
        let s = two_atoms((0.3, 0.7), 1.0);
        assert_eq!(s.ball_mass(1.0).unwrap(), 0.3);
    }

    #[test]
    fn ball_average_examples() {
        let s = two_atoms((1.0, 1.0), 1.0);
        let f = EnsembleState::scalar(&[0.0, 4.0]).unwrap();
        let avg = s.ball_average(&f, 2.0).unwrap();
        assert_eq!(avg.as_slice(), &[2.0, 2.0]);
        assert_eq!(s.ball_average(&f, 0.5).unwrap(), f);
        let c = EnsembleState::constant(2, &[1.5, -2.0]);
        assert_eq!(s.ball_average(&c, 5.0).unwrap(), c);
        assert!(s.ball_average(&f, 0.0).is_err());
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(ParameterSpace::new(vec![], vec![], Metric::Euclidean).is_err());
        let err = ParameterSpace::new(
            vec![Atom::new("a"), Atom::new("b")],
            vec![1.0, 0.0],
            Metric::Explicit(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("atom 1"));
        let err = ParameterSpace::new(
            vec![Atom::new("a"), Atom::new("b")],
            vec![1.0, 1.0],
            Metric::Explicit(vec![vec![0.0, 1.0], vec![2.0, 0.0]]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("symmetric"));
        let err = ParameterSpace::new(
            vec![Atom::new("a"), Atom::new("b"), Atom::new("c")],
            vec![1.0, 1.0, 1.0],
            Metric::Explicit(vec![
                vec![0.0, 1.0, 5.0],
                vec![1.0, 0.0, 1.0],
                vec![5.0, 1.0, 0.0],
            ]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("triangle"), "{err}");
        assert!(ParameterSpace::new(vec![Atom::new("a")], vec![1.0], Metric::Euclidean).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = ParameterSpace::uniform_line(4, -1.0, 1.0, 2.0).unwrap();
        let back = ParameterSpace::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn toml_loader_reports_atom() {
        let text = r#"
            [[atom]]
            id = "left"
            weight = 1.0
            coords = [0.0]

            [[atom]]
            id = "right"
            weight = -2.0
            coords = [1.0]
        "#;
        let err = ParameterSpace::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("atom 1 (`right`)"), "{err}");
    }
}
