use super::{CheckReport, Witness};
use crate::error::{Error, Result};
use crate::hamiltonian::{hamiltonian, Costate};
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;
use crate::value::ValueGrid;

pub const DEFAULT_KAPPA: f64 = 5.0;

/// `κ (Δt + max Δz)`.
pub fn hjb_tolerance(vg: &ValueGrid, kappa: f64) -> f64 {
    kappa * (vg.grid().step() + vg.max_spacing())
}

/// A node of a value grid: time index and per-axis indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HjbSample {
    pub j: usize,
    pub index: Vec<usize>,
}

/// Interior nodes within `region` (a fraction of each axis half-width
/// around the axis midpoint) at every interior time, thinned to at most
/// `limit` samples by a fixed stride.
pub fn interior_samples(vg: &ValueGrid, region: f64, limit: usize) -> Vec<HjbSample> {
    let mut all = Vec::new();
    let axes = vg.axes();
    for j in 1..vg.grid().steps() {
        for node in 0..vg.node_count() {
            let idx = vg.multi_index(node);
            let inside = idx.iter().zip(axes).all(|(&k, a)| {
                let mid = 0.5 * (a.lo + a.hi);
                let half = 0.5 * (a.hi - a.lo);
                k > 0 && k + 1 < a.count && (a.point(k) - mid).abs() <= region * half
            });
            if inside {
                all.push(HjbSample { j, index: idx });
            }
        }
    }
    if limit == 0 || all.len() <= limit {
        return all;
    }
    let stride = all.len().div_ceil(limit);
    all.into_iter().step_by(stride).collect()
}

/// Central-difference residual `|V_t + H(t, φ, V_φ)|` at each sample.
///
/// The stacked gradient is turned into a costate by dividing each atom's
/// block by its weight. Samples where the stored argmin differs between a
/// node and any axis neighbour are counted as kink-suspect and skipped.
pub fn hjb_residual(
    vg: &ValueGrid,
    p: &ProblemSpec,
    samples: &[HjbSample],
    kappa: f64,
) -> Result<CheckReport> {
    if vg.atoms() != p.atoms() || vg.dim() != p.state_dim {
        return Err(Error::Dimension("value grid does not belong to the problem".into()));
    }
    let tol = hjb_tolerance(vg, kappa);
    let mut report = CheckReport::new("hjb residual", &p.name, tol, 0);
    let steps = vg.grid().steps();
    let dt = vg.grid().step();
    let axes = vg.axes();
    let n = p.state_dim;
    for s in samples {
        let interior = s.j > 0
            && s.j < steps
            && s.index.len() == axes.len()
            && s.index.iter().zip(axes).all(|(&k, a)| k > 0 && k + 1 < a.count);
        if !interior {
            return Err(Error::Argument(format!(
                "sample at time index {} and node {:?} is not strictly interior",
                s.j, s.index
            )));
        }
        let node = vg.flat_index(&s.index);
        let argmin = vg.argmin_slice(s.j);
        let mut neighbours = Vec::with_capacity(2 * axes.len());
        for q in 0..axes.len() {
            for delta in [-1isize, 1] {
                let mut idx = s.index.clone();
                idx[q] = (idx[q] as isize + delta) as usize;
                neighbours.push(vg.flat_index(&idx));
            }
        }
        if neighbours.iter().any(|&m| argmin[m] != argmin[node]) {
            report.skipped += 1;
            continue;
        }

        let v_t = (vg.slice(s.j + 1)[node] - vg.slice(s.j - 1)[node]) / (2.0 * dt);
        let here = vg.slice(s.j);
        let mut grad = vec![0.0; axes.len()];
        for (q, a) in axes.iter().enumerate() {
            let (lo, hi) = (neighbours[2 * q], neighbours[2 * q + 1]);
            grad[q] = (here[hi] - here[lo]) / (2.0 * a.spacing());
        }
        for i in 0..p.atoms() {
            let w = p.space.weight(i);
            for g in &mut grad[i * n..(i + 1) * n] {
                *g /= w;
            }
        }
        let t = vg.grid().node(s.j);
        let z = vg.node_point(node);
        let phi = EnsembleState::from_flat(p.atoms(), n, z.clone())?;
        let costate = Costate(EnsembleState::from_flat(p.atoms(), n, grad)?);
        let h = hamiltonian(p, t, &phi, &costate)?;
        let residual = (v_t + h.value).abs();
        report.observe(residual, || Witness {
            t,
            state: z,
            note: format!("V_t = {v_t:.6e}, H = {:.6e}", h.value),
        });
    }
    report.metrics.push(("dt".into(), dt));
    report.metrics.push(("dz".into(), vg.max_spacing()));
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::TimeGrid;
    use crate::problem::{builtin, BuiltinParams};
    use crate::value::{value_dp, Axis};

    #[test]
    fn static_problem_has_zero_residual() {
        let p = builtin("static", &BuiltinParams::default()).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 6).unwrap();
        let vg = value_dp(&p, &[Axis::new(-2.0, 2.0, 21).unwrap(); 2], &grid).unwrap();
        let samples = interior_samples(&vg, 0.5, 0);
        let r = hjb_residual(&vg, &p, &samples, DEFAULT_KAPPA).unwrap();
        assert!(r.passed);
        assert_eq!(r.worst, 0.0);
        assert!(r.samples > 0);
    }

    #[test]
    fn boundary_samples_are_rejected() {
        let p = builtin("static", &BuiltinParams::default()).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let vg = value_dp(&p, &[Axis::new(-2.0, 2.0, 5).unwrap(); 2], &grid).unwrap();
        for bad in [
            HjbSample { j: 4, index: vec![2, 2] },
            HjbSample { j: 0, index: vec![2, 2] },
            HjbSample { j: 2, index: vec![0, 2] },
        ] {
            assert!(matches!(
                hjb_residual(&vg, &p, &[bad], DEFAULT_KAPPA),
                Err(Error::Argument(_))
            ));
        }
    }
}
