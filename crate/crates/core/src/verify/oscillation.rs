use super::{CheckReport, Witness};
use crate::ensemble::{integrate, ControlSignal};
use crate::error::{Error, Result};
use crate::measure::EnsembleState;
use crate::problem::ProblemSpec;

/// Mean oscillation of the integrated velocity
/// `F(t, ·) = ∫_s^t f(σ, x(σ, ·), u(σ), ·) dσ` over metric balls.
///
/// `F` at the grid nodes is `x(t_j) − φ`, which is the Runge–Kutta
/// quadrature of the velocity along the computed trajectory. For every
/// radius the largest `Σ_i w_i |F_i − (F)_{B_r(ω_i)}|²` over controls and
/// nodes is compared with `μ(Ω) θ_f(r)²`. The residual is the excess over
/// that bound; `h(r) > 0` is required at every radius.
pub fn oscillation_diagnostic(
    p: &ProblemSpec,
    phi: &EnsembleState,
    controls: &[ControlSignal],
    radii: &[f64],
) -> Result<CheckReport> {
    let theta = p.dynamics.modulus().ok_or_else(|| {
        Error::Capability("the oscillation diagnostic needs a modulus of continuity".into())
    })?;
    let mass = p.space.total_mass();
    let mut report = CheckReport::new("mean oscillation", &p.name, 0.0, 0);
    let mut curve = vec![0.0_f64; radii.len()];
    let mut scale: f64 = 0.0;
    let mut min_h = f64::INFINITY;
    for &r in radii {
        min_h = min_h.min(p.space.ball_mass(r)?);
    }
    for (ci, u) in controls.iter().enumerate() {
        let traj = integrate(p, phi, u)?;
        for (j, x) in traj.states().iter().enumerate() {
            let field = x.sub(phi)?;
            scale = scale.max(p.space.norm(&field)?.powi(2));
            for (ri, &r) in radii.iter().enumerate() {
                let avg = p.space.ball_average(&field, r)?;
                let osc = p.space.distance_l2(&field, &avg)?.powi(2);
                curve[ri] = curve[ri].max(osc);
                let bound = mass * theta(r).powi(2);
                report.observe(osc - bound, || Witness {
                    t: traj.grid().node(j),
                    state: x.as_slice().to_vec(),
                    note: format!("control {ci}, r = {r}, oscillation {osc:.6e}, bound {bound:.6e}"),
                });
            }
        }
    }
    // rounding in the ball averages
    report.tolerance = 1e-12 * scale;
    report.series = radii.iter().cloned().zip(curve).collect();
    report.metrics.push(("min_ball_mass".into(), min_h));
    if !(min_h > 0.0) {
        report.worst = f64::INFINITY;
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::TimeGrid;
    use crate::measure::ParameterSpace;
    use crate::problem::{builtin, BuiltinParams};
    use crate::verify::sample_controls;

    #[test]
    fn parameter_free_dynamics_do_not_oscillate() {
        let p = builtin("decoupled-quadratic", &BuiltinParams { atoms: 4, ..Default::default() })
            .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let us = sample_controls(&p, &grid, 5, 1).unwrap();
        let phi = EnsembleState::constant(4, &[0.3]);
        let r = oscillation_diagnostic(&p, &phi, &us, &[0.1, 0.4, 2.0]).unwrap();
        assert!(r.passed);
        assert!(r.series.iter().all(|&(_, o)| o < 1e-28));
    }

    #[test]
    fn single_atom() {
        let params = BuiltinParams {
            space: Some(ParameterSpace::singleton()),
            a: Some(vec![0.7]),
            c: Some(vec![1.0]),
            ..Default::default()
        };
        let p = builtin("linear-ensemble", &params).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let us = sample_controls(&p, &grid, 3, 2).unwrap();
        let phi = EnsembleState::scalar(&[1.0]).unwrap();
        let r = oscillation_diagnostic(&p, &phi, &us, &[0.5, 1.0]).unwrap();
        assert!(r.series.iter().all(|&(_, o)| o == 0.0));
    }

    #[test]
    fn needs_modulus() {
        let p = crate::problem::ProblemFile::parse(
            r#"
            format = "ensemble-problem/1"
            [space]
            [[space.atom]]
            id = "a"
            weight = 1.0
            coords = [0.0]
            [custom]
            grammar = "expr/1"
            state_dim = 1
            horizon = 1.0
            f = ["u1"]
            g = "x1"
            growth = 1.0
            lipschitz = 0.1
            cost_a = -1.0
            cost_b = 1.0
            control_bounds = [[-1.0, 1.0]]
            [[custom.controls]]
            start = 0.0
            points = [[-1.0], [1.0]]
            "#,
        )
        .unwrap()
        .build(None)
        .unwrap();
        let phi = EnsembleState::scalar(&[0.0]).unwrap();
        assert!(matches!(
            oscillation_diagnostic(&p, &phi, &[], &[0.5]),
            Err(Error::Capability(_))
        ));
    }
}
