//! Problem files (TOML).
//!
//! ```toml
//! format = "ensemble-problem/1"
//! builtin = "linear-ensemble"      # or a [custom] table
//! space_file = "atoms.toml"        # optional; or an inline [space] table
//!
//! [params]                         # BuiltinParams fields
//! atoms = 4
//! a_slope = 1.0
//! ```
//!
//! Custom problems use the `expr/1` expression grammar over
//! `t, x1.., u1.., w1..` (`w` are the coordinates of the current atom):
//!
//! ```toml
//! [custom]
//! grammar = "expr/1"
//! state_dim = 1
//! horizon = 1.0
//! f = ["w1 * x1 + u1"]
//! g = "x1^2"
//! growth = 2.0
//! lipschitz = 1.0
//! modulus = "1.0 * r"     # optional, expression in r
//! cost_a = 0.0            # scalar or one value per atom
//! cost_b = 0.0
//! control_bounds = [[-1.0, 1.0]]
//!
//! [[custom.controls]]
//! start = 0.0
//! points = [[-1.0], [0.0], [1.0]]
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    builtin, BuiltinParams, ControlSchedule, DynamicsSpec, ProblemSpec, TerminalCostSpec,
    ValidationBox,
};
use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr, Var, GRAMMAR_VERSION};
use crate::measure::ParameterSpace;

pub const PROBLEM_FORMAT: &str = "ensemble-problem/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub format: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub space_file: Option<String>,
    #[serde(default)]
    pub space: Option<toml::Table>,
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub params: Option<BuiltinParams>,
    #[serde(default)]
    pub custom: Option<CustomProblem>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAtom {
    Scalar(f64),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlInterval {
    pub start: f64,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProblem {
    pub grammar: String,
    pub state_dim: usize,
    pub horizon: f64,
    pub f: Vec<String>,
    pub g: String,
    pub growth: f64,
    pub lipschitz: f64,
    #[serde(default)]
    pub modulus: Option<String>,
    #[serde(default = "zero_per_atom")]
    pub cost_a: PerAtom,
    #[serde(default)]
    pub cost_b: f64,
    #[serde(default = "default_radius")]
    pub state_radius: f64,
    pub control_bounds: Vec<(f64, f64)>,
    pub controls: Vec<ControlInterval>,
}

fn zero_per_atom() -> PerAtom {
    PerAtom::Scalar(0.0)
}

fn default_radius() -> f64 {
    5.0
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ProblemFile = toml::from_str(text)?;
        if file.format != PROBLEM_FORMAT {
            return Err(Error::Format(format!(
                "unsupported problem format `{}` (expected `{PROBLEM_FORMAT}`)",
                file.format
            )));
        }
        Ok(file)
    }

    /// Loads and builds the problem; `space_file` is resolved relative to
    /// the problem file.
    pub fn load(path: impl AsRef<Path>) -> Result<ProblemSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)?.build(path.parent())
    }

    pub fn build(&self, base: Option<&Path>) -> Result<ProblemSpec> {
        let space = match (&self.space_file, &self.space) {
            (Some(_), Some(_)) => {
                return Err(Error::Format("give either `space_file` or `[space]`, not both".into()))
            }
            (Some(f), None) => Some(ParameterSpace::load(
                base.map_or_else(|| Path::new(f).to_path_buf(), |b| b.join(f)),
            )?),
            (None, Some(table)) => Some(ParameterSpace::from_toml_str(&table.to_string())?),
            (None, None) => None,
        };
        let mut spec = match (&self.builtin, &self.custom) {
            (Some(name), None) => {
                let mut params = self.params.clone().unwrap_or_default();
                params.space = space;
                builtin(name, &params)?
            }
            (None, Some(custom)) => {
                if self.params.is_some() {
                    return Err(Error::Format("`[params]` only applies to builtin problems".into()));
                }
                let space = space.ok_or_else(|| {
                    Error::Format("custom problems need `space_file` or `[space]`".into())
                })?;
                custom.build(space)?
            }
            _ => {
                return Err(Error::Format(
                    "a problem file names exactly one of `builtin` or `[custom]`".into(),
                ))
            }
        };
        if let Some(name) = &self.name {
            spec.name = name.clone();
        }
        Ok(spec)
    }
}

impl CustomProblem {
    fn build(&self, space: ParameterSpace) -> Result<ProblemSpec> {
        if self.grammar != GRAMMAR_VERSION {
            return Err(Error::Format(format!(
                "unsupported expression grammar `{}` (expected `{GRAMMAR_VERSION}`)",
                self.grammar
            )));
        }
        let n = self.state_dim;
        let m = self.control_bounds.len();
        if self.f.len() != n {
            return Err(Error::Dimension(format!(
                "{} velocity components for state dimension {n}",
                self.f.len()
            )));
        }
        let f: Vec<Expr> = self.f.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()?;
        let g = Expr::parse(&self.g)?;
        let coord_dim = (0..space.len()).map(|i| space.coords(i).len()).min().unwrap_or(0);
        for e in f.iter().chain(std::iter::once(&g)) {
            let (xs, us, ws) = e.arity();
            if xs > n || us > m || ws > coord_dim {
                return Err(Error::Dimension(format!(
                    "expression `{e}` refers to x{xs}/u{us}/w{ws} beyond n = {n}, m = {m}, \
                     atom coordinates = {coord_dim}"
                )));
            }
            if e.uses(Var::Radius) {
                return Err(Error::Parse(format!("`r` is only valid in the modulus: `{e}`")));
            }
        }
        if g.uses(Var::Time) || (0..m).any(|k| g.uses(Var::Control(k))) {
            return Err(Error::Parse("terminal cost may only depend on x and w".into()));
        }

        let coords: Arc<Vec<Vec<f64>>> =
            Arc::new((0..space.len()).map(|i| space.coords(i).to_vec()).collect());
        let parameter_free = f.iter().all(|e| e.arity().2 == 0);

        let jac_x: Vec<Vec<Expr>> = f
            .iter()
            .map(|e| (0..n).map(|k| e.derivative(Var::State(k))).collect())
            .collect();
        let jac_u: Vec<Vec<Expr>> = f
            .iter()
            .map(|e| (0..m).map(|k| e.derivative(Var::Control(k))).collect())
            .collect();
        let grad_g: Vec<Expr> = (0..n).map(|k| g.derivative(Var::State(k))).collect();

        let (fe, fc) = (Arc::new(f), coords.clone());
        let (jc, gjc, ggc) = (coords.clone(), coords.clone(), coords);
        let mut dynamics = DynamicsSpec::new(
            move |t, x, u, i, out| {
                let b = Bindings {
                    t,
                    r: 0.0,
                    x,
                    u,
                    w: &fc[i],
                };
                for (o, e) in out.iter_mut().zip(fe.iter()) {
                    *o = e.eval(&b);
                }
            },
            self.growth,
            self.lipschitz,
        )?
        .with_jacobian(move |t, x, u, i, dx, du| {
            let b = Bindings {
                t,
                r: 0.0,
                x,
                u,
                w: &jc[i],
            };
            for (row, (jxr, jur)) in jac_x.iter().zip(&jac_u).enumerate() {
                for (k, e) in jxr.iter().enumerate() {
                    dx[row * n + k] = e.eval(&b);
                }
                for (k, e) in jur.iter().enumerate() {
                    du[row * m + k] = e.eval(&b);
                }
            }
        });
        if parameter_free {
            dynamics = dynamics.parameter_free();
        }
        if let Some(src) = &self.modulus {
            let theta = Expr::parse(src)?;
            if theta.arity() != (0, 0, 0) || theta.uses(Var::Time) {
                return Err(Error::Parse("modulus may only depend on r".into()));
            }
            dynamics = dynamics.with_modulus(move |r| {
                theta.eval(&Bindings {
                    r,
                    ..Default::default()
                })
            });
        }

        let a = match &self.cost_a {
            PerAtom::Scalar(v) => vec![*v; space.len()],
            PerAtom::List(v) => v.clone(),
        };
        let cost = TerminalCostSpec::new(
            move |x, i| {
                g.eval(&Bindings {
                    x,
                    w: &gjc[i],
                    ..Default::default()
                })
            },
            a,
            self.cost_b,
        )?
        .with_gradient(move |x, i, out| {
            let b = Bindings {
                x,
                w: &ggc[i],
                ..Default::default()
            };
            for (o, e) in out.iter_mut().zip(&grad_g) {
                *o = e.eval(&b);
            }
        });

        let mut breakpoints: Vec<f64> = self.controls.iter().map(|c| c.start).collect();
        breakpoints.push(self.horizon);
        let sets = self.controls.iter().map(|c| c.points.clone()).collect();
        let controls = ControlSchedule::new(breakpoints, sets, self.control_bounds.clone())?;
        ProblemSpec::new(
            "custom",
            space,
            n,
            dynamics,
            cost,
            controls,
            self.horizon,
            ValidationBox {
                state_radius: self.state_radius,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::EnsembleState;

    const CUSTOM: &str = r#"
        format = "ensemble-problem/1"
        name = "scalar-drift"

        [space]
        [[space.atom]]
        id = "lo"
        weight = 0.5
        coords = [-1.0]
        [[space.atom]]
        id = "hi"
        weight = 0.5
        coords = [1.0]

        [custom]
        grammar = "expr/1"
        state_dim = 1
        horizon = 1.0
        f = ["0.5 * w1 * x1 + u1"]
        g = "(x1 - w1)^2"
        growth = 1.0
        lipschitz = 0.5
        modulus = "0.5 * 5 * r"
        control_bounds = [[-1.0, 1.0]]

        [[custom.controls]]
        start = 0.0
        points = [[-1.0], [0.0], [1.0]]
    "#;

    #[test]
    fn custom_problem_evaluates_expressions() {
        let p = ProblemFile::parse(CUSTOM).unwrap().build(None).unwrap();
        assert_eq!(p.name, "scalar-drift");
        assert_eq!((p.state_dim, p.control_dim, p.atoms()), (1, 1, 2));
        let mut out = [0.0];
        p.dynamics.eval(0.0, &[2.0], &[1.0], 1, &mut out);
        assert_eq!(out[0], 2.0);
        assert_eq!(p.cost.eval(&[3.0], 0), 16.0);
        assert!(p.is_differentiable());
        let (mut dx, mut du) = ([0.0], [0.0]);
        (p.dynamics.jacobian().unwrap())(0.0, &[2.0], &[1.0], 0, &mut dx, &mut du);
        assert_eq!((dx[0], du[0]), (-0.5, 1.0));
        assert_eq!((p.dynamics.modulus().unwrap())(2.0), 5.0);
        let phi = EnsembleState::scalar(&[0.0, 0.0]).unwrap();
        assert_eq!(p.velocity(0.0, &phi, &[1.0]).as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn builtin_with_params() {
        let text = r#"
            format = "ensemble-problem/1"
            builtin = "linear-ensemble"
            [params]
            atoms = 3
            a_slope = 0.5
        "#;
        let p = ProblemFile::parse(text).unwrap().build(None).unwrap();
        assert_eq!(p.atoms(), 3);
        assert!(p.closed_form.is_some());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ProblemFile::parse("format = \"other/2\"").is_err());
        let both = "format = \"ensemble-problem/1\"\n";
        assert!(ProblemFile::parse(both).unwrap().build(None).is_err());
        let bad_var = CUSTOM.replace("0.5 * w1 * x1 + u1", "w2 * x1");
        assert!(ProblemFile::parse(&bad_var).unwrap().build(None).is_err());
        let bad_grammar = CUSTOM.replace("expr/1", "expr/9");
        assert!(ProblemFile::parse(&bad_grammar).unwrap().build(None).is_err());
        let bad_params = r#"
            format = "ensemble-problem/1"
            builtin = "linear-ensemble"
            [params]
            atomz = 3
        "#;
        assert!(ProblemFile::parse(bad_params).is_err());
    }
}
