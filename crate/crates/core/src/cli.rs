//! Command-line front end. The `ensemble-control` binary calls [`main`].
//!
//! Settings come from flags, then from an optional `--config` file (TOML,
//! or the `manifest.json` of an earlier run) whose entries take
//! precedence. Exit status: 0 success, 1 a check failed, 2 usage,
//! configuration or solver error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    integrate, estimate_suite, write_trajectory_csv, ControlSignal, EstimateConfig, TimeGrid,
};
use crate::error::{Error, Result};
use crate::expr::GRAMMAR_VERSION;
use crate::measure::EnsembleState;
use crate::problem::{
    builtin, modulus_check, validate_cost_bound, validate_growth, validate_lipschitz,
    BuiltinParams, Pairing, ProblemFile, ProblemSpec, ValidationReport, BUILTIN_NAMES,
    PROBLEM_FORMAT,
};
use crate::value::{
    dpp_residual, value_adjoint, value_dp, value_oracle_with, AdjointConfig, Axis, Method,
    ValueGrid, DEFAULT_BUDGET, VALUE_GRID_MAGIC,
};
use crate::verify::{
    epigraph_invariance, hjb_residual, interior_samples, oscillation_diagnostic,
    sample_controls, sample_states, terminal_limit, write_reports_csv, CheckReport,
    EpigraphConfig, Witness,
};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "ENSEMBLE_CONTROL_OUT";
pub const MANIFEST_FORMAT: &str = "ensemble-manifest/1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ensemble-control", version, about = "Average optimal control of parameter ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute V(s, φ) with one or all methods and write artifacts.
    Solve(Flags),
    /// Run the verification battery on the configured problem.
    Verify(Flags),
    /// Time the integrator and solvers across grid sizes.
    Bench(Flags),
    /// Evaluate a saved value grid without recomputation.
    Query(QueryFlags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Builtin name or path to a problem file.
    #[arg(long)]
    pub problem: Option<String>,
    /// oracle, dp, adjoint or all.
    #[arg(long)]
    pub method: Option<String>,
    /// Time steps N.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Points per state axis for dp.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Absolute tolerance replacing every check's default.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// TOML run configuration or a previous manifest.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct QueryFlags {
    /// Binary value grid written by `solve --method dp`.
    #[arg(long)]
    pub grid: PathBuf,
    /// Node time.
    #[arg(long)]
    pub t: f64,
    /// Stacked state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub phi: Vec<f64>,
}

/// A complete run description; serialized into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub params: BuiltinParams,
    pub method: String,
    pub steps: usize,
    pub grid: usize,
    /// dp axis range, shared by all stacked coordinates.
    pub axis: (f64, f64),
    /// Start time `s`.
    pub s: f64,
    /// Stacked initial state; a single entry is broadcast.
    pub phi: Vec<f64>,
    pub tol: Option<f64>,
    /// Factor in the grid tolerance `κ (Δt + max Δz)`.
    pub kappa: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub budget: u64,
    pub adjoint_iterations: usize,
    /// Randomized trials of the trajectory estimates.
    pub estimate_trials: usize,
    pub estimate_steps: usize,
    /// Random initial data in the dpp and epigraph checks.
    pub trials: usize,
    /// Steps of the dp table used by the HJB check.
    pub hjb_steps: usize,
    pub bench_kernels: Vec<String>,
    pub bench_levels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "linear-ensemble".into(),
            params: BuiltinParams::default(),
            method: "oracle".into(),
            steps: 6,
            grid: 41,
            axis: (-4.0, 4.0),
            s: 0.0,
            phi: vec![0.0],
            tol: None,
            kappa: 5.0,
            seed: 0,
            out: PathBuf::from("ensemble-run"),
            workers: 0,
            budget: DEFAULT_BUDGET,
            adjoint_iterations: AdjointConfig::default().iterations,
            estimate_trials: 200,
            estimate_steps: 200,
            trials: 5,
            hjb_steps: 50,
            bench_kernels: vec!["integrate".into(), "dp".into(), "oracle".into()],
            bench_levels: 3,
        }
    }
}

fn is_manifest(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

#[derive(Deserialize)]
struct ManifestConfig {
    config: RunConfig,
}

impl RunConfig {
    /// Flags first, then the config file on top.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(v) = &flags.problem {
            cfg.problem = v.clone();
        }
        if let Some(v) = &flags.method {
            cfg.method = v.clone();
        }
        if let Some(v) = flags.steps {
            cfg.steps = v;
        }
        if let Some(v) = flags.grid {
            cfg.grid = v;
        }
        if flags.tol.is_some() {
            cfg.tol = flags.tol;
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = &flags.out {
            cfg.out = v.clone();
        }
        if let Some(v) = flags.workers {
            cfg.workers = v;
        }
        if let Some(path) = &flags.config {
            cfg = cfg.overlay(path)?;
            // a replayed manifest must not overwrite the run it came from
            if let (Some(out), true) = (&flags.out, is_manifest(path)) {
                cfg.out = out.clone();
            }
        }
        Ok(cfg)
    }

    fn overlay(self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        if is_manifest(path) {
            return Ok(serde_json::from_str::<ManifestConfig>(&text)?.config);
        }
        let file: toml::Table = toml::from_str(&text)?;
        let mut merged = toml::Table::try_from(&self)
            .map_err(|e| Error::Format(format!("cannot serialize configuration: {e}")))?;
        for (k, v) in file {
            merged.insert(k, v);
        }
        Ok(merged.try_into()?)
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        if self.method == "all" {
            Ok(Method::ALL.to_vec())
        } else {
            Ok(vec![self.method.parse()?])
        }
    }

    pub fn load_problem(&self) -> Result<ProblemSpec> {
        if BUILTIN_NAMES.contains(&self.problem.as_str()) {
            builtin(&self.problem, &self.params)
        } else if Path::new(&self.problem).exists() {
            ProblemFile::load(&self.problem)
        } else {
            Err(Error::Argument(format!(
                "`{}` is neither a builtin ({}) nor an existing problem file",
                self.problem,
                BUILTIN_NAMES.join(", ")
            )))
        }
    }

    pub fn initial_state(&self, p: &ProblemSpec) -> Result<EnsembleState> {
        let d = p.stacked_dim();
        let values = match self.phi.len() {
            1 => vec![self.phi[0]; d],
            k if k == d => self.phi.clone(),
            k => {
                return Err(Error::Dimension(format!(
                    "phi has {k} entries; give 1 or n·M = {d}"
                )))
            }
        };
        EnsembleState::from_flat(p.atoms(), p.state_dim, values)
    }

    pub fn axes(&self, p: &ProblemSpec) -> Result<Vec<Axis>> {
        let a = Axis::new(self.axis.0, self.axis.1, self.grid)?;
        Ok(vec![a; p.stacked_dim()])
    }
}

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub exit: i32,
    pub lines: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format: &'static str,
    command: &'a str,
    tool_version: &'static str,
    problem_format: &'static str,
    expression_grammar: &'static str,
    value_grid_magic: String,
    config: &'a RunConfig,
    problem: String,
    results: serde_json::Value,
    timings: Vec<(String, f64)>,
    warnings: Vec<String>,
    artifacts: Vec<String>,
    passed: bool,
}

fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    p: &ProblemSpec,
    results: serde_json::Value,
    timings: Vec<(String, f64)>,
    warnings: Vec<String>,
    artifacts: &[PathBuf],
    passed: bool,
) -> Result<PathBuf> {
    let m = Manifest {
        format: MANIFEST_FORMAT,
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        problem_format: PROBLEM_FORMAT,
        expression_grammar: GRAMMAR_VERSION,
        value_grid_magic: String::from_utf8_lossy(VALUE_GRID_MAGIC).into_owned(),
        config: cfg,
        problem: format!("{p:?}"),
        results,
        timings,
        warnings,
        artifacts: artifacts
            .iter()
            .filter_map(|a| a.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
        passed,
    };
    let path = cfg.out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)?)?;
    Ok(path)
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Serialize)]
struct MethodResult {
    method: &'static str,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clamped: Option<u64>,
}

/// Solves with the configured method(s) and writes `value.csv`,
/// `control.csv`, `trajectory.csv`, the dp table (`value_grid.bin`,
/// `value_slice.csv`) and `manifest.json` into the output directory.
pub fn cmd_solve(cfg: &RunConfig) -> Result<Outcome> {
    with_pool(cfg.workers, || solve_inner(cfg))?
}

fn solve_inner(cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.load_problem()?;
    let methods = cfg.methods()?;
    let phi = cfg.initial_state(&p)?;
    p.check_time(cfg.s)?;
    let grid = TimeGrid::new(cfg.s, p.horizon, cfg.steps)?;
    fs::create_dir_all(&cfg.out)?;

    let mut results: Vec<MethodResult> = Vec::new();
    let mut controls: Vec<(&'static str, ControlSignal)> = Vec::new();
    let mut timings = Vec::new();
    let mut warnings = Vec::new();
    let mut artifacts = Vec::new();
    let mut dp_table: Option<ValueGrid> = None;
    let single = methods.len() == 1;
    for m in methods {
        let clock = Instant::now();
        let run: Result<()> = (|| {
            match m {
                Method::Oracle => {
                    let r = value_oracle_with(&p, &phi, &grid, cfg.budget)?;
                    results.push(MethodResult {
                        method: m.name(),
                        value: r.value,
                        iterations: None,
                        clamped: None,
                    });
                    controls.push((m.name(), r.best));
                }
                Method::Adjoint => {
                    let ac = AdjointConfig {
                        iterations: cfg.adjoint_iterations,
                        ..Default::default()
                    };
                    let r = value_adjoint(&p, &phi, &grid, &ac)?;
                    if !r.on_set {
                        warnings.push(
                            "adjoint control uses the convex hull of the control set".into(),
                        );
                    }
                    results.push(MethodResult {
                        method: m.name(),
                        value: r.value,
                        iterations: Some(r.iterations),
                        clamped: None,
                    });
                    controls.push((m.name(), r.control));
                }
                Method::Dp => {
                    let vg = value_dp(&p, &cfg.axes(&p)?, &grid)?;
                    warnings.extend(vg.warnings());
                    results.push(MethodResult {
                        method: m.name(),
                        value: vg.value_at(0, &phi)?,
                        iterations: None,
                        clamped: Some(vg.clamped),
                    });
                    dp_table = Some(vg);
                }
            }
            Ok(())
        })();
        timings.push((m.name().to_string(), clock.elapsed().as_secs_f64()));
        match run {
            Ok(()) => {}
            Err(e @ (Error::Capacity(_) | Error::Capability(_))) if !single => {
                warnings.push(format!("{} skipped: {e}", m.name()));
            }
            Err(e) => return Err(e),
        }
    }
    if results.is_empty() {
        return Err(Error::Argument("no method could run on this problem".into()));
    }

    let mut lines = Vec::new();
    let mut w = csv::Writer::from_path(cfg.out.join("value.csv"))?;
    w.write_record(["method", "s", "value"])?;
    for r in &results {
        w.write_record([r.method.to_string(), cfg.s.to_string(), r.value.to_string()])?;
        lines.push(format!("{:<8} V({}, φ) = {}", r.method, cfg.s, r.value));
    }
    w.flush()?;
    artifacts.push(cfg.out.join("value.csv"));

    if !controls.is_empty() {
        let path = cfg.out.join("control.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["method".to_string(), "j".into(), "t".into()];
        header.extend((1..=p.control_dim).map(|k| format!("u{k}")));
        w.write_record(&header)?;
        for (name, u) in &controls {
            for j in 0..u.grid().steps() {
                let mut row = vec![name.to_string(), j.to_string(), grid.node(j).to_string()];
                row.extend(u.value(j).iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        artifacts.push(path);
        let traj = integrate(&p, &phi, &controls[0].1)?;
        let path = cfg.out.join("trajectory.csv");
        write_trajectory_csv(&traj, &p.space, fs::File::create(&path)?)?;
        artifacts.push(path);
    }
    if let Some(vg) = &dp_table {
        let path = cfg.out.join("value_grid.bin");
        vg.save(&path)?;
        artifacts.push(path);
        let path = cfg.out.join("value_slice.csv");
        vg.write_slice_csv(0, fs::File::create(&path)?)?;
        artifacts.push(path);
    }

    // cross-method agreement
    let find = |name: &str| results.iter().find(|r| r.method == name).map(|r| r.value);
    let mut cross = serde_json::Map::new();
    let mut passed = true;
    if let (Some(o), Some(d), Some(vg)) = (find("oracle"), find("dp"), &dp_table) {
        let tol = cfg
            .tol
            .unwrap_or(cfg.kappa * (grid.step() + vg.max_spacing()));
        let diff = (d - o).abs();
        passed &= diff <= tol;
        cross.insert("dp_minus_oracle".into(), (d - o).into());
        cross.insert("dp_tolerance".into(), tol.into());
        lines.push(format!("dp vs oracle: |Δ| = {diff:.3e} (tol {tol:.3e})"));
    }
    if let (Some(o), Some(a)) = (find("oracle"), find("adjoint")) {
        cross.insert("adjoint_minus_oracle".into(), (a - o).into());
        lines.push(format!("adjoint − oracle = {:.3e}", a - o));
    }

    let results_json = serde_json::json!({ "values": results, "cross_method": cross });
    for w in &warnings {
        lines.push(format!("warning: {w}"));
    }
    let manifest = write_manifest(cfg, "solve", &p, results_json, timings, warnings, &artifacts, passed)?;
    artifacts.push(manifest);
    Ok(Outcome {
        exit: if passed { EXIT_OK } else { EXIT_CHECK_FAILED },
        lines,
        artifacts,
    })
}

fn validation_check(v: ValidationReport, p: &ProblemSpec, seed: u64, tol: Option<f64>) -> CheckReport {
    // ratios pass at <= 1, the cost-bound slack at >= 0; 1e-9 absorbs rounding
    let (worst, default_tol) = if v.check == "cost-lower-bound" {
        (-v.worst, 1e-9)
    } else {
        (v.worst - 1.0, 1e-9)
    };
    let tolerance = tol.unwrap_or(default_tol);
    CheckReport {
        check: format!("hypothesis: {}", v.check),
        instance: p.name.clone(),
        tolerance,
        worst,
        witness: v.worst_sample.map(|s| Witness {
            t: s.t,
            state: s.x,
            note: format!("atoms {:?}, u {:?}", s.atoms, s.u),
        }),
        samples: v.samples,
        skipped: 0,
        seed,
        passed: worst <= tolerance,
        metrics: Vec::new(),
        series: Vec::new(),
    }
}

/// Runs the battery and writes `reports.csv`, `summary.txt` and
/// `manifest.json`. Checks a problem cannot support are listed as skipped.
pub fn cmd_verify(cfg: &RunConfig) -> Result<Outcome> {
    with_pool(cfg.workers, || verify_inner(cfg))?
}

fn verify_inner(cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.load_problem()?;
    let phi = cfg.initial_state(&p)?;
    fs::create_dir_all(&cfg.out)?;
    let mut reports: Vec<CheckReport> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();
    let mut timings = Vec::new();
    let seed = cfg.seed;
    let tol = cfg.tol;
    let grid = TimeGrid::new(0.0, p.horizon, cfg.steps)?;

    let clock = Instant::now();
    reports.push(validation_check(validate_growth(&p, 2000, seed), &p, seed, tol));
    reports.push(validation_check(validate_lipschitz(&p, 2000, seed), &p, seed, tol));
    reports.push(validation_check(validate_cost_bound(&p, 2000, seed), &p, seed, tol));
    match modulus_check(&p, 64, Pairing::Shared, seed) {
        Ok(v) => reports.push(validation_check(v, &p, seed, tol)),
        Err(e) => skipped.push(format!("modulus: {e}")),
    }
    timings.push(("hypotheses".to_string(), clock.elapsed().as_secs_f64()));

    let clock = Instant::now();
    let lc = EstimateConfig {
        steps: cfg.estimate_steps,
        slack: tol.unwrap_or(0.05),
        seed,
        datum_radius: 1.0,
    };
    let estimates = estimate_suite(&p, cfg.estimate_trials, &lc)?;
    for c in &estimates.checks {
        let mut r = CheckReport::new(
            &format!("trajectory estimate {}", c.kind.label()),
            &p.name,
            lc.slack,
            seed,
        );
        r.samples = cfg.estimate_trials;
        r.worst = c.worst_ratio - 1.0;
        r.witness = c.witness.map(|w| Witness {
            t: w.t,
            state: Vec::new(),
            note: format!("trial {}, s = {}, τ = {}, lhs {:.6e}, rhs {:.6e}", w.trial, w.s, w.tau, w.lhs, w.rhs),
        });
        r.passed = r.worst <= r.tolerance;
        reports.push(r);
    }
    timings.push(("trajectory estimates".to_string(), clock.elapsed().as_secs_f64()));

    let clock = Instant::now();
    let dpp_tol = tol.unwrap_or(1e-10);
    let mut dpp = CheckReport::new("dpp residual", &p.name, dpp_tol, seed);
    let mut dpp_ok = true;
    for (trial, x) in sample_states(&p, cfg.trials, 1.0, seed).iter().enumerate() {
        for split in 1..grid.steps() {
            match dpp_residual(&p, x, &grid, split, cfg.budget) {
                Ok(r) => dpp.observe(r.residual.abs(), || Witness {
                    t: r.s2,
                    state: x.as_slice().to_vec(),
                    note: format!("trial {trial}, head {:?}, tail {:?}", r.head, r.tail),
                }),
                Err(e @ Error::Capacity(_)) => {
                    skipped.push(format!("dpp residual: {e}"));
                    dpp_ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !dpp_ok {
            break;
        }
    }
    if dpp_ok {
        reports.push(dpp.finish());
    }
    let ec = EpigraphConfig {
        trials: cfg.trials,
        seed,
        datum_radius: 1.0,
        tol: tol.unwrap_or(1e-8),
        budget: cfg.budget,
    };
    match epigraph_invariance(&p, &grid, &ec) {
        Ok(r) => {
            reports.push(r.weak);
            reports.push(r.strong);
        }
        Err(e @ Error::Capacity(_)) => skipped.push(format!("epigraph invariance: {e}")),
        Err(e) => return Err(e),
    }
    timings.push(("dynamic programming".to_string(), clock.elapsed().as_secs_f64()));

    let clock = Instant::now();
    if p.stacked_dim() <= 4 {
        let hgrid = TimeGrid::new(0.0, p.horizon, cfg.hjb_steps)?;
        let vg = value_dp(&p, &cfg.axes(&p)?, &hgrid)?;
        let samples = interior_samples(&vg, 0.5, 4000);
        let mut r = hjb_residual(&vg, &p, &samples, cfg.kappa)?;
        if let Some(t) = tol {
            r.tolerance = t;
            r.passed = r.worst <= t;
        }
        reports.push(r);
    } else {
        skipped.push(format!("hjb residual: n·M = {} exceeds 4", p.stacked_dim()));
    }
    timings.push(("hjb".to_string(), clock.elapsed().as_secs_f64()));

    let clock = Instant::now();
    let gaps: Vec<f64> = [0.2, 0.1, 0.05, 0.025].iter().map(|g| g * p.horizon).collect();
    match terminal_limit(&p, &phi, &gaps, 4, cfg.budget, seed) {
        Ok(mut r) => {
            if let Some(t) = tol {
                r.tolerance = t;
                r.passed = r.worst <= t;
            }
            reports.push(r);
        }
        Err(e @ Error::Capacity(_)) => skipped.push(format!("terminal limit: {e}")),
        Err(e) => return Err(e),
    }
    let diam = p.space.diameter();
    if diam > 0.0 {
        let radii: Vec<f64> = (1..=8).map(|k| diam * k as f64 / 8.0).collect();
        let us = sample_controls(&p, &grid, 8, seed)?;
        match oscillation_diagnostic(&p, &phi, &us, &radii) {
            Ok(mut r) => {
                if let Some(t) = tol {
                    r.tolerance = t;
                    r.passed = r.worst <= t;
                }
                reports.push(r);
            }
            Err(e @ Error::Capability(_)) => skipped.push(format!("oscillation: {e}")),
            Err(e) => return Err(e),
        }
    } else {
        skipped.push("oscillation: single-point parameter space".into());
    }
    timings.push(("terminal and oscillation".to_string(), clock.elapsed().as_secs_f64()));

    let passed = reports.iter().all(|r| r.passed);
    let csv_path = cfg.out.join("reports.csv");
    write_reports_csv(&reports, fs::File::create(&csv_path)?)?;
    let mut lines: Vec<String> = reports.iter().map(ToString::to_string).collect();
    lines.extend(skipped.iter().map(|s| format!("[skip] {s}")));
    lines.push(format!(
        "{} of {} checks passed",
        reports.iter().filter(|r| r.passed).count(),
        reports.len()
    ));
    let summary_path = cfg.out.join("summary.txt");
    fs::write(&summary_path, lines.join("\n") + "\n")?;
    let mut artifacts = vec![csv_path, summary_path];
    let results = serde_json::json!({ "reports": reports, "skipped": skipped });
    let manifest = write_manifest(cfg, "verify", &p, results, timings, Vec::new(), &artifacts, passed)?;
    artifacts.push(manifest);
    Ok(Outcome {
        exit: if passed { EXIT_OK } else { EXIT_CHECK_FAILED },
        lines,
        artifacts,
    })
}

/// Times each kernel at `bench_levels` doubling sizes and writes
/// `bench.csv` with columns `kernel,steps,grid,nodes,seconds`.
pub fn cmd_bench(cfg: &RunConfig) -> Result<Outcome> {
    with_pool(cfg.workers, || bench_inner(cfg))?
}

fn bench_inner(cfg: &RunConfig) -> Result<Outcome> {
    let p = cfg.load_problem()?;
    let phi = cfg.initial_state(&p)?;
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["kernel", "steps", "grid", "nodes", "seconds"])?;
    let mut lines = Vec::new();
    for kernel in &cfg.bench_kernels {
        for level in 0..cfg.bench_levels {
            let scale = 1usize << level;
            let (steps, count, nodes, seconds) = match kernel.as_str() {
                "integrate" => {
                    let steps = cfg.steps * scale * 100;
                    let grid = TimeGrid::new(cfg.s, p.horizon, steps)?;
                    let u = ControlSignal::constant(grid, &p.controls.active(cfg.s)[0]);
                    let clock = Instant::now();
                    integrate(&p, &phi, &u)?;
                    (steps, 0, 0, clock.elapsed().as_secs_f64())
                }
                "dp" => {
                    let count = (cfg.grid - 1) * scale + 1;
                    let axes = vec![Axis::new(cfg.axis.0, cfg.axis.1, count)?; p.stacked_dim()];
                    let grid = TimeGrid::new(cfg.s, p.horizon, cfg.steps)?;
                    let clock = Instant::now();
                    let vg = value_dp(&p, &axes, &grid)?;
                    (cfg.steps, count, vg.node_count(), clock.elapsed().as_secs_f64())
                }
                "oracle" => {
                    let steps = cfg.steps + level;
                    let grid = TimeGrid::new(cfg.s, p.horizon, steps)?;
                    let clock = Instant::now();
                    value_oracle_with(&p, &phi, &grid, cfg.budget)?;
                    (steps, 0, 0, clock.elapsed().as_secs_f64())
                }
                other => {
                    return Err(Error::Argument(format!(
                        "unknown bench kernel `{other}` (integrate, dp, oracle)"
                    )))
                }
            };
            w.write_record([
                kernel.clone(),
                steps.to_string(),
                count.to_string(),
                nodes.to_string(),
                seconds.to_string(),
            ])?;
            lines.push(format!("{kernel:<10} steps {steps:>7} grid {count:>5} {seconds:.6} s"));
        }
    }
    w.flush()?;
    Ok(Outcome {
        exit: EXIT_OK,
        lines,
        artifacts: vec![path],
    })
}

/// Interpolated `V(t, φ)` from a saved value grid.
pub fn query(path: &Path, t: f64, phi: &[f64]) -> Result<f64> {
    let vg = ValueGrid::load(path)?;
    let state = EnsembleState::from_flat(vg.atoms(), vg.dim(), phi.to_vec())?;
    vg.value(t, &state)
}

/// Parses `args`, runs the command, prints its lines and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Query(q) => query(&q.grid, q.t, &q.phi).map(|v| Outcome {
            exit: EXIT_OK,
            lines: vec![v.to_string()],
            artifacts: Vec::new(),
        }),
        Command::Solve(f) | Command::Verify(f) | Command::Bench(f) => {
            RunConfig::resolve(f).and_then(|cfg| match &cli.command {
                Command::Solve(_) => cmd_solve(&cfg),
                Command::Verify(_) => cmd_verify(&cfg),
                _ => cmd_bench(&cfg),
            })
        }
    };
    match outcome {
        Ok(o) => {
            for l in &o.lines {
                println!("{l}");
            }
            o.exit
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_overrides_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "steps = 3\nmethod = \"dp\"\n[params]\natoms = 1\n").unwrap();
        let flags = Flags {
            steps: Some(9),
            seed: Some(7),
            config: Some(path),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!((cfg.steps, cfg.seed, cfg.method.as_str()), (3, 7, "dp"));
        assert_eq!(cfg.params.atoms, 1);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "stepz = 3\n").unwrap();
        let flags = Flags {
            config: Some(path),
            ..Default::default()
        };
        assert!(RunConfig::resolve(&flags).is_err());
    }

    #[test]
    fn phi_broadcast() {
        let cfg = RunConfig {
            phi: vec![0.5],
            ..Default::default()
        };
        let p = cfg.load_problem().unwrap();
        assert_eq!(cfg.initial_state(&p).unwrap().as_slice(), &[0.5, 0.5]);
        let bad = RunConfig {
            phi: vec![0.5, 1.0, 2.0],
            ..Default::default()
        };
        assert!(bad.initial_state(&p).is_err());
    }
}
