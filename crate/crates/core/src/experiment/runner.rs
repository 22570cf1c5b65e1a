use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig, ExperimentKind, Instance};
use crate::elliptic::{
    harmonic_replacement, harnack_quotient, region_interior, replacement_deficit,
    subharmonic_residual, EllipticError,
};
use crate::energy::{EnergyBreakdown, Region};
use crate::estimators::{
    campanato_fit, dini_sum, dyadic_sup_trace, extract_free_boundary, fit_growth_exponent_window,
    flatness_experiment, repelling_distance, successive_ratio_check, EstimatorError,
    FlatnessInstance, FlatnessOptions, FreeBoundary,
};
use crate::field::{dump_string, Ball, ModulusOfContinuity, ScalarField};
use crate::minimize::{minimize, MinimizeReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invariant {
    pub name: String,
    pub outcome: Outcome,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    /// `false` when a pipeline stage failed and the bundle is partial.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub invariants: Vec<Invariant>,
    pub all_passed: bool,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if !self.complete {
            3
        } else if self.all_passed {
            0
        } else {
            1
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("{} ({:?}, seed {})\n", self.name, self.kind, self.seed);
        for inv in &self.invariants {
            let tag = match inv.outcome {
                Outcome::Pass => "PASS",
                Outcome::Fail => "FAIL",
                Outcome::NotApplicable => "N/A ",
            };
            s.push_str(&format!("  {tag} {}: {}\n", inv.name, inv.detail));
        }
        if let Some(stage) = &self.failed_stage {
            s.push_str(&format!(
                "  INCOMPLETE: stage `{stage}` failed: {}\n",
                self.error.as_deref().unwrap_or("")
            ));
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` failed: {message}")]
    Pipeline { stage: String, message: String },
    #[error("cannot write bundle {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

struct StageError {
    stage: String,
    message: String,
}

fn stage<T, E: Display>(name: &str, r: Result<T, E>) -> Result<T, StageError> {
    r.map_err(|e| StageError {
        stage: name.into(),
        message: e.to_string(),
    })
}

/// Files, report sections and invariants accumulated by a pipeline.
#[derive(Default)]
struct Bundle {
    files: BTreeMap<String, String>,
    report: serde_json::Map<String, Value>,
    invariants: Vec<Invariant>,
}

impl Bundle {
    fn check(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        self.invariants.push(Invariant {
            name: name.into(),
            outcome: if ok { Outcome::Pass } else { Outcome::Fail },
            detail: detail.into(),
        });
    }

    fn skip(&mut self, name: &str, detail: impl Into<String>) {
        self.invariants.push(Invariant {
            name: name.into(),
            outcome: Outcome::NotApplicable,
            detail: detail.into(),
        });
    }

    fn section(&mut self, key: &str, value: &impl Serialize) {
        self.report
            .insert(key.into(), serde_json::to_value(value).expect("report serialises"));
    }
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialises");
    s.push('\n');
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Run the pipeline of `cfg` and write its bundle to `dir`.
///
/// The bundle holds `config.json`, `report.json`, `summary.json`, CSV
/// tables, field dumps and `metadata.json`; only the last carries
/// timestamps. A failing stage still writes a bundle flagged incomplete and
/// returns [`RunError::Pipeline`].
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let started = unix_ms();
    std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write(dir, "config.json", &cfg.to_json())?;
    let mut bundle = Bundle::default();
    let result = match cfg.kind {
        ExperimentKind::Sweep => run_sweep(cfg, dir, &mut bundle),
        _ => {
            let inst = cfg.instance()?;
            run_kind(cfg, &inst, &mut bundle)
        }
    };
    let (failed_stage, error) = match &result {
        Ok(()) => (None, None),
        Err(e) => (Some(e.stage.clone()), Some(e.message.clone())),
    };
    let summary = RunSummary {
        name: cfg.name.clone(),
        kind: cfg.kind,
        seed: cfg.seed,
        complete: result.is_ok(),
        failed_stage,
        error,
        all_passed: bundle.invariants.iter().all(|i| i.outcome != Outcome::Fail),
        invariants: bundle.invariants,
    };
    write(dir, "report.json", &pretty(&bundle.report))?;
    for (name, contents) in &bundle.files {
        write(dir, name, contents)?;
    }
    write(dir, "summary.json", &pretty(&summary))?;
    let finished = unix_ms();
    let meta = serde_json::json!({
        "started_unix_ms": started as u64,
        "finished_unix_ms": finished as u64,
        "elapsed_ms": (finished - started) as u64,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write(dir, "metadata.json", &pretty(&meta))?;
    match result {
        Ok(()) => Ok(summary),
        Err(e) => Err(RunError::Pipeline {
            stage: e.stage,
            message: e.message,
        }),
    }
}

/// Re-read the summary of a bundle directory.
pub fn read_summary(dir: &Path) -> Result<RunSummary, RunError> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        RunError::Config(ConfigError::Schema {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    })
}

fn run_sweep(cfg: &ExperimentConfig, dir: &Path, b: &mut Bundle) -> Result<(), StageError> {
    let sweep = cfg.sweep.as_ref().expect("validated sweep");
    let members: Vec<(PathBuf, ExperimentConfig)> = (0..sweep.overrides.len())
        .map(|k| (dir.join(format!("run_{k:03}")), cfg.member(k).expect("validated member")))
        .collect();
    let results: Vec<Result<RunSummary, RunError>> = members
        .par_iter()
        .map(|(d, c)| run_experiment(c, d))
        .collect();
    let mut first_error = None;
    let mut rows = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        let tag = format!("run_{k:03}");
        match r {
            Ok(s) => {
                rows.push(serde_json::json!({"member": tag, "all_passed": s.all_passed}));
                for inv in s.invariants {
                    b.invariants.push(Invariant {
                        name: format!("{tag}/{}", inv.name),
                        ..inv
                    });
                }
            }
            Err(e) => {
                rows.push(serde_json::json!({"member": tag, "error": e.to_string()}));
                first_error.get_or_insert(StageError {
                    stage: tag,
                    message: e.to_string(),
                });
            }
        }
    }
    b.section("members", &rows);
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run_kind(cfg: &ExperimentConfig, inst: &Instance, b: &mut Bundle) -> Result<(), StageError> {
    match cfg.kind {
        ExperimentKind::Solve => solve(cfg, inst, b).map(|_| ()),
        ExperimentKind::Replace => replace(cfg, inst, b),
        ExperimentKind::Growth => growth(cfg, inst, b),
        ExperimentKind::Repel => repel(cfg, inst, b),
        ExperimentKind::Holder => holder(cfg, inst, b),
        ExperimentKind::Flatness => flatness(cfg, inst, b),
        ExperimentKind::Sweep => unreachable!("sweeps are dispatched by run_experiment"),
    }
}

fn x0(cfg: &ExperimentConfig, inst: &Instance) -> Vec<f64> {
    cfg.estimators
        .x0
        .clone()
        .unwrap_or_else(|| vec![0.0; inst.grid.dim()])
}

fn threshold(cfg: &ExperimentConfig) -> f64 {
    cfg.estimators.threshold.unwrap_or(10.0 * cfg.solver.tol_node)
}

fn trace_csv(report: &MinimizeReport) -> String {
    let mut s = String::from("sweep,energy\n");
    for (k, e) in report.energy_trace.iter().enumerate() {
        s.push_str(&format!("{k},{e}\n"));
    }
    s
}

/// Minimise and check the solver and energy invariants.
fn solve(cfg: &ExperimentConfig, inst: &Instance, b: &mut Bundle) -> Result<ScalarField, StageError> {
    let (u, report) = stage("minimize", minimize(&inst.phi, &inst.problem, &cfg.solver))?;
    let energy: EnergyBreakdown = stage("energy", inst.problem.energy(&u, &Region::Whole))?;
    let grid = inst.grid;
    let h = grid.max_spacing();

    let fidelity = (0..grid.node_count())
        .filter(|&i| grid.is_boundary(i))
        .all(|i| u.values()[i] == inst.phi.values()[i]);
    b.check("minimize.boundary_fidelity", fidelity, "u equals phi on every boundary node");

    let upper = inst.phi.max().max(0.0);
    let (lo, hi) = (u.min(), u.max());
    if cfg.solver.clamp {
        b.check(
            "minimize.bounds",
            lo >= -1e-10 && hi <= upper + 1e-10,
            format!("u in [{lo}, {hi}], max phi = {upper}"),
        );
    } else {
        b.check("minimize.bounds", lo >= -1e-10, format!("min u = {lo} (upper clamp off)"));
    }

    let increases = report.energy_trace.windows(2).filter(|w| w[1] > w[0]).count();
    b.check(
        "minimize.energy_monotone",
        increases == 0,
        format!("{increases} increasing steps over {} sweeps", report.sweeps_used),
    );
    b.check(
        "minimize.converged",
        report.converged,
        format!("{} sweeps, final relative decrease {}", report.sweeps_used, report.final_delta),
    );

    let sum_gap = (energy.total - energy.dirichlet - energy.singular).abs();
    b.check(
        "energy.decomposition",
        energy.dirichlet >= 0.0 && energy.singular >= 0.0 && sum_gap <= 1e-12 * energy.total.abs().max(1.0),
        format!("dirichlet {} + singular {} = {}", energy.dirichlet, energy.singular, energy.total),
    );

    match subharmonic_residual(&u, &inst.problem.coefficient) {
        Ok(sub) => {
            let c = sub.constant(h);
            b.check(
                "elliptic.subharmonic",
                c <= cfg.estimators.subharmonic_c_max,
                format!("min div(A grad u) = {} at {:?}, C = {c}", sub.min, sub.witness_point),
            );
            b.section("subharmonic", &serde_json::json!({"report": sub, "constant": c, "h": h}));
        }
        Err(EllipticError::EmptyRegion) => b.skip("elliptic.subharmonic", "no interior nodes"),
        Err(e) => return Err(StageError { stage: "subharmonic".into(), message: e.to_string() }),
    }

    b.files.insert("u.dump".into(), dump_string(u.grid(), u.values()));
    b.files.insert("energy_trace.csv".into(), trace_csv(&report));
    b.files.insert(
        "energy.csv".into(),
        format!("{}\n{}\n", EnergyBreakdown::CSV_HEADER, energy.csv_row()),
    );
    b.files.insert(
        "minimize.csv".into(),
        format!("{}\n{}\n", MinimizeReport::CSV_HEADER, report.csv_row()),
    );
    b.section("minimize", &report);
    b.section("energy", &energy);
    Ok(u)
}

fn replace(cfg: &ExperimentConfig, inst: &Instance, b: &mut Bundle) -> Result<(), StageError> {
    let u = solve(cfg, inst, b)?;
    let x0 = x0(cfg, inst);
    let ball = stage("region", Ball::new(&x0, cfg.estimators.region_radius))?;
    let a = &inst.problem.coefficient;
    let r = stage("harmonic_replacement", harmonic_replacement(&u, a, &ball))?;
    let deficit = stage("deficit", replacement_deficit(&u, &r.h, &ball))?;
    let nodes = region_interior(&inst.grid, &ball);
    let scale = r.boundary_max.abs().max(r.boundary_min.abs()).max(1.0);

    b.check(
        "elliptic.replacement_converged",
        r.converged,
        format!("residual {} after {} iterations", r.residual, r.iterations),
    );
    let violation = nodes
        .iter()
        .map(|&i| {
            let v = r.h.values()[i];
            (r.boundary_min - v).max(v - r.boundary_max).max(0.0)
        })
        .fold(0.0, f64::max);
    b.check(
        "elliptic.max_principle",
        violation <= 1e-10 * scale,
        format!("largest excursion beyond boundary range {violation}"),
    );
    let again = stage("harmonic_replacement", harmonic_replacement(&r.h, a, &ball))?;
    let drift = nodes
        .iter()
        .map(|&i| (again.h.values()[i] - r.h.values()[i]).abs())
        .fold(0.0, f64::max);
    b.check(
        "elliptic.projection",
        drift <= 1e-8 * scale,
        format!("replacement of the replacement moves by {drift}"),
    );
    let excess = nodes
        .iter()
        .map(|&i| u.values()[i] - r.h.values()[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = inst.grid.max_spacing() * scale;
    b.check(
        "elliptic.comparison",
        excess <= tol,
        format!("max(u - h) = {excess}, tolerance {tol}"),
    );
    let inner = stage("region", Ball::new(&x0, cfg.estimators.inner_radius))?;
    match harnack_quotient(&r.h, &inner, &x0) {
        Ok(hq) => {
            b.check(
                "elliptic.harnack",
                hq.quotient.is_finite(),
                format!("sup/inf = {} on the inner ball", hq.quotient),
            );
            b.section("harnack", &hq);
        }
        Err(EllipticError::NonPositive { node, value }) => b.skip(
            "elliptic.harnack",
            format!("replacement is not positive (h = {value} at node {node})"),
        ),
        Err(e) => return Err(StageError { stage: "harnack".into(), message: e.to_string() }),
    }
    b.files.insert("h.dump".into(), dump_string(r.h.grid(), r.h.values()));
    b.section("replacement", &r.meta());
    b.section("deficit", &deficit);
    Ok(())
}

fn free_boundary(cfg: &ExperimentConfig, u: &ScalarField, b: &mut Bundle) -> Result<FreeBoundary, StageError> {
    let fb = stage("extract_free_boundary", extract_free_boundary(u, threshold(cfg)))?;
    b.section("free_boundary", &fb.summary());
    Ok(fb)
}

fn growth(cfg: &ExperimentConfig, inst: &Instance, b: &mut Bundle) -> Result<(), StageError> {
    let u = solve(cfg, inst, b)?;
    let fb = free_boundary(cfg, &u, b)?;
    let x0 = x0(cfg, inst);
    let h = inst.grid.max_spacing();
    let floor = threshold(cfg);
    let gamma0 = stage(
        "exponent",
        inst.problem.exponent.value_at(&x0).ok_or(EstimatorError::Point(x0.clone())),
    )?;
    let near = fb.distance_from(&x0);
    b.check(
        "estimators.free_boundary_point",
        near.is_some_and(|d| d <= 2.0 * h),
        format!("distance from x0 to the free boundary {near:?}"),
    );
    let k_max = cfg
        .estimators
        .k_max
        .unwrap_or_else(|| (1.0 / h).log2().floor().max(0.0) as usize);
    let trace = stage("dyadic_sup_trace", dyadic_sup_trace(&u, &x0, k_max))?;
    let monotone = trace.entries.windows(2).all(|w| w[1].sup <= w[0].sup);
    b.check("estimators.trace_monotone", monotone, "S_r is non-decreasing in r");
    let [k_lo, k_hi] = cfg.estimators.k_window.unwrap_or([1, k_max]);
    let fit = stage(
        "fit_growth_exponent",
        fit_growth_exponent_window(&trace, gamma0, floor, k_lo, k_hi),
    )?;
    b.check(
        "estimators.growth_exponent",
        fit.relative_gap.abs() <= cfg.estimators.growth_tolerance,
        format!(
            "beta_hat {} against {} (relative gap {})",
            fit.beta_hat, fit.target_beta, fit.relative_gap
        ),
    );
    let ratios: Vec<_> = stage(
        "successive_ratio_check",
        successive_ratio_check(&trace, gamma0, h, floor, k_lo),
    )?
    .into_iter()
    .filter(|r| r.k < k_hi)
    .collect();
    let broken: Vec<usize> = ratios.iter().filter(|r| !r.holds).map(|r| r.k).collect();
    b.check(
        "estimators.successive_ratio",
        broken.is_empty(),
        format!("{} ratios checked, violated at k = {broken:?}", ratios.len()),
    );
    let omega = inst.omega.clone().unwrap_or(ModulusOfContinuity::Zero);
    match dini_sum(&omega, gamma0) {
        Ok(d) => {
            b.check("estimators.dini", true, format!("log2 M = {}", d.log2m));
            b.section("dini", &d);
        }
        Err(EstimatorError::NonDini { partial_sum, terms }) => b.check(
            "estimators.dini",
            false,
            format!("modulus is not Dini: partial sum {partial_sum} after {terms} terms"),
        ),
        Err(e) => return Err(StageError { stage: "dini_sum".into(), message: e.to_string() }),
    }
    b.files.insert("trace.csv".into(), trace.to_csv());
    b.section("trace", &trace);
    b.section("fit", &fit);
    b.section("ratios", &ratios);
    Ok(())
}

fn repel(cfg: &ExperimentConfig, inst: &Instance, b: &mut Bundle) -> Result<(), StageError> {
    let u = solve(cfg, inst, b)?;
    let fb = free_boundary(cfg, &u, b)?;
    let x0 = x0(cfg, inst);
    let omega = inst.omega.clone().expect("validated modulus");
    let r = stage(
        "repelling_distance",
        repelling_distance(&u, &inst.problem.exponent, &omega, &x0, &fb),
    )?;
    match r.satisfied {
        Some(ok) => b.check(
            "estimators.repelling",
            ok,
            format!(
                "distance {:?} against omega^-1(nu) = {:?}",
                r.measured_distance, r.omega_inverse_nu
            ),
        ),
        None => b.skip("estimators.repelling", format!("gamma(x0) = {} <= 2", r.gamma_at_x0)),
    }
    let level = 2.0 + cfg.estimators.nu0;
    let hits = fb.nodes_with_exponent_at_least(&inst.problem.exponent, level);
    b.check(
        "estimators.fb_exponent_separation",
        hits.is_empty(),
        format!("{} free-boundary nodes with gamma >= {level}", hits.len()),
    );
    match (&omega, r.omega_inverse_nu) {
        (ModulusOfContinuity::Linear { slope }, Some(bound)) if r.applicable => b.check(
            "estimators.omega_inverse_linear",
            bound == r.nu / slope,
            format!("omega^-1(nu) = {bound}, nu / L = {}", r.nu / slope),
        ),
        _ => b.skip("estimators.omega_inverse_linear", "modulus is not linear or nu <= 0"),
    }
    b.files.insert("u.dump".into(), dump_string(u.grid(), u.values()));
    b.section("repelling", &r);
    Ok(())
}

fn holder(cfg: &ExperimentConfig, inst: &Instance, b: &mut Bundle) -> Result<(), StageError> {
    let u = match &cfg.estimators.holder_field {
        Some(spec) => stage("holder_field", spec.sample(&inst.grid))?,
        None => solve(cfg, inst, b)?,
    };
    let x0 = x0(cfg, inst);
    let resolution = 8.0 * inst.grid.max_spacing();
    let radii = cfg.estimators.radii.clone().unwrap_or_else(|| {
        (1..)
            .map(|k| (-(k as f64)).exp2())
            .take_while(|&r| r >= resolution)
            .collect()
    });
    let fit = stage("campanato_fit", campanato_fit(&u, &x0, &radii))?;
    b.check(
        "estimators.holder_range",
        fit.epsilon_hat > 0.0 && fit.epsilon_hat <= 1.0,
        format!("epsilon_hat = {} (raw slope {}, capped {})", fit.epsilon_hat, fit.raw_slope, fit.capped),
    );
    b.files.insert("holder.csv".into(), fit.to_csv());
    b.section("holder", &fit);
    Ok(())
}

fn flatness(cfg: &ExperimentConfig, inst: &Instance, b: &mut Bundle) -> Result<(), StageError> {
    let x0 = x0(cfg, inst);
    let specs = if cfg.estimators.family.is_empty() {
        vec![cfg.fields.phi.clone()]
    } else {
        cfg.estimators.family.clone()
    };
    let family = specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            Ok(FlatnessInstance {
                name: format!("member_{k:03}"),
                phi: stage("family", spec.sample(&inst.grid))?,
                problem: inst.problem.clone(),
                center: x0.clone(),
            })
        })
        .collect::<Result<Vec<_>, StageError>>()?;
    let gamma0 = stage(
        "exponent",
        inst.problem.exponent.value_at(&x0).ok_or(EstimatorError::Point(x0.clone())),
    )?;
    let rho = cfg
        .estimators
        .rho_target
        .unwrap_or_else(|| (2.0 / (gamma0 - 2.0)).exp2());
    let f = &cfg.estimators.flatness;
    let opts = FlatnessOptions {
        s_init: f.s_init,
        s_max: f.s_max,
        rel_tol: f.rel_tol,
        max_probes: f.max_probes,
        zero_tol: f.zero_tol,
        minimize: cfg.solver.clone(),
    };
    match flatness_experiment(&family, rho, &opts) {
        Ok(r) => {
            b.check("estimators.flatness_at_zero", true, "property holds without forcing");
            let ok = r.unbounded || r.threshold.is_some_and(|t| t > 0.0);
            b.check(
                "estimators.flatness_threshold",
                ok,
                format!(
                    "threshold {:?}, first failing scale {:?}, {} probes",
                    r.threshold,
                    r.failing_scale,
                    r.probes.len()
                ),
            );
            let mut csv = String::from("s,holds\n");
            for p in &r.probes {
                csv.push_str(&format!("{},{}\n", p.s, p.holds));
            }
            b.files.insert("flatness.csv".into(), csv);
            b.section("flatness", &r);
            Ok(())
        }
        Err(EstimatorError::FlatAtZero { instance }) => {
            b.check(
                "estimators.flatness_at_zero",
                false,
                format!("`{instance}` is not flat without forcing"),
            );
            b.skip("estimators.flatness_threshold", "property fails at zero forcing");
            Ok(())
        }
        Err(e) => Err(StageError { stage: "flatness_experiment".into(), message: e.to_string() }),
    }
}
