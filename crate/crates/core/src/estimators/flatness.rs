//! Empirical flatness threshold: the largest forcing scale `s` for which no
//! member of a fixed instance family has a zero at its centre together with
//! `sup_{B_1/2} u > rho`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::energy::Problem;
use crate::field::{Ball, ScalarField};
use crate::minimize::{minimize, MinimizeOptions};

/// One family member; the forcing of `problem` is the base forcing that
/// gets multiplied by the scale `s`.
#[derive(Debug, Clone)]
pub struct FlatnessInstance {
    pub name: String,
    pub phi: ScalarField,
    pub problem: Problem,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatnessOptions {
    pub s_init: f64,
    /// Scales beyond `s_max` are not probed; the threshold is then reported unbounded.
    pub s_max: f64,
    /// Bisection stops once `s_fail / s_hold <= 1 + rel_tol`.
    pub rel_tol: f64,
    pub max_probes: usize,
    /// `u(center) <= zero_tol` counts as a zero.
    pub zero_tol: f64,
    pub minimize: MinimizeOptions,
}

impl Default for FlatnessOptions {
    fn default() -> Self {
        Self {
            s_init: 1.0,
            s_max: 1e6,
            rel_tol: 0.02,
            max_probes: 60,
            zero_tol: 0.0,
            minimize: MinimizeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberOutcome {
    pub name: String,
    pub value_at_center: f64,
    pub sup_half: f64,
    /// The member vanishes at its centre.
    pub hypothesis: bool,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessProbe {
    pub s: f64,
    pub holds: bool,
    pub members: Vec<MemberOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub rho_target: f64,
    /// Largest probed scale at which the property holds for every member;
    /// `None` when it holds up to `s_max`.
    pub threshold: Option<f64>,
    /// Smallest probed scale with a counterexample.
    pub failing_scale: Option<f64>,
    pub unbounded: bool,
    pub probes: Vec<FlatnessProbe>,
}

fn probe(
    family: &[FlatnessInstance],
    s: f64,
    rho: f64,
    opts: &FlatnessOptions,
) -> Result<FlatnessProbe, EstimatorError> {
    let members: Vec<MemberOutcome> = family
        .par_iter()
        .map(|inst| -> Result<MemberOutcome, EstimatorError> {
            let scaled = inst.problem.with_forcing_scaled(s)?;
            let (u, _) = minimize(&inst.phi, &scaled, &opts.minimize)?;
            let grid = u.grid();
            let centre_node = grid
                .nearest_node(&inst.center)
                .ok_or_else(|| EstimatorError::Point(inst.center.clone()))?;
            let value_at_center = u.values()[centre_node];
            let half = Ball::new(&inst.center, 0.5)?;
            let sup_half = half
                .nodes(grid)
                .into_iter()
                .map(|i| u.values()[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let hypothesis = value_at_center <= opts.zero_tol;
            Ok(MemberOutcome {
                name: inst.name.clone(),
                value_at_center,
                sup_half,
                hypothesis,
                holds: !hypothesis || sup_half <= rho,
            })
        })
        .collect::<Result<_, _>>()?;
    let holds = members.iter().all(|m| m.holds);
    Ok(FlatnessProbe { s, holds, members })
}

fn check_family(family: &[FlatnessInstance], rho: f64) -> Result<(), EstimatorError> {
    if family.is_empty() {
        return Err(EstimatorError::EmptyFamily);
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(EstimatorError::Degenerate(format!("rho_target {rho} is outside (0, 1]")));
    }
    for inst in family {
        let g = inst.phi.grid();
        if g != inst.problem.grid() {
            return Err(EstimatorError::Degenerate(format!("{}: grid mismatch", inst.name)));
        }
        Ball::new(&inst.center, 1.0)?.check_inside(g)?;
        if inst.phi.min() < 0.0 || inst.phi.max() > 1.0 {
            return Err(EstimatorError::Degenerate(format!(
                "{}: boundary datum must lie in [0, 1]",
                inst.name
            )));
        }
    }
    Ok(())
}

/// Bracket and bisect the forcing scale at which the flatness property
/// first fails on `family`.
pub fn flatness_experiment(
    family: &[FlatnessInstance],
    rho_target: f64,
    opts: &FlatnessOptions,
) -> Result<FlatnessReport, EstimatorError> {
    check_family(family, rho_target)?;
    let mut probes = Vec::new();
    let zero = probe(family, 0.0, rho_target, opts)?;
    if !zero.holds {
        let name = zero
            .members
            .iter()
            .find(|m| !m.holds)
            .map(|m| m.name.clone())
            .unwrap_or_default();
        return Err(EstimatorError::FlatAtZero { instance: name });
    }
    probes.push(zero);
    let mut hold = 0.0;
    let mut fail = None;
    let mut s = opts.s_init;
    // bracket
    while probes.len() < opts.max_probes {
        let p = probe(family, s, rho_target, opts)?;
        let ok = p.holds;
        probes.push(p);
        if ok {
            hold = s;
            if s >= opts.s_max {
                break;
            }
            s = (2.0 * s).min(opts.s_max);
        } else {
            fail = Some(s);
            if hold > 0.0 || s <= opts.s_init * 1e-12 {
                break;
            }
            s *= 0.5;
        }
        if hold > 0.0 && fail.is_some() {
            break;
        }
    }
    let Some(mut hi) = fail else {
        return Ok(FlatnessReport {
            rho_target,
            threshold: None,
            failing_scale: None,
            unbounded: true,
            probes,
        });
    };
    let mut lo = hold;
    while lo > 0.0 && hi / lo > 1.0 + opts.rel_tol && probes.len() < opts.max_probes {
        let mid = (lo * hi).sqrt();
        let p = probe(family, mid, rho_target, opts)?;
        if p.holds {
            lo = mid;
        } else {
            hi = mid;
        }
        probes.push(p);
    }
    Ok(FlatnessReport {
        rho_target,
        threshold: Some(lo),
        failing_scale: Some(hi),
        unbounded: false,
        probes,
    })
}
