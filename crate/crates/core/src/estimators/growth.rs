use serde::{Deserialize, Serialize};

use super::{csv_string, EstimatorError};
use crate::field::{pad, ModulusOfContinuity, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: usize,
    pub r: f64,
    /// `sup` of `u` over the nodes of `B_r(x0)`.
    pub sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicTrace {
    pub center: Vec<f64>,
    pub k_max: usize,
    pub entries: Vec<TraceEntry>,
    /// Every entry vanishes; growth fits reject such traces.
    pub all_zero: bool,
}

impl DyadicTrace {
    pub fn to_csv(&self) -> String {
        csv_string(
            &["k", "r", "S_r"],
            self.entries
                .iter()
                .map(|e| vec![e.k.to_string(), e.r.to_string(), e.sup.to_string()]),
        )
    }

    /// Successive ratios `S_{2^-(k+1)} / S_{2^-k}` for entries with `S > 0`.
    pub fn ratios(&self) -> Vec<(usize, f64)> {
        self.entries
            .windows(2)
            .filter(|w| w[0].sup > 0.0)
            .map(|w| (w[0].k, w[1].sup / w[0].sup))
            .collect()
    }
}

/// Node maxima of `u` over `B_{2^-k}(x0)` for `k = 0..=k_max`.
pub fn dyadic_sup_trace(
    u: &ScalarField,
    x0: &[f64],
    k_max: usize,
) -> Result<DyadicTrace, EstimatorError> {
    let g = u.grid();
    if x0.len() != g.dim() || !g.contains(x0) {
        return Err(EstimatorError::Point(x0.to_vec()));
    }
    let smallest = (-(k_max as f64)).exp2();
    if smallest < g.max_spacing() {
        return Err(EstimatorError::Resolution(format!(
            "radius 2^-{k_max} = {smallest} is below the mesh width {}",
            g.max_spacing()
        )));
    }
    let c = pad(x0);
    let mut sup = vec![f64::NEG_INFINITY; k_max + 1];
    for i in 0..g.node_count() {
        let d = crate::field::distance(&c, &g.coords(i));
        // deepest k with d <= 2^-k
        let mut deepest = None;
        for k in 0..=k_max {
            if d <= (-(k as f64)).exp2() * (1.0 + 1e-12) {
                deepest = Some(k);
            } else {
                break;
            }
        }
        if let Some(kd) = deepest {
            let v = u.values()[i];
            for s in sup.iter_mut().take(kd + 1) {
                *s = s.max(v);
            }
        }
    }
    if let Some(k) = sup.iter().position(|s| *s == f64::NEG_INFINITY) {
        return Err(EstimatorError::Resolution(format!("B_2^-{k} holds no node")));
    }
    let entries: Vec<TraceEntry> = sup
        .into_iter()
        .enumerate()
        .map(|(k, s)| TraceEntry {
            k,
            r: (-(k as f64)).exp2(),
            sup: s,
        })
        .collect();
    let all_zero = entries.iter().all(|e| e.sup == 0.0);
    Ok(DyadicTrace {
        center: x0.to_vec(),
        k_max,
        entries,
        all_zero,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub beta_hat: f64,
    /// Fitted `C0` in `S_r = C0 r^beta_hat`.
    pub c0_hat: f64,
    pub r_squared: f64,
    pub target_beta: f64,
    /// `(beta_hat - target_beta) / target_beta`.
    pub relative_gap: f64,
    pub window: (usize, usize),
    pub used: Vec<usize>,
}

/// `2 / (2 - gamma)`, the growth exponent at a free-boundary point.
pub fn growth_target(gamma_at_x0: f64) -> Result<f64, EstimatorError> {
    if !(gamma_at_x0 < 2.0) {
        return Err(EstimatorError::Regime { gamma: gamma_at_x0 });
    }
    Ok(2.0 / (2.0 - gamma_at_x0))
}

/// Least-squares fit of `log2 S_r` against `log2 r` over every `k >= 1`
/// with `S_r > floor`.
pub fn fit_growth_exponent(
    trace: &DyadicTrace,
    gamma_at_x0: f64,
    floor: f64,
) -> Result<GrowthFit, EstimatorError> {
    fit_growth_exponent_window(trace, gamma_at_x0, floor, 1, trace.k_max)
}

/// [`fit_growth_exponent`] restricted to `k_min <= k <= k_max` (and `k >= 1`).
pub fn fit_growth_exponent_window(
    trace: &DyadicTrace,
    gamma_at_x0: f64,
    floor: f64,
    k_min: usize,
    k_max: usize,
) -> Result<GrowthFit, EstimatorError> {
    let target_beta = growth_target(gamma_at_x0)?;
    if trace.all_zero {
        return Err(EstimatorError::Degenerate("the trace vanishes identically".into()));
    }
    let used: Vec<&TraceEntry> = trace
        .entries
        .iter()
        .filter(|e| e.k >= k_min.max(1) && e.k <= k_max && e.sup > floor)
        .collect();
    if used.len() < 4 {
        return Err(EstimatorError::InsufficientData {
            found: used.len(),
            needed: 4,
        });
    }
    let xs: Vec<f64> = used.iter().map(|e| e.r.log2()).collect();
    let ys: Vec<f64> = used.iter().map(|e| e.sup.log2()).collect();
    let (slope, intercept, r_squared) = least_squares(&xs, &ys);
    Ok(GrowthFit {
        beta_hat: slope,
        c0_hat: intercept.exp2(),
        r_squared,
        target_beta,
        relative_gap: (slope - target_beta) / target_beta,
        window: (used[0].k, used[used.len() - 1].k),
        used: used.iter().map(|e| e.k).collect(),
    })
}

/// Slope, intercept and coefficient of determination of `y ~ x`.
pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r_squared)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    pub k: usize,
    pub ratio: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Successive-ratio test `S_{2^-(k+1)} / S_{2^-k} <= 2^-beta (1 + tol_k)` on
/// entries with `k >= k_min` and `S_{2^-k} > floor`, where the mesh
/// tolerance `tol_k = (1 + 2h / 2^-(k+1))^beta - 1` accounts for the nodes of
/// a discrete ball lying up to a mesh width inside the continuous one.
pub fn successive_ratio_check(
    trace: &DyadicTrace,
    gamma_at_x0: f64,
    mesh: f64,
    floor: f64,
    k_min: usize,
) -> Result<Vec<RatioCheck>, EstimatorError> {
    let beta = growth_target(gamma_at_x0)?;
    Ok(trace
        .entries
        .windows(2)
        .filter(|w| w[0].k >= k_min && w[0].sup > floor)
        .map(|w| {
            let r_inner = w[1].r;
            let tol = (1.0 + 2.0 * mesh / r_inner).powf(beta) - 1.0;
            let bound = (-beta).exp2() * (1.0 + tol);
            let ratio = w[1].sup / w[0].sup;
            RatioCheck {
                k: w[0].k,
                ratio,
                bound,
                holds: ratio <= bound,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiniReport {
    pub gamma0: f64,
    pub sum: f64,
    pub terms: usize,
    pub log2m: f64,
    pub m: f64,
}

/// `log2 M = 2 / (2 - gamma0) * sum_k omega(2^-k)`.
pub fn dini_sum(omega: &ModulusOfContinuity, gamma0: f64) -> Result<DiniReport, EstimatorError> {
    let factor = growth_target(gamma0)?;
    let check = omega.dini_check(256, 1e6)?;
    if !check.dini {
        return Err(EstimatorError::NonDini {
            partial_sum: check.partial_sum,
            terms: check.terms,
        });
    }
    let log2m = factor * check.partial_sum;
    Ok(DiniReport {
        gamma0,
        sum: check.partial_sum,
        terms: check.terms,
        log2m,
        m: log2m.exp2(),
    })
}
