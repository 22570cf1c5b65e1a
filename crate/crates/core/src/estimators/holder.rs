use serde::{Deserialize, Serialize};

use super::growth::least_squares;
use super::{csv_string, EstimatorError};
use crate::field::{distance, pad, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub center: Vec<f64>,
    /// Half the slope of `log osc` against `log radius`, capped at 1.
    pub epsilon_hat: f64,
    /// `sqrt` of the fitted oscillation constant, so that `osc(t) ~ (C t^eps)^2`.
    pub constant_hat: f64,
    pub radii: Vec<f64>,
    /// Mean-square oscillation `mean_{B_t} |u - mean_{B_t} u|^2` per radius.
    pub oscillations: Vec<f64>,
    pub raw_slope: f64,
    pub capped: bool,
    /// Every oscillation vanished.
    pub smooth: bool,
}

impl HolderFit {
    pub fn to_csv(&self) -> String {
        csv_string(
            &["radius", "oscillation"],
            self.radii
                .iter()
                .zip(&self.oscillations)
                .map(|(r, o)| vec![r.to_string(), o.to_string()]),
        )
    }
}

/// Campanato-type fit of the Hölder exponent of `u` at `x0`.
pub fn campanato_fit(u: &ScalarField, x0: &[f64], radii: &[f64]) -> Result<HolderFit, EstimatorError> {
    let g = u.grid();
    if x0.len() != g.dim() || !g.contains(x0) {
        return Err(EstimatorError::Point(x0.to_vec()));
    }
    if radii.len() < 4 {
        return Err(EstimatorError::InsufficientData {
            found: radii.len(),
            needed: 4,
        });
    }
    let resolution = 2.0 * g.max_spacing();
    if let Some(r) = radii.iter().find(|&&r| !(r >= resolution)) {
        return Err(EstimatorError::Resolution(format!(
            "radius {r} is below twice the mesh width ({resolution})"
        )));
    }
    let c = pad(x0);
    let dist: Vec<f64> = (0..g.node_count()).map(|i| distance(&c, &g.coords(i))).collect();
    let mut oscillations = Vec::with_capacity(radii.len());
    for &r in radii {
        let nodes: Vec<usize> = (0..g.node_count())
            .filter(|&i| dist[i] <= r * (1.0 + 1e-12))
            .collect();
        let n = nodes.len() as f64;
        let mean = nodes.iter().map(|&i| u.values()[i]).sum::<f64>() / n;
        let osc = nodes
            .iter()
            .map(|&i| {
                let d = u.values()[i] - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        oscillations.push(osc);
    }
    let zeros = oscillations.iter().filter(|&&o| o == 0.0).count();
    if zeros == oscillations.len() {
        return Ok(HolderFit {
            center: x0.to_vec(),
            epsilon_hat: 1.0,
            constant_hat: 0.0,
            radii: radii.to_vec(),
            oscillations,
            raw_slope: 0.0,
            capped: true,
            smooth: true,
        });
    }
    if zeros > 0 {
        return Err(EstimatorError::Degenerate(
            "oscillation vanishes on some radii only".into(),
        ));
    }
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = oscillations.iter().map(|o| o.ln()).collect();
    let (slope, intercept, _) = least_squares(&xs, &ys);
    if !(slope > 0.0) {
        return Err(EstimatorError::Degenerate(format!(
            "oscillation does not decay with the radius (slope {slope})"
        )));
    }
    let raw = 0.5 * slope;
    Ok(HolderFit {
        center: x0.to_vec(),
        epsilon_hat: raw.min(1.0),
        constant_hat: (0.5 * intercept).exp(),
        radii: radii.to_vec(),
        oscillations,
        raw_slope: slope,
        capped: raw > 1.0,
        smooth: false,
    })
}
