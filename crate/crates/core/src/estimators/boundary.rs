use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::field::{distance, pad, ExponentField, Grid, ModulusOfContinuity, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryStatus {
    Regular,
    EmptyPositiveSet,
    FullPositiveSet,
}

/// Discrete free boundary of `u`: positive nodes with a non-positive axis
/// neighbour, and the distance of every node to them.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeBoundary {
    pub grid: Grid,
    pub threshold: f64,
    pub positive: Vec<bool>,
    pub boundary_nodes: Vec<usize>,
    /// Distance to the nearest boundary node; infinite when there is none.
    pub distance: Vec<f64>,
    pub status: BoundaryStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeBoundarySummary {
    pub threshold: f64,
    pub positive_nodes: usize,
    pub boundary_nodes: usize,
    pub status: BoundaryStatus,
}

impl FreeBoundary {
    pub fn summary(&self) -> FreeBoundarySummary {
        FreeBoundarySummary {
            threshold: self.threshold,
            positive_nodes: self.positive.iter().filter(|&&p| p).count(),
            boundary_nodes: self.boundary_nodes.len(),
            status: self.status,
        }
    }

    /// Brute-force distance from `point` to the boundary nodes.
    pub fn distance_from(&self, point: &[f64]) -> Option<f64> {
        let c = pad(point);
        self.boundary_nodes
            .iter()
            .map(|&b| distance(&c, &self.grid.coords(b)))
            .min_by(f64::total_cmp)
    }

    /// Boundary nodes where `gamma >= level`.
    pub fn nodes_with_exponent_at_least(&self, gamma: &ExponentField, level: f64) -> Vec<usize> {
        self.boundary_nodes
            .iter()
            .copied()
            .filter(|&b| gamma.values()[b] >= level)
            .collect()
    }
}

pub fn extract_free_boundary(u: &ScalarField, threshold: f64) -> Result<FreeBoundary, EstimatorError> {
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(EstimatorError::Degenerate(format!(
            "threshold must be finite and non-negative, got {threshold}"
        )));
    }
    let g = *u.grid();
    let positive: Vec<bool> = u.values().iter().map(|&v| v > threshold).collect();
    let boundary_nodes: Vec<usize> = (0..g.node_count())
        .filter(|&i| {
            positive[i]
                && (0..g.dim()).any(|d| {
                    [false, true]
                        .iter()
                        .any(|&f| g.neighbor(i, d, f).is_some_and(|j| !positive[j]))
                })
        })
        .collect();
    let count = positive.iter().filter(|&&p| p).count();
    let status = if count == 0 {
        BoundaryStatus::EmptyPositiveSet
    } else if count == g.node_count() {
        BoundaryStatus::FullPositiveSet
    } else {
        BoundaryStatus::Regular
    };
    let coords: Vec<[f64; 3]> = boundary_nodes.iter().map(|&b| g.coords(b)).collect();
    let mut dist = vec![f64::INFINITY; g.node_count()];
    for (i, slot) in dist.iter_mut().enumerate() {
        let x = g.coords(i);
        for c in &coords {
            *slot = slot.min(distance(&x, c));
        }
    }
    for &b in &boundary_nodes {
        dist[b] = 0.0;
    }
    Ok(FreeBoundary {
        grid: g,
        threshold,
        positive,
        boundary_nodes,
        distance: dist,
        status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepellingReport {
    pub x0: Vec<f64>,
    pub gamma_at_x0: f64,
    pub nu: f64,
    /// `false` when `nu <= 0`; the remaining fields are then empty.
    pub applicable: bool,
    /// Distance to the nearest boundary node; `None` if there is no boundary.
    pub measured_distance: Option<f64>,
    /// `omega^{-1}(nu)`; `None` if `omega` never reaches `nu`.
    pub omega_inverse_nu: Option<f64>,
    pub mesh_tolerance: f64,
    pub satisfied: Option<bool>,
}

/// Compare the distance from `x0` to the free boundary with `omega^{-1}(gamma(x0) - 2)`.
pub fn repelling_distance(
    u: &ScalarField,
    gamma: &ExponentField,
    omega: &ModulusOfContinuity,
    x0: &[f64],
    fb: &FreeBoundary,
) -> Result<RepellingReport, EstimatorError> {
    omega.validate()?;
    if u.grid() != gamma.grid() || *u.grid() != fb.grid {
        return Err(EstimatorError::Degenerate("fields live on different grids".into()));
    }
    let gamma_at_x0 = gamma
        .value_at(x0)
        .ok_or_else(|| EstimatorError::Point(x0.to_vec()))?;
    let nu = gamma_at_x0 - 2.0;
    let mesh_tolerance = 2.0 * u.grid().max_spacing();
    if nu <= 0.0 {
        return Ok(RepellingReport {
            x0: x0.to_vec(),
            gamma_at_x0,
            nu,
            applicable: false,
            measured_distance: None,
            omega_inverse_nu: None,
            mesh_tolerance,
            satisfied: None,
        });
    }
    let measured_distance = fb.distance_from(x0);
    let omega_inverse_nu = omega.inverse(nu);
    let satisfied = match (measured_distance, omega_inverse_nu) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(d), Some(b)) => d >= b - mesh_tolerance,
    };
    Ok(RepellingReport {
        x0: x0.to_vec(),
        gamma_at_x0,
        nu,
        applicable: true,
        measured_distance,
        omega_inverse_nu,
        mesh_tolerance,
        satisfied: Some(satisfied),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::alt_phillips_coefficients;

    #[test]
    fn one_dimensional_profile() {
        let g = Grid::cube(1, 257).unwrap();
        let (c, b) = alt_phillips_coefficients(1.0, 1.0);
        let u = ScalarField::from_fn(g, |x| c * x[0].max(0.0).powf(b)).unwrap();
        let fb = extract_free_boundary(&u, 0.0).unwrap();
        assert_eq!(fb.status, BoundaryStatus::Regular);
        assert_eq!(fb.boundary_nodes.len(), 1);
        let x = g.coords(fb.boundary_nodes[0])[0];
        assert!(x.abs() <= g.max_spacing());
        assert_eq!(fb.distance[fb.boundary_nodes[0]], 0.0);
    }

    #[test]
    fn flags() {
        let g = Grid::cube(2, 9).unwrap();
        let one = ScalarField::new(g, vec![1.0; 81]).unwrap();
        let fb = extract_free_boundary(&one, 0.0).unwrap();
        assert_eq!(fb.status, BoundaryStatus::FullPositiveSet);
        assert!(fb.boundary_nodes.is_empty());
        let zero = extract_free_boundary(&ScalarField::zeros(g), 0.0).unwrap();
        assert_eq!(zero.status, BoundaryStatus::EmptyPositiveSet);
    }

    #[test]
    fn disk_zero_set_distance() {
        let g = Grid::cube(2, 129).unwrap();
        let u = ScalarField::from_fn(g, |x| ((x[0] * x[0] + x[1] * x[1]).sqrt() - 0.4).max(0.0)).unwrap();
        let fb = extract_free_boundary(&u, 0.0).unwrap();
        let d = fb.distance_from(&[0.0, 0.0]).unwrap();
        assert!((d - 0.4).abs() <= g.max_spacing(), "{d}");
        let gamma = ExponentField::new(g, vec![2.5; g.node_count()], 2.5).unwrap();
        let r = repelling_distance(&u, &gamma, &ModulusOfContinuity::linear(4.0), &[0.0, 0.0], &fb).unwrap();
        assert_eq!(r.omega_inverse_nu, Some(0.5 / 4.0));
        assert_eq!(r.satisfied, Some(true));
        let low = ExponentField::new(g, vec![1.5; g.node_count()], 1.5).unwrap();
        let r = repelling_distance(&u, &low, &ModulusOfContinuity::linear(4.0), &[0.0, 0.0], &fb).unwrap();
        assert!(!r.applicable);
    }
}
