use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FieldError, Grid};

fn check_finite(values: &[f64], what: &'static str) -> Result<(), FieldError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(node) => Err(FieldError::NonFinite { what, node }),
        None => Ok(()),
    }
}

fn check_len(grid: &Grid, len: usize, per_node: usize) -> Result<(), FieldError> {
    if len != grid.node_count() * per_node {
        return Err(FieldError::LengthMismatch {
            expected: grid.node_count() * per_node,
            found: len,
        });
    }
    Ok(())
}

/// Real values sampled at the nodes of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, FieldError> {
        check_len(&grid, values.len(), 1)?;
        check_finite(&values, "scalar field")?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            values: vec![0.0; grid.node_count()],
            grid,
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self, FieldError> {
        let values = (0..grid.node_count())
            .map(|i| f(&grid.coords(i)[..grid.dim()]))
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Multilinear interpolation at `point`.
    pub fn value_at(&self, point: &[f64]) -> Option<f64> {
        self.grid.interpolate(&self.values, point)
    }
}

/// Exponent field `gamma(x)` with `0 <= gamma <= gamma_star`.
///
/// In three dimensions `gamma_star` must stay below the critical Sobolev
/// exponent `2n/(n-2) = 6`; in one and two dimensions no such cap applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentField {
    grid: Grid,
    values: Vec<f64>,
    gamma_star: f64,
}

/// Critical Sobolev exponent `2n/(n-2)`, infinite for `n <= 2`.
pub fn sobolev_cap(dim: usize) -> f64 {
    if dim <= 2 {
        f64::INFINITY
    } else {
        2.0 * dim as f64 / (dim as f64 - 2.0)
    }
}

impl ExponentField {
    pub fn new(grid: Grid, values: Vec<f64>, gamma_star: f64) -> Result<Self, FieldError> {
        check_len(&grid, values.len(), 1)?;
        check_finite(&values, "exponent field")?;
        let cap = sobolev_cap(grid.dim());
        if !(gamma_star.is_finite() && gamma_star >= 0.0 && gamma_star < cap) {
            return Err(FieldError::ExponentCap {
                gamma_star,
                cap,
                dim: grid.dim(),
            });
        }
        if let Some(node) = values.iter().position(|&g| !(0.0..=gamma_star).contains(&g)) {
            return Err(FieldError::OutOfBounds {
                what: "exponent",
                node,
                value: values[node],
                lo: 0.0,
                hi: gamma_star,
            });
        }
        Ok(Self {
            grid,
            values,
            gamma_star,
        })
    }

    pub fn constant(grid: Grid, gamma: f64) -> Result<Self, FieldError> {
        Self::new(grid, vec![gamma; grid.node_count()], gamma)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gamma_star(&self) -> f64 {
        self.gamma_star
    }

    pub fn value_at(&self, point: &[f64]) -> Option<f64> {
        self.grid.interpolate(&self.values, point)
    }

    /// Smallest nodal exponent.
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Forcing field `lambda(x)` with `0 <= lambda <= lambda_cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingField {
    grid: Grid,
    values: Vec<f64>,
    lambda_cap: f64,
}

impl ForcingField {
    pub fn new(grid: Grid, values: Vec<f64>, lambda_cap: f64) -> Result<Self, FieldError> {
        check_len(&grid, values.len(), 1)?;
        check_finite(&values, "forcing field")?;
        if !(lambda_cap.is_finite() && lambda_cap >= 0.0) {
            return Err(FieldError::InvalidParameter(format!(
                "forcing cap must be finite and non-negative, got {lambda_cap}"
            )));
        }
        if let Some(node) = values.iter().position(|&l| !(0.0..=lambda_cap).contains(&l)) {
            return Err(FieldError::OutOfBounds {
                what: "forcing",
                node,
                value: values[node],
                lo: 0.0,
                hi: lambda_cap,
            });
        }
        Ok(Self {
            grid,
            values,
            lambda_cap,
        })
    }

    pub fn constant(grid: Grid, lambda: f64) -> Result<Self, FieldError> {
        Self::new(grid, vec![lambda; grid.node_count()], lambda)
    }

    /// Same field multiplied by `s >= 0`.
    pub fn scaled(&self, s: f64) -> Result<Self, FieldError> {
        Self::new(
            self.grid,
            self.values.iter().map(|l| l * s).collect(),
            self.lambda_cap * s,
        )
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lambda_cap(&self) -> f64 {
        self.lambda_cap
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn value_at(&self, point: &[f64]) -> Option<f64> {
        self.grid.interpolate(&self.values, point)
    }
}

/// Symmetric matrix field `A(x)` with ellipticity constant `mu`.
///
/// Construction only checks shapes and finiteness; the two-sided eigenvalue
/// window `[mu, 1/mu]` and exact symmetry are checked by
/// [`CoefficientField::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    grid: Grid,
    matrices: Vec<f64>,
    mu: f64,
}

/// Result of [`CoefficientField::diagnostics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDiagnostics {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub min_eigenvalue_node: usize,
    pub max_eigenvalue_node: usize,
    pub symmetry_defect: f64,
    pub symmetry_defect_node: usize,
    pub mu: f64,
}

impl CoefficientDiagnostics {
    pub fn passes(&self) -> bool {
        self.symmetry_defect == 0.0
            && self.min_eigenvalue >= self.mu
            && self.max_eigenvalue <= 1.0 / self.mu
    }
}

impl CoefficientField {
    /// `matrices` holds one row-major `dim x dim` block per node.
    pub fn new(grid: Grid, matrices: Vec<f64>, mu: f64) -> Result<Self, FieldError> {
        let n = grid.dim();
        check_len(&grid, matrices.len(), n * n)?;
        check_finite(&matrices, "coefficient field")?;
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(FieldError::InvalidParameter(format!(
                "ellipticity constant must lie in (0, 1], got {mu}"
            )));
        }
        Ok(Self { grid, matrices, mu })
    }

    pub fn identity(grid: Grid, mu: f64) -> Result<Self, FieldError> {
        let n = grid.dim();
        let block: Vec<f64> = (0..n * n)
            .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
            .collect();
        Self::constant(grid, &block, mu)
    }

    pub fn constant(grid: Grid, block: &[f64], mu: f64) -> Result<Self, FieldError> {
        let matrices = block
            .iter()
            .copied()
            .cycle()
            .take(block.len() * grid.node_count())
            .collect();
        Self::new(grid, matrices, mu)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn matrices(&self) -> &[f64] {
        &self.matrices
    }

    /// Row-major block of node `i`.
    pub fn matrix(&self, i: usize) -> &[f64] {
        let n2 = self.grid.dim() * self.grid.dim();
        &self.matrices[i * n2..(i + 1) * n2]
    }

    pub fn entry(&self, i: usize, row: usize, col: usize) -> f64 {
        self.matrix(i)[row * self.grid.dim() + col]
    }

    /// Extreme eigenvalues over all nodes and the largest `|A - A^T|` entry.
    pub fn diagnostics(&self) -> CoefficientDiagnostics {
        let n = self.grid.dim();
        let mut diag = CoefficientDiagnostics {
            min_eigenvalue: f64::INFINITY,
            max_eigenvalue: f64::NEG_INFINITY,
            min_eigenvalue_node: 0,
            max_eigenvalue_node: 0,
            symmetry_defect: 0.0,
            symmetry_defect_node: 0,
            mu: self.mu,
        };
        for i in 0..self.grid.node_count() {
            let m = self.matrix(i);
            for r in 0..n {
                for c in r + 1..n {
                    let defect = (m[r * n + c] - m[c * n + r]).abs();
                    if defect > diag.symmetry_defect {
                        diag.symmetry_defect = defect;
                        diag.symmetry_defect_node = i;
                    }
                }
            }
            let eig = DMatrix::from_row_slice(n, n, m)
                .symmetric_eigen()
                .eigenvalues;
            let lo = eig.min();
            let hi = eig.max();
            if lo < diag.min_eigenvalue {
                diag.min_eigenvalue = lo;
                diag.min_eigenvalue_node = i;
            }
            if hi > diag.max_eigenvalue {
                diag.max_eigenvalue = hi;
                diag.max_eigenvalue_node = i;
            }
        }
        diag
    }

    /// Diagnostics if every node matrix is exactly symmetric with spectrum in
    /// `[mu, 1/mu]`; otherwise the first violation with its witness node.
    pub fn validate(&self) -> Result<CoefficientDiagnostics, FieldError> {
        let diag = self.diagnostics();
        if diag.symmetry_defect > 0.0 {
            return Err(FieldError::Asymmetric {
                node: diag.symmetry_defect_node,
                defect: diag.symmetry_defect,
            });
        }
        if diag.min_eigenvalue < self.mu {
            return Err(FieldError::Ellipticity {
                node: diag.min_eigenvalue_node,
                eigenvalue: diag.min_eigenvalue,
                lo: self.mu,
                hi: 1.0 / self.mu,
            });
        }
        if diag.max_eigenvalue > 1.0 / self.mu {
            return Err(FieldError::Ellipticity {
                node: diag.max_eigenvalue_node,
                eigenvalue: diag.max_eigenvalue,
                lo: self.mu,
                hi: 1.0 / self.mu,
            });
        }
        Ok(diag)
    }
}
