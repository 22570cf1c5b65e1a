//! Catalogue of analytic field specifications, sampled node-wise on a grid.

use nalgebra::{DMatrix, Rotation2, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CoefficientField, ExponentField, FieldError, ForcingField, Grid, ScalarField};

/// Scalar field specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `value`.
    Const { value: f64 },
    /// `offset + gradient . x`.
    Affine { offset: f64, gradient: Vec<f64> },
    /// `scale * |x - center|^power`, `power >= 0`.
    Radial {
        center: Vec<f64>,
        power: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `coeff * ((x[axis] - shift)_+)^power`.
    Profile {
        axis: usize,
        #[serde(default)]
        shift: f64,
        coeff: f64,
        power: f64,
    },
    /// The one-dimensional free-boundary profile `c ((x[axis] - shift)_+)^{2/(2-gamma)}`
    /// with `c^{2-gamma} = lambda (2-gamma)^2 / 4`, for constant `gamma < 2`.
    AltPhillips {
        gamma: f64,
        lambda: f64,
        #[serde(default)]
        axis: usize,
        #[serde(default)]
        shift: f64,
    },
    /// `base + amplitude * exp(1 - 1/(1 - |x-center|^2/radius^2))` inside the
    /// ball, `base` outside.
    Bump {
        center: Vec<f64>,
        radius: f64,
        amplitude: f64,
        #[serde(default)]
        base: f64,
    },
    /// `base + (peak - base) * max(0, 1 - |x - center| / radius)`; Lipschitz
    /// with constant `|peak - base| / radius`.
    Cone {
        center: Vec<f64>,
        radius: f64,
        base: f64,
        peak: f64,
    },
    /// Independent uniform samples in `[lo, hi]`.
    Random { lo: f64, hi: f64, seed: u64 },
}

fn one() -> f64 {
    1.0
}

/// Alt-Phillips profile coefficient and exponent for constant `gamma < 2`.
pub fn alt_phillips_coefficients(gamma: f64, lambda: f64) -> (f64, f64) {
    let beta = 2.0 / (2.0 - gamma);
    let c = (lambda * (2.0 - gamma).powi(2) / 4.0).powf(1.0 / (2.0 - gamma));
    (c, beta)
}

fn norm_to(x: &[f64], center: &[f64]) -> f64 {
    x.iter()
        .zip(center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

impl FieldSpec {
    fn check(&self, dim: usize) -> Result<(), FieldError> {
        let bad = |msg: String| Err(FieldError::InvalidParameter(msg));
        let check_point = |p: &[f64], name: &str| -> Result<(), FieldError> {
            if p.len() != dim || p.iter().any(|v| !v.is_finite()) {
                return bad(format!("{name} must be a finite {dim}-vector, got {p:?}"));
            }
            Ok(())
        };
        match self {
            Self::Const { value } if !value.is_finite() => bad(format!("const value {value}")),
            Self::Affine { gradient, .. } => check_point(gradient, "affine gradient"),
            Self::Radial { center, power, scale } => {
                check_point(center, "radial center")?;
                if !(power.is_finite() && *power >= 0.0 && scale.is_finite()) {
                    return bad(format!("radial power must be >= 0, got {power}"));
                }
                Ok(())
            }
            Self::Profile { axis, power, coeff, .. } => {
                if *axis >= dim {
                    return bad(format!("profile axis {axis} on a {dim}-d grid"));
                }
                if !(power.is_finite() && *power >= 0.0 && coeff.is_finite()) {
                    return bad(format!("profile power must be >= 0, got {power}"));
                }
                Ok(())
            }
            Self::AltPhillips { gamma, lambda, axis, .. } => {
                if *axis >= dim {
                    return bad(format!("profile axis {axis} on a {dim}-d grid"));
                }
                if !(gamma.is_finite() && *gamma >= 0.0 && *gamma < 2.0) {
                    return bad(format!("profile exponent needs 0 <= gamma < 2, got {gamma}"));
                }
                if !(lambda.is_finite() && *lambda >= 0.0) {
                    return bad(format!("profile forcing must be >= 0, got {lambda}"));
                }
                Ok(())
            }
            Self::Bump { center, radius, .. } | Self::Cone { center, radius, .. } => {
                check_point(center, "center")?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(format!("radius must be positive, got {radius}"));
                }
                Ok(())
            }
            Self::Random { lo, hi, .. } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                bad(format!("random range [{lo}, {hi}] is empty"))
            }
            _ => Ok(()),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Const { value } => *value,
            Self::Affine { offset, gradient } => {
                offset + gradient.iter().zip(x).map(|(g, v)| g * v).sum::<f64>()
            }
            Self::Radial { center, power, scale } => scale * norm_to(x, center).powf(*power),
            Self::Profile { axis, shift, coeff, power } => {
                let s = x[*axis] - shift;
                if s > 0.0 {
                    coeff * s.powf(*power)
                } else {
                    0.0
                }
            }
            Self::AltPhillips { gamma, lambda, axis, shift } => {
                let (c, beta) = alt_phillips_coefficients(*gamma, *lambda);
                let s = x[*axis] - shift;
                if s > 0.0 {
                    c * s.powf(beta)
                } else {
                    0.0
                }
            }
            Self::Bump { center, radius, amplitude, base } => {
                let q = norm_to(x, center) / radius;
                if q < 1.0 {
                    base + amplitude * (1.0 - 1.0 / (1.0 - q * q)).exp()
                } else {
                    *base
                }
            }
            Self::Cone { center, radius, base, peak } => {
                let q = norm_to(x, center) / radius;
                base + (peak - base) * (1.0 - q).max(0.0)
            }
            Self::Random { .. } => unreachable!("random specs are sampled in bulk"),
        }
    }

    /// Node-wise values of the specification.
    pub fn sample_values(&self, grid: &Grid) -> Result<Vec<f64>, FieldError> {
        self.check(grid.dim())?;
        if let Self::Random { lo, hi, seed } = self {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            return Ok((0..grid.node_count())
                .map(|_| if lo == hi { *lo } else { rng.random_range(*lo..=*hi) })
                .collect());
        }
        Ok((0..grid.node_count())
            .map(|i| self.eval(&grid.coords(i)[..grid.dim()]))
            .collect())
    }

    pub fn sample(&self, grid: &Grid) -> Result<ScalarField, FieldError> {
        ScalarField::new(*grid, self.sample_values(grid)?)
    }

    /// Sample as an exponent field; values outside `[0, gamma_star]` are rejected.
    pub fn sample_exponent(&self, grid: &Grid, gamma_star: f64) -> Result<ExponentField, FieldError> {
        ExponentField::new(*grid, self.sample_values(grid)?, gamma_star)
    }

    /// Sample as a forcing field; values outside `[0, cap]` are rejected.
    pub fn sample_forcing(&self, grid: &Grid, cap: f64) -> Result<ForcingField, FieldError> {
        ForcingField::new(*grid, self.sample_values(grid)?, cap)
    }
}

/// Coefficient field specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Identity,
    /// Constant diagonal matrix.
    Diagonal { entries: Vec<f64> },
    /// Constant full matrix, row-major.
    Matrix { entries: Vec<f64> },
    /// Diagonal matrices alternating on a checkerboard of squares of side
    /// `side`, anchored at the lower corner of the box.
    Checkerboard {
        first: Vec<f64>,
        second: Vec<f64>,
        side: f64,
    },
    /// Independent random symmetric matrices per node: eigenvalues uniform in
    /// `[lo, hi]` and a uniformly random rotation.
    Random { lo: f64, hi: f64, seed: u64 },
}

fn diag_block(entries: &[f64]) -> Vec<f64> {
    let n = entries.len();
    let mut m = vec![0.0; n * n];
    for (d, e) in entries.iter().enumerate() {
        m[d * n + d] = *e;
    }
    m
}

/// Random symmetric `n x n` matrix with eigenvalues drawn from `[lo, hi]`.
pub(crate) fn random_spd(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    let eig: Vec<f64> = (0..n)
        .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
        .collect();
    let q: DMatrix<f64> = match n {
        1 => DMatrix::identity(1, 1),
        2 => {
            let r = Rotation2::new(rng.random_range(0.0..std::f64::consts::TAU));
            DMatrix::from_column_slice(2, 2, r.matrix().as_slice())
        }
        _ => {
            let r = Rotation3::from_euler_angles(
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            );
            DMatrix::from_column_slice(3, 3, r.matrix().as_slice())
        }
    };
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig));
    let a = &q * d * q.transpose();
    let mut m = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            // symmetrise exactly
            m[r * n + c] = 0.5 * (a[(r, c)] + a[(c, r)]);
        }
    }
    m
}

impl CoefficientSpec {
    pub fn sample(&self, grid: &Grid, mu: f64) -> Result<CoefficientField, FieldError> {
        let n = grid.dim();
        let bad = |msg: String| Err(FieldError::InvalidParameter(msg));
        match self {
            Self::Identity => CoefficientField::identity(*grid, mu),
            Self::Diagonal { entries } => {
                if entries.len() != n {
                    return bad(format!("diagonal needs {n} entries, got {}", entries.len()));
                }
                CoefficientField::constant(*grid, &diag_block(entries), mu)
            }
            Self::Matrix { entries } => {
                if entries.len() != n * n {
                    return bad(format!("matrix needs {} entries, got {}", n * n, entries.len()));
                }
                CoefficientField::constant(*grid, entries, mu)
            }
            Self::Checkerboard { first, second, side } => {
                if first.len() != n || second.len() != n {
                    return bad(format!("checkerboard blocks need {n} diagonal entries"));
                }
                if !(side.is_finite() && *side > 0.0) {
                    return bad(format!("checkerboard side must be positive, got {side}"));
                }
                let (a, b) = (diag_block(first), diag_block(second));
                let mut matrices = Vec::with_capacity(grid.node_count() * n * n);
                for i in 0..grid.node_count() {
                    let x = grid.coords(i);
                    let parity: i64 = (0..n)
                        .map(|d| ((x[d] - grid.lower()[d]) / side + 1e-9).floor() as i64)
                        .sum();
                    matrices.extend_from_slice(if parity.rem_euclid(2) == 0 { &a } else { &b });
                }
                CoefficientField::new(*grid, matrices, mu)
            }
            Self::Random { lo, hi, seed } => {
                if !(*lo > 0.0 && lo <= hi && hi.is_finite()) {
                    return bad(format!("random spectrum [{lo}, {hi}] must be positive and ordered"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let matrices = (0..grid.node_count())
                    .flat_map(|_| random_spd(n, *lo, *hi, &mut rng))
                    .collect();
                CoefficientField::new(*grid, matrices, mu)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn const_zero() {
        let g = Grid::cube(2, 5).unwrap();
        let f = FieldSpec::Const { value: 0.0 }.sample(&g).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn radial_linear_on_five_nodes() {
        let g = Grid::cube(1, 5).unwrap();
        let f = FieldSpec::Radial {
            center: vec![0.0],
            power: 1.0,
            scale: 1.0,
        }
        .sample(&g)
        .unwrap();
        assert_eq!(f.values(), &[1.0, 0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn exponent_spec_beyond_cap_is_rejected() {
        let g = Grid::cube(1, 5).unwrap();
        let spec = FieldSpec::Const { value: 1.5 };
        assert!(spec.sample_exponent(&g, 1.0).is_err());
        assert!(spec.sample_exponent(&g, 1.5).is_ok());
    }

    #[test]
    fn bad_parameters() {
        let g = Grid::cube(2, 5).unwrap();
        assert!(FieldSpec::Radial {
            center: vec![0.0],
            power: 1.0,
            scale: 1.0
        }
        .sample(&g)
        .is_err());
        assert!(FieldSpec::Random {
            lo: 1.0,
            hi: 0.0,
            seed: 1
        }
        .sample(&g)
        .is_err());
        assert!(FieldSpec::AltPhillips {
            gamma: 2.0,
            lambda: 1.0,
            axis: 0,
            shift: 0.0
        }
        .sample(&g)
        .is_err());
    }

    #[test]
    fn unknown_tag_fails_to_parse() {
        let r: Result<FieldSpec, _> = serde_json::from_str(r#"{"kind":"wavelet","scale":1}"#);
        assert!(r.is_err());
    }

    #[test]
    fn checkerboard_validation() {
        let g = Grid::cube(2, 17).unwrap();
        let spec = CoefficientSpec::Checkerboard {
            first: vec![0.5, 2.0],
            second: vec![2.0, 0.5],
            side: 0.25,
        };
        let a = spec.sample(&g, 0.5).unwrap();
        let d = a.validate().unwrap();
        assert_eq!((d.min_eigenvalue, d.max_eigenvalue), (0.5, 2.0));
        // both blocks occur
        let firsts = (0..g.node_count()).filter(|&i| a.entry(i, 0, 0) == 0.5).count();
        assert!(firsts > 0 && firsts < g.node_count());
        let strict = spec.sample(&g, 0.6).unwrap();
        match strict.validate() {
            Err(FieldError::Ellipticity { eigenvalue, .. }) => {
                assert!(eigenvalue == 0.5 || eigenvalue == 2.0)
            }
            other => panic!("expected ellipticity failure, got {other:?}"),
        }
    }

    #[test]
    fn random_spd_respects_window() {
        for dim in 1..=3 {
            let g = Grid::cube(dim, 3).unwrap();
            let a = CoefficientSpec::Random {
                lo: 0.5,
                hi: 2.0,
                seed: 9,
            }
            .sample(&g, 0.5)
            .unwrap();
            let d = a.diagnostics();
            assert_eq!(d.symmetry_defect, 0.0);
            assert!(d.min_eigenvalue >= 0.5 - 1e-12 && d.max_eigenvalue <= 2.0 + 1e-12);
        }
    }
}
