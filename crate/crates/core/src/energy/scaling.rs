//! Local blow-up `v(x) = u(x0 + rho x) / mu_s` and growth rescaling
//! `v(x) = u(r x) / r^beta`, resampled onto a unit grid by multilinear
//! interpolation.

use serde::{Deserialize, Serialize};

use super::EnergyError;
use crate::field::{CoefficientField, ExponentField, ForcingField, Grid, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingParams {
    Local {
        x0: Vec<f64>,
        rho: f64,
        mu_scale: f64,
    },
    Growth {
        r: f64,
        beta: f64,
        /// `min gamma(r x)` over the unit-ball nodes.
        gamma_star_r: f64,
        admissible: bool,
        /// `min (gamma(r x) beta - 2 (beta - 1))` over the unit-ball nodes.
        min_lambda_exponent: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledProblem {
    pub v: ScalarField,
    pub a_scaled: CoefficientField,
    pub lambda_scaled: ForcingField,
    pub gamma_scaled: ExponentField,
    pub params: ScalingParams,
    pub lambda_sup: f64,
    /// Bound on the interpolation error of `v`: `sum_d max |second difference along d| / 8`
    /// of the source field, divided by the amplitude scale.
    pub interpolation_error_bound: f64,
}

impl ScaledProblem {
    /// Admissibility flag of a growth rescaling; `None` for local blow-ups.
    pub fn admissible(&self) -> Option<bool> {
        match self.params {
            ScalingParams::Growth { admissible, .. } => Some(admissible),
            ScalingParams::Local { .. } => None,
        }
    }
}

/// Convex combination clipped to the range of the combined values, so that
/// rounding never pushes a resampled value outside the source bounds.
fn combine(weights: &[(usize, f64)], values: &[f64], stride: usize, offset: usize) -> f64 {
    let mut acc = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(node, w) in weights {
        let v = values[node * stride + offset];
        acc += w * v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    acc.clamp(lo, hi)
}

fn second_difference_bound(u: &ScalarField) -> f64 {
    let g = u.grid();
    let v = u.values();
    let mut total = 0.0;
    for d in 0..g.dim() {
        let mut worst: f64 = 0.0;
        for i in 0..g.node_count() {
            if let (Some(a), Some(b)) = (g.neighbor(i, d, false), g.neighbor(i, d, true)) {
                worst = worst.max((v[a] - 2.0 * v[i] + v[b]).abs());
            }
        }
        total += worst / 8.0;
    }
    total
}

struct Resampled {
    u: Vec<f64>,
    a: Vec<f64>,
    gamma: Vec<f64>,
    lambda: Vec<f64>,
}

fn resample(
    u: &ScalarField,
    a: &CoefficientField,
    lam: &ForcingField,
    gam: &ExponentField,
    target: &Grid,
    map: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Resampled, EnergyError> {
    let src = u.grid();
    let n = src.dim();
    let nn = n * n;
    let count = target.node_count();
    let mut out = Resampled {
        u: Vec::with_capacity(count),
        a: Vec::with_capacity(count * nn),
        gamma: Vec::with_capacity(count),
        lambda: Vec::with_capacity(count),
    };
    for i in 0..count {
        let x = target.coords(i);
        let y = map(&x[..n]);
        let w = src.interpolation_weights(&y).ok_or_else(|| {
            EnergyError::Scaling(format!("image point {y:?} leaves the source grid"))
        })?;
        out.u.push(combine(&w, u.values(), 1, 0));
        for k in 0..nn {
            out.a.push(combine(&w, a.matrices(), nn, k));
        }
        out.gamma.push(combine(&w, gam.values(), 1, 0));
        out.lambda.push(combine(&w, lam.values(), 1, 0));
    }
    Ok(out)
}

fn check_shared(
    u: &ScalarField,
    a: &CoefficientField,
    lam: &ForcingField,
    gam: &ExponentField,
) -> Result<(), EnergyError> {
    let g = u.grid();
    if a.grid() != g {
        return Err(EnergyError::GridMismatch("coefficient"));
    }
    if lam.grid() != g {
        return Err(EnergyError::GridMismatch("forcing"));
    }
    if gam.grid() != g {
        return Err(EnergyError::GridMismatch("exponent"));
    }
    Ok(())
}

fn check_unit_target(target: &Grid, dim: usize) -> Result<(), EnergyError> {
    if target.dim() != dim {
        return Err(EnergyError::GridMismatch("target"));
    }
    let inside = (0..dim).all(|d| target.lower()[d] >= -1.0 && target.upper(d) <= 1.0);
    if !inside {
        return Err(EnergyError::Scaling(
            "target grid must lie inside [-1, 1]^n".into(),
        ));
    }
    Ok(())
}

/// Blow-up at `x0` with radius `rho` and amplitude `mu_scale`, resampled on
/// `[-1, 1]^n` with the node counts of the source grid.
pub fn scale_local(
    u: &ScalarField,
    a: &CoefficientField,
    lam: &ForcingField,
    gam: &ExponentField,
    x0: &[f64],
    rho: f64,
    mu_scale: f64,
) -> Result<ScaledProblem, EnergyError> {
    let g = u.grid();
    let target = Grid::new(g.nodes_per_axis(), &vec![-1.0; g.dim()], &vec![1.0; g.dim()])?;
    scale_local_on(u, a, lam, gam, x0, rho, mu_scale, &target)
}

/// [`scale_local`] onto an explicit target grid inside `[-1, 1]^n`.
#[allow(clippy::too_many_arguments)]
pub fn scale_local_on(
    u: &ScalarField,
    a: &CoefficientField,
    lam: &ForcingField,
    gam: &ExponentField,
    x0: &[f64],
    rho: f64,
    mu_scale: f64,
    target: &Grid,
) -> Result<ScaledProblem, EnergyError> {
    check_shared(u, a, lam, gam)?;
    let g = u.grid();
    let n = g.dim();
    check_unit_target(target, n)?;
    if x0.len() != n || !g.contains(x0) {
        return Err(EnergyError::Scaling(format!("centre {x0:?} is not in the grid box")));
    }
    if !(mu_scale.is_finite() && mu_scale > 0.0) {
        return Err(EnergyError::Scaling(format!("mu_scale must be positive, got {mu_scale}")));
    }
    let room = g.distance_to_boundary(x0);
    if !(rho.is_finite() && rho > 0.0) || rho > room * (1.0 + 1e-12) {
        return Err(EnergyError::Scaling(format!(
            "rho = {rho} must lie in (0, {room}] (distance to the box boundary)"
        )));
    }
    let r = resample(u, a, lam, gam, target, |x| {
        (0..n).map(|d| x0[d] + rho * x[d]).collect()
    })?;
    let amplitude = rho / mu_scale;
    let lambda: Vec<f64> = r
        .lambda
        .iter()
        .zip(&r.gamma)
        .map(|(&l, &gm)| mu_scale.powf(gm) * amplitude * amplitude * l)
        .collect();
    let v: Vec<f64> = r.u.iter().map(|x| x / mu_scale).collect();
    finish(
        target,
        v,
        r.a,
        lambda,
        r.gamma,
        a.mu(),
        gam.gamma_star(),
        ScalingParams::Local {
            x0: x0.to_vec(),
            rho,
            mu_scale,
        },
        second_difference_bound(u) / mu_scale,
    )
}

/// Growth rescaling `v(x) = u(r x) / r^beta` about the origin, resampled on
/// `[-1, 1]^n` with the node counts of the source grid.
///
/// The flag `admissible` records `gamma_star(r) beta - 2 (beta - 1) >= 0`,
/// which for `gamma_star(r) < 2` is `beta <= 2 / (2 - gamma_star(r))` and
/// holds for every `beta` once `gamma_star(r) >= 2`.
pub fn rescale_growth(
    u: &ScalarField,
    a: &CoefficientField,
    lam: &ForcingField,
    gam: &ExponentField,
    r: f64,
    beta: f64,
) -> Result<ScaledProblem, EnergyError> {
    check_shared(u, a, lam, gam)?;
    let g = u.grid();
    let n = g.dim();
    if !(r.is_finite() && r > 0.0 && r <= 1.0) {
        return Err(EnergyError::Scaling(format!("r must lie in (0, 1], got {r}")));
    }
    if !(beta.is_finite() && beta > 1.0) {
        return Err(EnergyError::Scaling(format!("beta must exceed 1, got {beta}")));
    }
    let room = g.distance_to_boundary(&vec![0.0; n]);
    if !g.contains(&vec![0.0; n]) || r > room * (1.0 + 1e-12) {
        return Err(EnergyError::Scaling(format!(
            "B_{r}(0) is not inside the grid box"
        )));
    }
    let target = Grid::new(g.nodes_per_axis(), &vec![-1.0; n], &vec![1.0; n])?;
    let res = resample(u, a, lam, gam, &target, |x| x.iter().map(|c| r * c).collect())?;
    let exponent = |gm: f64| gm * beta - 2.0 * (beta - 1.0);
    let lambda: Vec<f64> = res
        .lambda
        .iter()
        .zip(&res.gamma)
        .map(|(&l, &gm)| l * r.powf(exponent(gm)))
        .collect();
    let scale = r.powf(beta);
    let v: Vec<f64> = res.u.iter().map(|x| x / scale).collect();
    let mut gamma_star_r = f64::INFINITY;
    for i in 0..target.node_count() {
        let x = target.coords(i);
        if x[..n].iter().map(|c| c * c).sum::<f64>() <= 1.0 + 1e-12 {
            gamma_star_r = gamma_star_r.min(res.gamma[i]);
        }
    }
    let min_lambda_exponent = exponent(gamma_star_r);
    let params = ScalingParams::Growth {
        r,
        beta,
        gamma_star_r,
        admissible: min_lambda_exponent >= 0.0,
        min_lambda_exponent,
    };
    finish(
        &target,
        v,
        res.a,
        lambda,
        res.gamma,
        a.mu(),
        gam.gamma_star(),
        params,
        second_difference_bound(u) / scale,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    target: &Grid,
    v: Vec<f64>,
    a: Vec<f64>,
    lambda: Vec<f64>,
    gamma: Vec<f64>,
    mu: f64,
    gamma_star: f64,
    params: ScalingParams,
    interpolation_error_bound: f64,
) -> Result<ScaledProblem, EnergyError> {
    let lambda_sup = lambda.iter().copied().fold(0.0, f64::max);
    Ok(ScaledProblem {
        v: ScalarField::new(*target, v)?,
        a_scaled: CoefficientField::new(*target, a, mu)?,
        lambda_scaled: ForcingField::new(*target, lambda, lambda_sup)?,
        gamma_scaled: ExponentField::new(*target, gamma, gamma_star)?,
        params,
        lambda_sup,
        interpolation_error_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{energy, Region};
    use crate::field::{Ball, CoefficientSpec, FieldSpec};

    fn data(g: Grid, gamma: f64) -> (ScalarField, CoefficientField, ForcingField, ExponentField) {
        let u = FieldSpec::Random { lo: 0.0, hi: 1.0, seed: 11 }.sample(&g).unwrap();
        let a = CoefficientSpec::Random { lo: 0.7, hi: 1.4, seed: 2 }.sample(&g, 0.5).unwrap();
        let lam = FieldSpec::Random { lo: 0.5, hi: 2.0, seed: 3 }.sample_forcing(&g, 2.0).unwrap();
        let gam = ExponentField::constant(g, gamma).unwrap();
        (u, a, lam, gam)
    }

    #[test]
    fn identity_parameters_are_bit_exact() {
        let g = Grid::cube(2, 9).unwrap();
        let (u, a, lam, _) = data(g, 1.0);
        let gam = FieldSpec::Random { lo: 0.0, hi: 1.5, seed: 9 }.sample_exponent(&g, 1.5).unwrap();
        let s = scale_local(&u, &a, &lam, &gam, &[0.0, 0.0], 1.0, 1.0).unwrap();
        assert_eq!(s.v.values(), u.values());
        assert_eq!(s.a_scaled.matrices(), a.matrices());
        assert_eq!(s.gamma_scaled.values(), gam.values());
        assert_eq!(s.lambda_scaled.values(), lam.values());
    }

    #[test]
    fn unit_exponent_half_radius_quarter_amplitude_keeps_lambda() {
        let g = Grid::cube(1, 33).unwrap();
        let (u, a, _, gam) = data(g, 1.0);
        let lam = ForcingField::constant(g, 1.75).unwrap();
        let s = scale_local(&u, &a, &lam, &gam, &[0.0], 0.5, 0.25).unwrap();
        assert!(s.lambda_scaled.values().iter().all(|&l| l == 1.75));
    }

    #[test]
    fn energy_change_of_variables_on_nested_grids() {
        let g = Grid::cube(2, 33).unwrap();
        let (u, a, lam, _) = data(g, 0.0);
        let gam = FieldSpec::Random { lo: 0.2, hi: 1.2, seed: 5 }.sample_exponent(&g, 1.2).unwrap();
        let (rho, mu) = (0.5, 0.3);
        let target = Grid::cube(2, 17).unwrap();
        let s = scale_local_on(&u, &a, &lam, &gam, &[0.0, 0.0], rho, mu, &target).unwrap();
        let lhs = energy(&u, &a, &lam, &gam, &Region::Ball(Ball::new(&[0.0, 0.0], rho).unwrap()))
            .unwrap()
            .total;
        let rhs = energy(
            &s.v,
            &s.a_scaled,
            &s.lambda_scaled,
            &s.gamma_scaled,
            &Region::Ball(Ball::new(&[0.0, 0.0], 1.0).unwrap()),
        )
        .unwrap()
        .total;
        assert!((lhs - mu * mu * rhs).abs() < 1e-12 * lhs, "{lhs} vs {}", mu * mu * rhs);
    }

    #[test]
    fn growth_exponent_arithmetic() {
        let g = Grid::cube(1, 17).unwrap();
        let (u, a, lam, gam) = data(g, 1.0);
        let s = rescale_growth(&u, &a, &lam, &gam, 0.5, 2.0).unwrap();
        assert_eq!(s.admissible(), Some(true));
        let direct = rescale_growth(&u, &a, &lam, &gam, 0.5, 3.0).unwrap();
        assert_eq!(direct.admissible(), Some(false));
        let lam1 = ForcingField::constant(g, 1.0).unwrap();
        let t = rescale_growth(&u, &a, &lam1, &gam, 0.25, 3.0).unwrap();
        assert!((t.lambda_sup - 4.0).abs() < 1e-12);
        let id = rescale_growth(&u, &a, &lam, &gam, 1.0, 1.5).unwrap();
        assert_eq!(id.v.values(), u.values());
        assert_eq!(id.lambda_scaled.values(), lam.values());
    }

    #[test]
    fn bad_parameters() {
        let g = Grid::cube(1, 17).unwrap();
        let (u, a, lam, gam) = data(g, 1.0);
        assert!(scale_local(&u, &a, &lam, &gam, &[0.5], 0.6, 1.0).is_err());
        assert!(scale_local(&u, &a, &lam, &gam, &[0.0], 0.5, 0.0).is_err());
        assert!(rescale_growth(&u, &a, &lam, &gam, 0.5, 1.0).is_err());
        assert!(rescale_growth(&u, &a, &lam, &gam, 1.5, 2.0).is_err());
    }
}
