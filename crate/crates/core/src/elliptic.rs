//! Flux-form finite-volume operator
//!
//! ```text
//! (L u)_i = sum_d [ a+_d (u_{i+e_d} - u_i) - a-_d (u_i - u_{i-e_d}) ] / h_d^2
//! ```
//!
//! with face coefficients `a±_d` the harmonic mean of the diagonal entries
//! `A_dd` at the two nodes of the face. All face coefficients are positive,
//! so `-L` is an M-matrix and discrete solutions obey the maximum principle.
//! The subharmonicity residual instead uses the stiffness of the energy
//! quadrature, the operator the minimiser is stationary for.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::Stiffness;
use crate::field::{Ball, CoefficientField, FieldError, Grid, ScalarField};

#[derive(Debug, Error)]
pub enum EllipticError {
    #[error("{0} lives on a different grid")]
    GridMismatch(&'static str),
    #[error("region has no interior nodes")]
    EmptyRegion,
    #[error("face coefficient {value} between nodes {node} and {neighbor} is not positive")]
    NotMMatrix {
        node: usize,
        neighbor: usize,
        value: f64,
    },
    #[error("h = {value} is not positive at node {node}")]
    NonPositive { node: usize, value: f64 },
    #[error("point {0:?} is outside the grid")]
    Point(Vec<f64>),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplacementOptions {
    /// Stop once the largest residual is below `tol_lin * max(1, |rhs|_inf)`.
    pub tol_lin: f64,
    /// Iteration cap; `0` means `10 * unknowns + 100`.
    pub max_iter: usize,
    /// Jacobi preconditioning.
    pub preconditioner: bool,
}

impl Default for ReplacementOptions {
    fn default() -> Self {
        Self {
            tol_lin: 1e-10,
            max_iter: 0,
            preconditioner: false,
        }
    }
}

/// Scalar record accompanying a replacement (the field itself goes to a dump).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementMeta {
    pub region: Ball,
    pub unknowns: usize,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub boundary_min: f64,
    pub boundary_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementResult {
    pub h: ScalarField,
    /// Largest node residual of the scaled system `-h_min^2 L h = 0`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub unknowns: usize,
    /// Range of the Dirichlet data on the nodes adjacent to the unknowns.
    pub boundary_min: f64,
    pub boundary_max: f64,
    pub region: Ball,
}

impl ReplacementResult {
    pub fn meta(&self) -> ReplacementMeta {
        ReplacementMeta {
            region: self.region.clone(),
            unknowns: self.unknowns,
            residual: self.residual,
            iterations: self.iterations,
            converged: self.converged,
            boundary_min: self.boundary_min,
            boundary_max: self.boundary_max,
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Face coefficient between `i` and its neighbour `j` along `axis`.
fn face(a: &CoefficientField, i: usize, j: usize, axis: usize) -> f64 {
    harmonic(a.entry(i, axis, axis), a.entry(j, axis, axis))
}

/// Apply `L` at a node whose axis neighbours all exist.
fn apply_at(grid: &Grid, a: &CoefficientField, u: &[f64], i: usize) -> f64 {
    let mut acc = 0.0;
    for d in 0..grid.dim() {
        let h2 = grid.spacing()[d] * grid.spacing()[d];
        let fwd = grid.neighbor(i, d, true).expect("interior node");
        let bwd = grid.neighbor(i, d, false).expect("interior node");
        acc += (face(a, i, fwd, d) * (u[fwd] - u[i]) - face(a, i, bwd, d) * (u[i] - u[bwd])) / h2;
    }
    acc
}

/// Sparse symmetric system over the unknowns of a region.
struct System {
    /// For each unknown: diagonal and (column, value) off-diagonal entries.
    diag: Vec<f64>,
    off: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl System {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = self.diag[k] * x[k];
            for &(c, v) in &self.off[k] {
                acc += v * x[c];
            }
            *o = acc;
        }
    }

    fn residual_inf(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        self.apply(x, scratch);
        scratch
            .iter()
            .zip(&self.rhs)
            .map(|(ax, b)| (b - ax).abs())
            .fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients; returns (solution, residual, iterations, converged).
fn conjugate_gradient(
    sys: &System,
    x0: Vec<f64>,
    opts: &ReplacementOptions,
) -> (Vec<f64>, f64, usize, bool) {
    let m = sys.diag.len();
    let max_iter = if opts.max_iter == 0 { 10 * m + 100 } else { opts.max_iter };
    let scale = sys.rhs.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    let target = opts.tol_lin * scale;
    let mut x = x0;
    let mut scratch = vec![0.0; m];
    sys.apply(&x, &mut scratch);
    let mut r: Vec<f64> = sys.rhs.iter().zip(&scratch).map(|(b, ax)| b - ax).collect();
    let precondition = |r: &[f64], z: &mut Vec<f64>| {
        z.clear();
        if opts.preconditioner {
            z.extend(r.iter().zip(&sys.diag).map(|(v, d)| v / d));
        } else {
            z.extend_from_slice(r);
        }
    };
    let mut z = Vec::with_capacity(m);
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut best = x.clone();
    let mut best_res = r.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    let mut ap = vec![0.0; m];
    let mut iterations = 0;
    while best_res > target && iterations < max_iter {
        iterations += 1;
        sys.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for k in 0..m {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let res = r.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
        if res < best_res {
            // confirm against the true residual before trusting the recursion
            let true_res = sys.residual_inf(&x, &mut scratch);
            if true_res < best_res {
                best_res = true_res;
                best.copy_from_slice(&x);
            }
        }
        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..m {
            p[k] = z[k] + beta * p[k];
        }
    }
    let converged = best_res <= target;
    (best, best_res, iterations, converged)
}

/// Nodes of `region` whose axis neighbours all exist and lie in the region.
pub fn region_interior(grid: &Grid, region: &Ball) -> Vec<usize> {
    let inside: std::collections::HashSet<usize> = region.nodes(grid).into_iter().collect();
    let mut out: Vec<usize> = inside
        .iter()
        .copied()
        .filter(|&i| {
            (0..grid.dim()).all(|d| {
                [false, true].iter().all(|&f| {
                    grid.neighbor(i, d, f)
                        .is_some_and(|j| inside.contains(&j))
                })
            })
        })
        .collect();
    out.sort_unstable();
    out
}

pub fn harmonic_replacement(
    u: &ScalarField,
    a: &CoefficientField,
    region: &Ball,
) -> Result<ReplacementResult, EllipticError> {
    harmonic_replacement_with(u, a, region, &ReplacementOptions::default())
}

/// A-harmonic replacement of `u` in `region`: `L h = 0` on the region
/// interior, `h = u` elsewhere.
pub fn harmonic_replacement_with(
    u: &ScalarField,
    a: &CoefficientField,
    region: &Ball,
    opts: &ReplacementOptions,
) -> Result<ReplacementResult, EllipticError> {
    let grid = u.grid();
    if a.grid() != grid {
        return Err(EllipticError::GridMismatch("coefficient"));
    }
    region.check_inside(grid)?;
    a.validate()?;
    let unknowns = region_interior(grid, region);
    if unknowns.is_empty() {
        return Err(EllipticError::EmptyRegion);
    }
    let mut slot = vec![usize::MAX; grid.node_count()];
    for (k, &i) in unknowns.iter().enumerate() {
        slot[i] = k;
    }
    let h_min2 = grid.min_spacing() * grid.min_spacing();
    let uv = u.values();
    let m = unknowns.len();
    let mut sys = System {
        diag: vec![0.0; m],
        off: vec![Vec::with_capacity(2 * grid.dim()); m],
        rhs: vec![0.0; m],
    };
    let mut boundary_min = f64::INFINITY;
    let mut boundary_max = f64::NEG_INFINITY;
    for (k, &i) in unknowns.iter().enumerate() {
        for d in 0..grid.dim() {
            let s = h_min2 / (grid.spacing()[d] * grid.spacing()[d]);
            for fwd in [false, true] {
                let j = grid.neighbor(i, d, fwd).expect("interior node");
                let c = face(a, i, j, d);
                if !(c > 0.0) {
                    return Err(EllipticError::NotMMatrix {
                        node: i,
                        neighbor: j,
                        value: c,
                    });
                }
                sys.diag[k] += s * c;
                if slot[j] == usize::MAX {
                    sys.rhs[k] += s * c * uv[j];
                    boundary_min = boundary_min.min(uv[j]);
                    boundary_max = boundary_max.max(uv[j]);
                } else {
                    sys.off[k].push((slot[j], -s * c));
                }
            }
        }
    }
    let x0: Vec<f64> = unknowns.iter().map(|&i| uv[i]).collect();
    let (x, residual, iterations, converged) = conjugate_gradient(&sys, x0, opts);
    let mut hv = uv.to_vec();
    for (k, &i) in unknowns.iter().enumerate() {
        hv[i] = x[k];
    }
    Ok(ReplacementResult {
        h: ScalarField::new(*grid, hv)?,
        residual,
        iterations,
        converged,
        unknowns: m,
        boundary_min,
        boundary_max,
        region: region.clone(),
    })
}

/// Mean over the region nodes of `(u - h)^2`.
pub fn replacement_deficit(
    u: &ScalarField,
    h: &ScalarField,
    region: &Ball,
) -> Result<f64, EllipticError> {
    if u.grid() != h.grid() {
        return Err(EllipticError::GridMismatch("replacement"));
    }
    region.check_inside(u.grid())?;
    let nodes = region.nodes(u.grid());
    if nodes.is_empty() {
        return Err(EllipticError::EmptyRegion);
    }
    let sum: f64 = nodes
        .iter()
        .map(|&i| {
            let d = u.values()[i] - h.values()[i];
            d * d
        })
        .sum();
    Ok(sum / nodes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub sup: f64,
    pub inf: f64,
    pub at_eval: f64,
    /// `sup h / h(eval_point)`.
    pub sup_ratio: f64,
    /// `sup h / inf h` over the inner-ball nodes.
    pub quotient: f64,
}

pub fn harnack_quotient(
    h: &ScalarField,
    inner: &Ball,
    eval_point: &[f64],
) -> Result<HarnackReport, EllipticError> {
    let grid = h.grid();
    inner.check_inside(grid)?;
    let nodes = inner.nodes(grid);
    if nodes.is_empty() {
        return Err(EllipticError::EmptyRegion);
    }
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    for &i in &nodes {
        let v = h.values()[i];
        if !(v > 0.0) {
            return Err(EllipticError::NonPositive { node: i, value: v });
        }
        sup = sup.max(v);
        inf = inf.min(v);
    }
    let at_eval = h
        .value_at(eval_point)
        .ok_or_else(|| EllipticError::Point(eval_point.to_vec()))?;
    if !(at_eval > 0.0) {
        let node = grid.nearest_node(eval_point).unwrap_or(0);
        return Err(EllipticError::NonPositive { node, value: at_eval });
    }
    Ok(HarnackReport {
        sup,
        inf,
        at_eval,
        sup_ratio: sup / at_eval,
        quotient: sup / inf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubharmonicReport {
    pub min: f64,
    pub witness: usize,
    pub witness_point: Vec<f64>,
    /// Bound on the floating-point error of any single residual value.
    pub resolution: f64,
}

impl SubharmonicReport {
    /// Smallest `C >= 0` with `min >= -C h`, after discounting rounding.
    pub fn constant(&self, h: f64) -> f64 {
        (-self.min - self.resolution).max(0.0) / h
    }
}

/// Minimum over the grid-interior nodes of the discrete `div(A grad u)` of
/// the energy quadrature, `-(K u)_i / w_i`, where `K` is the Dirichlet
/// stiffness and `w_i` the node weight. This is the operator whose
/// Euler-Lagrange equation the minimiser satisfies, so at positive nodes it
/// equals `lambda gamma u^(gamma-1) / 2 >= 0` up to solver tolerance.
pub fn subharmonic_residual(
    u: &ScalarField,
    a: &CoefficientField,
) -> Result<SubharmonicReport, EllipticError> {
    let grid = u.grid();
    if a.grid() != grid {
        return Err(EllipticError::GridMismatch("coefficient"));
    }
    let st = Stiffness::assemble(a);
    let v = u.values();
    let w = st.width();
    let mut best = (f64::INFINITY, usize::MAX);
    let mut resolution: f64 = 0.0;
    for i in (0..grid.node_count()).filter(|&i| !grid.is_boundary(i)) {
        let (kii, b) = st.node_quadratic(i, v);
        let lu = -(kii * v[i] - 0.5 * b) / st.node_weight[i];
        if lu < best.0 {
            best = (lu, i);
        }
        let row = &st.rows[i * w..(i + 1) * w];
        let size: f64 = row
            .iter()
            .zip(&st.offsets)
            .map(|(&c, &o)| (c * v[(i as isize + o) as usize]).abs())
            .sum();
        resolution = resolution.max((w as f64 + 2.0) * f64::EPSILON * size / st.node_weight[i]);
    }
    if best.1 == usize::MAX {
        return Err(EllipticError::EmptyRegion);
    }
    Ok(SubharmonicReport {
        min: best.0,
        witness: best.1,
        witness_point: grid.coords(best.1)[..grid.dim()].to_vec(),
        resolution,
    })
}

/// `L u` at every grid-interior node (zero on the box boundary).
pub fn flux_operator(u: &ScalarField, a: &CoefficientField) -> Result<ScalarField, EllipticError> {
    let grid = u.grid();
    if a.grid() != grid {
        return Err(EllipticError::GridMismatch("coefficient"));
    }
    let values = (0..grid.node_count())
        .map(|i| {
            if grid.is_boundary(i) {
                0.0
            } else {
                apply_at(grid, a, u.values(), i)
            }
        })
        .collect();
    Ok(ScalarField::new(*grid, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CoefficientSpec, FieldSpec};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn constants_and_affine_are_reproduced() {
        let g = Grid::cube(2, 17).unwrap();
        let a = CoefficientSpec::Random { lo: 0.5, hi: 2.0, seed: 1 }.sample(&g, 0.5).unwrap();
        let u = ScalarField::new(g, vec![0.7; g.node_count()]).unwrap();
        let r = harmonic_replacement(&u, &a, &Ball::new(&[0.0, 0.0], 0.8).unwrap()).unwrap();
        assert!(r.h.values().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        let g1 = Grid::cube(1, 33).unwrap();
        let a1 = CoefficientField::identity(g1, 1.0).unwrap();
        let u1 = ScalarField::from_fn(g1, |x| if x[0] < 0.0 { 0.0 } else { 1.0 }).unwrap();
        let r1 = harmonic_replacement(&u1, &a1, &Ball::new(&[0.0], 1.0).unwrap()).unwrap();
        for i in 0..33 {
            let x = g1.coords(i)[0];
            assert!((r1.h.values()[i] - 0.5 * (x + 1.0)).abs() < 1e-12);
        }
    }

    /// Dense assembly of the same stencil, solved by LU.
    fn dense_oracle(u: &ScalarField, a: &CoefficientField, ball: &Ball) -> Vec<f64> {
        let g = u.grid();
        let nodes = region_interior(g, ball);
        let m = nodes.len();
        let pos = |i: usize| nodes.iter().position(|&k| k == i);
        let mut mat = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for (k, &i) in nodes.iter().enumerate() {
            let [x, y, _] = g.multi_index(i);
            for (j, axis) in [
                (g.index([x + 1, y, 0]), 0),
                (g.index([x - 1, y, 0]), 0),
                (g.index([x, y + 1, 0]), 1),
                (g.index([x, y - 1, 0]), 1),
            ] {
                let ai = a.matrix(i)[axis * 3];
                let aj = a.matrix(j)[axis * 3];
                let c = 2.0 * ai * aj / (ai + aj) / (g.spacing()[axis] * g.spacing()[axis]);
                mat[(k, k)] += c;
                match pos(j) {
                    Some(l) => mat[(k, l)] -= c,
                    None => rhs[k] += c * u.values()[j],
                }
            }
        }
        let sol = mat.lu().solve(&rhs).unwrap();
        let mut out = u.values().to_vec();
        for (k, &i) in nodes.iter().enumerate() {
            out[i] = sol[k];
        }
        out
    }

    #[test]
    fn matches_dense_lu() {
        let g = Grid::cube(2, 17).unwrap();
        for seed in 0..3 {
            let a = CoefficientSpec::Random { lo: 0.5, hi: 2.0, seed }.sample(&g, 0.5).unwrap();
            let u = FieldSpec::Random { lo: -1.0, hi: 1.0, seed: seed + 10 }.sample(&g).unwrap();
            let ball = Ball::new(&[0.0, 0.0], 0.9).unwrap();
            let r = harmonic_replacement(&u, &a, &ball).unwrap();
            assert!(r.converged);
            let oracle = dense_oracle(&u, &a, &ball);
            let err = r
                .h
                .values()
                .iter()
                .zip(&oracle)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "{err}");
            assert!(r.h.max() <= u.max() + 1e-12 && r.h.min() >= u.min() - 1e-12);
        }
    }

    #[test]
    fn preconditioned_agrees() {
        let g = Grid::cube(2, 17).unwrap();
        let a = CoefficientSpec::Checkerboard {
            first: vec![0.5, 2.0],
            second: vec![2.0, 0.5],
            side: 0.25,
        }
        .sample(&g, 0.5)
        .unwrap();
        let u = FieldSpec::Random { lo: 0.0, hi: 1.0, seed: 3 }.sample(&g).unwrap();
        let ball = Ball::new(&[0.0, 0.0], 1.0).unwrap();
        let plain = harmonic_replacement(&u, &a, &ball).unwrap();
        let pre = harmonic_replacement_with(
            &u,
            &a,
            &ball,
            &ReplacementOptions {
                preconditioner: true,
                ..Default::default()
            },
        )
        .unwrap();
        for (x, y) in plain.h.values().iter().zip(pre.h.values()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn harnack_examples() {
        let g = Grid::cube(1, 33).unwrap();
        let h = ScalarField::from_fn(g, |x| 1.0 + 0.5 * x[0]).unwrap();
        let r = harnack_quotient(&h, &Ball::new(&[0.0], 0.5).unwrap(), &[0.0]).unwrap();
        assert!((r.quotient - 5.0 / 3.0).abs() < 1e-14);
        assert!((r.sup_ratio - 1.25).abs() < 1e-14);
        let c = ScalarField::new(g, vec![2.0; 33]).unwrap();
        let r = harnack_quotient(&c, &Ball::new(&[0.0], 0.5).unwrap(), &[0.1]).unwrap();
        assert_eq!((r.quotient, r.sup_ratio), (1.0, 1.0));
        let z = ScalarField::from_fn(g, |x| x[0]).unwrap();
        assert!(harnack_quotient(&z, &Ball::new(&[0.0], 0.5).unwrap(), &[0.2]).is_err());
    }

    #[test]
    fn laplacian_of_square_norm() {
        let g = Grid::cube(2, 17).unwrap();
        let a = CoefficientField::identity(g, 1.0).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0] * x[0] + x[1] * x[1]).unwrap();
        let r = subharmonic_residual(&u, &a).unwrap();
        assert!((r.min - 4.0).abs() < 1e-10);
        let neg = ScalarField::from_fn(g, |x| -(x[0] * x[0] + x[1] * x[1])).unwrap();
        assert!((subharmonic_residual(&neg, &a).unwrap().min + 4.0).abs() < 1e-10);
    }

    #[test]
    fn anisotropic_quadratic() {
        let g = Grid::cube(2, 17).unwrap();
        let a = CoefficientField::constant(g, &[2.0, 0.5, 0.5, 1.0], 0.4).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0] * x[0] + x[0] * x[1]).unwrap();
        // tr(A Hess u) = 2 * 2 + 2 * 0.5 * 1
        let r = subharmonic_residual(&u, &a).unwrap();
        assert!((r.min - 5.0).abs() < 1e-10, "{}", r.min);
    }

    #[test]
    fn deficit_of_harmonic_field_vanishes() {
        let g = Grid::cube(2, 17).unwrap();
        let a = CoefficientField::identity(g, 1.0).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0] * x[0] - x[1] * x[1] + x[0]).unwrap();
        let ball = Ball::new(&[0.0, 0.0], 0.9).unwrap();
        let r = harmonic_replacement(&u, &a, &ball).unwrap();
        assert!(replacement_deficit(&u, &r.h, &ball).unwrap() < 1e-20);
    }
}
