//! Discrete energy
//!
//! ```text
//! E(u) = sum_cells vol * [ sum_d A_dd * mean_edges((du/h_d)^2) + sum_{d != e} A_de g_d g_e ]
//!      + sum_cells sum_corners vol / 2^n * lambda u^gamma [u > 0]
//! ```
//!
//! where `A` is the arithmetic mean of the corner matrices of a cell and
//! `g` its centre gradient. For affine `u` the edge means equal `g_d^2`, so
//! the Dirichlet part is exact; for other `u` the edge means dominate `g_d^2`
//! and suppress the hourglass modes a one-point gradient rule would leave
//! unpenalised. Every part is a sum over cells, so energies of disjoint cell
//! sets add up exactly.

mod scaling;

pub use scaling::{rescale_growth, scale_local, scale_local_on, ScaledProblem, ScalingParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{
    Ball, CoefficientField, ExponentField, FieldError, ForcingField, Grid, ScalarField,
};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("{0} lives on a different grid")]
    GridMismatch(&'static str),
    #[error("region escapes the grid: {0}")]
    Region(String),
    #[error("scaling parameter out of range: {0}")]
    Scaling(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Integration region: the whole box or the cells whose centre lies in a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Whole,
    Ball(Ball),
}

impl Region {
    pub fn label(&self) -> String {
        match self {
            Region::Whole => "whole".into(),
            Region::Ball(b) => {
                let c: Vec<String> = b.center.iter().map(|v| v.to_string()).collect();
                format!("ball[{}; {}]", c.join(" "), b.radius)
            }
        }
    }

    fn check(&self, grid: &Grid) -> Result<(), EnergyError> {
        if let Region::Ball(b) = self {
            b.check_inside(grid)
                .map_err(|e| EnergyError::Region(e.to_string()))?;
        }
        Ok(())
    }

    fn has_cell(&self, grid: &Grid, origin: usize) -> bool {
        match self {
            Region::Whole => true,
            Region::Ball(b) => b.contains_cell(grid, origin),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub region: String,
    pub dirichlet: f64,
    pub singular: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub const CSV_HEADER: &'static str = "region,dirichlet,singular,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.region, self.dirichlet, self.singular, self.total
        )
    }
}

/// Coefficient, forcing and exponent fields on one grid, with the
/// coefficient validated against its ellipticity window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub coefficient: CoefficientField,
    pub forcing: ForcingField,
    pub exponent: ExponentField,
}

impl Problem {
    pub fn new(
        coefficient: CoefficientField,
        forcing: ForcingField,
        exponent: ExponentField,
    ) -> Result<Self, EnergyError> {
        let grid = *coefficient.grid();
        if *forcing.grid() != grid {
            return Err(EnergyError::GridMismatch("forcing"));
        }
        if *exponent.grid() != grid {
            return Err(EnergyError::GridMismatch("exponent"));
        }
        coefficient.validate()?;
        Ok(Self {
            coefficient,
            forcing,
            exponent,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.coefficient.grid()
    }

    /// Same problem with forcing multiplied by `s`.
    pub fn with_forcing_scaled(&self, s: f64) -> Result<Self, EnergyError> {
        Ok(Self {
            coefficient: self.coefficient.clone(),
            forcing: self.forcing.scaled(s)?,
            exponent: self.exponent.clone(),
        })
    }

    pub fn energy(&self, u: &ScalarField, region: &Region) -> Result<EnergyBreakdown, EnergyError> {
        energy(u, &self.coefficient, &self.forcing, &self.exponent, region)
    }
}

/// Arithmetic mean of the corner matrices of a cell.
pub(crate) fn cell_matrix(a: &CoefficientField, corners: &[usize], out: &mut [f64]) {
    out.fill(0.0);
    for &c in corners {
        for (o, v) in out.iter_mut().zip(a.matrix(c)) {
            *o += v;
        }
    }
    let inv = 1.0 / corners.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Local stiffness matrix (row-major, `2^n x 2^n`) of one cell with cell
/// matrix `a_cell`, so that the Dirichlet energy of the cell is `u^T K u`.
pub(crate) fn cell_stiffness(grid: &Grid, a_cell: &[f64], out: &mut [f64]) {
    let n = grid.dim();
    let m = 1usize << n;
    let h = grid.spacing();
    let vol = grid.cell_volume();
    let half = (1usize << (n - 1)) as f64;
    out.fill(0.0);
    for d in 0..n {
        let w = vol * a_cell[d * n + d] / (half * h[d] * h[d]);
        for c in (0..m).filter(|c| c >> d & 1 == 0) {
            let hi = c | 1 << d;
            out[c * m + c] += w;
            out[hi * m + hi] += w;
            out[c * m + hi] -= w;
            out[hi * m + c] -= w;
        }
    }
    if n > 1 {
        let mut g = vec![0.0; n * m];
        for d in 0..n {
            let s = 1.0 / (half * h[d]);
            for c in (0..m).filter(|c| c >> d & 1 == 1) {
                g[d * m + c] += s;
                g[d * m + (c ^ 1 << d)] -= s;
            }
        }
        for d in 0..n {
            for e in (0..n).filter(|&e| e != d) {
                let coef = vol * a_cell[d * n + e];
                if coef == 0.0 {
                    continue;
                }
                for p in 0..m {
                    let gp = g[d * m + p];
                    if gp == 0.0 {
                        continue;
                    }
                    for q in 0..m {
                        out[p * m + q] += coef * gp * g[e * m + q];
                    }
                }
            }
        }
    }
}

fn quadratic_form(k: &[f64], x: &[f64]) -> f64 {
    let m = x.len();
    let mut acc = 0.0;
    for p in 0..m {
        let mut row = 0.0;
        for q in 0..m {
            row += k[p * m + q] * x[q];
        }
        acc += x[p] * row;
    }
    acc
}

/// Singular integrand `lambda u^gamma` gated by `u > 0`.
#[inline]
pub(crate) fn singular_density(u: f64, lambda: f64, gamma: f64) -> f64 {
    if u > 0.0 && lambda != 0.0 {
        lambda * u.powf(gamma)
    } else {
        0.0
    }
}

/// Evaluate the discrete energy of `u` over `region`.
pub fn energy(
    u: &ScalarField,
    a: &CoefficientField,
    lam: &ForcingField,
    gam: &ExponentField,
    region: &Region,
) -> Result<EnergyBreakdown, EnergyError> {
    let grid = u.grid();
    if a.grid() != grid {
        return Err(EnergyError::GridMismatch("coefficient"));
    }
    if lam.grid() != grid {
        return Err(EnergyError::GridMismatch("forcing"));
    }
    if gam.grid() != grid {
        return Err(EnergyError::GridMismatch("exponent"));
    }
    region.check(grid)?;
    let n = grid.dim();
    let m = 1usize << n;
    let vol = grid.cell_volume();
    let corner_weight = vol / m as f64;
    let mut a_cell = vec![0.0; n * n];
    let mut k = vec![0.0; m * m];
    let mut local = vec![0.0; m];
    let (uv, lv, gv) = (u.values(), lam.values(), gam.values());
    let mut dirichlet = 0.0;
    let mut singular = 0.0;
    for origin in grid.cell_origins() {
        if !region.has_cell(grid, origin) {
            continue;
        }
        let corners = grid.cell_corners(origin);
        cell_matrix(a, &corners, &mut a_cell);
        cell_stiffness(grid, &a_cell, &mut k);
        for (l, &c) in local.iter_mut().zip(&corners) {
            *l = uv[c];
        }
        dirichlet += quadratic_form(&k, &local);
        for &c in &corners {
            singular += corner_weight * singular_density(uv[c], lv[c], gv[c]);
        }
    }
    Ok(EnergyBreakdown {
        region: region.label(),
        dirichlet,
        singular,
        total: dirichlet + singular,
    })
}

/// Global stiffness in stencil form: row `i` stores the coefficients of the
/// `3^n` neighbours `i + offset`, with zero entries for missing neighbours.
#[derive(Debug, Clone)]
pub(crate) struct Stiffness {
    pub offsets: Vec<isize>,
    pub rows: Vec<f64>,
    pub center: usize,
    /// Node weight of the singular term (sum of `vol / 2^n` over incident cells).
    pub node_weight: Vec<f64>,
}

impl Stiffness {
    pub fn assemble(a: &CoefficientField) -> Self {
        let grid = a.grid();
        let n = grid.dim();
        let m = 1usize << n;
        let width = 3usize.pow(n as u32);
        let strides = grid.strides();
        let offsets: Vec<isize> = (0..width)
            .map(|code| {
                let mut rem = code;
                let mut off = 0isize;
                for d in 0..n {
                    let delta = (rem % 3) as isize - 1;
                    rem /= 3;
                    off += delta * strides[d] as isize;
                }
                off
            })
            .collect();
        let center = (width - 1) / 2;
        let code = |p: usize, q: usize| -> usize {
            // offset code of corner q relative to corner p
            (0..n)
                .map(|d| {
                    let delta = (q >> d & 1) as isize - (p >> d & 1) as isize;
                    (delta + 1) as usize * 3usize.pow(d as u32)
                })
                .sum()
        };
        let mut rows = vec![0.0; grid.node_count() * width];
        let mut node_weight = vec![0.0; grid.node_count()];
        let corner_weight = grid.cell_volume() / m as f64;
        let mut a_cell = vec![0.0; n * n];
        let mut k = vec![0.0; m * m];
        for origin in grid.cell_origins() {
            let corners = grid.cell_corners(origin);
            cell_matrix(a, &corners, &mut a_cell);
            cell_stiffness(grid, &a_cell, &mut k);
            for p in 0..m {
                node_weight[corners[p]] += corner_weight;
                for q in 0..m {
                    rows[corners[p] * width + code(p, q)] += k[p * m + q];
                }
            }
        }
        Self {
            offsets,
            rows,
            center,
            node_weight,
        }
    }

    pub fn width(&self) -> usize {
        self.offsets.len()
    }

    /// Diagonal entry `K_ii` and the linear coefficient `b_i = -2 sum_{j != i} K_ij u_j`
    /// of the one-node restriction `K_ii t^2 - b_i t + const`.
    #[inline]
    pub fn node_quadratic(&self, i: usize, u: &[f64]) -> (f64, f64) {
        let w = self.width();
        let row = &self.rows[i * w..(i + 1) * w];
        let mut off = 0.0;
        for (k, (&c, &o)) in row.iter().zip(&self.offsets).enumerate() {
            if k != self.center && c != 0.0 {
                off += c * u[(i as isize + o) as usize];
            }
        }
        (row[self.center], -2.0 * off)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldSpec;

    fn unit_line(n: usize) -> Grid {
        Grid::new(&[n], &[0.0], &[1.0]).unwrap()
    }

    fn problem(grid: Grid, lambda: f64, gamma: f64) -> Problem {
        Problem::new(
            CoefficientField::identity(grid, 1.0).unwrap(),
            ForcingField::constant(grid, lambda).unwrap(),
            ExponentField::constant(grid, gamma).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let g = Grid::cube(2, 9).unwrap();
        let p = problem(g, 1.0, 0.0);
        let e = p.energy(&ScalarField::zeros(g), &Region::Whole).unwrap();
        assert_eq!((e.dirichlet, e.singular, e.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn affine_dirichlet_is_exact() {
        let g = unit_line(17);
        let p = problem(g, 0.0, 1.0);
        let u = ScalarField::from_fn(g, |x| x[0]).unwrap();
        let e = p.energy(&u, &Region::Whole).unwrap();
        assert!((e.dirichlet - 1.0).abs() < 1e-14);
        assert_eq!(e.singular, 0.0);
    }

    #[test]
    fn constant_singular_term() {
        let g = unit_line(9);
        let p = problem(g, 1.0, 1.0);
        let c = 0.375;
        let u = ScalarField::new(g, vec![c; 9]).unwrap();
        let e = p.energy(&u, &Region::Whole).unwrap();
        assert_eq!(e.dirichlet, 0.0);
        assert_eq!(e.singular, c);
        assert_eq!(e.total, c);
    }

    #[test]
    fn affine_2d_with_anisotropic_matrix() {
        let g = Grid::cube(2, 9).unwrap();
        let a = CoefficientField::constant(g, &[2.0, 0.5, 0.5, 1.0], 0.4).unwrap();
        let p = Problem::new(
            a,
            ForcingField::constant(g, 0.0).unwrap(),
            ExponentField::constant(g, 1.0).unwrap(),
        )
        .unwrap();
        let u = ScalarField::from_fn(g, |x| 3.0 * x[0] - x[1]).unwrap();
        // <A g, g> = 2*9 + 2*0.5*(3)(-1) + 1 = 16 over area 4
        let e = p.energy(&u, &Region::Whole).unwrap();
        assert!((e.dirichlet - 64.0).abs() < 1e-11, "{}", e.dirichlet);
    }

    #[test]
    fn checkerboard_mode_is_penalised() {
        let g = Grid::cube(2, 9).unwrap();
        let p = problem(g, 0.0, 1.0);
        let u = ScalarField::from_fn(g, |x| {
            let i = ((x[0] + 1.0) * 4.0).round() as i64;
            let j = ((x[1] + 1.0) * 4.0).round() as i64;
            if (i + j) % 2 == 0 { 1.0 } else { -1.0 }
        })
        .unwrap();
        assert!(p.energy(&u, &Region::Whole).unwrap().dirichlet > 1.0);
    }

    #[test]
    fn regions_add_up() {
        let g = Grid::cube(2, 17).unwrap();
        let p = problem(g, 1.5, 0.5);
        let u = FieldSpec::Random { lo: 0.0, hi: 1.0, seed: 4 }.sample(&g).unwrap();
        let whole = p.energy(&u, &Region::Whole).unwrap();
        let ball = Region::Ball(Ball::new(&[0.0, 0.0], 0.6).unwrap());
        let inner = p.energy(&u, &ball).unwrap();
        // complement computed cell by cell
        let mut outer = 0.0;
        let m = 4;
        let mut ac = vec![0.0; 4];
        let mut k = vec![0.0; 16];
        let b = Ball::new(&[0.0, 0.0], 0.6).unwrap();
        for origin in g.cell_origins() {
            if b.contains_cell(&g, origin) {
                continue;
            }
            let corners = g.cell_corners(origin);
            cell_matrix(&p.coefficient, &corners, &mut ac);
            cell_stiffness(&g, &ac, &mut k);
            let loc: Vec<f64> = corners.iter().map(|&c| u.values()[c]).collect();
            outer += quadratic_form(&k, &loc);
            for &c in &corners {
                outer += g.cell_volume() / m as f64 * singular_density(u.values()[c], 1.5, 0.5);
            }
        }
        assert!((inner.total + outer - whole.total).abs() < 1e-12 * whole.total);
    }

    #[test]
    fn grid_mismatch_and_region_errors() {
        let g = Grid::cube(1, 9).unwrap();
        let p = problem(g, 1.0, 1.0);
        let other = ScalarField::zeros(Grid::cube(1, 11).unwrap());
        assert!(matches!(
            p.energy(&other, &Region::Whole),
            Err(EnergyError::GridMismatch(_))
        ));
        let u = ScalarField::zeros(g);
        let outside = Region::Ball(Ball::new(&[0.9], 0.5).unwrap());
        assert!(matches!(p.energy(&u, &outside), Err(EnergyError::Region(_))));
    }

    #[test]
    fn stiffness_matches_energy() {
        let g = Grid::cube(2, 7).unwrap();
        let a = crate::field::CoefficientSpec::Random { lo: 0.6, hi: 1.6, seed: 3 }
            .sample(&g, 0.5)
            .unwrap();
        let st = Stiffness::assemble(&a);
        let u = FieldSpec::Random { lo: -1.0, hi: 1.0, seed: 5 }.sample(&g).unwrap();
        let p = Problem::new(
            a,
            ForcingField::constant(g, 0.0).unwrap(),
            ExponentField::constant(g, 1.0).unwrap(),
        )
        .unwrap();
        let e0 = p.energy(&u, &Region::Whole).unwrap().dirichlet;
        // perturb one interior node and compare the predicted quadratic
        let i = g.index([3, 2, 0]);
        let (aa, bb) = st.node_quadratic(i, u.values());
        let mut v = u.values().to_vec();
        let t0 = v[i];
        v[i] = t0 + 0.3;
        let e1 = p
            .energy(&ScalarField::new(g, v).unwrap(), &Region::Whole)
            .unwrap()
            .dirichlet;
        let q = |t: f64| aa * t * t - bb * t;
        assert!(((e1 - e0) - (q(t0 + 0.3) - q(t0))).abs() < 1e-12);
        assert!((st.node_weight.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    }
}
