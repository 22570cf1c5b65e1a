use serde::{Deserialize, Serialize};

use super::FieldError;

/// Maximum supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Tensor-product grid of nodes on an axis-aligned box.
///
/// Nodes are stored row-major: the last axis varies fastest. Axes beyond
/// `dim` are padded with a single node so that every grid can be addressed
/// with three-component multi-indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    nodes: [usize; MAX_DIM],
    lower: [f64; MAX_DIM],
    spacing: [f64; MAX_DIM],
}

impl Grid {
    /// Grid with `nodes_per_axis[d]` nodes spanning `[lower[d], upper[d]]`.
    pub fn new(nodes_per_axis: &[usize], lower: &[f64], upper: &[f64]) -> Result<Self, FieldError> {
        let dim = nodes_per_axis.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(FieldError::UnsupportedDimension(dim));
        }
        if lower.len() != dim || upper.len() != dim {
            return Err(FieldError::InvalidGrid(format!(
                "expected {dim} bounds per side, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        let mut nodes = [1; MAX_DIM];
        let mut lo = [0.0; MAX_DIM];
        let mut spacing = [1.0; MAX_DIM];
        for d in 0..dim {
            if nodes_per_axis[d] < 3 {
                return Err(FieldError::InvalidGrid(format!(
                    "axis {d} has {} nodes, need at least 3",
                    nodes_per_axis[d]
                )));
            }
            let extent = upper[d] - lower[d];
            if !(extent.is_finite() && extent > 0.0 && lower[d].is_finite()) {
                return Err(FieldError::InvalidGrid(format!(
                    "axis {d} has degenerate extent [{}, {}]",
                    lower[d], upper[d]
                )));
            }
            nodes[d] = nodes_per_axis[d];
            lo[d] = lower[d];
            spacing[d] = extent / (nodes_per_axis[d] - 1) as f64;
        }
        Ok(Self {
            dim,
            nodes,
            lower: lo,
            spacing,
        })
    }

    /// Canonical box `[-1, 1]^dim` with `n` nodes on every axis.
    pub fn cube(dim: usize, n: usize) -> Result<Self, FieldError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(FieldError::UnsupportedDimension(dim));
        }
        Self::new(&vec![n; dim], &vec![-1.0; dim], &vec![1.0; dim])
    }

    pub(crate) fn from_parts(
        dim: usize,
        nodes_per_axis: &[usize],
        lower: &[f64],
        spacing: &[f64],
    ) -> Result<Self, FieldError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(FieldError::UnsupportedDimension(dim));
        }
        if nodes_per_axis.len() != dim || lower.len() != dim || spacing.len() != dim {
            return Err(FieldError::InvalidGrid("header arity mismatch".into()));
        }
        let upper: Vec<f64> = (0..dim)
            .map(|d| lower[d] + spacing[d] * (nodes_per_axis[d] - 1) as f64)
            .collect();
        let mut grid = Self::new(nodes_per_axis, lower, &upper)?;
        // keep the stored spacing verbatim so dumps reproduce bit-exactly
        grid.spacing[..dim].copy_from_slice(spacing);
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.lower[axis] + self.spacing[axis] * (self.nodes[axis] - 1) as f64
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing().iter().copied().fold(0.0, f64::max)
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn cell_count(&self) -> usize {
        self.nodes[..self.dim].iter().map(|n| n - 1).product()
    }

    /// Volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub(crate) fn strides(&self) -> [usize; MAX_DIM] {
        [self.nodes[1] * self.nodes[2], self.nodes[2], 1]
    }

    pub fn index(&self, multi: [usize; MAX_DIM]) -> usize {
        let s = self.strides();
        multi[0] * s[0] + multi[1] * s[1] + multi[2] * s[2]
    }

    pub fn multi_index(&self, index: usize) -> [usize; MAX_DIM] {
        let s = self.strides();
        [index / s[0], (index % s[0]) / s[1], index % s[1]]
    }

    /// Coordinates of a node; unused trailing components are zero.
    pub fn coords(&self, index: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(index);
        let mut x = [0.0; MAX_DIM];
        for d in 0..self.dim {
            x[d] = self.lower[d] + m[d] as f64 * self.spacing[d];
        }
        x
    }

    /// True when the node lies on the boundary of the box.
    pub fn is_boundary(&self, index: usize) -> bool {
        let m = self.multi_index(index);
        (0..self.dim).any(|d| m[d] == 0 || m[d] + 1 == self.nodes[d])
    }

    /// Neighbour across `axis` in direction `forward`, if it exists.
    pub fn neighbor(&self, index: usize, axis: usize, forward: bool) -> Option<usize> {
        let m = self.multi_index(index);
        let s = self.strides()[axis];
        if forward {
            (m[axis] + 1 < self.nodes[axis]).then(|| index + s)
        } else {
            (m[axis] > 0).then(|| index - s)
        }
    }

    /// Index of the lowest corner of every cell, in row-major cell order.
    pub fn cell_origins(&self) -> impl Iterator<Item = usize> + '_ {
        let cells: [usize; MAX_DIM] =
            std::array::from_fn(|d| if d < self.dim { self.nodes[d] - 1 } else { 1 });
        (0..cells[0]).flat_map(move |i| {
            (0..cells[1]).flat_map(move |j| (0..cells[2]).map(move |k| self.index([i, j, k])))
        })
    }

    /// Node indices of the `2^dim` corners of the cell whose lowest corner is
    /// `origin`; corner `c` is offset by one node along every axis `d` with
    /// bit `d` of `c` set.
    pub fn cell_corners(&self, origin: usize) -> Vec<usize> {
        let s = self.strides();
        (0..1usize << self.dim)
            .map(|c| {
                (0..self.dim)
                    .filter(|d| c >> d & 1 == 1)
                    .fold(origin, |acc, d| acc + s[d])
            })
            .collect()
    }

    pub fn cell_center(&self, origin: usize) -> [f64; MAX_DIM] {
        let mut x = self.coords(origin);
        for d in 0..self.dim {
            x[d] += 0.5 * self.spacing[d];
        }
        x
    }

    /// Whether `point` lies in the closed box (with a relative slack of 1e-12).
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim
            && (0..self.dim).all(|d| {
                let slack = 1e-12 * self.spacing[d];
                point[d] >= self.lower[d] - slack && point[d] <= self.upper(d) + slack
            })
    }

    /// Distance from an interior point to the boundary of the box.
    pub fn distance_to_boundary(&self, point: &[f64]) -> f64 {
        (0..self.dim)
            .map(|d| (point[d] - self.lower[d]).min(self.upper(d) - point[d]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Locate `point` for multilinear interpolation: per-axis lower node and
    /// fractional offset. Offsets within 1e-10 cells of a node snap onto it so
    /// that coincident grids resample bit-exactly.
    pub(crate) fn locate(&self, point: &[f64]) -> Option<([usize; MAX_DIM], [f64; MAX_DIM])> {
        if !self.contains(point) {
            return None;
        }
        let mut base = [0; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for d in 0..self.dim {
            let s = (point[d] - self.lower[d]) / self.spacing[d];
            let r = s.round();
            let s = if (s - r).abs() <= 1e-10 { r } else { s };
            let last = (self.nodes[d] - 1) as f64;
            let s = s.clamp(0.0, last);
            let i = (s.floor() as usize).min(self.nodes[d] - 2);
            base[d] = i;
            frac[d] = s - i as f64;
        }
        Some((base, frac))
    }

    /// Multilinear interpolation of node values at `point`.
    pub fn interpolate(&self, values: &[f64], point: &[f64]) -> Option<f64> {
        let (base, frac) = self.locate(point)?;
        let origin = self.index(base);
        let corners = self.cell_corners(origin);
        let mut acc = 0.0;
        for (c, &node) in corners.iter().enumerate() {
            let mut w = 1.0;
            for d in 0..self.dim {
                w *= if c >> d & 1 == 1 { frac[d] } else { 1.0 - frac[d] };
            }
            if w != 0.0 {
                acc += w * values[node];
            }
        }
        Some(acc)
    }

    /// Interpolation weights at `point` as (node, weight) pairs with non-zero weight.
    pub(crate) fn interpolation_weights(&self, point: &[f64]) -> Option<Vec<(usize, f64)>> {
        let (base, frac) = self.locate(point)?;
        let origin = self.index(base);
        let weights = self
            .cell_corners(origin)
            .into_iter()
            .enumerate()
            .filter_map(|(c, node)| {
                let w: f64 = (0..self.dim)
                    .map(|d| if c >> d & 1 == 1 { frac[d] } else { 1.0 - frac[d] })
                    .product();
                (w != 0.0).then_some((node, w))
            })
            .collect();
        Some(weights)
    }

    /// Node nearest to `point`.
    pub fn nearest_node(&self, point: &[f64]) -> Option<usize> {
        if !self.contains(point) {
            return None;
        }
        let mut m = [0; MAX_DIM];
        for d in 0..self.dim {
            let s = ((point[d] - self.lower[d]) / self.spacing[d]).round();
            m[d] = (s.max(0.0) as usize).min(self.nodes[d] - 1);
        }
        Some(self.index(m))
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self == other
    }
}

/// Euclidean distance between two points given in padded form.
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn pad(point: &[f64]) -> [f64; MAX_DIM] {
    let mut p = [0.0; MAX_DIM];
    p[..point.len()].copy_from_slice(point);
    p
}

/// Closed Euclidean ball `B_r(x0)`; realised on a grid as the set of nodes
/// with `|x - x0| <= r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: &[f64], radius: f64) -> Result<Self, FieldError> {
        if !(radius.is_finite() && radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
            return Err(FieldError::InvalidBall(format!(
                "center {center:?}, radius {radius}"
            )));
        }
        Ok(Self {
            center: center.to_vec(),
            radius,
        })
    }

    /// Check that the ball is inside the box of `grid`.
    pub fn check_inside(&self, grid: &Grid) -> Result<(), FieldError> {
        if self.center.len() != grid.dim() {
            return Err(FieldError::InvalidBall(format!(
                "center has {} components on a {}-d grid",
                self.center.len(),
                grid.dim()
            )));
        }
        let slack = 1e-12 * grid.max_spacing();
        if !grid.contains(&self.center) || grid.distance_to_boundary(&self.center) + slack < self.radius {
            return Err(FieldError::InvalidBall(format!(
                "B_{}({:?}) leaves the grid box",
                self.radius, self.center
            )));
        }
        Ok(())
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        let c = pad(&self.center);
        distance(&c, &pad(x)) <= self.radius * (1.0 + 1e-12)
    }

    /// Node indices inside the ball, ascending.
    pub fn nodes(&self, grid: &Grid) -> Vec<usize> {
        let c = pad(&self.center);
        (0..grid.node_count())
            .filter(|&i| distance(&c, &grid.coords(i)) <= self.radius * (1.0 + 1e-12))
            .collect()
    }

    /// Cells whose centre lies in the ball.
    pub fn contains_cell(&self, grid: &Grid, origin: usize) -> bool {
        distance(&pad(&self.center), &grid.cell_center(origin)) <= self.radius * (1.0 + 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_counts() {
        let g = Grid::new(&[5, 9], &[-1.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(g.spacing(), &[0.5, 0.25]);
        assert_eq!(g.node_count(), 45);
        assert_eq!(g.cell_count(), 32);
        assert_eq!(g.cell_origins().count(), 32);
        assert_eq!(g.coords(g.index([4, 8, 0])), [1.0, 2.0, 0.0]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(&[2], &[0.0], &[1.0]).is_err());
        assert!(Grid::new(&[5], &[1.0], &[1.0]).is_err());
        assert!(Grid::new(&[3, 3, 3, 3], &[0.0; 4], &[1.0; 4]).is_err());
    }

    #[test]
    fn multi_index_roundtrip() {
        let g = Grid::cube(3, 4).unwrap();
        for i in 0..g.node_count() {
            assert_eq!(g.index(g.multi_index(i)), i);
        }
    }

    #[test]
    fn corners_of_2d_cell() {
        let g = Grid::cube(2, 3).unwrap();
        assert_eq!(g.cell_corners(0), vec![0, 3, 1, 4]);
    }

    #[test]
    fn interpolation_is_exact_for_affine() {
        let g = Grid::cube(2, 5).unwrap();
        let v: Vec<f64> = (0..g.node_count())
            .map(|i| {
                let x = g.coords(i);
                1.0 + 2.0 * x[0] - 0.5 * x[1]
            })
            .collect();
        let y = g.interpolate(&v, &[0.3, -0.7]).unwrap();
        assert!((y - (1.0 + 0.6 + 0.35)).abs() < 1e-14);
        // node values are reproduced bit-exactly
        for i in 0..g.node_count() {
            let x = g.coords(i);
            assert_eq!(g.interpolate(&v, &x[..2]).unwrap(), v[i]);
        }
    }

    #[test]
    fn ball_membership() {
        let g = Grid::cube(1, 5).unwrap();
        let b = Ball::new(&[0.0], 0.5).unwrap();
        assert_eq!(b.nodes(&g), vec![1, 2, 3]);
        assert!(b.check_inside(&g).is_ok());
        assert!(Ball::new(&[0.8], 0.5).unwrap().check_inside(&g).is_err());
    }
}
