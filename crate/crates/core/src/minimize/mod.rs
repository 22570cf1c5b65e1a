//! Nonlinear Gauss-Seidel minimisation of the discrete energy over fields
//! that agree with `phi` on the box boundary.
//!
//! Every node update is an exact one-dimensional minimisation, optionally
//! over-relaxed; a relaxed value is kept only when it does not raise the
//! node restriction above its previous value, so each sweep is monotone.

mod node;

pub use node::{node_energy, node_energy_change, node_solve, node_solve_bounded};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{singular_density, EnergyError, Problem, Stiffness};
use crate::field::ScalarField;

#[derive(Debug, Error)]
pub enum MinimizeError {
    #[error("boundary datum is negative ({value}) at node {node}")]
    NegativeBoundary { node: usize, value: f64 },
    #[error("invalid options: {0}")]
    Options(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Over-relaxation factor of the sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Relaxation {
    /// `2 / (1 + sin(pi / (N - 1)))` with `N` the largest node count per axis.
    Auto,
    /// Plain Gauss-Seidel.
    None,
    Fixed { omega: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeOptions {
    pub max_sweeps: usize,
    /// Relative energy decrease below which a sweep counts as stalled.
    pub tol_energy: f64,
    pub tol_node: f64,
    pub seed: u64,
    /// Shuffle the node order of every sweep (seeded).
    pub shuffle: bool,
    /// Restrict iterates to `[0, max phi]`.
    pub clamp: bool,
    /// Number of starting fields: constant `max phi`, zero, then seeded random.
    pub starts: usize,
    pub relaxation: Relaxation,
    /// Consecutive stalled sweeps that end a phase.
    pub stall_sweeps: usize,
    /// Passes of free-boundary moves after convergence (0 disables them).
    pub move_passes: usize,
    /// Half-width, in nodes, of the window relaxed around a moved node in
    /// one dimension; higher dimensions use a window of about as many nodes.
    pub move_radius: usize,
    /// Cap on local sweeps per phase of a move.
    pub move_sweeps: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 100_000,
            tol_energy: 1e-12,
            tol_node: 1e-12,
            seed: 0,
            shuffle: false,
            clamp: true,
            starts: 2,
            relaxation: Relaxation::Auto,
            stall_sweeps: 3,
            move_passes: 50,
            move_radius: 32,
            move_sweeps: 60,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<(), MinimizeError> {
        let bad = |m: &str| Err(MinimizeError::Options(m.into()));
        if self.max_sweeps < 1 {
            return bad("max_sweeps must be at least 1");
        }
        if !(self.tol_energy > 0.0 && self.tol_node > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.starts < 1 || self.stall_sweeps < 1 {
            return bad("starts and stall_sweeps must be at least 1");
        }
        if let Relaxation::Fixed { omega } = self.relaxation {
            if !(omega > 0.0 && omega < 2.0) {
                return bad("relaxation factor must lie in (0, 2)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Upper,
    Zero,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start: usize,
    pub kind: StartKind,
    pub energy: f64,
    pub sweeps_used: usize,
    pub converged: bool,
    pub interface_moves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeReport {
    pub sweeps_used: usize,
    /// Total energy of the initial field followed by one entry per accepted sweep.
    pub energy_trace: Vec<f64>,
    pub final_delta: f64,
    /// Nodes held at the upper bound `max phi` in the last sweep.
    pub clamped_nodes: usize,
    pub converged: bool,
    pub relaxation: f64,
    pub upper_bound: f64,
    /// Index of the start that produced the returned field.
    pub best_start: usize,
    pub starts: Vec<StartOutcome>,
    /// Accepted free-boundary moves.
    pub interface_moves: usize,
}

impl MinimizeReport {
    pub const CSV_HEADER: &'static str =
        "sweeps_used,final_energy,final_delta,clamped_nodes,converged,best_start";

    pub fn final_energy(&self) -> f64 {
        *self.energy_trace.last().expect("trace holds the initial energy")
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.sweeps_used,
            self.final_energy(),
            self.final_delta,
            self.clamped_nodes,
            self.converged,
            self.best_start
        )
    }
}

fn total_energy(st: &Stiffness, p: &Problem, u: &[f64]) -> f64 {
    let lam = p.forcing.values();
    let gam = p.exponent.values();
    let w = st.width();
    let mut dirichlet = 0.0;
    let mut singular = 0.0;
    for i in 0..u.len() {
        let row = &st.rows[i * w..(i + 1) * w];
        let mut acc = 0.0;
        for (&c, &o) in row.iter().zip(&st.offsets) {
            if c != 0.0 {
                acc += c * u[(i as isize + o) as usize];
            }
        }
        dirichlet += u[i] * acc;
        singular += st.node_weight[i] * singular_density(u[i], lam[i], gam[i]);
    }
    dirichlet + singular
}

/// Relative energy increase attributed to rounding when a sweep is undone.
const ROUNDING: f64 = 1e-13;

struct Run {
    u: Vec<f64>,
    trace: Vec<f64>,
    sweeps: usize,
    final_delta: f64,
    clamped: usize,
    converged: bool,
    moves: usize,
}

struct Setup<'a> {
    p: &'a Problem,
    st: &'a Stiffness,
    interior: &'a [usize],
    upper: f64,
    omega: f64,
    opts: &'a MinimizeOptions,
}

impl Setup<'_> {
    #[inline]
    fn update(&self, u: &mut [f64], i: usize, omega: f64) -> f64 {
        let lam = self.p.forcing.values();
        let gam = self.p.exponent.values();
        let (a, b) = self.st.node_quadratic(i, u);
        let w = self.st.node_weight[i];
        let old = u[i];
        let exact = node_solve_bounded(a, b, w, lam[i], gam[i], self.upper);
        let mut new = exact;
        if omega != 1.0 {
            let relaxed = (old + omega * (exact - old)).clamp(0.0, self.upper);
            let c = lam[i] * w;
            if node_energy_change(a, b, c, gam[i], old, relaxed) <= 0.0 {
                new = relaxed;
            }
        }
        u[i] = new;
        new
    }

    /// Returns the number of changed nodes, the number at the upper bound
    /// and the largest change.
    fn sweep(&self, u: &mut [f64], order: &[usize], omega: f64) -> (usize, usize, f64) {
        let mut changed = 0;
        let mut at_bound = 0;
        let mut largest: f64 = 0.0;
        for &i in order {
            let old = u[i];
            let new = self.update(u, i, omega);
            if new != old {
                changed += 1;
                largest = largest.max((new - old).abs());
            }
            if new == self.upper {
                at_bound += 1;
            }
        }
        (changed, at_bound, largest)
    }

    /// Over-relaxed sweeps until the energy stalls, plain sweeps until it
    /// stalls again, then over-relaxed sweeps until no node moves by more
    /// than `tol_node`. Returns whether the stopping rule was met.
    ///
    /// Once the energy is flat to rounding, a sweep whose recomputed total
    /// is higher by no more than rounding is kept but not traced.
    fn relax(&self, run: &mut Run, order: &mut [usize], rng: &mut ChaCha8Rng) -> bool {
        let opts = self.opts;
        let mut energy = *run.trace.last().expect("non-empty trace");
        let mut omega = self.omega;
        let mut stall = 0;
        let mut polish = false;
        let mut previous = run.u.clone();
        while run.sweeps < opts.max_sweeps {
            run.sweeps += 1;
            if opts.shuffle {
                order.shuffle(rng);
            }
            previous.copy_from_slice(&run.u);
            let (changed, at_bound, largest) = self.sweep(&mut run.u, order, omega);
            run.clamped = at_bound;
            for &i in self.interior {
                run.u[i] = run.u[i].clamp(0.0, self.upper);
            }
            if changed == 0 {
                run.final_delta = 0.0;
                return true;
            }
            let next = total_energy(self.st, self.p, &run.u);
            let delta = (energy - next) / energy.abs().max(f64::MIN_POSITIVE);
            run.final_delta = delta;
            if next > energy {
                if -delta > opts.tol_energy.max(ROUNDING) {
                    // a rise above rounding: keep the previous iterate
                    run.u.copy_from_slice(&previous);
                    return false;
                }
                if !polish {
                    run.u.copy_from_slice(&previous);
                    polish = true;
                    omega = self.omega;
                    continue;
                }
            } else {
                energy = next;
                run.trace.push(energy);
            }
            if polish {
                if largest <= opts.tol_node {
                    return true;
                }
                continue;
            }
            if delta < opts.tol_energy {
                stall += 1;
            } else {
                stall = 0;
            }
            if stall >= opts.stall_sweeps {
                if omega == 1.0 {
                    polish = true;
                    omega = self.omega;
                } else {
                    omega = 1.0;
                }
                stall = 0;
            }
        }
        false
    }

    fn window(&self, center: usize, radius: usize) -> Vec<usize> {
        let g = self.p.grid();
        let c = g.multi_index(center);
        let n = g.dim();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for d in 0..n {
            lo[d] = c[d].saturating_sub(radius).max(1);
            hi[d] = (c[d] + radius).min(g.nodes_per_axis()[d] - 2);
        }
        let mut out = Vec::new();
        let mut m = lo;
        loop {
            out.push(g.index(m));
            let mut d = n;
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                if m[d] < hi[d] {
                    m[d] += 1;
                    break;
                }
                m[d] = lo[d];
            }
        }
    }

    /// Part of the total energy that depends on the nodes flagged in `inside`.
    fn window_energy(&self, u: &[f64], window: &[usize], inside: &[bool]) -> f64 {
        let lam = self.p.forcing.values();
        let gam = self.p.exponent.values();
        let st = self.st;
        let w = st.width();
        let mut e = 0.0;
        for &i in window {
            let row = &st.rows[i * w..(i + 1) * w];
            let mut acc = 0.0;
            for (&c, &o) in row.iter().zip(&st.offsets) {
                if c != 0.0 {
                    let j = (i as isize + o) as usize;
                    acc += if inside[j] { c * u[j] } else { 2.0 * c * u[j] };
                }
            }
            e += u[i] * acc + st.node_weight[i] * singular_density(u[i], lam[i], gam[i]);
        }
        e
    }

    /// Window half-width: `move_radius` in one dimension, and about the
    /// same node count in higher dimensions.
    fn move_radius(&self) -> usize {
        let n = self.p.grid().dim() as f64;
        let nodes = (2 * self.opts.move_radius + 1) as f64;
        (((nodes.powf(1.0 / n) - 1.0) / 2.0).round() as usize).max(1)
    }

    /// One pass of free-boundary moves: every interior node on either side
    /// of the interface is tentatively switched (to zero, or to the mean of
    /// its positive neighbours), a window around it is relaxed with the node
    /// held and then released, and the move is kept only if the total
    /// energy drops.
    fn interface_pass(&self, run: &mut Run, inside: &mut [bool]) -> usize {
        let g = self.p.grid();
        let n = g.dim();
        let radius = self.move_radius();
        let local_sweeps = self.opts.move_sweeps;
        let tol = self.opts.tol_node;
        let mut energy = *run.trace.last().expect("non-empty trace");
        let mut accepted = 0;
        let omega = 2.0 / (1.0 + (std::f64::consts::PI / (2 * radius + 2) as f64).sin());
        for &i in self.interior {
            let u = &run.u;
            let mut positive_sum = 0.0;
            let mut positive = 0;
            let mut zero_neighbor = false;
            for d in 0..n {
                for fwd in [false, true] {
                    if let Some(j) = g.neighbor(i, d, fwd) {
                        if u[j] > 0.0 {
                            positive_sum += u[j];
                            positive += 1;
                        } else {
                            zero_neighbor = true;
                        }
                    }
                }
            }
            let trial = if u[i] > 0.0 && zero_neighbor {
                0.0
            } else if u[i] == 0.0 && positive > 0 {
                (positive_sum / positive as f64).min(self.upper)
            } else {
                continue;
            };
            let window = self.window(i, radius);
            window.iter().for_each(|&k| inside[k] = true);
            let before = self.window_energy(&run.u, &window, inside);
            let saved: Vec<f64> = window.iter().map(|&k| run.u[k]).collect();
            run.u[i] = trial;
            for held in [true, false] {
                for _ in 0..local_sweeps {
                    let mut change: f64 = 0.0;
                    for &k in window.iter().filter(|&&k| !held || k != i) {
                        let old = run.u[k];
                        change = change.max((self.update(&mut run.u, k, omega) - old).abs());
                    }
                    if change <= tol {
                        break;
                    }
                }
            }
            let after = self.window_energy(&run.u, &window, inside);
            window.iter().for_each(|&k| inside[k] = false);
            if after - before < -ROUNDING * energy.abs() {
                energy = total_energy(self.st, self.p, &run.u);
                run.trace.push(energy);
                accepted += 1;
            } else {
                for (&k, &v) in window.iter().zip(&saved) {
                    run.u[k] = v;
                }
            }
        }
        accepted
    }

    fn run(&self, u: Vec<f64>, start: usize) -> Run {
        let opts = self.opts;
        let mut rng = ChaCha8Rng::seed_from_u64(
            opts.seed ^ (start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut order = self.interior.to_vec();
        let energy = total_energy(self.st, self.p, &u);
        let mut run = Run {
            u,
            trace: vec![energy],
            sweeps: 0,
            final_delta: f64::INFINITY,
            clamped: 0,
            converged: false,
            moves: 0,
        };
        let mut inside = vec![false; run.u.len()];
        for _ in 0..=opts.move_passes {
            run.converged = self.relax(&mut run, &mut order, &mut rng);
            if !run.converged || opts.move_passes == 0 || run.sweeps >= opts.max_sweeps {
                break;
            }
            let accepted = self.interface_pass(&mut run, &mut inside);
            run.moves += accepted;
            if accepted == 0 {
                break;
            }
        }
        run
    }
}

/// Minimise the energy of `problem` among fields equal to `phi` on the box
/// boundary. Interior values of `phi` are ignored.
pub fn minimize(
    phi: &ScalarField,
    problem: &Problem,
    opts: &MinimizeOptions,
) -> Result<(ScalarField, MinimizeReport), MinimizeError> {
    opts.validate()?;
    let grid = *problem.grid();
    if *phi.grid() != grid {
        return Err(EnergyError::GridMismatch("boundary datum").into());
    }
    let mut upper: f64 = 0.0;
    for i in (0..grid.node_count()).filter(|&i| grid.is_boundary(i)) {
        let v = phi.values()[i];
        if v < 0.0 {
            return Err(MinimizeError::NegativeBoundary { node: i, value: v });
        }
        upper = upper.max(v);
    }
    let bound = if opts.clamp { upper } else { f64::INFINITY };
    let interior: Vec<usize> = (0..grid.node_count())
        .filter(|&i| !grid.is_boundary(i))
        .collect();
    let st = Stiffness::assemble(&problem.coefficient);
    let omega = match opts.relaxation {
        Relaxation::None => 1.0,
        Relaxation::Fixed { omega } => omega,
        Relaxation::Auto => {
            let n = *grid.nodes_per_axis().iter().max().expect("grid has an axis");
            2.0 / (1.0 + (std::f64::consts::PI / (n as f64 - 1.0)).sin())
        }
    };
    let setup = Setup {
        p: problem,
        st: &st,
        interior: &interior,
        upper: bound,
        omega,
        opts,
    };
    let kinds: Vec<StartKind> = (0..opts.starts)
        .map(|k| match k {
            0 => StartKind::Upper,
            1 => StartKind::Zero,
            _ => StartKind::Random,
        })
        .collect();
    let runs: Vec<Run> = kinds
        .par_iter()
        .enumerate()
        .map(|(k, kind)| {
            let mut u: Vec<f64> = phi
                .values()
                .iter()
                .enumerate()
                .map(|(i, &v)| if grid.is_boundary(i) { v } else { 0.0 })
                .collect();
            match kind {
                StartKind::Upper => interior.iter().for_each(|&i| u[i] = upper),
                StartKind::Zero => {}
                StartKind::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
                    interior
                        .iter()
                        .for_each(|&i| u[i] = upper * rng.random::<f64>());
                }
            }
            setup.run(u, k)
        })
        .collect();
    let best = (0..runs.len())
        .min_by(|&x, &y| {
            let ex = *runs[x].trace.last().expect("non-empty");
            let ey = *runs[y].trace.last().expect("non-empty");
            ex.total_cmp(&ey)
        })
        .expect("at least one start");
    let starts = runs
        .iter()
        .zip(&kinds)
        .enumerate()
        .map(|(k, (r, &kind))| StartOutcome {
            start: k,
            kind,
            energy: *r.trace.last().expect("non-empty"),
            sweeps_used: r.sweeps,
            converged: r.converged,
            interface_moves: r.moves,
        })
        .collect();
    let run = runs.into_iter().nth(best).expect("best start exists");
    let report = MinimizeReport {
        sweeps_used: run.sweeps,
        energy_trace: run.trace,
        final_delta: run.final_delta,
        clamped_nodes: run.clamped,
        converged: run.converged,
        relaxation: omega,
        upper_bound: upper,
        best_start: best,
        starts,
        interface_moves: run.moves,
    };
    Ok((ScalarField::new(grid, run.u).map_err(EnergyError::from)?, report))
}
