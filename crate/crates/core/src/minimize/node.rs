//! Exact minimisation of the one-node restriction
//! `q(t) = a t^2 - b t + c t^gamma [t > 0]` on `[0, upper]`, `c = lam * w`.

/// Global minimiser of `q` over `[0, inf)`.
pub fn node_solve(a: f64, b: f64, w: f64, lam: f64, gam: f64) -> f64 {
    node_solve_bounded(a, b, w, lam, gam, f64::INFINITY)
}

#[inline]
pub fn node_energy(a: f64, b: f64, c: f64, gam: f64, t: f64) -> f64 {
    if t > 0.0 {
        a * t * t - b * t + c * t.powf(gam)
    } else {
        0.0
    }
}

/// `q(t1) - q(t0)`, factored so that nearby arguments do not cancel.
#[inline]
pub fn node_energy_change(a: f64, b: f64, c: f64, gam: f64, t0: f64, t1: f64) -> f64 {
    if t0 > 0.0 && t1 > 0.0 {
        let d = t1 - t0;
        d * (a * (t1 + t0) - b) + c * t0.powf(gam) * (gam * (d / t0).ln_1p()).exp_m1()
    } else {
        node_energy(a, b, c, gam, t1) - node_energy(a, b, c, gam, t0)
    }
}

/// Global minimiser of `q` over `[0, upper]`; exact ties go to `0`.
pub fn node_solve_bounded(a: f64, b: f64, w: f64, lam: f64, gam: f64, upper: f64) -> f64 {
    debug_assert!(a > 0.0 && w >= 0.0 && lam >= 0.0 && gam >= 0.0);
    if upper <= 0.0 || b <= 0.0 {
        // q(t) > 0 for every t > 0
        return 0.0;
    }
    let c = lam * w;
    let vertex = b / (2.0 * a);
    let mut best = 0.0;
    let mut best_q = 0.0;
    let mut offer = |t: f64| {
        let t = t.min(upper);
        if t > 0.0 {
            let q = node_energy(a, b, c, gam, t);
            if q < best_q {
                best = t;
                best_q = q;
            }
        }
    };
    if c == 0.0 || gam == 0.0 {
        offer(vertex);
        return best;
    }
    let dq = |t: f64| 2.0 * a * t - b + c * gam * t.powf(gam - 1.0);
    let d2q = |t: f64| 2.0 * a + c * gam * (gam - 1.0) * t.powf(gam - 2.0);
    if gam == 1.0 {
        offer((b - c) / (2.0 * a));
    } else if gam > 1.0 {
        // q convex on (0, inf), q'(0+) = -b < 0 < q'(vertex)
        offer(increasing_root(&dq, &d2q, 0.0, vertex));
    } else {
        // q' decreases on (0, t_m) and increases afterwards
        let t_m = (c * gam * (1.0 - gam) / (2.0 * a)).powf(1.0 / (2.0 - gam));
        if t_m < vertex && dq(t_m) < 0.0 {
            offer(increasing_root(&dq, &d2q, t_m, vertex));
        }
    }
    if upper.is_finite() {
        offer(upper);
    }
    best
}

/// Root of an increasing function `f` on `[lo, hi]` with `f(lo) <= 0 <= f(hi)`,
/// by Newton steps safeguarded with bisection.
fn increasing_root(f: &impl Fn(f64) -> f64, df: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = f(t);
        if v == 0.0 {
            return t;
        }
        if v < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let d = df(t);
        let newton = t - v / d;
        t = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    // pick the better of the bracket ends
    if f(lo).abs() <= f(hi).abs() { lo } else { hi }
}
