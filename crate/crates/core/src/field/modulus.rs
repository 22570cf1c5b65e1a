use serde::{Deserialize, Serialize};

use super::FieldError;

/// Modulus of continuity `omega(t)`, `t >= 0`, with `omega(0) = 0` and
/// `omega` non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModulusOfContinuity {
    /// `omega = 0`, the modulus of a constant exponent.
    Zero,
    /// `omega(t) = slope * t`.
    Linear { slope: f64 },
    /// `omega(t) = coeff * t^exponent`.
    Power { coeff: f64, exponent: f64 },
    /// `omega(t) = coeff / log(e / t)` on `[0, 1]`, continued by `coeff` for `t > 1`.
    Log { coeff: f64 },
    /// Piecewise-linear through samples `(t[i], omega[i])`, constant after the last one.
    Tabulated { t: Vec<f64>, omega: Vec<f64> },
}

/// Partial sums of `sum_k omega(2^-k)` from [`ModulusOfContinuity::dini_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiniCheck {
    pub dini: bool,
    pub partial_sum: f64,
    /// Partial sums for `K = 1..=terms`.
    pub partial_sums: Vec<f64>,
    /// Number of terms summed before the decision.
    pub terms: usize,
    pub exceeded_cap: bool,
}

/// Relative increment below which a term counts as negligible.
pub const DINI_RELATIVE_INCREMENT: f64 = 1e-12;
/// Number of consecutive negligible increments that certify convergence.
pub const DINI_STREAK: usize = 8;

impl ModulusOfContinuity {
    pub fn linear(slope: f64) -> Self {
        Self::Linear { slope }
    }

    pub fn power(coeff: f64, exponent: f64) -> Self {
        Self::Power { coeff, exponent }
    }

    pub fn log(coeff: f64) -> Self {
        Self::Log { coeff }
    }

    /// Reject parameters that do not describe a modulus of continuity.
    /// Tabulated moduli must start at `(0, 0)` with increasing abscissae and
    /// non-decreasing values; nothing is repaired.
    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |msg: String| Err(FieldError::InvalidModulus(msg));
        match self {
            Self::Zero => Ok(()),
            Self::Linear { slope } if !(slope.is_finite() && *slope > 0.0) => {
                bad(format!("linear slope must be positive, got {slope}"))
            }
            Self::Power { coeff, exponent }
                if !(coeff.is_finite() && *coeff > 0.0 && exponent.is_finite() && *exponent > 0.0) =>
            {
                bad(format!("power modulus needs coeff > 0 and exponent > 0, got {coeff}, {exponent}"))
            }
            Self::Log { coeff } if !(coeff.is_finite() && *coeff > 0.0) => {
                bad(format!("log modulus coefficient must be positive, got {coeff}"))
            }
            Self::Tabulated { t, omega } => {
                if t.len() != omega.len() || t.len() < 2 {
                    return bad(format!(
                        "tabulated modulus needs >= 2 paired samples, got {} and {}",
                        t.len(),
                        omega.len()
                    ));
                }
                if t[0] != 0.0 || omega[0] != 0.0 {
                    return bad("tabulated modulus must start at (0, 0)".into());
                }
                if t.iter().chain(omega).any(|v| !v.is_finite()) {
                    return bad("tabulated modulus has non-finite samples".into());
                }
                if let Some(i) = (1..t.len()).find(|&i| t[i] <= t[i - 1]) {
                    return bad(format!("abscissae not increasing at sample {i}"));
                }
                if let Some(i) = (1..t.len()).find(|&i| omega[i] < omega[i - 1]) {
                    return bad(format!(
                        "modulus decreases at sample {i}: {} < {}",
                        omega[i],
                        omega[i - 1]
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Zero => 0.0,
            Self::Linear { slope } => slope * t,
            Self::Power { coeff, exponent } => coeff * t.powf(*exponent),
            Self::Log { coeff } => {
                if t >= 1.0 {
                    *coeff
                } else {
                    coeff / (std::f64::consts::E / t).ln()
                }
            }
            Self::Tabulated { t: ts, omega } => {
                let last = ts.len() - 1;
                if t >= ts[last] {
                    return omega[last];
                }
                let j = ts.partition_point(|&s| s <= t);
                let (t0, t1) = (ts[j - 1], ts[j]);
                let (w0, w1) = (omega[j - 1], omega[j]);
                w0 + (w1 - w0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// `omega^{-1}(nu)`: the smallest `t` with `omega(t) >= nu`, or `None`
    /// when `omega` never reaches `nu`. Parametric families are inverted in
    /// closed form; tabulated moduli by bisection (leftmost preimage).
    pub fn inverse(&self, nu: f64) -> Option<f64> {
        if nu <= 0.0 {
            return Some(0.0);
        }
        match self {
            Self::Zero => None,
            Self::Linear { slope } => Some(nu / slope),
            Self::Power { coeff, exponent } => Some((nu / coeff).powf(1.0 / exponent)),
            Self::Log { coeff } => {
                if nu > *coeff {
                    None
                } else {
                    Some(std::f64::consts::E * (-coeff / nu).exp())
                }
            }
            Self::Tabulated { t, omega } => {
                let last = t.len() - 1;
                if omega[last] < nu {
                    return None;
                }
                Some(self.inverse_by_bisection(nu, t[last]))
            }
        }
    }

    /// Leftmost `t` in `[0, hi]` with `omega(t) >= nu`, by bisection to
    /// machine resolution. Assumes `omega(hi) >= nu`.
    pub fn inverse_by_bisection(&self, nu: f64, hi: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) >= nu {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Partial sums `sum_{k=1}^K omega(2^-k)` for `K <= k_max`.
    ///
    /// Declares the modulus Dini once the increment stays below
    /// `1e-12 * sum` for 8 consecutive terms, and non-Dini as soon as the sum
    /// exceeds `cap` or if `k_max` terms pass without convergence.
    pub fn dini_check(&self, k_max: usize, cap: f64) -> Result<DiniCheck, FieldError> {
        self.validate()?;
        if k_max < 16 {
            return Err(FieldError::InvalidParameter(format!(
                "dini check needs k_max >= 16, got {k_max}"
            )));
        }
        let mut sum = 0.0;
        let mut partial_sums = Vec::with_capacity(k_max);
        let mut streak = 0;
        for k in 1..=k_max {
            let term = self.eval((-(k as f64)).exp2());
            sum += term;
            partial_sums.push(sum);
            if sum > cap {
                return Ok(DiniCheck {
                    dini: false,
                    partial_sum: sum,
                    partial_sums,
                    terms: k,
                    exceeded_cap: true,
                });
            }
            if term <= DINI_RELATIVE_INCREMENT * sum || sum == 0.0 {
                streak += 1;
            } else {
                streak = 0;
            }
            if streak >= DINI_STREAK {
                return Ok(DiniCheck {
                    dini: true,
                    partial_sum: sum,
                    partial_sums,
                    terms: k,
                    exceeded_cap: false,
                });
            }
        }
        Ok(DiniCheck {
            dini: false,
            partial_sum: sum,
            partial_sums,
            terms: k_max,
            exceeded_cap: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_modulus_is_geometric() {
        let r = ModulusOfContinuity::linear(1.0).dini_check(64, 1e6).unwrap();
        assert!(r.dini);
        assert!((r.partial_sum - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sqrt_modulus_sum() {
        let r = ModulusOfContinuity::power(1.0, 0.5)
            .dini_check(128, 1e6)
            .unwrap();
        assert!(r.dini);
        let exact = 1.0 / (2f64.sqrt() - 1.0);
        assert!((r.partial_sum - exact).abs() < 1e-10, "{}", r.partial_sum);
    }

    #[test]
    fn log_modulus_is_not_dini() {
        let r = ModulusOfContinuity::log(1.0).dini_check(64, 1e6).unwrap();
        assert!(!r.dini);
        // a harmonic lower bound: 1/(1 + k ln 2) >= 1/(2k) for k >= 1
        let harmonic: f64 = (1..=64).map(|k| 0.5 / k as f64).sum();
        assert!(r.partial_sum >= harmonic);
        let capped = ModulusOfContinuity::log(1.0).dini_check(64, 3.0).unwrap();
        assert!(capped.exceeded_cap && !capped.dini);
    }

    #[test]
    fn zero_modulus() {
        let r = ModulusOfContinuity::Zero.dini_check(16, 1.0).unwrap();
        assert!(r.dini);
        assert_eq!(r.partial_sum, 0.0);
    }

    #[test]
    fn tabulated_validation_is_fail_fast() {
        let bad = ModulusOfContinuity::Tabulated {
            t: vec![0.0, 0.5, 1.0],
            omega: vec![0.0, 0.6, 0.4],
        };
        assert!(bad.validate().is_err());
        assert!(bad.dini_check(16, 1.0).is_err());
        let off_origin = ModulusOfContinuity::Tabulated {
            t: vec![0.0, 1.0],
            omega: vec![0.1, 0.4],
        };
        assert!(off_origin.validate().is_err());
    }

    #[test]
    fn tabulated_inverse_is_leftmost() {
        let w = ModulusOfContinuity::Tabulated {
            t: vec![0.0, 0.25, 0.5, 1.0],
            omega: vec![0.0, 0.5, 0.5, 1.0],
        };
        let t = w.inverse(0.5).unwrap();
        assert!((t - 0.25).abs() < 1e-15);
        assert!(w.inverse(1.5).is_none());
    }

    #[test]
    fn closed_form_inverses() {
        assert_eq!(ModulusOfContinuity::linear(4.0).inverse(0.5), Some(0.125));
        let p = ModulusOfContinuity::power(2.0, 0.5);
        let t = p.inverse(0.3).unwrap();
        assert!((p.eval(t) - 0.3).abs() < 1e-15);
        let l = ModulusOfContinuity::log(1.0);
        let t = l.inverse(0.4).unwrap();
        assert!((l.eval(t) - 0.4).abs() < 1e-15);
    }
}
