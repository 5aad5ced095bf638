//! Friction cones with a random gripping offset, risk allocation and the
//! Gaussian reformulation of chance constraints.
//!
//! A contact force `f` is admissible when `n.f >= 0` and each tangential
//! component stays within `lambda * n.f + f_grip`, where `f_grip` is the
//! maximum shear force the gripper holds at zero normal load. `f_grip` is
//! Gaussian, so the tangential rows are chance constraints. A joint budget
//! `delta` over the plan is split uniformly across rounds and constraints;
//! each row then holds with probability `1 - delta_jk` once the mean
//! gripping force is reduced by `sd * Phi^-1(1 - delta_jk)`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robot::ContactFrame;
use crate::scalar::Real;

/// Number of chance-constrained rows per contact.
pub const STOCHASTIC_ROWS_PER_CONTACT: usize = 4;
/// Rows per contact including the unilateral normal-force row.
pub const ROWS_PER_CONTACT: usize = 5;

/// `alpha . f - grip_coeff * f_grip <= beta`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearForceConstraint<T: Real> {
    pub alpha: Vector3<T>,
    pub grip_coeff: T,
    pub beta: T,
    pub stochastic: bool,
}

impl<T: Real> LinearForceConstraint<T> {
    pub fn new(alpha: Vector3<T>, grip_coeff: T, beta: T) -> Self {
        Self {
            alpha,
            grip_coeff,
            beta,
            stochastic: grip_coeff != T::zero(),
        }
    }

    /// Left minus right side for a realized gripping force; positive means violated.
    pub fn violation(&self, f: &Vector3<T>, f_grip: T) -> T {
        self.alpha.dot(f) - self.grip_coeff * f_grip - self.beta
    }
}

/// `alpha . f <= rhs`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeterministicConstraint<T: Real> {
    pub alpha: Vector3<T>,
    pub rhs: T,
}

impl<T: Real> DeterministicConstraint<T> {
    /// Non-negative when satisfied.
    pub fn margin(&self, f: &Vector3<T>) -> T {
        self.rhs - self.alpha.dot(f)
    }
}

/// The five linear rows of the cone at one contact, in the order
/// `-n.f <= 0`, then `+zeta`, `-zeta`, `+xi`, `-xi` tangential rows.
pub fn friction_cone<T: Real>(
    frame: &ContactFrame<T>,
    lambda: T,
) -> Result<[LinearForceConstraint<T>; 5]> {
    if !(lambda >= T::zero()) || !lambda.is_finite_value() {
        return Err(Error::Domain(format!(
            "friction coefficient must be finite and non-negative, got {lambda}"
        )));
    }
    let ln = frame.n * lambda;
    Ok([
        LinearForceConstraint::new(-frame.n, T::zero(), T::zero()),
        LinearForceConstraint::new(frame.zeta - ln, T::one(), T::zero()),
        LinearForceConstraint::new(-frame.zeta - ln, T::one(), T::zero()),
        LinearForceConstraint::new(frame.xi - ln, T::one(), T::zero()),
        LinearForceConstraint::new(-frame.xi - ln, T::one(), T::zero()),
    ])
}

/// Uniform split of a joint violation budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBudget {
    pub delta: f64,
    pub rounds: usize,
    pub constraints_per_round: usize,
    pub delta_jk: f64,
}

impl RiskBudget {
    /// Sum of the per-constraint allocations.
    pub fn total_allocated(&self) -> f64 {
        self.delta_jk * (self.rounds * self.constraints_per_round) as f64
    }
}

pub fn allocate(delta: f64, rounds: usize, constraints_per_round: usize) -> Result<RiskBudget> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Domain(format!(
            "violation probability must lie in [0, 1), got {delta}"
        )));
    }
    if rounds == 0 || constraints_per_round == 0 {
        return Err(Error::InvalidInput(
            "risk allocation needs at least one round and one constraint".into(),
        ));
    }
    if delta == 0.0 {
        return Err(Error::ZeroRisk);
    }
    Ok(RiskBudget {
        delta,
        rounds,
        constraints_per_round,
        delta_jk: delta / (rounds * constraints_per_round) as f64,
    })
}

/// Stochastic rows per round: four per contact per critical instant.
pub fn count_stochastic(contacts_per_instant: &[usize]) -> usize {
    STOCHASTIC_ROWS_PER_CONTACT * contacts_per_instant.iter().sum::<usize>()
}

/// Standard normal distribution function.
pub fn norm_cdf<T: Real>(x: T) -> T {
    T::lit(0.5 * libm::erfc(-x.to_f64_lossy() / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn norm_pdf<T: Real>(x: T) -> T {
    let x = x.to_f64_lossy();
    T::lit((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

/// Standard normal quantile.
pub fn inv_norm_cdf<T: Real>(p: T) -> Result<T> {
    let p = p.to_f64_lossy();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "quantile requires 0 < p < 1, got {p}"
        )));
    }
    Ok(T::lit(quantile_f64(p)))
}

fn quantile_f64(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement. The residual is taken on the smaller tail so that
    // probabilities close to one keep their relative precision.
    let mut x = x;
    for _ in 0..2 {
        let e = if x <= 0.0 {
            0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p
        } else {
            (1.0 - p) - 0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
        };
        let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// `sd * Phi^-1(1 - delta_jk)`, the amount by which the usable gripping
/// force is reduced.
pub fn gaussian_margin<T: Real>(sd: T, delta_jk: T) -> Result<T> {
    if !(delta_jk > T::zero()) {
        return Err(Error::ZeroRisk);
    }
    if !(delta_jk < T::one()) {
        return Err(Error::Domain(format!(
            "per-constraint risk must be below 1, got {delta_jk}"
        )));
    }
    Ok(sd * inv_norm_cdf(T::one() - delta_jk)?)
}

/// Replaces the random gripping force in `c` by its mean shifted
/// conservatively by the Gaussian quantile margin.
pub fn reformulate<T: Real>(
    c: &LinearForceConstraint<T>,
    mean_grip: T,
    var_grip: T,
    delta_jk: T,
) -> Result<DeterministicConstraint<T>> {
    if !c.stochastic {
        return Ok(DeterministicConstraint {
            alpha: c.alpha,
            rhs: c.beta,
        });
    }
    if !(var_grip >= T::zero()) {
        return Err(Error::Domain(format!(
            "gripping-force variance must be non-negative, got {var_grip}"
        )));
    }
    let margin = gaussian_margin(var_grip.sqrt(), delta_jk)?;
    Ok(DeterministicConstraint {
        alpha: c.alpha,
        rhs: c.beta + c.grip_coeff * mean_grip - c.grip_coeff.abs() * margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn wall() -> ContactFrame<f64> {
        ContactFrame::new(-Vector3::y(), Vector3::x(), Vector3::z()).unwrap()
    }

    /// Quantile by bisection on the complementary error function.
    fn bisect(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 0.5 * statrs::function::erf::erfc(-mid / std::f64::consts::SQRT_2) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn normal_force_satisfies_cone_with_grip_slack() {
        let cone = friction_cone(&wall(), 2.3).unwrap();
        let f = wall().n * 40.0;
        let mean = 25.0;
        for c in &cone {
            let slack = -c.violation(&f, mean);
            assert!(slack >= 0.0);
            if c.stochastic {
                assert!(slack >= mean);
            }
        }
    }

    #[test]
    fn zero_normal_load_leaves_grip_offset() {
        let frame = wall();
        let cone = friction_cone(&frame, 2.3).unwrap();
        let f = frame.zeta * 7.0;
        assert_relative_eq!(cone[1].violation(&f, 10.0), 7.0 - 10.0);
        assert!(!cone[0].stochastic && cone[0].violation(&f, 10.0) == 0.0);
    }

    #[test]
    fn frictionless_gripless_cone_admits_only_normal_forces() {
        let frame = wall();
        let cone = friction_cone(&frame, 0.0).unwrap();
        let ok = frame.n * 5.0;
        let bad = frame.n * 5.0 + frame.xi * 1e-6;
        assert!(cone.iter().all(|c| c.violation(&ok, 0.0) <= 0.0));
        assert!(cone.iter().any(|c| c.violation(&bad, 0.0) > 0.0));
    }

    #[test]
    fn allocation_examples() {
        assert_relative_eq!(allocate(0.1, 7, 6).unwrap().delta_jk, 0.1 / 42.0);
        assert_relative_eq!(
            allocate(0.1, 7, 6).unwrap().delta_jk,
            2.3810e-3,
            epsilon = 1e-7
        );
        assert_relative_eq!(
            allocate(0.4, 3, 6).unwrap().delta_jk,
            2.2222e-2,
            epsilon = 1e-6
        );
        assert!(matches!(allocate(0.0, 3, 6), Err(Error::ZeroRisk)));
        assert!(allocate(1.0, 3, 6).is_err());
        let b = allocate(0.3, 4, 9).unwrap();
        assert!(b.total_allocated() <= 0.3 + 1e-15);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(inv_norm_cdf(0.5f64).unwrap(), 0.0);
        assert!((inv_norm_cdf(0.975f64).unwrap() - 1.959964).abs() < 1e-6);
        let z: f64 = inv_norm_cdf(1.0 - 0.1 / 42.0).unwrap();
        assert!((z - bisect(1.0 - 0.1 / 42.0)).abs() < 1e-9);
        assert!((z - 2.822_714).abs() < 1e-4, "{z}");
        assert!(matches!(inv_norm_cdf(0.0f64), Err(Error::Domain(_))));
        assert!(matches!(inv_norm_cdf(1.0f64), Err(Error::Domain(_))));
    }

    #[test]
    fn quantile_matches_bisection_across_range() {
        for i in 0..2000 {
            let t = i as f64 / 1999.0;
            let p = 1e-6 + t * (1.0 - 2e-6);
            assert!(
                (inv_norm_cdf::<f64>(p).unwrap() - bisect(p)).abs() <= 1e-9,
                "p = {p}"
            );
        }
    }

    #[test]
    fn reformulation_examples() {
        let cone = friction_cone(&wall(), 2.3).unwrap();
        let half = reformulate(&cone[1], 30.0, 25.0, 0.5).unwrap();
        assert_relative_eq!(half.rhs, 30.0, epsilon = 1e-12);
        let exact = reformulate(&cone[1], 30.0, 0.0, 0.01).unwrap();
        assert_relative_eq!(exact.rhs, 30.0);
        let usable = reformulate(&cone[1], 30.0, 25.0, 2.381e-3).unwrap().rhs;
        assert!((usable - 15.89).abs() < 0.01, "{usable}");
        assert!(matches!(
            reformulate(&cone[1], 30.0, 25.0, 0.0),
            Err(Error::ZeroRisk)
        ));
        let det = reformulate(&cone[0], 30.0, 25.0, 0.01).unwrap();
        assert_eq!(det.rhs, 0.0);
    }

    #[test]
    fn counting_rule() {
        assert_eq!(count_stochastic(&[1]), 4);
        assert_eq!(count_stochastic(&[]), 0);
        assert_eq!(count_stochastic(&[0, 0]), 0);
        assert_eq!(count_stochastic(&[5, 6]), 44);
    }

    #[test]
    fn split_absolute_values_match_on_grid() {
        let frame = wall();
        let lambda = 1.1;
        let grip = 3.0;
        let cone = friction_cone(&frame, lambda).unwrap();
        for i in -10..=10 {
            for j in -10..=10 {
                for k in 0..=10 {
                    let f = frame.zeta * i as f64 + frame.xi * j as f64 + frame.n * k as f64;
                    let b = lambda * frame.n.dot(&f) + grip;
                    let direct = frame.zeta.dot(&f).abs() <= b && frame.xi.dot(&f).abs() <= b;
                    let split = cone[1..].iter().all(|c| c.violation(&f, grip) <= 0.0);
                    assert_eq!(direct, split, "{f:?}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn cdf_round_trip(t in 0.0..1.0f64) {
            let p = 1e-6 + t * (1.0 - 2e-6);
            let x: f64 = inv_norm_cdf(p).unwrap();
            prop_assert!((norm_cdf(x) - p).abs() <= 1e-9);
        }

        #[test]
        fn smaller_risk_tightens(mean in 0.0..80.0f64, var in 0.01..400.0f64, d1 in 1e-6..0.5f64, d2 in 1e-6..0.5f64) {
            prop_assume!(d1 != d2);
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let c = friction_cone(&wall(), 1.1).unwrap()[3];
            let strict = reformulate(&c, mean, var, lo).unwrap().rhs;
            let loose = reformulate(&c, mean, var, hi).unwrap().rhs;
            prop_assert!(strict < loose);
            prop_assert!(loose <= c.beta + mean + 1e-12);
        }

        #[test]
        fn f32_agrees_with_f64(t in 0.001..0.999f64) {
            let a = inv_norm_cdf(t as f32).unwrap() as f64;
            let b = inv_norm_cdf(t as f32 as f64).unwrap();
            prop_assert!((a - b).abs() < 1e-5);
        }
    }
}
