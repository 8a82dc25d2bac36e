//! Archimedean copulas coupling the disease and other-cause failure times.
//!
//! Only positively dependent families are provided. The Product copula is the
//! independence case and is also what Gumbel at `theta = 1` and Clayton at
//! `theta -> 0` collapse to; evaluations within `1e-8` of those limits are
//! routed to the Product formulas.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Parameters closer than this to the independence limit use the Product branch.
pub const INDEPENDENCE_EPS: f64 = 1e-8;

/// Clamp applied to `u` before evaluating partial derivatives.
pub const DIAGONAL_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CopulaError {
    #[error("{family} copula needs theta {expected}, got {theta}")]
    InvalidTheta {
        family: &'static str,
        expected: &'static str,
        theta: f64,
    },
    #[error("{family} copula supports only Kendall's tau in [0, 1), got {tau}")]
    UnsupportedTau { family: &'static str, tau: f64 },
    #[error("copula argument {0} outside [0, 1]")]
    OutOfUnitInterval(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gumbel,
    Clayton,
    Product,
}

impl CopulaFamily {
    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Gumbel => "gumbel",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Product => "product",
        }
    }
}

impl std::str::FromStr for CopulaFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gumbel" => Ok(CopulaFamily::Gumbel),
            "clayton" => Ok(CopulaFamily::Clayton),
            "product" | "independence" => Ok(CopulaFamily::Product),
            other => Err(format!("unknown copula `{other}` (expected gumbel, clayton or product)")),
        }
    }
}

/// A copula family together with its dependence parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CopulaSpec {
    /// `theta >= 1`; `theta = 1` is independence.
    Gumbel { theta: f64 },
    /// `theta > 0`.
    Clayton { theta: f64 },
    Product,
}

/// Joint CDF and density of `(T1, T2)` on the diagonal `t1 = t2 = t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalEval {
    pub joint_cdf: f64,
    pub joint_density: f64,
    pub u1: f64,
    pub u2: f64,
    pub f1: f64,
    pub f2: f64,
    /// `dC/du1` and `dC/du2` at the (clamped) arguments.
    pub partials: (f64, f64),
}

impl CopulaSpec {
    pub fn gumbel(theta: f64) -> Result<Self, CopulaError> {
        if theta.is_finite() && theta >= 1.0 {
            Ok(CopulaSpec::Gumbel { theta })
        } else {
            Err(CopulaError::InvalidTheta {
                family: "gumbel",
                expected: "in [1, inf)",
                theta,
            })
        }
    }

    pub fn clayton(theta: f64) -> Result<Self, CopulaError> {
        if theta.is_finite() && theta > 0.0 {
            Ok(CopulaSpec::Clayton { theta })
        } else {
            Err(CopulaError::InvalidTheta {
                family: "clayton",
                expected: "in (0, inf)",
                theta,
            })
        }
    }

    /// Builds the copula with the given Kendall's tau. `tau = 0` gives [`CopulaSpec::Product`].
    pub fn from_tau(family: CopulaFamily, tau: f64) -> Result<Self, CopulaError> {
        if !(tau.is_finite() && (0.0..1.0).contains(&tau)) {
            return Err(CopulaError::UnsupportedTau {
                family: family.name(),
                tau,
            });
        }
        if tau == 0.0 {
            return Ok(CopulaSpec::Product);
        }
        match family {
            CopulaFamily::Gumbel => Self::gumbel(1.0 / (1.0 - tau)),
            CopulaFamily::Clayton => Self::clayton(2.0 * tau / (1.0 - tau)),
            CopulaFamily::Product => Err(CopulaError::UnsupportedTau { family: "product", tau }),
        }
    }

    pub fn family(&self) -> CopulaFamily {
        match self {
            CopulaSpec::Gumbel { .. } => CopulaFamily::Gumbel,
            CopulaSpec::Clayton { .. } => CopulaFamily::Clayton,
            CopulaSpec::Product => CopulaFamily::Product,
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match *self {
            CopulaSpec::Gumbel { theta } | CopulaSpec::Clayton { theta } => Some(theta),
            CopulaSpec::Product => None,
        }
    }

    pub fn kendall_tau(&self) -> f64 {
        match *self {
            CopulaSpec::Gumbel { theta } => 1.0 - 1.0 / theta,
            CopulaSpec::Clayton { theta } => theta / (theta + 2.0),
            CopulaSpec::Product => 0.0,
        }
    }

    /// The family actually used for evaluation after the independence dispatch.
    fn effective(&self) -> CopulaSpec {
        match *self {
            CopulaSpec::Gumbel { theta } if theta <= 1.0 + INDEPENDENCE_EPS => CopulaSpec::Product,
            CopulaSpec::Clayton { theta } if theta <= INDEPENDENCE_EPS => CopulaSpec::Product,
            other => other,
        }
    }

    pub fn cdf(&self, u1: f64, u2: f64) -> Result<f64, CopulaError> {
        for u in [u1, u2] {
            if !(0.0..=1.0).contains(&u) {
                return Err(CopulaError::OutOfUnitInterval(u));
            }
        }
        Ok(self.cdf_unchecked(u1, u2))
    }

    pub(crate) fn cdf_unchecked(&self, u1: f64, u2: f64) -> f64 {
        if u1 == 0.0 || u2 == 0.0 {
            return 0.0;
        }
        if u1 == 1.0 {
            return u2;
        }
        if u2 == 1.0 {
            return u1;
        }
        match self.effective() {
            CopulaSpec::Product => u1 * u2,
            CopulaSpec::Gumbel { theta } => (-gumbel_root(theta, u1, u2)).exp(),
            CopulaSpec::Clayton { theta } => (clayton_log_s(theta, u1, u2) / -theta).exp(),
        }
    }

    /// `1 - C(u1, u2)`, accurate when `C` is close to one.
    pub(crate) fn complement_unchecked(&self, u1: f64, u2: f64) -> f64 {
        if u1 == 0.0 || u2 == 0.0 {
            return 1.0;
        }
        match self.effective() {
            CopulaSpec::Product => 1.0 - u1 * u2,
            CopulaSpec::Gumbel { theta } => {
                if u1 == 1.0 {
                    return 1.0 - u2;
                }
                if u2 == 1.0 {
                    return 1.0 - u1;
                }
                -(-gumbel_root(theta, u1, u2)).exp_m1()
            }
            CopulaSpec::Clayton { theta } => -(clayton_log_s(theta, u1, u2) / -theta).exp_m1(),
        }
    }

    /// Partial derivatives `(dC/du1, dC/du2)` for `u` in the open unit square.
    pub fn partials(&self, u1: f64, u2: f64) -> (f64, f64) {
        match self.effective() {
            CopulaSpec::Product => (u2, u1),
            CopulaSpec::Gumbel { theta } => {
                let l1 = (-u1.ln()).ln();
                let l2 = (-u2.ln()).ln();
                let log_a = log_add_exp(theta * l1, theta * l2);
                let log_c = -(log_a / theta).exp();
                let common = log_c + (1.0 / theta - 1.0) * log_a;
                (
                    (common + (theta - 1.0) * l1 - u1.ln()).exp(),
                    (common + (theta - 1.0) * l2 - u2.ln()).exp(),
                )
            }
            CopulaSpec::Clayton { theta } => {
                let log_s = clayton_log_s(theta, u1, u2);
                let log_c = log_s / -theta;
                let common = log_c - log_s;
                (
                    (common - (theta + 1.0) * u1.ln()).exp(),
                    (common - (theta + 1.0) * u2.ln()).exp(),
                )
            }
        }
    }

    /// Joint CDF and its time derivative on the diagonal, given the marginal
    /// CDFs `u1, u2` and densities `f1, f2` at the same time point.
    pub fn diagonal(&self, u1: f64, u2: f64, f1: f64, f2: f64) -> Result<DiagonalEval, CopulaError> {
        let joint_cdf = self.cdf(u1, u2)?;
        let partials = match self.effective() {
            // exact without clamping
            CopulaSpec::Product => (u2, u1),
            spec => spec.partials(clamp_unit(u1), clamp_unit(u2)),
        };
        let joint_density = (partials.0 * f1 + partials.1 * f2).max(0.0);
        Ok(DiagonalEval {
            joint_cdf,
            joint_density,
            u1,
            u2,
            f1,
            f2,
            partials,
        })
    }

    /// Draws a pair with uniform margins from this copula.
    ///
    /// Clayton uses a Gamma frailty and Gumbel a positive-stable frailty drawn
    /// with the Chambers–Mallows–Stuck construction.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self.effective() {
            CopulaSpec::Product => (rng.random::<f64>(), rng.random::<f64>()),
            CopulaSpec::Clayton { theta } => {
                let v: f64 = Gamma::new(1.0 / theta, 1.0)
                    .expect("validated theta")
                    .sample(rng);
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                let inv = -1.0 / theta;
                (
                    ((e1 / v).ln_1p() * inv).exp(),
                    ((e2 / v).ln_1p() * inv).exp(),
                )
            }
            CopulaSpec::Gumbel { theta } => {
                let s = positive_stable(1.0 / theta, rng);
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                // psi(x) = exp(-x^(1/theta))
                (
                    (-(e1 / s).powf(1.0 / theta)).exp(),
                    (-(e2 / s).powf(1.0 / theta)).exp(),
                )
            }
        }
    }
}

fn clamp_unit(u: f64) -> f64 {
    u.clamp(DIAGONAL_CLAMP, 1.0 - DIAGONAL_CLAMP)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln A` with `A = (-ln u1)^theta + (-ln u2)^theta`.
fn gumbel_log_a(theta: f64, u1: f64, u2: f64) -> f64 {
    log_add_exp(theta * (-u1.ln()).ln(), theta * (-u2.ln()).ln())
}

/// `A^(1/theta)`.
fn gumbel_root(theta: f64, u1: f64, u2: f64) -> f64 {
    (gumbel_log_a(theta, u1, u2) / theta).exp()
}

/// `ln s` with `s = u1^-theta + u2^-theta - 1`.
fn clayton_log_s(theta: f64, u1: f64, u2: f64) -> f64 {
    let a = -theta * u1.ln();
    let b = -theta * u2.ln();
    if a.max(b) > 30.0 {
        // the -1 is negligible; avoid exp overflow
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
    } else {
        (a.exp_m1() + b.exp_m1()).ln_1p()
    }
}

/// Positive stable variate with Laplace transform `exp(-s^alpha)`, `0 < alpha < 1`.
fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    use std::f64::consts::PI;
    // open interval (0, pi)
    let u = loop {
        let x: f64 = rng.random::<f64>();
        if x > 0.0 {
            break x * PI;
        }
    };
    let w: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).sin() / w).powf((1.0 - alpha) / alpha);
    a * b
}
