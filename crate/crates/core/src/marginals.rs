//! Parametric lifetime distributions for the latent failure times.
//!
//! Three families are supported:
//!
//! * [`WeibullParams`] in rate form, `F(t) = 1 - exp(-lambda * t^alpha)`;
//! * [`ExpWeibullParams`], the exponentiated Weibull
//!   `F(t) = (1 - exp(-(t/lambda)^kappa))^alpha`;
//! * [`PiecewiseExponential`], a step hazard with fixed change points.
//!
//! Every evaluation goes through log-space where the closed form allows it so
//! that far right tails do not underflow before they are needed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("invalid {family} parameter {name} = {value}: must be positive and finite")]
    InvalidParameter {
        family: &'static str,
        name: &'static str,
        value: f64,
    },
    #[error("time argument {0} is negative or not finite")]
    InvalidTime(f64),
    #[error("probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("hazard overflow at t = {0}: survival is numerically zero")]
    HazardOverflow(f64),
    #[error("piecewise-exponential layout invalid: {0}")]
    InvalidLayout(String),
    #[error("{family} expects {expected} parameters, got {got}")]
    ParameterCount {
        family: &'static str,
        expected: usize,
        got: usize,
    },
}

fn check_positive(family: &'static str, name: &'static str, value: f64) -> Result<(), DistributionError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(DistributionError::InvalidParameter { family, name, value })
    }
}

fn check_time(t: f64) -> Result<(), DistributionError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(DistributionError::InvalidTime(t))
    }
}

fn check_probability(p: f64) -> Result<(), DistributionError> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(DistributionError::InvalidProbability(p))
    }
}

/// Two-parameter Weibull in rate form: `S(t) = exp(-lambda * t^alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub lambda: f64,
    pub alpha: f64,
}

impl WeibullParams {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self, DistributionError> {
        check_positive("weibull", "lambda", lambda)?;
        check_positive("weibull", "alpha", alpha)?;
        Ok(Self { lambda, alpha })
    }

    fn cumulative_hazard(&self, t: f64) -> f64 {
        self.lambda * t.powf(self.alpha)
    }
}

/// Exponentiated Weibull with scale `lambda` and shapes `kappa`, `alpha`.
///
/// `alpha = 1` is the ordinary Weibull with survival `exp(-(t/lambda)^kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpWeibullParams {
    pub lambda: f64,
    pub kappa: f64,
    pub alpha: f64,
}

impl ExpWeibullParams {
    pub fn new(lambda: f64, kappa: f64, alpha: f64) -> Result<Self, DistributionError> {
        check_positive("expweibull", "lambda", lambda)?;
        check_positive("expweibull", "kappa", kappa)?;
        check_positive("expweibull", "alpha", alpha)?;
        Ok(Self { lambda, kappa, alpha })
    }

    fn z(&self, t: f64) -> f64 {
        (t / self.lambda).powf(self.kappa)
    }

    /// `(ln z, ln(1 - e^{-z}))`, accurate when `z` underflows.
    fn log_terms(&self, t: f64) -> (f64, f64) {
        let log_z = self.kappa * (t / self.lambda).ln();
        let z = log_z.exp();
        let log_base = if log_z < -30.0 {
            log_z - 0.5 * z
        } else if z < std::f64::consts::LN_2 {
            (-(-z).exp_m1()).ln()
        } else {
            (-(-z).exp()).ln_1p()
        };
        (log_z, log_base)
    }
}

/// Piecewise-constant hazard. `rates[k]` applies on `(breaks[k-1], breaks[k]]`
/// with `breaks[-1] = 0`; the last rate continues past the final break.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseExponential {
    breaks: Vec<f64>,
    rates: Vec<f64>,
    // cumulative hazard at each break
    cumulative: Vec<f64>,
}

impl PiecewiseExponential {
    pub fn new(breaks: Vec<f64>, rates: Vec<f64>) -> Result<Self, DistributionError> {
        if rates.len() != breaks.len() + 1 {
            return Err(DistributionError::InvalidLayout(format!(
                "{} breaks need {} rates, got {}",
                breaks.len(),
                breaks.len() + 1,
                rates.len()
            )));
        }
        let mut prev = 0.0;
        for &b in &breaks {
            if !(b.is_finite() && b > prev) {
                return Err(DistributionError::InvalidLayout(format!(
                    "break points must be finite and strictly increasing from 0, saw {b} after {prev}"
                )));
            }
            prev = b;
        }
        if let Some(&r) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(DistributionError::InvalidLayout(format!(
                "rates must be finite and nonnegative, saw {r}"
            )));
        }
        let mut cumulative = Vec::with_capacity(breaks.len());
        let mut acc = 0.0;
        let mut start = 0.0;
        for (b, r) in breaks.iter().zip(&rates) {
            acc += (b - start) * r;
            cumulative.push(acc);
            start = *b;
        }
        Ok(Self { breaks, rates, cumulative })
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Index of the segment containing `t`, left-closed at breaks.
    fn segment(&self, t: f64) -> usize {
        self.breaks.partition_point(|&b| b < t)
    }

    /// Hazard at `t`; at an exact break the rate of the segment ending there.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.rates[self.segment(t)]
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let (base, start) = if k == 0 {
            (0.0, 0.0)
        } else {
            (self.cumulative[k - 1], self.breaks[k - 1])
        };
        base + (t - start) * self.rates[k]
    }

    /// Smallest `t` with `H(t) = target`; `None` when a zero tail rate never reaches it.
    pub fn inverse_cumulative_hazard(&self, target: f64) -> Option<f64> {
        let k = self.cumulative.partition_point(|&c| c < target);
        let (base, start) = if k == 0 {
            (0.0, 0.0)
        } else {
            (self.cumulative[k - 1], self.breaks[k - 1])
        };
        let rate = self.rates[k];
        if target == base {
            return Some(start);
        }
        if rate == 0.0 {
            return None;
        }
        Some(start + (target - base) / rate)
    }
}

/// Tag for the families that can be fitted by maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Weibull,
    #[serde(alias = "exp_weibull", alias = "exponentiated_weibull")]
    ExpWeibull,
}

impl Family {
    pub fn n_params(self) -> usize {
        match self {
            Family::Weibull => 2,
            Family::ExpWeibull => 3,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Weibull => &["lambda", "alpha"],
            Family::ExpWeibull => &["lambda", "kappa", "alpha"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Weibull => "weibull",
            Family::ExpWeibull => "expweibull",
        }
    }

    /// Builds a model from a parameter vector ordered as [`Family::param_names`].
    pub fn model(self, params: &[f64]) -> Result<MarginalModel, DistributionError> {
        if params.len() != self.n_params() {
            return Err(DistributionError::ParameterCount {
                family: self.name(),
                expected: self.n_params(),
                got: params.len(),
            });
        }
        Ok(match self {
            Family::Weibull => MarginalModel::Weibull(WeibullParams::new(params[0], params[1])?),
            Family::ExpWeibull => {
                MarginalModel::ExpWeibull(ExpWeibullParams::new(params[0], params[1], params[2])?)
            }
        })
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "weibull" => Ok(Family::Weibull),
            "expweibull" | "exp-weibull" | "exponentiated-weibull" => Ok(Family::ExpWeibull),
            other => Err(format!("unknown family `{other}` (expected weibull or expweibull)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalEval {
    pub cdf: f64,
    pub survival: f64,
    pub pdf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum MarginalModel {
    Weibull(WeibullParams),
    ExpWeibull(ExpWeibullParams),
    #[serde(rename = "piecewise")]
    PiecewiseExponential(PiecewiseExponential),
}

impl MarginalModel {
    pub fn weibull(lambda: f64, alpha: f64) -> Result<Self, DistributionError> {
        WeibullParams::new(lambda, alpha).map(MarginalModel::Weibull)
    }

    pub fn exp_weibull(lambda: f64, kappa: f64, alpha: f64) -> Result<Self, DistributionError> {
        ExpWeibullParams::new(lambda, kappa, alpha).map(MarginalModel::ExpWeibull)
    }

    /// The fittable family, if any.
    pub fn family(&self) -> Option<Family> {
        match self {
            MarginalModel::Weibull(_) => Some(Family::Weibull),
            MarginalModel::ExpWeibull(_) => Some(Family::ExpWeibull),
            MarginalModel::PiecewiseExponential(_) => None,
        }
    }

    /// Parameter vector in [`Family::param_names`] order. Empty for the piecewise model.
    pub fn params(&self) -> Vec<f64> {
        match self {
            MarginalModel::Weibull(p) => vec![p.lambda, p.alpha],
            MarginalModel::ExpWeibull(p) => vec![p.lambda, p.kappa, p.alpha],
            MarginalModel::PiecewiseExponential(_) => Vec::new(),
        }
    }

    /// Re-checks parameter validity; useful after deserialization.
    pub fn validate(&self) -> Result<(), DistributionError> {
        match self {
            MarginalModel::Weibull(p) => WeibullParams::new(p.lambda, p.alpha).map(drop),
            MarginalModel::ExpWeibull(p) => ExpWeibullParams::new(p.lambda, p.kappa, p.alpha).map(drop),
            MarginalModel::PiecewiseExponential(p) => {
                PiecewiseExponential::new(p.breaks.clone(), p.rates.clone()).map(drop)
            }
        }
    }

    pub fn cdf(&self, t: f64) -> Result<f64, DistributionError> {
        check_time(t)?;
        Ok(self.cdf_unchecked(t))
    }

    pub fn survival(&self, t: f64) -> Result<f64, DistributionError> {
        check_time(t)?;
        Ok(self.survival_unchecked(t))
    }

    pub fn log_survival(&self, t: f64) -> Result<f64, DistributionError> {
        check_time(t)?;
        Ok(self.log_survival_unchecked(t))
    }

    /// Density. At `t = 0` with a shape below one the density diverges and
    /// `f64::INFINITY` is returned.
    pub fn pdf(&self, t: f64) -> Result<f64, DistributionError> {
        check_time(t)?;
        Ok(self.pdf_unchecked(t))
    }

    pub fn log_pdf(&self, t: f64) -> Result<f64, DistributionError> {
        check_time(t)?;
        Ok(self.log_pdf_unchecked(t))
    }

    pub fn hazard(&self, t: f64) -> Result<f64, DistributionError> {
        check_time(t)?;
        if let MarginalModel::PiecewiseExponential(p) = self {
            return Ok(p.rate_at(t));
        }
        if self.survival_unchecked(t) == 0.0 {
            return Err(DistributionError::HazardOverflow(t));
        }
        let log_s = self.log_survival_unchecked(t);
        let h = (self.log_pdf_unchecked(t) - log_s).exp();
        if h.is_finite() || t == 0.0 {
            Ok(h)
        } else {
            Err(DistributionError::HazardOverflow(t))
        }
    }

    /// Inverse CDF on `[0, 1)`.
    pub fn quantile(&self, p: f64) -> Result<f64, DistributionError> {
        check_probability(p)?;
        if p == 0.0 {
            return Ok(0.0);
        }
        // -ln(1 - p), computed without cancellation for small p
        let target_h = -(-p).ln_1p();
        Ok(match self {
            MarginalModel::Weibull(w) => (target_h / w.lambda).powf(1.0 / w.alpha),
            MarginalModel::ExpWeibull(e) => {
                // p^(1/alpha) = 1 - exp(-z)  =>  z = -ln(1 - p^(1/alpha))
                let root = (p.ln() / e.alpha).exp();
                let z = -(-root).ln_1p();
                e.lambda * z.powf(1.0 / e.kappa)
            }
            MarginalModel::PiecewiseExponential(pw) => pw
                .inverse_cumulative_hazard(target_h)
                .ok_or(DistributionError::InvalidProbability(p))?,
        })
    }

    /// CDF, survival and density at `t`, sharing the intermediate terms.
    pub fn eval(&self, t: f64) -> Result<MarginalEval, DistributionError> {
        check_time(t)?;
        if t > 0.0 {
            if let MarginalModel::Weibull(w) = self {
                let h = w.cumulative_hazard(t);
                let survival = (-h).exp();
                return Ok(MarginalEval {
                    cdf: -(-h).exp_m1(),
                    survival,
                    pdf: w.alpha * h / t * survival,
                });
            }
        }
        Ok(MarginalEval {
            cdf: self.cdf_unchecked(t),
            survival: self.survival_unchecked(t),
            pdf: self.pdf_unchecked(t),
        })
    }

    pub(crate) fn cdf_unchecked(&self, t: f64) -> f64 {
        match self {
            MarginalModel::Weibull(w) => -(-w.cumulative_hazard(t)).exp_m1(),
            MarginalModel::ExpWeibull(e) => {
                if t == 0.0 {
                    return 0.0;
                }
                (e.alpha * e.log_terms(t).1).exp()
            }
            MarginalModel::PiecewiseExponential(p) => -(-p.cumulative_hazard(t)).exp_m1(),
        }
    }

    pub(crate) fn survival_unchecked(&self, t: f64) -> f64 {
        match self {
            MarginalModel::ExpWeibull(e) => {
                if t == 0.0 {
                    return 1.0;
                }
                // 1 - (1 - e^{-z})^alpha = -expm1(alpha * ln(1 - e^{-z}))
                -(e.alpha * e.log_terms(t).1).exp_m1()
            }
            _ => self.log_survival_unchecked(t).exp(),
        }
    }

    pub(crate) fn log_survival_unchecked(&self, t: f64) -> f64 {
        match self {
            MarginalModel::Weibull(w) => -w.cumulative_hazard(t),
            MarginalModel::ExpWeibull(e) => {
                let s = self.survival_unchecked(t);
                if s > 0.0 {
                    s.ln()
                } else {
                    // 1 - (1 - e^{-z})^alpha ~ alpha e^{-z} once e^{-z} underflows
                    e.alpha.ln() - e.z(t)
                }
            }
            MarginalModel::PiecewiseExponential(p) => -p.cumulative_hazard(t),
        }
    }

    pub(crate) fn pdf_unchecked(&self, t: f64) -> f64 {
        self.log_pdf_unchecked(t).exp()
    }

    pub(crate) fn log_pdf_unchecked(&self, t: f64) -> f64 {
        match self {
            MarginalModel::Weibull(w) => {
                if t == 0.0 {
                    return shape_at_origin(w.alpha, (w.lambda * w.alpha).ln());
                }
                (w.lambda * w.alpha).ln() + (w.alpha - 1.0) * t.ln() - w.cumulative_hazard(t)
            }
            MarginalModel::ExpWeibull(e) => {
                if t == 0.0 {
                    // density ~ t^{kappa*alpha - 1} near the origin
                    let order = e.kappa * e.alpha;
                    return shape_at_origin(order, (order / e.lambda).ln());
                }
                let (log_z, log_base) = e.log_terms(t);
                (e.alpha * e.kappa / t).ln() + log_z - log_z.exp() + (e.alpha - 1.0) * log_base
            }
            MarginalModel::PiecewiseExponential(p) => {
                let r = p.rate_at(t);
                if r == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    r.ln() - p.cumulative_hazard(t)
                }
            }
        }
    }
}

/// Log-density at the origin for a density behaving like `c * t^(order - 1)`.
fn shape_at_origin(order: f64, log_coefficient: f64) -> f64 {
    if order < 1.0 {
        f64::INFINITY
    } else if order > 1.0 {
        f64::NEG_INFINITY
    } else {
        log_coefficient
    }
}
