//! Censored-data log-likelihood for the disease-specific margin when only the
//! all-cause failure time is observed.
//!
//! For each subject the other-cause margin enters only through its CDF,
//! survival and density at the observed time, so those are resolved once
//! when the problem is built.
//!
//! ```text
//! S_T(t) = 1 - F1(t) - F2(t) + C(F1(t), F2(t))
//! f_T(t) = f1(t) + f2(t) - d/dt C(F1(t), F2(t))
//! l(eta) = sum_i  d_i ln f_T(X_i) + (1 - d_i) ln S_T(X_i)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::copulas::CopulaSpec;
use crate::lifetable::{LifeTableError, LifeTables, PopulationCurve, SubjectRecord};
use crate::marginals::{DistributionError, Family, MarginalModel};

/// Event times are kept at least this far from the origin.
pub const MIN_EVENT_TIME: f64 = 1e-10;

/// Densities below this are floored before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Fraction of floored densities above which the fit is rejected.
pub const MAX_FLOORED_FRACTION: f64 = 0.01;

pub const DEFAULT_LOWER_BOUND: f64 = 1e-6;
pub const DEFAULT_UPPER_BOUND: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("subject {id}: all-cause survival {value} is not positive")]
    Degenerate { id: String, value: f64 },
    #[error("{floored} of {n} event densities were floored; the model is inconsistent with the data")]
    ModelInconsistency { floored: usize, n: usize },
    #[error("non-finite likelihood contribution for subject {id}")]
    NonFinite { id: String },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("subject {id}: follow-up {time} not covered by its population curve (horizon {horizon})")]
    Coverage { id: String, time: f64, horizon: f64 },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    LifeTable(#[from] LifeTableError),
    #[error("parameter bounds need {expected} entries, got {got}")]
    Bounds { expected: usize, got: usize },
}

/// One subject's observed data with the other-cause margin resolved at `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: String,
    pub time: f64,
    pub event: bool,
    pub background_cdf: f64,
    pub background_survival: f64,
    pub background_density: f64,
}

impl Observation {
    /// Other-cause margin from a matched life-table curve.
    pub fn from_curve(id: impl Into<String>, time: f64, event: bool, curve: &PopulationCurve) -> Result<Self, LikelihoodError> {
        let id = id.into();
        if time > curve.horizon() + 1e-12 {
            return Err(LikelihoodError::Coverage {
                id,
                time,
                horizon: curve.horizon(),
            });
        }
        let t = effective_time(time, event);
        Ok(Self {
            id,
            time,
            event,
            background_cdf: curve.cdf(t),
            background_survival: curve.survival(t),
            background_density: curve.density(t),
        })
    }

    /// Other-cause margin from a known parametric distribution.
    pub fn from_model(id: impl Into<String>, time: f64, event: bool, model: &MarginalModel) -> Result<Self, LikelihoodError> {
        let t = effective_time(time, event);
        let e = model.eval(t)?;
        Ok(Self {
            id: id.into(),
            time,
            event,
            background_cdf: e.cdf,
            background_survival: e.survival,
            background_density: e.pdf,
        })
    }

    fn eval_time(&self) -> f64 {
        effective_time(self.time, self.event)
    }
}

fn effective_time(time: f64, event: bool) -> f64 {
    if event {
        time.max(MIN_EVENT_TIME)
    } else {
        time
    }
}

/// Box constraints on the natural-scale parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBounds {
    pub fn uniform(n: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; n],
            upper: vec![upper; n],
        }
    }

    pub fn default_for(family: Family) -> Self {
        Self::uniform(family.n_params(), DEFAULT_LOWER_BOUND, DEFAULT_UPPER_BOUND)
    }

    pub fn contains(&self, eta: &[f64]) -> bool {
        eta.len() == self.lower.len()
            && eta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| x >= lo && x <= hi)
    }
}

/// Log-likelihood value together with flooring diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub floored: usize,
    pub events: usize,
}

/// The fixed-copula likelihood for one marginal family.
#[derive(Debug, Clone)]
pub struct LikelihoodProblem {
    observations: Vec<Observation>,
    copula: CopulaSpec,
    family: Family,
    bounds: ParamBounds,
}

impl LikelihoodProblem {
    pub fn new(observations: Vec<Observation>, copula: CopulaSpec, family: Family) -> Result<Self, LikelihoodError> {
        if observations.is_empty() {
            return Err(LikelihoodError::EmptyCohort);
        }
        Ok(Self {
            observations,
            copula,
            family,
            bounds: ParamBounds::default_for(family),
        })
    }

    /// Matches every subject against the life tables up to its own follow-up.
    pub fn from_cohort(
        cohort: &[SubjectRecord],
        tables: &LifeTables,
        copula: CopulaSpec,
        family: Family,
    ) -> Result<Self, LikelihoodError> {
        let observations = cohort
            .iter()
            .map(|s| {
                let curve = tables.match_subject(s, s.follow_up)?;
                Observation::from_curve(s.id.clone(), s.follow_up, s.event, &curve)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(observations, copula, family)
    }

    pub fn with_bounds(mut self, bounds: ParamBounds) -> Result<Self, LikelihoodError> {
        let n = self.family.n_params();
        if bounds.lower.len() != n || bounds.upper.len() != n {
            return Err(LikelihoodError::Bounds {
                expected: n,
                got: bounds.lower.len().min(bounds.upper.len()),
            });
        }
        self.bounds = bounds;
        Ok(self)
    }

    /// Same data under a different copula.
    pub fn with_copula(&self, copula: CopulaSpec) -> Self {
        Self {
            copula,
            ..self.clone()
        }
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn copula(&self) -> CopulaSpec {
        self.copula
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn n_events(&self) -> usize {
        self.observations.iter().filter(|o| o.event).count()
    }

    pub fn model(&self, eta: &[f64]) -> Result<MarginalModel, LikelihoodError> {
        Ok(self.family.model(eta)?)
    }

    /// `S_T(X_i)` for one subject.
    pub fn all_cause_survival(&self, model: &MarginalModel, obs: &Observation) -> Result<f64, LikelihoodError> {
        let s = self.survival_term(&model.eval(obs.eval_time())?, obs);
        if s > 0.0 {
            Ok(s)
        } else {
            Err(LikelihoodError::Degenerate {
                id: obs.id.clone(),
                value: s,
            })
        }
    }

    /// `f_T(X_i)` for one subject, before flooring.
    pub fn all_cause_density(&self, model: &MarginalModel, obs: &Observation) -> Result<f64, LikelihoodError> {
        Ok(self.density_term(&model.eval(obs.eval_time())?, obs))
    }

    fn survival_term(&self, m: &crate::marginals::MarginalEval, obs: &Observation) -> f64 {
        match self.copula {
            CopulaSpec::Product => m.survival * obs.background_survival,
            spec => {
                m.survival + obs.background_survival - spec.complement_unchecked(m.cdf, obs.background_cdf)
            }
        }
        .min(1.0)
    }

    fn density_term(&self, m: &crate::marginals::MarginalEval, obs: &Observation) -> f64 {
        match self.copula {
            CopulaSpec::Product => m.pdf * obs.background_survival + obs.background_density * m.survival,
            spec => {
                let d = spec
                    .diagonal(m.cdf, obs.background_cdf, m.pdf, obs.background_density)
                    .expect("marginal CDFs lie in [0, 1]");
                m.pdf * (1.0 - d.partials.0) + obs.background_density * (1.0 - d.partials.1)
            }
        }
    }

    /// Full evaluation with diagnostics.
    pub fn evaluate(&self, eta: &[f64]) -> Result<LogLikelihood, LikelihoodError> {
        let model = self.model(eta)?;
        let mut value = 0.0;
        let mut floored = 0;
        let mut events = 0;
        for obs in &self.observations {
            let m = model.eval(obs.eval_time())?;
            let term = if obs.event {
                events += 1;
                let f = self.density_term(&m, obs);
                if !(f >= DENSITY_FLOOR) {
                    floored += 1;
                }
                f.max(DENSITY_FLOOR).ln()
            } else {
                let s = self.survival_term(&m, obs);
                if !(s > 0.0) {
                    return Err(LikelihoodError::Degenerate {
                        id: obs.id.clone(),
                        value: s,
                    });
                }
                s.ln()
            };
            if !term.is_finite() {
                return Err(LikelihoodError::NonFinite { id: obs.id.clone() });
            }
            value += term;
        }
        if events > 0 && floored as f64 > MAX_FLOORED_FRACTION * self.observations.len() as f64 {
            return Err(LikelihoodError::ModelInconsistency {
                floored,
                n: self.observations.len(),
            });
        }
        Ok(LogLikelihood { value, floored, events })
    }

    /// Log-likelihood, or `-inf` when any contribution is degenerate.
    pub fn log_likelihood(&self, eta: &[f64]) -> f64 {
        let Ok(model) = self.model(eta) else {
            return f64::NEG_INFINITY;
        };
        let mut value = 0.0;
        for obs in &self.observations {
            let Ok(m) = model.eval(obs.eval_time()) else {
                return f64::NEG_INFINITY;
            };
            let term = if obs.event {
                self.density_term(&m, obs).max(DENSITY_FLOOR).ln()
            } else {
                self.survival_term(&m, obs).ln()
            };
            if !term.is_finite() {
                log::debug!("non-finite log-likelihood term for subject {}", obs.id);
                return f64::NEG_INFINITY;
            }
            value += term;
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifetable::{LifeTable, Sex};

    fn weibull_bg() -> MarginalModel {
        MarginalModel::weibull(0.742, 0.693).unwrap()
    }

    fn obs(time: f64, event: bool) -> Observation {
        Observation::from_model(format!("s{time}"), time, event, &weibull_bg()).unwrap()
    }

    fn zero_bg(time: f64, event: bool) -> Observation {
        Observation {
            id: "z".into(),
            time,
            event,
            background_cdf: 0.0,
            background_survival: 1.0,
            background_density: 0.0,
        }
    }

    #[test]
    fn product_survival_factorizes() {
        let o = Observation {
            id: "a".into(),
            time: 1.0,
            event: false,
            background_cdf: 0.1,
            background_survival: 0.9,
            background_density: 0.05,
        };
        // S1(1) = 0.8 for a unit-shape Weibull with rate -ln 0.8
        let m = MarginalModel::weibull(-(0.8f64.ln()), 1.0).unwrap();
        let p = LikelihoodProblem::new(vec![o.clone()], CopulaSpec::Product, Family::Weibull).unwrap();
        assert!((p.all_cause_survival(&m, &o).unwrap() - 0.72).abs() < 1e-15);
    }

    #[test]
    fn survival_is_one_at_origin() {
        for copula in [CopulaSpec::Product, CopulaSpec::gumbel(2.0).unwrap(), CopulaSpec::clayton(3.0).unwrap()] {
            let o = obs(0.0, false);
            let p = LikelihoodProblem::new(vec![o.clone()], copula, Family::Weibull).unwrap();
            let m = MarginalModel::weibull(0.182, 1.609).unwrap();
            assert_eq!(p.all_cause_survival(&m, &o).unwrap(), 1.0);
        }
    }

    #[test]
    fn clayton_survival_at_medians() {
        // F1 = F2 = 0.5 at t = 1
        let o = Observation {
            id: "a".into(),
            time: 1.0,
            event: false,
            background_cdf: 0.5,
            background_survival: 0.5,
            background_density: 0.3,
        };
        let m = MarginalModel::weibull(std::f64::consts::LN_2, 1.0).unwrap();
        let p = LikelihoodProblem::new(vec![o.clone()], CopulaSpec::clayton(2.0).unwrap(), Family::Weibull).unwrap();
        let expected = 1.0 - 0.5 - 0.5 + 7f64.powf(-0.5);
        assert!((p.all_cause_survival(&m, &o).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.3780).abs() < 1e-4);
    }

    #[test]
    fn product_density_identity() {
        let m = MarginalModel::weibull(0.182, 1.609).unwrap();
        let o = obs(1.7, true);
        let p = LikelihoodProblem::new(vec![o.clone()], CopulaSpec::Product, Family::Weibull).unwrap();
        let (f1, f2) = (m.pdf(1.7).unwrap(), o.background_density);
        let (u1, u2) = (m.cdf(1.7).unwrap(), o.background_cdf);
        let expected = f1 + f2 - (u2 * f1 + u1 * f2);
        assert!((p.all_cause_density(&m, &o).unwrap() - expected).abs() < 1e-15);
        assert!((expected - (f1 * (1.0 - u2) + f2 * (1.0 - u1))).abs() < 1e-15);

        let z = zero_bg(1.7, true);
        assert!((p.all_cause_density(&m, &z).unwrap() - f1).abs() < 1e-16);
    }

    #[test]
    fn density_is_minus_survival_derivative() {
        let m = MarginalModel::weibull(0.182, 1.609).unwrap();
        for copula in [CopulaSpec::gumbel(2.0).unwrap(), CopulaSpec::clayton(2.0).unwrap(), CopulaSpec::Product] {
            let p = LikelihoodProblem::new(vec![obs(1.0, true)], copula, Family::Weibull).unwrap();
            let surv = |t: f64| p.all_cause_survival(&m, &obs(t, false)).unwrap();
            let h = 1e-6;
            let fd = -(surv(1.0 + h) - surv(1.0 - h)) / (2.0 * h);
            let f = p.all_cause_density(&m, &obs(1.0, true)).unwrap();
            assert!(((fd - f) / f).abs() < 1e-4, "{copula:?}: {fd} vs {f}");
        }
    }

    #[test]
    fn degenerate_background_single_subject() {
        let eta = [0.182, 1.609];
        let m = MarginalModel::weibull(eta[0], eta[1]).unwrap();
        let p = LikelihoodProblem::new(vec![zero_bg(2.0, true)], CopulaSpec::Product, Family::Weibull).unwrap();
        assert!((p.log_likelihood(&eta) - m.log_pdf(2.0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn duplicated_subjects_double_the_value() {
        let eta = [0.2, 1.3];
        for copula in [CopulaSpec::gumbel(2.0).unwrap(), CopulaSpec::clayton(1.0).unwrap()] {
            let one = LikelihoodProblem::new(vec![obs(1.3, true)], copula, Family::Weibull).unwrap();
            let two = LikelihoodProblem::new(vec![obs(1.3, true), obs(1.3, true)], copula, Family::Weibull).unwrap();
            assert_eq!(two.log_likelihood(&eta), 2.0 * one.log_likelihood(&eta));
        }
    }

    #[test]
    fn product_matches_independence_decomposition() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let eta = [rng.random_range(0.05..1.0), rng.random_range(0.5..3.0)];
            let cohort: Vec<Observation> = (0..30).map(|_| obs(rng.random_range(0.01..8.0), rng.random_bool(0.6))).collect();
            let p = LikelihoodProblem::new(cohort.clone(), CopulaSpec::Product, Family::Weibull).unwrap();
            let m = MarginalModel::weibull(eta[0], eta[1]).unwrap();
            let mut direct = 0.0;
            for o in &cohort {
                let (s1, f1) = (m.survival(o.time).unwrap(), m.pdf(o.time).unwrap());
                let (s2, f2) = (o.background_survival, o.background_density);
                direct += if o.event { (f1 * s2 + f2 * s1).ln() } else { (s1 * s2).ln() };
            }
            assert!((p.log_likelihood(&eta) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut cohort: Vec<Observation> = (1..40).map(|i| obs(i as f64 * 0.21, i % 3 != 0)).collect();
        let copula = CopulaSpec::gumbel(1.7).unwrap();
        let a = LikelihoodProblem::new(cohort.clone(), copula, Family::Weibull).unwrap().log_likelihood(&[0.2, 1.5]);
        cohort.reverse();
        cohort.swap(3, 17);
        let b = LikelihoodProblem::new(cohort, copula, Family::Weibull).unwrap().log_likelihood(&[0.2, 1.5]);
        assert!((a - b).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn clayton_joint_cdf_nondecreasing_in_theta() {
        for i in 1..20 {
            for j in 1..20 {
                let (u, v) = (i as f64 / 20.0, j as f64 / 20.0);
                let mut prev = CopulaSpec::Product.cdf(u, v).unwrap();
                for theta in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0] {
                    let c = CopulaSpec::clayton(theta).unwrap().cdf(u, v).unwrap();
                    assert!(c >= prev - 1e-14);
                    prev = c;
                }
            }
        }
    }

    #[test]
    fn gradient_is_smooth_around_the_optimum() {
        // data simulated by Weibull quantiles on an evenly spaced grid
        let m = MarginalModel::weibull(0.3, 1.4).unwrap();
        let cohort: Vec<Observation> = (1..200)
            .map(|i| zero_bg(m.quantile(i as f64 / 200.0).unwrap(), true))
            .collect();
        let p = LikelihoodProblem::new(cohort, CopulaSpec::gumbel(1.5).unwrap(), Family::Weibull).unwrap();
        let grad_lambda = |l: f64| {
            let h = 1e-6;
            (p.log_likelihood(&[l + h, 1.4]) - p.log_likelihood(&[l - h, 1.4])) / (2.0 * h)
        };
        let grid: Vec<f64> = (0..41).map(|k| 0.2 + 0.005 * k as f64).collect();
        let g: Vec<f64> = grid.iter().map(|&l| grad_lambda(l)).collect();
        // strictly decreasing score: a single sign change, no chatter
        assert!(g.windows(2).all(|w| w[1] < w[0] + 1e-6));
        let changes = g.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        assert_eq!(changes, 1);
    }

    #[test]
    fn coverage_is_checked_when_matching() {
        let table = LifeTable::from_rates(Sex::F, (1990..=1991).flat_map(|y| (50..=52).map(move |a| (y, a, 0.01)))).unwrap();
        let tables = LifeTables::new(Some(table), None);
        let ok = SubjectRecord {
            id: "ok".into(),
            age_at_diagnosis: 50.5,
            sex: Sex::F,
            diagnosis_year: 1990.2,
            follow_up: 1.0,
            event: true,
        };
        let p = LikelihoodProblem::from_cohort(&[ok.clone()], &tables, CopulaSpec::Product, Family::Weibull).unwrap();
        assert_eq!(p.observations().len(), 1);
        let late = SubjectRecord { follow_up: 3.0, ..ok.clone() };
        assert!(matches!(
            LikelihoodProblem::from_cohort(&[late], &tables, CopulaSpec::Product, Family::Weibull),
            Err(LikelihoodError::LifeTable(LifeTableError::Coverage { .. }))
        ));
        let male = SubjectRecord { sex: Sex::M, ..ok };
        assert!(LikelihoodProblem::from_cohort(&[male], &tables, CopulaSpec::Product, Family::Weibull).is_err());
    }

    #[test]
    fn evaluate_reports_degenerate_survival() {
        // a censored subject whose T1 survival underflows
        let o = Observation {
            id: "late".into(),
            time: 1e4,
            event: false,
            background_cdf: 1.0,
            background_survival: 0.0,
            background_density: 0.0,
        };
        let p = LikelihoodProblem::new(vec![o], CopulaSpec::gumbel(2.0).unwrap(), Family::Weibull).unwrap();
        assert!(matches!(p.evaluate(&[1.0, 2.0]), Err(LikelihoodError::Degenerate { .. })));
        assert_eq!(p.log_likelihood(&[1.0, 2.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn evaluate_and_log_likelihood_agree() {
        let cohort: Vec<Observation> = (1..25).map(|i| obs(i as f64 * 0.3, i % 4 != 0)).collect();
        let p = LikelihoodProblem::new(cohort, CopulaSpec::clayton(2.0).unwrap(), Family::ExpWeibull).unwrap();
        let eta = [2.0, 1.5, 0.8];
        let e = p.evaluate(&eta).unwrap();
        assert_eq!(e.value, p.log_likelihood(&eta));
        assert_eq!(e.floored, 0);
        assert_eq!(e.events, p.n_events());
    }
}
