//! Monte-Carlo studies of the estimator: dependent latent failure times,
//! uniform censoring calibrated to a target fraction, repeated fits and
//! bias / variance / coverage summaries.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::copulas::{CopulaError, CopulaFamily, CopulaSpec};
use crate::inference::{self, FitOptions, InferenceError};
use crate::likelihood::{LikelihoodError, LikelihoodProblem, Observation, ParamBounds};
use crate::marginals::{DistributionError, Family, MarginalModel};

/// Fits may fail in at most this fraction of replications.
pub const MAX_FAILURE_FRACTION: f64 = 0.02;

/// Search box for misspecified fits, where no truth is available to centre on.
pub const MISSPECIFIED_START_BOX: (f64, f64) = (0.01, 10.0);

const CALIBRATION_STREAM: u64 = u64::MAX;
const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("censoring calibration failed: {0}")]
    Calibration(String),
    #[error("{failures} of {replications} replications failed (limit {:.0}%)", MAX_FAILURE_FRACTION * 100.0)]
    TooManyFailures {
        failures: usize,
        replications: usize,
        report: Box<SimulationReport>,
    },
    #[error("study file: {0}")]
    StudyFile(String),
    #[error(transparent)]
    Copula(#[from] CopulaError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// Which latent time is estimated; the other margin is held at its truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Margin {
    T1,
    T2,
}

impl Margin {
    pub fn name(self) -> &'static str {
        match self {
            Margin::T1 => "T1",
            Margin::T2 => "T2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub replications: usize,
    pub copula: CopulaFamily,
    pub tau: f64,
    pub t1_model: MarginalModel,
    pub t2_model: MarginalModel,
    pub censor_target: f64,
    pub seed: u64,
    /// Defaults to the family of the estimated margin.
    pub fit_family: Option<Family>,
    pub estimate: Margin,
    pub starts: usize,
    /// Starting values are drawn log-uniformly from `[truth / s, truth * s]`.
    pub start_spread: f64,
    /// Overrides the start box, e.g. for misspecified fits.
    pub start_box: Option<ParamBounds>,
    pub calibration_samples: usize,
    /// Net-survival levels whose true times are used in misspecification reports.
    pub quantile_levels: Vec<f64>,
}

impl SimulationConfig {
    /// Paper-style defaults around the given margins.
    pub fn new(t1_model: MarginalModel, t2_model: MarginalModel) -> Self {
        Self {
            n: 1000,
            replications: 200,
            copula: CopulaFamily::Gumbel,
            tau: 0.0,
            t1_model,
            t2_model,
            censor_target: 0.1,
            seed: 1,
            fit_family: None,
            estimate: Margin::T1,
            starts: 3,
            start_spread: 2.0,
            start_box: None,
            calibration_samples: 100_000,
            quantile_levels: vec![0.25, 0.5, 0.75],
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::Config(m.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if !(self.censor_target >= 0.0 && self.censor_target < 1.0) {
            return bad("censor_target must lie in [0, 1)");
        }
        if self.starts == 0 {
            return bad("starts must be at least 1");
        }
        if !(self.start_spread.is_finite() && self.start_spread >= 1.0) {
            return bad("start_spread must be at least 1");
        }
        if self.calibration_samples == 0 {
            return bad("calibration_samples must be positive");
        }
        if self.quantile_levels.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return bad("quantile levels must lie in (0, 1)");
        }
        self.t1_model.validate()?;
        self.t2_model.validate()?;
        self.copula_spec()?;
        Ok(())
    }

    pub fn copula_spec(&self) -> Result<CopulaSpec, SimulationError> {
        Ok(CopulaSpec::from_tau(self.copula, self.tau)?)
    }

    pub fn target_model(&self) -> &MarginalModel {
        match self.estimate {
            Margin::T1 => &self.t1_model,
            Margin::T2 => &self.t2_model,
        }
    }

    pub fn other_model(&self) -> &MarginalModel {
        match self.estimate {
            Margin::T1 => &self.t2_model,
            Margin::T2 => &self.t1_model,
        }
    }

    pub fn resolved_fit_family(&self) -> Result<Family, SimulationError> {
        self.fit_family
            .or_else(|| self.target_model().family())
            .ok_or_else(|| SimulationError::Config("fit_family is required for a piecewise margin".into()))
    }

    /// True when the fitted family matches the generating one.
    pub fn correctly_specified(&self) -> bool {
        self.resolved_fit_family().ok() == self.target_model().family()
    }

    fn fit_options(&self, family: Family) -> FitOptions {
        let start_box = self.start_box.clone().unwrap_or_else(|| {
            if self.correctly_specified() {
                let truth = self.target_model().params();
                ParamBounds {
                    lower: truth.iter().map(|v| v / self.start_spread).collect(),
                    upper: truth.iter().map(|v| v * self.start_spread).collect(),
                }
            } else {
                ParamBounds::uniform(family.n_params(), MISSPECIFIED_START_BOX.0, MISSPECIFIED_START_BOX.1)
            }
        });
        FitOptions {
            starts: self.starts,
            start_box: Some(start_box),
            ..FitOptions::default()
        }
    }
}

/// Generator for replication `index`; independent streams of one seeded key.
pub fn replication_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedSubject {
    pub t1: f64,
    pub t2: f64,
    pub censor: f64,
    pub time: f64,
    pub event: bool,
}

const U_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

fn latent_pair<R: Rng + ?Sized>(copula: &CopulaSpec, t1: &MarginalModel, t2: &MarginalModel, rng: &mut R) -> Result<(f64, f64), DistributionError> {
    let (u1, u2) = copula.sample_pair(rng);
    Ok((t1.quantile(u1.min(U_MAX))?, t2.quantile(u2.min(U_MAX))?))
}

/// One synthetic cohort with censoring uniform on `(0, gamma)`.
pub fn generate_cohort(config: &SimulationConfig, gamma: f64, replication_index: u64) -> Result<Vec<SimulatedSubject>, SimulationError> {
    let copula = config.copula_spec()?;
    let mut rng = replication_rng(config.seed, replication_index);
    (0..config.n)
        .map(|_| {
            let (t1, t2) = latent_pair(&copula, &config.t1_model, &config.t2_model, &mut rng)?;
            let censor = rng.random::<f64>() * gamma;
            let t = t1.min(t2);
            Ok(SimulatedSubject {
                t1,
                t2,
                censor,
                time: t.min(censor),
                event: t <= censor,
            })
        })
        .collect()
}

/// Upper bound `gamma` of the uniform censoring distribution giving the
/// requested censored fraction, found by bisection on a Monte-Carlo sample of
/// the all-cause failure time.
pub fn calibrate_censoring(config: &SimulationConfig) -> Result<f64, SimulationError> {
    let target = config.censor_target;
    if !(target > 0.0 && target < 1.0) {
        return Err(SimulationError::Calibration(format!(
            "target {target} is unreachable with uniform censoring"
        )));
    }
    let copula = config.copula_spec()?;
    let mut rng = replication_rng(config.seed, CALIBRATION_STREAM);
    let sample = (0..config.calibration_samples)
        .map(|_| latent_pair(&copula, &config.t1_model, &config.t2_model, &mut rng).map(|(a, b)| a.min(b)))
        .collect::<Result<Vec<f64>, _>>()?;
    // P(C < T) = E[min(T, gamma)] / gamma, decreasing in gamma
    let censored = |gamma: f64| sample.iter().map(|t| t.min(gamma)).sum::<f64>() / (gamma * sample.len() as f64);

    let mean = sample.iter().sum::<f64>() / sample.len() as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(SimulationError::Calibration("degenerate failure-time sample".into()));
    }
    let (mut lo, mut hi) = (mean * 1e-6, mean);
    while censored(hi) > target {
        hi *= 2.0;
        if hi > mean * 1e12 {
            return Err(SimulationError::Calibration(format!("no gamma reaches {target}")));
        }
    }
    while censored(lo) < target {
        lo /= 2.0;
        if lo < mean * 1e-300 {
            return Err(SimulationError::Calibration(format!("no gamma reaches {target}")));
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if censored(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-12 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Per-replication summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub index: usize,
    pub censored_fraction: f64,
    pub eta_hat: Option<Vec<f64>>,
    pub variances: Option<Vec<f64>>,
    pub survival: Option<Vec<f64>>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterRow {
    pub name: &'static str,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub modb: f64,
    /// Absent with fewer than two successful replications.
    pub emp: Option<f64>,
    pub cp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileRow {
    /// True net survival at `time`.
    pub level: f64,
    pub time: f64,
    pub mean: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub copula: CopulaFamily,
    pub tau: f64,
    pub n: usize,
    pub censor_target: f64,
    pub gamma: f64,
    pub realized_censoring: f64,
    pub estimate: Margin,
    pub fit_family: Family,
    pub replications: usize,
    pub successes: usize,
    pub failures: usize,
    pub parameters: Vec<ParameterRow>,
    pub quantiles: Vec<QuantileRow>,
    pub replicates: Vec<ReplicateRecord>,
}

fn one_replication(config: &SimulationConfig, gamma: f64, index: usize, family: Family, options: &FitOptions, times: &[f64]) -> ReplicateRecord {
    let mut record = ReplicateRecord {
        index,
        censored_fraction: f64::NAN,
        eta_hat: None,
        variances: None,
        survival: None,
        failure: None,
    };
    let outcome = (|| -> Result<(), String> {
        let cohort = generate_cohort(config, gamma, index as u64).map_err(|e| e.to_string())?;
        record.censored_fraction = cohort.iter().filter(|s| !s.event).count() as f64 / cohort.len() as f64;
        let copula = config.copula_spec().map_err(|e| e.to_string())?;
        let observations = cohort
            .iter()
            .enumerate()
            .map(|(i, s)| Observation::from_model(i.to_string(), s.time, s.event, config.other_model()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let problem = LikelihoodProblem::new(observations, copula, family).map_err(|e| e.to_string())?;
        let mut rng = replication_rng(config.seed ^ 0x5157_4152_5453, index as u64);
        let fit = inference::fit(&problem, options, &mut rng).map_err(|e: InferenceError| e.to_string())?;
        if !fit.converged {
            return Err("optimizer did not converge".into());
        }
        if !fit.positive_definite {
            return Err("observed information is not positive definite".into());
        }
        record.variances = Some(fit.covariance().variances());
        if !times.is_empty() {
            let model = family.model(&fit.eta_hat).map_err(|e| e.to_string())?;
            record.survival = Some(times.iter().map(|&t| model.survival(t)).collect::<Result<_, _>>().map_err(|e| e.to_string())?);
        }
        record.eta_hat = Some(fit.eta_hat);
        Ok(())
    })();
    if let Err(message) = outcome {
        log::debug!("replication {index} failed: {message}");
        record.failure = Some(message);
        record.variances = None;
        record.survival = None;
    }
    record
}

fn run_replications(config: &SimulationConfig, with_quantiles: bool) -> Result<SimulationReport, SimulationError> {
    config.validate()?;
    let family = config.resolved_fit_family()?;
    let gamma = calibrate_censoring(config)?;
    let options = config.fit_options(family);
    let truth_times: Vec<f64> = if with_quantiles {
        config
            .quantile_levels
            .iter()
            .map(|&p| config.target_model().quantile(1.0 - p))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    let replicates: Vec<ReplicateRecord> = (0..config.replications)
        .into_par_iter()
        .map(|i| one_replication(config, gamma, i, family, &options, &truth_times))
        .collect();

    let ok: Vec<&ReplicateRecord> = replicates.iter().filter(|r| r.failure.is_none()).collect();
    let successes = ok.len();
    let failures = replicates.len() - successes;
    let realized_censoring = replicates.iter().map(|r| r.censored_fraction).filter(|v| v.is_finite()).sum::<f64>()
        / replicates.iter().filter(|r| r.censored_fraction.is_finite()).count().max(1) as f64;

    let mut parameters = Vec::new();
    if !with_quantiles && successes > 0 {
        let truth = config.target_model().params();
        for (j, (&name, &truth)) in family.param_names().iter().zip(&truth).enumerate() {
            let est: Vec<f64> = ok.iter().map(|r| r.eta_hat.as_ref().expect("successful")[j]).collect();
            let var: Vec<f64> = ok.iter().map(|r| r.variances.as_ref().expect("successful")[j]).collect();
            let mean = mean(&est);
            let covered = est
                .iter()
                .zip(&var)
                .filter(|(e, v)| **v >= 0.0 && (*e - truth).abs() <= Z_95 * v.sqrt())
                .count();
            parameters.push(ParameterRow {
                name,
                truth,
                mean,
                bias: mean - truth,
                modb: self::mean(&var),
                emp: sample_variance(&est),
                cp: covered as f64 / successes as f64,
            });
        }
    }
    let mut quantiles = Vec::new();
    if with_quantiles && successes > 0 {
        for (k, (&level, &time)) in config.quantile_levels.iter().zip(&truth_times).enumerate() {
            let s: Vec<f64> = ok.iter().map(|r| r.survival.as_ref().expect("successful")[k]).collect();
            let m = mean(&s);
            quantiles.push(QuantileRow {
                level,
                time,
                mean: m,
                bias: m - level,
            });
        }
    }

    let report = SimulationReport {
        copula: config.copula,
        tau: config.tau,
        n: config.n,
        censor_target: config.censor_target,
        gamma,
        realized_censoring,
        estimate: config.estimate,
        fit_family: family,
        replications: config.replications,
        successes,
        failures,
        parameters,
        quantiles,
        replicates,
    };
    if failures as f64 > MAX_FAILURE_FRACTION * config.replications as f64 || successes == 0 {
        return Err(SimulationError::TooManyFailures {
            failures,
            replications: config.replications,
            report: Box::new(report),
        });
    }
    Ok(report)
}

/// Bias, model-based and empirical variance and Wald coverage of the fitted
/// parameters under a correctly specified family.
pub fn run_study(config: &SimulationConfig) -> Result<SimulationReport, SimulationError> {
    if !config.correctly_specified() {
        return Err(SimulationError::Config(
            "fit family differs from the generating family; use the misspecification study".into(),
        ));
    }
    run_replications(config, false)
}

/// Mean fitted net survival at the times where the true net survival equals
/// each of `config.quantile_levels`.
pub fn run_misspecification_study(config: &SimulationConfig) -> Result<SimulationReport, SimulationError> {
    run_replications(config, true)
}

/// Dispatches on whether the fitted family matches the generating one.
pub fn run_config(config: &SimulationConfig) -> Result<SimulationReport, SimulationError> {
    if config.correctly_specified() {
        run_study(config)
    } else {
        run_misspecification_study(config)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some(v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
}

pub const PARAMETER_HEADER: [&str; 17] = [
    "copula", "tau", "n", "censoring", "gamma", "realized_censoring", "estimate", "fit_family", "parameter", "truth", "mean",
    "bias", "modb", "emp", "cp", "successes", "failures",
];

pub const QUANTILE_HEADER: [&str; 15] = [
    "copula", "tau", "n", "censoring", "gamma", "realized_censoring", "estimate", "fit_family", "level", "time", "mean",
    "bias", "replications", "successes", "failures",
];

const ABSENT: &str = "NA";

impl SimulationReport {
    fn prefix(&self) -> Vec<String> {
        vec![
            self.copula.name().to_string(),
            self.tau.to_string(),
            self.n.to_string(),
            self.censor_target.to_string(),
            self.gamma.to_string(),
            self.realized_censoring.to_string(),
            self.estimate.name().to_string(),
            self.fit_family.name().to_string(),
        ]
    }

    fn parameter_records(&self) -> Vec<Vec<String>> {
        self.parameters
            .iter()
            .map(|r| {
                let mut rec = self.prefix();
                rec.extend([
                    r.name.to_string(),
                    r.truth.to_string(),
                    r.mean.to_string(),
                    r.bias.to_string(),
                    r.modb.to_string(),
                    r.emp.map_or(ABSENT.to_string(), |v| v.to_string()),
                    r.cp.to_string(),
                    self.successes.to_string(),
                    self.failures.to_string(),
                ]);
                rec
            })
            .collect()
    }

    fn quantile_records(&self) -> Vec<Vec<String>> {
        self.quantiles
            .iter()
            .map(|r| {
                let mut rec = self.prefix();
                rec.extend([
                    r.level.to_string(),
                    r.time.to_string(),
                    r.mean.to_string(),
                    r.bias.to_string(),
                    self.replications.to_string(),
                    self.successes.to_string(),
                    self.failures.to_string(),
                ]);
                rec
            })
            .collect()
    }

    /// Parameter rows, or quantile rows for a misspecification study, as CSV.
    pub fn to_csv(&self) -> String {
        reports_to_csv(std::slice::from_ref(self))
    }

    pub fn to_text(&self) -> String {
        reports_to_text(std::slice::from_ref(self))
    }
}

/// Combined CSV for a batch of reports of the same kind.
pub fn reports_to_csv(reports: &[SimulationReport]) -> String {
    let quantile_form = reports.iter().any(|r| !r.quantiles.is_empty());
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: &[&str] = if quantile_form { &QUANTILE_HEADER } else { &PARAMETER_HEADER };
    w.write_record(header).expect("in-memory write");
    for r in reports {
        let rows = if quantile_form { r.quantile_records() } else { r.parameter_records() };
        for row in rows {
            w.write_record(&row).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Aligned plain-text table; bias and variances are scaled by 10^3.
pub fn reports_to_text(reports: &[SimulationReport]) -> String {
    let mut out = String::new();
    let quantile_form = reports.iter().any(|r| !r.quantiles.is_empty());
    if quantile_form {
        let _ = writeln!(
            out,
            "{:<8} {:>5} {:>6} {:>7} {:>8} {:>8} {:>8} {:>11} {:>11} {:>11}",
            "copula", "tau", "N", "cens", "S.25", "S.50", "S.75", "bias.25e-3", "bias.50e-3", "bias.75e-3"
        );
        for r in reports {
            let get = |k: usize| r.quantiles.get(k);
            let s = |k: usize| get(k).map_or(ABSENT.to_string(), |q| format!("{:.3}", q.mean));
            let b = |k: usize| get(k).map_or(ABSENT.to_string(), |q| format!("{:.2}", q.bias * 1e3));
            let _ = writeln!(
                out,
                "{:<8} {:>5.2} {:>6} {:>7.3} {:>8} {:>8} {:>8} {:>11} {:>11} {:>11}",
                r.copula.name(),
                r.tau,
                r.n,
                r.realized_censoring,
                s(0),
                s(1),
                s(2),
                b(0),
                b(1),
                b(2)
            );
        }
        return out;
    }
    let _ = writeln!(
        out,
        "{:<8} {:>5} {:>6} {:>7} {:>3} {:>7} {:>8} {:>10} {:>10} {:>10} {:>6} {:>5}",
        "copula", "tau", "N", "cens", "T", "param", "mean", "bias e-3", "ModB e-3", "EMP e-3", "CP", "fail"
    );
    for r in reports {
        for p in &r.parameters {
            let _ = writeln!(
                out,
                "{:<8} {:>5.2} {:>6} {:>7.3} {:>3} {:>7} {:>8.3} {:>10.3} {:>10.3} {:>10} {:>6.3} {:>5}",
                r.copula.name(),
                r.tau,
                r.n,
                r.realized_censoring,
                r.estimate.name(),
                p.name,
                p.mean,
                p.bias * 1e3,
                p.modb * 1e3,
                p.emp.map_or(ABSENT.to_string(), |v| format!("{:.3}", v * 1e3)),
                p.cp,
                r.failures
            );
        }
    }
    out
}

/// A grid of studies read from a TOML file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub name: Option<String>,
    pub seed: u64,
    pub replications: usize,
    pub copula: CopulaFamily,
    pub n: Vec<usize>,
    pub tau: Vec<f64>,
    pub censoring: Vec<f64>,
    #[serde(default = "default_estimates")]
    pub estimate: Vec<Margin>,
    pub t1: MarginalModel,
    pub t2: MarginalModel,
    pub fit_family: Option<Family>,
    pub starts: Option<usize>,
    pub start_spread: Option<f64>,
    pub calibration_samples: Option<usize>,
    pub quantile_levels: Option<Vec<f64>>,
}

fn default_estimates() -> Vec<Margin> {
    vec![Margin::T1]
}

impl StudyFile {
    pub fn parse(text: &str) -> Result<Self, SimulationError> {
        let file: StudyFile = toml::from_str(text).map_err(|e| SimulationError::StudyFile(e.to_string()))?;
        if file.n.is_empty() || file.tau.is_empty() || file.censoring.is_empty() || file.estimate.is_empty() {
            return Err(SimulationError::StudyFile("n, tau, censoring and estimate must be nonempty".into()));
        }
        for cfg in file.expand() {
            cfg.validate()?;
        }
        Ok(file)
    }

    /// One configuration per (estimate, tau, n, censoring) cell, in that
    /// nesting order. Every cell uses the file's seed.
    pub fn expand(&self) -> Vec<SimulationConfig> {
        let mut base = SimulationConfig::new(self.t1.clone(), self.t2.clone());
        base.replications = self.replications;
        base.copula = self.copula;
        base.seed = self.seed;
        base.fit_family = self.fit_family;
        if let Some(s) = self.starts {
            base.starts = s;
        }
        if let Some(s) = self.start_spread {
            base.start_spread = s;
        }
        if let Some(m) = self.calibration_samples {
            base.calibration_samples = m;
        }
        if let Some(q) = &self.quantile_levels {
            base.quantile_levels = q.clone();
        }
        let mut out = Vec::new();
        for &estimate in &self.estimate {
            for &tau in &self.tau {
                for &n in &self.n {
                    for &censor_target in &self.censoring {
                        out.push(SimulationConfig {
                            estimate,
                            tau,
                            n,
                            censor_target,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_unit() -> MarginalModel {
        MarginalModel::weibull(1.0, 1.0).unwrap()
    }

    fn paper_weibulls() -> SimulationConfig {
        SimulationConfig::new(
            MarginalModel::weibull(0.182, 1.609).unwrap(),
            MarginalModel::weibull(0.742, 0.693).unwrap(),
        )
    }

    #[test]
    fn symmetric_independent_margins() {
        let mut c = SimulationConfig::new(exp_unit(), exp_unit());
        c.n = 20_000;
        c.tau = 0.0;
        let cohort = generate_cohort(&c, 1e9, 0).unwrap();
        let p = cohort.iter().filter(|s| s.t1 < s.t2).count() as f64 / c.n as f64;
        assert!((p - 0.5).abs() < 0.02);
        let censored = cohort.iter().filter(|s| !s.event).count();
        assert!(censored as f64 / (c.n as f64) < 1e-3);
    }

    #[test]
    fn generated_pairs_carry_the_dependence() {
        let mut c = paper_weibulls();
        c.n = 3000;
        c.tau = 0.5;
        let cohort = generate_cohort(&c, 1e9, 4).unwrap();
        let mut concordant = 0i64;
        let mut total = 0i64;
        for i in 0..cohort.len() {
            for j in (i + 1)..cohort.len() {
                let s = (cohort[i].t1 - cohort[j].t1) * (cohort[i].t2 - cohort[j].t2);
                concordant += if s > 0.0 { 1 } else { -1 };
                total += 1;
            }
        }
        assert!((concordant as f64 / total as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn cohorts_are_reproducible() {
        let c = paper_weibulls();
        assert_eq!(generate_cohort(&c, 3.0, 7).unwrap(), generate_cohort(&c, 3.0, 7).unwrap());
        assert_ne!(generate_cohort(&c, 3.0, 7).unwrap(), generate_cohort(&c, 3.0, 8).unwrap());
    }

    #[test]
    fn calibration_matches_exponential_closed_form() {
        // with T ~ Exp(1), P(C < T) = (1 - e^{-gamma}) / gamma
        let mut c = SimulationConfig::new(exp_unit(), MarginalModel::weibull(1e-12, 1.0).unwrap());
        c.censor_target = 0.5;
        let gamma = calibrate_censoring(&c).unwrap();
        let (mut lo, mut hi) = (0.1f64, 10.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if (1.0 - (-mid).exp()) / mid > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 1.5936).abs() < 1e-4);
        assert!((gamma - lo).abs() < 0.03, "{gamma} vs {lo}");
    }

    #[test]
    fn calibration_hits_target_and_is_monotone() {
        let mut c = paper_weibulls();
        c.tau = 0.5;
        let mut prev = f64::INFINITY;
        for target in [0.1, 0.3, 0.5] {
            c.censor_target = target;
            let gamma = calibrate_censoring(&c).unwrap();
            assert!(gamma < prev);
            prev = gamma;
            c.n = 20_000;
            let cohort = generate_cohort(&c, gamma, 1).unwrap();
            let frac = cohort.iter().filter(|s| !s.event).count() as f64 / c.n as f64;
            assert!((frac - target).abs() < 0.015, "{target}: {frac}");
        }
        c.censor_target = 0.0;
        assert!(matches!(calibrate_censoring(&c), Err(SimulationError::Calibration(_))));
    }

    #[test]
    fn single_replication_has_no_empirical_variance() {
        let mut c = paper_weibulls();
        c.n = 300;
        c.replications = 1;
        let r = run_study(&c).unwrap();
        assert_eq!(r.parameters.len(), 2);
        assert!(r.parameters.iter().all(|p| p.emp.is_none()));
        assert!(r.to_csv().lines().nth(1).unwrap().contains(",NA,"));
    }

    #[test]
    fn report_is_reproducible() {
        let mut c = paper_weibulls();
        c.n = 200;
        c.replications = 6;
        c.tau = 0.25;
        let a = run_study(&c).unwrap();
        let b = run_study(&c).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a, b);
        let csv = a.to_csv();
        assert_eq!(csv.lines().next().unwrap(), PARAMETER_HEADER.join(","));
        assert_eq!(csv.lines().count(), 3);
        assert!(a.parameters.iter().all(|p| p.emp.unwrap() >= 0.0 && (0.0..=1.0).contains(&p.cp)));
    }

    #[test]
    fn misspecified_study_reports_quantiles() {
        let mut c = SimulationConfig::new(
            MarginalModel::exp_weibull(3.0, 4.0, 0.1).unwrap(),
            MarginalModel::weibull(0.742, 0.693).unwrap(),
        );
        c.fit_family = Some(Family::Weibull);
        c.n = 300;
        c.replications = 3;
        c.censor_target = 0.16;
        assert!(matches!(run_study(&c), Err(SimulationError::Config(_))));
        let r = run_misspecification_study(&c).unwrap();
        assert_eq!(r.quantiles.len(), 3);
        assert!(r.parameters.is_empty());
        for q in &r.quantiles {
            let truth = c.t1_model.survival(q.time).unwrap();
            assert!((truth - q.level).abs() < 1e-10);
        }
        assert!(r.to_csv().starts_with(&QUANTILE_HEADER.join(",")));
    }

    #[test]
    fn study_file_expands_grid() {
        let text = r#"
            seed = 9
            replications = 2
            copula = "gumbel"
            n = [100, 200]
            tau = [0.0, 0.5]
            censoring = [0.1]
            estimate = ["t1", "t2"]
            starts = 2

            [t1]
            family = "weibull"
            lambda = 0.182
            alpha = 1.609

            [t2]
            family = "weibull"
            lambda = 0.742
            alpha = 0.693
        "#;
        let f = StudyFile::parse(text).unwrap();
        let cells = f.expand();
        assert_eq!(cells.len(), 8);
        assert_eq!((cells[0].estimate, cells[0].tau, cells[0].n), (Margin::T1, 0.0, 100));
        assert_eq!((cells[7].estimate, cells[7].tau, cells[7].n), (Margin::T2, 0.5, 200));
        assert!(cells.iter().all(|c| c.starts == 2 && c.seed == 9));

        assert!(StudyFile::parse(&text.replace("replications = 2", "replications = 0")).is_err());
        assert!(StudyFile::parse(&text.replace("seed = 9", "seed = 9\nbogus = 1")).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = paper_weibulls();
        c.censor_target = 1.0;
        assert!(c.validate().is_err());
        let mut c = paper_weibulls();
        c.replications = 0;
        assert!(c.validate().is_err());
        let mut c = paper_weibulls();
        c.tau = -0.1;
        assert!(c.validate().is_err());
    }
}
