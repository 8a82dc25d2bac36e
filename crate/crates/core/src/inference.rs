//! Maximum-likelihood fitting, observed information, delta-method standard
//! errors and the sweep over assumed dependence levels.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::copulas::{CopulaError, CopulaFamily, CopulaSpec};
use crate::likelihood::{LikelihoodError, LikelihoodProblem, ParamBounds};
use crate::marginals::DistributionError;
use crate::optim::{self, NelderMeadOptions};

/// Relative finite-difference step for the Hessian and the survival gradient.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("cohort has no events; the marginal is not identified")]
    NoEvents,
    #[error("at least one start is required")]
    NoStarts,
    #[error("all {} starts failed to reach a finite log-likelihood", traces.len())]
    AllStartsFailed { traces: Vec<StartTrace> },
    #[error("non-finite second difference at {eta:?} after step halving")]
    Hessian { eta: Vec<f64> },
    #[error("time grid entry {0} is not a finite non-negative number")]
    InvalidTime(f64),
    #[error("start box needs {expected} entries with 0 < lower <= upper")]
    StartBox { expected: usize },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Copula(#[from] CopulaError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub starts: usize,
    /// Box the starting points are drawn from, log-uniformly. Defaults to the
    /// problem's parameter bounds.
    pub start_box: Option<ParamBounds>,
    pub optimizer: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            start_box: None,
            optimizer: NelderMeadOptions::default(),
        }
    }
}

/// Outcome of one optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct StartTrace {
    pub index: usize,
    pub start: Vec<f64>,
    pub eta: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub eta_hat: Vec<f64>,
    pub loglik: f64,
    pub info_matrix: DMatrix<f64>,
    pub converged: bool,
    pub n_starts: usize,
    pub best_start_index: usize,
    pub positive_definite: bool,
    /// Some component of the estimate sits within 1% of a bound.
    pub at_boundary: bool,
    pub floored: usize,
    pub traces: Vec<StartTrace>,
    pub tau: f64,
}

impl FitResult {
    pub fn covariance(&self) -> Covariance {
        covariance(&self.info_matrix)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    /// The information was not positive definite and a pseudo-inverse was used.
    pub singular: bool,
}

impl Covariance {
    pub fn variances(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSurvivalEstimate {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub std_err: Vec<f64>,
    pub tau: f64,
    pub warning: Option<String>,
}

fn draw_start<R: Rng + ?Sized>(rng: &mut R, bounds: &ParamBounds) -> Vec<f64> {
    bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(lo, hi)| {
            let (a, b) = (lo.ln(), hi.ln());
            if b > a {
                rng.random_range(a..b)
            } else {
                a
            }
        })
        .collect()
}

/// Multi-start Nelder–Mead on log-parameters; the best start wins, ties going
/// to the lower start index.
pub fn fit<R: Rng + ?Sized>(problem: &LikelihoodProblem, options: &FitOptions, rng: &mut R) -> Result<FitResult, InferenceError> {
    if options.starts == 0 {
        return Err(InferenceError::NoStarts);
    }
    if problem.n_events() == 0 {
        return Err(InferenceError::NoEvents);
    }
    let bounds = problem.bounds();
    let p = problem.family().n_params();
    let start_box = options.start_box.as_ref().unwrap_or(bounds);
    let box_ok = start_box.lower.len() == p
        && start_box.upper.len() == p
        && start_box.lower.iter().zip(&start_box.upper).all(|(l, u)| *l > 0.0 && l <= u);
    if !box_ok {
        return Err(InferenceError::StartBox { expected: p });
    }
    let starts: Vec<Vec<f64>> = (0..options.starts).map(|_| draw_start(rng, start_box)).collect();

    let objective = |x: &[f64]| {
        let eta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        if bounds.contains(&eta) {
            problem.log_likelihood(&eta)
        } else {
            f64::NEG_INFINITY
        }
    };
    let traces: Vec<StartTrace> = starts
        .par_iter()
        .enumerate()
        .map(|(index, x0)| {
            let out = optim::maximize(objective, x0, &options.optimizer);
            StartTrace {
                index,
                start: x0.iter().map(|v| v.exp()).collect(),
                eta: out.x.iter().map(|v| v.exp()).collect(),
                loglik: out.value,
                iterations: out.iterations,
                converged: out.converged,
            }
        })
        .collect();

    let best = traces
        .iter()
        .filter(|t| t.loglik.is_finite())
        .max_by(|a, b| {
            (a.converged, a.loglik)
                .partial_cmp(&(b.converged, b.loglik))
                .expect("finite values")
                .then(b.index.cmp(&a.index))
        })
        .cloned();
    let Some(best) = best else {
        return Err(InferenceError::AllStartsFailed { traces });
    };

    let diagnostics = problem.evaluate(&best.eta)?;
    let info_matrix = observed_information(problem, &best.eta)?;
    let positive_definite = info_matrix.clone().cholesky().is_some();
    let at_boundary = best
        .eta
        .iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .any(|(x, (lo, hi))| (x / lo).ln() < 0.01 || (hi / x).ln() < 0.01);
    if !best.converged {
        log::warn!("best start {} did not converge", best.index);
    }
    Ok(FitResult {
        eta_hat: best.eta.clone(),
        loglik: best.loglik,
        info_matrix,
        converged: best.converged,
        n_starts: options.starts,
        best_start_index: best.index,
        positive_definite,
        at_boundary,
        floored: diagnostics.floored,
        traces,
        tau: problem.copula().kendall_tau(),
    })
}

/// [`fit`] with a generator seeded from `seed`.
pub fn fit_seeded(problem: &LikelihoodProblem, options: &FitOptions, seed: u64) -> Result<FitResult, InferenceError> {
    fit(problem, options, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Negative Hessian of `f` at `x` by central differences, symmetrised.
/// Steps are halved up to four times if a difference is non-finite.
pub fn numerical_information<F>(f: F, x: &[f64]) -> Result<DMatrix<f64>, InferenceError>
where
    F: Fn(&[f64]) -> f64,
{
    let p = x.len();
    let mut h: Vec<f64> = x.iter().map(|v| FD_STEP * v.abs().max(1.0)).collect();
    for _ in 0..5 {
        // keep the stencil inside the positive orthant
        for (hj, xj) in h.iter_mut().zip(x) {
            if *hj >= 0.5 * xj.abs() && *xj > 0.0 {
                *hj = 0.25 * xj;
            }
        }
        let at = |shifts: &[(usize, f64)]| {
            let mut y = x.to_vec();
            for &(j, s) in shifts {
                y[j] += s;
            }
            f(&y)
        };
        let f0 = f(x);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            let fp = at(&[(i, h[i])]);
            let fm = at(&[(i, -h[i])]);
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
            for j in 0..i {
                let fpp = at(&[(i, h[i]), (j, h[j])]);
                let fpm = at(&[(i, h[i]), (j, -h[j])]);
                let fmp = at(&[(i, -h[i]), (j, h[j])]);
                let fmm = at(&[(i, -h[i]), (j, -h[j])]);
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        if hess.iter().all(|v| v.is_finite()) {
            let info = -hess;
            return Ok((&info + info.transpose()) * 0.5);
        }
        h.iter_mut().for_each(|v| *v *= 0.5);
    }
    Err(InferenceError::Hessian { eta: x.to_vec() })
}

pub fn observed_information(problem: &LikelihoodProblem, eta_hat: &[f64]) -> Result<DMatrix<f64>, InferenceError> {
    numerical_information(|eta| problem.log_likelihood(eta), eta_hat)
}

/// Inverse of the information, falling back to a Moore–Penrose pseudo-inverse
/// when it is not positive definite.
pub fn covariance(info: &DMatrix<f64>) -> Covariance {
    if let Some(chol) = info.clone().cholesky() {
        return Covariance {
            matrix: chol.inverse(),
            singular: false,
        };
    }
    let scale = info.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let matrix = info
        .clone()
        .svd(true, true)
        .pseudo_inverse(scale.max(1.0) * 1e-12)
        .unwrap_or_else(|_| DMatrix::from_element(info.nrows(), info.ncols(), f64::NAN));
    Covariance { matrix, singular: true }
}

/// Fitted net survival with delta-method standard errors on `times`.
pub fn net_survival(fit: &FitResult, problem: &LikelihoodProblem, times: &[f64]) -> Result<NetSurvivalEstimate, InferenceError> {
    if let Some(&bad) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(InferenceError::InvalidTime(bad));
    }
    let family = problem.family();
    let eta = &fit.eta_hat;
    let model = family.model(eta)?;
    let cov = fit.covariance();

    let mut warning = None;
    if cov.singular {
        warning = Some("observed information is singular; standard errors use a pseudo-inverse".to_string());
    }
    if !fit.converged {
        warning.get_or_insert_with(|| "optimizer did not converge".to_string());
    }

    let p = eta.len();
    let mut plus = Vec::with_capacity(p);
    let mut minus = Vec::with_capacity(p);
    let mut steps = Vec::with_capacity(p);
    for j in 0..p {
        let h = (FD_STEP * eta[j].abs().max(1.0)).min(0.25 * eta[j]);
        let mut a = eta.clone();
        let mut b = eta.clone();
        a[j] += h;
        b[j] -= h;
        plus.push(family.model(&a)?);
        minus.push(family.model(&b)?);
        steps.push(h);
    }

    let mut survival = Vec::with_capacity(times.len());
    let mut std_err = Vec::with_capacity(times.len());
    for &t in times {
        survival.push(model.survival(t)?);
        let mut g = Vec::with_capacity(p);
        for j in 0..p {
            g.push((plus[j].survival(t)? - minus[j].survival(t)?) / (2.0 * steps[j]));
        }
        let mut var = 0.0;
        for i in 0..p {
            for j in 0..p {
                var += g[i] * cov.matrix[(i, j)] * g[j];
            }
        }
        std_err.push(var.max(0.0).sqrt());
    }
    Ok(NetSurvivalEstimate {
        times: times.to_vec(),
        survival,
        std_err,
        tau: problem.copula().kendall_tau(),
        warning,
    })
}

/// One dependence level of a sensitivity sweep.
#[derive(Debug)]
pub struct SweepPoint {
    pub tau: f64,
    pub outcome: Result<(FitResult, NetSurvivalEstimate), InferenceError>,
}

/// Refits `template` at each assumed Kendall's tau. Every point draws its
/// starts from a generator seeded with `seed`, so a one-point sweep matches a
/// direct [`fit_seeded`] call.
pub fn sensitivity_sweep(
    template: &LikelihoodProblem,
    family: CopulaFamily,
    taus: &[f64],
    times: &[f64],
    options: &FitOptions,
    seed: u64,
) -> Vec<SweepPoint> {
    taus.par_iter()
        .map(|&tau| {
            let outcome = CopulaSpec::from_tau(family, tau)
                .map_err(InferenceError::from)
                .and_then(|copula| {
                    let problem = template.with_copula(copula);
                    let fit = fit_seeded(&problem, options, seed)?;
                    let est = net_survival(&fit, &problem, times)?;
                    Ok((fit, est))
                });
            SweepPoint { tau, outcome }
        })
        .collect()
}
