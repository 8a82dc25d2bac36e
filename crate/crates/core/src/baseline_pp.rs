//! Pohar-Perme nonparametric net-survival estimator.
//!
//! Subjects are weighted by `1 / S_Pi(t) = exp(Λ_Pi(t))`. The population
//! hazard term of the excess cumulative hazard integrates in closed form,
//! since on a stretch where the risk set does not change
//!
//! ```text
//! sum_i Y_i λ_Pi(s) w_i(s) / sum_i Y_i w_i(s) = d/ds ln sum_i Y_i w_i(s)
//! ```

use thiserror::Error;

use crate::lifetable::PopulationCurve;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PPError {
    #[error("cohort is empty")]
    Empty,
    #[error("subject {index}: time {time} is not a finite non-negative number")]
    InvalidTime { index: usize, time: f64 },
    #[error("subject {index}: follow-up {time} beyond its population curve (horizon {horizon})")]
    Coverage { index: usize, time: f64, horizon: f64 },
    #[error("evaluation time {0} is not a finite non-negative number")]
    InvalidEvalTime(f64),
}

/// Observed data for one subject with its matched population curve.
#[derive(Debug, Clone, Copy)]
pub struct PPSubject<'a> {
    pub time: f64,
    pub event: bool,
    pub curve: &'a PopulationCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PPEstimate {
    /// Grid of observed times and requested evaluation times, starting at 0.
    pub times: Vec<f64>,
    pub net_survival: Vec<f64>,
    /// Weighted risk-set size `sum_i Y_i(t) / S_Pi(t)`.
    pub at_risk: Vec<f64>,
    /// Set when the risk set empties before the last requested time.
    pub truncated_at: Option<f64>,
    /// Largest observed follow-up time.
    pub last_time: f64,
}

impl PPEstimate {
    /// Right-continuous step value at `t`; `None` past the last observation.
    pub fn survival_at(&self, t: f64) -> Option<f64> {
        if t < 0.0 || t > self.last_time {
            return None;
        }
        let k = self.times.partition_point(|&s| s <= t);
        Some(self.net_survival[k.saturating_sub(1)])
    }
}

pub fn pohar_perme(subjects: &[PPSubject<'_>], eval_times: &[f64]) -> Result<PPEstimate, PPError> {
    if subjects.is_empty() {
        return Err(PPError::Empty);
    }
    for (index, s) in subjects.iter().enumerate() {
        if !(s.time.is_finite() && s.time >= 0.0) {
            return Err(PPError::InvalidTime { index, time: s.time });
        }
        if s.time > s.curve.horizon() + 1e-12 {
            return Err(PPError::Coverage {
                index,
                time: s.time,
                horizon: s.curve.horizon(),
            });
        }
    }
    if let Some(&bad) = eval_times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(PPError::InvalidEvalTime(bad));
    }

    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.sort_by(|&a, &b| subjects[a].time.total_cmp(&subjects[b].time));
    let last_time = subjects[order[order.len() - 1]].time;

    let mut grid: Vec<f64> = subjects.iter().map(|s| s.time).chain(eval_times.iter().copied()).filter(|&t| t > 0.0).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let weight = |i: usize, t: f64| subjects[i].curve.cumulative_hazard(t).exp();

    let mut times = vec![0.0];
    let mut net_survival = vec![1.0];
    let mut at_risk = vec![subjects.len() as f64];
    let mut truncated_at = None;
    let mut excess = 0.0;
    let mut first = 0;
    let mut prev = 0.0;
    for &t in &grid {
        while first < order.len() && subjects[order[first]].time < t {
            first += 1;
        }
        if first == order.len() {
            truncated_at = Some(last_time);
            break;
        }
        let risk = &order[first..];
        let mut w_prev = 0.0;
        let mut w_now = 0.0;
        let mut events = 0.0;
        for &i in risk {
            let w = weight(i, t);
            w_prev += weight(i, prev);
            w_now += w;
            if subjects[i].event && subjects[i].time == t {
                events += w;
            }
        }
        excess += events / w_now - (w_now.ln() - w_prev.ln());
        times.push(t);
        net_survival.push((-excess).exp());
        at_risk.push(w_now);
        prev = t;
    }
    Ok(PPEstimate {
        times,
        net_survival,
        at_risk,
        truncated_at,
        last_time,
    })
}
