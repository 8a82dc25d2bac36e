//! Reference-population mortality: life-table parsing, cohort ingestion and
//! per-subject matching on age, sex and calendar year.
//!
//! The central death rate `m_x` of each (year, age) cell is used directly as
//! a constant hazard over that cell. A subject's follow-up axis is cut at
//! every birthday and every new year, so the expected hazard along follow-up
//! is piecewise constant.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marginals::PiecewiseExponential;

/// Cuts closer than this are treated as one.
const CUT_TOLERANCE: f64 = 1e-9;

/// Oldest age a subject may reach during follow-up.
pub const MAX_ATTAINED_AGE: f64 = 130.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LifeTableError {
    #[error("life table line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("life table line {line}: missing value marker `.` in mx")]
    MissingValue { line: usize },
    #[error("life table line {line}: duplicate entry for year {year}, age {age}")]
    Duplicate { line: usize, year: i32, age: u32 },
    #[error("life table has no data rows")]
    NoDataRows,
    #[error("no life-table entry for (year {year}, age {age}, sex {sex})")]
    Coverage { year: i32, age: u32, sex: Sex },
    #[error("no life table loaded for sex {0}")]
    MissingSex(Sex),
    #[error("survival must be nonincreasing and positive: S_begin = {s_begin}, S_end = {s_end}")]
    Monotonicity { s_begin: f64, s_end: f64 },
    #[error("interval width must be positive, got {0}")]
    Width(f64),
    #[error("invalid horizon {0}")]
    Horizon(f64),
    #[error("cohort line {line}: {message}")]
    Cohort { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::F => "F",
            Sex::M => "M",
        })
    }
}

impl std::str::FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            other => Err(format!("sex must be F or M, got `{other}`")),
        }
    }
}

/// Period life table for one sex: central death rates by calendar year and age.
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTable {
    sex: Sex,
    rates: HashMap<(i32, u32), f64>,
    max_age: u32,
    first_year: i32,
    last_year: i32,
}

impl LifeTable {
    /// Builds a table from `(year, age, m_x)` triples.
    pub fn from_rates(sex: Sex, cells: impl IntoIterator<Item = (i32, u32, f64)>) -> Result<Self, LifeTableError> {
        let mut rates = HashMap::new();
        for (i, (year, age, m)) in cells.into_iter().enumerate() {
            if !(m.is_finite() && m >= 0.0) {
                return Err(LifeTableError::Malformed {
                    line: i + 1,
                    message: format!("death rate must be finite and nonnegative, got {m}"),
                });
            }
            if rates.insert((year, age), m).is_some() {
                return Err(LifeTableError::Duplicate { line: i + 1, year, age });
            }
        }
        Self::finish(sex, rates)
    }

    fn finish(sex: Sex, rates: HashMap<(i32, u32), f64>) -> Result<Self, LifeTableError> {
        if rates.is_empty() {
            return Err(LifeTableError::NoDataRows);
        }
        let max_age = rates.keys().map(|k| k.1).max().unwrap_or(0);
        let first_year = rates.keys().map(|k| k.0).min().unwrap_or(0);
        let last_year = rates.keys().map(|k| k.0).max().unwrap_or(0);
        Ok(Self {
            sex,
            rates,
            max_age,
            first_year,
            last_year,
        })
    }

    pub fn sex(&self) -> Sex {
        self.sex
    }

    pub fn max_age(&self) -> u32 {
        self.max_age
    }

    pub fn years(&self) -> (i32, i32) {
        (self.first_year, self.last_year)
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Rate for a cell; ages past the table's last age use its terminal rate.
    pub fn rate(&self, year: i32, age: u32) -> Result<f64, LifeTableError> {
        let age = age.min(self.max_age);
        self.rates.get(&(year, age)).copied().ok_or(LifeTableError::Coverage {
            year,
            age,
            sex: self.sex,
        })
    }
}

/// Parses a period 1x1 life table in the Human Mortality Database text layout.
///
/// The first line is a title. Blank lines are skipped, then a column header
/// starting with `Year Age mx` is expected, followed by rows of
/// `Year Age mx qx ax lx dx Lx Tx ex`. An open age `110+` is stored as 110.
pub fn parse_hmd<R: BufRead>(reader: R, sex: Sex) -> Result<LifeTable, LifeTableError> {
    let mut rates = HashMap::new();
    let mut seen_title = false;
    let mut seen_columns = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| LifeTableError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if !seen_title {
            seen_title = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !seen_columns {
            if fields.len() < 3 || fields[0] != "Year" || fields[1] != "Age" || fields[2] != "mx" {
                return Err(LifeTableError::Malformed {
                    line: line_no,
                    message: "expected column header `Year Age mx qx ax lx dx Lx Tx ex`".into(),
                });
            }
            seen_columns = true;
            continue;
        }
        if fields.len() != 10 {
            return Err(LifeTableError::Malformed {
                line: line_no,
                message: format!("expected 10 columns, found {}", fields.len()),
            });
        }
        let year: i32 = fields[0].parse().map_err(|_| LifeTableError::Malformed {
            line: line_no,
            message: format!("bad year `{}`", fields[0]),
        })?;
        let age_field = fields[1].strip_suffix('+').unwrap_or(fields[1]);
        let age: u32 = age_field.parse().map_err(|_| LifeTableError::Malformed {
            line: line_no,
            message: format!("bad age `{}`", fields[1]),
        })?;
        if fields[2] == "." {
            return Err(LifeTableError::MissingValue { line: line_no });
        }
        let m: f64 = fields[2].parse().map_err(|_| LifeTableError::Malformed {
            line: line_no,
            message: format!("bad mx `{}`", fields[2]),
        })?;
        if !(m.is_finite() && m >= 0.0) {
            return Err(LifeTableError::Malformed {
                line: line_no,
                message: format!("mx must be finite and nonnegative, got {m}"),
            });
        }
        if rates.insert((year, age), m).is_some() {
            return Err(LifeTableError::Duplicate { line: line_no, year, age });
        }
    }
    LifeTable::finish(sex, rates)
}

/// The life tables for both sexes, either of which may be absent.
#[derive(Debug, Clone, Default)]
pub struct LifeTables {
    pub female: Option<LifeTable>,
    pub male: Option<LifeTable>,
}

impl LifeTables {
    pub fn new(female: Option<LifeTable>, male: Option<LifeTable>) -> Self {
        Self { female, male }
    }

    pub fn get(&self, sex: Sex) -> Result<&LifeTable, LifeTableError> {
        match sex {
            Sex::F => self.female.as_ref(),
            Sex::M => self.male.as_ref(),
        }
        .ok_or(LifeTableError::MissingSex(sex))
    }

    pub fn match_subject(&self, subject: &SubjectRecord, horizon: f64) -> Result<PopulationCurve, LifeTableError> {
        match_subject(self.get(subject.sex)?, subject, horizon)
    }
}

/// One row of the disease cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub age_at_diagnosis: f64,
    pub sex: Sex,
    /// Calendar time of diagnosis, e.g. `1980.5` for mid-1980.
    pub diagnosis_year: f64,
    /// Observed follow-up `X = min(T, C)` in years.
    pub follow_up: f64,
    /// Death from any cause observed at `follow_up`.
    pub event: bool,
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.follow_up.is_finite() && self.follow_up >= 0.0) {
            return Err(format!("follow-up time must be nonnegative, got {}", self.follow_up));
        }
        if !(self.age_at_diagnosis.is_finite() && self.age_at_diagnosis >= 0.0) {
            return Err(format!("age must be nonnegative, got {}", self.age_at_diagnosis));
        }
        if !self.diagnosis_year.is_finite() {
            return Err("diagnosis year must be finite".into());
        }
        if self.age_at_diagnosis + self.follow_up > MAX_ATTAINED_AGE {
            return Err(format!(
                "age at diagnosis plus follow-up exceeds {MAX_ATTAINED_AGE} years"
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct CohortRow {
    id: String,
    age: f64,
    sex: String,
    diag_year: f64,
    time: f64,
    status: String,
}

/// Column header a cohort CSV must carry.
pub const COHORT_HEADER: [&str; 6] = ["id", "age", "sex", "diag_year", "time", "status"];

/// Reads a cohort CSV with header `id,age,sex,diag_year,time,status`.
pub fn read_cohort_csv<R: Read>(reader: R) -> Result<Vec<SubjectRecord>, LifeTableError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| LifeTableError::Cohort {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().ne(COHORT_HEADER) {
        return Err(LifeTableError::Cohort {
            line: 1,
            message: format!(
                "header must be `{}`, found `{}`",
                COHORT_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<CohortRow>() {
        let row = row.map_err(|e| LifeTableError::Cohort {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = out.len() as u64 + 2;
        let bad = |message: String| LifeTableError::Cohort { line, message };
        let sex: Sex = row.sex.parse().map_err(bad)?;
        let event = match row.status.as_str() {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("status must be 0 or 1, got `{other}`"))),
        };
        let record = SubjectRecord {
            id: row.id,
            age_at_diagnosis: row.age,
            sex,
            diagnosis_year: row.diag_year,
            follow_up: row.time,
            event,
        };
        record.validate().map_err(bad)?;
        out.push(record);
    }
    Ok(out)
}

/// Writes a cohort back out in the layout [`read_cohort_csv`] accepts.
pub fn write_cohort_csv<W: std::io::Write>(writer: W, cohort: &[SubjectRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COHORT_HEADER)?;
    for s in cohort {
        w.write_record([
            s.id.clone(),
            format!("{}", s.age_at_diagnosis),
            s.sex.to_string(),
            format!("{}", s.diagnosis_year),
            format!("{}", s.follow_up),
            if s.event { "1".into() } else { "0".into() },
        ])?;
    }
    w.flush()
}

/// Expected other-cause mortality along one subject's follow-up.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationCurve {
    horizon: f64,
    hazard: PiecewiseExponential,
}

impl PopulationCurve {
    pub fn new(horizon: f64, hazard: PiecewiseExponential) -> Self {
        Self { horizon, hazard }
    }

    /// Constant hazard on `[0, horizon]`.
    pub fn constant(rate: f64, horizon: f64) -> Result<Self, LifeTableError> {
        let hazard = PiecewiseExponential::new(Vec::new(), vec![rate]).map_err(|e| LifeTableError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(Self { horizon, hazard })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Segment boundaries `0 = b0 < b1 < ... < bk = horizon`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.hazard.breaks().len() + 2);
        b.push(0.0);
        b.extend_from_slice(self.hazard.breaks());
        if self.horizon > *b.last().unwrap_or(&0.0) {
            b.push(self.horizon);
        }
        b
    }

    /// Per-segment rates matching [`PopulationCurve::breakpoints`].
    pub fn hazards(&self) -> &[f64] {
        self.hazard.rates()
    }

    pub fn piecewise(&self) -> &PiecewiseExponential {
        &self.hazard
    }

    /// Hazard at `t`, taking the left segment at a break. Past the horizon the
    /// last segment's rate is held.
    pub fn hazard(&self, t: f64) -> f64 {
        self.hazard.rate_at(t)
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        self.hazard.cumulative_hazard(t)
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        -(-self.cumulative_hazard(t)).exp_m1()
    }

    pub fn density(&self, t: f64) -> f64 {
        self.hazard(t) * self.survival(t)
    }
}

/// Builds the expected-mortality curve for `subject` over `[0, horizon]`.
pub fn match_subject(table: &LifeTable, subject: &SubjectRecord, horizon: f64) -> Result<PopulationCurve, LifeTableError> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(LifeTableError::Horizon(horizon));
    }
    if table.sex != subject.sex {
        return Err(LifeTableError::MissingSex(subject.sex));
    }
    let age0 = subject.age_at_diagnosis;
    let year0 = subject.diagnosis_year;

    let mut cuts = Vec::new();
    for origin in [age0, year0] {
        let mut next = origin.floor() + 1.0;
        loop {
            let s = next - origin;
            if s >= horizon - CUT_TOLERANCE {
                break;
            }
            cuts.push(s);
            next += 1.0;
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite cuts"));
    cuts.dedup_by(|b, a| (*b - *a).abs() < CUT_TOLERANCE);

    let cell_rate = |s: f64| -> Result<f64, LifeTableError> {
        let age = (age0 + s).floor().max(0.0) as u32;
        let year = (year0 + s).floor() as i32;
        table.rate(year, age)
    };

    let mut rates = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0.0;
    for &c in cuts.iter().chain(std::iter::once(&horizon)) {
        // classify each segment by its midpoint so rounding at the cut cannot
        // pick the neighbouring cell
        let mid = if c > start { 0.5 * (start + c) } else { start };
        rates.push(cell_rate(mid)?);
        start = c;
    }
    let hazard = PiecewiseExponential::new(cuts, rates).map_err(|e| LifeTableError::Malformed {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(PopulationCurve { horizon, hazard })
}

/// Constant rate that reproduces a survival drop from `s_begin` to `s_end`
/// over an interval of length `width`.
pub fn cumulative_hazard_to_rate(s_begin: f64, s_end: f64, width: f64) -> Result<f64, LifeTableError> {
    if !(width.is_finite() && width > 0.0) {
        return Err(LifeTableError::Width(width));
    }
    if !(s_end > 0.0 && s_end <= s_begin && s_begin <= 1.0) {
        return Err(LifeTableError::Monotonicity { s_begin, s_end });
    }
    Ok((s_begin.ln() - s_end.ln()) / width)
}
