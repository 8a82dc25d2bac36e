use netsurv::inference::InferenceError;
use netsurv::lifetable::LifeTableError;
use netsurv::likelihood::LikelihoodError;
use netsurv::simulate::SimulationError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Coverage(String),
    #[error("{0}")]
    Optimization(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Coverage(_) => 3,
            CliError::Optimization(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }
}

impl From<LifeTableError> for CliError {
    fn from(e: LifeTableError) -> Self {
        match e {
            LifeTableError::Coverage { .. } | LifeTableError::MissingSex(_) => CliError::Coverage(e.to_string()),
            LifeTableError::Malformed { .. }
            | LifeTableError::MissingValue { .. }
            | LifeTableError::Duplicate { .. }
            | LifeTableError::NoDataRows
            | LifeTableError::Cohort { .. } => CliError::Parse(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<LikelihoodError> for CliError {
    fn from(e: LikelihoodError) -> Self {
        match e {
            LikelihoodError::LifeTable(inner) => inner.into(),
            LikelihoodError::Coverage { .. } => CliError::Coverage(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Likelihood(inner) => inner.into(),
            InferenceError::NoEvents | InferenceError::AllStartsFailed { .. } | InferenceError::Hessian { .. } => {
                CliError::Optimization(e.to_string())
            }
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Config(_) | SimulationError::StudyFile(_) => CliError::Parse(e.to_string()),
            SimulationError::TooManyFailures { .. } => CliError::Optimization(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}
