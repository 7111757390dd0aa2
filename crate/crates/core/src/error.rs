use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("generation pmf has empty support")]
    EmptySupport,

    #[error("generation pmf cannot be normalized (total mass {0})")]
    NotNormalizable(f64),

    #[error("infeasible marginals: {0}")]
    InfeasibleMarginals(String),

    #[error("inconsistent observation: {0}")]
    Observation(String),

    #[error("horizon {0} too large for exhaustive enumeration (limit {1})")]
    HorizonTooLarge(u64, u64),

    #[error("policy {policy} is not permitted to read {input}")]
    InformationHygiene {
        policy: &'static str,
        input: &'static str,
    },

    #[error("policy {policy} requires {input}")]
    MissingInput {
        policy: &'static str,
        input: &'static str,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
