use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, bad flags, or a policy the network cannot support. Exit 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while solving, simulating or writing output. Exit 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<aoi_core::Error> for CliError {
    fn from(e: aoi_core::Error) -> Self {
        use aoi_core::Error as E;
        match e {
            E::Io(_) | E::Observation(_) | E::InformationHygiene { .. } => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
