use std::fmt;

use conslaw_core::data::DataError;
use conslaw_core::evaluation::EvalError;
use conslaw_core::godunov::StepError;
use conslaw_core::training::TrainError;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Cfl(String),
    Hyperbolicity(String),
    Convergence(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Cfl(_) => 3,
            CliError::Hyperbolicity(_) => 4,
            CliError::Convergence(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Cfl(m) => write!(f, "CFL violation: {m}"),
            CliError::Hyperbolicity(m) => write!(f, "loss of hyperbolicity: {m}"),
            CliError::Convergence(m) => write!(f, "convergence failure: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

fn classify_step(error: &StepError, message: String) -> CliError {
    match error {
        StepError::Cfl { .. } => CliError::Cfl(message),
        StepError::SourceNonConvergence { .. } => CliError::Convergence(message),
        e if e.is_hyperbolicity_loss() => CliError::Hyperbolicity(message),
        _ => CliError::Other(message),
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let message = e.to_string();
        match &e {
            DataError::Run { source, .. } => classify_step(&source.error, message),
            DataError::Plan(_) | DataError::Grid(_) | DataError::Model(_) => CliError::Config(message),
            _ => CliError::Other(message),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let message = e.to_string();
        match &e {
            TrainError::Config(_) => CliError::Config(message),
            TrainError::Init { .. } => CliError::Convergence(message),
            TrainError::Step { error, .. } => classify_step(error, message),
            _ if e.is_hyperbolicity_loss() => CliError::Hyperbolicity(message),
            _ => CliError::Other(message),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Data(d) => d.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use conslaw_core::system::SystemError;

    #[test]
    fn training_failures_map_to_distinct_codes() {
        let code = |e: TrainError| CliError::from(e).exit_code();
        assert_eq!(code(TrainError::Config("x".into())), 2);
        assert_eq!(code(TrainError::Init { draws: 3 }), 5);
        let complex = SystemError::from(conslaw_core::riemann::RiemannError::ComplexEigenvalues { discriminant: -1.0 });
        assert_eq!(
            code(TrainError::Hyperbolicity {
                pair: 0,
                interface: 1,
                error: complex
            }),
            4
        );
    }
}
