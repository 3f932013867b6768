use thiserror::Error;

/// Failures surfaced to the shell. Input problems exit with 1; a solver that
/// stops at its iteration budget before reaching tolerance exits with 2
/// after the partial result has been written.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(
        "solver stopped before tolerance: marginal error {achieved:.3e} exceeds tol {tol:.1e}"
    )]
    NonConvergence { achieved: f64, tol: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::NonConvergence { .. } => 2,
        }
    }
}

/// Shorthand for mapping any displayable failure into an input error.
pub fn input(context: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{context}: {err}"))
}
