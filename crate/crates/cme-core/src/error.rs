use thiserror::Error;

/// Errors produced by the cme-core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Dataset invariant violations. Collects every violation found, not
    /// just the first one.
    #[error("invalid dataset:\n{0}")]
    Validation(ValidationReport),

    /// Shape mismatch between operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Numerical failure (Cholesky/SVD breakdown, non-finite state).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed input files (CSV cells, missing columns, empty files).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed configuration (bad values, unknown keys).
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// A list of dataset violations, one line per problem.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    violations: Vec<String>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, violation: impl Into<String>) {
        self.violations.push(violation.into());
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    /// Ok(()) when no violations were recorded, otherwise the full report.
    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}
