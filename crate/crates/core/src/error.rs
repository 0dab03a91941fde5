//! Error type shared by every stage.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration produced a non-finite state at step {index}{}", sample.map(|s| format!(" (sample {s})")).unwrap_or_default())]
    IntegrationBlowup { index: usize, sample: Option<usize> },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate data: every Gram eigenvalue is below the threshold {threshold:e}")]
    DegenerateData { threshold: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("iteration diverged at k={k} (coefficient norm {norm:e}); try a smaller time step or more samples")]
    Divergence { k: usize, norm: f64 },

    #[error("value {value:e} at the equilibrium cell is below the threshold {threshold:e}")]
    SeedBelowThreshold { value: f64, threshold: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at epoch {epoch}")]
    TrainingDivergence { epoch: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("missing artifact {}: run the stage that produces it first", .0.display())]
    MissingArtifact(std::path::PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::IntegrationBlowup { .. }
                | Error::DegenerateData { .. }
                | Error::Divergence { .. }
                | Error::TrainingDivergence { .. }
                | Error::Domain(_)
                | Error::SeedBelowThreshold { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
