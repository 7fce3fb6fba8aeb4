use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, IvxError>;

#[derive(Debug, Error)]
pub enum IvxError {
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("restriction matrix R is rank deficient (rank {rank} < {rows} rows)")]
    InfeasibleRank { rank: usize, rows: usize },

    #[error("residuals are identically zero; innovation correlation undefined")]
    DegenerateResiduals,

    #[error("series has zero variance: {0}")]
    ZeroVariance(String),

    #[error("GARCH parameters are not covariance stationary (phi1 + phi1_bar = {persistence})")]
    NonStationary { persistence: f64 },

    #[error("input validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("{failures} of {replications} replications failed (limit 1%)")]
    TooManyFailures { failures: usize, replications: usize },

    #[error("maturity {0} missing from bond panel")]
    MissingMaturity(usize),

    #[error("column not found: {0}")]
    MissingColumn(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<IvxError>,
    },
}

impl IvxError {
    pub fn at(self, stage: &'static str) -> IvxError {
        IvxError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Strips pipeline-stage annotations.
    pub fn root(&self) -> &IvxError {
        match self {
            IvxError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by the caller's input rather than numerical degeneracy.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self.root(),
            IvxError::Validation(_)
                | IvxError::InfeasibleRank { .. }
                | IvxError::MissingMaturity(_)
                | IvxError::MissingColumn(_)
                | IvxError::OutOfRange(_)
                | IvxError::Invalid(_)
                | IvxError::NonStationary { .. }
        )
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
