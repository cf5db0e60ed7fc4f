use thiserror::Error;

use scattrack::bayesopt::BayesOptError;
use scattrack::forward::SolverError;
use scattrack::geometry::ShapeError;
use scattrack::motion::MotionError;
use scattrack::nn::NnError;
use scattrack::tracker::TrackError;
use scattrack::trajectory::TrajectoryError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::UnderResolved { .. } | SolverError::Singular { .. } | SolverError::IllConditioned { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ShapeError> for CliError {
    fn from(e: ShapeError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MotionError> for CliError {
    fn from(e: MotionError) -> Self {
        match e {
            MotionError::Solver(s) => s.into(),
            MotionError::GridTooSmall { .. } | MotionError::ProbeAngles => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrackError> for CliError {
    fn from(e: TrackError) -> Self {
        match e {
            TrackError::Solver(s) => s.into(),
            TrackError::Motion(m) => m.into(),
            TrackError::ReceiverCount(_) | TrackError::View(_) | TrackError::NoiseLevel(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Solver(s) => s.into(),
            NnError::Diverged { .. } | NnError::Sampling(_) => CliError::Numerical(e.to_string()),
            NnError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        match e {
            TrajectoryError::Covariance => CliError::Numerical(e.to_string()),
            TrajectoryError::Delta(_) | TrajectoryError::Sigma(..) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BayesOptError> for CliError {
    fn from(e: BayesOptError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
