use std::fmt;

use ris_lab_core::codebook::CodebookError;
use ris_lab_core::dataset::DatasetError;
use ris_lab_core::eval::EvalError;
use ris_lab_core::neural::NeuralError;
use ris_lab_core::pipeline::PipelineError;
use ris_lab_core::scene::SceneError;
use ris_lab_core::wavesim::SimError;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// 1: a file could not be read or written.
    Io(String),
    /// 2: malformed input, bad flags or an invalid scene.
    Validation(String),
    /// 3: ill-conditioned solve or non-finite training values.
    Numerical(String),
    /// 4: artifacts that were not produced from each other.
    Provenance(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Provenance(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(m) => write!(f, "I/O error: {m}"),
            Failure::Validation(m) => write!(f, "validation error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Provenance(m) => write!(f, "provenance mismatch: {m}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Singular { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Placement(s) => s.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(e) => e.into(),
            DatasetError::Simulation {
                source: SimError::Singular { .. },
                ..
            } => Failure::Numerical(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<NeuralError> for Failure {
    fn from(e: NeuralError) -> Self {
        match e {
            NeuralError::Io(m) => Failure::Io(m),
            NeuralError::NonFiniteGradient { .. } | NeuralError::NonFiniteLoss { .. } => {
                Failure::Numerical(e.to_string())
            }
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<CodebookError> for Failure {
    fn from(e: CodebookError) -> Self {
        match e {
            CodebookError::Io(e) => e.into(),
            CodebookError::Model(e) => e.into(),
            CodebookError::Scene(e) => e.into(),
            CodebookError::Sim(e) => e.into(),
            CodebookError::Gaps(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(e) => e.into(),
            EvalError::Codebook(e) => e.into(),
            EvalError::Neural(e) => e.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Dataset(e) => e.into(),
            PipelineError::Neural(e) => e.into(),
        }
    }
}
