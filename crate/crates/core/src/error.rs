use std::fmt;

use thiserror::Error;

/// Steps of the closed-loop identification procedure, used to label
/// failures and log entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    CollectData,
    CycleSignals,
    SubspaceIdentification,
    PartitionOutput,
    ControllerPath,
    PlantExtraction,
    Reduction,
    RecoveryTransform,
    ParameterReadout,
    Validation,
}

impl Stage {
    /// Step number in the nine-step procedure (validation is reported as 10).
    pub fn step(self) -> usize {
        match self {
            Stage::CollectData => 1,
            Stage::CycleSignals => 2,
            Stage::SubspaceIdentification => 3,
            Stage::PartitionOutput => 4,
            Stage::ControllerPath => 5,
            Stage::PlantExtraction => 6,
            Stage::Reduction => 7,
            Stage::RecoveryTransform => 8,
            Stage::ParameterReadout => 9,
            Stage::Validation => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::CollectData => "collect closed-loop data",
            Stage::CycleSignals => "construct cycled signals",
            Stage::SubspaceIdentification => "subspace identification",
            Stage::PartitionOutput => "partition output matrix",
            Stage::ControllerPath => "controller-path inverse",
            Stage::PlantExtraction => "plant extraction",
            Stage::Reduction => "order reduction",
            Stage::RecoveryTransform => "recovery transform",
            Stage::ParameterReadout => "periodic parameter readout",
            Stage::Validation => "validation",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} ({})", self.step(), self.name())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("cycled signal violates the block sparsity pattern at sample {sample}: off-pattern norm {off_norm:.3e} > tolerance {tol:.3e} (phase mismatch?)")]
    SparsityViolation { sample: usize, off_norm: f64, tol: f64 },

    #[error("assumption {assumption} violated at phase {phase:?}: {detail}")]
    AssumptionViolation {
        assumption: u8,
        phase: Option<usize>,
        detail: String,
    },

    #[error("closed-loop simulation diverged at sample {sample} (|signal| = {magnitude:.3e} > {bound:.1e})")]
    DivergenceDetected {
        sample: usize,
        magnitude: f64,
        bound: f64,
    },

    #[error("identification data are rank deficient: {0}")]
    RankDeficientData(String),

    #[error("controller path C_u B is numerically singular (condition number {cond:.3e})")]
    SingularControllerPath { cond: f64 },

    #[error("no singular-value gap separates index {index} (ratio {ratio:.3e} < {factor:.1e}); spectrum: {spectrum:?}")]
    GapNotFound {
        index: usize,
        ratio: f64,
        factor: f64,
        spectrum: Vec<f64>,
    },

    #[error("recovery transform is singular (condition number {cond:.3e}); choose different F blocks")]
    SingularTransform { cond: f64 },

    #[error("recovered realization deviates from cyclic structure: residual {residual:.3e} > tolerance {tol:.1e}")]
    StructureResidualExceeded { residual: f64, tol: f64 },

    #[error("signal channel {channel} is constant; fit is undefined")]
    DegenerateSignal { channel: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error with stage labels removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
