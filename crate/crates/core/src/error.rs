use thiserror::Error;

use crate::groups::{Group, GroupElement};
use crate::reps::IrrepId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("element {element:?} is not a member of {group}")]
    NotInGroup { element: GroupElement, group: Group },

    #[error("irrep {id} is not valid for {group}")]
    InvalidIrrep { id: IrrepId, group: Group },

    #[error("unknown group name `{0}` (expected c<N>, d<N>, so2 or o2)")]
    UnknownGroup(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("Clebsch-Gordan decomposition of {left} x {right} failed verification (residual {residual:e})")]
    CgVerification {
        left: IrrepId,
        right: IrrepId,
        residual: f64,
    },

    #[error("sampling plan is rank deficient: {samples} samples for {coeffs} coefficients")]
    RankDeficient { samples: usize, coeffs: usize },

    #[error("likelihoods were normalised over different sampling plans")]
    PlanMismatch,

    #[error("unknown layer id `{0}`")]
    UnknownLayer(String),

    #[error("gate count mismatch: {gates} gates for {fields} gated fields")]
    GateCount { gates: usize, fields: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
