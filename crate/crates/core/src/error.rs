use thiserror::Error;

use crate::sn::SnSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("position {position:?} is outside the domain")]
    OutOfDomain { position: Vec<f64> },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("region {region} edge {axis}={edge} does not coincide with a mesh edge")]
    RegionMisaligned {
        region: usize,
        axis: char,
        edge: f64,
    },

    #[error("invalid region layout: {0}")]
    RegionLayout(String),

    #[error("invalid scatter cap: {0}")]
    InvalidScatterCap(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("problem has no volumetric source")]
    EmptySource,

    #[error("fields are defined on different meshes ({left} vs {right} cells)")]
    MeshMismatch { left: usize, right: usize },

    #[error("source iteration did not converge in {iterations} iterations (last change {last_change:e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        last: Box<SnSolution>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
