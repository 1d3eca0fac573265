//! Differentiable direct volume rendering on unstructured tetrahedral meshes.
//!
//! The crate renders emission-absorption images from a tet mesh with
//! per-vertex colors and extinction coefficients, backpropagates image losses
//! to vertex colors, opacities and positions, regularizes tet shape during
//! position optimization, and adaptively refines the mesh for coarse-to-fine
//! reconstruction.
//!
//! Pipeline overview:
//! - [`tetmesh`]: indexed mesh storage, adjacency, grid construction, file IO
//! - [`assets`]: cameras, images, scalar volumes, ground-truth baking
//! - [`raycast`]: per-pixel fragment lists from ray/tet intersections
//! - [`forward`]: front-to-back color accumulation per ray segment
//! - [`backward`]: adjoint renderer scattering gradients to vertices
//! - [`regularizer`]: tet quality penalty with analytic gradients
//! - [`subdivide`]: gradient-driven conforming refinement
//! - [`optim`]: training loop, optimizer state, metrics

pub mod assets;
pub mod backward;
pub mod forward;
pub mod gradcheck;
pub mod optim;
pub mod raycast;
pub mod regularizer;
pub mod subdivide;
pub mod tetmesh;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("ray state inversion impossible: alpha_acc = {0}")]
    InversionImpossible(f64),
    #[error("prism flip constraints unsatisfiable; conflict involves prisms {cycle:?}")]
    Unsatisfiable { cycle: Vec<usize> },
    #[error("refinement aborted: {0}")]
    RefineAborted(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
