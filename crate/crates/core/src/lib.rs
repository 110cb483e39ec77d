//! Geodesically decomposable approximations of labeled embedding sets on the
//! sphere, the Lorentz hyperboloid and Euclidean space.

pub mod dataio;
pub mod decompose;
pub mod error;
pub mod eval;
pub mod karcher;
pub mod linalg;
pub mod manifold;
pub mod noise;
pub mod space;
pub mod synthlab;

pub use decompose::{decompose_simple, decompose_sparse, decompose_weighted, DecomposeConfig, Decomposition};
pub use error::{Error, Result};
pub use karcher::{intrinsic_mean, MeanConfig, MeanResult};
pub use linalg::RowMatrix;
pub use manifold::{Geometry, GeometryKind, ManifoldPoint, TangentVector};
pub use noise::{Anchors, NoiseMode, NoiseModel};
pub use space::{CompositionSpace, Factor, LabeledEmbeddingSet, PrimitiveId};
