//! Rotation-equivariant point cloud encoding with anchor-point distance
//! matrices.
//!
//! A cloud is described by the distances of each of its points to a small
//! set of anchors picked from the cloud itself. Distances do not change under
//! rigid motion, while the anchors carry the pose, so decoding the distances
//! back against the anchors reproduces any rigid motion applied to the input.
//!
//! The pipeline is
//!
//! 1. [`anchors::select_anchors`]: deterministic FPS plus curvature refinement,
//! 2. [`codec::encode`]: the `n × k` distance matrix,
//! 3. a distance predictor ([`completion::PredictorSpec`]), and
//! 4. [`codec::decode`]: per-point Levenberg-Marquardt multilateration.
//!
//! [`completion::complete`] chains these stages; [`eval`] holds the metrics
//! and perturbation protocols.

pub mod anchors;
pub mod cloud;
pub mod codec;
pub mod completion;
pub mod error;
pub mod eval;
pub mod io;
pub mod knn;
pub mod margin;
pub mod normals;

pub use anchors::{select_anchors, AnchorSet, AnchorStrategy, SelectionOptions};
pub use cloud::{apply_rigid, kabsch_align, random_rotation, PointCloud, RigidTransform};
pub use codec::{decode, dmcd, encode, DistanceMatrix, SolverOptions};
pub use completion::{complete, CompletionConfig, PredictorSpec};
pub use error::{Error, Result};
pub use nalgebra::{Point3, Vector3};
