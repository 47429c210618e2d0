//! Distance-matrix encoding, the distance-space Chamfer metric, and the
//! multilateration decoder.

pub mod escd;
mod matrix;
mod solver;

pub use matrix::{dmcd, encode, DistanceMatrix};
pub use solver::{
    check_anchors, decode, decode_point, decode_with_workers, Decoded, PointSolution, RowFailure,
    SolverOptions, GENERAL_POSITION_TOL, MIN_ANCHORS,
};
