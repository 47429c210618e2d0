//! Levenberg-Marquardt multilateration.
//!
//! Each row of a distance matrix is decoded independently by minimizing
//! `Σⱼ (‖p − aⱼ‖ − dⱼ)²` over `p`, starting from the anchor centroid.
//!
//! Damping is isotropic (`JᵀJ + λI`), so every iterate transforms with the
//! anchors under a rigid motion and the decoder is rotation equivariant.

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;

use super::matrix::DistanceMatrix;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Smallest anchor count for which a consistent row pins down one point.
pub const MIN_ANCHORS: usize = 4;

/// General-position threshold, relative to the anchor-set diameter.
pub const GENERAL_POSITION_TOL: f64 = 1e-9;

const MAX_DAMPING: f64 = 1e16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once an accepted step improves the residual norm by less than this.
    pub residual_tol: f64,
    pub damping_init: f64,
    /// Damping is divided by this after an accepted step and multiplied after
    /// a rejected one.
    pub damping_scale: f64,
    /// Floor on `‖p − aⱼ‖` in the Jacobian, for points sitting on an anchor.
    pub singular_guard: f64,
    /// Restart from reflections across anchor planes when LM stalls with a
    /// residual norm above `residual_tol`.
    pub reflection_restarts: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            residual_tol: 1e-10,
            damping_init: 1e-3,
            damping_scale: 10.0,
            singular_guard: 1e-12,
            reflection_restarts: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("solver option {what}")));
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.residual_tol > 0.0 && self.residual_tol.is_finite()) {
            return bad("residual_tol must be positive");
        }
        if !(self.damping_init > 0.0 && self.damping_init.is_finite()) {
            return bad("damping_init must be positive");
        }
        if !(self.damping_scale > 1.0 && self.damping_scale.is_finite()) {
            return bad("damping_scale must exceed 1");
        }
        if !(self.singular_guard > 0.0) {
            return bad("singular_guard must be positive");
        }
        Ok(())
    }
}

/// Result of decoding one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSolution {
    pub point: Point3<f64>,
    /// Final objective `Σ rⱼ²`.
    pub residual: f64,
    pub iterations: usize,
}

/// Checks the anchor count and that the anchors span 3D.
pub fn check_anchors(anchors: &[Point3<f64>]) -> Result<()> {
    if anchors.len() < MIN_ANCHORS {
        return Err(Error::TooFewAnchors(anchors.len()));
    }
    let mut diameter: f64 = 0.0;
    for (i, a) in anchors.iter().enumerate() {
        for b in &anchors[..i] {
            diameter = diameter.max((a - b).norm());
        }
    }
    // Singular values of the 3×(k−1) difference matrix are the square roots
    // of the eigenvalues of its 3×3 Gram matrix.
    let base = anchors[0];
    let gram = anchors[1..].iter().fold(Matrix3::zeros(), |acc, a| {
        let d = a - base;
        acc + d * d.transpose()
    });
    let sigma_min = gram
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
        .sqrt();
    if !(sigma_min > GENERAL_POSITION_TOL * diameter) {
        return Err(Error::DegenerateAnchors {
            sigma_min,
            diameter,
        });
    }
    Ok(())
}

fn anchor_centroid(anchors: &[Point3<f64>]) -> Point3<f64> {
    crate::cloud::centroid(anchors).expect("anchors checked nonempty")
}

fn objective(p: &Point3<f64>, anchors: &[Point3<f64>], dist: &[f64]) -> f64 {
    anchors
        .iter()
        .zip(dist)
        .map(|(a, d)| {
            let r = (p - a).norm() - d;
            r * r
        })
        .sum()
}

/// Decodes one row of distances into a point.
pub fn decode_point(
    row: &[f64],
    anchors: &[Point3<f64>],
    opts: &SolverOptions,
    init: Option<Point3<f64>>,
) -> Result<PointSolution> {
    opts.validate()?;
    check_anchors(anchors)?;
    solve_row(row, anchors, opts, init)
}

/// Row solve without the per-call anchor and option checks.
fn solve_row(
    row: &[f64],
    anchors: &[Point3<f64>],
    opts: &SolverOptions,
    init: Option<Point3<f64>>,
) -> Result<PointSolution> {
    if row.len() != anchors.len() {
        return Err(Error::ColsMismatch {
            left: row.len(),
            right: anchors.len(),
        });
    }
    if let Some(d) = row.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::InvalidArgument(format!("distance {d} is not finite and nonnegative")));
    }
    let centroid = anchor_centroid(anchors);
    let start = init.unwrap_or(centroid);
    if !start.coords.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite initial point".into()));
    }
    let mut best = levenberg_marquardt(row, anchors, opts, start)?;
    if !opts.reflection_restarts || best.residual.sqrt() <= opts.residual_tol {
        return Ok(best);
    }

    // A stalled solve with a large residual is usually a mirror image of the
    // true point across some anchor plane. Try the centroid start and every
    // plane reflection, keep the lowest objective, repeat while it improves.
    let mut iterations = best.iterations;
    let mut starts = Vec::new();
    if init.is_some() {
        starts.push(centroid);
    }
    for _round in 0..MAX_RESTART_ROUNDS {
        starts.extend(anchor_plane_reflections(&best.point, anchors));
        let mut improved = false;
        for s in starts.drain(..) {
            let cand = levenberg_marquardt(row, anchors, opts, s)?;
            iterations += cand.iterations;
            if cand.residual < best.residual * (1.0 - RESTART_GAIN) {
                best = cand;
                improved = true;
            }
        }
        if !improved || best.residual.sqrt() <= opts.residual_tol {
            break;
        }
    }
    best.iterations = iterations;
    Ok(best)
}

const MAX_RESTART_ROUNDS: usize = 3;
const RESTART_GAIN: f64 = 1e-9;

/// Mirror images of `p` across every plane through three anchors.
fn anchor_plane_reflections(p: &Point3<f64>, anchors: &[Point3<f64>]) -> Vec<Point3<f64>> {
    let k = anchors.len();
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            for l in j + 1..k {
                let n = (anchors[j] - anchors[i]).cross(&(anchors[l] - anchors[i]));
                let len = n.norm();
                if !(len > 0.0) {
                    continue;
                }
                let n = n / len;
                let h = (p - anchors[i]).dot(&n);
                out.push(p - n * (2.0 * h));
            }
        }
    }
    out
}

/// Plain damped Gauss-Newton descent from `start`.
fn levenberg_marquardt(
    row: &[f64],
    anchors: &[Point3<f64>],
    opts: &SolverOptions,
    start: Point3<f64>,
) -> Result<PointSolution> {
    let mut p = start;
    let mut cost = objective(&p, anchors, row);
    let mut lambda = opts.damping_init;
    let mut iterations = 0;

    while iterations < opts.max_iters && cost > 0.0 {
        iterations += 1;
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (a, d) in anchors.iter().zip(row) {
            let diff = p - a;
            let dist = diff.norm();
            let grad = diff / dist.max(opts.singular_guard);
            let r = dist - d;
            jtj += grad * grad.transpose();
            jtr += grad * r;
        }

        // Raise damping until a step lowers the cost.
        let accepted = loop {
            let lhs = jtj + Matrix3::identity() * lambda;
            let step = match lhs.cholesky() {
                Some(ch) => ch.solve(&(-jtr)),
                None => match lhs.lu().solve(&(-jtr)) {
                    Some(s) => s,
                    None => {
                        lambda *= opts.damping_scale;
                        if lambda > MAX_DAMPING {
                            break None;
                        }
                        continue;
                    }
                },
            };
            let candidate = p + step;
            if !candidate.coords.iter().all(|c| c.is_finite()) {
                return Err(Error::SolverDiverged { iterations });
            }
            let new_cost = objective(&candidate, anchors, row);
            if !new_cost.is_finite() {
                return Err(Error::SolverDiverged { iterations });
            }
            if new_cost < cost {
                lambda = (lambda / opts.damping_scale).max(f64::MIN_POSITIVE);
                break Some((candidate, new_cost));
            }
            lambda *= opts.damping_scale;
            if lambda > MAX_DAMPING {
                break None;
            }
        };

        let Some((candidate, new_cost)) = accepted else {
            // No descent direction left at working precision.
            break;
        };
        let improvement = cost.sqrt() - new_cost.sqrt();
        p = candidate;
        cost = new_cost;
        if improvement < opts.residual_tol {
            break;
        }
    }

    Ok(PointSolution {
        point: p,
        residual: cost,
        iterations,
    })
}

/// A row that failed to decode.
#[derive(Debug)]
pub struct RowFailure {
    pub row: usize,
    pub error: Error,
}

/// Output of [`decode`]: one point per row, in row order.
///
/// Rows that fail keep the anchor centroid as their point so the cloud stays
/// aligned with the matrix; they are listed in `failures`.
#[derive(Debug)]
pub struct Decoded {
    pub cloud: PointCloud,
    pub residuals: Vec<f64>,
    pub failures: Vec<RowFailure>,
}

impl Decoded {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Decodes every row on the global rayon pool.
pub fn decode(matrix: &DistanceMatrix, opts: &SolverOptions) -> Result<Decoded> {
    opts.validate()?;
    check_anchors(matrix.anchors())?;
    let anchors = matrix.anchors();
    let fallback = anchor_centroid(anchors);

    // Each row lands in its own slot, so the result does not depend on
    // scheduling or worker count.
    let solved: Vec<Result<PointSolution>> = (0..matrix.rows())
        .into_par_iter()
        .map(|i| solve_row(matrix.row(i), anchors, opts, None))
        .collect();

    let mut points = Vec::with_capacity(solved.len());
    let mut residuals = Vec::with_capacity(solved.len());
    let mut failures = Vec::new();
    for (row, r) in solved.into_iter().enumerate() {
        match r {
            Ok(s) => {
                points.push(s.point);
                residuals.push(s.residual);
            }
            Err(error) => {
                points.push(fallback);
                residuals.push(f64::NAN);
                failures.push(RowFailure { row, error });
            }
        }
    }
    Ok(Decoded {
        cloud: PointCloud::new(points)?,
        residuals,
        failures,
    })
}

/// [`decode`] on a dedicated pool of `workers` threads.
pub fn decode_with_workers(
    matrix: &DistanceMatrix,
    opts: &SolverOptions,
    workers: usize,
) -> Result<Decoded> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    pool.install(|| decode(matrix, opts))
}
