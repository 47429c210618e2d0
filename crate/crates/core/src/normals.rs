//! PCA normal estimation.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::margin::Margin;

pub const DEFAULT_NORMAL_KNN: usize = 16;

const SIGN_TIE_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;

/// Sorted (ascending) eigen-decomposition of a symmetric 3×3 matrix.
pub(crate) fn sorted_eigen(m: Matrix3<f64>) -> ([f64; 3], [Vector3<f64>; 3]) {
    let eig = SymmetricEigen::new(m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.map(|i| eig.eigenvalues[i]);
    let vectors = order.map(|i| eig.eigenvectors.column(i).into_owned());
    (values, vectors)
}

pub(crate) fn covariance<'a>(points: impl Iterator<Item = &'a Point3<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let mean = points.clone().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    points.fold(Matrix3::zeros(), |acc, p| {
        let d = p.coords - mean;
        acc + d * d.transpose()
    }) / n
}

/// Flip `v` so its first component with magnitude above 1e-12 is positive.
pub(crate) fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    match v.iter().find(|c| c.abs() > SIGN_TIE_TOL) {
        Some(&c) if c < 0.0 => -v,
        _ => v,
    }
}

/// Estimates a unit normal per point from the covariance of the point and its
/// `k_nn` nearest neighbors. Normals point away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, k_nn: usize) -> Result<PointCloud> {
    estimate_normals_with_margin(cloud, k_nn).map(|(c, _)| c)
}

pub(crate) fn estimate_normals_with_margin(
    cloud: &PointCloud,
    k_nn: usize,
) -> Result<(PointCloud, Margin)> {
    if k_nn == 0 {
        return Err(Error::InvalidArgument("k_nn must be positive".into()));
    }
    if cloud.len() < k_nn + 1 {
        return Err(Error::KTooLarge {
            requested: k_nn + 1,
            available: cloud.len(),
        });
    }
    let index = KnnIndex::new(cloud.points());
    let centroid = cloud.centroid().expect("nonempty");
    let points = cloud.points();
    // One extra neighbor lets the margin see the neighborhood boundary.
    let probe = (k_nn + 1).min(cloud.len() - 1);

    let results: Vec<Result<(Vector3<f64>, Margin)>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let mut margin = Margin::default();
            let hits = index.knn_with_distances(&points[i], probe, Some(i))?;
            if hits.len() > k_nn {
                margin.observe(hits[k_nn].dist_sq.sqrt() - hits[k_nn - 1].dist_sq.sqrt());
            }
            let hood = std::iter::once(&points[i])
                .chain(hits[..k_nn].iter().map(|h| &points[h.index]));
            let (vals, vecs) = sorted_eigen(covariance(hood));
            if !(vals[2] > 0.0) || vals[1] <= RANK_TOL * vals[2] {
                return Err(Error::DegenerateNeighborhood { index: i });
            }
            margin.observe(vals[1] - vals[0]);
            let n = vecs[0].normalize();
            let outward = points[i] - centroid;
            let dot = n.dot(&outward);
            let n = if dot.abs() > SIGN_TIE_TOL * outward.norm().max(1.0) {
                margin.observe(dot.abs());
                if dot < 0.0 { -n } else { n }
            } else {
                canonical_sign(n)
            };
            Ok((n, margin))
        })
        .collect();

    let mut normals = Vec::with_capacity(cloud.len());
    let mut margin = Margin::default();
    for r in results {
        let (n, m) = r?;
        normals.push(n);
        margin.merge(m);
    }
    Ok((cloud.without_normals().set_normals(normals)?, margin))
}
