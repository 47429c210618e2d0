use nalgebra::Point3;
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// `n × k` distances from points to anchors, row-major, plus the anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    values: Vec<f64>,
    anchors: Vec<Point3<f64>>,
}

impl DistanceMatrix {
    pub fn new(values: Vec<f64>, rows: usize, anchors: Vec<Point3<f64>>) -> Result<Self> {
        let cols = anchors.len();
        if cols == 0 {
            return Err(Error::InvalidArgument("distance matrix needs at least one anchor".into()));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form a {rows}×{cols} matrix",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "entry ({}, {}) = {} is not a finite nonnegative distance",
                i / cols,
                i % cols,
                values[i]
            )));
        }
        if anchors.iter().any(|a| !a.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite anchor coordinate".into()));
        }
        Ok(Self {
            rows,
            values,
            anchors,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.anchors.len()
    }

    pub fn anchors(&self) -> &[Point3<f64>] {
        &self.anchors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.cols();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols())
    }

    /// Same distances, different anchors.
    pub fn with_anchors(&self, anchors: Vec<Point3<f64>>) -> Result<Self> {
        if anchors.len() != self.cols() {
            return Err(Error::ColsMismatch {
                left: self.cols(),
                right: anchors.len(),
            });
        }
        Self::new(self.values.clone(), self.rows, anchors)
    }

    /// Rows picked by index, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.cols());
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            values,
            anchors: self.anchors.clone(),
        }
    }
}

/// `d[i][j] = ‖pᵢ − aⱼ‖`.
pub fn encode(cloud: &PointCloud, anchors: &[Point3<f64>]) -> Result<DistanceMatrix> {
    if anchors.is_empty() {
        return Err(Error::InvalidArgument("encode needs at least one anchor".into()));
    }
    let values: Vec<f64> = cloud
        .points()
        .par_iter()
        .flat_map_iter(|p| anchors.iter().map(move |a| (p - a).norm()))
        .collect();
    DistanceMatrix::new(values, cloud.len(), anchors.to_vec())
}

/// Chamfer distance between the rows of two distance matrices under the L1
/// row metric, averaged in both directions.
pub fn dmcd(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::ColsMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::EmptyCloud);
    }
    Ok(one_way(a, b) + one_way(b, a))
}

fn one_way(from: &DistanceMatrix, to: &DistanceMatrix) -> f64 {
    let total: f64 = (0..from.rows())
        .into_par_iter()
        .map(|i| {
            let r = from.row(i);
            to.iter_rows()
                .map(|s| r.iter().zip(s).map(|(x, y)| (x - y).abs()).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total / from.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{apply_rigid, random_rotation};
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[&[f64]]) -> DistanceMatrix {
        let k = rows[0].len();
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let anchors = (0..k).map(|j| Point3::new(j as f64, 0.0, 0.0)).collect();
        DistanceMatrix::new(values, rows.len(), anchors).unwrap()
    }

    #[test]
    fn encode_hand_case() {
        let p = PointCloud::from_xyz(&[[0.0, 0.0, 0.0]]).unwrap();
        let d = encode(&p, &[Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 2.0, 0.0)]).unwrap();
        assert_eq!(d.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn encode_zero_at_anchor() {
        let p = PointCloud::from_xyz(&[[0.3, 0.2, 0.1], [1.0, 1.0, 1.0]]).unwrap();
        let d = encode(&p, &[Point3::new(5.0, 0.0, 0.0), p.points()[1]]).unwrap();
        assert_eq!(d.row(1)[1], 0.0);
    }

    #[test]
    fn encode_is_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PointCloud::new((0..100).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect()).unwrap();
        let anchors: Vec<Point3<f64>> = p.points()[..8].to_vec();
        let t = random_rotation(2).with_translation(Vector3::new(3.0, -1.0, 0.25));
        let d0 = encode(&p, &anchors).unwrap();
        let moved: Vec<Point3<f64>> = anchors.iter().map(|a| t.apply_point(a)).collect();
        let d1 = encode(&apply_rigid(&p, &t), &moved).unwrap();
        for (a, b) in d0.values().iter().zip(d1.values()) {
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn rejects_negative_or_nan() {
        let a = vec![Point3::origin()];
        assert!(DistanceMatrix::new(vec![-1.0], 1, a.clone()).is_err());
        assert!(DistanceMatrix::new(vec![f64::NAN], 1, a.clone()).is_err());
        assert!(DistanceMatrix::new(vec![1.0, 2.0], 1, a).is_err());
    }

    #[test]
    fn dmcd_hand_case() {
        let a = matrix(&[&[0.0, 1.0]]);
        let b = matrix(&[&[1.0, 2.0]]);
        assert_eq!(dmcd(&a, &b).unwrap(), 4.0);
    }

    #[test]
    fn dmcd_identical_is_zero() {
        let a = matrix(&[&[0.0, 1.0], &[2.0, 3.0], &[0.5, 0.5]]);
        let b = matrix(&[&[2.0, 3.0], &[0.5, 0.5], &[0.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(dmcd(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn dmcd_cols_mismatch() {
        let a = matrix(&[&[0.0, 1.0]]);
        let b = matrix(&[&[1.0, 2.0, 3.0]]);
        assert!(matches!(dmcd(&a, &b), Err(Error::ColsMismatch { left: 2, right: 3 })));
    }

    fn arb_matrix(k: usize) -> impl Strategy<Value = DistanceMatrix> {
        prop::collection::vec(prop::collection::vec(0.0f64..5.0, k), 1..12).prop_map(move |rows| {
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            matrix(&refs)
        })
    }

    proptest! {
        #[test]
        fn dmcd_symmetric_nonnegative_and_permutation_invariant(
            a in arb_matrix(3), b in arb_matrix(3), rot in 0usize..12
        ) {
            let ab = dmcd(&a, &b).unwrap();
            let ba = dmcd(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            let mut perm: Vec<usize> = (0..a.rows()).collect();
            perm.rotate_left(rot % a.rows());
            let ap = a.select_rows(&perm);
            prop_assert!((dmcd(&ap, &b).unwrap() - ab).abs() <= 1e-12 * ab.max(1.0));
            prop_assert_eq!(dmcd(&a, &ap).unwrap(), 0.0);
        }
    }
}
