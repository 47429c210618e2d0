//! Point cloud value type and rigid-motion utilities.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance on normal length accepted by [`PointCloud::with_normals`].
pub const UNIT_NORMAL_TOL: f64 = 1e-9;

/// An ordered set of 3D points with optional per-point unit normals.
///
/// Clouds are value objects: every operation in this crate returns a new
/// cloud rather than mutating its input.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Point3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self> {
        let cloud = Self::new(points)?;
        cloud.set_normals(normals)
    }

    /// Returns a copy of this cloud carrying `normals`.
    pub fn set_normals(self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some(i) = normals
            .iter()
            .position(|n| !((n.norm() - 1.0).abs() <= UNIT_NORMAL_TOL))
        {
            return Err(Error::InvalidArgument(format!(
                "normal {i} is not unit length (|n| = {})",
                normals[i].norm()
            )));
        }
        Ok(Self {
            points: self.points,
            normals: Some(normals),
        })
    }

    pub fn without_normals(&self) -> Self {
        Self {
            points: self.points.clone(),
            normals: None,
        }
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        centroid(&self.points)
    }

    /// Sub-cloud made of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        }
    }
}

pub(crate) fn centroid(points: &[Point3<f64>]) -> Option<Point3<f64>> {
    if points.is_empty() {
        return None;
    }
    let sum = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Some(Point3::from(sum / points.len() as f64))
}

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-12;

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates orthonormality and `det = +1` to within 1e-12.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho_err <= ROTATION_TOL) || !((det - 1.0).abs() <= ROTATION_TOL) {
            return Err(Error::InvalidArgument(format!(
                "not a proper rotation (orthonormality error {ortho_err:e}, det {det})"
            )));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation `Rz(z)·Ry(y)·Rx(x)` with angles in radians.
    pub fn from_euler_xyz(x: f64, y: f64, z: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), z)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), y)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), x);
        Self {
            rotation: r.into_inner(),
            translation: Vector3::zeros(),
        }
    }

    pub fn with_translation(mut self, translation: Vector3<f64>) -> Self {
        self.translation = translation;
        self
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn apply_rigid(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| transform.apply_point(p))
            .collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| transform.apply_vector(n)).collect()),
    }
}

/// Random rotation built from three axis rotations, each angle drawn
/// uniformly from [0°, 180°]. Translation is zero.
pub fn random_rotation(seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut angle = || rng.random_range(0.0..=180.0f64).to_radians();
    let (x, y, z) = (angle(), angle(), angle());
    RigidTransform::from_euler_xyz(x, y, z)
}

/// Least-squares rigid alignment of `source` onto `target` (index
/// correspondence). Returns the transform and the residual RMSD.
pub fn kabsch_align(source: &PointCloud, target: &PointCloud) -> Result<(RigidTransform, f64)> {
    if source.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "cardinality mismatch: {} vs {}",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateConfiguration(
            "kabsch alignment needs at least 3 points".into(),
        ));
    }
    let cs = source.centroid().expect("nonempty");
    let ct = target.centroid().expect("nonempty");

    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, t) in source.points.iter().zip(&target.points) {
        let ds = s - cs;
        let dt = t - ct;
        h += ds * dt.transpose();
        spread += ds * ds.transpose();
    }

    // Rank of the centered source must be at least 2.
    let sv = spread.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[1] > 1e-12 * sv[0].max(f64::MIN_POSITIVE)) || sv[0] <= 0.0 {
        return Err(Error::DegenerateConfiguration(
            "source points are collinear or coincident".into(),
        ));
    }

    let svd = h.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = ct.coords - rotation * cs.coords;
    let transform = RigidTransform::from_parts_unchecked(rotation, translation);

    let sq: f64 = source
        .points
        .iter()
        .zip(&target.points)
        .map(|(s, t)| (transform.apply_point(s) - t).norm_squared())
        .sum();
    Ok((transform, (sq / source.len() as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_finite_and_bad_normals() {
        assert!(PointCloud::from_xyz(&[[0.0, f64::NAN, 0.0]]).is_err());
        let pts = vec![Point3::origin()];
        assert!(PointCloud::with_normals(pts.clone(), vec![Vector3::new(0.0, 0.0, 2.0)]).is_err());
        assert!(PointCloud::with_normals(pts.clone(), vec![]).is_err());
        assert!(PointCloud::with_normals(pts, vec![Vector3::z()]).is_ok());
    }

    #[test]
    fn identity_leaves_cloud_unchanged() {
        let c = random_cloud(20, 1);
        assert_eq!(apply_rigid(&c, &RigidTransform::identity()), c);
    }

    #[test]
    fn quarter_turn_about_z() {
        let c = PointCloud::from_xyz(&[[1.0, 0.0, 0.0]]).unwrap();
        let t = RigidTransform::from_euler_xyz(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let p = apply_rigid(&c, &t).points()[0];
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() <= 1e-15);
    }

    #[test]
    fn transform_then_inverse_restores_input() {
        let c = random_cloud(50, 2);
        let t = random_rotation(9).with_translation(Vector3::new(0.3, -2.0, 5.0));
        let back = apply_rigid(&apply_rigid(&c, &t), &t.inverse());
        for (a, b) in c.points().iter().zip(back.points()) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn rigid_motion_preserves_pairwise_distances() {
        let c = random_cloud(40, 3);
        let t = random_rotation(4).with_translation(Vector3::new(1.0, 2.0, 3.0));
        let m = apply_rigid(&c, &t);
        for i in 0..c.len() {
            for j in 0..i {
                let d0 = (c.points()[i] - c.points()[j]).norm();
                let d1 = (m.points()[i] - m.points()[j]).norm();
                assert!((d0 - d1).abs() <= 1e-12 * d0.max(1.0));
            }
        }
    }

    #[test]
    fn normals_rotate_without_translation() {
        let c = PointCloud::with_normals(vec![Point3::new(1.0, 0.0, 0.0)], vec![Vector3::x()])
            .unwrap();
        let t = RigidTransform::from_euler_xyz(0.0, 0.0, std::f64::consts::FRAC_PI_2)
            .with_translation(Vector3::new(5.0, 5.0, 5.0));
        let m = apply_rigid(&c, &t);
        assert!((m.normals().unwrap()[0] - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn random_rotation_is_deterministic_and_proper() {
        assert_eq!(random_rotation(42), random_rotation(42));
        assert_ne!(random_rotation(42), random_rotation(43));
        for seed in 0..200 {
            let r = *random_rotation(seed).rotation();
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() <= 1e-12);
            assert!((r.determinant() - 1.0).abs() <= 1e-12);
            assert!(RigidTransform::new(r, Vector3::zeros()).is_ok());
        }
    }

    #[test]
    fn random_rotation_columns_cover_both_hemispheres() {
        // Pooled over the three columns: angles in [0°, 180°] pin the sign of
        // some individual entries (column 0 has z = −sin β ≤ 0), but the
        // columns together must reach both sides of every coordinate plane.
        let mut pos = [0usize; 3];
        let mut neg = [0usize; 3];
        for seed in 0..1000 {
            let r = random_rotation(seed);
            for col in 0..3 {
                for axis in 0..3 {
                    if r.rotation()[(axis, col)] > 0.0 {
                        pos[axis] += 1;
                    } else {
                        neg[axis] += 1;
                    }
                }
            }
        }
        for axis in 0..3 {
            assert!(pos[axis] > 300 && neg[axis] > 300, "axis {axis}: +{} -{}", pos[axis], neg[axis]);
        }
    }

    #[test]
    fn kabsch_recovers_exact_transform() {
        for seed in 0..50 {
            let src = random_cloud(30, seed);
            let t = random_rotation(seed + 1000).with_translation(Vector3::new(0.5, -1.0, 2.0));
            let dst = apply_rigid(&src, &t);
            let (est, rmsd) = kabsch_align(&src, &dst).unwrap();
            assert!((est.rotation() - t.rotation()).norm() < 1e-9);
            assert!((est.translation() - t.translation()).norm() < 1e-9);
            assert!(rmsd < 1e-12);
        }
    }

    #[test]
    fn kabsch_identity_case() {
        let c = random_cloud(10, 5);
        let (t, rmsd) = kabsch_align(&c, &c).unwrap();
        assert!((t.rotation() - Matrix3::identity()).norm() < 1e-12);
        assert!(rmsd < 1e-14);
    }

    #[test]
    fn kabsch_rejects_collinear() {
        let c = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            kabsch_align(&c, &c),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn kabsch_rmsd_tracks_noise_level() {
        // Monte-Carlo: with isotropic noise sigma per coordinate, the residual
        // after fitting 6 dof to 3n coordinates is sigma*sqrt(3 - 6/n).
        let n = 2000;
        let sigma = 0.01;
        let src = random_cloud(n, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let normal = Normal::new(0.0, sigma).unwrap();
        let dst = PointCloud::new(
            src.points()
                .iter()
                .map(|p| {
                    p + Vector3::new(
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                    )
                })
                .collect(),
        )
        .unwrap();
        let (_, rmsd) = kabsch_align(&src, &dst).unwrap();
        let expected = sigma * (3.0 - 6.0 / n as f64).sqrt();
        assert!((rmsd - expected).abs() / expected < 0.05, "rmsd {rmsd} vs {expected}");
    }
}
