//! Metrics, perturbations, PCA canonicalization and equivariance trials.
//!
//! Chamfer metrics follow the point-completion benchmark convention: the
//! per-pair distance is Euclidean (CD-L1) or squared Euclidean (CD-L2), the
//! two directions are averaged over their own cloud and summed, and the
//! result is multiplied by 1000.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cloud::{apply_rigid, random_rotation, PointCloud, RigidTransform};
use crate::completion::{complete, CompletionConfig};
use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::normals::{canonical_sign, covariance, sorted_eigen};

/// Scale applied to every Chamfer-style metric.
pub const METRIC_SCALE: f64 = 1000.0;

/// Mean over `from` of the distance to the nearest point of `to`, with each
/// distance passed through `f`.
fn one_way(from: &PointCloud, to: &KnnIndex, f: fn(f64) -> f64) -> f64 {
    let sum: f64 = from
        .points()
        .par_iter()
        .map(|p| f(to.nearest(p).expect("index is nonempty").dist_sq))
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    sum / from.len() as f64
}

fn symmetric(a: &PointCloud, b: &PointCloud, f: fn(f64) -> f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let ia = KnnIndex::new(a.points());
    let ib = KnnIndex::new(b.points());
    Ok((one_way(a, &ib, f) + one_way(b, &ia, f)) * METRIC_SCALE)
}

/// CD-L1 ×1000.
pub fn chamfer_l1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    symmetric(a, b, f64::sqrt)
}

/// CD-L2 ×1000.
pub fn chamfer_l2(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    symmetric(a, b, |d| d)
}

/// One-directional squared distance from `input` to `output`, ×1000.
pub fn fidelity(input: &PointCloud, output: &PointCloud) -> Result<f64> {
    if input.is_empty() || output.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(one_way(input, &KnnIndex::new(output.points()), |d| d) * METRIC_SCALE)
}

/// Output of [`pca_canonicalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Canonical {
    pub cloud: PointCloud,
    /// Maps the input cloud onto `cloud`.
    pub transform: RigidTransform,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: [f64; 3],
    /// False when eigenvalues nearly coincide or a skewness is near zero, in
    /// which case the axes or their signs are not reproducible.
    pub stable: bool,
}

/// Relative eigenvalue gap below which the axes are flagged unstable.
pub const PCA_STABILITY_GAP: f64 = 1e-6;

/// Centers the cloud and rotates its principal axes onto x, y, z.
///
/// Each axis is oriented so the third moment of the coordinates along it is
/// nonnegative. A reflection is undone by flipping the last axis.
pub fn pca_canonicalize(cloud: &PointCloud) -> Result<Canonical> {
    if cloud.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "PCA needs at least 3 points, got {}",
            cloud.len()
        )));
    }
    let points = cloud.points();
    let center = cloud.centroid().expect("nonempty");
    let (vals, vecs) = sorted_eigen(covariance(points.iter()));
    let lmax = vals[2];
    if !(vals[1] > 1e-12 * lmax) {
        return Err(Error::DegenerateConfiguration("points are collinear or coincident".into()));
    }

    let mut stable = (vals[2] - vals[1]) > PCA_STABILITY_GAP * lmax && (vals[1] - vals[0]) > PCA_STABILITY_GAP * lmax;
    let skew_floor = 1e-9 * lmax.powf(1.5);
    let mut axes = [vecs[2], vecs[1], vecs[0]];
    for axis in axes.iter_mut() {
        let skew = points.iter().map(|p| (p - center).dot(axis).powi(3)).sum::<f64>() / points.len() as f64;
        if skew.abs() <= skew_floor {
            stable = false;
            *axis = canonical_sign(*axis);
        } else if skew < 0.0 {
            *axis = -*axis;
        }
    }
    if axes[0].cross(&axes[1]).dot(&axes[2]) < 0.0 {
        axes[2] = -axes[2];
    }
    let rotation = Matrix3::from_rows(&[axes[0].transpose(), axes[1].transpose(), axes[2].transpose()]);
    let transform = RigidTransform::new(rotation, -(rotation * center.coords))?;
    Ok(Canonical {
        cloud: apply_rigid(cloud, &transform),
        transform,
        eigenvalues: [vals[2], vals[1], vals[0]],
        stable,
    })
}

/// Adds independent N(0, σ²) noise to every coordinate. Normals are dropped.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points()
        .iter()
        .map(|p| p + Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    PointCloud::new(points)
}

/// Kept and removed indices for removing `⌊ratio·n⌋` points, both ascending.
pub fn removal_split(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("removal ratio must be in [0, 1), got {ratio}")));
    }
    let removed_count = (ratio * n as f64).floor() as usize;
    if removed_count >= n {
        return Err(Error::TooFewRemaining {
            removed: removed_count,
            total: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut removed = rand::seq::index::sample(&mut rng, n, removed_count).into_vec();
    removed.sort_unstable();
    let mut mask = vec![true; n];
    for &i in &removed {
        mask[i] = false;
    }
    let kept = (0..n).filter(|&i| mask[i]).collect();
    Ok((kept, removed))
}

/// Removes a uniformly random `⌊ratio·n⌋` points, keeping the order of the rest.
pub fn remove_points(cloud: &PointCloud, ratio: f64, seed: u64) -> Result<PointCloud> {
    let (kept, _) = removal_split(cloud.len(), ratio, seed)?;
    Ok(cloud.select(&kept))
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Median, averaging the two middle values for even lengths. NaNs sort last.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Shortest round-trip text for `v`, in exponent form when very small or large.
pub fn format_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// One metric value with the convention it was computed under.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub convention: String,
    /// Extra `key=value` pairs echoed from the configuration.
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
}

impl EvalReport {
    pub fn new(metric: &str, value: f64, convention: &str) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("{metric} is not finite: {value}")));
        }
        Ok(Self {
            metric: metric.into(),
            value,
            convention: convention.into(),
            config: Vec::new(),
            seed: None,
        })
    }

    /// Shorthand for the conventions used by the metric names accepted on
    /// the command line.
    pub fn convention_for(metric: &str) -> &'static str {
        match metric {
            "cdl1" => "euclidean-mean-x1000",
            "cdl2" => "squared-euclidean-mean-x1000",
            "fidelity" => "one-way-squared-euclidean-mean-x1000",
            "dmcd" => "row-l1-chamfer",
            _ => "none",
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.config.push((key.into(), value.to_string()));
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// `metric=<m> value=<v> convention=<c> [seed=<s>] [k=v ...]`.
    pub fn to_key_value(&self) -> String {
        let mut s = format!(
            "metric={} value={} convention={}",
            self.metric,
            format_value(self.value),
            self.convention
        );
        if let Some(seed) = self.seed {
            let _ = write!(s, " seed={seed}");
        }
        for (k, v) in &self.config {
            let _ = write!(s, " {k}={v}");
        }
        s
    }
}

/// Outcome of one rigid-motion trial of the full pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceTrial {
    pub trial: usize,
    pub transform: RigidTransform,
    /// Max over points of `‖T·complete(P) − complete(T·P)‖`.
    pub max_deviation: f64,
    /// Anchor source indices agree between the two runs.
    pub anchors_agree: bool,
    /// Max entrywise difference of the two partial encodings.
    pub encode_deviation: f64,
    /// Some anchor-selection decision was within round-off, so the trial
    /// says nothing about equivariance and is excluded from pass/fail.
    pub margin_violated: bool,
}

impl EquivarianceTrial {
    pub fn passes(&self, tol: f64) -> bool {
        self.anchors_agree && self.max_deviation < tol
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EquivarianceReport {
    pub trials: Vec<EquivarianceTrial>,
}

impl EquivarianceReport {
    /// Trials that count toward pass/fail.
    pub fn counted(&self) -> impl Iterator<Item = &EquivarianceTrial> {
        self.trials.iter().filter(|t| !t.margin_violated)
    }

    pub fn max_deviation(&self) -> Option<f64> {
        self.counted().map(|t| t.max_deviation).reduce(f64::max)
    }

    pub fn all_pass(&self, tol: f64) -> bool {
        self.counted().all(|t| t.passes(tol))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,max_deviation,encode_deviation,anchors_agree,margin_violated\n");
        for t in &self.trials {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                t.trial, t.max_deviation, t.encode_deviation, t.anchors_agree, t.margin_violated
            );
        }
        s
    }

    pub fn to_reports(&self, seed: u64) -> Vec<EvalReport> {
        self.trials
            .iter()
            .map(|t| EvalReport {
                metric: "equivariance_max_deviation".into(),
                value: t.max_deviation,
                convention: "model-units".into(),
                config: vec![
                    ("trial".into(), t.trial.to_string()),
                    ("anchors_agree".into(), t.anchors_agree.to_string()),
                    ("encode_deviation".into(), t.encode_deviation.to_string()),
                    ("margin_violated".into(), t.margin_violated.to_string()),
                ],
                seed: Some(seed),
            })
            .collect()
    }
}

/// Runs `complete` on `cloud` and on randomly moved copies of it.
///
/// Each trial draws a uniform-angle rotation and a translation in [-1, 1]³.
pub fn equivariance_report(
    cloud: &PointCloud,
    config: &CompletionConfig,
    trials: usize,
    seed: u64,
) -> Result<EquivarianceReport> {
    if trials == 0 {
        return Ok(EquivarianceReport::default());
    }
    let base = complete(cloud, config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    for trial in 0..trials {
        let shift = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let transform = random_rotation(rng.random()).with_translation(shift);
        let moved = complete(&apply_rigid(cloud, &transform), config, seed)?;
        let expected = apply_rigid(&base.cloud, &transform);
        let max_deviation = max_point_deviation(expected.points(), moved.cloud.points());
        let (ea, eb) = (&base.report.encoded, &moved.report.encoded);
        let encode_deviation = if ea.rows() == eb.rows() && ea.cols() == eb.cols() {
            ea.values().iter().zip(eb.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        out.push(EquivarianceTrial {
            trial,
            transform,
            max_deviation,
            anchors_agree: base.report.anchors.source_indices == moved.report.anchors.source_indices,
            encode_deviation,
            margin_violated: !base.report.margin().is_safe() || !moved.report.margin().is_safe(),
        });
    }
    Ok(EquivarianceReport { trials: out })
}

fn max_point_deviation(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}
