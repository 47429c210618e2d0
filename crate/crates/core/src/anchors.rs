//! Anchor point selection.
//!
//! Anchors start from a deterministic farthest-point sampling seeded by the
//! point farthest from the centroid. The `cluster` and `ballquery`
//! strategies then move each anchor to the highest-curvature point of its
//! cluster, optionally restricted to a ball around the seed.
//!
//! Every argmax is broken by ascending point index. Selection is exactly
//! rotation equivariant only when no decision is a near-tie; the returned
//! [`AnchorSet::margin`] reports the smallest decision gap so callers can
//! tell.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::io::{parse_xyz, write_xyz};
use crate::knn::KnnIndex;
use crate::margin::Margin;
use crate::normals::{estimate_normals_with_margin, sorted_eigen, DEFAULT_NORMAL_KNN};

pub const DEFAULT_K: usize = 8;
pub const DEFAULT_BALL_RADIUS: f64 = 0.075;
pub const DEFAULT_CURVATURE_THRESHOLD: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorStrategy {
    /// Plain deterministic farthest-point sampling.
    Fps,
    /// Move each seed to its cluster's max-curvature point when that
    /// curvature exceeds `threshold`.
    Cluster { threshold: f64 },
    /// Move each seed to the max-curvature cluster member within `radius`.
    BallQuery { radius: f64 },
}

impl Default for AnchorStrategy {
    fn default() -> Self {
        AnchorStrategy::BallQuery {
            radius: DEFAULT_BALL_RADIUS,
        }
    }
}

impl AnchorStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AnchorStrategy::Fps => "fps",
            AnchorStrategy::Cluster { .. } => "cluster",
            AnchorStrategy::BallQuery { .. } => "ballquery",
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match *self {
            AnchorStrategy::BallQuery { radius } => Some(radius),
            _ => None,
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        match *self {
            AnchorStrategy::Cluster { threshold } => Some(threshold),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AnchorStrategy::BallQuery { radius } if !(radius >= 0.0) => Err(
                Error::InvalidArgument(format!("ball radius must be nonnegative, got {radius}")),
            ),
            AnchorStrategy::Cluster { threshold } if threshold.is_nan() => {
                Err(Error::InvalidArgument("curvature threshold is NaN".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Which neighborhoods feed the curvature estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CurvatureScope {
    /// kNN over the whole cloud.
    #[default]
    Global,
    /// kNN restricted to the members of each FPS cluster.
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionOptions {
    /// Neighborhood size for normals and curvature.
    pub k_nn: usize,
    pub scope: CurvatureScope,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            k_nn: DEFAULT_NORMAL_KNN,
            scope: CurvatureScope::Global,
        }
    }
}

/// `k` anchors picked from a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<Point3<f64>>,
    pub source_indices: Vec<usize>,
    pub strategy: AnchorStrategy,
    /// FPS seed index behind each anchor.
    pub seeds: Vec<usize>,
    /// Smallest decision gap observed during selection.
    pub margin: Margin,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn header_line(&self) -> String {
        anchor_header(self.strategy, self.len())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

pub(crate) fn anchor_header(strategy: AnchorStrategy, k: usize) -> String {
    format!(
        "# strategy={} k={} radius={} threshold={}",
        strategy.name(),
        k,
        fmt_opt(strategy.radius()),
        fmt_opt(strategy.threshold())
    )
}

impl fmt::Display for AnchorStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-point curvature and normal Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureField {
    pub kappa: Vec<f64>,
    pub laplacian: Vec<Vector3<f64>>,
}

/// Deterministic farthest-point sampling.
///
/// The first pick is the point farthest from the centroid; each further pick
/// maximizes the distance to the nearest already-picked point.
pub fn deterministic_fps(cloud: &PointCloud, k: usize) -> Result<Vec<usize>> {
    fps_with_margin(cloud.points(), k).map(|(idx, _)| idx)
}

pub(crate) fn fps_with_margin(points: &[Point3<f64>], k: usize) -> Result<(Vec<usize>, Margin)> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > points.len() {
        return Err(Error::KTooLarge {
            requested: k,
            available: points.len(),
        });
    }
    let mut margin = Margin::default();
    let centroid = crate::cloud::centroid(points).expect("nonempty");
    let mut score: Vec<f64> = points.iter().map(|p| (p - centroid).norm()).collect();
    let mut taken = vec![false; points.len()];
    let mut picked = Vec::with_capacity(k);

    for step in 0..k {
        let (best, runner_up) = argmax_two(&score, &taken);
        let best = best.expect("k <= n leaves a candidate");
        if let Some(second) = runner_up {
            margin.observe(score[best] - second);
        }
        picked.push(best);
        taken[best] = true;
        if step + 1 == k {
            break;
        }
        let chosen = points[best];
        for (i, p) in points.iter().enumerate() {
            let d = (p - chosen).norm();
            // After the first pick the score is the distance to the selection.
            if step == 0 || d < score[i] {
                score[i] = d;
            }
        }
    }
    Ok((picked, margin))
}

/// Index of the largest untaken score (lowest index on ties) and the
/// runner-up score.
fn argmax_two(score: &[f64], taken: &[bool]) -> (Option<usize>, Option<f64>) {
    let mut best: Option<usize> = None;
    let mut second = f64::NEG_INFINITY;
    let mut have_second = false;
    for (i, &s) in score.iter().enumerate() {
        if taken[i] {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if s > score[b] => {
                second = score[b];
                have_second = true;
                best = Some(i);
            }
            Some(_) => {
                if !have_second || s > second {
                    second = s;
                    have_second = true;
                }
            }
        }
    }
    (best, have_second.then_some(second))
}

fn require_normals(cloud: &PointCloud) -> Result<&[Vector3<f64>]> {
    cloud
        .normals()
        .ok_or_else(|| Error::InvalidArgument("cloud has no normals".into()))
}

/// `Δnᵢ = nᵢ − mean(nⱼ)` over the `k_nn` nearest neighbors (self excluded).
pub fn normal_laplacian(cloud: &PointCloud, k_nn: usize) -> Result<Vec<Vector3<f64>>> {
    curvature(cloud, k_nn).map(|f| f.laplacian)
}

/// PCA curvature of the neighbor normals: the smallest eigenvalue of their
/// covariance, clamped at zero.
pub fn curvature(cloud: &PointCloud, k_nn: usize) -> Result<CurvatureField> {
    let all: Vec<usize> = (0..cloud.len()).collect();
    curvature_over(cloud, &all, k_nn).map(|(f, _)| f)
}

/// Curvature restricted to the sub-cloud `members`; output is aligned with
/// `members`.
fn curvature_over(
    cloud: &PointCloud,
    members: &[usize],
    k_nn: usize,
) -> Result<(CurvatureField, Margin)> {
    let normals = require_normals(cloud)?;
    if k_nn == 0 {
        return Err(Error::InvalidArgument("k_nn must be positive".into()));
    }
    let local: Vec<Point3<f64>> = members.iter().map(|&i| cloud.points()[i]).collect();
    let index = KnnIndex::new(&local);
    let probe = (k_nn + 1).min(local.len().saturating_sub(1));

    let per_point: Vec<Result<(f64, Vector3<f64>, Margin)>> = (0..local.len())
        .into_par_iter()
        .map(|li| {
            let mut margin = Margin::default();
            let hits = index.knn_with_distances(&local[li], probe, Some(li))?;
            if hits.len() < k_nn {
                return Err(Error::KTooLarge {
                    requested: k_nn,
                    available: hits.len(),
                });
            }
            if hits.len() > k_nn {
                margin.observe(hits[k_nn].dist_sq.sqrt() - hits[k_nn - 1].dist_sq.sqrt());
            }
            let hood: Vec<Vector3<f64>> = hits[..k_nn]
                .iter()
                .map(|h| normals[members[h.index]])
                .collect();
            let mean = hood.iter().sum::<Vector3<f64>>() / hood.len() as f64;
            let cov = hood.iter().fold(Matrix3::zeros(), |acc, n| {
                let d = n - mean;
                acc + d * d.transpose()
            }) / hood.len() as f64;
            let (vals, _) = sorted_eigen(cov);
            let lap = normals[members[li]] - mean;
            Ok((vals[0].max(0.0), lap, margin))
        })
        .collect();

    let mut field = CurvatureField {
        kappa: Vec::with_capacity(local.len()),
        laplacian: Vec::with_capacity(local.len()),
    };
    let mut margin = Margin::default();
    for r in per_point {
        let (k, l, m) = r?;
        field.kappa.push(k);
        field.laplacian.push(l);
        margin.merge(m);
    }
    Ok((field, margin))
}

/// Picks `k` anchors from `cloud` with the given strategy.
///
/// Normals are estimated when the cloud carries none and the strategy needs
/// curvature.
pub fn select_anchors(
    cloud: &PointCloud,
    k: usize,
    strategy: AnchorStrategy,
    options: &SelectionOptions,
) -> Result<AnchorSet> {
    strategy.validate()?;
    let points = cloud.points();
    let (seeds, mut margin) = fps_with_margin(points, k)?;

    if strategy == AnchorStrategy::Fps {
        return Ok(AnchorSet {
            anchors: seeds.iter().map(|&i| points[i]).collect(),
            source_indices: seeds.clone(),
            strategy,
            seeds,
            margin,
        });
    }

    let with_normals;
    let cloud = if cloud.normals().is_some() {
        cloud
    } else {
        let (c, m) = estimate_normals_with_margin(cloud, options.k_nn)?;
        margin.merge(m);
        with_normals = c;
        &with_normals
    };

    let clusters = assign_clusters(points, &seeds, &mut margin);

    let kappa: Vec<f64> = match options.scope {
        CurvatureScope::Global => {
            let all: Vec<usize> = (0..points.len()).collect();
            let (field, m) = curvature_over(cloud, &all, options.k_nn)?;
            margin.merge(m);
            field.kappa
        }
        CurvatureScope::Cluster => {
            let mut kappa = vec![0.0; points.len()];
            for members in &clusters {
                // Small clusters use every other member as the neighborhood.
                let k_local = options.k_nn.min(members.len().saturating_sub(1));
                if k_local == 0 {
                    continue;
                }
                let (field, m) = curvature_over(cloud, members, k_local)?;
                margin.merge(m);
                for (&i, &kv) in members.iter().zip(&field.kappa) {
                    kappa[i] = kv;
                }
            }
            kappa
        }
    };

    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for (c, members) in clusters.iter().enumerate() {
        let seed = seeds[c];
        let candidates: Vec<usize> = match strategy {
            AnchorStrategy::BallQuery { radius } => members
                .iter()
                .copied()
                .filter(|&i| {
                    let d = (points[i] - points[seed]).norm();
                    if i != seed {
                        margin.observe(d - radius);
                    }
                    d <= radius
                })
                .collect(),
            _ => members.clone(),
        };
        let mut pick = seed;
        if let Some((best, runner_up)) = argmax_by_kappa(&candidates, &kappa) {
            if let Some(r) = runner_up {
                margin.observe(kappa[best] - r);
            }
            let replace = match strategy {
                AnchorStrategy::Cluster { threshold } => {
                    if threshold.is_finite() {
                        margin.observe(kappa[best] - threshold);
                    }
                    kappa[best] > threshold
                }
                _ => true,
            };
            if replace {
                pick = best;
            }
        }
        if chosen.contains(&pick) {
            pick = seed;
        }
        chosen.push(pick);
    }

    Ok(AnchorSet {
        anchors: chosen.iter().map(|&i| points[i]).collect(),
        source_indices: chosen,
        strategy,
        seeds,
        margin,
    })
}

/// Assigns every point to its nearest seed (earlier seed on ties).
fn assign_clusters(points: &[Point3<f64>], seeds: &[usize], margin: &mut Margin) -> Vec<Vec<usize>> {
    let mut clusters = vec![Vec::new(); seeds.len()];
    for (i, p) in points.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        let mut second_d = f64::INFINITY;
        for (c, &s) in seeds.iter().enumerate() {
            let d = (p - points[s]).norm();
            if d < best_d {
                second_d = best_d;
                best_d = d;
                best = c;
            } else if d < second_d {
                second_d = d;
            }
        }
        if seeds.len() > 1 {
            margin.observe(second_d - best_d);
        }
        clusters[best].push(i);
    }
    clusters
}

fn argmax_by_kappa(candidates: &[usize], kappa: &[f64]) -> Option<(usize, Option<f64>)> {
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    let mut best: Option<usize> = None;
    let mut second: Option<f64> = None;
    for i in sorted {
        match best {
            None => best = Some(i),
            Some(b) if kappa[i] > kappa[b] => {
                second = Some(kappa[b]);
                best = Some(i);
            }
            Some(_) => {
                if second.is_none_or(|s| kappa[i] > s) {
                    second = Some(kappa[i]);
                }
            }
        }
    }
    best.map(|b| (b, second))
}

/// Anchor coordinates plus the header fields of an anchor file.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorFile {
    pub anchors: Vec<Point3<f64>>,
    pub strategy: Option<String>,
    pub radius: Option<f64>,
    pub threshold: Option<f64>,
}

/// Writes anchors as XYZ text preceded by the
/// `# strategy=<s> k=<k> radius=<r> threshold=<t>` header line.
pub fn save_anchor_file(set: &AnchorSet, path: &Path) -> Result<()> {
    let cloud = PointCloud::new(set.anchors.clone())?;
    let bytes = write_xyz(&cloud, Some(&set.header_line()));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_anchor_file(path: &Path) -> Result<AnchorFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_anchor_file(&text)
}

pub fn parse_anchor_file(text: &str) -> Result<AnchorFile> {
    let cloud = parse_xyz(text)?;
    let mut file = AnchorFile {
        anchors: cloud.points().to_vec(),
        strategy: None,
        radius: None,
        threshold: None,
    };
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| l.starts_with('#') && l.contains("strategy="));
    if let Some(h) = header {
        for kv in h.trim_start_matches('#').split_whitespace() {
            let Some((key, value)) = kv.split_once('=') else {
                continue;
            };
            let num = || (value != "none").then(|| f64::from_str(value).ok()).flatten();
            match key {
                "strategy" => file.strategy = Some(value.to_string()),
                "radius" => file.radius = num(),
                "threshold" => file.threshold = num(),
                "k" => {
                    let k: usize = value.parse().map_err(|_| Error::Parse {
                        line: 1,
                        reason: format!("bad k {value:?}"),
                    })?;
                    if k != file.anchors.len() {
                        return Err(Error::Parse {
                            line: 1,
                            reason: format!("header says k={k} but {} anchors follow", file.anchors.len()),
                        });
                    }
                }
                _ => {}
            }
        }
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{apply_rigid, random_rotation};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap()
    }

    /// Samples on the surface of the cube [-0.5, 0.5]³.
    fn cube_surface(per_face: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for axis in 0..3 {
            for side in [-0.5, 0.5] {
                for _ in 0..per_face {
                    let (u, v): (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                    let mut p = [0.0; 3];
                    p[axis] = side;
                    p[(axis + 1) % 3] = u;
                    p[(axis + 2) % 3] = v;
                    pts.push(Point3::new(p[0], p[1], p[2]));
                }
            }
        }
        PointCloud::new(pts).unwrap()
    }

    /// Brute-force FPS: recomputes every min-distance from scratch.
    fn fps_oracle(points: &[Point3<f64>], k: usize) -> Vec<usize> {
        let n = points.len();
        let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n as f64;
        let mut sel: Vec<usize> = Vec::new();
        let mut best = 0;
        for i in 0..n {
            if (points[i].coords - c).norm() > (points[best].coords - c).norm() {
                best = i;
            }
        }
        sel.push(best);
        while sel.len() < k {
            let mut best: Option<(f64, usize)> = None;
            for i in (0..n).filter(|i| !sel.contains(i)) {
                let d = sel
                    .iter()
                    .map(|&j| (points[i] - points[j]).norm())
                    .fold(f64::INFINITY, f64::min);
                if best.is_none_or(|(bd, _)| d > bd) {
                    best = Some((d, i));
                }
            }
            sel.push(best.unwrap().1);
        }
        sel
    }

    #[test]
    fn fps_on_unit_segment_uses_index_tie_rule() {
        let c = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]]).unwrap();
        assert_eq!(deterministic_fps(&c, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn fps_single_pick_is_farthest_from_centroid() {
        let c = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [5.0, 1.0, 0.0], [0.2, 0.2, 0.2]])
            .unwrap();
        assert_eq!(deterministic_fps(&c, 1).unwrap(), vec![2]);
    }

    #[test]
    fn fps_matches_brute_force() {
        for seed in 0..20 {
            let c = random_cloud(100, seed);
            assert_eq!(deterministic_fps(&c, 8).unwrap(), fps_oracle(c.points(), 8));
        }
    }

    #[test]
    fn fps_errors() {
        let c = random_cloud(3, 0);
        assert!(matches!(deterministic_fps(&c, 4), Err(Error::KTooLarge { .. })));
        assert!(deterministic_fps(&c, 0).is_err());
    }

    #[test]
    fn fps_max_min_property_spot_check() {
        let c = random_cloud(200, 5);
        let k = 8;
        let sel = deterministic_fps(&c, k).unwrap();
        let min_pair = |idx: &[usize]| {
            let mut m = f64::INFINITY;
            for a in 0..idx.len() {
                for b in 0..a {
                    m = m.min((c.points()[idx[a]] - c.points()[idx[b]]).norm());
                }
            }
            m
        };
        let fps_min = min_pair(&sel);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let subset = rand::seq::index::sample(&mut rng, c.len(), k).into_vec();
            assert!(fps_min >= min_pair(&subset));
        }
    }

    #[test]
    fn laplacian_of_constant_field_is_zero() {
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                pts.push(Point3::new(x as f64, y as f64, 0.0));
            }
        }
        let n = pts.len();
        let c = PointCloud::with_normals(pts, vec![Vector3::z(); n]).unwrap();
        let f = curvature(&c, 6).unwrap();
        assert!(f.laplacian.iter().all(|l| l.norm() == 0.0));
        assert!(f.kappa.iter().all(|&k| k == 0.0));
    }

    #[test]
    fn laplacian_of_opposite_pair() {
        let c = PointCloud::with_normals(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)],
            vec![Vector3::z(), -Vector3::z()],
        )
        .unwrap();
        let lap = normal_laplacian(&c, 1).unwrap();
        assert_eq!(lap[0], 2.0 * Vector3::z());
        assert_eq!(lap[1], -2.0 * Vector3::z());
    }

    #[test]
    fn laplacian_grows_with_neighborhood_extent_on_sphere() {
        // With radial normals on the unit sphere, n·nⱼ = 1 − cⱼ²/2 for chord
        // length cⱼ, so the radial part of Δn is exactly mean(cⱼ²)/2.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3<f64>> = (0..3000)
            .map(|_| loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if v.norm() > 0.2 && v.norm() < 1.0 {
                    break Point3::from(v.normalize());
                }
            })
            .collect();
        let normals: Vec<Vector3<f64>> = pts.iter().map(|p| p.coords).collect();
        let c = PointCloud::with_normals(pts.clone(), normals.clone()).unwrap();
        let index = KnnIndex::new(&pts);
        let mut prev = 0.0;
        for k in [4, 16, 64] {
            let lap = normal_laplacian(&c, k).unwrap();
            for i in (0..pts.len()).step_by(37) {
                let hood = index.knn_of(i, k).unwrap();
                let chord_sq =
                    hood.iter().map(|&j| (pts[i] - pts[j]).norm_squared()).sum::<f64>() / k as f64;
                assert!((normals[i].dot(&lap[i]) - chord_sq / 2.0).abs() < 1e-12);
            }
            // The tangential part is sampling noise; the radial part tracks
            // the cap size.
            let mean = lap.iter().zip(&normals).map(|(l, n)| l.dot(n)).sum::<f64>() / lap.len() as f64;
            assert!(mean > prev, "k={k}: {mean} <= {prev}");
            prev = mean;
        }
    }

    #[test]
    fn cube_edges_have_higher_curvature_than_faces() {
        let c = cube_surface(400, 9);
        let c = crate::normals::estimate_normals(&c, 16).unwrap();
        // Analytic normals would be exact; estimated normals blur the edges
        // but keep the ordering.
        let f = curvature(&c, 16).unwrap();
        let near_edge = |p: &Point3<f64>| {
            let on_max = p.coords.iter().filter(|v| v.abs() > 0.45).count();
            on_max >= 2
        };
        let interior = |p: &Point3<f64>| p.coords.iter().filter(|v| v.abs() > 0.35).count() == 1;
        let median = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let edge_k: Vec<f64> = c.points().iter().zip(&f.kappa).filter(|(p, _)| near_edge(p)).map(|(_, k)| *k).collect();
        let face_k: Vec<f64> = c.points().iter().zip(&f.kappa).filter(|(p, _)| interior(p)).map(|(_, k)| *k).collect();
        assert!(!edge_k.is_empty() && !face_k.is_empty());
        assert!(median(edge_k) > median(face_k));
    }

    #[test]
    fn curvature_is_rotation_invariant() {
        let c = crate::normals::estimate_normals(&random_cloud(300, 4), 12).unwrap();
        let t = random_rotation(17);
        let a = curvature(&c, 12).unwrap();
        let b = curvature(&apply_rigid(&c, &t), 12).unwrap();
        for (x, y) in a.kappa.iter().zip(&b.kappa) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn kappa_is_nonnegative() {
        let c = crate::normals::estimate_normals(&random_cloud(200, 12), 8).unwrap();
        assert!(curvature(&c, 8).unwrap().kappa.iter().all(|&k| k >= -1e-12));
    }

    #[test]
    fn fps_strategy_equals_deterministic_fps() {
        let c = random_cloud(150, 1);
        let s = select_anchors(&c, 8, AnchorStrategy::Fps, &SelectionOptions::default()).unwrap();
        assert_eq!(s.source_indices, deterministic_fps(&c, 8).unwrap());
        for (a, &i) in s.anchors.iter().zip(&s.source_indices) {
            assert_eq!(*a, c.points()[i]);
        }
    }

    #[test]
    fn infinite_threshold_reduces_to_fps() {
        let c = random_cloud(200, 2);
        let s = select_anchors(
            &c,
            8,
            AnchorStrategy::Cluster {
                threshold: f64::INFINITY,
            },
            &SelectionOptions::default(),
        )
        .unwrap();
        assert_eq!(s.source_indices, deterministic_fps(&c, 8).unwrap());
    }

    #[test]
    fn zero_threshold_moves_anchors_to_curvature_peaks() {
        let c = cube_surface(200, 3);
        let opts = SelectionOptions::default();
        let s = select_anchors(&c, 8, AnchorStrategy::Cluster { threshold: 0.0 }, &opts).unwrap();
        assert_ne!(s.source_indices, s.seeds);
        let mut uniq = s.source_indices.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 8);
    }

    #[test]
    fn ball_query_stays_within_radius() {
        let c = cube_surface(300, 4);
        for radius in [0.0, 0.05, 0.075, 0.15] {
            let s = select_anchors(&c, 8, AnchorStrategy::BallQuery { radius }, &SelectionOptions::default())
                .unwrap();
            for (j, &i) in s.source_indices.iter().enumerate() {
                let seed = c.points()[s.seeds[j]];
                assert!((c.points()[i] - seed).norm() <= radius);
            }
            if radius == 0.0 {
                assert_eq!(s.source_indices, s.seeds);
            }
        }
    }

    #[test]
    fn cluster_scope_curvature_runs() {
        let c = cube_surface(150, 5);
        let opts = SelectionOptions {
            k_nn: 10,
            scope: CurvatureScope::Cluster,
        };
        let s = select_anchors(&c, 8, AnchorStrategy::Cluster { threshold: 0.0 }, &opts).unwrap();
        assert_eq!(s.len(), 8);
    }

    #[test]
    fn selection_is_equivariant_and_deterministic() {
        let c = random_cloud(400, 21);
        let strategy = AnchorStrategy::default();
        let opts = SelectionOptions::default();
        let a = select_anchors(&c, 8, strategy, &opts).unwrap();
        assert!(a.margin.is_safe(), "{:?}", a.margin);
        assert_eq!(a, select_anchors(&c, 8, strategy, &opts).unwrap());
        let t = random_rotation(5).with_translation(Vector3::new(1.0, -3.0, 0.5));
        let b = select_anchors(&apply_rigid(&c, &t), 8, strategy, &opts).unwrap();
        assert_eq!(a.source_indices, b.source_indices);
        for (p, q) in a.anchors.iter().zip(&b.anchors) {
            assert!((t.apply_point(p) - q).norm() < 1e-9);
        }
    }

    #[test]
    fn selection_is_permutation_invariant() {
        let c = random_cloud(300, 8);
        let mut perm: Vec<usize> = (0..c.len()).collect();
        perm.reverse();
        perm.swap(3, 200);
        let shuffled = c.select(&perm);
        let opts = SelectionOptions::default();
        let strategy = AnchorStrategy::Cluster { threshold: 0.0 };
        let a = select_anchors(&c, 8, strategy, &opts).unwrap();
        let b = select_anchors(&shuffled, 8, strategy, &opts).unwrap();
        assert!(a.margin.is_safe() && b.margin.is_safe());
        assert_eq!(a.anchors, b.anchors);
        for (&ia, &ib) in a.source_indices.iter().zip(&b.source_indices) {
            assert_eq!(perm[ib], ia);
        }
    }

    #[test]
    fn symmetric_cloud_reports_unsafe_margin() {
        let c = PointCloud::from_xyz(&[
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        let s = select_anchors(&c, 3, AnchorStrategy::Fps, &SelectionOptions::default()).unwrap();
        assert!(!s.margin.is_safe());
    }

    #[test]
    fn anchor_file_round_trip() {
        let c = random_cloud(50, 3);
        let s = select_anchors(&c, 5, AnchorStrategy::BallQuery { radius: 0.075 }, &SelectionOptions {
            k_nn: 8,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.xyz");
        save_anchor_file(&s, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# strategy=ballquery k=5 radius=0.075 threshold=none\n"));
        let f = load_anchor_file(&path).unwrap();
        assert_eq!(f.anchors, s.anchors);
        assert_eq!(f.strategy.as_deref(), Some("ballquery"));
        assert_eq!(f.radius, Some(0.075));
        assert_eq!(f.threshold, None);
    }

    #[test]
    fn anchor_file_k_mismatch_is_rejected() {
        let text = "# strategy=fps k=3 radius=none threshold=none\n0 0 0\n";
        assert!(parse_anchor_file(text).is_err());
    }
}
