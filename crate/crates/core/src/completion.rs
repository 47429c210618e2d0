//! Partial-to-complete pipeline: resample, select anchors, encode, predict
//! distances, decode.
//!
//! The distance predictor is pluggable. [`PredictorSpec::Identity`] cycles
//! the input rows and needs no model. [`PredictorSpec::External`] runs a
//! subprocess that reads and writes ESCD files:
//!
//! ```text
//! <predictor> <input.escd> <output.escd> <m_out>
//! ```
//!
//! The subprocess must exit 0 and write exactly `m_out` rows against the
//! unchanged anchors. Its standard error is captured into the report. The
//! pipeline seed is exported as `ESCAPE_SEED`.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use nalgebra::{Point3, Vector3};
use serde_json::{json, Value};

use crate::anchors::{fps_with_margin, select_anchors, AnchorSet, AnchorStrategy, SelectionOptions, DEFAULT_K};
use crate::cloud::PointCloud;
use crate::codec::{self, escd, DistanceMatrix, RowFailure, SolverOptions, MIN_ANCHORS};
use crate::error::{Error, Result};
use crate::margin::Margin;

pub const DEFAULT_N_IN: usize = 2048;
pub const DEFAULT_M_OUT: usize = 16384;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

/// Target radius of the normalized cloud.
const NORMALIZED_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PredictorSpec {
    #[default]
    Identity,
    External(PathBuf),
}

impl PredictorSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            PredictorSpec::Identity => "identity",
            PredictorSpec::External(_) => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionConfig {
    pub k: usize,
    pub n_in: usize,
    pub m_out: usize,
    pub strategy: AnchorStrategy,
    pub selection: SelectionOptions,
    pub solver: SolverOptions,
    pub predictor: PredictorSpec,
    /// Center the input and scale it to radius 0.5 before anything else.
    pub normalize: bool,
    /// Wall-clock limit for the external predictor.
    pub timeout: Duration,
    /// Decode pool size; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            n_in: DEFAULT_N_IN,
            m_out: DEFAULT_M_OUT,
            strategy: AnchorStrategy::default(),
            selection: SelectionOptions::default(),
            solver: SolverOptions::default(),
            predictor: PredictorSpec::Identity,
            normalize: false,
            timeout: DEFAULT_TIMEOUT,
            workers: None,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < MIN_ANCHORS {
            return Err(Error::TooFewAnchors(self.k));
        }
        if self.n_in < self.k {
            return Err(Error::InvalidArgument(format!(
                "n_in = {} is smaller than k = {}",
                self.n_in, self.k
            )));
        }
        if self.m_out < 1 {
            return Err(Error::InvalidArgument("m_out must be at least 1".into()));
        }
        if self.selection.k_nn < 1 {
            return Err(Error::InvalidArgument("k_nn must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(Error::InvalidArgument("timeout must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        if let PredictorSpec::External(p) = &self.predictor {
            if p.as_os_str().is_empty() {
                return Err(Error::InvalidArgument("external predictor path is empty".into()));
            }
        }
        self.solver.validate()
    }
}

/// Brings `cloud` to exactly `n_target` points.
///
/// Larger clouds are reduced by deterministic FPS; smaller ones are padded by
/// duplicating points round-robin from index 0. Duplication adds no jitter,
/// so `_seed` does not affect the result; it is kept for a stable signature.
pub fn resample(cloud: &PointCloud, n_target: usize, _seed: u64) -> Result<PointCloud> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if n_target == 0 {
        return Err(Error::InvalidArgument("resample target must be positive".into()));
    }
    let indices: Vec<usize> = if n > n_target {
        fps_with_margin(cloud.points(), n_target)?.0
    } else {
        (0..n_target).map(|i| i % n).collect()
    };
    Ok(cloud.select(&indices))
}

/// Predicted complete-shape distances plus whatever the predictor printed on
/// standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub matrix: DistanceMatrix,
    pub diagnostics: String,
}

/// Predicts `m_out` distance rows from the partial matrix.
pub fn predict_distances(
    partial: &DistanceMatrix,
    m_out: usize,
    spec: &PredictorSpec,
    seed: u64,
) -> Result<Prediction> {
    predict_distances_with_timeout(partial, m_out, spec, seed, DEFAULT_TIMEOUT)
}

pub fn predict_distances_with_timeout(
    partial: &DistanceMatrix,
    m_out: usize,
    spec: &PredictorSpec,
    seed: u64,
    timeout: Duration,
) -> Result<Prediction> {
    if m_out == 0 {
        return Err(Error::InvalidArgument("m_out must be at least 1".into()));
    }
    match spec {
        PredictorSpec::Identity => {
            if partial.rows() == 0 {
                return Err(Error::EmptyCloud);
            }
            let rows: Vec<usize> = (0..m_out).map(|i| i % partial.rows()).collect();
            Ok(Prediction {
                matrix: partial.select_rows(&rows),
                diagnostics: String::new(),
            })
        }
        PredictorSpec::External(exe) => run_external(partial, m_out, exe, seed, timeout),
    }
}

fn run_external(
    partial: &DistanceMatrix,
    m_out: usize,
    exe: &PathBuf,
    seed: u64,
    timeout: Duration,
) -> Result<Prediction> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("input.escd");
    let output = dir.path().join("output.escd");
    escd::write_escd(partial, &input)?;

    let failed = |code: Option<i32>, diagnostics: String| Error::ExternalFailed { code, diagnostics };
    let mut child = Command::new(exe)
        .arg(&input)
        .arg(&output)
        .arg(m_out.to_string())
        .env("ESCAPE_SEED", seed.to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| failed(None, format!("cannot start {}: {e}", exe.display())))?;

    // Drain stderr on a side thread so a chatty child cannot block on a full pipe.
    let mut stderr = child.stderr.take().expect("stderr is piped");
    let reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    });

    let deadline = Instant::now() + timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                // Grandchildren may still hold the pipe open, so the reader
                // is left detached rather than joined.
                drop(reader);
                return Err(failed(None, format!("timed out after {:.1} s", timeout.as_secs_f64())));
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(failed(None, format!("wait failed: {e}"))),
        }
    };
    let diagnostics = reader.join().unwrap_or_default();
    if !status.success() {
        return Err(failed(status.code(), diagnostics.trim().to_string()));
    }

    let matrix = escd::read_escd(&output).map_err(|e| Error::BadExternalOutput(e.to_string()))?;
    if matrix.cols() != partial.cols() {
        return Err(Error::BadExternalOutput(format!(
            "expected {} columns, got {}",
            partial.cols(),
            matrix.cols()
        )));
    }
    if matrix.rows() != m_out {
        return Err(Error::BadExternalOutput(format!(
            "expected {m_out} rows, got {}",
            matrix.rows()
        )));
    }
    let same_anchors = matrix
        .anchors()
        .iter()
        .zip(partial.anchors())
        .all(|(a, b)| a.coords.iter().zip(b.coords.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    if !same_anchors {
        return Err(Error::BadExternalOutput("anchors differ from the input".into()));
    }
    Ok(Prediction { matrix, diagnostics })
}

/// Similarity applied by the `normalize` flag: `q = (p − center) · scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Point3<f64>,
    pub scale: f64,
}

impl Normalization {
    pub fn of(cloud: &PointCloud) -> Result<Self> {
        let center = cloud.centroid().ok_or(Error::EmptyCloud)?;
        let radius = cloud.points().iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
        if !(radius > 0.0) {
            return Err(Error::DegenerateConfiguration("all points coincide".into()));
        }
        Ok(Self {
            center,
            scale: NORMALIZED_RADIUS / radius,
        })
    }

    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let points = cloud.points().iter().map(|p| Point3::from((p - self.center) * self.scale)).collect();
        match cloud.normals() {
            Some(n) => PointCloud::with_normals(points, n.to_vec()),
            None => PointCloud::new(points),
        }
    }

    pub fn invert(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let inv = 1.0 / self.scale;
        let shift: Vector3<f64> = self.center.coords;
        PointCloud::new(cloud.points().iter().map(|p| Point3::from(p.coords * inv + shift)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub elapsed: Duration,
}

#[derive(Debug)]
pub struct CompletionReport {
    pub anchors: AnchorSet,
    /// Per-row objective, NaN for failed rows.
    pub residuals: Vec<f64>,
    pub failures: Vec<RowFailure>,
    pub timings: Vec<StageTiming>,
    pub predictor: &'static str,
    /// Standard error of the external predictor.
    pub diagnostics: String,
    pub normalization: Option<Normalization>,
    /// The partial encoding and the predicted matrix.
    pub encoded: DistanceMatrix,
    pub predicted: DistanceMatrix,
}

impl CompletionReport {
    pub fn margin(&self) -> Margin {
        self.anchors.margin
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().filter(|r| r.is_finite()).fold(0.0, f64::max)
    }

    /// One JSON object per line: anchors, stage timings, residual summary,
    /// failures, predictor diagnostics.
    pub fn to_json_lines(&self) -> String {
        let mut lines: Vec<Value> = Vec::new();
        lines.push(json!({
            "event": "anchors",
            "strategy": self.anchors.strategy.name(),
            "radius": self.anchors.strategy.radius(),
            "threshold": self.anchors.strategy.threshold(),
            "k": self.anchors.len(),
            "indices": self.anchors.source_indices,
            "anchors": self.anchors.anchors.iter().map(|a| [a.x, a.y, a.z]).collect::<Vec<_>>(),
            "margin": finite_or_null(self.anchors.margin.value()),
            "margin_safe": self.anchors.margin.is_safe(),
        }));
        if let Some(n) = self.normalization {
            lines.push(json!({
                "event": "normalization",
                "center": [n.center.x, n.center.y, n.center.z],
                "scale": n.scale,
            }));
        }
        for t in &self.timings {
            lines.push(json!({
                "event": "timing",
                "stage": t.stage,
                "seconds": t.elapsed.as_secs_f64(),
            }));
        }
        let finite: Vec<f64> = self.residuals.iter().copied().filter(|r| r.is_finite()).collect();
        lines.push(json!({
            "event": "residuals",
            "rows": self.residuals.len(),
            "max": finite_or_null(self.max_residual()),
            "mean": crate::eval::mean(&finite).and_then(finite_or_null),
            "median": crate::eval::median(&finite).and_then(finite_or_null),
            "failures": self.failures.len(),
        }));
        for f in &self.failures {
            lines.push(json!({
                "event": "failure",
                "row": f.row,
                "error": f.error.to_string(),
            }));
        }
        lines.push(json!({
            "event": "predictor",
            "kind": self.predictor,
            "stderr": self.diagnostics,
        }));
        let mut out = String::new();
        for l in lines {
            out.push_str(&l.to_string());
            out.push('\n');
        }
        out
    }
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug)]
pub struct Completion {
    pub cloud: PointCloud,
    pub report: CompletionReport,
}

/// Runs the full pipeline on a partial cloud.
///
/// Errors carry the failing stage as [`Error::Stage`]. Rows the decoder
/// cannot solve stay in the output at the anchor centroid and are listed in
/// the report.
pub fn complete(partial: &PointCloud, config: &CompletionConfig, seed: u64) -> Result<Completion> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let mut timings = Vec::new();
    let mut timed = |stage: &'static str, start: Instant| {
        timings.push(StageTiming {
            stage,
            elapsed: start.elapsed(),
        })
    };

    let t = Instant::now();
    let normalization = if config.normalize {
        Some(Normalization::of(partial).map_err(|e| e.in_stage("normalize"))?)
    } else {
        None
    };
    let input = match &normalization {
        Some(n) => n.apply(partial).map_err(|e| e.in_stage("normalize"))?,
        None => partial.clone(),
    };
    let input = resample(&input, config.n_in, seed).map_err(|e| e.in_stage("resample"))?;
    timed("resample", t);

    let t = Instant::now();
    let anchors = select_anchors(&input, config.k, config.strategy, &config.selection)
        .map_err(|e| e.in_stage("anchors"))?;
    timed("anchors", t);

    let t = Instant::now();
    let encoded = codec::encode(&input, &anchors.anchors).map_err(|e| e.in_stage("encode"))?;
    timed("encode", t);

    let t = Instant::now();
    let prediction =
        predict_distances_with_timeout(&encoded, config.m_out, &config.predictor, seed, config.timeout)
            .map_err(|e| e.in_stage("predict"))?;
    timed("predict", t);

    let t = Instant::now();
    let decoded = match config.workers {
        Some(w) => codec::decode_with_workers(&prediction.matrix, &config.solver, w),
        None => codec::decode(&prediction.matrix, &config.solver),
    }
    .map_err(|e| e.in_stage("decode"))?;
    timed("decode", t);

    let cloud = match &normalization {
        Some(n) => n.invert(&decoded.cloud).map_err(|e| e.in_stage("denormalize"))?,
        None => decoded.cloud,
    };
    Ok(Completion {
        cloud,
        report: CompletionReport {
            anchors,
            residuals: decoded.residuals,
            failures: decoded.failures,
            timings,
            predictor: config.predictor.kind(),
            diagnostics: prediction.diagnostics,
            normalization,
            encoded,
            predicted: prediction.matrix,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::deterministic_fps;
    use crate::cloud::{apply_rigid, random_rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect()).unwrap()
    }

    fn small_config() -> CompletionConfig {
        CompletionConfig {
            n_in: 128,
            m_out: 128,
            ..CompletionConfig::default()
        }
    }

    #[test]
    fn resample_identity_down_and_up() {
        let c = random_cloud(10, 1);
        assert_eq!(resample(&c, 10, 0).unwrap(), c);
        let down = resample(&c, 4, 0).unwrap();
        assert_eq!(down, c.select(&deterministic_fps(&c, 4).unwrap()));
        let three = random_cloud(3, 2);
        let up = resample(&three, 5, 0).unwrap();
        assert_eq!(up, three.select(&[0, 1, 2, 0, 1]));
        assert!(matches!(
            resample(&three.select(&[]), 4, 0),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn identity_predictor_cycles_rows() {
        let c = random_cloud(5, 3);
        let d = codec::encode(&c, &c.points()[..4]).unwrap();
        let same = predict_distances(&d, 5, &PredictorSpec::Identity, 0).unwrap();
        assert_eq!(same.matrix, d);
        let twice = predict_distances(&d, 10, &PredictorSpec::Identity, 0).unwrap().matrix;
        for i in 0..5 {
            assert_eq!(twice.row(i), d.row(i));
            assert_eq!(twice.row(i + 5), d.row(i));
        }
    }

    #[test]
    fn missing_external_predictor_fails() {
        let c = random_cloud(5, 3);
        let d = codec::encode(&c, &c.points()[..4]).unwrap();
        let spec = PredictorSpec::External(PathBuf::from("/nonexistent/predictor"));
        assert!(matches!(
            predict_distances(&d, 5, &spec, 0),
            Err(Error::ExternalFailed { code: None, .. })
        ));
    }

    #[test]
    fn config_rejects_three_anchors() {
        let cfg = CompletionConfig {
            k: 3,
            ..small_config()
        };
        let err = complete(&random_cloud(200, 4), &cfg, 0).unwrap_err();
        assert!(matches!(err.root(), Error::TooFewAnchors(3)));
    }

    #[test]
    fn identity_pipeline_reproduces_resampled_input() {
        let cloud = random_cloud(300, 5);
        let cfg = small_config();
        let out = complete(&cloud, &cfg, 0).unwrap();
        let input = resample(&cloud, cfg.n_in, 0).unwrap();
        assert_eq!(out.cloud.len(), cfg.m_out);
        for (p, q) in out.cloud.points().iter().zip(input.points()) {
            assert!((p - q).norm() < 1e-7);
        }
        assert!(out.report.failures.is_empty());
    }

    #[test]
    fn pipeline_is_equivariant() {
        let cloud = random_cloud(300, 6);
        let cfg = small_config();
        let t = random_rotation(9).with_translation(Vector3::new(0.3, -2.0, 1.0));
        let a = complete(&cloud, &cfg, 0).unwrap();
        assert!(a.report.margin().is_safe());
        let b = complete(&apply_rigid(&cloud, &t), &cfg, 0).unwrap();
        let moved = apply_rigid(&a.cloud, &t);
        for (p, q) in moved.points().iter().zip(b.cloud.points()) {
            assert!((p - q).norm() < 1e-6);
        }
    }

    #[test]
    fn normalization_round_trips() {
        let cloud = apply_rigid(&random_cloud(300, 7), &random_rotation(1).with_translation(Vector3::new(5.0, 0.0, 0.0)));
        let cfg = CompletionConfig {
            normalize: true,
            ..small_config()
        };
        let out = complete(&cloud, &cfg, 0).unwrap();
        let n = out.report.normalization.unwrap();
        let r = cloud.points().iter().map(|p| (p - n.center).norm()).fold(0.0, f64::max);
        assert!((r * n.scale - 0.5).abs() < 1e-12);
        let input = resample(&cloud, cfg.n_in, 0).unwrap();
        for (p, q) in out.cloud.points().iter().zip(input.points()) {
            assert!((p - q).norm() < 1e-6);
        }
    }

    #[test]
    fn deterministic_intermediates() {
        let cloud = random_cloud(300, 8);
        let a = complete(&cloud, &small_config(), 3).unwrap();
        let b = complete(&cloud, &small_config(), 3).unwrap();
        assert_eq!(escd::to_bytes(&a.report.encoded).unwrap(), escd::to_bytes(&b.report.encoded).unwrap());
        assert_eq!(escd::to_bytes(&a.report.predicted).unwrap(), escd::to_bytes(&b.report.predicted).unwrap());
    }

    #[test]
    fn report_lines_are_json() {
        let out = complete(&random_cloud(300, 9), &small_config(), 0).unwrap();
        let text = out.report.to_json_lines();
        let events: Vec<String> = text
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap()["event"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(events.first().map(String::as_str), Some("anchors"));
        assert!(events.iter().any(|e| e == "residuals"));
        assert_eq!(events.iter().filter(|e| *e == "timing").count(), 5);
    }
}
