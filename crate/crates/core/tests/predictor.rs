use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anchordist::codec::{encode, escd};
use anchordist::completion::{complete, predict_distances, predict_distances_with_timeout, CompletionConfig, PredictorSpec};
use anchordist::{Error, Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ECHO: &str = env!("CARGO_BIN_EXE_escd-echo");

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new((0..n).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect()).unwrap()
}

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
    p
}

#[test]
fn echo_fixture_matches_identity_bitwise() {
    let c = cloud(50, 1);
    let d = encode(&c, &c.points()[..6]).unwrap();
    for m in [1, 50, 137] {
        let a = predict_distances(&d, m, &PredictorSpec::Identity, 0).unwrap();
        let b = predict_distances(&d, m, &PredictorSpec::External(ECHO.into()), 0).unwrap();
        assert_eq!(escd::to_bytes(&a.matrix).unwrap(), escd::to_bytes(&b.matrix).unwrap());
    }
}

#[test]
fn failing_predictor_reports_exit_code_and_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let exe = script(dir.path(), "fail.sh", "echo 'model weights missing' >&2\nexit 3");
    let c = cloud(20, 2);
    let d = encode(&c, &c.points()[..4]).unwrap();
    match predict_distances(&d, 10, &PredictorSpec::External(exe), 0) {
        Err(Error::ExternalFailed { code, diagnostics }) => {
            assert_eq!(code, Some(3));
            assert!(diagnostics.contains("model weights missing"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_row_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    // Copies the input unchanged, ignoring m_out.
    let exe = script(dir.path(), "copy.sh", "cp \"$1\" \"$2\"");
    let c = cloud(20, 3);
    let d = encode(&c, &c.points()[..4]).unwrap();
    assert!(predict_distances(&d, 20, &PredictorSpec::External(exe.clone()), 0).is_ok());
    assert!(matches!(
        predict_distances(&d, 21, &PredictorSpec::External(exe), 0),
        Err(Error::BadExternalOutput(_))
    ));
}

#[test]
fn changed_anchors_and_garbage_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = cloud(20, 4);
    let d = encode(&c, &c.points()[..4]).unwrap();
    let other = encode(&c, &c.points()[4..8]).unwrap();
    let other_path = dir.path().join("other.escd");
    escd::write_escd(&other, &other_path).unwrap();
    let swap = script(dir.path(), "swap.sh", &format!("cp '{}' \"$2\"", other_path.display()));
    assert!(matches!(
        predict_distances(&d, 20, &PredictorSpec::External(swap), 0),
        Err(Error::BadExternalOutput(_))
    ));
    let junk = script(dir.path(), "junk.sh", "printf 'nonsense' > \"$2\"");
    assert!(matches!(
        predict_distances(&d, 20, &PredictorSpec::External(junk), 0),
        Err(Error::BadExternalOutput(_))
    ));
    let silent = script(dir.path(), "silent.sh", "exit 0");
    assert!(matches!(
        predict_distances(&d, 20, &PredictorSpec::External(silent), 0),
        Err(Error::BadExternalOutput(_))
    ));
}

#[test]
fn slow_predictor_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let exe = script(dir.path(), "slow.sh", "sleep 5");
    let c = cloud(20, 5);
    let d = encode(&c, &c.points()[..4]).unwrap();
    let r = predict_distances_with_timeout(&d, 5, &PredictorSpec::External(exe), 0, Duration::from_millis(200));
    match r {
        Err(Error::ExternalFailed { code: None, diagnostics }) => assert!(diagnostics.contains("timed out")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn predictor_sees_seed_and_stderr_reaches_report() {
    let dir = tempfile::tempdir().unwrap();
    let exe = script(dir.path(), "seed.sh", &format!("echo \"seed=$ESCAPE_SEED\" >&2\nexec '{ECHO}' \"$@\""));
    let cfg = CompletionConfig {
        n_in: 64,
        m_out: 100,
        predictor: PredictorSpec::External(exe),
        ..CompletionConfig::default()
    };
    let out = complete(&cloud(100, 6), &cfg, 42).unwrap();
    assert_eq!(out.report.diagnostics.trim(), "seed=42");
    assert!(out.report.to_json_lines().contains("seed=42"));
}

#[test]
fn stage_labels_on_errors() {
    let cfg = CompletionConfig {
        n_in: 64,
        m_out: 10,
        predictor: PredictorSpec::External("/no/such/predictor".into()),
        ..CompletionConfig::default()
    };
    match complete(&cloud(100, 7), &cfg, 0) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "predict");
            assert!(matches!(*source, Error::ExternalFailed { .. }));
        }
        other => panic!("{other:?}"),
    }
}
