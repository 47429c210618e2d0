use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::warn;

use anchordist::anchors::{load_anchor_file, save_anchor_file, select_anchors, SelectionOptions};
use anchordist::cloud::{apply_rigid, random_rotation, RigidTransform};
use anchordist::codec::{self, escd, DistanceMatrix, SolverOptions};
use anchordist::completion::{complete, CompletionConfig, PredictorSpec};
use anchordist::eval::{
    add_gaussian_noise, chamfer_l1, chamfer_l2, fidelity, format_value, remove_points, EvalReport,
};
use anchordist::io::{load_cloud, save_cloud, CloudFormat, SaveWarning};
use anchordist::normals::DEFAULT_NORMAL_KNN;
use anchordist::{Error, PointCloud, Result};

use crate::args::*;

pub enum Outcome {
    Ok,
    /// Output was written but some rows failed to decode.
    Diverged(String),
}

const WORKERS_ENV: &str = "ESCAPE_WORKERS";

pub fn run(cli: Cli) -> Result<Outcome> {
    let config = ConfigFile::load(cli.config.as_deref())?;
    let workers = resolve_workers(cli.workers, &config)?;
    if let Some(w) = workers {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match cli.command {
        Command::Anchors(a) => anchors(a, &config),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a, &config),
        Command::Complete(a) => complete_cmd(a, &config, workers),
        Command::Eval(a) => eval(a),
        Command::Perturb(a) => perturb(a, &config),
    }
}

/// `--workers`, else `ESCAPE_WORKERS`, else the config file.
fn resolve_workers(flag: Option<usize>, config: &ConfigFile) -> Result<Option<usize>> {
    let env = match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("{WORKERS_ENV}={v:?} is not a count")))?,
        ),
        _ => None,
    };
    let w = flag.or(env).or(config.get("workers")?);
    if w == Some(0) {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    Ok(w)
}

fn load(path: &Path) -> Result<PointCloud> {
    load_cloud(path, CloudFormat::from_path(path))
}

fn save(cloud: &PointCloud, path: &Path) -> Result<()> {
    for w in save_cloud(cloud, path, CloudFormat::from_path(path))? {
        match w {
            SaveWarning::NormalsDropped => warn!("{}: normals dropped, format has no normal fields", path.display()),
        }
    }
    Ok(())
}

fn selection(args: &SelectionArgs, config: &ConfigFile) -> Result<(usize, anchordist::AnchorStrategy, SelectionOptions)> {
    let k = pick(args.k, config, "k", anchordist::anchors::DEFAULT_K)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let name: String = pick(args.strategy.clone(), config, "strategy", "ballquery".to_string())?;
    let radius = args.radius.or(config.get("radius")?);
    let threshold = args.threshold.or(config.get("threshold")?);
    let strategy = parse_strategy(&name, radius, threshold)?;
    let k_nn = pick(args.knn, config, "knn", DEFAULT_NORMAL_KNN)?;
    if k_nn == 0 {
        return Err(Error::InvalidArgument("knn must be positive".into()));
    }
    let scope_name: String = pick(args.scope.clone(), config, "scope", "global".to_string())?;
    let scope = parse_scope(&scope_name)?;
    Ok((k, strategy, SelectionOptions { k_nn, scope }))
}

fn solver(args: &SolverArgs, config: &ConfigFile) -> Result<SolverOptions> {
    let d = SolverOptions::default();
    let opts = SolverOptions {
        max_iters: pick(args.max_iters, config, "max_iters", d.max_iters)?,
        residual_tol: pick(args.tol, config, "tol", d.residual_tol)?,
        damping_init: pick(None, config, "damping_init", d.damping_init)?,
        damping_scale: pick(None, config, "damping_scale", d.damping_scale)?,
        singular_guard: pick(None, config, "singular_guard", d.singular_guard)?,
        ..d
    };
    opts.validate()?;
    Ok(opts)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), format_value)
}

fn anchors(args: AnchorsArgs, config: &ConfigFile) -> Result<Outcome> {
    let (k, strategy, options) = selection(&args.selection, config)?;
    let cloud = load(&args.input)?;
    let set = select_anchors(&cloud, k, strategy, &options)?;
    save_anchor_file(&set, &args.out)?;
    println!(
        "k={} strategy={} radius={} threshold={} margin={} margin_safe={}",
        set.len(),
        strategy.name(),
        fmt_opt(strategy.radius()),
        fmt_opt(strategy.threshold()),
        format_value(set.margin.value()),
        set.margin.is_safe()
    );
    Ok(Outcome::Ok)
}

fn encode(args: EncodeArgs) -> Result<Outcome> {
    let cloud = load(&args.input)?;
    let anchors = load_anchor_file(&args.anchors)?.anchors;
    let m = codec::encode(&cloud, &anchors)?;
    escd::write_escd(&m, &args.out)?;
    println!("rows={} cols={}", m.rows(), m.cols());
    Ok(Outcome::Ok)
}

fn decode(args: DecodeArgs, config: &ConfigFile) -> Result<Outcome> {
    let opts = solver(&args.solver, config)?;
    let m = escd::read_escd(&args.input)?;
    let decoded = codec::decode(&m, &opts)?;
    save(&decoded.cloud, &args.out)?;
    println!(
        "rows={} max_residual={} failures={}",
        m.rows(),
        format_value(decoded.max_residual()),
        decoded.failures.len()
    );
    Ok(match decoded.failures.first() {
        None => Outcome::Ok,
        Some(first) => Outcome::Diverged(format!(
            "{} rows failed to decode, first is row {}: {}",
            decoded.failures.len(),
            first.row,
            first.error
        )),
    })
}

fn parse_predictor(text: &str) -> Result<PredictorSpec> {
    if text == "identity" {
        return Ok(PredictorSpec::Identity);
    }
    match text.strip_prefix("external:") {
        Some(p) if !p.is_empty() => Ok(PredictorSpec::External(PathBuf::from(p))),
        _ => Err(Error::InvalidArgument(format!(
            "predictor must be identity or external:<path>, got {text:?}"
        ))),
    }
}

fn complete_cmd(args: CompleteArgs, config: &ConfigFile, workers: Option<usize>) -> Result<Outcome> {
    let (k, strategy, selection) = selection(&args.selection, config)?;
    let d = CompletionConfig::default();
    let timeout: f64 = pick(args.timeout, config, "timeout", d.timeout.as_secs_f64())?;
    if !(timeout > 0.0 && timeout.is_finite()) {
        return Err(Error::InvalidArgument(format!("timeout must be positive, got {timeout}")));
    }
    let predictor: String = pick(args.predictor.clone(), config, "predictor", "identity".to_string())?;
    let normalize = args.normalize || config.get::<bool>("normalize")?.unwrap_or(false);
    let cfg = CompletionConfig {
        k,
        n_in: pick(args.n, config, "n", d.n_in)?,
        m_out: pick(args.m, config, "m", d.m_out)?,
        strategy,
        selection,
        solver: solver(&args.solver, config)?,
        predictor: parse_predictor(&predictor)?,
        normalize,
        timeout: Duration::from_secs_f64(timeout),
        workers,
    };
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let seed = pick(args.seed, config, "seed", 0)?;

    let partial = load(&args.input)?;
    let out = complete(&partial, &cfg, seed)?;
    save(&out.cloud, &args.out)?;
    if let Some(path) = &args.report {
        fs::write(path, out.report.to_json_lines()).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    if !out.report.diagnostics.is_empty() {
        warn!("predictor stderr: {}", out.report.diagnostics.trim());
    }
    println!(
        "points={} k={} strategy={} predictor={} seed={} max_residual={} failures={} margin_safe={}",
        out.cloud.len(),
        out.report.anchors.len(),
        strategy.name(),
        cfg.predictor.kind(),
        seed,
        format_value(out.report.max_residual()),
        out.report.failures.len(),
        out.report.margin().is_safe()
    );
    Ok(Outcome::Ok)
}

fn is_matrix_path(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some(e) if e.eq_ignore_ascii_case("escd"))
}

fn load_matrix(path: &Path, anchors: Option<&[anchordist::Point3<f64>]>) -> Result<DistanceMatrix> {
    if is_matrix_path(path) {
        return escd::read_escd(path);
    }
    match anchors {
        Some(a) => codec::encode(&load(path)?, a),
        None => Err(Error::InvalidArgument(format!(
            "{} is not an .escd file; pass --anchors to encode it",
            path.display()
        ))),
    }
}

fn eval(args: EvalArgs) -> Result<Outcome> {
    let metric = args.metric.as_str();
    let value = match metric {
        "cdl1" | "cdl2" | "fidelity" => {
            let pred = load(&args.pred)?;
            let gt = load(&args.gt)?;
            match metric {
                "cdl1" => chamfer_l1(&pred, &gt)?,
                "cdl2" => chamfer_l2(&pred, &gt)?,
                _ => fidelity(&gt, &pred)?,
            }
        }
        "dmcd" => {
            let anchors = args.anchors.as_deref().map(load_anchor_file).transpose()?.map(|f| f.anchors);
            let a = load_matrix(&args.pred, anchors.as_deref())?;
            let b = load_matrix(&args.gt, anchors.as_deref())?;
            codec::dmcd(&a, &b)?
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown metric {other:?}, expected cdl1, cdl2, fidelity or dmcd"
            )))
        }
    };
    let report = EvalReport::new(metric, value, EvalReport::convention_for(metric))?;
    println!("{}", report.to_key_value());
    Ok(Outcome::Ok)
}

fn perturb(args: PerturbArgs, config: &ConfigFile) -> Result<Outcome> {
    let seed = pick(args.seed, config, "seed", 0)?;
    let cloud = load(&args.input)?;
    let (out, op) = if let Some(sigma) = args.noise_sigma {
        (add_gaussian_noise(&cloud, sigma, seed)?, format!("noise_sigma={sigma}"))
    } else if let Some(ratio) = args.remove_ratio {
        (remove_points(&cloud, ratio, seed)?, format!("remove_ratio={ratio}"))
    } else {
        let spec = args.rotate.as_deref().unwrap_or_default();
        let t = if spec == "random" {
            random_rotation(seed)
        } else {
            let [x, y, z] = parse_angles(spec)?;
            RigidTransform::from_euler_xyz(x.to_radians(), y.to_radians(), z.to_radians())
        };
        (apply_rigid(&cloud, &t), format!("rotate={spec}"))
    };
    save(&out, &args.out)?;
    println!("points={} {op} seed={seed}", out.len());
    Ok(Outcome::Ok)
}
