use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{ArgGroup, Args, Parser, Subcommand};

use anchordist::anchors::{AnchorStrategy, CurvatureScope, DEFAULT_BALL_RADIUS, DEFAULT_CURVATURE_THRESHOLD};
use anchordist::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "anchordist", version, about = "Anchor-distance point cloud encoding, decoding and completion")]
pub struct Cli {
    /// key=value file with defaults; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel stages [env: ESCAPE_WORKERS].
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select anchor points from a cloud.
    Anchors(AnchorsArgs),
    /// Encode a cloud against an anchor file.
    Encode(EncodeArgs),
    /// Decode a distance matrix back to points.
    Decode(DecodeArgs),
    /// Run the full completion pipeline.
    Complete(CompleteArgs),
    /// Compare two clouds or two distance matrices.
    Eval(EvalArgs),
    /// Add noise, remove points or rotate a cloud.
    Perturb(PerturbArgs),
}

#[derive(Debug, Args)]
pub struct SelectionArgs {
    #[arg(long)]
    pub k: Option<usize>,
    /// fps, cluster or ballquery.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Neighborhood size for normals and curvature.
    #[arg(long)]
    pub knn: Option<usize>,
    /// global or cluster.
    #[arg(long)]
    pub scope: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnchorsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub anchors: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Output point count.
    #[arg(long)]
    pub m: Option<usize>,
    /// Input resample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// identity or external:<path>.
    #[arg(long)]
    pub predictor: Option<String>,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// External predictor timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// JSON-lines report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// cdl1, cdl2, fidelity or dmcd.
    #[arg(long)]
    pub metric: String,
    /// Anchor file for dmcd between two clouds.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("op").required(true).args(["noise_sigma", "remove_ratio", "rotate"])))]
pub struct PerturbArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub remove_ratio: Option<f64>,
    /// `random` or `rx,ry,rz` in degrees.
    #[arg(long)]
    pub rotate: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

const CONFIG_KEYS: &[&str] = &[
    "k",
    "n",
    "m",
    "strategy",
    "radius",
    "threshold",
    "knn",
    "scope",
    "max_iters",
    "tol",
    "damping_init",
    "damping_scale",
    "singular_guard",
    "predictor",
    "normalize",
    "seed",
    "timeout",
    "workers",
];

/// Values from a `--config` file.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::InvalidArgument(format!("config file {}: {e}", p.display())))?;
                Self::parse(&text)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key=value", i + 1)))?;
            let k = k.trim().replace('-', "_");
            if !CONFIG_KEYS.contains(&k.as_str()) {
                return Err(Error::InvalidArgument(format!("config line {}: unknown key {k:?}", i + 1)));
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::InvalidArgument(format!("config key {key}: cannot parse {v:?}")))
            })
            .transpose()
    }
}

/// `flag`, else `config[key]`, else `default`.
pub fn pick<T: FromStr>(flag: Option<T>, config: &ConfigFile, key: &str, default: T) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(config.get(key)?.unwrap_or(default)),
    }
}

pub fn parse_strategy(name: &str, radius: Option<f64>, threshold: Option<f64>) -> Result<AnchorStrategy> {
    match name {
        "fps" => Ok(AnchorStrategy::Fps),
        "cluster" => Ok(AnchorStrategy::Cluster {
            threshold: threshold.unwrap_or(DEFAULT_CURVATURE_THRESHOLD),
        }),
        "ballquery" | "ball_query" => Ok(AnchorStrategy::BallQuery {
            radius: radius.unwrap_or(DEFAULT_BALL_RADIUS),
        }),
        other => Err(Error::InvalidArgument(format!(
            "unknown strategy {other:?}, expected fps, cluster or ballquery"
        ))),
    }
}

pub fn parse_scope(name: &str) -> Result<CurvatureScope> {
    match name {
        "global" => Ok(CurvatureScope::Global),
        "cluster" => Ok(CurvatureScope::Cluster),
        other => Err(Error::InvalidArgument(format!("unknown scope {other:?}, expected global or cluster"))),
    }
}

/// Degrees `rx,ry,rz`.
pub fn parse_angles(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::InvalidArgument(format!("--rotate expects random or rx,ry,rz, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse::<f64>().map_err(|_| bad())?;
        if !o.is_finite() {
            return Err(bad());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let c = ConfigFile::parse("# defaults\nk = 6\nmax-iters=50 # trailing\n\n").unwrap();
        assert_eq!(c.get::<usize>("k").unwrap(), Some(6));
        assert_eq!(c.get::<usize>("max_iters").unwrap(), Some(50));
        assert_eq!(c.get::<f64>("tol").unwrap(), None);
        assert!(ConfigFile::parse("bogus=1").is_err());
        assert!(ConfigFile::parse("k").is_err());
        assert!(ConfigFile::parse("k=x").unwrap().get::<usize>("k").is_err());
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let c = ConfigFile::parse("k=6").unwrap();
        assert_eq!(pick(Some(5), &c, "k", 8).unwrap(), 5);
        assert_eq!(pick(None, &c, "k", 8).unwrap(), 6);
        assert_eq!(pick(None, &ConfigFile::default(), "k", 8).unwrap(), 8);
    }

    #[test]
    fn strategies_and_angles() {
        assert_eq!(parse_strategy("ballquery", None, None).unwrap(), AnchorStrategy::BallQuery { radius: 0.075 });
        assert_eq!(parse_strategy("cluster", None, Some(f64::INFINITY)).unwrap(), AnchorStrategy::Cluster { threshold: f64::INFINITY });
        assert!(parse_strategy("kmeans", None, None).is_err());
        assert_eq!(parse_angles("90,0,-45").unwrap(), [90.0, 0.0, -45.0]);
        assert!(parse_angles("90,0").is_err());
    }
}
