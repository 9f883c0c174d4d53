//! Run settings shared by every subcommand. Each field can come from a flag
//! or from the TOML file given with `--config`; flags win, and anything left
//! unset falls back to the defaults below.

use std::path::{Path, PathBuf};

use clap::Args;
use hypcbm::head::log_grid;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_ETA_IMG: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = hypcbm::head::DEFAULT_ALPHA;
pub const DEFAULT_BATCH: usize = hypcbm::activation::DEFAULT_BATCH;
pub const DEFAULT_LAMBDA_MIN: f64 = 1e-7;
pub const DEFAULT_LAMBDA_MAX: f64 = 1e-1;
pub const DEFAULT_LAMBDA_POINTS: usize = 13;
pub const DEFAULT_BUDGETS: [usize; 5] = [5, 10, 20, 50, 100];

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Concept bank container (`.hcbe`); its manifest is the sibling `.json`.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Image embeddings for single-set commands.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    /// Parent TAB child hierarchy file.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Trained head (`.hcmh`).
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub eta_img: Option<f64>,
    /// Norm threshold; overrides the bank manifest.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Cone aperture constant; overrides the bank manifest.
    #[arg(long = "K", alias = "cone-k")]
    #[serde(rename = "K")]
    pub cone_k: Option<f64>,
    /// Expected curvature; loading fails when a file disagrees.
    #[arg(long)]
    pub curvature: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub lambda_points: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Worker threads; `HYPCBM_THREADS` applies when this is unset.
    #[arg(long)]
    pub threads: Option<usize>,
}

macro_rules! prefer {
    ($a:expr, $b:expr, $($f:ident),+) => {
        RunConfig { $($f: $a.$f.or($b.$f)),+ }
    };
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.to_string().replace('\n', " "),
        })
    }

    /// Field-wise `self` over `file`.
    pub fn over(self, file: RunConfig) -> RunConfig {
        prefer!(
            self, file, bank, images, train_images, test_images, hierarchy, head, out, eta_img, tau, cone_k,
            curvature, lambda, lambda_min, lambda_max, lambda_points, alpha, seed, budgets, batch, threads
        )
    }

    pub fn bank(&self) -> Result<&Path> {
        self.bank.as_deref().ok_or(CliError::Missing("bank"))
    }

    pub fn images(&self) -> Result<&Path> {
        self.images.as_deref().ok_or(CliError::Missing("images"))
    }

    pub fn train_images(&self) -> Result<&Path> {
        self.train_images.as_deref().ok_or(CliError::Missing("train_images"))
    }

    pub fn test_images(&self) -> Result<&Path> {
        self.test_images.as_deref().ok_or(CliError::Missing("test_images"))
    }

    pub fn hierarchy(&self) -> Result<&Path> {
        self.hierarchy.as_deref().ok_or(CliError::Missing("hierarchy"))
    }

    pub fn head(&self) -> Result<&Path> {
        self.head.as_deref().ok_or(CliError::Missing("head"))
    }

    pub fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or(CliError::Missing("out"))
    }

    pub fn lambda(&self) -> Result<f64> {
        self.lambda.ok_or(CliError::Missing("lambda"))
    }

    pub fn eta_img(&self) -> f64 {
        self.eta_img.unwrap_or(DEFAULT_ETA_IMG)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(DEFAULT_ALPHA)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn batch(&self) -> usize {
        self.batch.unwrap_or(DEFAULT_BATCH)
    }

    pub fn budgets(&self) -> Vec<usize> {
        self.budgets.clone().unwrap_or_else(|| DEFAULT_BUDGETS.to_vec())
    }

    pub fn lambda_grid(&self) -> Result<Vec<f64>> {
        Ok(log_grid(
            self.lambda_min.unwrap_or(DEFAULT_LAMBDA_MIN),
            self.lambda_max.unwrap_or(DEFAULT_LAMBDA_MAX),
            self.lambda_points.unwrap_or(DEFAULT_LAMBDA_POINTS),
        )?)
    }

    /// Every setting with its default filled in, for the run manifest.
    pub fn resolved(&self) -> RunConfig {
        RunConfig {
            eta_img: Some(self.eta_img()),
            alpha: Some(self.alpha()),
            seed: Some(self.seed()),
            batch: Some(self.batch()),
            budgets: Some(self.budgets()),
            lambda_min: Some(self.lambda_min.unwrap_or(DEFAULT_LAMBDA_MIN)),
            lambda_max: Some(self.lambda_max.unwrap_or(DEFAULT_LAMBDA_MAX)),
            lambda_points: Some(self.lambda_points.unwrap_or(DEFAULT_LAMBDA_POINTS)),
            ..self.clone()
        }
    }
}

/// `--threads`, else `HYPCBM_THREADS`, else the config file, else all cores.
pub fn thread_count(flag: Option<usize>, env: Option<&str>, file: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return positive(n).map(Some);
    }
    if let Some(v) = env.filter(|v| !v.trim().is_empty()) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Invalid(format!("HYPCBM_THREADS must be a positive integer, got `{v}`")))?;
        return positive(n).map(Some);
    }
    file.map(positive).transpose()
}

fn positive(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(CliError::Invalid("thread count must be >= 1".into()));
    }
    Ok(n)
}
