//! Run configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bic_explore::{ConstantOverrides, Mode, RunOptions};
use crate::priors::{AssumptionConstants, PriorSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateOptions {
    #[serde(default = "default_n_dirs")]
    pub n_dirs: usize,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
}

fn default_n_dirs() -> usize {
    64
}

fn default_n_samples() -> usize {
    20_000
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            n_dirs: default_n_dirs(),
            n_samples: default_n_samples(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_metrics")]
    pub metrics: String,
    #[serde(default = "default_trace")]
    pub trace: String,
    #[serde(default = "default_report")]
    pub report: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_metrics() -> String {
    "metrics.csv".into()
}

fn default_trace() -> String {
    "trace.jsonl".into()
}

fn default_report() -> String {
    "report.json".into()
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            dir: default_dir(),
            metrics: default_metrics(),
            trace: default_trace(),
            report: default_report(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSpec>,
    /// Whitespace-separated points, one per line; see
    /// [`parse_empirical`](crate::priors::parse_empirical).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_file: Option<PathBuf>,
    pub lambda_bar: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub overrides: ConstantOverrides,
    /// Estimated from the prior when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption: Option<AssumptionConstants>,
    #[serde(default)]
    pub estimate: EstimateOptions,
    #[serde(default)]
    pub use_default_constants: bool,
    #[serde(default)]
    pub run: RunOptions,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_noise_sd() -> f64 {
    1.0
}

fn default_replicates() -> usize {
    1
}

impl RunConfig {
    /// Reads and validates a config; relative paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(p) = &cfg.prior_file {
            if p.is_relative() {
                cfg.prior_file = Some(base.join(p));
            }
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without path resolution or validation.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if !(self.lambda_bar > 0.0 && self.lambda_bar.is_finite()) {
            return Err(Error::Config(format!("lambda_bar = {} must be positive", self.lambda_bar)));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd = {} must be non-negative", self.noise_sd)));
        }
        if self.estimate.n_dirs == 0 || self.estimate.n_samples < 2 {
            return Err(Error::Config("estimate needs n_dirs ≥ 1 and n_samples ≥ 2".into()));
        }
        match (&self.prior, &self.prior_file) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `prior` or `prior_file`, not both".into())),
            (None, None) => return Err(Error::Config("one of `prior` or `prior_file` is required".into())),
            _ => {}
        }
        if let Some(p) = &self.prior {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
            if p.dim() != self.d {
                return Err(Error::Config(format!("prior has dimension {}, config says d = {}", p.dim(), self.d)));
            }
        }
        self.run.validate()
    }

    /// The prior, loading `prior_file` if needed.
    pub fn resolve_prior(&self) -> Result<PriorSpec> {
        match (&self.prior, &self.prior_file) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(f)) => {
                let p = crate::priors::load_empirical(f, Some(self.d))?;
                if p.dim() != self.d {
                    return Err(Error::Config(format!("prior file has dimension {}, expected {}", p.dim(), self.d)));
                }
                Ok(p)
            }
            (None, None) => Err(Error::Config("no prior given".into())),
        }
    }

    /// Seed of replicate `r`. A single-replicate run uses `seed` itself.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        if self.replicates == 1 {
            self.seed
        } else {
            crate::rng::derive(self.seed, &[crate::rng::stream::REPLICATE, r as u64])
        }
    }
}
