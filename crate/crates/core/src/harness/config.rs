//! TOML configuration parsing with line-numbered errors.
//!
//! Sweep file keys (paths are relative to the file):
//!
//! ```toml
//! scene = "scene.toml"          # required
//! csfm = "store.csfm"           # required
//! output = "sweep.csv"          # required
//! estimators = ["ls", "lmmse", "mmse-gmm", "nn", "pnp"]   # default: all
//! tau = [16]                    # default: [16]
//! snr_db = [-10, 0, 10, 20, 30] # required, nonempty
//! trials = 500                  # default: 500, must be >= 1
//! seed = 0                      # default: 0
//! rho = 1.0                     # default: 1.0
//! noiseless = false             # default: false
//!
//! [pnp]                         # optional; omitted keys follow the reference schedule
//! alpha = 0.25
//! alpha_prime = 0.1875
//! beta = 1e-4
//! gamma = 2.0
//! iterations = 10
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{ConfigError, Error, Result};

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Deserializes TOML, mapping failures to typed errors with line numbers.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| line_of(text, s.start));
        let message = e.message().to_string();
        match message
            .strip_prefix("unknown field `")
            .and_then(|rest| rest.split('`').next())
        {
            Some(key) => ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            },
            None => ConfigError::Syntax { line, message },
        }
    })
}

/// Estimators available to sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Ls,
    Lmmse,
    MmseGmm,
    Nn,
    Pnp,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Ls,
        EstimatorKind::Lmmse,
        EstimatorKind::MmseGmm,
        EstimatorKind::Nn,
        EstimatorKind::Pnp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ls => "ls",
            EstimatorKind::Lmmse => "lmmse",
            EstimatorKind::MmseGmm => "mmse-gmm",
            EstimatorKind::Nn => "nn",
            EstimatorKind::Pnp => "pnp",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Overrides for the reference PnP parameter schedule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnpOverrides {
    pub alpha: Option<f64>,
    pub alpha_prime: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub scene: PathBuf,
    pub csfm: PathBuf,
    pub output: PathBuf,
    pub estimators: Vec<EstimatorKind>,
    pub taus: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub rho: f64,
    pub noiseless: bool,
    pub pnp: PnpOverrides,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    scene: PathBuf,
    csfm: PathBuf,
    output: PathBuf,
    estimators: Option<Vec<String>>,
    tau: Option<Vec<usize>>,
    snr_db: Vec<f64>,
    trials: Option<usize>,
    seed: Option<u64>,
    rho: Option<f64>,
    noiseless: Option<bool>,
    pnp: Option<PnpOverrides>,
}

fn invariant(key: &str, reason: impl Into<String>) -> Error {
    ConfigError::Invariant {
        key: key.into(),
        reason: reason.into(),
    }
    .into()
}

impl SweepConfig {
    /// Parses sweep text; relative paths are resolved against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let f: SweepFile = parse_toml(text)?;
        let estimators = match f.estimators {
            None => EstimatorKind::ALL.to_vec(),
            Some(names) => names
                .iter()
                .map(|n| {
                    EstimatorKind::parse(n)
                        .ok_or_else(|| invariant("estimators", format!("unknown estimator `{n}`")))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let cfg = SweepConfig {
            scene: base.join(f.scene),
            csfm: base.join(f.csfm),
            output: base.join(f.output),
            estimators,
            taus: f.tau.unwrap_or_else(|| vec![16]),
            snr_db: f.snr_db,
            trials: f.trials.unwrap_or(500),
            seed: f.seed.unwrap_or(0),
            rho: f.rho.unwrap_or(1.0),
            noiseless: f.noiseless.unwrap_or(false),
            pnp: f.pnp.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invariant("trials", "must be at least 1"));
        }
        if self.snr_db.is_empty() {
            return Err(invariant("snr_db", "must list at least one SNR"));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(invariant("snr_db", "values must be finite"));
        }
        if self.estimators.is_empty() {
            return Err(invariant("estimators", "must list at least one estimator"));
        }
        if self.taus.is_empty() {
            return Err(invariant("tau", "must list at least one pilot length"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invariant("rho", "must be positive"));
        }
        let p = &self.pnp;
        for (key, v) in [
            ("pnp.alpha", p.alpha),
            ("pnp.alpha_prime", p.alpha_prime),
            ("pnp.beta", p.beta),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invariant(key, "must be positive"));
                }
            }
        }
        if let Some(g) = p.gamma {
            if !(g > 1.0 && g.is_finite()) {
                return Err(invariant("pnp.gamma", "must exceed 1"));
            }
        }
        if p.iterations == Some(0) {
            return Err(invariant("pnp.iterations", "must be at least 1"));
        }
        Ok(())
    }
}
