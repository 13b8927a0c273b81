//! Experiment orchestration around the NMSE metric. Deterministic
//! Monte-Carlo sweeps use the reference PnP parameter schedules and are
//! written as CSV.
//!
//! Sweep CSV, schema version 1:
//!
//! ```text
//! schema_version,tau,snr_db,estimator,trials,failures,nmse,nmse_db
//! ```
//!
//! `nmse` averages over the trials that produced an estimate; `failures`
//! counts trials without one (no grid for the location, or an estimator
//! error). Wall times go to a sidecar `<output>.timing.csv` with columns
//! `tau,snr_db,estimator,wall_seconds` so that the main table stays
//! byte-identical across reruns.

pub mod config;
pub mod selfcheck;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

pub use config::{parse_toml, EstimatorKind, PnpOverrides, SweepConfig};

use crate::csfm::{nn_lookup, CsfmStore};
use crate::denoise::DenoiserHandle;
use crate::error::{Error, Result};
use crate::estimators::{estimate_lmmse, estimate_ls, estimate_mmse_gmm};
use crate::linalg::{derive_seed, norm_sqr, rng_from_seed, CVector};
use crate::observation::{make_dft_pilots, noise_for_snr, observe, Noise, PilotSet};
use crate::pnp::{run_csfm_pnp_with, PnpConfig};
use crate::scene::{synthesize_channel, SceneConfig, UeLocation};

pub const SWEEP_SCHEMA_VERSION: u32 = 1;

const LOCATION_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Mean normalized squared error over paired channels.
pub fn nmse(truth: &[CVector], estimates: &[CVector]) -> Result<f64> {
    if truth.is_empty() || truth.len() != estimates.len() {
        return Err(Error::Shape(format!(
            "nmse needs equal nonempty lists, got {} and {}",
            truth.len(),
            estimates.len()
        )));
    }
    let mut sum = 0.0;
    for (k, (h, e)) in truth.iter().zip(estimates).enumerate() {
        sum += nmse_single(h, e).map_err(|err| match err {
            Error::UndefinedMetric { .. } => Error::UndefinedMetric { index: k },
            other => other,
        })?;
    }
    Ok(sum / truth.len() as f64)
}

fn nmse_single(h: &CVector, e: &CVector) -> Result<f64> {
    if h.len() != e.len() {
        return Err(Error::Shape(format!(
            "truth has {} entries, estimate {}",
            h.len(),
            e.len()
        )));
    }
    let p = norm_sqr(h);
    if !(p > 0.0) {
        return Err(Error::UndefinedMetric { index: 0 });
    }
    Ok(norm_sqr(&(h - e)) / p)
}

/// `10 log10(nmse)`.
pub fn nmse_db(nmse: f64) -> f64 {
    10.0 * nmse.log10()
}

/// Pilot-length regime of the reference parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Few pilots (τ = 16 for a 256-antenna array).
    Short,
    /// Full-length pilots (τ = M).
    Long,
}

impl Regime {
    /// `Long` when every antenna is sounded, `Short` otherwise.
    pub fn for_pilots(tau: usize, m: usize) -> Self {
        if tau >= m {
            Regime::Long
        } else {
            Regime::Short
        }
    }
}

/// Reference `(α, α', β, I)` for a linear SNR and regime, with `γ = 2`.
pub fn alpha_schedule(snr: f64, regime: Regime) -> Result<PnpConfig> {
    if !(snr > 0.0) || snr.is_nan() {
        return Err(Error::Domain(snr));
    }
    let sigmoid = 1.0 + (-snr.log10()).exp();
    let cfg = match regime {
        Regime::Short => PnpConfig {
            alpha: 1.0 / (2.0 * sigmoid),
            alpha_prime: 0.1875,
            beta: 1e-4,
            gamma: 2.0,
            iterations: 10,
        },
        Regime::Long => PnpConfig {
            alpha: 2.0 / (5.0 * sigmoid),
            alpha_prime: 2.25,
            beta: 1e-4,
            gamma: 2.0,
            iterations: 20,
        },
    };
    Ok(cfg)
}

fn apply_overrides(mut cfg: PnpConfig, o: &PnpOverrides) -> PnpConfig {
    if let Some(v) = o.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = o.alpha_prime {
        cfg.alpha_prime = v;
    }
    if let Some(v) = o.beta {
        cfg.beta = v;
    }
    if let Some(v) = o.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = o.iterations {
        cfg.iterations = v;
    }
    cfg
}

/// One aggregated result per `(τ, SNR, estimator)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau: usize,
    pub snr_db: f64,
    pub estimator: EstimatorKind,
    pub trials: usize,
    pub failures: usize,
    /// `NaN` when every trial failed.
    pub nmse: f64,
    pub wall: Duration,
}

impl SweepRow {
    pub fn nmse_db(&self) -> f64 {
        nmse_db(self.nmse)
    }
}

/// Uniform test location for trial `t`, shared by every SNR and pilot length.
pub fn trial_location(scene: &SceneConfig, master: u64, trial: usize) -> UeLocation {
    let mut rng = rng_from_seed(derive_seed(master, &[LOCATION_STREAM, trial as u64]));
    let [w, h] = scene.area_extent;
    scene.ue(rng.random_range(0.0..=w), rng.random_range(0.0..=h))
}

/// Noise seed for a trial at a given SNR index.
pub fn trial_noise_seed(master: u64, snr_index: usize, trial: usize) -> u64 {
    derive_seed(master, &[NOISE_STREAM, snr_index as u64, trial as u64])
}

/// Per-estimator squared error ratio and time spent, or `None` on failure.
type TrialOutcome = Vec<(Option<f64>, Duration)>;

/// Runs a sweep over an already loaded scene and store.
pub fn run_sweep_with(cfg: &SweepConfig, scene: &SceneConfig, store: &CsfmStore) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let m = scene.num_antennas();
    if store.dim() != m {
        return Err(Error::Shape(format!(
            "store holds {}-antenna channels but the scene has {m}",
            store.dim()
        )));
    }
    let denoisers: Vec<DenoiserHandle> = store.grids.iter().map(|g| DenoiserHandle::gmm(&g.gmm)).collect();
    let mut rows = Vec::new();
    for &tau in &cfg.taus {
        if tau > m {
            return Err(config_invariant("tau", format!("{tau} exceeds the {m} antennas")));
        }
        let pilots = make_dft_pilots(m, tau)?.with_power(cfg.rho)?;
        let regime = Regime::for_pilots(tau, m);
        for (si, &snr_db) in cfg.snr_db.iter().enumerate() {
            let snr = 10f64.powf(snr_db / 10.0);
            let pnp_cfg = apply_overrides(alpha_schedule(snr, regime)?, &cfg.pnp);
            pnp_cfg.validate()?;
            let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    run_trial(cfg, scene, store, &denoisers, &pilots, &pnp_cfg, snr, si, t)
                })
                .collect();
            for (ei, &est) in cfg.estimators.iter().enumerate() {
                let mut sum = 0.0;
                let mut ok = 0;
                let mut wall = Duration::ZERO;
                for o in &outcomes {
                    let (err, dt) = o[ei];
                    wall += dt;
                    if let Some(e) = err {
                        sum += e;
                        ok += 1;
                    }
                }
                rows.push(SweepRow {
                    tau,
                    snr_db,
                    estimator: est,
                    trials: cfg.trials,
                    failures: cfg.trials - ok,
                    nmse: if ok > 0 { sum / ok as f64 } else { f64::NAN },
                    wall,
                });
            }
        }
    }
    Ok(rows)
}

fn config_invariant(key: &str, reason: String) -> Error {
    crate::error::ConfigError::Invariant {
        key: key.into(),
        reason,
    }
    .into()
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    cfg: &SweepConfig,
    scene: &SceneConfig,
    store: &CsfmStore,
    denoisers: &[DenoiserHandle],
    pilots: &PilotSet,
    pnp_cfg: &PnpConfig,
    snr: f64,
    snr_index: usize,
    trial: usize,
) -> TrialOutcome {
    let failed = || vec![(None, Duration::ZERO); cfg.estimators.len()];
    let q = trial_location(scene, cfg.seed, trial);
    let Ok((h, xi)) = synthesize_channel(scene, &q) else {
        return failed();
    };
    let Some(gi) = store.find_grid(&q).and_then(|g| store.grids.iter().position(|x| std::ptr::eq(x, g)))
    else {
        log::debug!("no grid for test location ({}, {})", q.x, q.y);
        return failed();
    };
    let grid = &store.grids[gi];
    let noise = if cfg.noiseless { Noise::Zero } else { Noise::Cscg };
    let obs = noise_for_snr(pilots, &grid.second_moment(), xi, snr)
        .and_then(|s2| observe(&h, xi, pilots, s2, trial_noise_seed(cfg.seed, snr_index, trial), noise));
    let Ok(obs) = obs else {
        return failed();
    };
    cfg.estimators
        .iter()
        .map(|est| {
            let start = Instant::now();
            let estimate = match est {
                EstimatorKind::Ls => estimate_ls(&obs, pilots),
                EstimatorKind::Lmmse => grid.gaussian().and_then(|g| estimate_lmmse(&obs, pilots, &g)),
                EstimatorKind::MmseGmm => estimate_mmse_gmm(&obs, pilots, &grid.gmm),
                EstimatorKind::Nn => nn_lookup(grid, &q).cloned(),
                EstimatorKind::Pnp => {
                    run_csfm_pnp_with(&obs, pilots, grid, &denoisers[gi], &q, pnp_cfg).map(|o| o.h)
                }
            };
            let err = estimate.and_then(|e| nmse_single(&h, &e)).ok();
            (err, start.elapsed())
        })
        .collect()
}

/// Loads the scene and store named by the config and runs the sweep.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let scene = SceneConfig::load(&cfg.scene)?;
    let store = crate::csfm::format::load_csfm(&cfg.csfm)?;
    run_sweep_with(cfg, &scene, &store)
}

/// Reads a sweep config file.
pub fn parse_config(path: &Path) -> Result<SweepConfig> {
    SweepConfig::load(path)
}

/// Writes the result table (see the module docs for the schema).
pub fn write_sweep_csv<W: Write>(out: &mut W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "schema_version,tau,snr_db,estimator,trials,failures,nmse,nmse_db")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:e},{}",
            SWEEP_SCHEMA_VERSION,
            r.tau,
            r.snr_db,
            r.estimator.name(),
            r.trials,
            r.failures,
            r.nmse,
            r.nmse_db()
        )?;
    }
    Ok(())
}

/// Writes the wall-time sidecar.
pub fn write_timing_csv<W: Write>(out: &mut W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "tau,snr_db,estimator,wall_seconds")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.tau, r.snr_db, r.estimator.name(), r.wall.as_secs_f64())?;
    }
    Ok(())
}

/// Path of the timing sidecar for a sweep output.
pub fn timing_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".timing.csv");
    PathBuf::from(s)
}

/// Writes the table to `cfg.output` and timings to its sidecar.
pub fn write_sweep_outputs(cfg: &SweepConfig, rows: &[SweepRow]) -> Result<()> {
    let mut table = Vec::new();
    write_sweep_csv(&mut table, rows).map_err(|e| Error::io(&cfg.output, e))?;
    std::fs::write(&cfg.output, table).map_err(|e| Error::io(&cfg.output, e))?;
    let tp = timing_path(&cfg.output);
    let mut timing = Vec::new();
    write_timing_csv(&mut timing, rows).map_err(|e| Error::io(&tp, e))?;
    std::fs::write(&tp, timing).map_err(|e| Error::io(&tp, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    #[test]
    fn nmse_trivial_cases() {
        let h = vec![CVector::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.0)])];
        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        let zero = vec![CVector::zeros(2)];
        assert!((nmse(&h, &zero).unwrap() - 1.0).abs() < 1e-15);
        assert!((nmse_db(0.1) + 10.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_rejects_zero_truth_and_mismatch() {
        let h = vec![CVector::from_element(2, c(1.0, 0.0)), CVector::zeros(2)];
        assert!(matches!(
            nmse(&h, &h),
            Err(Error::UndefinedMetric { index: 1 })
        ));
        assert!(nmse(&h[..1], &h).is_err());
        assert!(nmse(&[], &[]).is_err());
    }

    #[test]
    fn alpha_schedule_values() {
        let s = alpha_schedule(1.0, Regime::Short).unwrap();
        assert!((s.alpha - 0.25).abs() < 1e-15);
        assert_eq!((s.alpha_prime, s.beta, s.iterations), (0.1875, 1e-4, 10));
        assert!((alpha_schedule(1e300, Regime::Short).unwrap().alpha - 0.5).abs() < 1e-12);
        let l = alpha_schedule(1e300, Regime::Long).unwrap();
        assert!((l.alpha - 0.4).abs() < 1e-12);
        assert_eq!((l.alpha_prime, l.beta, l.iterations), (2.25, 1e-4, 20));
        assert!(matches!(alpha_schedule(0.0, Regime::Short), Err(Error::Domain(_))));
        assert!(matches!(alpha_schedule(-1.0, Regime::Long), Err(Error::Domain(_))));
    }

    #[test]
    fn timing_sidecar_path() {
        assert_eq!(timing_path(Path::new("/a/b.csv")), PathBuf::from("/a/b.csv.timing.csv"));
    }
}
