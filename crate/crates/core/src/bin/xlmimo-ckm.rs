//! Command-line workbench. Exit codes: 0 success, 1 failed self-check,
//! 2 configuration error, 3 data error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xlmimo_ckm::csfm::em::EmOptions;
use xlmimo_ckm::csfm::format::{load_csfm, save_csfm};
use xlmimo_ckm::csfm::{build_csfm, nn_lookup, BuildOptions};
use xlmimo_ckm::denoise::DenoiserHandle;
use xlmimo_ckm::error::{Error, Result};
use xlmimo_ckm::estimators::{estimate_lmmse, estimate_ls, estimate_mmse_gmm};
use xlmimo_ckm::harness::selfcheck::run_selfcheck;
use xlmimo_ckm::harness::{
    nmse, nmse_db, alpha_schedule, parse_config, run_sweep, write_sweep_outputs, EstimatorKind,
    Regime,
};
use xlmimo_ckm::observation::{make_dft_pilots, noise_for_snr, observe, Noise};
use xlmimo_ckm::pnp::{run_csfm_pnp_with, write_trace_csv};
use xlmimo_ckm::scene::{generate_dataset, write_dataset_csv, SceneConfig};

#[derive(Parser)]
#[command(version, about = "XL-MIMO channel estimation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize channels on a lattice and write them as CSV.
    GenScene {
        #[arg(long)]
        scene: PathBuf,
        /// Lattice spacing in meters.
        #[arg(long, default_value_t = 1.0)]
        interval: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a channel knowledge store from a scene.
    BuildCsfm {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grid side length in meters.
        #[arg(long, default_value_t = 50.0)]
        grid_size: f64,
        #[arg(long, default_value_t = 0.5)]
        train_interval: f64,
        #[arg(long, default_value_t = 1.0)]
        sample_interval: f64,
        /// Mixture components per grid.
        #[arg(long, default_value_t = 4)]
        components: usize,
        /// Fit mixtures on every n-th training channel.
        #[arg(long, default_value_t = 4)]
        em_stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate the channel at one location and report its NMSE.
    Estimate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        csfm: PathBuf,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        #[arg(long, default_value_t = 16)]
        tau: usize,
        #[arg(long, default_value_t = 10.0)]
        snr_db: f64,
        /// One of ls, lmmse, mmse-gmm, nn, pnp.
        #[arg(long, default_value = "pnp")]
        estimator: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the PnP iteration trace to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a Monte-Carlo sweep described by a TOML file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selfcheck,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenScene { scene, interval, out } => {
            let scene = SceneConfig::load(&scene)?;
            let samples = generate_dataset(&scene, interval)?;
            let mut buf = Vec::new();
            write_dataset_csv(&mut buf, &samples).map_err(|e| io_error(&out, e))?;
            std::fs::write(&out, buf).map_err(|e| io_error(&out, e))?;
            println!("wrote {} channels to {}", samples.len(), out.display());
        }
        Command::BuildCsfm {
            scene,
            out,
            grid_size,
            train_interval,
            sample_interval,
            components,
            em_stride,
            seed,
        } => {
            let scene = SceneConfig::load(&scene)?;
            let opts = BuildOptions {
                grid_size,
                train_interval,
                sample_interval,
                em_stride,
                em: EmOptions {
                    n_components: components,
                    seed,
                    ..Default::default()
                },
            };
            let store = build_csfm(&scene, &opts)?;
            save_csfm(&store, &out)?;
            println!("wrote {} grids to {}", store.grids.len(), out.display());
        }
        Command::Estimate {
            scene,
            csfm,
            x,
            y,
            tau,
            snr_db,
            estimator,
            seed,
            trace,
        } => {
            let kind = EstimatorKind::parse(&estimator)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator `{estimator}`")))?;
            let scene = SceneConfig::load(&scene)?;
            let store = load_csfm(&csfm)?;
            let q = scene.ue(x, y);
            let (h, xi) = xlmimo_ckm::scene::synthesize_channel(&scene, &q)?;
            let grid = store.find_grid(&q).ok_or(Error::OutOfBounds { x, y })?;
            let m = scene.num_antennas();
            let pilots = make_dft_pilots(m, tau)?;
            let snr = 10f64.powf(snr_db / 10.0);
            let sigma2 = noise_for_snr(&pilots, &grid.second_moment(), xi, snr)?;
            let obs = observe(&h, xi, &pilots, sigma2, seed, Noise::Cscg)?;
            let estimate = match kind {
                EstimatorKind::Ls => estimate_ls(&obs, &pilots)?,
                EstimatorKind::Lmmse => estimate_lmmse(&obs, &pilots, &grid.gaussian()?)?,
                EstimatorKind::MmseGmm => estimate_mmse_gmm(&obs, &pilots, &grid.gmm)?,
                EstimatorKind::Nn => nn_lookup(grid, &q)?.clone(),
                EstimatorKind::Pnp => {
                    let cfg = alpha_schedule(snr, Regime::for_pilots(tau, m))?;
                    let out = run_csfm_pnp_with(&obs, &pilots, grid, &DenoiserHandle::gmm(&grid.gmm), &q, &cfg)?;
                    if let Some(path) = trace {
                        let mut buf = Vec::new();
                        write_trace_csv(&mut buf, &out.trace).map_err(|e| io_error(&path, e))?;
                        std::fs::write(&path, buf).map_err(|e| io_error(&path, e))?;
                    }
                    out.h
                }
            };
            let e = nmse(&[h], &[estimate])?;
            println!(
                "grid {} estimator {} nmse {:e} ({:.3} dB)",
                grid.grid_id,
                kind.name(),
                e,
                nmse_db(e)
            );
        }
        Command::Sweep { config } => {
            let cfg = parse_config(&config)?;
            let rows = run_sweep(&cfg)?;
            write_sweep_outputs(&cfg, &rows)?;
            for r in &rows {
                println!(
                    "tau {:>4} snr {:>6} dB {:>9} nmse {:>9.3} dB ({} failures)",
                    r.tau,
                    r.snr_db,
                    r.estimator.name(),
                    r.nmse_db(),
                    r.failures
                );
            }
        }
        Command::Selfcheck => {
            let results = run_selfcheck();
            let mut all = true;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                all &= r.passed;
            }
            return Ok(if all { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn io_error(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
