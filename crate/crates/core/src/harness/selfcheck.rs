//! Fast invariant checks run by the `selfcheck` subcommand.

use num_complex::Complex64;

use crate::csfm::format::{decode, encode};
use crate::csfm::{CsfmGrid, CsfmStore, StoredSample};
use crate::denoise::{denoise_gaussian, score_from_denoiser, DenoiserHandle, NoisyChannel};
use crate::error::Result;
use crate::estimators::{
    estimate_lmmse, estimate_ls, estimate_mmse_gmm, estimate_rmap_gaussian, map_objective_gradient,
    RmapVariant,
};
use crate::linalg::{cscg_vector, random_hpd, rng_from_seed, CVector};
use crate::observation::{make_dft_pilots, observe, Noise};
use crate::pnp::{run_pnp, PnpConfig};
use crate::prior::{GaussianPrior, GmmPrior};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn gaussian(m: usize, seed: u64) -> GaussianPrior {
    let mut rng = rng_from_seed(seed);
    GaussianPrior::new(cscg_vector(&mut rng, m, 1.0), random_hpd(&mut rng, m, 0.05, 0.5))
        .expect("random prior is valid")
}

fn within(name: &'static str, err: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: err <= tol,
        detail: format!("error {err:.3e} (tolerance {tol:.0e})"),
    }
}

fn run_one(name: &'static str, f: impl FnOnce() -> Result<(f64, f64)>) -> CheckResult {
    match f() {
        Ok((err, tol)) => within(name, err, tol),
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Runs every check and returns their outcomes in a fixed order.
pub fn run_selfcheck() -> Vec<CheckResult> {
    let m = 8;
    vec![
        run_one("tweedie-gaussian", || {
            let g = gaussian(m, 1);
            let h = cscg_vector(&mut rng_from_seed(2), m, 1.0);
            let noisy = NoisyChannel::new(h.clone(), 0.3)?;
            let d = denoise_gaussian(&noisy, &g)?;
            let score = score_from_denoiser(&DenoiserHandle::gaussian(&g), &noisy)?;
            let mut shifted = g.cov().clone();
            for i in 0..m {
                shifted[(i, i)] += Complex64::new(0.09, 0.0);
            }
            let smoothed = GaussianPrior::new(g.mean().clone(), shifted)?;
            use crate::estimators::ScorePrior;
            let exact = smoothed.score(&h)?;
            let tweedie = (&d - &h).unscale(0.09);
            Ok(((score - &exact).norm().max((tweedie - exact).norm()), 1e-10))
        }),
        run_one("ls-noiseless-exact", || {
            let p = make_dft_pilots(m, m)?;
            let h = cscg_vector(&mut rng_from_seed(3), m, 1.0);
            let obs = observe(&h, 1.0, &p, 1.0, 0, Noise::Zero)?;
            Ok(((estimate_ls(&obs, &p)? - &h).norm_squared() / h.norm_squared(), 1e-20))
        }),
        run_one("mmse-single-component-is-lmmse", || {
            let g = gaussian(m, 4);
            let p = make_dft_pilots(m, 4)?;
            let obs = observe(&cscg_vector(&mut rng_from_seed(5), m, 1.0), 1.0, &p, 0.1, 6, Noise::Cscg)?;
            let a = estimate_lmmse(&obs, &p, &g)?;
            let b = estimate_mmse_gmm(&obs, &p, &GmmPrior::single(&g))?;
            Ok(((a - b).norm(), 1e-8))
        }),
        run_one("rmap-exact-stationary", || {
            let g = gaussian(m, 7);
            let p = make_dft_pilots(m, 4)?;
            let obs = observe(&cscg_vector(&mut rng_from_seed(8), m, 1.0), 1.0, &p, 0.1, 9, Noise::Cscg)?;
            let h = estimate_rmap_gaussian(&obs, &p, &g, 0.5, RmapVariant::ExactMinimizer)?;
            Ok((map_objective_gradient(&obs, &p, &g, 0.5, &h)?.norm(), 1e-8))
        }),
        run_one("csfm-round-trip", || {
            let g = gaussian(m, 10);
            let samples = vec![StoredSample {
                location: crate::scene::UeLocation::new(1.0, 2.0, 1.5),
                h: cscg_vector(&mut rng_from_seed(11), m, 1.0),
            }];
            let store = CsfmStore {
                grids: vec![CsfmGrid::from_gaussian(0, [0.0, 0.0, 5.0, 5.0], &g, samples)],
            };
            let bytes = encode(&store);
            let same = encode(&decode(&bytes)?) == bytes;
            Ok((if same { 0.0 } else { 1.0 }, 0.0))
        }),
        run_one("pnp-no-pilots-ignores-observation", || {
            let g = gaussian(m, 12);
            let p = make_dft_pilots(m, 0)?;
            let init: CVector = cscg_vector(&mut rng_from_seed(13), m, 1.0);
            let d = DenoiserHandle::gaussian(&g);
            let cfg = PnpConfig::default();
            let a = run_pnp(&observe(&init, 1.0, &p, 0.1, 1, Noise::Cscg)?, &p, &init, &d, &cfg)?;
            let b = run_pnp(&observe(&init, 2.0, &p, 7.0, 2, Noise::Cscg)?, &p, &init, &d, &cfg)?;
            Ok((if a.h == b.h { 0.0 } else { (a.h - b.h).norm().max(f64::MIN_POSITIVE) }, 0.0))
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run_selfcheck() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
