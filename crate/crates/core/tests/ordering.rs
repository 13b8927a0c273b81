//! Estimator ordering on the demo scene with a paired significance check.

use xlmimo_ckm::csfm::build_csfm;
use xlmimo_ckm::csfm::em::EmOptions;
use xlmimo_ckm::csfm::BuildOptions;
use xlmimo_ckm::denoise::DenoiserHandle;
use xlmimo_ckm::estimators::{estimate_lmmse, estimate_ls};
use xlmimo_ckm::harness::{alpha_schedule, trial_location, trial_noise_seed, Regime};
use xlmimo_ckm::linalg::{norm_sqr, CVector};
use xlmimo_ckm::observation::{make_dft_pilots, noise_for_snr, observe, Noise};
use xlmimo_ckm::pnp::run_csfm_pnp_with;
use xlmimo_ckm::scene::{demo_scene, synthesize_channel};

/// One-sided z statistic of the mean of paired differences.
fn z_score(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    mean / (var / n).sqrt()
}

#[test]
fn pnp_beats_lmmse_beats_ls_at_low_snr_with_confidence() {
    let scene = demo_scene((8, 8), 7);
    let store = build_csfm(
        &scene,
        &BuildOptions { em_stride: 4, em: EmOptions { n_components: 4, ..Default::default() }, ..Default::default() },
    )
    .unwrap();
    let m = scene.num_antennas();
    let p = make_dft_pilots(m, 16).unwrap();
    let cfg = alpha_schedule(1.0, Regime::Short).unwrap();
    let err = |h: &CVector, e: &CVector| norm_sqr(&(h - e)) / norm_sqr(h);
    let (mut pnp_vs_lmmse, mut lmmse_vs_ls) = (Vec::new(), Vec::new());
    for t in 0..500 {
        let q = trial_location(&scene, 1, t);
        let (h, xi) = synthesize_channel(&scene, &q).unwrap();
        let grid = store.find_grid(&q).unwrap();
        let sigma2 = noise_for_snr(&p, &grid.second_moment(), xi, 1.0).unwrap();
        let obs = observe(&h, xi, &p, sigma2, trial_noise_seed(1, 0, t), Noise::Cscg).unwrap();
        let ls = err(&h, &estimate_ls(&obs, &p).unwrap());
        let lmmse = err(&h, &estimate_lmmse(&obs, &p, &grid.gaussian().unwrap()).unwrap());
        let pnp = err(
            &h,
            &run_csfm_pnp_with(&obs, &p, grid, &DenoiserHandle::gmm(&grid.gmm), &q, &cfg).unwrap().h,
        );
        pnp_vs_lmmse.push(lmmse - pnp);
        lmmse_vs_ls.push(ls - lmmse);
    }
    // 1.645 is the one-sided 95% normal quantile.
    assert!(z_score(&pnp_vs_lmmse) > 1.645, "z = {}", z_score(&pnp_vs_lmmse));
    assert!(z_score(&lmmse_vs_ls) > 1.645, "z = {}", z_score(&lmmse_vs_ls));
}
