//! Randomized properties of the metric, the estimators and the store format.

use proptest::prelude::*;

use xlmimo_ckm::csfm::format::{decode, encode};
use xlmimo_ckm::csfm::{CsfmGrid, CsfmStore, StoredSample};
use xlmimo_ckm::estimators::{estimate_lmmse, estimate_ls, estimate_mmse_gmm, GaussianPrior, GmmPrior};
use xlmimo_ckm::harness::nmse;
use xlmimo_ckm::linalg::{cscg_vector, random_hpd, rng_from_seed, CVector};
use xlmimo_ckm::observation::{make_dft_pilots, observe, Noise};
use xlmimo_ckm::scene::{demo_scene, SceneConfig, UeLocation};

fn channel(m: usize, seed: u64) -> CVector {
    cscg_vector(&mut rng_from_seed(seed), m, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nmse_is_nonnegative_and_zero_on_truth(m in 1usize..12, a in any::<u64>(), b in any::<u64>()) {
        let h = channel(m, a);
        let e = channel(m, b);
        prop_assert!(nmse(std::slice::from_ref(&h), &[e]).unwrap() >= 0.0);
        prop_assert_eq!(nmse(std::slice::from_ref(&h), std::slice::from_ref(&h)).unwrap(), 0.0);
    }

    #[test]
    fn noiseless_full_pilot_ls_is_exact(m in 1usize..20, seed in any::<u64>(), xi in 0.01f64..100.0) {
        let p = make_dft_pilots(m, m).unwrap();
        let h = channel(m, seed);
        let obs = observe(&h, xi, &p, 1.0, seed, Noise::Zero).unwrap();
        prop_assert!(nmse(&[h], &[estimate_ls(&obs, &p).unwrap()]).unwrap() <= 1e-20);
    }

    #[test]
    fn one_component_mixture_is_lmmse(m in 1usize..10, tau_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let tau = ((m as f64) * tau_frac) as usize;
        let mut rng = rng_from_seed(seed);
        let g = GaussianPrior::new(cscg_vector(&mut rng, m, 1.0), random_hpd(&mut rng, m, 0.05, 1.0)).unwrap();
        let p = make_dft_pilots(m, tau).unwrap();
        let obs = observe(&cscg_vector(&mut rng, m, 1.0), 1.0, &p, 0.3, seed, Noise::Cscg).unwrap();
        if tau == 0 {
            prop_assert!(estimate_mmse_gmm(&obs, &p, &GmmPrior::single(&g)).is_err());
        } else {
            let a = estimate_mmse_gmm(&obs, &p, &GmmPrior::single(&g)).unwrap();
            let b = estimate_lmmse(&obs, &p, &g).unwrap();
            prop_assert!((a - b).norm() <= 1e-8);
        }
    }

    #[test]
    fn store_round_trip_and_truncation(m in 1usize..6, n in 0usize..5, seed in any::<u64>(), cut in 0.0f64..1.0) {
        let mut rng = rng_from_seed(seed);
        let g = GaussianPrior::new(cscg_vector(&mut rng, m, 1.0), random_hpd(&mut rng, m, 0.1, 1.0)).unwrap();
        let samples = (0..n)
            .map(|i| StoredSample { location: UeLocation::new(i as f64, 0.5, 1.5), h: cscg_vector(&mut rng, m, 1.0) })
            .collect();
        let store = CsfmStore { grids: vec![CsfmGrid::from_gaussian(3, [0.0, 0.0, 5.0, 5.0], &g, samples)] };
        let bytes = encode(&store);
        prop_assert_eq!(&decode(&bytes).unwrap(), &store);
        let len = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(decode(&bytes[..len]).is_err());
    }
}

#[test]
fn shipped_scene_config_matches_demo_scene() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo_scene.toml");
    assert_eq!(SceneConfig::load(&path).unwrap(), demo_scene((8, 8), 7));
}
