//! Plug-and-play estimation by half-quadratic splitting. Each iteration
//! solves the data step for `h` in closed form and then takes one
//! denoiser-driven gradient step for `v`. The penalty grows geometrically as
//! `μ_{i+1} = γ μ_i` with `σ̃_i = sqrt(β / μ_i)` and `δ_i = α / μ_i`.
//!
//! The initial penalty is `μ_0 = α' ρξ / σ²`. Without pilots there is no
//! data term, and `μ_0 = α'` so that the result does not depend on the
//! observation at all.

use std::io::Write;

use num_complex::Complex64;

use crate::csfm::{nn_lookup, CsfmGrid};
use crate::denoise::{DenoiserHandle, NoisyChannel};
use crate::error::{Error, Result};
use crate::linalg::{norm_sqr, CMatrix, CVector};
use crate::observation::{Observation, PilotSet};
use crate::scene::UeLocation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpConfig {
    /// Step-size coefficient, `δ_i = α / μ_i`.
    pub alpha: f64,
    /// Initial-penalty coefficient.
    pub alpha_prime: f64,
    /// Regularization weight on the log-prior.
    pub beta: f64,
    /// Penalty growth factor.
    pub gamma: f64,
    pub iterations: usize,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            alpha_prime: 0.1875,
            beta: 1e-4,
            gamma: 2.0,
            iterations: 10,
        }
    }
}

impl PnpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidConfig(format!("PnP {what} = {v} is out of range")))
        };
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", self.alpha);
        }
        if !(self.alpha_prime > 0.0 && self.alpha_prime.is_finite()) {
            return bad("alpha_prime", self.alpha_prime);
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidRegularizer(self.beta));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return bad("gamma", self.gamma);
        }
        if self.iterations == 0 {
            return bad("iterations", 0.0);
        }
        Ok(())
    }
}

/// Iterate of the splitting loop. `h` holds `ĥ_i` (or `ĥ_{i+1}` once the
/// data step has run) and `v` holds `v̂_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PnpState {
    pub i: usize,
    pub mu: f64,
    pub sigma_tilde: f64,
    pub delta: f64,
    pub h: CVector,
    pub v: CVector,
}

impl PnpState {
    pub fn new(init: CVector, mu0: f64, config: &PnpConfig) -> Self {
        Self {
            i: 0,
            mu: mu0,
            sigma_tilde: (config.beta / mu0).sqrt(),
            delta: config.alpha / mu0,
            h: init.clone(),
            v: init,
        }
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub mu: f64,
    pub sigma_tilde: f64,
    pub delta: f64,
    /// `‖ĥ_{i+1} − v̂_{i+1}‖`.
    pub residual: f64,
    /// Data misfit `‖sqrt(ρξ) X ĥ_{i+1} − y‖² / σ²`.
    pub data_fit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpOutput {
    pub h: CVector,
    pub trace: Vec<TraceRow>,
}

/// Writes a trace as CSV.
pub fn write_trace_csv<W: Write>(out: &mut W, trace: &[TraceRow]) -> std::io::Result<()> {
    writeln!(out, "iteration,mu,sigma_tilde,delta,residual,data_fit")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration, r.mu, r.sigma_tilde, r.delta, r.residual, r.data_fit
        )?;
    }
    Ok(())
}

/// `μ_0 = α' ρξ / σ²`, or `α'` when no pilots are sent.
pub fn initial_mu(config: &PnpConfig, obs: &Observation, pilots: &PilotSet) -> f64 {
    if pilots.tau() == 0 {
        config.alpha_prime
    } else {
        config.alpha_prime * pilots.rho * obs.xi / obs.sigma2
    }
}

/// Data step: `(ρξ XᴴX + μσ² I)⁻¹ (sqrt(ρξ) Xᴴ y + μσ² v̂)`.
pub fn h_update(state: &PnpState, obs: &Observation, pilots: &PilotSet) -> Result<CVector> {
    DataStep::new(obs, pilots)?.apply(state, obs.sigma2)
}

/// Precomputed `ρξ XᴴX` and `sqrt(ρξ) Xᴴ y`.
struct DataStep {
    gram: Option<CMatrix>,
    rhs: CVector,
}

impl DataStep {
    fn new(obs: &Observation, pilots: &PilotSet) -> Result<Self> {
        if obs.y.len() != pilots.tau() {
            return Err(Error::Shape(format!(
                "observation has {} samples but τ = {}",
                obs.y.len(),
                pilots.tau()
            )));
        }
        if !(obs.sigma2 > 0.0 && obs.sigma2.is_finite()) {
            return Err(Error::InvalidNoise(obs.sigma2));
        }
        if pilots.tau() == 0 {
            return Ok(Self {
                gram: None,
                rhs: CVector::zeros(pilots.num_antennas()),
            });
        }
        let s = pilots.rho * obs.xi;
        let xh = pilots.x.adjoint();
        Ok(Self {
            gram: Some(&xh * &pilots.x * Complex64::new(s, 0.0)),
            rhs: xh * &obs.y * Complex64::new(s.sqrt(), 0.0),
        })
    }

    fn apply(&self, state: &PnpState, sigma2: f64) -> Result<CVector> {
        let Some(gram) = &self.gram else {
            return Ok(state.v.clone());
        };
        if state.v.len() != gram.nrows() {
            return Err(Error::Shape(format!(
                "iterate has {} entries, expected {}",
                state.v.len(),
                gram.nrows()
            )));
        }
        let w = state.mu * sigma2;
        assert!(w > 0.0, "μσ² must be positive");
        let mut a = gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += Complex64::new(w, 0.0);
        }
        let ch = a.cholesky().expect("ρξXᴴX + μσ²I is positive definite");
        Ok(ch.solve(&(&self.rhs + &state.v * Complex64::new(w, 0.0))))
    }
}

/// Denoiser step `v̂ − δ(μ(v̂ − ĥ) + (β/σ̃²)(v̂ − D(v̂, σ̃)))`, with `state.h`
/// holding `ĥ_{i+1}`.
pub fn v_update(state: &PnpState, denoiser: &DenoiserHandle, beta: f64) -> Result<CVector> {
    let d = denoiser.denoise(&NoisyChannel::new(state.v.clone(), state.sigma_tilde)?)?;
    let coupling = (&state.v - &state.h) * Complex64::new(state.mu, 0.0);
    let prior = (&state.v - d) * Complex64::new(beta / (state.sigma_tilde * state.sigma_tilde), 0.0);
    Ok(&state.v - (coupling + prior) * Complex64::new(state.delta, 0.0))
}

/// Advances `μ` by `γ` and recomputes `σ̃` and `δ`.
pub fn schedule_update(state: &mut PnpState, config: &PnpConfig) {
    state.i += 1;
    state.mu *= config.gamma;
    state.sigma_tilde = (config.beta / state.mu).sqrt();
    state.delta = config.alpha / state.mu;
}

/// Runs the splitting loop from `init` with an explicit denoiser.
pub fn run_pnp(
    obs: &Observation,
    pilots: &PilotSet,
    init: &CVector,
    denoiser: &DenoiserHandle,
    config: &PnpConfig,
) -> Result<PnpOutput> {
    config.validate()?;
    if init.len() != pilots.num_antennas() {
        return Err(Error::Shape(format!(
            "initial channel has {} entries but pilots have {} columns",
            init.len(),
            pilots.num_antennas()
        )));
    }
    let data = DataStep::new(obs, pilots)?;
    let amp = Complex64::new((pilots.rho * obs.xi).sqrt(), 0.0);
    let mut state = PnpState::new(init.clone(), initial_mu(config, obs, pilots), config);
    let mut trace = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        state.h = data.apply(&state, obs.sigma2)?;
        state.v = v_update(&state, denoiser, config.beta)?;
        let data_fit = if pilots.tau() > 0 {
            norm_sqr(&(&pilots.x * &state.h * amp - &obs.y)) / obs.sigma2
        } else {
            0.0
        };
        trace.push(TraceRow {
            iteration: state.i,
            mu: state.mu,
            sigma_tilde: state.sigma_tilde,
            delta: state.delta,
            residual: (&state.h - &state.v).norm(),
            data_fit,
        });
        schedule_update(&mut state, config);
    }
    Ok(PnpOutput {
        h: state.h,
        trace,
    })
}

/// Estimates the channel at `q` from the grid's nearest stored channel and
/// mixture denoiser.
pub fn run_csfm_pnp(
    obs: &Observation,
    pilots: &PilotSet,
    grid: &CsfmGrid,
    q: &UeLocation,
    config: &PnpConfig,
) -> Result<PnpOutput> {
    run_csfm_pnp_with(obs, pilots, grid, &DenoiserHandle::gmm(&grid.gmm), q, config)
}

/// As [`run_csfm_pnp`] with a denoiser prepared once for the grid.
pub fn run_csfm_pnp_with(
    obs: &Observation,
    pilots: &PilotSet,
    grid: &CsfmGrid,
    denoiser: &DenoiserHandle,
    q: &UeLocation,
    config: &PnpConfig,
) -> Result<PnpOutput> {
    if !grid.contains(q) {
        return Err(Error::GridMismatch {
            grid_id: grid.grid_id,
            x: q.x,
            y: q.y,
        });
    }
    let init = nn_lookup(grid, q)?;
    run_pnp(obs, pilots, init, denoiser, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{estimate_ls, estimate_rmap_gaussian, RmapVariant};
    use crate::linalg::{c, cscg_vector, random_hpd, rng_from_seed};
    use crate::observation::{make_dft_pilots, observe, Noise};
    use crate::prior::GaussianPrior;

    fn state(v: CVector, h: CVector, mu: f64, cfg: &PnpConfig) -> PnpState {
        PnpState {
            h,
            ..PnpState::new(v, mu, cfg)
        }
    }

    fn prior(m: usize, seed: u64) -> GaussianPrior {
        let mut rng = rng_from_seed(seed);
        let mean = cscg_vector(&mut rng, m, 0.5);
        GaussianPrior::new(mean, random_hpd(&mut rng, m, 0.01, 0.1)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(PnpConfig::default().validate().is_ok());
        for bad in [
            PnpConfig { alpha: 0.0, ..Default::default() },
            PnpConfig { alpha_prime: -1.0, ..Default::default() },
            PnpConfig { beta: 0.0, ..Default::default() },
            PnpConfig { gamma: 1.0, ..Default::default() },
            PnpConfig { iterations: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn h_update_limits() {
        let m = 8;
        let cfg = PnpConfig::default();
        let mut rng = rng_from_seed(1);
        let h = cscg_vector(&mut rng, m, 1.0);
        let v = cscg_vector(&mut rng, m, 1.0);

        let p0 = make_dft_pilots(m, 0).unwrap();
        let o0 = observe(&h, 1.0, &p0, 0.1, 0, Noise::Cscg).unwrap();
        assert_eq!(h_update(&state(v.clone(), h.clone(), 3.0, &cfg), &o0, &p0).unwrap(), v);

        let p = make_dft_pilots(m, m).unwrap();
        let o = observe(&h, 1.0, &p, 1.0, 0, Noise::Zero).unwrap();
        let ls = estimate_ls(&o, &p).unwrap();
        let small = h_update(&state(v.clone(), h.clone(), 1e-12, &cfg), &o, &p).unwrap();
        assert!((small - ls).norm() < 1e-6);
        let big = h_update(&state(v.clone(), h.clone(), 1e12, &cfg), &o, &p).unwrap();
        assert!((big - &v).norm() < 1e-6);
    }

    #[test]
    fn v_update_examples() {
        let m = 4;
        let mut rng = rng_from_seed(2);
        let v = cscg_vector(&mut rng, m, 1.0);
        let h = cscg_vector(&mut rng, m, 1.0);
        let g = prior(m, 3);
        let cfg = PnpConfig { alpha: 1.0, ..Default::default() };

        let mut frozen = state(v.clone(), h.clone(), 2.0, &cfg);
        frozen.delta = 0.0;
        assert_eq!(v_update(&frozen, &DenoiserHandle::gaussian(&g), cfg.beta).unwrap(), v);

        let st = state(v.clone(), h.clone(), 2.0, &cfg);
        let out = v_update(&st, &DenoiserHandle::Identity, cfg.beta).unwrap();
        assert!((out - &h).norm() < 1e-12);

        let fixed = state(g.mean().clone(), g.mean().clone(), 5.0, &cfg);
        let out = v_update(&fixed, &DenoiserHandle::gaussian(&g), cfg.beta).unwrap();
        assert!((out - g.mean()).norm() < 1e-10);
    }

    #[test]
    fn v_update_matches_simplified_form() {
        let m = 5;
        let mut rng = rng_from_seed(4);
        let g = prior(m, 5);
        let den = DenoiserHandle::gaussian(&g);
        let cfg = PnpConfig { alpha: 0.3, ..Default::default() };
        for mu in [1e-2, 1.0, 50.0] {
            let st = state(cscg_vector(&mut rng, m, 1.0), cscg_vector(&mut rng, m, 1.0), mu, &cfg);
            let full = v_update(&st, &den, cfg.beta).unwrap();
            let d = den.denoise(&NoisyChannel::new(st.v.clone(), st.sigma_tilde).unwrap()).unwrap();
            let a = c(cfg.alpha, 0.0);
            let simple = &st.v - (&st.v - &st.h) * a - (&st.v - d) * a;
            assert!((full - simple).norm() < 1e-12);
        }
    }

    #[test]
    fn schedule_examples() {
        let cfg = PnpConfig::default();
        let mut st = PnpState::new(CVector::zeros(1), 1.0, &cfg);
        for _ in 0..3 {
            schedule_update(&mut st, &cfg);
        }
        assert_eq!(st.mu, 8.0);
        assert_eq!(st.i, 3);
        let st = PnpState::new(CVector::zeros(1), 1e-2, &PnpConfig { beta: 1e-4, ..cfg });
        assert!((st.sigma_tilde - 0.1).abs() < 1e-12);
        let st = PnpState::new(CVector::zeros(1), 0.5, &PnpConfig { alpha: 0.25, ..cfg });
        assert!((st.delta - 0.5).abs() < 1e-12);
    }

    /// Well-conditioned prior whose eigenvalues spread over a factor of two
    /// with trace 0.3. The mean carries the remaining 0.7 of the unit power.
    fn gaussian_grid(m: usize, seed: u64) -> (CsfmGrid, GaussianPrior) {
        let mut rng = rng_from_seed(seed);
        let a = 0.2 / m as f64;
        let mean = cscg_vector(&mut rng, m, 1.0);
        let mean = &mean * c(0.7f64.sqrt() / mean.norm(), 0.0);
        let g = GaussianPrior::new(mean, random_hpd(&mut rng, m, a, 2.0 * a)).unwrap();
        let mut rng = rng_from_seed(seed + 1);
        let samples = (0..4)
            .map(|i| crate::csfm::StoredSample {
                location: UeLocation::new(i as f64, 0.0, 1.5),
                h: g.mean() + cscg_vector(&mut rng, m, 0.05),
            })
            .collect();
        (CsfmGrid::from_gaussian(0, [0.0, 0.0, 10.0, 10.0], &g, samples), g)
    }

    #[test]
    fn converges_to_closed_form_on_gaussian_grid() {
        let m = 8;
        let (grid, g) = gaussian_grid(m, 7);
        let p = make_dft_pilots(m, m).unwrap();
        let mut rng = rng_from_seed(9);
        let h = g.mean() + cscg_vector(&mut rng, m, 0.05);
        let sigma2 = crate::observation::noise_for_snr(&p, &g.second_moment(), 1.0, 10.0).unwrap();
        let o = observe(&h, 1.0, &p, sigma2, 3, Noise::Cscg).unwrap();
        let cfg = PnpConfig {
            alpha: 7e5,
            alpha_prime: 1e6,
            beta: 1.0,
            gamma: 1.05,
            iterations: 30,
        };
        let q = UeLocation::new(1.2, 0.4, 1.5);
        let out = run_csfm_pnp(&o, &p, &grid, &q, &cfg).unwrap();
        let oracle = estimate_rmap_gaussian(&o, &p, &g, 1.0, RmapVariant::ExactMinimizer).unwrap();
        assert!((&out.h - &oracle).norm() <= 1e-6 * oracle.norm());
        assert_eq!(out.trace.len(), 30);
        for (i, r) in out.trace.iter().enumerate() {
            assert_eq!(r.iteration, i);
            assert!((r.sigma_tilde - (cfg.beta / r.mu).sqrt()).abs() <= 1e-12 * r.sigma_tilde);
            assert!((r.delta - cfg.alpha / r.mu).abs() <= 1e-12 * r.delta);
        }
        assert_eq!(out, run_csfm_pnp(&o, &p, &grid, &q, &cfg).unwrap());
    }

    #[test]
    fn generative_mode_ignores_observation() {
        let m = 6;
        let (grid, g) = gaussian_grid(m, 11);
        let p = make_dft_pilots(m, 0).unwrap();
        let q = UeLocation::new(2.0, 1.0, 1.5);
        let cfg = PnpConfig::default();
        let h = g.mean().clone();
        let a = run_csfm_pnp(&observe(&h, 1.0, &p, 0.1, 1, Noise::Cscg).unwrap(), &p, &grid, &q, &cfg)
            .unwrap();
        let b = run_csfm_pnp(&observe(&h, 1.0, &p, 7.0, 2, Noise::Cscg).unwrap(), &p, &grid, &q, &cfg)
            .unwrap();
        assert_eq!(a, b);
        assert!(a.h.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        let max_norm = grid.samples.iter().map(|s| s.h.norm()).fold(0.0, f64::max);
        assert!(a.h.norm() <= 10.0 * max_norm);
    }

    #[test]
    fn rejects_location_outside_grid() {
        let (grid, g) = gaussian_grid(4, 1);
        let p = make_dft_pilots(4, 4).unwrap();
        let o = observe(g.mean(), 1.0, &p, 0.1, 1, Noise::Cscg).unwrap();
        let q = UeLocation::new(11.0, 1.0, 1.5);
        assert!(matches!(
            run_csfm_pnp(&o, &p, &grid, &q, &PnpConfig::default()),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn trace_csv() {
        let (grid, g) = gaussian_grid(4, 1);
        let p = make_dft_pilots(4, 2).unwrap();
        let o = observe(g.mean(), 1.0, &p, 0.1, 1, Noise::Cscg).unwrap();
        let out = run_csfm_pnp(&o, &p, &grid, &UeLocation::new(0.0, 0.0, 0.0), &PnpConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &out.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.starts_with("iteration,mu,sigma_tilde,delta,residual"));
    }
}
