//! Pilot matrices and the linear measurement model `y = sqrt(ρξ) X h + z`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{cscg_vector, dft_matrix, rng_from_seed, trace_re, CMatrix, CVector};

/// Tolerance for the pilot energy and orthonormality invariants.
pub const PILOT_TOL: f64 = 1e-9;

/// A `τ × M` pilot matrix and transmit power `ρ`, with `‖X‖_F² = τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotSet {
    pub x: CMatrix,
    pub rho: f64,
}

impl PilotSet {
    /// Wraps an arbitrary pilot matrix after checking the energy constraint.
    pub fn new(x: CMatrix, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidPilot(format!("power {rho} must be positive")));
        }
        let energy = x.norm_squared();
        let tau = x.nrows() as f64;
        if (energy - tau).abs() > PILOT_TOL * tau.max(1.0) {
            return Err(Error::InvalidPilot(format!(
                "‖X‖_F² = {energy} but τ = {tau}"
            )));
        }
        Ok(Self { x, rho })
    }

    pub fn tau(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_antennas(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_power(mut self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidPilot(format!("power {rho} must be positive")));
        }
        self.rho = rho;
        Ok(self)
    }
}

/// Rows `floor(k·M/τ)`, `k = 0..τ`, of the unitary `M × M` DFT, at unit power.
pub fn make_dft_pilots(m: usize, tau: usize) -> Result<PilotSet> {
    if tau > m {
        return Err(Error::InvalidPilot(format!("τ = {tau} exceeds M = {m}")));
    }
    let f = dft_matrix(m);
    let x = CMatrix::from_fn(tau, m, |k, n| f[(k * m / tau, n)]);
    Ok(PilotSet { x, rho: 1.0 })
}

/// Received pilots for one channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: CVector,
    pub sigma2: f64,
    pub xi: f64,
    pub noise_seed: u64,
}

/// Whether to draw receiver noise or to return the noiseless signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Cscg,
    Zero,
}

/// Simulates `y = sqrt(ρξ) X h + z` with `z ~ CN(0, σ² I)` drawn from a
/// generator seeded by `noise_seed`. With `τ = 0` the observation is empty.
pub fn observe(
    h: &CVector,
    xi: f64,
    pilots: &PilotSet,
    sigma2: f64,
    noise_seed: u64,
    noise: Noise,
) -> Result<Observation> {
    if h.len() != pilots.num_antennas() {
        return Err(Error::Shape(format!(
            "channel has {} entries but pilots have {} columns",
            h.len(),
            pilots.num_antennas()
        )));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidNoise(sigma2));
    }
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(Error::InvalidConfig(format!("large-scale gain {xi} must be nonnegative")));
    }
    let gain = Complex64::new((pilots.rho * xi).sqrt(), 0.0);
    let mut y = &pilots.x * h * gain;
    if noise == Noise::Cscg {
        let mut rng = rng_from_seed(noise_seed);
        y += cscg_vector(&mut rng, pilots.tau(), sigma2);
    }
    Ok(Observation {
        y,
        sigma2,
        xi,
        noise_seed,
    })
}

/// Expected receive SNR `ρξ tr(X R Xᴴ) / (τ σ²)`; zero when `τ = 0`.
pub fn expected_snr(pilots: &PilotSet, r: &CMatrix, xi: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidNoise(sigma2));
    }
    let m = pilots.num_antennas();
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::Shape(format!(
            "second-moment matrix is {}x{}, expected {m}x{m}",
            r.nrows(),
            r.ncols()
        )));
    }
    let tau = pilots.tau();
    if tau == 0 {
        return Ok(0.0);
    }
    let power = trace_re(&(&pilots.x * r * pilots.x.adjoint()));
    Ok(pilots.rho * xi * power / (tau as f64 * sigma2))
}

/// Noise variance that yields `snr` (linear) under [`expected_snr`]. When no
/// pilots are sent, `tr(R) / M` stands in for the per-pilot signal power.
pub fn noise_for_snr(pilots: &PilotSet, r: &CMatrix, xi: f64, snr: f64) -> Result<f64> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::Domain(snr));
    }
    let tau = pilots.tau();
    let per_pilot = if tau == 0 {
        trace_re(r) / pilots.num_antennas().max(1) as f64
    } else {
        trace_re(&(&pilots.x * r * pilots.x.adjoint())) / tau as f64
    };
    let sigma2 = pilots.rho * xi * per_pilot / snr;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidNoise(sigma2));
    }
    Ok(sigma2)
}
