//! MMSE denoisers for Gaussian and Gaussian-mixture priors with the score
//! bridge `score = (D(h̃, σ̃) − h̃) / σ̃²`. Angular-domain preprocessing for
//! learned denoisers lives here too.
//!
//! Noise is circularly-symmetric: `h̃ = h + σ̃ ε` with `ε ~ CN(0, I)`. For a
//! density `p` on `C^M` the score is the Wirtinger derivative `∂ log p / ∂h*`,
//! which equals half the real gradient packed as `∂/∂Re + j ∂/∂Im`. With this
//! convention the smoothed marginal of `CN(m, C)` has score
//! `−(C + σ̃² I)⁻¹ (h̃ − m)` and the identity above is exact.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::estimators::{softmax, ScorePrior};
use crate::linalg::{
    cholesky_jittered, cholesky_log_det, cscg_vector, hermitian_eigen, rng_from_seed, CMatrix,
    CVector,
};
use crate::prior::{GaussianPrior, GmmComponent, GmmPrior};

/// Noisy channel `h̃` with its noise standard deviation `σ̃ > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyChannel {
    pub h: CVector,
    pub sigma: f64,
}

impl NoisyChannel {
    pub fn new(h: CVector, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { h, sigma })
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "denoiser noise level {sigma} must be positive"
        )))
    }
}

fn check_len(h: &CVector, m: usize) -> Result<()> {
    if h.len() == m {
        Ok(())
    } else {
        Err(Error::Shape(format!("vector has {} entries, expected {m}", h.len())))
    }
}

/// `C + s I`.
fn shifted(cov: &CMatrix, s: f64) -> CMatrix {
    let mut a = cov.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += Complex64::new(s, 0.0);
    }
    a
}

/// Gaussian posterior mean for one component, `h̃ − σ̃²(C + σ̃²I)⁻¹(h̃ − m)`,
/// and `log CN(h̃; m, C + σ̃² I)`.
fn component_denoise(h: &CVector, mean: &CVector, cov: &CMatrix, var: f64) -> Result<(CVector, f64)> {
    let ch = cholesky_jittered(&shifted(cov, var))
        .ok_or_else(|| Error::InvalidPrior("smoothed covariance is not positive definite".into()))?;
    let d = h - mean;
    let w = ch.solve(&d);
    let quad = d.dotc(&w).re;
    let m = h.len() as f64;
    let log_p = -m * std::f64::consts::PI.ln() - cholesky_log_det(&ch) - quad;
    Ok((h - w * Complex64::new(var, 0.0), log_p))
}

/// MMSE denoiser under `CN(h̄, C)`: `h̄ + C (C + σ̃² I)⁻¹ (h̃ − h̄)`.
pub fn denoise_gaussian(noisy: &NoisyChannel, prior: &GaussianPrior) -> Result<CVector> {
    check_sigma(noisy.sigma)?;
    check_len(&noisy.h, prior.dim())?;
    let var = noisy.sigma * noisy.sigma;
    Ok(component_denoise(&noisy.h, prior.mean(), prior.cov(), var)?.0)
}

/// MMSE denoiser under a mixture prior: per-component Gaussian denoisers
/// weighted by responsibilities under `CN(m_c, Σ_c + σ̃² I)`.
pub fn denoise_gmm(noisy: &NoisyChannel, prior: &GmmPrior) -> Result<CVector> {
    check_sigma(noisy.sigma)?;
    check_len(&noisy.h, prior.dim())?;
    let var = noisy.sigma * noisy.sigma;
    let mut outs = Vec::with_capacity(prior.components().len());
    let mut logits = Vec::with_capacity(prior.components().len());
    for comp in prior.components() {
        let (d, log_p) = component_denoise(&noisy.h, &comp.mean, &comp.cov, var)?;
        outs.push(d);
        logits.push(comp.weight.ln() + log_p);
    }
    mix(&softmax(&logits)?, &outs)
}

fn mix(weights: &[f64], parts: &[CVector]) -> Result<CVector> {
    let mut out = CVector::zeros(parts[0].len());
    for (w, p) in weights.iter().zip(parts) {
        out.axpy(Complex64::new(*w, 0.0), p, Complex64::new(1.0, 0.0));
    }
    Ok(out)
}

/// Log-density of a mixture and its Wirtinger score `∂ log p / ∂h*`.
pub fn gmm_log_density(h: &CVector, prior: &GmmPrior) -> Result<(f64, CVector)> {
    check_len(h, prior.dim())?;
    let m = h.len() as f64;
    let mut logits = Vec::with_capacity(prior.components().len());
    let mut grads = Vec::with_capacity(prior.components().len());
    for comp in prior.components() {
        let ch = cholesky_jittered(&comp.cov)
            .ok_or_else(|| Error::InvalidPrior("component covariance is singular".into()))?;
        let d = h - &comp.mean;
        let w = ch.solve(&d);
        let quad = d.dotc(&w).re;
        logits.push(comp.weight.ln() - m * std::f64::consts::PI.ln() - cholesky_log_det(&ch) - quad);
        grads.push(-w);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericallyDegenerate);
    }
    let log_p = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let score = mix(&softmax(&logits)?, &grads)?;
    Ok((log_p, score))
}

/// The mixture obtained by adding `CN(0, σ² I)` noise to every component.
pub fn smoothed_gmm(prior: &GmmPrior, sigma: f64) -> Result<GmmPrior> {
    check_sigma(sigma)?;
    GmmPrior::new(
        prior
            .components()
            .iter()
            .map(|c| GmmComponent {
                weight: c.weight,
                mean: c.mean.clone(),
                cov: shifted(&c.cov, sigma * sigma),
            })
            .collect(),
    )
}

impl ScorePrior for GmmPrior {
    fn score(&self, h: &CVector) -> Result<CVector> {
        Ok(gmm_log_density(h, self)?.1)
    }

    fn log_density(&self, h: &CVector) -> Option<Result<f64>> {
        Some(gmm_log_density(h, self).map(|r| r.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SpectralComponent {
    log_weight: f64,
    mean: CVector,
    vecs: CMatrix,
    vals: DVector<f64>,
}

/// Mixture denoiser with cached eigendecompositions, so each call costs
/// `O(K M²)` instead of a fresh factorization per component.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGmm {
    comps: Vec<SpectralComponent>,
    dim: usize,
}

impl SpectralGmm {
    pub fn new(prior: &GmmPrior) -> Self {
        let comps = prior
            .components()
            .iter()
            .map(|c| {
                let eig = hermitian_eigen(&c.cov);
                SpectralComponent {
                    log_weight: c.weight.ln(),
                    mean: c.mean.clone(),
                    vecs: eig.eigenvectors,
                    vals: eig.eigenvalues.map(|l| l.max(0.0)),
                }
            })
            .collect();
        Self {
            comps,
            dim: prior.dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn denoise(&self, h: &CVector, sigma: f64) -> Result<CVector> {
        check_sigma(sigma)?;
        check_len(h, self.dim)?;
        let var = sigma * sigma;
        let ln_pi = std::f64::consts::PI.ln();
        let mut outs = Vec::with_capacity(self.comps.len());
        let mut logits = Vec::with_capacity(self.comps.len());
        for c in &self.comps {
            let z = c.vecs.ad_mul(&(h - &c.mean));
            let mut log_p = c.log_weight - self.dim as f64 * ln_pi;
            let mut shrink = CVector::zeros(self.dim);
            for k in 0..self.dim {
                let s = c.vals[k] + var;
                log_p -= s.ln() + z[k].norm_sqr() / s;
                shrink[k] = z[k] * (var / s);
            }
            outs.push(h - &c.vecs * shrink);
            logits.push(log_p);
        }
        mix(&softmax(&logits)?, &outs)
    }
}

/// A denoiser `D(h̃, σ̃)` selected at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserHandle {
    Gaussian(SpectralGmm),
    Gmm(SpectralGmm),
    Identity,
    /// Placeholder for learned denoisers supplied outside this crate.
    External(String),
}

impl DenoiserHandle {
    pub fn gaussian(prior: &GaussianPrior) -> Self {
        DenoiserHandle::Gaussian(SpectralGmm::new(&GmmPrior::single(prior)))
    }

    pub fn gmm(prior: &GmmPrior) -> Self {
        DenoiserHandle::Gmm(SpectralGmm::new(prior))
    }

    pub fn denoise(&self, noisy: &NoisyChannel) -> Result<CVector> {
        match self {
            DenoiserHandle::Gaussian(s) | DenoiserHandle::Gmm(s) => s.denoise(&noisy.h, noisy.sigma),
            DenoiserHandle::Identity => {
                check_sigma(noisy.sigma)?;
                Ok(noisy.h.clone())
            }
            DenoiserHandle::External(name) => Err(Error::UnsupportedDenoiser(name.clone())),
        }
    }
}

/// Score of the smoothed marginal via Tweedie: `(D(h̃, σ̃) − h̃) / σ̃²`.
pub fn score_from_denoiser(d: &DenoiserHandle, noisy: &NoisyChannel) -> Result<CVector> {
    check_sigma(noisy.sigma)?;
    let out = d.denoise(noisy)?;
    Ok((out - &noisy.h).unscale(noisy.sigma * noisy.sigma))
}

fn fft(h: &CVector, m: usize, inverse: bool) -> Result<CVector> {
    check_len(h, m)?;
    if m == 0 {
        return Ok(h.clone());
    }
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(m)
    } else {
        planner.plan_fft_forward(m)
    };
    let mut buf: Vec<Complex64> = h.iter().copied().collect();
    plan.process(&mut buf);
    let scale = 1.0 / (m as f64).sqrt();
    Ok(CVector::from_iterator(m, buf.into_iter().map(|z| z * scale)))
}

/// Unitary DFT `F h`.
pub fn to_angular(h: &CVector, m: usize) -> Result<CVector> {
    fft(h, m, false)
}

/// Unitary inverse DFT `Fᴴ h_A`.
pub fn from_angular(h_a: &CVector, m: usize) -> Result<CVector> {
    fft(h_a, m, true)
}

/// Per-sample min-max ranges of the real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Normalization {
    pub fn fit(h: &CVector) -> Result<Self> {
        let fold = |f: fn(&Complex64) -> f64| {
            h.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        };
        let (re_min, re_max) = fold(|z| z.re);
        let (im_min, im_max) = fold(|z| z.im);
        if !(re_max > re_min) {
            return Err(Error::ZeroRange { part: "real" });
        }
        if !(im_max > im_min) {
            return Err(Error::ZeroRange { part: "imaginary" });
        }
        Ok(Self {
            re_min,
            re_max,
            im_min,
            im_max,
        })
    }

    pub fn apply(&self, h: &CVector) -> CVector {
        let re_span = self.re_max - self.re_min;
        let im_span = self.im_max - self.im_min;
        h.map(|z| Complex64::new((z.re - self.re_min) / re_span, (z.im - self.im_min) / im_span))
    }

    pub fn invert(&self, h: &CVector) -> CVector {
        let re_span = self.re_max - self.re_min;
        let im_span = self.im_max - self.im_min;
        h.map(|z| Complex64::new(z.re * re_span + self.re_min, z.im * im_span + self.im_min))
    }
}

/// Smallest and largest training noise standard deviation.
pub const SIGMA_TRAIN_RANGE: (f64, f64) = (1e-5, 1e-2);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub clean: CVector,
    pub noisy: CVector,
    pub sigma_train: f64,
    pub normalization: Normalization,
}

/// Normalizes `h_clean` and adds `σ_train ε`, `ε ~ CN(0, I)`, with
/// `σ_train` uniform on [`SIGMA_TRAIN_RANGE`].
pub fn make_training_pair(h_clean: &CVector, seed: u64) -> Result<TrainingPair> {
    let normalization = Normalization::fit(h_clean)?;
    let clean = normalization.apply(h_clean);
    let mut rng = rng_from_seed(seed);
    let (lo, hi) = SIGMA_TRAIN_RANGE;
    let sigma_train = rng.random_range(lo..=hi);
    let noisy = &clean + cscg_vector(&mut rng, clean.len(), 1.0) * Complex64::new(sigma_train, 0.0);
    Ok(TrainingPair {
        clean,
        noisy,
        sigma_train,
        normalization,
    })
}
