//! Classical channel estimators: LS/ML, LMMSE, mixture MMSE, Gaussian
//! regularized MAP and a steepest-descent MAP solver.
//!
//! Gradients are Wirtinger derivatives with respect to `h*`. The regularized
//! MAP objective is taken as
//!
//! ```text
//! J(h) = ‖sqrt(ρξ) X h − y‖² / σ² − β log P(h)
//! ```
//!
//! with `P` a circularly-symmetric complex density. With a Gaussian prior and
//! `β = 1` its minimizer is the LMMSE estimate, which is also the fixed point
//! of the plug-and-play iteration in [`crate::pnp`].

use num_complex::Complex64;

pub use crate::prior::{GaussianPrior, GmmComponent, GmmPrior};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, cholesky_log_det, norm_sqr, CMatrix, CVector};
use crate::observation::{Observation, PilotSet};

fn check_dims(obs: &Observation, pilots: &PilotSet) -> Result<()> {
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
    Ok(())
}

fn check_prior_dim(m: usize, pilots: &PilotSet) -> Result<()> {
    if m != pilots.num_antennas() {
        return Err(Error::Shape(format!(
            "prior has dimension {m} but pilots have {} columns",
            pilots.num_antennas()
        )));
    }
    Ok(())
}

fn amplitude(obs: &Observation, pilots: &PilotSet) -> f64 {
    (pilots.rho * obs.xi).sqrt()
}

/// Least-squares estimate `X† y / sqrt(ρξ)`, which is also the ML estimate
/// under CSCG noise. For `τ < M` the minimum-norm solution is returned.
pub fn estimate_ls(obs: &Observation, pilots: &PilotSet) -> Result<CVector> {
    check_dims(obs, pilots)?;
    let tau = pilots.tau();
    let m = pilots.num_antennas();
    if tau == 0 {
        return Err(Error::NoPilots);
    }
    let a = amplitude(obs, pilots);
    if a <= 0.0 {
        return Err(Error::RankDeficient);
    }
    let x = &pilots.x;
    let xh = x.adjoint();
    let h = if tau >= m {
        let gram = &xh * x;
        let ch = gram.cholesky().ok_or(Error::RankDeficient)?;
        ch.solve(&(&xh * &obs.y))
    } else {
        let gram = x * &xh;
        let ch = gram.cholesky().ok_or(Error::RankDeficient)?;
        &xh * ch.solve(&obs.y)
    };
    Ok(h.unscale(a))
}

/// Posterior mean of `CN(mean, cov)` given `obs`, and the log marginal
/// likelihood of `y` under that prior.
fn gaussian_posterior(
    obs: &Observation,
    pilots: &PilotSet,
    mean: &CVector,
    cov: &CMatrix,
) -> Result<(CVector, f64)> {
    let tau = pilots.tau();
    if tau == 0 {
        return Ok((mean.clone(), 0.0));
    }
    let a = Complex64::new(amplitude(obs, pilots), 0.0);
    let x = &pilots.x;
    let cxh = cov * x.adjoint();
    let mut s = x * &cxh * Complex64::new(pilots.rho * obs.xi, 0.0);
    for i in 0..tau {
        s[(i, i)] += Complex64::new(obs.sigma2, 0.0);
    }
    let s = (&s + s.adjoint()).scale(0.5);
    let ch = cholesky_jittered(&s).ok_or(Error::NumericallyDegenerate)?;
    let resid = &obs.y - x * mean * a;
    let w = ch.solve(&resid);
    let post = mean + cxh * w.clone() * a;
    let quad = resid.dotc(&w).re;
    let log_lik =
        -(tau as f64) * std::f64::consts::PI.ln() - cholesky_log_det(&ch) - quad;
    Ok((post, log_lik))
}

/// LMMSE estimate; returns the prior mean when no pilots are sent.
pub fn estimate_lmmse(
    obs: &Observation,
    pilots: &PilotSet,
    prior: &GaussianPrior,
) -> Result<CVector> {
    check_dims(obs, pilots)?;
    check_prior_dim(prior.dim(), pilots)?;
    Ok(gaussian_posterior(obs, pilots, prior.mean(), prior.cov())?.0)
}

/// Posterior mean under a mixture prior with its component responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseOutput {
    pub h: CVector,
    pub responsibilities: Vec<f64>,
}

/// Exact posterior mean under a Gaussian-mixture prior.
pub fn estimate_mmse_gmm(obs: &Observation, pilots: &PilotSet, prior: &GmmPrior) -> Result<CVector> {
    Ok(estimate_mmse_gmm_detailed(obs, pilots, prior)?.h)
}

pub fn estimate_mmse_gmm_detailed(
    obs: &Observation,
    pilots: &PilotSet,
    prior: &GmmPrior,
) -> Result<MmseOutput> {
    check_dims(obs, pilots)?;
    check_prior_dim(prior.dim(), pilots)?;
    if pilots.tau() == 0 {
        return Err(Error::NoPilots);
    }
    let mut means = Vec::with_capacity(prior.components().len());
    let mut logits = Vec::with_capacity(prior.components().len());
    for comp in prior.components() {
        let (post, log_lik) = gaussian_posterior(obs, pilots, &comp.mean, &comp.cov)?;
        means.push(post);
        logits.push(comp.weight.ln() + log_lik);
    }
    let responsibilities = softmax(&logits)?;
    let mut h = CVector::zeros(prior.dim());
    for (r, post) in responsibilities.iter().zip(&means) {
        h.axpy(Complex64::new(*r, 0.0), post, Complex64::new(1.0, 0.0));
    }
    Ok(MmseOutput {
        h,
        responsibilities,
    })
}

/// Normalized exponentials with max-subtraction.
pub(crate) fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericallyDegenerate);
    }
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NumericallyDegenerate);
    }
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// How `β` enters the Gaussian regularized-MAP closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmapVariant {
    /// `h̄ + β · (LMMSE correction)`; agrees with the minimizer only at `β = 1`.
    ScaledCorrection,
    /// True minimizer of `J`, i.e. LMMSE with covariance `C / β`.
    ExactMinimizer,
}

/// Prior families with a closed-form regularized-MAP solution.
#[derive(Debug, Clone, Copy)]
pub enum RmapPrior<'a> {
    Gaussian(&'a GaussianPrior),
    /// Flat prior; the estimate is the LS solution.
    Uniform,
    /// Point mass at the given channel.
    Dirac(&'a CVector),
}

/// Regularized MAP estimate under a Gaussian prior.
pub fn estimate_rmap_gaussian(
    obs: &Observation,
    pilots: &PilotSet,
    prior: &GaussianPrior,
    beta: f64,
    variant: RmapVariant,
) -> Result<CVector> {
    estimate_rmap(obs, pilots, RmapPrior::Gaussian(prior), beta, variant)
}

pub fn estimate_rmap(
    obs: &Observation,
    pilots: &PilotSet,
    prior: RmapPrior<'_>,
    beta: f64,
    variant: RmapVariant,
) -> Result<CVector> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidRegularizer(beta));
    }
    check_dims(obs, pilots)?;
    match prior {
        RmapPrior::Uniform => estimate_ls(obs, pilots),
        RmapPrior::Dirac(hd) => {
            check_prior_dim(hd.len(), pilots)?;
            Ok(hd.clone())
        }
        RmapPrior::Gaussian(g) => {
            check_prior_dim(g.dim(), pilots)?;
            match variant {
                RmapVariant::ScaledCorrection => {
                    let (post, _) = gaussian_posterior(obs, pilots, g.mean(), g.cov())?;
                    let correction = (post - g.mean()) * Complex64::new(beta, 0.0);
                    Ok(g.mean() + correction)
                }
                RmapVariant::ExactMinimizer => {
                    let cov = g.cov().unscale(beta);
                    Ok(gaussian_posterior(obs, pilots, g.mean(), &cov)?.0)
                }
            }
        }
    }
}

/// Log-prior model usable by [`sd_map_solve`].
pub trait ScorePrior {
    /// `∂ log P / ∂h*` at `h`.
    fn score(&self, h: &CVector) -> Result<CVector>;

    /// `log P(h)` when available; used only to detect divergence.
    fn log_density(&self, _h: &CVector) -> Option<Result<f64>> {
        None
    }
}

impl<F> ScorePrior for F
where
    F: Fn(&CVector) -> Result<CVector>,
{
    fn score(&self, h: &CVector) -> Result<CVector> {
        self(h)
    }
}

impl ScorePrior for GaussianPrior {
    fn score(&self, h: &CVector) -> Result<CVector> {
        let ch = cholesky_jittered(self.cov())
            .ok_or_else(|| Error::InvalidPrior("covariance is singular".into()))?;
        Ok(-ch.solve(&(h - self.mean())))
    }

    fn log_density(&self, h: &CVector) -> Option<Result<f64>> {
        let ch = match cholesky_jittered(self.cov()) {
            Some(ch) => ch,
            None => return Some(Err(Error::InvalidPrior("covariance is singular".into()))),
        };
        let d = h - self.mean();
        let quad = d.dotc(&ch.solve(&d)).re;
        let m = self.dim() as f64;
        Some(Ok(-m * std::f64::consts::PI.ln() - cholesky_log_det(&ch) - quad))
    }
}

/// Step sizes for [`sd_map_solve`]. A schedule repeats its last entry.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSizes {
    Constant(f64),
    Schedule(Vec<f64>),
}

impl StepSizes {
    fn at(&self, i: usize) -> f64 {
        match self {
            StepSizes::Constant(d) => *d,
            StepSizes::Schedule(s) => s[i.min(s.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            StepSizes::Constant(d) => *d > 0.0 && d.is_finite(),
            StepSizes::Schedule(s) => !s.is_empty() && s.iter().all(|d| *d > 0.0 && d.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("step sizes must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdOptions {
    pub steps: StepSizes,
    pub max_iters: usize,
    pub tol: f64,
    /// Starting point; the zero vector when absent.
    pub init: Option<CVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdResult {
    pub h: CVector,
    pub iterations: usize,
    pub converged: bool,
}

/// Number of consecutive objective increases treated as divergence.
pub const SD_DIVERGENCE_RUN: usize = 10;

/// Gradient of `J` at `h`.
pub fn map_objective_gradient(
    obs: &Observation,
    pilots: &PilotSet,
    prior: &dyn ScorePrior,
    beta: f64,
    h: &CVector,
) -> Result<CVector> {
    let a = Complex64::new(amplitude(obs, pilots), 0.0);
    let mut grad = prior.score(h)? * Complex64::new(-beta, 0.0);
    if pilots.tau() > 0 {
        let resid = &pilots.x * h * a - &obs.y;
        grad += pilots.x.adjoint() * resid * (a / obs.sigma2);
    }
    Ok(grad)
}

/// Steepest descent on `J`, stopping when the relative change of the iterate
/// falls below `tol`. Progress is monitored with `J` when the prior exposes a
/// log-density and with the gradient norm otherwise.
pub fn sd_map_solve(
    obs: &Observation,
    pilots: &PilotSet,
    prior: &dyn ScorePrior,
    beta: f64,
    opts: &SdOptions,
) -> Result<SdResult> {
    check_dims(obs, pilots)?;
    opts.steps.validate()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidRegularizer(beta));
    }
    let m = pilots.num_antennas();
    let mut h = opts.init.clone().unwrap_or_else(|| CVector::zeros(m));
    check_prior_dim(h.len(), pilots)?;
    let a = Complex64::new(amplitude(obs, pilots), 0.0);
    let merit = |h: &CVector, grad: &CVector| -> Result<f64> {
        match prior.log_density(h) {
            Some(lp) => {
                let data = if pilots.tau() > 0 {
                    norm_sqr(&(&pilots.x * h * a - &obs.y)) / obs.sigma2
                } else {
                    0.0
                };
                Ok(data - beta * lp?)
            }
            None => Ok(grad.norm()),
        }
    };
    let mut grad = map_objective_gradient(obs, pilots, prior, beta, &h)?;
    let mut last = merit(&h, &grad)?;
    let mut increases = 0;
    for i in 0..opts.max_iters {
        let next = &h - &grad * Complex64::new(opts.steps.at(i), 0.0);
        if next.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Divergence { iterations: i + 1 });
        }
        let step = (&next - &h).norm();
        let scale = h.norm();
        h = next;
        if step <= opts.tol * if scale > 0.0 { scale } else { 1.0 } {
            return Ok(SdResult {
                h,
                iterations: i + 1,
                converged: true,
            });
        }
        grad = map_objective_gradient(obs, pilots, prior, beta, &h)?;
        let value = merit(&h, &grad)?;
        if value > last {
            increases += 1;
            if increases >= SD_DIVERGENCE_RUN {
                return Err(Error::Divergence { iterations: i + 1 });
            }
        } else {
            increases = 0;
        }
        last = value;
    }
    Ok(SdResult {
        h,
        iterations: opts.max_iters,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, cscg_vector, random_hpd, rng_from_seed, sample_cn};
    use crate::observation::{make_dft_pilots, observe, Noise};

    fn random_prior(seed: u64, m: usize) -> GaussianPrior {
        let mut rng = rng_from_seed(seed);
        let mean = cscg_vector(&mut rng, m, 0.5);
        GaussianPrior::new(mean, random_hpd(&mut rng, m, 0.05, 1.0)).unwrap()
    }

    fn lmmse_direct(obs: &Observation, p: &PilotSet, g: &GaussianPrior) -> CVector {
        let a = c((p.rho * obs.xi).sqrt(), 0.0);
        let x = &p.x;
        let s = x * g.cov() * x.adjoint() * c(p.rho * obs.xi, 0.0)
            + CMatrix::identity(p.tau(), p.tau()) * c(obs.sigma2, 0.0);
        let inv = s.try_inverse().unwrap();
        g.mean() + g.cov() * x.adjoint() * inv * (&obs.y - x * g.mean() * a) * a
    }

    #[test]
    fn ls_exact_with_unitary_pilots() {
        let mut rng = rng_from_seed(1);
        let p = make_dft_pilots(8, 8).unwrap();
        for t in 0..20 {
            let h = cscg_vector(&mut rng, 8, 1.0);
            let o = observe(&h, 0.3, &p, 1.0, t, Noise::Zero).unwrap();
            assert!((estimate_ls(&o, &p).unwrap() - &h).norm() <= 1e-10);
        }
    }

    #[test]
    fn ls_min_norm_single_row() {
        let mut x = CMatrix::zeros(1, 4);
        x[(0, 0)] = c(1.0, 0.0);
        let p = PilotSet::new(x, 1.0).unwrap();
        let h = CVector::from_vec(vec![c(0.5, 0.2), c(1.0, 0.0), c(0.0, -1.0), c(2.0, 2.0)]);
        let o = observe(&h, 1.0, &p, 1.0, 0, Noise::Zero).unwrap();
        let est = estimate_ls(&o, &p).unwrap();
        let expect = CVector::from_vec(vec![c(0.5, 0.2), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!((est - expect).norm() < 1e-12);
    }

    #[test]
    fn ls_errors() {
        let p = make_dft_pilots(4, 0).unwrap();
        let o = observe(&CVector::zeros(4), 1.0, &p, 1.0, 0, Noise::Cscg).unwrap();
        assert!(matches!(estimate_ls(&o, &p), Err(Error::NoPilots)));
        // Two identical rows: the Gram matrix is singular.
        let row = make_dft_pilots(4, 1).unwrap().x;
        let x = CMatrix::from_fn(2, 4, |_, j| row[(0, j)]);
        let p2 = PilotSet::new(x, 1.0).unwrap();
        let o2 = observe(&CVector::zeros(4), 1.0, &p2, 1.0, 0, Noise::Cscg).unwrap();
        assert!(matches!(estimate_ls(&o2, &p2), Err(Error::RankDeficient)));
    }

    #[test]
    fn lmmse_matches_direct_formula_and_limits() {
        let g = random_prior(2, 6);
        let p = make_dft_pilots(6, 3).unwrap();
        let h = cscg_vector(&mut rng_from_seed(9), 6, 1.0);
        let o = observe(&h, 0.8, &p, 0.2, 5, Noise::Cscg).unwrap();
        let est = estimate_lmmse(&o, &p, &g).unwrap();
        assert!((&est - lmmse_direct(&o, &p, &g)).norm() < 1e-10);

        let loud = observe(&h, 0.8, &p, 1e12, 5, Noise::Zero).unwrap();
        let est = estimate_lmmse(&loud, &p, &g).unwrap();
        assert!((&est - g.mean()).norm() <= 1e-4 * g.mean().norm());

        let p0 = make_dft_pilots(6, 0).unwrap();
        let o0 = observe(&h, 0.8, &p0, 0.2, 5, Noise::Cscg).unwrap();
        assert_eq!(&estimate_lmmse(&o0, &p0, &g).unwrap(), g.mean());
    }

    #[test]
    fn single_component_mmse_equals_lmmse() {
        for seed in 0..10 {
            let g = random_prior(seed, 5);
            let p = make_dft_pilots(5, 1 + seed as usize % 5).unwrap();
            let mut rng = rng_from_seed(100 + seed);
            let h = sample_cn(&mut rng, g.mean(), g.cov());
            let o = observe(&h, 1.3, &p, 0.05 + 0.1 * seed as f64, seed, Noise::Cscg).unwrap();
            let a = estimate_lmmse(&o, &p, &g).unwrap();
            let out = estimate_mmse_gmm_detailed(&o, &p, &GmmPrior::single(&g)).unwrap();
            assert!((a - &out.h).norm() <= 1e-8 * out.h.norm().max(1.0));
            assert!((out.responsibilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn separated_components_pick_the_right_one() {
        let m = 4;
        let scale = 0.01;
        let mk = |mu: f64| GmmComponent {
            weight: 0.5,
            mean: CVector::from_element(m, c(mu, 0.0)),
            cov: CMatrix::identity(m, m) * c(scale, 0.0),
        };
        let prior = GmmPrior::new(vec![mk(1.0), mk(-1.0)]).unwrap();
        let p = make_dft_pilots(m, m).unwrap();
        let mut rng = rng_from_seed(3);
        let h = sample_cn(&mut rng, &prior.components()[0].mean, &prior.components()[0].cov);
        let o = observe(&h, 1.0, &p, 1e-4, 1, Noise::Cscg).unwrap();
        let out = estimate_mmse_gmm_detailed(&o, &p, &prior).unwrap();
        assert!(out.responsibilities[0] > 0.99);
    }

    #[test]
    fn rmap_variants() {
        let g = random_prior(4, 6);
        let p = make_dft_pilots(6, 4).unwrap();
        let h = cscg_vector(&mut rng_from_seed(1), 6, 1.0);
        let o = observe(&h, 1.0, &p, 0.1, 2, Noise::Cscg).unwrap();
        let lmmse = estimate_lmmse(&o, &p, &g).unwrap();
        for v in [RmapVariant::ScaledCorrection, RmapVariant::ExactMinimizer] {
            let r = estimate_rmap_gaussian(&o, &p, &g, 1.0, v).unwrap();
            assert!((r - &lmmse).norm() < 1e-10);
        }
        let tiny = estimate_rmap_gaussian(&o, &p, &g, 1e-12, RmapVariant::ScaledCorrection).unwrap();
        assert!((tiny - g.mean()).norm() < 1e-6);
        assert!(matches!(
            estimate_rmap_gaussian(&o, &p, &g, 0.0, RmapVariant::ExactMinimizer),
            Err(Error::InvalidRegularizer(_))
        ));
        let ls = estimate_ls(&o, &p).unwrap();
        let u = estimate_rmap(&o, &p, RmapPrior::Uniform, 0.5, RmapVariant::ExactMinimizer).unwrap();
        assert_eq!(u, ls);
        let d = estimate_rmap(&o, &p, RmapPrior::Dirac(&h), 0.5, RmapVariant::ExactMinimizer).unwrap();
        assert_eq!(d, h);
    }

    fn sd_opts(init: Option<CVector>) -> SdOptions {
        SdOptions {
            steps: StepSizes::Constant(0.02),
            max_iters: 200_000,
            tol: 1e-13,
            init,
        }
    }

    #[test]
    fn sd_matches_exact_minimizer() {
        let g = random_prior(6, 4);
        let p = make_dft_pilots(4, 2).unwrap();
        let h = cscg_vector(&mut rng_from_seed(2), 4, 1.0);
        let o = observe(&h, 1.0, &p, 0.5, 3, Noise::Cscg).unwrap();
        let beta = 0.3;
        let exact = estimate_rmap_gaussian(&o, &p, &g, beta, RmapVariant::ExactMinimizer).unwrap();
        let sd = sd_map_solve(&o, &p, &g, beta, &sd_opts(None)).unwrap();
        assert!(sd.converged);
        assert!((&sd.h - &exact).norm() <= 1e-6 * exact.norm());

        let restart = sd_map_solve(&o, &p, &g, beta, &sd_opts(Some(sd.h.clone()))).unwrap();
        assert!(restart.iterations <= 1);
    }

    #[test]
    fn sd_reports_divergence() {
        let g = random_prior(6, 4);
        let p = make_dft_pilots(4, 4).unwrap();
        let o = observe(&CVector::zeros(4), 1.0, &p, 0.01, 3, Noise::Cscg).unwrap();
        let opts = SdOptions {
            steps: StepSizes::Constant(10.0),
            max_iters: 1000,
            tol: 1e-12,
            init: Some(CVector::from_element(4, c(1.0, 0.0))),
        };
        assert!(matches!(
            sd_map_solve(&o, &p, &g, 1.0, &opts),
            Err(Error::Divergence { .. })
        ));
    }
}
