//! Expectation-maximization for mixtures of circularly-symmetric complex
//! Gaussians.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, cholesky_log_det, rng_from_seed, CMatrix, CVector};
use crate::prior::{GmmComponent, GmmPrior};

/// Components whose weight falls below this are removed.
pub const STARVATION_WEIGHT: f64 = 1e-8;

/// Covariance floor relative to the average per-antenna sample power.
pub const COVARIANCE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub n_components: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the per-sample average log-likelihood gains less than this.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            n_components: 4,
            seed: 0,
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub prior: GmmPrior,
    /// Per-sample average log-likelihood before each M-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of starved components that were removed.
    pub pruned: usize,
}

impl EmFit {
    /// True when no iteration lowered the average log-likelihood by more than
    /// `slack` (relative to its magnitude, with an absolute floor of `slack`).
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.log_likelihood
            .windows(2)
            .all(|w| w[1] >= w[0] - slack * w[0].abs().max(1.0))
    }
}

/// Fits a mixture by EM. Means start at seeded farthest-point samples,
/// covariances at the pooled covariance, weights uniform.
pub fn fit_gmm_em(samples: &[CVector], opts: &EmOptions) -> Result<EmFit> {
    let k0 = opts.n_components;
    if k0 == 0 {
        return Err(Error::InvalidConfig("n_components must be at least 1".into()));
    }
    if samples.len() < k0 {
        return Err(Error::InsufficientData(format!(
            "{} samples for {k0} components",
            samples.len()
        )));
    }
    let m = samples[0].len();
    if samples.iter().any(|s| s.len() != m) {
        return Err(Error::Shape("samples have differing lengths".into()));
    }
    let n = samples.len();
    let data = CMatrix::from_fn(m, n, |i, j| samples[j][i]);
    let avg_power = data.norm_squared() / (n * m.max(1)) as f64;
    let floor = COVARIANCE_FLOOR * avg_power.max(f64::MIN_POSITIVE);

    let pooled = super::fit_grid_stats(samples)?;
    let mut comps: Vec<GmmComponent> = farthest_points(samples, k0, opts.seed)
        .into_iter()
        .map(|i| GmmComponent {
            weight: 1.0 / k0 as f64,
            mean: samples[i].clone(),
            cov: add_floor(pooled.cov(), floor),
        })
        .collect();

    let mut history = Vec::new();
    let mut pruned = 0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iters {
        iterations = it + 1;
        let (resp, ll) = e_step(&data, &comps)?;
        let avg = ll / n as f64;
        let done = history
            .last()
            .is_some_and(|prev: &f64| avg - prev < opts.tol);
        history.push(avg);
        if done {
            converged = true;
            break;
        }
        // M-step.
        let mut next = Vec::with_capacity(comps.len());
        for (c, r) in resp.row_iter().enumerate() {
            let nk: f64 = r.iter().sum();
            let weight = nk / n as f64;
            if !(weight >= STARVATION_WEIGHT) {
                log::warn!("EM: pruning starved component {c} (weight {weight:.3e})");
                pruned += 1;
                continue;
            }
            let rc = r.transpose().map(|v| Complex64::new(v, 0.0));
            let mean = (&data * rc).unscale(nk);
            let mut centered = data.clone();
            for (j, mut col) in centered.column_iter_mut().enumerate() {
                col -= &mean;
                col *= Complex64::new(r[j].sqrt(), 0.0);
            }
            let cov = centered.mul_to_adjoint(nk);
            next.push(GmmComponent {
                weight,
                mean,
                cov: add_floor(&cov, floor),
            });
        }
        if next.is_empty() {
            return Err(Error::NumericallyDegenerate);
        }
        let total: f64 = next.iter().map(|c| c.weight).sum();
        for c in next.iter_mut() {
            c.weight /= total;
        }
        comps = next;
    }
    Ok(EmFit {
        prior: GmmPrior::new(comps)?,
        log_likelihood: history,
        iterations,
        converged,
        pruned,
    })
}

trait MulAdjoint {
    fn mul_to_adjoint(&self, scale: f64) -> CMatrix;
}

impl MulAdjoint for CMatrix {
    /// `A Aᴴ / scale`, symmetrized.
    fn mul_to_adjoint(&self, scale: f64) -> CMatrix {
        let g = (self * self.adjoint()).unscale(scale);
        (&g + g.adjoint()).scale(0.5)
    }
}

fn add_floor(cov: &CMatrix, floor: f64) -> CMatrix {
    let mut c = cov.clone();
    for i in 0..c.nrows() {
        c[(i, i)] += Complex64::new(floor, 0.0);
    }
    c
}

/// Responsibilities (`K × N`) and total log-likelihood.
fn e_step(data: &CMatrix, comps: &[GmmComponent]) -> Result<(nalgebra::DMatrix<f64>, f64)> {
    let (m, n) = data.shape();
    let mut logp = nalgebra::DMatrix::<f64>::zeros(comps.len(), n);
    let ln_pi = std::f64::consts::PI.ln();
    for (c, comp) in comps.iter().enumerate() {
        let ch = cholesky_jittered(&comp.cov).ok_or(Error::NumericallyDegenerate)?;
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &comp.mean;
        }
        let z = ch
            .l_dirty()
            .solve_lower_triangular(&centered)
            .ok_or(Error::NumericallyDegenerate)?;
        let base = comp.weight.ln() - m as f64 * ln_pi - cholesky_log_det(&ch);
        for j in 0..n {
            let quad: f64 = z.column(j).iter().map(|v| v.norm_sqr()).sum();
            logp[(c, j)] = base - quad;
        }
    }
    let mut total = 0.0;
    for j in 0..n {
        let mut col = logp.column_mut(j);
        let max = col.max();
        if !max.is_finite() {
            return Err(Error::NumericallyDegenerate);
        }
        let mut s = 0.0;
        for v in col.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        col /= s;
        total += max + s.ln();
    }
    Ok((logp, total))
}

/// Indices chosen by greedy farthest-point traversal from a seeded start.
/// Ties pick the lowest index.
fn farthest_points(samples: &[CVector], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let first = rng.random_range(0..samples.len());
    let mut chosen = vec![first];
    let mut dist: Vec<f64> = samples.iter().map(|s| (s - &samples[first]).norm_squared()).collect();
    while chosen.len() < k {
        let mut best = 0;
        for (i, d) in dist.iter().enumerate() {
            if *d > dist[best] {
                best = i;
            }
        }
        chosen.push(best);
        for (i, s) in samples.iter().enumerate() {
            dist[i] = dist[i].min((s - &samples[best]).norm_squared());
        }
    }
    chosen
}
