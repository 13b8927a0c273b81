//! Gaussian and Gaussian-mixture channel priors.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{check_hermitian_psd, CMatrix, CVector};

/// Tolerance on the sum of mixture weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// `CN(h̄, C)` prior with a validated Hermitian PSD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: CVector,
    cov: CMatrix,
}

impl GaussianPrior {
    pub fn new(mean: CVector, cov: CMatrix) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::Shape(format!(
                "mean has {} entries but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        check_finite(&mean, "mean")?;
        check_hermitian_psd(&cov, "covariance")?;
        Ok(Self { mean, cov })
    }

    pub fn mean(&self) -> &CVector {
        &self.mean
    }

    pub fn cov(&self) -> &CMatrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Second moment `C + h̄ h̄ᴴ`.
    pub fn second_moment(&self) -> CMatrix {
        &self.cov + &self.mean * self.mean.adjoint()
    }
}

fn check_finite(v: &CVector, what: &str) -> Result<()> {
    if v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidPrior(format!("{what} has non-finite entries")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: CVector,
    pub cov: CMatrix,
}

/// Mixture of circularly-symmetric complex Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    components: Vec<GmmComponent>,
}

impl GmmPrior {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidPrior("mixture has no components".into()))?;
        let m = first.mean.len();
        let mut total = 0.0;
        for (i, comp) in components.iter().enumerate() {
            if !(comp.weight > 0.0 && comp.weight.is_finite()) {
                return Err(Error::InvalidPrior(format!(
                    "component {i} has weight {}",
                    comp.weight
                )));
            }
            if comp.mean.len() != m || comp.cov.nrows() != m {
                return Err(Error::InvalidPrior(format!(
                    "component {i} has dimension {} but component 0 has {m}",
                    comp.mean.len()
                )));
            }
            check_finite(&comp.mean, "component mean")?;
            check_hermitian_psd(&comp.cov, &format!("component {i} covariance"))?;
            total += comp.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidPrior(format!("weights sum to {total}")));
        }
        Ok(Self { components })
    }

    /// One-component mixture equal to `prior`.
    pub fn single(prior: &GaussianPrior) -> Self {
        Self {
            components: vec![GmmComponent {
                weight: 1.0,
                mean: prior.mean.clone(),
                cov: prior.cov.clone(),
            }],
        }
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Overall mean and covariance of the mixture.
    pub fn moments(&self) -> GaussianPrior {
        let m = self.dim();
        let mut mean = CVector::zeros(m);
        for comp in &self.components {
            mean.axpy(Complex64::new(comp.weight, 0.0), &comp.mean, Complex64::new(1.0, 0.0));
        }
        let mut cov = CMatrix::zeros(m, m);
        for comp in &self.components {
            let d = &comp.mean - &mean;
            cov += (&comp.cov + &d * d.adjoint()) * Complex64::new(comp.weight, 0.0);
        }
        cov = (&cov + cov.adjoint()).scale(0.5);
        GaussianPrior { mean, cov }
    }
}
