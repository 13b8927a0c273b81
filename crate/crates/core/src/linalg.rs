//! Dense complex linear-algebra helpers and seeded random draws.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Absolute tolerance used when checking Hermitian symmetry and PSD-ness.
pub const PSD_TOL: f64 = 1e-10;

/// Relative jitter added to the diagonal when a Hermitian factorization fails.
pub const JITTER: f64 = 1e-12;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Unitary DFT matrix `F[k, n] = exp(-j 2 pi k n / M) / sqrt(M)`.
pub fn dft_matrix(m: usize) -> CMatrix {
    let scale = 1.0 / (m as f64).sqrt();
    CMatrix::from_fn(m, m, |k, n| {
        // Reduce k*n mod M first so the phase stays accurate for large M.
        let kn = ((k * n) % m) as f64;
        Complex64::from_polar(scale, -2.0 * std::f64::consts::PI * kn / m as f64)
    })
}

pub fn trace_re(a: &CMatrix) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)].re).sum()
}

/// Largest entrywise deviation of `a` from its conjugate transpose.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in i..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Checks that `a` is square, Hermitian and positive semidefinite.
pub fn check_hermitian_psd(a: &CMatrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidPrior(format!(
            "{what} is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidPrior(format!("{what} has non-finite entries")));
    }
    let defect = hermitian_defect(a);
    if defect > PSD_TOL {
        return Err(Error::InvalidPrior(format!(
            "{what} is not Hermitian (defect {defect:.3e})"
        )));
    }
    if a.nrows() == 0 {
        return Ok(());
    }
    let min_eig = hermitian_eigen(a).eigenvalues.min();
    if min_eig < -PSD_TOL {
        return Err(Error::InvalidPrior(format!(
            "{what} has negative eigenvalue {min_eig:.3e}"
        )));
    }
    Ok(())
}

/// Eigendecomposition of the Hermitian part of `a`.
pub fn hermitian_eigen(a: &CMatrix) -> SymmetricEigen<Complex64, Dyn> {
    let sym = (a + a.adjoint()).scale(0.5);
    SymmetricEigen::new(sym)
}

/// Cholesky factorization of a Hermitian positive definite matrix, retried
/// once with `JITTER * trace / n` on the diagonal.
pub fn cholesky_jittered(a: &CMatrix) -> Option<Cholesky<Complex64, Dyn>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch);
    }
    let n = a.nrows().max(1);
    let jitter = JITTER * trace_re(a).abs().max(f64::MIN_POSITIVE) / n as f64;
    let mut shifted = a.clone();
    for i in 0..a.nrows() {
        shifted[(i, i)] += Complex64::new(jitter, 0.0);
    }
    shifted.cholesky()
}

/// `log det` of a Hermitian positive definite matrix from its Cholesky factor.
pub fn cholesky_log_det(ch: &Cholesky<Complex64, Dyn>) -> f64 {
    let l = ch.l_dirty();
    (0..l.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum()
}

/// Hermitian inner product `a^H b`.
pub fn dot_h(a: &CVector, b: &CVector) -> Complex64 {
    a.dotc(b)
}

pub fn norm_sqr(a: &CVector) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Deterministically mixes a master seed with a sequence of indices.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0x6a09_e667_f3bc_c909);
    for &p in parts {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One circularly-symmetric complex Gaussian draw with the given variance.
pub fn cscg<R: rand::Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

pub fn cscg_vector<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, variance: f64) -> CVector {
    CVector::from_fn(n, |_, _| cscg(rng, variance))
}

/// Draws from `CN(mean, cov)` using a Hermitian square root of `cov`.
pub fn sample_cn<R: rand::Rng + ?Sized>(rng: &mut R, mean: &CVector, cov: &CMatrix) -> CVector {
    let eig = hermitian_eigen(cov);
    let root = &eig.eigenvectors
        * CMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0)));
    let w = cscg_vector(rng, mean.len(), 1.0);
    mean + root * w
}

/// Random Hermitian positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_hpd<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| cscg(rng, 1.0));
    let q = g.qr().q();
    let eig = DVector::from_fn(n, |i, _| {
        let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        Complex64::new(lo + (hi - lo) * t, 0.0)
    });
    let a = &q * CMatrix::from_diagonal(&eig) * q.adjoint();
    (&a + a.adjoint()).scale(0.5)
}
