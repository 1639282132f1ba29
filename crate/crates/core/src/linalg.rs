//! Dense complex linear algebra on top of `nalgebra`, with multiply-add
//! accounting for the estimator code paths.

use std::sync::atomic::{AtomicU64, Ordering};

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, LU};
use num_complex::Complex64;

use crate::error::{dim, Error, Result};
use crate::flops;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

static RIDGE_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of factorizations that needed a diagonal ridge since process start.
pub fn ridge_events() -> u64 {
    RIDGE_EVENTS.load(Ordering::Relaxed)
}

/// `a * b`, counted as `rows(a) * cols(a) * cols(b)` multiply-adds.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    flops::add((a.nrows() * a.ncols() * b.ncols()) as u64);
    a * b
}

/// `a * b^H`, counted like [`matmul`].
pub fn matmul_adj(a: &CMat, b: &CMat) -> CMat {
    flops::add((a.nrows() * a.ncols() * b.nrows()) as u64);
    a * b.adjoint()
}

/// `a * v`, counted as `rows * cols`.
pub fn matvec(a: &CMat, v: &CVec) -> CVec {
    flops::add((a.nrows() * a.ncols()) as u64);
    a * v
}

enum Factor {
    Cholesky(Cholesky<Complex64, nalgebra::Dyn>),
    Lu(LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>),
}

/// Factorization of a Hermitian (ideally positive definite) matrix used to
/// apply its inverse.
///
/// Tries Cholesky first. If that fails a ridge of `1e-10 * trace / n` is
/// added and Cholesky is retried, then LU on the ridged matrix. The factor
/// step is counted as `n^3 / 3` multiply-adds and each solve as `n^2 * m`.
pub struct HermitianFactor {
    factor: Factor,
    n: usize,
}

impl HermitianFactor {
    pub fn new(a: &CMat, context: &'static str) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(dim(format!("{context}: matrix is {}x{}", n, a.ncols())));
        }
        if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Singular { context, dim: n });
        }
        flops::add((n * n * n / 3) as u64);
        if let Some(ch) = Cholesky::new(a.clone()) {
            return Ok(Self { factor: Factor::Cholesky(ch), n });
        }
        let trace: f64 = (0..n).map(|i| a[(i, i)].re).sum();
        if !(trace > 0.0) {
            return Err(Error::Singular { context, dim: n });
        }
        RIDGE_EVENTS.fetch_add(1, Ordering::Relaxed);
        let ridge = 1e-10 * trace / n as f64;
        warn!("{context}: Cholesky failed, retrying with ridge {ridge:e}");
        let mut ridged = a.clone();
        for i in 0..n {
            ridged[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::new(ridged.clone()) {
            return Ok(Self { factor: Factor::Cholesky(ch), n });
        }
        let lu = ridged.lu();
        if lu.is_invertible() {
            warn!("{context}: matrix is not positive definite, using LU");
            return Ok(Self { factor: Factor::Lu(lu), n });
        }
        Err(Error::Singular { context, dim: n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &CMat) -> CMat {
        flops::add((self.n * self.n * b.ncols()) as u64);
        match &self.factor {
            Factor::Cholesky(ch) => ch.solve(b),
            Factor::Lu(lu) => lu.solve(b).expect("LU checked invertible"),
        }
    }

    pub fn solve_vec(&self, b: &CVec) -> CVec {
        flops::add((self.n * self.n) as u64);
        match &self.factor {
            Factor::Cholesky(ch) => ch.solve(b),
            Factor::Lu(lu) => lu.solve(b).expect("LU checked invertible"),
        }
    }

    /// Explicit inverse; only used for small systems such as the EP update.
    pub fn inverse(&self) -> CMat {
        self.solve(&CMat::identity(self.n, self.n))
    }
}

/// Hermitian positive semidefinite square root `L = U diag(sqrt(max(e, 0))) U^H`.
///
/// Eigenvalues below `-tol * max(1, max_eig)` are rejected. Eigenvalues
/// under `1e-13 * max_eig` are round-off and are set to zero, so rank
/// deficient inputs keep their exact rank.
pub fn psd_sqrt(a: &CMat, tol: f64) -> Result<CMat> {
    let n = a.nrows();
    let herm = hermitian_part(a);
    let eig = herm.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let floor = -tol * max_eig.max(1.0);
    if let Some(bad) = eig.eigenvalues.iter().find(|&&e| e < floor) {
        return Err(Error::InvalidArgument(format!(
            "covariance is not positive semidefinite: eigenvalue {bad:e} (n = {n})"
        )));
    }
    let cutoff = 1e-13 * max_eig;
    let mut scaled = eig.eigenvectors.clone();
    for (j, &e) in eig.eigenvalues.iter().enumerate() {
        let s = if e > cutoff { e.sqrt() } else { 0.0 };
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(&scaled * eig.eigenvectors.adjoint())
}

/// `(a + a^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Smallest eigenvalue of the Hermitian part of `a`.
pub fn min_eigenvalue(a: &CMat) -> f64 {
    hermitian_part(a)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Largest entrywise deviation `|a_ij - conj(a_ji)|`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Kronecker product.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// `||est - reference||_F / ||reference||_F`.
pub fn rel_frobenius(est: &CMat, reference: &CMat) -> f64 {
    (est - reference).norm() / reference.norm()
}

/// `(a ⊗ b ⊗ c) v` without forming the Kronecker product, with `v` ordered
/// `c`-index innermost. Counted as one pass per factor.
pub fn kron3_apply(a: &CMat, b: &CMat, c: &CMat, v: &[Complex64]) -> Vec<Complex64> {
    let (na, nb, nc) = (a.nrows(), b.nrows(), c.nrows());
    flops::add((na * nb * nc * (na + nb + nc)) as u64);
    // stage 1: along the innermost axis
    let mut s1 = vec![Complex64::new(0.0, 0.0); na * nb * nc];
    for blk in 0..na * nb {
        let src = &v[blk * nc..(blk + 1) * nc];
        for k in 0..nc {
            s1[blk * nc + k] = (0..nc).map(|l| c[(k, l)] * src[l]).sum();
        }
    }
    // stage 2: middle axis
    let mut s2 = vec![Complex64::new(0.0, 0.0); na * nb * nc];
    for x in 0..na {
        for n in 0..nb {
            for k in 0..nc {
                s2[(x * nb + n) * nc + k] = (0..nb).map(|l| b[(n, l)] * s1[(x * nb + l) * nc + k]).sum();
            }
        }
    }
    // stage 3: outer axis
    let mut out = vec![Complex64::new(0.0, 0.0); na * nb * nc];
    for m in 0..na {
        for rest in 0..nb * nc {
            out[m * nb * nc + rest] = (0..na).map(|l| a[(m, l)] * s2[l * nb * nc + rest]).sum();
        }
    }
    out
}

/// Diagonal matrix from a slice.
pub fn diag(entries: &[Complex64]) -> CMat {
    CMat::from_diagonal(&CVec::from_column_slice(entries))
}
