//! Data-aided LMMSE over the stacked space-frequency system.
//!
//! With soft symbols `x_hat` and error variances `v`, the data observations
//! `y = X h + w` are treated as `y = X_hat h + dE h + w` with a zero-mean
//! detection error independent of the channel. Then
//!
//! ```text
//! C_yh = X_hat C_hh
//! C_yy = X_hat C_hh X_hat^H + A (C_hh ⊙ (1 ⊗ V)) A^H + sigma2 I
//! h_hat = C_yh^H C_yy^-1 y
//! ```
//!
//! where `A = I_{N_R} ⊗ 1_{1 x N_T} ⊗ I_{K-P}` sums over tx antennas.
//! [`mjcd_lmmse`] exploits the Kronecker structure of `C_hh`;
//! [`mjcd_lmmse_dense`] is the direct dense realization.

use crate::channel::CovarianceModel;
use crate::error::{dim, invalid, Result};
use crate::flops;
use crate::linalg::{kron3_apply, matmul, matmul_adj, matvec, CMat, CVec, HermitianFactor};
use crate::Complex64;

use super::{check_model_dims, DataErrorStats, EstimationResult, EstimatorId};

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn check_inputs(y: Option<&CVec>, stats: &DataErrorStats, cov: &CovarianceModel, sigma2: f64) -> Result<()> {
    check_model_dims(stats, cov)?;
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(invalid(format!("noise variance {sigma2} must be finite and nonnegative")));
    }
    if let Some(y) = y {
        let n_y = cov.n_r() * cov.n_data();
        if y.len() != n_y {
            return Err(dim(format!("received vector has {} entries, expected {n_y}", y.len())));
        }
    }
    Ok(())
}

/// `A (C_hh ⊙ (1 ⊗ V)) A^H`, evaluated entrywise. Only entries with equal
/// subcarrier indices are nonzero.
pub fn detection_error_term(stats: &DataErrorStats, cov: &CovarianceModel) -> Result<CMat> {
    check_model_dims(stats, cov)?;
    let (nr, nt, d) = (cov.n_r(), cov.n_t(), cov.n_data());
    let mut out = CMat::zeros(nr * d, nr * d);
    for m in 0..nr {
        for m2 in 0..nr {
            for k in 0..d {
                let mut acc = zero();
                for n in 0..nt {
                    acc += cov.c_hh_entry((m * nt + n) * d + k, (m2 * nt + n) * d + k) * stats.v[n][k];
                }
                out[(m * d + k, m2 * d + k)] = acc;
            }
        }
    }
    Ok(out)
}

/// Same quantity as [`detection_error_term`] with `A` and `B` formed
/// explicitly. Intended for small reference checks.
pub fn detection_error_term_dense(stats: &DataErrorStats, cov: &CovarianceModel) -> Result<CMat> {
    check_model_dims(stats, cov)?;
    let (nr, nt, d) = (cov.n_r(), cov.n_t(), cov.n_data());
    let a = CMat::identity(nr, nr)
        .kronecker(&CMat::from_element(1, nt, Complex64::new(1.0, 0.0)))
        .kronecker(&CMat::identity(d, d));
    let v_diag: Vec<Complex64> = stats.v.iter().flatten().map(|&e| Complex64::new(e, 0.0)).collect();
    let v = CMat::from_diagonal(&CVec::from_vec(v_diag));
    let mask = CMat::from_element(nr, nr, Complex64::new(1.0, 0.0)).kronecker(&v);
    let b = cov.c_hh().component_mul(&mask);
    Ok(&a * b * a.adjoint())
}

/// Closed-form `(C_yh, C_yy)`.
pub fn mjcd_covariances(stats: &DataErrorStats, cov: &CovarianceModel, sigma2: f64) -> Result<(CMat, CMat)> {
    check_inputs(None, stats, cov, sigma2)?;
    let (nr, nt, d) = (cov.n_r(), cov.n_t(), cov.n_data());
    let n_h = nr * nt * d;
    let c_yh = CMat::from_fn(nr * d, n_h, |row, col| {
        let (m, k) = (row / d, row % d);
        (0..nt)
            .map(|n| stats.x_hat[n][k] * cov.c_hh_entry((m * nt + n) * d + k, col))
            .sum()
    });
    let c_yy = structured_c_yy(stats, cov, sigma2);
    Ok((c_yh, c_yy))
}

/// `C_yy = R_r ⊗ (R_f ⊙ S + diag(e)) + sigma2 I` where
/// `S[k, k'] = x_k^T R_t conj(x_k')` and `e_k = sum_n R_t[n, n] R_f[k, k] v_{n,k}`.
fn structured_c_yy(stats: &DataErrorStats, cov: &CovarianceModel, sigma2: f64) -> CMat {
    let (nr, nt, d) = (cov.n_r(), cov.n_t(), cov.n_data());
    let data = cov.pattern().data_indices();
    let u = CMat::from_fn(d, nt, |k, n| stats.x_hat[n][k]);
    let s = matmul_adj(&matmul(&u, cov.r_t()), &u);
    flops::add((d * d + nt * d + nr * nr * d * d) as u64);
    let mut g = CMat::from_fn(d, d, |k, k2| cov.r_freq()[(data[k], data[k2])] * s[(k, k2)]);
    for k in 0..d {
        let e: f64 = (0..nt).map(|n| cov.r_t()[(n, n)].re * stats.v[n][k]).sum();
        g[(k, k)] += cov.r_freq()[(data[k], data[k])] * e;
    }
    let mut c_yy = cov.r_r().kronecker(&g);
    for i in 0..nr * d {
        c_yy[(i, i)] += sigma2;
    }
    c_yy
}

/// Data-aided Wiener-Hopf estimate of every data-subcarrier CFR using the
/// Kronecker structure of `C_hh`.
///
/// `y` is the stacked data observation ([`crate::frame::ReceivedFrame::stacked_data`]).
pub fn mjcd_lmmse(y: &CVec, stats: &DataErrorStats, cov: &CovarianceModel, sigma2: f64) -> Result<EstimationResult> {
    check_inputs(Some(y), stats, cov, sigma2)?;
    let (nr, nt, d) = (cov.n_r(), cov.n_t(), cov.n_data());
    let data = cov.pattern().data_indices();
    let (h, used) = flops::measure(|| -> Result<CVec> {
        let c_yy = structured_c_yy(stats, cov, sigma2);
        let z = HermitianFactor::new(&c_yy, "stacked data covariance")?.solve_vec(y);
        // t = X_hat^H z, then h = C_hh t.
        flops::add((nr * nt * d) as u64);
        let mut t = Vec::with_capacity(nr * nt * d);
        for m in 0..nr {
            for n in 0..nt {
                for k in 0..d {
                    t.push(stats.x_hat[n][k].conj() * z[m * d + k]);
                }
            }
        }
        let r_dd = CMat::from_fn(d, d, |a, b| cov.r_freq()[(data[a], data[b])]);
        Ok(CVec::from_vec(kron3_apply(cov.r_r(), cov.r_t(), &r_dd, &t)))
    });
    EstimationResult::from_stacked(EstimatorId::Mjcd, nr, nt, data.to_vec(), &h?, used)
}

/// Direct dense realization: forms `X_hat` and `C_hh` explicitly and
/// multiplies them out. Cubic in `N_R N_T (K - P)`; use for small systems and
/// for operation counting.
pub fn mjcd_lmmse_dense(
    y: &CVec,
    stats: &DataErrorStats,
    cov: &CovarianceModel,
    sigma2: f64,
) -> Result<EstimationResult> {
    check_inputs(Some(y), stats, cov, sigma2)?;
    let (nr, nt, d) = (cov.n_r(), cov.n_t(), cov.n_data());
    let (n_y, n_h) = (nr * d, nr * nt * d);
    let c_hh = cov.c_hh();
    let x_big = CMat::from_fn(n_y, n_h, |row, col| {
        let (m, k) = (row / d, row % d);
        let (m2, n, k2) = (col / (nt * d), (col / d) % nt, col % d);
        if m == m2 && k == k2 {
            stats.x_hat[n][k]
        } else {
            zero()
        }
    });
    let (h, used) = flops::measure(|| -> Result<CVec> {
        let c_yh = matmul(&x_big, &c_hh);
        let mut c_yy = matmul_adj(&c_yh, &x_big);
        flops::add((nr * nr * nt * d) as u64);
        for m in 0..nr {
            for m2 in 0..nr {
                for k in 0..d {
                    let mut acc = zero();
                    for n in 0..nt {
                        acc += c_hh[((m * nt + n) * d + k, (m2 * nt + n) * d + k)] * stats.v[n][k];
                    }
                    c_yy[(m * d + k, m2 * d + k)] += acc;
                }
            }
        }
        for i in 0..n_y {
            c_yy[(i, i)] += sigma2;
        }
        let z = HermitianFactor::new(&c_yy, "stacked data covariance")?.solve_vec(y);
        Ok(matvec(&c_yh.adjoint(), &z))
    });
    EstimationResult::from_stacked(EstimatorId::Mjcd, nr, nt, cov.pattern().data_indices().to_vec(), &h?, used)
}
