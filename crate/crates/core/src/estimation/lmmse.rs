//! Pilot-based LS and LMMSE estimation.

use crate::channel::CovarianceModel;
use crate::error::{dim, invalid, Result};
use crate::flops;
use crate::frame::{PilotPattern, ReceivedFrame};
use crate::linalg::{matvec, CMat, CVec, HermitianFactor};
use crate::Complex64;

use super::{EstimationResult, EstimatorId};

/// `h_LS = (X_p)^-1 y_p`, elementwise.
pub fn ls_pilot(y_p: &CVec, pilots: &[Complex64]) -> Result<CVec> {
    if y_p.len() != pilots.len() {
        return Err(dim(format!("{} observations for {} pilots", y_p.len(), pilots.len())));
    }
    if pilots.iter().any(|x| x.norm() == 0.0) {
        return Err(invalid("pilot symbol is zero"));
    }
    flops::add(y_p.len() as u64);
    Ok(CVec::from_iterator(y_p.len(), y_p.iter().zip(pilots).map(|(y, x)| y / x)))
}

/// `W = R_{h h^p} (R_{h^p h^p} + sigma2 I)^-1`, a `K x P` interpolator.
pub fn lmmse_weights(cov: &CovarianceModel, sigma2: f64) -> Result<CMat> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(invalid(format!("noise variance {sigma2} must be finite and nonnegative")));
    }
    let mut gram = cov.r_pilot_pilot();
    for i in 0..gram.nrows() {
        gram[(i, i)] += sigma2;
    }
    let factor = HermitianFactor::new(&gram, "pilot covariance")?;
    // W^H = gram^-1 R_{h h^p}^H since gram is Hermitian.
    Ok(factor.solve(&cov.r_all_pilot().adjoint()).adjoint())
}

/// Rows of a `K x P` interpolator at the data subcarriers.
pub fn data_rows(w: &CMat, pattern: &PilotPattern) -> CMat {
    let data = pattern.data_indices();
    CMat::from_fn(data.len(), w.ncols(), |i, j| w[(data[i], j)])
}

/// `W h_LS`.
pub fn lmmse_estimate(w: &CMat, h_ls: &CVec) -> CVec {
    matvec(w, h_ls)
}

/// LS at the pilots followed by LMMSE interpolation to all `K` subcarriers,
/// for every (rx, tx) pair.
pub fn traditional_lmmse(
    rx: &ReceivedFrame,
    pilots: &[Vec<Complex64>],
    w: &CMat,
) -> Result<EstimationResult> {
    if pilots.len() != rx.n_t || rx.pilot_obs.len() != rx.n_r * rx.n_t {
        return Err(dim("pilot sequences do not match the received frame"));
    }
    let (cfr, used) = flops::measure(|| {
        (0..rx.n_r * rx.n_t)
            .map(|b| {
                let h_ls = ls_pilot(&rx.pilot_obs[b], &pilots[b % rx.n_t])?;
                Ok(lmmse_estimate(w, &h_ls))
            })
            .collect::<Result<Vec<_>>>()
    });
    Ok(EstimationResult {
        estimator: EstimatorId::Lmmse,
        n_r: rx.n_r,
        n_t: rx.n_t,
        subcarriers: (0..w.nrows()).collect(),
        cfr: cfr?,
        flops: used,
    })
}
