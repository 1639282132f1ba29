//! Sampling estimates of the second-order statistics the data-aided
//! estimators compute in closed form. Used by tests and `selftest`.
//!
//! The generative model: true symbols are `x_hat + e` with
//! `e ~ CN(0, v)` independent per entry, the channel is drawn from the
//! covariance model and noise is white with variance `sigma2` on both pilot
//! and data observations.

use rand::Rng;

use crate::channel::CovarianceModel;
use crate::error::{dim, invalid, Result};
use crate::estimation::DataErrorStats;
use crate::frame::complex_gaussian;
use crate::harness::rng_from_seed;
use crate::linalg::CMat;
use crate::Complex64;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// `acc += a b^H`, row-major into a flat buffer.
fn accumulate_outer(acc: &mut [Complex64], a: &[Complex64], b: &[Complex64]) {
    let nb = b.len();
    for (i, ai) in a.iter().enumerate() {
        let row = &mut acc[i * nb..(i + 1) * nb];
        for (o, bj) in row.iter_mut().zip(b) {
            *o += ai * bj.conj();
        }
    }
}

fn finish(acc: Vec<Complex64>, rows: usize, cols: usize, samples: usize) -> CMat {
    let s = 1.0 / samples as f64;
    CMat::from_fn(rows, cols, |i, j| acc[i * cols + j] * s)
}

fn check_common(stats: &DataErrorStats, cov: &CovarianceModel, sigma2: f64, samples: usize) -> Result<()> {
    if stats.n_t() != cov.n_t() || stats.n_data() != cov.n_data() {
        return Err(dim("soft symbols do not match the covariance model"));
    }
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    if !(sigma2 >= 0.0) {
        return Err(invalid("noise variance must be nonnegative"));
    }
    Ok(())
}

/// Empirical `E{y h^H}` and `E{y y^H}` for the stacked data model.
#[derive(Debug, Clone)]
pub struct StackedMoments {
    pub c_yh: CMat,
    pub c_yy: CMat,
}

pub fn sample_stacked_moments(
    stats: &DataErrorStats,
    cov: &CovarianceModel,
    sigma2: f64,
    samples: usize,
    seed: u64,
) -> Result<StackedMoments> {
    check_common(stats, cov, sigma2, samples)?;
    let (nr, nt, k) = (cov.n_r(), cov.n_t(), cov.pattern().subcarriers());
    let data = cov.pattern().data_indices();
    let d = data.len();
    let (n_y, n_h) = (nr * d, nr * nt * d);
    let mut rng = rng_from_seed(seed);
    let mut acc_yh = vec![zero(); n_y * n_h];
    let mut acc_yy = vec![zero(); n_y * n_y];
    let mut h = vec![zero(); n_h];
    let mut y = vec![zero(); n_y];
    for _ in 0..samples {
        let full = cov.draw(&mut rng)?;
        for m in 0..nr {
            for n in 0..nt {
                for (i, &kk) in data.iter().enumerate() {
                    h[(m * nt + n) * d + i] = full[(m * nt + n) * k + kk];
                }
            }
        }
        let x: Vec<Vec<Complex64>> = (0..nt)
            .map(|n| (0..d).map(|i| stats.x_hat[n][i] + complex_gaussian(&mut rng, stats.v[n][i])).collect())
            .collect();
        for m in 0..nr {
            for i in 0..d {
                let mut s = complex_gaussian(&mut rng, sigma2);
                for n in 0..nt {
                    s += x[n][i] * h[(m * nt + n) * d + i];
                }
                y[m * d + i] = s;
            }
        }
        accumulate_outer(&mut acc_yh, &y, &h);
        accumulate_outer(&mut acc_yy, &y, &y);
    }
    Ok(StackedMoments {
        c_yh: finish(acc_yh, n_y, n_h, samples),
        c_yy: finish(acc_yy, n_y, n_y, samples),
    })
}

/// Empirical residual statistics of the per-subsystem estimator for tx `n`
/// on rx `m`: `E{h_{m,n} Z^H} X_hat_n^-H` and `E{Z Z^H}`, where `Z` is what
/// remains of `y_m` after cancelling the other antennas with first-layer
/// estimates and removing `X_hat_n h_{m,n}`.
#[derive(Debug, Clone)]
pub struct SubsystemMoments {
    pub b: CMat,
    pub sigma: CMat,
}

#[allow(clippy::too_many_arguments)]
pub fn sample_subsystem_moments(
    n: usize,
    m: usize,
    cov: &CovarianceModel,
    w1: &CMat,
    stats: &DataErrorStats,
    pilots: &[Vec<Complex64>],
    sigma2: f64,
    samples: usize,
    seed: u64,
) -> Result<SubsystemMoments> {
    check_common(stats, cov, sigma2, samples)?;
    let (nr, nt, k) = (cov.n_r(), cov.n_t(), cov.pattern().subcarriers());
    if n >= nt || m >= nr {
        return Err(invalid("antenna index out of range"));
    }
    let (data, pil) = (cov.pattern().data_indices(), cov.pattern().pilot_indices());
    let (d, p) = (data.len(), pil.len());
    if w1.nrows() != d || w1.ncols() != p || pilots.len() != nt || pilots.iter().any(|x| x.len() != p) {
        return Err(dim("interpolator or pilots do not match the model"));
    }
    let mut rng = rng_from_seed(seed);
    let mut acc_b = vec![zero(); d * d];
    let mut acc_s = vec![zero(); d * d];
    let mut z = vec![zero(); d];
    for _ in 0..samples {
        let full = cov.draw(&mut rng)?;
        let at = |n2: usize, kk: usize| full[(m * nt + n2) * k + kk];
        let pilot_noise: Vec<Vec<Complex64>> =
            (0..nt).map(|_| (0..p).map(|_| complex_gaussian(&mut rng, sigma2)).collect()).collect();
        let sym_err: Vec<Vec<Complex64>> =
            (0..nt).map(|n2| (0..d).map(|i| complex_gaussian(&mut rng, stats.v[n2][i])).collect()).collect();
        let noise: Vec<Complex64> = (0..d).map(|_| complex_gaussian(&mut rng, sigma2)).collect();
        let h_n: Vec<Complex64> = data.iter().map(|&kk| at(n, kk)).collect();
        // Antithetic pair: everything but the channel enters Z linearly, so
        // flipping its sign keeps both moments unbiased.
        for sign in [1.0, -1.0] {
            // First-layer estimates of every h_{m,n'} from noisy pilots.
            let h_hat: Vec<Vec<Complex64>> = (0..nt)
                .map(|n2| {
                    let ls: Vec<Complex64> = (0..p)
                        .map(|q| at(n2, pil[q]) + sign * pilot_noise[n2][q] / pilots[n2][q])
                        .collect();
                    (0..d).map(|i| (0..p).map(|q| w1[(i, q)] * ls[q]).sum()).collect()
                })
                .collect();
            for (i, &kk) in data.iter().enumerate() {
                let mut y = sign * noise[i];
                for n2 in 0..nt {
                    y += (stats.x_hat[n2][i] + sign * sym_err[n2][i]) * at(n2, kk);
                }
                let mut r = y - stats.x_hat[n][i] * h_n[i];
                for n2 in (0..nt).filter(|&n2| n2 != n) {
                    r -= stats.x_hat[n2][i] * h_hat[n2][i];
                }
                z[i] = r;
            }
            accumulate_outer(&mut acc_b, &h_n, &z);
            accumulate_outer(&mut acc_s, &z, &z);
        }
    }
    let mut b = finish(acc_b, d, d, 2 * samples);
    for j in 0..d {
        let s = stats.x_hat[n][j].inv().conj();
        b.column_mut(j).iter_mut().for_each(|e| *e *= s);
    }
    Ok(SubsystemMoments {
        b,
        sigma: finish(acc_s, d, d, 2 * samples),
    })
}

/// Uniform random phase-and-magnitude soft symbols with variances in
/// `[0, v_max)`, bounded away from zero magnitude.
pub fn random_error_stats<R: Rng + ?Sized>(rng: &mut R, n_t: usize, d: usize, v_max: f64) -> DataErrorStats {
    let x = (0..n_t)
        .map(|_| {
            (0..d)
                .map(|_| Complex64::from_polar(0.3 + 0.9 * rng.random::<f64>(), rng.random::<f64>() * std::f64::consts::TAU))
                .collect()
        })
        .collect();
    let v = (0..n_t).map(|_| (0..d).map(|_| rng.random::<f64>() * v_max).collect()).collect();
    DataErrorStats::new(x, v).expect("finite by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{assemble_covariance, PowerDelayProfile};
    use crate::estimation::{data_rows, lmmse_weights, mjcd_covariances, OjcdStatistics};
    use crate::frame::generate_orthogonal_pilots;
    use crate::linalg::rel_frobenius;

    // Light versions of the acceptance checks; the full-size runs live in the
    // acceptance suite.
    #[test]
    fn stacked_moments_agree() {
        let cov = assemble_covariance(&PowerDelayProfile::tdl_c(300e-9), 6, 2, 2, 1, 0.4, 100e3).unwrap();
        let mut rng = rng_from_seed(1);
        let stats = random_error_stats(&mut rng, 2, 4, 0.3);
        let (c_yh, c_yy) = mjcd_covariances(&stats, &cov, 0.2).unwrap();
        let emp = sample_stacked_moments(&stats, &cov, 0.2, 40_000, 2).unwrap();
        assert!(rel_frobenius(&emp.c_yh, &c_yh) < 0.05);
        assert!(rel_frobenius(&emp.c_yy, &c_yy) < 0.05);
    }

    #[test]
    fn subsystem_moments_agree() {
        let cov = assemble_covariance(&PowerDelayProfile::tdl_c(300e-9), 8, 2, 2, 1, 0.3, 100e3).unwrap();
        let sigma2 = 0.3;
        let w1 = data_rows(&lmmse_weights(&cov, sigma2).unwrap(), cov.pattern());
        let pilots = generate_orthogonal_pilots(2, 2, 0).unwrap();
        let mut rng = rng_from_seed(3);
        let stats = random_error_stats(&mut rng, 2, 6, 0.2);
        let st = OjcdStatistics::new(&cov, &w1, &stats, &pilots, sigma2).unwrap();
        let emp = sample_subsystem_moments(0, 0, &cov, &w1, &stats, &pilots, sigma2, 40_000, 4).unwrap();
        assert!(rel_frobenius(&emp.sigma, &st.sigma_n(0)) < 0.05);
        assert!(rel_frobenius(&emp.b, &st.b_n(0)) < 0.1);
    }
}
