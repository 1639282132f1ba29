//! Per-(tx, rx) data-aided LMMSE with interference cancellation.
//!
//! For tx `n` and rx `m` the contribution of the other antennas is removed
//! using first-layer estimates, `y_hat = y_m - sum_{n' != n} X_hat_{n'} h_hat_{m,n'}`,
//! and `h_LS = X_hat_n^-1 y_hat = h_{m,n} + X_hat_n^-1 Z` is filtered with
//! `W_new(n) = R_dh(n) R_LS(n)^-1`. The residual `Z` collects first-layer
//! estimation error, detection error and noise; its statistics follow from
//! the first-layer interpolator `W1` (data rows of the pilot LMMSE weights):
//!
//! ```text
//! B_n      = sum_{n' != n} (R_dd(n,n') - R_dp(n,n') W1^H) X_hat_{n'}^H X_hat_n^-H
//! Sigma_n  = sum_{n1,n2 != n} (R_dd - V_A + V_B)(n1,n2) ⊙ x_{n1} x_{n2}^H
//!          + sigma2 sum_{n' != n} V_C(n') ⊙ x_{n'} x_{n'}^H + V_D + sigma2 I
//! R_dh(n)  = R_dd(n,n) + B_n
//! R_LS(n)  = R_dd(n,n) + B_n + B_n^H + X_hat_n^-1 Sigma_n X_hat_n^-H
//! ```
//!
//! with `V_A = R_dp W1^H + W1 R_pd`, `V_B = W1 R_pp W1^H`,
//! `V_C(n') = (W1 X_p(n')^-1)(W1 X_p(n')^-1)^H` and `V_D` the diagonal
//! detection-error power `sum_n R_dd(n,n) ⊙ V_n`.
//!
//! Operation counting treats scaling an `a x b` matrix by diagonal matrices
//! on one or both sides as `a * b` multiply-adds.

use crate::channel::CovarianceModel;
use crate::error::{dim, invalid, Result};
use crate::flops;
use crate::frame::ReceivedFrame;
use crate::linalg::{matmul, matmul_adj, matvec, CMat, CVec, HermitianFactor};
use crate::Complex64;

use super::{check_model_dims, DataErrorStats, EstimationResult, EstimatorId};

/// `y_m - sum_{n' != n} X_hat_{n'} h_hat_{m,n'}`, with `h_hat[n']` the
/// estimates for rx `m`.
pub fn ojcd_interference_cancel(
    y_m: &CVec,
    h_hat: &[CVec],
    x_hat: &[Vec<Complex64>],
    n: usize,
) -> Result<CVec> {
    if h_hat.len() != x_hat.len() || n >= x_hat.len() {
        return Err(dim("interference cancellation needs one estimate per tx antenna"));
    }
    let d = y_m.len();
    if h_hat.iter().any(|h| h.len() != d) || x_hat.iter().any(|x| x.len() != d) {
        return Err(dim("estimate length differs from the observation"));
    }
    flops::add(((x_hat.len() - 1) * d) as u64);
    let mut out = y_m.clone();
    for (n2, (h, x)) in h_hat.iter().zip(x_hat).enumerate() {
        if n2 == n {
            continue;
        }
        for k in 0..d {
            out[k] -= x[k] * h[k];
        }
    }
    Ok(out)
}

/// `diag(a) m diag(b)^H`.
fn scale_two_sided(m: &CMat, a: &[Complex64], b: &[Complex64]) -> CMat {
    flops::add((m.nrows() * m.ncols()) as u64);
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| a[i] * m[(i, j)] * b[j].conj())
}

/// Interference statistics shared by all tx antennas of one frame.
pub struct OjcdStatistics<'a> {
    cov: &'a CovarianceModel,
    n_t: usize,
    d: usize,
    sigma2: f64,
    /// Floored soft symbols and their reciprocals.
    x: Vec<Vec<Complex64>>,
    x_inv: Vec<Vec<Complex64>>,
    /// `R_dp(n1,n2) W1^H`, indexed `n1 * n_t + n2`.
    m: Vec<CMat>,
    /// `(R_dd - V_A + V_B)(n1,n2) ⊙ x_{n1} x_{n2}^H`.
    t: Vec<CMat>,
    /// `sigma2 V_C(n') ⊙ x_{n'} x_{n'}^H`.
    c: Vec<CMat>,
    /// Diagonal of `V_D`.
    v_d: Vec<f64>,
    /// Soft symbols floored while building the statistics.
    pub floor_events: usize,
}

impl<'a> OjcdStatistics<'a> {
    /// `w1` is the `(K-P) x P` data-row block of the first-layer LMMSE
    /// interpolator and `pilots[n]` the pilot symbols of tx `n`.
    pub fn new(
        cov: &'a CovarianceModel,
        w1: &CMat,
        stats: &DataErrorStats,
        pilots: &[Vec<Complex64>],
        sigma2: f64,
    ) -> Result<Self> {
        check_model_dims(stats, cov)?;
        let (nt, d, p) = (cov.n_t(), cov.n_data(), cov.pattern().n_pilots());
        if w1.nrows() != d || w1.ncols() != p {
            return Err(dim(format!("interpolator is {}x{}, expected {d}x{p}", w1.nrows(), w1.ncols())));
        }
        if pilots.len() != nt || pilots.iter().any(|x| x.len() != p) {
            return Err(dim("pilot sequences do not match the model"));
        }
        if pilots.iter().flatten().any(|x| x.norm() == 0.0) {
            return Err(invalid("pilot symbol is zero"));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(invalid(format!("noise variance {sigma2} must be finite and nonnegative")));
        }
        let (x, floor_events) = stats.floored_symbols();
        flops::add((nt * d) as u64);
        let x_inv: Vec<Vec<Complex64>> = x.iter().map(|b| b.iter().map(|z| z.inv()).collect()).collect();

        let mut m = Vec::with_capacity(nt * nt);
        let mut v_b = Vec::with_capacity(nt * nt);
        for n1 in 0..nt {
            for n2 in 0..nt {
                m.push(matmul_adj(&cov.r_dp(n1, n2), w1));
                v_b.push(matmul_adj(&matmul(w1, &cov.r_pp(n1, n2)), w1));
            }
        }
        let mut t = Vec::with_capacity(nt * nt);
        for n1 in 0..nt {
            for n2 in 0..nt {
                let core = cov.r_dd(n1, n2) - &m[n1 * nt + n2] - m[n2 * nt + n1].adjoint() + &v_b[n1 * nt + n2];
                t.push(scale_two_sided(&core, &x[n1], &x[n2]));
            }
        }
        let c = (0..nt)
            .map(|n| {
                flops::add((d * p) as u64);
                let mut g = w1.clone();
                for (q, xp) in pilots[n].iter().enumerate() {
                    let s = xp.inv();
                    g.column_mut(q).iter_mut().for_each(|e| *e *= s);
                }
                let vc = matmul_adj(&g, &g).scale(sigma2);
                scale_two_sided(&vc, &x[n], &x[n])
            })
            .collect();
        flops::add((nt * d) as u64);
        let data = cov.pattern().data_indices();
        let v_d = (0..d)
            .map(|k| {
                let r_kk = cov.r_freq()[(data[k], data[k])].re;
                (0..nt).map(|n| cov.r_t()[(n, n)].re * r_kk * stats.v[n][k]).sum()
            })
            .collect();
        Ok(Self {
            cov,
            n_t: nt,
            d,
            sigma2,
            x,
            x_inv,
            m,
            t,
            c,
            v_d,
            floor_events,
        })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    /// Floored soft symbols of tx `n`.
    pub fn symbols(&self, n: usize) -> &[Complex64] {
        &self.x[n]
    }

    /// Cross term `B_n = E{h_{m,n} Z^H} X_hat_n^-H`.
    pub fn b_n(&self, n: usize) -> CMat {
        let (nt, d) = (self.n_t, self.d);
        let mut b = CMat::zeros(d, d);
        for n2 in (0..nt).filter(|&n2| n2 != n) {
            flops::add((d * d + d) as u64);
            let right: Vec<Complex64> = (0..d).map(|k| self.x[n2][k].conj() * self.x_inv[n][k].conj()).collect();
            let base = self.cov.r_dd(n, n2) - &self.m[n * nt + n2];
            for j in 0..d {
                let s = right[j];
                for i in 0..d {
                    b[(i, j)] += base[(i, j)] * s;
                }
            }
        }
        b
    }

    /// Residual covariance `Sigma_n = E{Z Z^H}`.
    pub fn sigma_n(&self, n: usize) -> CMat {
        let (nt, d) = (self.n_t, self.d);
        let mut s = CMat::zeros(d, d);
        for n1 in (0..nt).filter(|&i| i != n) {
            for n2 in (0..nt).filter(|&i| i != n) {
                s += &self.t[n1 * nt + n2];
            }
            s += &self.c[n1];
        }
        for k in 0..d {
            s[(k, k)] += self.v_d[k] + self.sigma2;
        }
        s
    }

    /// `W_new(n)`, kept in factored form.
    pub fn weights(&self, n: usize) -> Result<OjcdWeights> {
        if n >= self.n_t {
            return Err(invalid(format!("tx index {n} out of range")));
        }
        let b = self.b_n(n);
        let sigma = self.sigma_n(n);
        let r_dh = self.cov.r_dd(n, n) + &b;
        let r_ls = &r_dh + b.adjoint() + scale_two_sided(&sigma, &self.x_inv[n], &self.x_inv[n]);
        let factor = HermitianFactor::new(&r_ls, "subsystem LS covariance")?;
        Ok(OjcdWeights { r_dh, r_ls, factor })
    }
}

/// `W_new = R_dh R_LS^-1` for one tx antenna.
pub struct OjcdWeights {
    r_dh: CMat,
    r_ls: CMat,
    factor: HermitianFactor,
}

impl OjcdWeights {
    /// `W_new h`, as `R_dh (R_LS^-1 h)`.
    pub fn apply(&self, h_ls: &CVec) -> CVec {
        matvec(&self.r_dh, &self.factor.solve_vec(h_ls))
    }

    /// The explicit weight matrix.
    pub fn matrix(&self) -> CMat {
        self.factor.solve(&self.r_dh.adjoint()).adjoint()
    }

    pub fn r_dh(&self) -> &CMat {
        &self.r_dh
    }

    pub fn r_ls(&self) -> &CMat {
        &self.r_ls
    }
}

/// Explicit `W_new(n)` for one tx antenna.
pub fn ojcd_weights(
    n: usize,
    cov: &CovarianceModel,
    w1: &CMat,
    stats: &DataErrorStats,
    pilots: &[Vec<Complex64>],
    sigma2: f64,
) -> Result<CMat> {
    Ok(OjcdStatistics::new(cov, w1, stats, pilots, sigma2)?.weights(n)?.matrix())
}

/// Second-layer estimate of every data-subcarrier CFR.
///
/// `h_prev` holds the first-layer estimates at the data subcarriers and `w1`
/// the interpolator that produced them.
pub fn ojcd_lmmse(
    rx: &ReceivedFrame,
    h_prev: &EstimationResult,
    w1: &CMat,
    stats: &DataErrorStats,
    pilots: &[Vec<Complex64>],
    cov: &CovarianceModel,
    sigma2: f64,
) -> Result<EstimationResult> {
    let data = cov.pattern().data_indices();
    if h_prev.subcarriers != data || h_prev.n_r != rx.n_r || h_prev.n_t != rx.n_t {
        return Err(dim("previous estimates must cover exactly the data subcarriers"));
    }
    if rx.n_r != cov.n_r() || rx.data_obs.len() != rx.n_r {
        return Err(dim("received frame does not match the model"));
    }
    let (nr, nt, d) = (rx.n_r, rx.n_t, data.len());
    let (cfr, used) = flops::measure(|| -> Result<Vec<CVec>> {
        let st = OjcdStatistics::new(cov, w1, stats, pilots, sigma2)?;
        let mut cfr = vec![CVec::zeros(d); nr * nt];
        for n in 0..nt {
            let w = st.weights(n)?;
            for m in 0..nr {
                let prev: Vec<CVec> = (0..nt).map(|n2| h_prev.get(m, n2).clone()).collect();
                let y_hat = ojcd_interference_cancel(&rx.data_obs[m], &prev, &stats.x_hat, n)?;
                flops::add(d as u64);
                let h_ls = CVec::from_iterator(d, (0..d).map(|k| y_hat[k] / st.symbols(n)[k]));
                cfr[m * nt + n] = w.apply(&h_ls);
            }
        }
        Ok(cfr)
    });
    Ok(EstimationResult {
        estimator: EstimatorId::Ojcd,
        n_r: nr,
        n_t: nt,
        subcarriers: data.to_vec(),
        cfr: cfr?,
        flops: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{assemble_covariance, PowerDelayProfile};
    use crate::estimation::lmmse::{data_rows, lmmse_weights};
    use crate::frame::{complex_gaussian, generate_orthogonal_pilots};
    use crate::linalg::hermitian_defect;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(k: usize, p: usize, nt: usize, nr: usize, sigma2: f64) -> (CovarianceModel, CMat, Vec<Vec<Complex64>>) {
        let cov = assemble_covariance(&PowerDelayProfile::tdl_c(300e-9), k, p, nt, nr, 0.3, 60e3).unwrap();
        let w = lmmse_weights(&cov, sigma2).unwrap();
        let w1 = data_rows(&w, cov.pattern());
        let pilots = generate_orthogonal_pilots(nt, p, 9).unwrap();
        (cov, w1, pilots)
    }

    fn random_stats(rng: &mut ChaCha8Rng, nt: usize, d: usize) -> DataErrorStats {
        let x = (0..nt)
            .map(|_| (0..d).map(|_| Complex64::from_polar(0.5 + rng.random::<f64>(), rng.random::<f64>() * 6.3)).collect())
            .collect();
        let v = (0..nt).map(|_| (0..d).map(|_| rng.random::<f64>() * 0.3).collect()).collect();
        DataErrorStats::new(x, v).unwrap()
    }

    #[test]
    fn cancellation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = CVec::from_iterator(4, (0..4).map(|_| complex_gaussian(&mut rng, 1.0)));
        let h1 = vec![CVec::from_iterator(4, (0..4).map(|_| complex_gaussian(&mut rng, 1.0)))];
        let x1 = vec![vec![Complex64::new(1.0, 0.0); 4]];
        assert_eq!(ojcd_interference_cancel(&y, &h1, &x1, 0).unwrap(), y);

        let h: Vec<CVec> = (0..3).map(|_| CVec::from_iterator(4, (0..4).map(|_| complex_gaussian(&mut rng, 1.0)))).collect();
        let x: Vec<Vec<Complex64>> = (0..3).map(|_| (0..4).map(|_| complex_gaussian(&mut rng, 1.0)).collect()).collect();
        let out = ojcd_interference_cancel(&y, &h, &x, 1).unwrap();
        for k in 0..4 {
            let mut want = y[k];
            for n2 in [0, 2] {
                want -= x[n2][k] * h[n2][k];
            }
            assert!((out[k] - want).norm() < 1e-14);
        }
        // Exact symbols and channels leave only the wanted stream.
        let w = CVec::from_iterator(4, (0..4).map(|_| complex_gaussian(&mut rng, 0.01)));
        let y_full = CVec::from_iterator(4, (0..4).map(|k| (0..3).map(|n| x[n][k] * h[n][k]).sum::<Complex64>() + w[k]));
        let out = ojcd_interference_cancel(&y_full, &h, &x, 2).unwrap();
        for k in 0..4 {
            assert!((out[k] - (x[2][k] * h[2][k] + w[k])).norm() < 1e-14);
        }
    }

    #[test]
    fn single_antenna_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (cov, w1, pilots) = setup(8, 2, 1, 1, 0.1);
        let stats = random_stats(&mut rng, 1, 6);
        let st = OjcdStatistics::new(&cov, &w1, &stats, &pilots, 0.1).unwrap();
        assert_eq!(st.b_n(0).norm(), 0.0);
        let r = cov.r_dd(0, 0);
        let want = CMat::from_fn(6, 6, |i, j| {
            if i == j {
                r[(i, i)] * stats.v[0][i] + Complex64::new(0.1, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        assert!((st.sigma_n(0) - want).norm() < 1e-12);
    }

    #[test]
    fn noiseless_exact_symbols_give_identity_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (cov, w1, pilots) = setup(8, 2, 1, 1, 0.1);
        let x: Vec<Complex64> = (0..6).map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * 6.0)).collect();
        let stats = DataErrorStats::exact(vec![x]).unwrap();
        let w = ojcd_weights(0, &cov, &w1, &stats, &pilots, 1e-12).unwrap();
        assert!((w - CMat::identity(6, 6)).norm() < 1e-3);
    }

    #[test]
    fn ls_covariance_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (cov, w1, pilots) = setup(16, 4, 3, 2, 0.05);
        let stats = random_stats(&mut rng, 3, 12);
        let st = OjcdStatistics::new(&cov, &w1, &stats, &pilots, 0.05).unwrap();
        for n in 0..3 {
            let w = st.weights(n).unwrap();
            assert!(hermitian_defect(w.r_ls()) < 1e-9);
            // Factored application equals the explicit matrix.
            let h = CVec::from_iterator(12, (0..12).map(|_| complex_gaussian(&mut rng, 1.0)));
            assert!((w.apply(&h) - w.matrix() * &h).norm() < 1e-9 * h.norm());
        }
        assert!(st.weights(3).is_err());
    }

    #[test]
    fn near_zero_symbols_are_floored() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (cov, w1, pilots) = setup(8, 2, 2, 1, 0.1);
        let mut stats = random_stats(&mut rng, 2, 6);
        stats.x_hat[1][3] = Complex64::new(0.0, 0.0);
        let st = OjcdStatistics::new(&cov, &w1, &stats, &pilots, 0.1).unwrap();
        assert_eq!(st.floor_events, 1);
        assert!(st.weights(1).is_ok());
    }
}
