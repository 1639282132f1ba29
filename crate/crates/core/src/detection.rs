//! Expectation-propagation MIMO detection with a factorized Gaussian prior
//! approximation, plus exhaustive MAP and zero-forcing references.
//!
//! Each EP round computes the Gaussian posterior
//! `Sigma = (H^H H / sigma2 + diag(lambda))^-1`, `mu = Sigma (H^H y / sigma2 + gamma)`,
//! removes the prior site to get the cavity (extrinsic) moments, projects the
//! cavity onto the discrete constellation by moment matching and refines the
//! sites `(gamma, lambda)` with damping.

use nalgebra::Cholesky;

use crate::error::{dim, invalid, Error, Result};
use crate::estimation::DataErrorStats;
use crate::frame::Constellation;
use crate::linalg::{CMat, CVec};
use crate::Complex64;

/// Floor applied to variances before taking reciprocals.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Largest candidate set [`map_oracle`] will enumerate.
pub const MAP_ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpConfig {
    pub iterations: usize,
    pub damping: f64,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            damping: 0.2,
        }
    }
}

impl EpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("EP needs at least one iteration"));
        }
        if !(self.damping >= 0.0 && self.damping <= 1.0) {
            return Err(invalid(format!("damping {} outside [0, 1]", self.damping)));
        }
        Ok(())
    }
}

/// Site parameters of the Gaussian prior approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpState {
    pub gamma: Vec<Complex64>,
    pub lambda: Vec<f64>,
    pub iteration: usize,
}

impl EpState {
    /// `gamma = 0`, `lambda = 1 / E_s`.
    pub fn new(n_t: usize, symbol_energy: f64) -> Self {
        Self {
            gamma: vec![Complex64::new(0.0, 0.0); n_t],
            lambda: vec![1.0 / symbol_energy; n_t],
            iteration: 0,
        }
    }
}

/// Posterior and extrinsic moments for one received vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EpMoments {
    pub x_p: Vec<Complex64>,
    pub v_p: Vec<f64>,
    pub x_e: Vec<Complex64>,
    pub v_e: Vec<f64>,
}

/// Mean and variance of `p(s) ∝ exp(-|x_e - s|^2 / v_e)` over the
/// constellation.
pub fn moment_match(x_e: Complex64, v_e: f64, c: &Constellation) -> Result<(Complex64, f64)> {
    if !(v_e > 0.0) {
        return Err(invalid(format!("extrinsic variance {v_e} must be positive")));
    }
    let pts = c.points();
    let logw: Vec<f64> = pts.iter().map(|s| -(x_e - s).norm_sqr() / v_e).collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mean: Complex64 = pts.iter().zip(&w).map(|(s, wi)| s * *wi).sum::<Complex64>() / total;
    let var: f64 = pts.iter().zip(&w).map(|(s, wi)| (s - mean).norm_sqr() * wi).sum::<f64>() / total;
    Ok((mean, var))
}

/// One EP detection problem `y = H x + w`.
pub struct EpDetector<'a> {
    h: &'a CMat,
    y: &'a CVec,
    sigma2: f64,
    constellation: &'a Constellation,
    damping: f64,
    gram: CMat,
    matched: CVec,
    state: EpState,
}

impl<'a> EpDetector<'a> {
    pub fn new(h: &'a CMat, y: &'a CVec, sigma2: f64, damping: f64, constellation: &'a Constellation) -> Result<Self> {
        if h.nrows() != y.len() {
            return Err(dim(format!("channel has {} rows, observation {}", h.nrows(), y.len())));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(invalid(format!("noise variance {sigma2} must be positive")));
        }
        if !(0.0..=1.0).contains(&damping) {
            return Err(invalid(format!("damping {damping} outside [0, 1]")));
        }
        let gram = h.adjoint() * h / Complex64::new(sigma2, 0.0);
        let matched = h.adjoint() * y / Complex64::new(sigma2, 0.0);
        Ok(Self {
            h,
            y,
            sigma2,
            constellation,
            damping,
            gram,
            matched,
            state: EpState::new(h.ncols(), constellation.energy()),
        })
    }

    pub fn state(&self) -> &EpState {
        &self.state
    }

    /// Runs one round and returns the moments it computed.
    pub fn step(&mut self) -> Result<EpMoments> {
        let n_t = self.h.ncols();
        let mut a = self.gram.clone();
        for i in 0..n_t {
            a[(i, i)] += self.state.lambda[i];
        }
        let sigma = Cholesky::new(a)
            .ok_or(Error::Singular {
                context: "EP posterior precision",
                dim: n_t,
            })?
            .inverse();
        let rhs = &self.matched + CVec::from_column_slice(&self.state.gamma);
        let mu = &sigma * rhs;

        let mut out = EpMoments {
            x_p: Vec::with_capacity(n_t),
            v_p: Vec::with_capacity(n_t),
            x_e: Vec::with_capacity(n_t),
            v_e: Vec::with_capacity(n_t),
        };
        let mut gamma = self.state.gamma.clone();
        let mut lambda = self.state.lambda.clone();
        for i in 0..n_t {
            let s_ii = sigma[(i, i)].re.max(VARIANCE_FLOOR);
            let (lam, gam) = (self.state.lambda[i], self.state.gamma[i]);
            let v_e = (s_ii / (1.0 - s_ii * lam)).max(VARIANCE_FLOOR);
            let v_e = if v_e.is_finite() { v_e } else { VARIANCE_FLOOR };
            let x_e = (mu[i] / s_ii - gam) * v_e;
            let (x_p, v_p) = moment_match(x_e, v_e, self.constellation)?;
            let v_p = v_p.max(VARIANCE_FLOOR);

            let mut lam_new = 1.0 / v_p - 1.0 / v_e;
            let mut gam_new = x_p / v_p - x_e / v_e;
            if !(lam_new > 0.0) || !lam_new.is_finite() || !gam_new.re.is_finite() || !gam_new.im.is_finite() {
                lam_new = lam;
                gam_new = gam;
            }
            let b = self.damping;
            lambda[i] = b * lam_new + (1.0 - b) * lam;
            gamma[i] = gam_new * b + gam * (1.0 - b);

            out.x_p.push(x_p);
            out.v_p.push(v_p);
            out.x_e.push(x_e);
            out.v_e.push(v_e);
        }
        self.state.gamma = gamma;
        self.state.lambda = lambda;
        self.state.iteration += 1;
        Ok(out)
    }

    /// Runs `iterations` rounds and returns the moments of the last one.
    pub fn run(&mut self, iterations: usize) -> Result<EpMoments> {
        if iterations == 0 {
            return Err(invalid("EP needs at least one iteration"));
        }
        let mut last = self.step()?;
        for _ in 1..iterations {
            last = self.step()?;
        }
        Ok(last)
    }

    /// Noise-normalized residual `||y - H x||^2 / sigma2` of a candidate, for diagnostics.
    pub fn residual(&self, x: &CVec) -> f64 {
        (self.y - self.h * x).norm_squared() / self.sigma2
    }
}

/// EP detection of one received vector.
pub fn ep_detect(
    h: &CMat,
    y: &CVec,
    sigma2: f64,
    cfg: &EpConfig,
    constellation: &Constellation,
) -> Result<EpMoments> {
    cfg.validate()?;
    EpDetector::new(h, y, sigma2, cfg.damping, constellation)?.run(cfg.iterations)
}

/// Soft symbols for a whole frame, indexed `[n][k]` over data subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSymbols {
    pub x_p: Vec<Vec<Complex64>>,
    pub v_p: Vec<Vec<f64>>,
    pub x_e: Vec<Vec<Complex64>>,
    pub v_e: Vec<Vec<f64>>,
}

impl SoftSymbols {
    /// Transposes per-subcarrier moments into per-antenna blocks.
    pub fn from_subcarriers(per_k: &[EpMoments]) -> Result<Self> {
        let n_t = per_k.first().map(|m| m.x_p.len()).ok_or_else(|| invalid("no subcarriers"))?;
        let pick_c = |f: fn(&EpMoments) -> &Vec<Complex64>| -> Vec<Vec<Complex64>> {
            (0..n_t).map(|n| per_k.iter().map(|m| f(m)[n]).collect()).collect()
        };
        let pick_r = |f: fn(&EpMoments) -> &Vec<f64>| -> Vec<Vec<f64>> {
            (0..n_t).map(|n| per_k.iter().map(|m| f(m)[n]).collect()).collect()
        };
        Ok(Self {
            x_p: pick_c(|m| &m.x_p),
            v_p: pick_r(|m| &m.v_p),
            x_e: pick_c(|m| &m.x_e),
            v_e: pick_r(|m| &m.v_e),
        })
    }

    pub fn n_t(&self) -> usize {
        self.x_p.len()
    }

    /// Posterior means and variances as detection-error statistics.
    pub fn error_stats(&self) -> Result<DataErrorStats> {
        DataErrorStats::new(self.x_p.clone(), self.v_p.clone())
    }

    /// Hard decisions on the posterior means, as bits per antenna.
    pub fn hard_bits(&self, c: &Constellation) -> Vec<Vec<u8>> {
        self.x_p.iter().map(|block| c.demap_hard(block)).collect()
    }
}

/// Exhaustive maximum-likelihood (uniform prior MAP) detection. Returns the
/// constellation index per antenna; ties resolve to the lexicographically
/// smallest index vector, first antenna most significant.
pub fn map_oracle(h: &CMat, y: &CVec, sigma2: f64, c: &Constellation) -> Result<Vec<usize>> {
    if h.nrows() != y.len() {
        return Err(dim("channel rows differ from observation length"));
    }
    if !(sigma2 > 0.0) {
        return Err(invalid("noise variance must be positive"));
    }
    let n_t = h.ncols();
    let q = c.order();
    let candidates = (q as u128).checked_pow(n_t as u32).unwrap_or(u128::MAX);
    if candidates > MAP_ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            candidates,
            limit: MAP_ENUMERATION_LIMIT,
        });
    }
    let pts = c.points();
    let mut idx = vec![0usize; n_t];
    let mut best = idx.clone();
    let mut best_metric = f64::INFINITY;
    for _ in 0..candidates {
        let x = CVec::from_iterator(n_t, idx.iter().map(|&i| pts[i]));
        let metric = (y - h * x).norm_squared() / sigma2;
        if metric < best_metric {
            best_metric = metric;
            best.copy_from_slice(&idx);
        }
        // Odometer increment, last antenna fastest.
        for a in (0..n_t).rev() {
            idx[a] += 1;
            if idx[a] < q {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(best)
}

/// Zero-forcing detection followed by per-antenna slicing.
pub fn zf_detect(h: &CMat, y: &CVec, c: &Constellation) -> Result<Vec<usize>> {
    let gram = h.adjoint() * h;
    let chol = Cholesky::new(gram).ok_or(Error::Singular {
        context: "zero-forcing Gram matrix",
        dim: h.ncols(),
    })?;
    let x = chol.solve(&(h.adjoint() * y));
    Ok(x.iter().map(|&v| c.nearest(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn moment_match_cases() {
        let q = Constellation::qpsk();
        let p = q.points()[2];
        let (m, v) = moment_match(p, 1e-6, &q).unwrap();
        assert!((m - p).norm() < 1e-9 && v < 1e-9);
        for &ve in &[0.01, 0.5, 10.0] {
            let (m, _) = moment_match(c(0.0, 0.0), ve, &q).unwrap();
            assert!(m.norm() < 1e-12);
        }
        // Direct four-term sum.
        let (x, ve) = (c(0.3, 0.0), 0.5);
        let w: Vec<f64> = q.points().iter().map(|s| (-(x - s).norm_sqr() / ve).exp()).collect();
        let z: f64 = w.iter().sum();
        let mean: Complex64 = q.points().iter().zip(&w).map(|(s, wi)| s * *wi / z).sum();
        let var: f64 = q.points().iter().zip(&w).map(|(s, wi)| (s - mean).norm_sqr() * wi / z).sum();
        let (m, v) = moment_match(x, ve, &q).unwrap();
        assert!((m - mean).norm() < 1e-14 && (v - var).abs() < 1e-14);
        assert!(moment_match(x, 0.0, &q).is_err());
        assert!(moment_match(x, -1.0, &q).is_err());
    }

    #[test]
    fn noiseless_identity_channel() {
        let q = Constellation::qpsk();
        let h = CMat::identity(2, 2);
        let x = CVec::from_vec(vec![q.points()[1], q.points()[3]]);
        let out = ep_detect(&h, &x, 1e-9, &EpConfig::default(), &q).unwrap();
        for i in 0..2 {
            assert!((out.x_p[i] - x[i]).norm() < 1e-6);
            assert!(out.v_p[i] <= 1e-6);
        }
    }

    #[test]
    fn damping_extremes() {
        let q = Constellation::qpsk();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = CMat::from_fn(3, 2, |_, _| complex_gaussian(&mut rng, 1.0));
        let y = CVec::from_iterator(3, (0..3).map(|_| complex_gaussian(&mut rng, 1.0)));

        let mut frozen = EpDetector::new(&h, &y, 0.3, 0.0, &q).unwrap();
        let init = frozen.state().clone();
        for _ in 0..4 {
            frozen.step().unwrap();
        }
        assert_eq!(frozen.state().gamma, init.gamma);
        assert_eq!(frozen.state().lambda, init.lambda);

        let mut full = EpDetector::new(&h, &y, 0.3, 1.0, &q).unwrap();
        let m = full.step().unwrap();
        for i in 0..2 {
            let lam = 1.0 / m.v_p[i] - 1.0 / m.v_e[i];
            if lam > 0.0 {
                assert!((full.state().lambda[i] - lam).abs() < 1e-12 * lam.max(1.0));
                let gam = m.x_p[i] / m.v_p[i] - m.x_e[i] / m.v_e[i];
                assert!((full.state().gamma[i] - gam).norm() < 1e-9 * gam.norm().max(1.0));
            }
        }
    }

    #[test]
    fn lambda_stays_positive() {
        let q = Constellation::qam16();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let h = CMat::from_fn(4, 4, |_, _| complex_gaussian(&mut rng, 1.0));
            let y = CVec::from_iterator(4, (0..4).map(|_| complex_gaussian(&mut rng, 2.0)));
            let mut det = EpDetector::new(&h, &y, 0.05, 0.2, &q).unwrap();
            for _ in 0..8 {
                det.step().unwrap();
                assert!(det.state().lambda.iter().all(|&l| l > 0.0));
            }
        }
    }

    #[test]
    fn map_oracle_cases() {
        let q = Constellation::qpsk();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = CMat::from_fn(2, 2, |_, _| complex_gaussian(&mut rng, 1.0));
        let idx = [2usize, 1];
        let x = CVec::from_iterator(2, idx.iter().map(|&i| q.points()[i]));
        assert_eq!(map_oracle(&h, &(&h * &x), 0.1, &q).unwrap(), idx);

        // Scalar channel: nearest neighbour of the equalized observation.
        let g = CMat::from_element(1, 1, c(0.7, -0.4));
        for _ in 0..20 {
            let y = CVec::from_element(1, complex_gaussian(&mut rng, 1.0));
            let want = q.nearest(y[0] / g[(0, 0)]);
            assert_eq!(map_oracle(&g, &y, 0.1, &q).unwrap(), vec![want]);
        }

        // Independent enumeration in reverse order, preferring smaller
        // index vectors on exact ties.
        for _ in 0..20 {
            let h = CMat::from_fn(2, 2, |_, _| complex_gaussian(&mut rng, 1.0));
            let y = CVec::from_iterator(2, (0..2).map(|_| complex_gaussian(&mut rng, 1.0)));
            let mut best = (f64::INFINITY, vec![0, 0]);
            for a in (0..4).rev() {
                for b in (0..4).rev() {
                    let x = CVec::from_vec(vec![q.points()[a], q.points()[b]]);
                    let m = (&y - &h * x).norm_squared();
                    if m <= best.0 {
                        best = (m, vec![a, b]);
                    }
                }
            }
            assert_eq!(map_oracle(&h, &y, 0.5, &q).unwrap(), best.1);
        }

        // Exact tie: zero channel makes every candidate equal.
        let z = CMat::zeros(2, 2);
        assert_eq!(map_oracle(&z, &CVec::zeros(2), 1.0, &q).unwrap(), vec![0, 0]);

        let big = CMat::zeros(6, 6);
        assert!(matches!(
            map_oracle(&big, &CVec::zeros(6), 1.0, &Constellation::qam16()),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn soft_symbol_transpose() {
        let m = |a: f64| EpMoments {
            x_p: vec![c(a, 0.0), c(a + 1.0, 0.0)],
            v_p: vec![a, a + 1.0],
            x_e: vec![c(-a, 0.0), c(-a - 1.0, 0.0)],
            v_e: vec![2.0 * a, 2.0 * a + 1.0],
        };
        let s = SoftSymbols::from_subcarriers(&[m(0.0), m(10.0), m(20.0)]).unwrap();
        assert_eq!(s.n_t(), 2);
        assert_eq!(s.x_p[1][2], c(21.0, 0.0));
        assert_eq!(s.v_e[0][1], 20.0);
        assert!(SoftSymbols::from_subcarriers(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EpConfig { iterations: 0, damping: 0.2 }.validate().is_err());
        assert!(EpConfig { iterations: 5, damping: 1.5 }.validate().is_err());
        assert!(EpConfig::default().validate().is_ok());
    }
}
