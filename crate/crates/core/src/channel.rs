//! Frequency, spatial and temporal correlation models and correlated channel
//! sampling.
//!
//! The full covariance of the channel frequency responses follows the
//! Kronecker model `R_r ⊗ R_t ⊗ R_freq`, ordered rx antenna outermost,
//! subcarrier innermost. Time variation multiplies in a Jakes (Bessel J0)
//! temporal correlation.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{invalid, Error, Result};
use crate::frame::{build_pilot_pattern, complex_gaussian, PilotPattern};
use crate::linalg::{kron3_apply, psd_sqrt, CMat};
use crate::Complex64;

/// Speed of light used for Doppler conversion.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// 3GPP TR 38.901 TDL-C: normalized delay and power in dB.
#[allow(clippy::approx_constant)]
const TDL_C: [(f64, f64); 24] = [
    (0.0, -4.4),
    (0.2099, -1.2),
    (0.2219, -3.5),
    (0.2329, -5.2),
    (0.2176, -2.5),
    (0.6366, 0.0),
    (0.6448, -2.2),
    (0.6560, -3.9),
    (0.6584, -7.4),
    (0.7935, -7.1),
    (0.8213, -10.7),
    (0.9336, -11.1),
    (1.2285, -5.1),
    (1.3083, -6.8),
    (2.1704, -8.7),
    (2.7105, -13.2),
    (4.2589, -13.9),
    (4.6003, -13.9),
    (5.4902, -15.8),
    (5.6077, -17.1),
    (6.3065, -16.0),
    (6.6374, -15.7),
    (7.0427, -21.6),
    (8.6523, -22.8),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay_s: f64,
    pub power: f64,
}

/// Power delay profile with linear powers summing to one and taps sorted by
/// delay.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDelayProfile {
    taps: Vec<Tap>,
}

impl PowerDelayProfile {
    /// Normalizes powers and sorts by delay.
    pub fn new(taps: Vec<Tap>) -> Result<Self> {
        if taps.is_empty() {
            return Err(invalid("power delay profile has no taps"));
        }
        if taps.iter().any(|t| !(t.power > 0.0) || !(t.delay_s >= 0.0) || !t.delay_s.is_finite()) {
            return Err(invalid("tap powers must be positive and delays nonnegative"));
        }
        let total: f64 = taps.iter().map(|t| t.power).sum();
        let mut taps: Vec<Tap> = taps
            .into_iter()
            .map(|t| Tap {
                delay_s: t.delay_s,
                power: t.power / total,
            })
            .collect();
        taps.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));
        Ok(Self { taps })
    }

    /// TDL-C (NLOS) scaled to the given RMS delay spread.
    pub fn tdl_c(delay_spread_s: f64) -> Self {
        let taps = TDL_C
            .iter()
            .map(|&(d, p_db)| Tap {
                delay_s: d * delay_spread_s,
                power: 10f64.powf(p_db / 10.0),
            })
            .collect();
        Self::new(taps).expect("embedded table is valid")
    }

    /// Parses a table with `delay_ns` and `power_db` columns. Lines starting
    /// with `#` are ignored.
    pub fn from_table(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            delay_ns: f64,
            power_db: f64,
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut taps = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| Error::Config(format!("power delay profile: {e}")))?;
            taps.push(Tap {
                delay_s: row.delay_ns * 1e-9,
                power: 10f64.powf(row.power_db / 10.0),
            });
        }
        Self::new(taps)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_table(&text)
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }
}

/// Exponential correlation `r_ij = rho^(j - i)` for `i <= j`, Hermitian below
/// the diagonal.
pub fn exp_corr_matrix(n: usize, rho: f64) -> Result<CMat> {
    if !(0.0..1.0).contains(&rho) {
        return Err(invalid(format!("correlation coefficient {rho} outside [0, 1)")));
    }
    Ok(CMat::from_fn(n, n, |i, j| {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        Complex64::new(rho.powi((hi - lo) as i32), 0.0)
    }))
}

/// `R[k, l] = sum_p power_p * exp(-j 2 pi delta_f (k - l) delay_p)`.
pub fn freq_corr_from_pdp(pdp: &PowerDelayProfile, k: usize, delta_f: f64) -> Result<CMat> {
    if k == 0 || !(delta_f > 0.0) {
        return Err(invalid("need at least one subcarrier and a positive spacing"));
    }
    // Toeplitz: tabulate lags once.
    let lag = |d: i64| -> Complex64 {
        pdp.taps
            .iter()
            .map(|t| Complex64::from_polar(t.power, -2.0 * PI * delta_f * d as f64 * t.delay_s))
            .sum()
    };
    let lags: Vec<Complex64> = (0..k as i64).map(lag).collect();
    Ok(CMat::from_fn(k, k, |a, b| {
        if a >= b {
            lags[a - b]
        } else {
            lags[b - a].conj()
        }
    }))
}

/// Symmetric square roots of the three Kronecker factors.
#[derive(Debug, Clone)]
struct SqrtFactors {
    freq: CMat,
    tx: CMat,
    rx: CMat,
}

/// Second-order channel statistics shared by all estimators.
///
/// `C_hh` (data subcarriers only) and its pilot/data sub-blocks are derived
/// on demand from the Kronecker factors rather than stored densely.
#[derive(Debug)]
pub struct CovarianceModel {
    r_freq: CMat,
    r_t: CMat,
    r_r: CMat,
    pattern: PilotPattern,
    sqrt: OnceLock<SqrtFactors>,
}

impl Clone for CovarianceModel {
    fn clone(&self) -> Self {
        Self {
            r_freq: self.r_freq.clone(),
            r_t: self.r_t.clone(),
            r_r: self.r_r.clone(),
            pattern: self.pattern.clone(),
            sqrt: OnceLock::new(),
        }
    }
}

/// Builds the Kronecker covariance model with `R_t = R_r = exp_corr(rho)`.
pub fn assemble_covariance(
    pdp: &PowerDelayProfile,
    k: usize,
    p: usize,
    n_t: usize,
    n_r: usize,
    rho: f64,
    delta_f: f64,
) -> Result<CovarianceModel> {
    let pattern = build_pilot_pattern(k, p)?;
    let r_freq = freq_corr_from_pdp(pdp, k, delta_f)?;
    CovarianceModel::from_parts(r_freq, exp_corr_matrix(n_t, rho)?, exp_corr_matrix(n_r, rho)?, pattern)
}

impl CovarianceModel {
    /// Model from explicit Kronecker factors.
    pub fn from_parts(r_freq: CMat, r_t: CMat, r_r: CMat, pattern: PilotPattern) -> Result<Self> {
        if r_freq.nrows() != pattern.subcarriers() || !r_freq.is_square() {
            return Err(invalid("frequency correlation does not match the pilot pattern"));
        }
        if !r_t.is_square() || !r_r.is_square() {
            return Err(invalid("spatial correlation matrices must be square"));
        }
        Ok(Self {
            r_freq,
            r_t,
            r_r,
            pattern,
            sqrt: OnceLock::new(),
        })
    }

    pub fn r_freq(&self) -> &CMat {
        &self.r_freq
    }

    pub fn r_t(&self) -> &CMat {
        &self.r_t
    }

    pub fn r_r(&self) -> &CMat {
        &self.r_r
    }

    pub fn pattern(&self) -> &PilotPattern {
        &self.pattern
    }

    pub fn n_t(&self) -> usize {
        self.r_t.nrows()
    }

    pub fn n_r(&self) -> usize {
        self.r_r.nrows()
    }

    pub fn n_data(&self) -> usize {
        self.pattern.n_data()
    }

    /// Dimension of the stacked data-subcarrier channel vector.
    pub fn h_dim(&self) -> usize {
        self.n_r() * self.n_t() * self.n_data()
    }

    /// Entry of `C_hh` for stacked indices `(m, n, k)` (k innermost).
    #[inline]
    pub fn c_hh_entry(&self, i: usize, j: usize) -> Complex64 {
        let d = self.n_data();
        let nt = self.n_t();
        let (mi, ni, ki) = (i / (nt * d), (i / d) % nt, i % d);
        let (mj, nj, kj) = (j / (nt * d), (j / d) % nt, j % d);
        let data = self.pattern.data_indices();
        self.r_r[(mi, mj)] * self.r_t[(ni, nj)] * self.r_freq[(data[ki], data[kj])]
    }

    /// Dense `C_hh = R_r ⊗ R_t ⊗ R_freq[data, data]`.
    pub fn c_hh(&self) -> CMat {
        let n = self.h_dim();
        CMat::from_fn(n, n, |i, j| self.c_hh_entry(i, j))
    }

    /// Dense full covariance over all subcarriers.
    pub fn full_covariance(&self) -> CMat {
        self.r_r.kronecker(&self.r_t).kronecker(&self.r_freq)
    }

    fn freq_block(&self, rows: &[usize], cols: &[usize], scale: Complex64) -> CMat {
        CMat::from_fn(rows.len(), cols.len(), |a, b| self.r_freq[(rows[a], cols[b])] * scale)
    }

    /// `E{h_{m,n1}^d (h_{m,n2}^d)^H}`.
    pub fn r_dd(&self, n1: usize, n2: usize) -> CMat {
        let d = self.pattern.data_indices();
        self.freq_block(d, d, self.r_t[(n1, n2)])
    }

    /// `E{h_{m,n1}^d (h_{m,n2}^p)^H}`.
    pub fn r_dp(&self, n1: usize, n2: usize) -> CMat {
        self.freq_block(self.pattern.data_indices(), self.pattern.pilot_indices(), self.r_t[(n1, n2)])
    }

    /// `E{h_{m,n1}^p (h_{m,n2}^d)^H}`.
    pub fn r_pd(&self, n1: usize, n2: usize) -> CMat {
        self.freq_block(self.pattern.pilot_indices(), self.pattern.data_indices(), self.r_t[(n1, n2)])
    }

    /// `E{h_{m,n1}^p (h_{m,n2}^p)^H}`.
    pub fn r_pp(&self, n1: usize, n2: usize) -> CMat {
        let p = self.pattern.pilot_indices();
        self.freq_block(p, p, self.r_t[(n1, n2)])
    }

    /// `R_{h h^p}`: all subcarriers against pilot subcarriers, `K x P`.
    pub fn r_all_pilot(&self) -> CMat {
        let all: Vec<usize> = (0..self.pattern.subcarriers()).collect();
        self.freq_block(&all, self.pattern.pilot_indices(), Complex64::new(1.0, 0.0))
    }

    /// `R_{h^p h^p}` in the frequency domain, `P x P`.
    pub fn r_pilot_pilot(&self) -> CMat {
        let p = self.pattern.pilot_indices();
        self.freq_block(p, p, Complex64::new(1.0, 0.0))
    }

    fn sqrt_factors(&self) -> Result<&SqrtFactors> {
        if let Some(s) = self.sqrt.get() {
            return Ok(s);
        }
        let factors = SqrtFactors {
            freq: psd_sqrt(&self.r_freq, 1e-9)?,
            tx: psd_sqrt(&self.r_t, 1e-9)?,
            rx: psd_sqrt(&self.r_r, 1e-9)?,
        };
        Ok(self.sqrt.get_or_init(|| factors))
    }

    /// Draws one realization `vec(H) = (L_r ⊗ L_t ⊗ L_f) g` with `g` i.i.d.
    /// `CN(0, 1)`.
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Complex64>> {
        let sq = self.sqrt_factors()?;
        let (nr, nt, k) = (self.n_r(), self.n_t(), self.pattern.subcarriers());
        let g: Vec<Complex64> = (0..nr * nt * k).map(|_| complex_gaussian(rng, 1.0)).collect();
        Ok(kron3_apply(&sq.rx, &sq.tx, &sq.freq, &g))
    }
}

/// Channel frequency responses indexed `(m, n, k, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    n_r: usize,
    n_t: usize,
    k: usize,
    n_sym: usize,
    /// Layout `[t][m][n][k]`.
    cfr: Vec<Complex64>,
    /// Maximum Doppler shift in Hz, zero for block fading.
    pub doppler_hz: f64,
}

impl ChannelRealization {
    pub fn from_fn(
        n_r: usize,
        n_t: usize,
        k: usize,
        n_sym: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut cfr = Vec::with_capacity(n_r * n_t * k * n_sym);
        for t in 0..n_sym {
            for m in 0..n_r {
                for n in 0..n_t {
                    for kk in 0..k {
                        cfr.push(f(m, n, kk, t));
                    }
                }
            }
        }
        Self {
            n_r,
            n_t,
            k,
            n_sym,
            cfr,
            doppler_hz: 0.0,
        }
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn subcarriers(&self) -> usize {
        self.k
    }

    pub fn n_symbols(&self) -> usize {
        self.n_sym
    }

    #[inline]
    pub fn h(&self, m: usize, n: usize, k: usize, t: usize) -> Complex64 {
        self.cfr[((t * self.n_r + m) * self.n_t + n) * self.k + k]
    }

    /// `h_{m,n}` over the given subcarriers at symbol `t`.
    pub fn response(&self, m: usize, n: usize, t: usize, subcarriers: &[usize]) -> Vec<Complex64> {
        subcarriers.iter().map(|&k| self.h(m, n, k, t)).collect()
    }
}

/// One block-fading realization drawn from `cov`, deterministic in `seed`.
pub fn sample_channel(cov: &CovarianceModel, seed: u64) -> Result<ChannelRealization> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfr = cov.draw(&mut rng)?;
    Ok(ChannelRealization {
        n_r: cov.n_r(),
        n_t: cov.n_t(),
        k: cov.pattern().subcarriers(),
        n_sym: 1,
        cfr,
        doppler_hz: 0.0,
    })
}

/// Maximum Doppler shift for a terminal moving at `velocity_kmh`.
pub fn max_doppler_hz(velocity_kmh: f64, carrier_hz: f64) -> f64 {
    velocity_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT
}

/// Jakes temporal correlation `J0(2 pi f_D (t - s) T_sym)` over `n_sym`
/// symbols.
pub fn jakes_corr_matrix(doppler_hz: f64, symbol_duration_s: f64, n_sym: usize) -> CMat {
    CMat::from_fn(n_sym, n_sym, |a, b| {
        let lag = a.abs_diff(b) as f64;
        Complex64::new(libm::j0(2.0 * PI * doppler_hz * lag * symbol_duration_s), 0.0)
    })
}

/// Time-varying realization over `n_sym` OFDM symbols with Jakes temporal
/// correlation and the block-fading spatial/frequency structure of `cov`.
pub fn evolve_time_varying(
    cov: &CovarianceModel,
    velocity_kmh: f64,
    carrier_hz: f64,
    symbol_duration_s: f64,
    n_sym: usize,
    seed: u64,
) -> Result<ChannelRealization> {
    if !(velocity_kmh >= 0.0) {
        return Err(invalid(format!("velocity {velocity_kmh} km/h is negative")));
    }
    if n_sym == 0 {
        return Err(invalid("need at least one OFDM symbol"));
    }
    let f_d = max_doppler_hz(velocity_kmh, carrier_hz);
    let l_time = psd_sqrt(&jakes_corr_matrix(f_d, symbol_duration_s, n_sym), 1e-9)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<Vec<Complex64>> = (0..n_sym).map(|_| cov.draw(&mut rng)).collect::<Result<_>>()?;
    let per = blocks[0].len();
    let mut cfr = vec![Complex64::new(0.0, 0.0); per * n_sym];
    for t in 0..n_sym {
        let out = &mut cfr[t * per..(t + 1) * per];
        for (s, block) in blocks.iter().enumerate() {
            let w = l_time[(t, s)];
            if w == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (o, b) in out.iter_mut().zip(block) {
                *o += w * b;
            }
        }
    }
    Ok(ChannelRealization {
        n_r: cov.n_r(),
        n_t: cov.n_t(),
        k: cov.pattern().subcarriers(),
        n_sym,
        cfr,
        doppler_hz: f_d,
    })
}
