//! Layered joint channel estimation and detection.
//!
//! Layer 1 estimates the channel from pilots (LS + LMMSE interpolation) and
//! runs EP on every data subcarrier. Each later layer feeds the previous
//! layer's posterior symbol means and variances into a data-aided estimator
//! and detects again.
//!
//! For time-varying channels the frame spans several OFDM symbols, only some
//! of which carry pilots. Estimation runs at those symbols and a natural
//! cubic spline carries the estimates to the remaining ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, CovarianceModel};
use crate::detection::{ep_detect, EpConfig, SoftSymbols};
use crate::error::{dim, invalid, Result};
use crate::estimation::{
    data_rows, lmmse_weights, mjcd_lmmse, ojcd_lmmse, traditional_lmmse, EstimationResult, EstimatorId,
};
use crate::frame::{Constellation, ReceivedFrame};
use crate::harness::metrics::{count_bit_errors, mse_metric, true_response, BitCounts};
use crate::linalg::{CMat, CVec};
use crate::Complex64;

/// Data-aided estimator used from layer 2 on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Mjcd,
    Ojcd,
}

impl EstimatorKind {
    pub fn id(self) -> EstimatorId {
        match self {
            EstimatorKind::Mjcd => EstimatorId::Mjcd,
            EstimatorKind::Ojcd => EstimatorId::Ojcd,
        }
    }
}

/// Interpolation across OFDM symbols in time-varying frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    None,
    CubicSpline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JcdConfig {
    pub layers: usize,
    pub estimator: EstimatorKind,
    pub ep: EpConfig,
    pub interpolation: Interpolation,
}

impl Default for JcdConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            estimator: EstimatorKind::Ojcd,
            ep: EpConfig::default(),
            interpolation: Interpolation::None,
        }
    }
}

impl JcdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(invalid("at least one layer is required"));
        }
        self.ep.validate()
    }
}

/// Known transmitted quantities, used only for metrics.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub channel: &'a ChannelRealization,
    /// OFDM symbol of `channel` the frame went through.
    pub symbol: usize,
    /// Payload bits per tx antenna.
    pub bits: &'a [Vec<u8>],
}

/// Output of one receiver layer.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub layer: usize,
    /// Estimates at the data subcarriers used by the detector.
    pub estimate: EstimationResult,
    pub soft: SoftSymbols,
    pub mse: Option<f64>,
    pub bit_counts: Option<BitCounts>,
}

/// Per-subcarrier EP detection with the given channel estimates (which must
/// cover exactly the data subcarriers of the frame).
pub fn detect_layer(
    estimate: &EstimationResult,
    rx: &ReceivedFrame,
    sigma2: f64,
    ep: &EpConfig,
    constellation: &Constellation,
) -> Result<SoftSymbols> {
    let d = estimate.subcarriers.len();
    if rx.data_obs.iter().any(|y| y.len() != d) || estimate.n_r != rx.n_r || estimate.n_t != rx.n_t {
        return Err(dim("estimate does not match the received data block"));
    }
    let per_k = (0..d)
        .into_par_iter()
        .map(|k| {
            let h = CMat::from_fn(rx.n_r, rx.n_t, |m, n| estimate.get(m, n)[k]);
            let y = CVec::from_iterator(rx.n_r, rx.data_obs.iter().map(|v| v[k]));
            ep_detect(&h, &y, sigma2, ep, constellation)
        })
        .collect::<Result<Vec<_>>>()?;
    SoftSymbols::from_subcarriers(&per_k)
}

fn layer_metrics(
    estimate: &EstimationResult,
    soft: &SoftSymbols,
    constellation: &Constellation,
    truth: Option<&Truth>,
) -> Result<(Option<f64>, Option<BitCounts>)> {
    let Some(t) = truth else { return Ok((None, None)) };
    let h = true_response(t.channel, t.symbol, &estimate.subcarriers);
    let mse = mse_metric(&[estimate.stacked()], &[h])?;
    let hard = soft.hard_bits(constellation);
    let mut counts = BitCounts::default();
    for (a, b) in hard.iter().zip(t.bits) {
        counts += count_bit_errors(a, b)?;
    }
    Ok((Some(mse), Some(counts)))
}

/// First-layer estimates at all subcarriers from pilots.
pub fn first_layer_estimate(
    rx: &ReceivedFrame,
    pilots: &[Vec<Complex64>],
    w: &CMat,
) -> Result<EstimationResult> {
    traditional_lmmse(rx, pilots, w)
}

/// Block-fading receiver over `cfg.layers` layers.
pub fn run_jcd(
    rx: &ReceivedFrame,
    pilots: &[Vec<Complex64>],
    cov: &CovarianceModel,
    sigma2: f64,
    cfg: &JcdConfig,
    constellation: &Constellation,
    truth: Option<&Truth>,
) -> Result<Vec<LayerTrace>> {
    cfg.validate()?;
    let data = cov.pattern().data_indices();
    let w = lmmse_weights(cov, sigma2)?;
    let w1 = data_rows(&w, cov.pattern());
    let first = first_layer_estimate(rx, pilots, &w)?.restrict(data)?;
    let soft = detect_layer(&first, rx, sigma2, &cfg.ep, constellation)?;
    let (mse, bit_counts) = layer_metrics(&first, &soft, constellation, truth)?;
    let mut trace = vec![LayerTrace {
        layer: 1,
        estimate: first.clone(),
        soft,
        mse,
        bit_counts,
    }];
    for layer in 2..=cfg.layers {
        let stats = trace.last().expect("nonempty").soft.error_stats()?;
        let estimate = match cfg.estimator {
            EstimatorKind::Mjcd => mjcd_lmmse(&rx.stacked_data(), &stats, cov, sigma2)?,
            EstimatorKind::Ojcd => ojcd_lmmse(rx, &first, &w1, &stats, pilots, cov, sigma2)?,
        };
        let soft = detect_layer(&estimate, rx, sigma2, &cfg.ep, constellation)?;
        let (mse, bit_counts) = layer_metrics(&estimate, &soft, constellation, truth)?;
        trace.push(LayerTrace {
            layer,
            estimate,
            soft,
            mse,
            bit_counts,
        });
    }
    Ok(trace)
}

/// Detection with the true channel injected in place of an estimate.
pub fn run_perfect_csi(
    rx: &ReceivedFrame,
    cov: &CovarianceModel,
    sigma2: f64,
    ep: &EpConfig,
    constellation: &Constellation,
    truth: &Truth,
) -> Result<LayerTrace> {
    let data = cov.pattern().data_indices();
    let cfr = (0..rx.n_r * rx.n_t)
        .map(|b| CVec::from_vec(truth.channel.response(b / rx.n_t, b % rx.n_t, truth.symbol, data)))
        .collect();
    let estimate = EstimationResult {
        estimator: EstimatorId::Perfect,
        n_r: rx.n_r,
        n_t: rx.n_t,
        subcarriers: data.to_vec(),
        cfr,
        flops: 0,
    };
    let soft = detect_layer(&estimate, rx, sigma2, ep, constellation)?;
    let (mse, bit_counts) = layer_metrics(&estimate, &soft, constellation, Some(truth))?;
    Ok(LayerTrace {
        layer: 1,
        estimate,
        soft,
        mse,
        bit_counts,
    })
}

/// `n_p` pilot-bearing symbol indices spread evenly over `n_sym` symbols,
/// always including the first and last.
pub fn pilot_symbol_positions(n_sym: usize, n_p: usize) -> Result<Vec<usize>> {
    if n_p < 2 || n_p > n_sym {
        return Err(invalid(format!("need 2 <= pilot symbols <= {n_sym}, got {n_p}")));
    }
    Ok((0..n_p)
        .map(|i| ((i * (n_sym - 1)) as f64 / (n_p - 1) as f64).round() as usize)
        .collect())
}

/// Natural cubic spline through `(x_i, y_i)` with strictly increasing `x`.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(invalid("a spline needs at least two knots with matching values"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("spline knots must be strictly increasing"));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations
            // h_{i-1} m_{i-1} + 2 (h_{i-1} + h_i) m_i + h_i m_{i+1} = rhs_i.
            let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
            }
            for i in 1..k {
                let f = h[i] / diag[i - 1];
                diag[i] -= f * h[i];
                rhs[i] -= f * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - t) / h, (t - x0) / h);
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Interpolates per-symbol vectors known at `positions` to all `n_sym`
/// symbols, real and imaginary parts separately.
pub fn time_interpolate(positions: &[usize], values: &[CVec], n_sym: usize) -> Result<Vec<CVec>> {
    if positions.len() != values.len() {
        return Err(dim("one value vector per position is required"));
    }
    if positions.len() < 2 {
        return Err(invalid("time interpolation needs at least two pilot symbols"));
    }
    if positions.iter().any(|&p| p >= n_sym) {
        return Err(invalid("pilot symbol position beyond the frame"));
    }
    let len = values[0].len();
    if values.iter().any(|v| v.len() != len) {
        return Err(dim("ragged value vectors"));
    }
    let x: Vec<f64> = positions.iter().map(|&p| p as f64).collect();
    let mut out = vec![CVec::zeros(len); n_sym];
    for j in 0..len {
        let re: Vec<f64> = values.iter().map(|v| v[j].re).collect();
        let im: Vec<f64> = values.iter().map(|v| v[j].im).collect();
        let (sr, si) = (CubicSpline::new(&x, &re)?, CubicSpline::new(&x, &im)?);
        for (t, o) in out.iter_mut().enumerate() {
            o[j] = Complex64::new(sr.eval(t as f64), si.eval(t as f64));
        }
    }
    // Pilot symbols keep their own estimates exactly.
    for (&p, v) in positions.iter().zip(values) {
        out[p] = v.clone();
    }
    Ok(out)
}

fn interpolate_results(positions: &[usize], at_pilots: &[EstimationResult], n_sym: usize) -> Result<Vec<EstimationResult>> {
    let template = &at_pilots[0];
    if positions.len() == n_sym {
        return Ok(at_pilots.to_vec());
    }
    let stacked: Vec<CVec> = at_pilots.iter().map(|r| r.stacked()).collect();
    time_interpolate(positions, &stacked, n_sym)?
        .iter()
        .map(|s| {
            EstimationResult::from_stacked(
                template.estimator,
                template.n_r,
                template.n_t,
                template.subcarriers.clone(),
                s,
                0,
            )
        })
        .collect()
}

/// Receiver output for a multi-symbol frame, per layer and symbol.
#[derive(Debug, Clone)]
pub struct TimeVaryingTrace {
    /// `layers[l][t]`.
    pub layers: Vec<Vec<LayerTrace>>,
    /// Estimator multiply-adds per layer.
    pub flops: Vec<u64>,
}

/// Multi-symbol receiver. `rx[t]` is the observation of symbol `t`; pilot
/// observations are only read at `positions`.
#[allow(clippy::too_many_arguments)]
pub fn run_time_varying(
    rx: &[ReceivedFrame],
    positions: &[usize],
    pilots: &[Vec<Complex64>],
    cov: &CovarianceModel,
    sigma2: f64,
    cfg: &JcdConfig,
    constellation: &Constellation,
    truth: Option<&[Truth]>,
) -> Result<TimeVaryingTrace> {
    cfg.validate()?;
    let n_sym = rx.len();
    if positions.len() != n_sym && cfg.interpolation != Interpolation::CubicSpline {
        return Err(invalid("symbols without pilots need cubic spline interpolation"));
    }
    if let Some(t) = truth {
        if t.len() != n_sym {
            return Err(dim("one truth record per symbol is required"));
        }
    }
    let data = cov.pattern().data_indices();
    let w = lmmse_weights(cov, sigma2)?;
    let w1 = data_rows(&w, cov.pattern());
    let first: Vec<EstimationResult> = positions
        .iter()
        .map(|&p| first_layer_estimate(&rx[p], pilots, &w)?.restrict(data))
        .collect::<Result<_>>()?;
    let mut flops = vec![first.iter().map(|r| r.flops).sum()];
    let mut estimates = interpolate_results(positions, &first, n_sym)?;
    let mut layers = Vec::with_capacity(cfg.layers);
    for layer in 1..=cfg.layers {
        if layer > 1 {
            let prev: &Vec<LayerTrace> = layers.last().expect("nonempty");
            let refined: Vec<EstimationResult> = positions
                .iter()
                .zip(&first)
                .map(|(&p, h1)| {
                    let stats = prev[p].soft.error_stats()?;
                    match cfg.estimator {
                        EstimatorKind::Mjcd => mjcd_lmmse(&rx[p].stacked_data(), &stats, cov, sigma2),
                        EstimatorKind::Ojcd => ojcd_lmmse(&rx[p], h1, &w1, &stats, pilots, cov, sigma2),
                    }
                })
                .collect::<Result<_>>()?;
            flops.push(refined.iter().map(|r| r.flops).sum());
            estimates = interpolate_results(positions, &refined, n_sym)?;
        }
        let per_symbol = estimates
            .iter()
            .zip(rx)
            .enumerate()
            .map(|(t, (est, r))| {
                let soft = detect_layer(est, r, sigma2, &cfg.ep, constellation)?;
                let (mse, bit_counts) = layer_metrics(est, &soft, constellation, truth.map(|tr| &tr[t]))?;
                Ok(LayerTrace {
                    layer,
                    estimate: est.clone(),
                    soft,
                    mse,
                    bit_counts,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        layers.push(per_symbol);
    }
    Ok(TimeVaryingTrace { layers, flops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positions() {
        assert_eq!(pilot_symbol_positions(14, 14).unwrap(), (0..14).collect::<Vec<_>>());
        assert_eq!(pilot_symbol_positions(14, 4).unwrap(), vec![0, 4, 9, 13]);
        assert_eq!(pilot_symbol_positions(14, 2).unwrap(), vec![0, 13]);
        assert!(pilot_symbol_positions(14, 1).is_err());
        assert!(pilot_symbol_positions(14, 15).is_err());
    }

    #[test]
    fn spline_reproduces_lines_and_knots() {
        let x = [0.0, 1.0, 3.0, 4.5, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let s = CubicSpline::new(&x, &y).unwrap();
        for i in 0..70 {
            let t = i as f64 * 0.1;
            assert!((s.eval(t) - (2.0 * t - 1.0)).abs() < 1e-12);
        }
        let y2 = [1.0, -2.0, 0.5, 3.0, 0.0];
        let s2 = CubicSpline::new(&x, &y2).unwrap();
        for (xi, yi) in x.iter().zip(&y2) {
            assert!((s2.eval(*xi) - yi).abs() < 1e-12);
        }
        assert!(CubicSpline::new(&[0.0], &[1.0]).is_err());
        assert!(CubicSpline::new(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    /// Reference: assemble the full natural-spline linear system for the
    /// second derivatives (including the two boundary rows) and solve it
    /// densely.
    #[test]
    fn spline_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = [0.0, 2.0, 5.0, 9.0, 13.0];
        let y: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let n = 5;
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut b = nalgebra::DVector::<f64>::zeros(n);
        a[(0, 0)] = 1.0;
        a[(n - 1, n - 1)] = 1.0;
        for i in 1..n - 1 {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            a[(i, i - 1)] = h0 / 6.0;
            a[(i, i)] = (h0 + h1) / 3.0;
            a[(i, i + 1)] = h1 / 6.0;
            b[i] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        }
        let m = a.lu().solve(&b).unwrap();
        let s = CubicSpline::new(&x, &y).unwrap();
        for step in 0..=130 {
            let t = step as f64 * 0.1;
            let i = (0..n - 1).find(|&i| t <= x[i + 1]).unwrap_or(n - 2);
            let h = x[i + 1] - x[i];
            let (p, q) = ((x[i + 1] - t) / h, (t - x[i]) / h);
            let want = p * y[i] + q * y[i + 1] + ((p.powi(3) - p) * m[i] + (q.powi(3) - q) * m[i + 1]) * h * h / 6.0;
            assert!((s.eval(t) - want).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn time_interpolation() {
        let vals: Vec<CVec> = (0..14).map(|t| CVec::from_element(3, Complex64::new(t as f64, -(t as f64)))).collect();
        let all: Vec<usize> = (0..14).collect();
        assert_eq!(time_interpolate(&all, &vals, 14).unwrap(), vals);

        let pos = pilot_symbol_positions(14, 4).unwrap();
        let sub: Vec<CVec> = pos.iter().map(|&p| vals[p].clone()).collect();
        let out = time_interpolate(&pos, &sub, 14).unwrap();
        for t in 0..14 {
            assert!((&out[t] - &vals[t]).norm() < 1e-12);
        }
        assert!(time_interpolate(&pos[..1], &sub[..1], 14).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(JcdConfig::default().validate().is_ok());
        assert!(JcdConfig { layers: 0, ..JcdConfig::default() }.validate().is_err());
        let mut c = JcdConfig::default();
        c.ep.iterations = 0;
        assert!(c.validate().is_err());
    }
}
