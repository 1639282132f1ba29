//! Channel estimators.
//!
//! - [`ls_pilot`] and [`lmmse_weights`]: pilot-only estimation for the first
//!   receiver layer.
//! - [`mjcd_lmmse`]: data-aided Wiener-Hopf estimate over the stacked
//!   space-frequency system.
//! - [`ojcd_lmmse`]: per-(tx, rx) data-aided estimate with interference
//!   cancellation.
//!
//! Stacking convention shared by all code paths: the channel vector is
//! ordered `(m, n, k)` with the rx antenna outermost and the data subcarrier
//! innermost; the received data vector is ordered `(m, k)`.

mod lmmse;
mod mjcd;
mod ojcd;

use std::sync::atomic::{AtomicU64, Ordering};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Result};
use crate::linalg::CVec;
use crate::Complex64;

pub use lmmse::{data_rows, lmmse_estimate, lmmse_weights, ls_pilot, traditional_lmmse};
pub use mjcd::{
    detection_error_term, detection_error_term_dense, mjcd_covariances, mjcd_lmmse,
    mjcd_lmmse_dense,
};
pub use ojcd::{
    ojcd_interference_cancel, ojcd_lmmse, ojcd_weights, OjcdStatistics, OjcdWeights,
};

/// Magnitude below which a soft symbol is floored before inversion.
pub const SYMBOL_FLOOR: f64 = 1e-6;

static FLOOR_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of soft symbols floored to [`SYMBOL_FLOOR`] since process start.
pub fn symbol_floor_events() -> u64 {
    FLOOR_EVENTS.load(Ordering::Relaxed)
}

/// Which estimator produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorId {
    Ls,
    Lmmse,
    Mjcd,
    Ojcd,
    /// True channel injected (genie reference).
    Perfect,
}

impl EstimatorId {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::Ls => "ls",
            EstimatorId::Lmmse => "lmmse",
            EstimatorId::Mjcd => "mjcd",
            EstimatorId::Ojcd => "ojcd",
            EstimatorId::Perfect => "perfect",
        }
    }
}

/// Estimated CFRs for every (rx, tx) pair over one set of subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub estimator: EstimatorId,
    pub n_r: usize,
    pub n_t: usize,
    /// Absolute subcarrier indices covered by each vector in `cfr`.
    pub subcarriers: Vec<usize>,
    /// `cfr[m * n_t + n]`, one entry per subcarrier in `subcarriers`.
    pub cfr: Vec<CVec>,
    /// Multiply-adds spent by the estimator.
    pub flops: u64,
}

impl EstimationResult {
    pub fn get(&self, m: usize, n: usize) -> &CVec {
        &self.cfr[m * self.n_t + n]
    }

    /// Stacked `(m, n, k)` vector.
    pub fn stacked(&self) -> CVec {
        let len = self.cfr.len() * self.subcarriers.len();
        CVec::from_iterator(len, self.cfr.iter().flat_map(|v| v.iter().cloned()))
    }

    /// Splits an `(m, n, k)` stacked vector.
    pub fn from_stacked(
        estimator: EstimatorId,
        n_r: usize,
        n_t: usize,
        subcarriers: Vec<usize>,
        stacked: &CVec,
        flops: u64,
    ) -> Result<Self> {
        let d = subcarriers.len();
        if stacked.len() != n_r * n_t * d {
            return Err(dim(format!(
                "stacked estimate has {} entries, expected {}",
                stacked.len(),
                n_r * n_t * d
            )));
        }
        let cfr = (0..n_r * n_t)
            .map(|b| CVec::from_column_slice(&stacked.as_slice()[b * d..(b + 1) * d]))
            .collect();
        Ok(Self {
            estimator,
            n_r,
            n_t,
            subcarriers,
            cfr,
            flops,
        })
    }

    /// Restriction to a subset of the covered subcarriers.
    pub fn restrict(&self, subcarriers: &[usize]) -> Result<Self> {
        let pos: Vec<usize> = subcarriers
            .iter()
            .map(|k| {
                self.subcarriers
                    .iter()
                    .position(|s| s == k)
                    .ok_or_else(|| invalid(format!("subcarrier {k} not covered by the estimate")))
            })
            .collect::<Result<_>>()?;
        let cfr = self
            .cfr
            .iter()
            .map(|v| CVec::from_iterator(pos.len(), pos.iter().map(|&i| v[i])))
            .collect();
        Ok(Self {
            estimator: self.estimator,
            n_r: self.n_r,
            n_t: self.n_t,
            subcarriers: subcarriers.to_vec(),
            cfr,
            flops: self.flops,
        })
    }
}

/// Soft decisions on the data symbols together with their error variances.
#[derive(Debug, Clone, PartialEq)]
pub struct DataErrorStats {
    /// `x_hat[n][k]`: posterior mean of the symbol on tx `n`, data subcarrier `k`.
    pub x_hat: Vec<Vec<Complex64>>,
    /// `v[n][k]`: matching posterior error variance.
    pub v: Vec<Vec<f64>>,
}

impl DataErrorStats {
    pub fn new(x_hat: Vec<Vec<Complex64>>, v: Vec<Vec<f64>>) -> Result<Self> {
        if x_hat.len() != v.len() || x_hat.is_empty() {
            return Err(dim("symbol means and variances disagree on antenna count"));
        }
        let d = x_hat[0].len();
        for (x, vv) in x_hat.iter().zip(&v) {
            if x.len() != d || vv.len() != d {
                return Err(dim("ragged soft-symbol blocks"));
            }
            if vv.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
                return Err(invalid("error variances must be finite and nonnegative"));
            }
            if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(invalid("soft symbols must be finite"));
            }
        }
        Ok(Self { x_hat, v })
    }

    /// Perfect knowledge of the transmitted symbols.
    pub fn exact(symbols: Vec<Vec<Complex64>>) -> Result<Self> {
        let v = symbols.iter().map(|s| vec![0.0; s.len()]).collect();
        Self::new(symbols, v)
    }

    pub fn n_t(&self) -> usize {
        self.x_hat.len()
    }

    pub fn n_data(&self) -> usize {
        self.x_hat[0].len()
    }

    /// Symbols with magnitudes below [`SYMBOL_FLOOR`] raised to it, phase
    /// kept. Returns the floored blocks and the number of entries touched.
    pub fn floored_symbols(&self) -> (Vec<Vec<Complex64>>, usize) {
        let mut events = 0;
        let out = self
            .x_hat
            .iter()
            .map(|block| {
                block
                    .iter()
                    .map(|&x| {
                        let r = x.norm();
                        if r < SYMBOL_FLOOR {
                            events += 1;
                            let phase = if r > 0.0 { x.arg() } else { 0.0 };
                            Complex64::from_polar(SYMBOL_FLOOR, phase)
                        } else {
                            x
                        }
                    })
                    .collect()
            })
            .collect();
        if events > 0 {
            FLOOR_EVENTS.fetch_add(events as u64, Ordering::Relaxed);
            debug!("floored {events} near-zero soft symbols");
        }
        (out, events)
    }
}

fn check_model_dims(stats: &DataErrorStats, cov: &crate::channel::CovarianceModel) -> Result<()> {
    if stats.n_t() != cov.n_t() || stats.n_data() != cov.n_data() {
        return Err(dim(format!(
            "soft symbols are {}x{}, model expects {}x{}",
            stats.n_t(),
            stats.n_data(),
            cov.n_t(),
            cov.n_data()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacking_roundtrip() {
        let v = CVec::from_iterator(12, (0..12).map(|i| Complex64::new(i as f64, 0.0)));
        let r = EstimationResult::from_stacked(EstimatorId::Mjcd, 2, 2, vec![1, 3, 5], &v, 0).unwrap();
        assert_eq!(r.get(1, 0)[2].re, 8.0);
        assert_eq!(r.stacked(), v);
        let sub = r.restrict(&[5, 1]).unwrap();
        assert_eq!(sub.get(0, 1)[0].re, 5.0);
        assert_eq!(sub.get(0, 1)[1].re, 3.0);
        assert!(r.restrict(&[2]).is_err());
        assert!(EstimationResult::from_stacked(EstimatorId::Mjcd, 2, 2, vec![1], &v, 0).is_err());
    }

    #[test]
    fn error_stats_validation_and_floor() {
        assert!(DataErrorStats::new(vec![vec![Complex64::new(1.0, 0.0)]], vec![vec![-0.1]]).is_err());
        assert!(DataErrorStats::new(vec![vec![Complex64::new(1.0, 0.0)]], vec![vec![0.1, 0.2]]).is_err());
        let s = DataErrorStats::new(
            vec![vec![Complex64::new(0.0, 1e-9), Complex64::new(0.0, 0.0), Complex64::new(0.5, 0.0)]],
            vec![vec![0.1, 0.1, 0.1]],
        )
        .unwrap();
        let (f, events) = s.floored_symbols();
        assert_eq!(events, 2);
        assert!((f[0][0] - Complex64::new(0.0, SYMBOL_FLOOR)).norm() < 1e-18);
        assert!((f[0][1].norm() - SYMBOL_FLOOR).abs() < 1e-18);
        assert_eq!(f[0][2], Complex64::new(0.5, 0.0));
    }
}
