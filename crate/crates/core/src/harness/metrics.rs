//! MSE and BER bookkeeping.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{dim, invalid, Result};
use crate::linalg::CVec;

use super::experiment::TrialRecord;

/// `sum_i ||h_hat_i - h_i||^2 / (2 N_test len)` over `N_test` stacked
/// estimates of equal length.
pub fn mse_metric(estimates: &[CVec], truth: &[CVec]) -> Result<f64> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(dim("need one truth vector per estimate"));
    }
    let len = truth[0].len();
    if len == 0 {
        return Err(dim("empty channel vectors"));
    }
    let mut acc = 0.0;
    for (e, t) in estimates.iter().zip(truth) {
        if e.len() != len || t.len() != len {
            return Err(dim(format!("vector of length {} against {len}", e.len())));
        }
        acc += (e - t).norm_squared();
    }
    Ok(acc / (2.0 * estimates.len() as f64 * len as f64))
}

/// True CFRs stacked `(m, n, k)` over `subcarriers` at symbol `t`.
pub fn true_response(channel: &ChannelRealization, t: usize, subcarriers: &[usize]) -> CVec {
    let (n_r, n_t) = (channel.n_r(), channel.n_t());
    CVec::from_iterator(
        n_r * n_t * subcarriers.len(),
        (0..n_r).flat_map(|m| (0..n_t).flat_map(move |n| subcarriers.iter().map(move |&k| channel.h(m, n, k, t)))),
    )
}

/// Exact bit error tally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitCounts {
    pub errors: u64,
    pub bits: u64,
}

impl BitCounts {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }
}

impl AddAssign for BitCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.errors += rhs.errors;
        self.bits += rhs.bits;
    }
}

pub fn count_bit_errors(decided: &[u8], sent: &[u8]) -> Result<BitCounts> {
    if decided.len() != sent.len() {
        return Err(dim(format!("{} decided bits against {} sent", decided.len(), sent.len())));
    }
    if decided.iter().chain(sent).any(|&b| b > 1) {
        return Err(invalid("bits must be 0 or 1"));
    }
    Ok(BitCounts {
        errors: decided.iter().zip(sent).filter(|(a, b)| a != b).count() as u64,
        bits: sent.len() as u64,
    })
}

/// Trial records pooled per (SNR, layer, estimator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub snr_db: f64,
    pub layer: usize,
    pub estimator: String,
    pub trials: usize,
    /// Mean of per-trial MSEs (all trials carry equal channel counts).
    pub mse: f64,
    pub ber: f64,
    pub bit_count: u64,
    pub error_count: u64,
    pub mean_flops: f64,
}

pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, usize, String), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        // Order-preserving key for finite f64 values.
        let bits = r.snr_db.to_bits();
        let key = if r.snr_db.is_sign_negative() { !bits } else { bits | (1 << 63) };
        groups.entry((key, r.layer, r.estimator.clone())).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let n = g.len();
            let bit_count = g.iter().map(|r| r.bit_count).sum();
            let error_count = g.iter().map(|r| r.error_count).sum();
            SummaryRow {
                snr_db: g[0].snr_db,
                layer: g[0].layer,
                estimator: g[0].estimator.clone(),
                trials: n,
                mse: g.iter().map(|r| r.mse).sum::<f64>() / n as f64,
                ber: BitCounts { errors: error_count, bits: bit_count }.ber(),
                bit_count,
                error_count,
                mean_flops: g.iter().map(|r| r.flops as f64).sum::<f64>() / n as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> CVec {
        CVec::from_iterator(x.len(), x.iter().map(|&r| Complex64::new(r, 0.0)))
    }

    #[test]
    fn mse_cases() {
        let h = v(&[1.0, 2.0]);
        assert_eq!(mse_metric(&[h.clone()], &[h.clone()]).unwrap(), 0.0);
        assert_eq!(mse_metric(&[v(&[1.0])], &[v(&[0.0])]).unwrap(), 0.5);
        assert!(mse_metric(&[h.clone()], &[v(&[1.0])]).is_err());
        assert!(mse_metric(&[], &[]).is_err());
    }

    #[test]
    fn mse_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (tests, len) = (7, 24);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<CVec> {
            (0..tests)
                .map(|_| CVec::from_iterator(len, (0..len).map(|_| Complex64::new(rng.random(), rng.random()))))
                .collect()
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let mut acc = 0.0;
        for i in 0..tests {
            for j in 0..len {
                let d = a[i][j] - b[i][j];
                acc += d.re * d.re + d.im * d.im;
            }
        }
        let want = acc / (2.0 * tests as f64 * len as f64);
        assert!((mse_metric(&a, &b).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn bit_counting() {
        let c = count_bit_errors(&[0, 1, 1, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(c, BitCounts { errors: 2, bits: 4 });
        assert_eq!(c.ber(), 0.5);
        assert!(count_bit_errors(&[0], &[0, 1]).is_err());
        assert_eq!(BitCounts::default().ber(), 0.0);
    }

    #[test]
    fn summary_pools_counts() {
        let rec = |snr: f64, layer, errors, seed| TrialRecord {
            snr_db: snr,
            layer,
            estimator: "ojcd".into(),
            mse: 0.1 * layer as f64,
            ber: errors as f64 / 100.0,
            bit_count: 100,
            error_count: errors,
            flops: 10,
            seed,
        };
        let rows = summarize(&[rec(-2.0, 1, 3, 0), rec(4.0, 1, 1, 0), rec(-2.0, 1, 5, 1), rec(-2.0, 2, 0, 0)]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].snr_db, -2.0);
        assert_eq!(rows[0].layer, 1);
        assert_eq!(rows[0].error_count, 8);
        assert_eq!(rows[0].ber, 0.04);
        assert_eq!(rows[2].snr_db, 4.0);
    }
}
