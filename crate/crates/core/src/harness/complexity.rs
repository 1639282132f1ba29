//! Analytical multiply-add counts of the channel estimators.
//!
//! Counting convention: a complex multiply-add is one operation, an
//! `(a x b)(b x c)` product costs `a b c`, factoring an `n x n` system costs
//! `n^3 / 3` and solving it for `m` right-hand sides costs `n^2 m`. Scaling
//! by diagonal matrices costs one operation per entry. The counts mirror the
//! instrumented code paths, so they can be checked against
//! [`crate::flops::measure`].

use crate::estimation::EstimatorId;

/// Multiply-adds one frame of estimator `kind` costs for `n_r x n_t`
/// antennas, `k` subcarriers and `p` pilots (requires `p < k`).
///
/// `Mjcd` counts the dense realization, `Ojcd` the per-subsystem estimator
/// including its interference statistics, `Lmmse` the pilot interpolation
/// with precomputed weights.
pub fn flop_count(kind: EstimatorId, n_r: usize, n_t: usize, k: usize, p: usize) -> u64 {
    let (nr, nt, k, p) = (n_r as u64, n_t as u64, k as u64, p as u64);
    let d = k.saturating_sub(p);
    match kind {
        EstimatorId::Perfect => 0,
        EstimatorId::Ls => nr * nt * p,
        EstimatorId::Lmmse => nr * nt * (p + k * p),
        EstimatorId::Mjcd => {
            let (n_y, n_h) = (nr * d, nr * nt * d);
            n_y * n_h * n_h + n_y * n_y * n_h + nr * nr * nt * d + n_y * n_y * n_y / 3 + n_y * n_y + n_h * n_y
        }
        EstimatorId::Ojcd => {
            let shared = nt * nt * (2 * d * d * p + p * p * d + d * d) + nt * (d * d * p + d * p + d * d + 2 * d);
            let per_tx = (nt - 1) * (d * d + d) + d * d + d * d * d / 3 + nr * (nt * d + 2 * d * d);
            shared + nt * per_tx
        }
    }
}
