//! Rate-1/2 convolutional coding with zero-tail termination, extrinsic LLR
//! demapping and soft-input Viterbi decoding.
//!
//! LLRs follow `log P(b = 0) / P(b = 1)`: positive values favour a zero bit.

use serde::{Deserialize, Serialize};

use crate::detection::SoftSymbols;
use crate::error::{dim, invalid, Result};
use crate::frame::Constellation;
use crate::Complex64;

/// Extra E_b/N_0 given to uncoded runs when comparing against rate-1/2 coded
/// runs.
pub const UNCODED_EBN0_OFFSET_DB: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeConfig {
    pub constraint_length: usize,
    /// Generator polynomials, MSB tapping the newest input bit.
    pub generators: [u32; 2],
    /// Information bits per codeword.
    pub block_length: usize,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self {
            constraint_length: 7,
            generators: [0o171, 0o133],
            block_length: 1984,
        }
    }
}

impl CodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.constraint_length) {
            return Err(invalid(format!("constraint length {} unsupported", self.constraint_length)));
        }
        let limit = 1u32 << self.constraint_length;
        if self.generators.iter().any(|&g| g == 0 || g >= limit) {
            return Err(invalid("generator polynomial does not fit the constraint length"));
        }
        if self.block_length == 0 {
            return Err(invalid("block length must be positive"));
        }
        Ok(())
    }

    /// Coded bits per terminated codeword.
    pub fn codeword_length(&self) -> usize {
        2 * (self.block_length + self.constraint_length - 1)
    }

    fn memory(&self) -> usize {
        self.constraint_length - 1
    }

    /// Output pair for shift-register contents `reg` (newest bit as MSB).
    #[inline]
    fn outputs(&self, reg: u32) -> [u8; 2] {
        [
            ((reg & self.generators[0]).count_ones() & 1) as u8,
            ((reg & self.generators[1]).count_ones() & 1) as u8,
        ]
    }
}

/// Zero-tail terminated rate-1/2 encoding.
pub fn conv_encode(bits: &[u8], cfg: &CodeConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    if bits.len() != cfg.block_length {
        return Err(dim(format!("{} input bits, block length is {}", bits.len(), cfg.block_length)));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(invalid("input bits must be 0 or 1"));
    }
    let mem = cfg.memory();
    let mut state = 0u32;
    let mut out = Vec::with_capacity(cfg.codeword_length());
    for &b in bits.iter().chain(std::iter::repeat_n(&0u8, mem)) {
        let reg = ((b as u32) << mem) | state;
        out.extend_from_slice(&cfg.outputs(reg));
        state = reg >> 1;
    }
    Ok(out)
}

/// Maximum-likelihood decoding over the terminated trellis with branch
/// metric `sum (1 - 2c) LLR / 2`.
pub fn viterbi_decode(llrs: &[f64], cfg: &CodeConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    if llrs.len() != cfg.codeword_length() {
        return Err(dim(format!("{} LLRs, codeword has {}", llrs.len(), cfg.codeword_length())));
    }
    let mem = cfg.memory();
    let n_states = 1usize << mem;
    let steps = cfg.block_length + mem;
    let mut metric = vec![f64::NEG_INFINITY; n_states];
    metric[0] = 0.0;
    // decisions[t][next] = previous state.
    let mut decisions = vec![0u32; steps * n_states];
    let mut next = vec![f64::NEG_INFINITY; n_states];
    for t in 0..steps {
        let (l0, l1) = (llrs[2 * t], llrs[2 * t + 1]);
        let inputs: &[u32] = if t < cfg.block_length { &[0, 1] } else { &[0] };
        next.fill(f64::NEG_INFINITY);
        for (s, &m) in metric.iter().enumerate() {
            if m == f64::NEG_INFINITY {
                continue;
            }
            for &b in inputs {
                let reg = (b << mem) | s as u32;
                let [c0, c1] = cfg.outputs(reg);
                let bm = (1.0 - 2.0 * c0 as f64) * l0 / 2.0 + (1.0 - 2.0 * c1 as f64) * l1 / 2.0;
                let ns = (reg >> 1) as usize;
                let cand = m + bm;
                if cand > next[ns] {
                    next[ns] = cand;
                    decisions[t * n_states + ns] = s as u32;
                }
            }
        }
        std::mem::swap(&mut metric, &mut next);
    }
    let mut state = 0usize;
    let mut bits = vec![0u8; steps];
    for t in (0..steps).rev() {
        // The input bit that led into `state` is its MSB.
        bits[t] = ((state >> (mem - 1)) & 1) as u8;
        state = decisions[t * n_states + state] as usize;
    }
    bits.truncate(cfg.block_length);
    Ok(bits)
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let top = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + v.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// Bit LLRs for one symbol observed as `CN(x_e, v_e)`.
pub fn symbol_llrs(x_e: Complex64, v_e: f64, c: &Constellation) -> Result<Vec<f64>> {
    if !(v_e > 0.0) {
        return Err(invalid(format!("extrinsic variance {v_e} must be positive")));
    }
    let metrics: Vec<f64> = c.points().iter().map(|s| -(x_e - s).norm_sqr() / v_e).collect();
    Ok((0..c.bits_per_symbol())
        .map(|b| {
            let zero = log_sum_exp((0..c.order()).filter(|&i| c.bit(i, b) == 0).map(|i| metrics[i]));
            let one = log_sum_exp((0..c.order()).filter(|&i| c.bit(i, b) == 1).map(|i| metrics[i]));
            zero - one
        })
        .collect())
}

/// Extrinsic LLRs per tx antenna, in the payload bit order of the frame.
pub fn demap_llr(soft: &SoftSymbols, c: &Constellation) -> Result<Vec<Vec<f64>>> {
    soft.x_e
        .iter()
        .zip(&soft.v_e)
        .map(|(xs, vs)| {
            let mut out = Vec::with_capacity(xs.len() * c.bits_per_symbol());
            for (&x, &v) in xs.iter().zip(vs) {
                out.extend(symbol_llrs(x, v, c)?);
            }
            Ok(out)
        })
        .collect()
}

/// Per-receive-antenna SNR for a given E_b/N_0.
///
/// E_b/N_0 is referenced to coded bits, so a coded and an uncoded run at the
/// same value share a symbol SNR. Uncoded runs are shifted up by
/// [`UNCODED_EBN0_OFFSET_DB`] so that energy per information bit matches a
/// rate-1/2 code.
pub fn snr_db_for_ebn0(ebn0_db: f64, n_t: usize, bits_per_symbol: usize, coded: bool) -> f64 {
    let offset = if coded { 0.0 } else { UNCODED_EBN0_OFFSET_DB };
    ebn0_db + offset + 10.0 * ((n_t * bits_per_symbol) as f64).log10()
}
