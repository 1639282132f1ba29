//! Comb-pilot frame construction, QAM constellations and the per-subcarrier
//! MIMO view of the received data block.
//!
//! Subcarrier indices are 0-based. Pilot blocks are sent per transmit antenna
//! so each (rx, tx) pair yields its own pilot observation `y = X_p h_p + w`;
//! data blocks from all transmit antennas superpose at each receive antenna.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{dim, invalid, Result};
use crate::linalg::{CMat, CVec};
use crate::Complex64;

/// Supported modulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    #[serde(rename = "qam16")]
    Qam16,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }
}

/// Gray-labelled QAM alphabet with unit average energy.
///
/// `points[i]` carries the label `i`, read MSB first: bit 0 of a symbol is the
/// most significant bit of its index.
#[derive(Debug, Clone)]
pub struct Constellation {
    modulation: Modulation,
    points: Vec<Complex64>,
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        let bps = modulation.bits_per_symbol();
        let points = (0..1usize << bps)
            .map(|label| {
                let bits: Vec<u8> = (0..bps).map(|b| ((label >> (bps - 1 - b)) & 1) as u8).collect();
                match modulation {
                    Modulation::Qpsk => {
                        let s = std::f64::consts::FRAC_1_SQRT_2;
                        Complex64::new(sign(bits[0]) * s, sign(bits[1]) * s)
                    }
                    // (b0, b2) drive the in-phase level, (b1, b3) quadrature.
                    Modulation::Qam16 => {
                        let s = 1.0 / 10f64.sqrt();
                        let level = |sb: u8, mb: u8| sign(sb) * (2.0 - sign(mb));
                        Complex64::new(level(bits[0], bits[2]) * s, level(bits[1], bits[3]) * s)
                    }
                }
            })
            .collect();
        Self { modulation, points }
    }

    pub fn qpsk() -> Self {
        Self::new(Modulation::Qpsk)
    }

    pub fn qam16() -> Self {
        Self::new(Modulation::Qam16)
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.modulation.bits_per_symbol()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Average symbol energy (1 up to rounding).
    pub fn energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.order() as f64
    }

    /// Bit `b` (0 = MSB) of the label of point `index`.
    #[inline]
    pub fn bit(&self, index: usize, b: usize) -> u8 {
        ((index >> (self.bits_per_symbol() - 1 - b)) & 1) as u8
    }

    pub fn label_bits(&self, index: usize) -> Vec<u8> {
        (0..self.bits_per_symbol()).map(|b| self.bit(index, b)).collect()
    }

    /// Maps bits (each 0 or 1) to symbols.
    pub fn modulate(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        let bps = self.bits_per_symbol();
        if !bits.len().is_multiple_of(bps) {
            return Err(invalid(format!(
                "bit length {} is not a multiple of {bps}",
                bits.len()
            )));
        }
        bits.chunks(bps)
            .map(|chunk| {
                let mut label = 0usize;
                for &b in chunk {
                    if b > 1 {
                        return Err(invalid(format!("bit value {b} is not 0 or 1")));
                    }
                    label = (label << 1) | b as usize;
                }
                Ok(self.points[label])
            })
            .collect()
    }

    /// Index of the nearest constellation point.
    pub fn nearest(&self, x: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (x - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Hard-decision demapping of symbols back to bits.
    pub fn demap_hard(&self, symbols: &[Complex64]) -> Vec<u8> {
        symbols
            .iter()
            .flat_map(|&x| self.label_bits(self.nearest(x)))
            .collect()
    }
}

#[inline]
fn sign(bit: u8) -> f64 {
    1.0 - 2.0 * bit as f64
}

/// Evenly spaced comb of pilot subcarriers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotPattern {
    k: usize,
    pilot_indices: Vec<usize>,
    data_indices: Vec<usize>,
}

impl PilotPattern {
    pub fn subcarriers(&self) -> usize {
        self.k
    }

    pub fn n_pilots(&self) -> usize {
        self.pilot_indices.len()
    }

    pub fn n_data(&self) -> usize {
        self.data_indices.len()
    }

    pub fn pilot_indices(&self) -> &[usize] {
        &self.pilot_indices
    }

    pub fn data_indices(&self) -> &[usize] {
        &self.data_indices
    }

    /// Position of subcarrier `k` within the data index list.
    pub fn data_position(&self, k: usize) -> Option<usize> {
        self.data_indices.binary_search(&k).ok()
    }
}

/// Pilots at `0, s, 2s, ...` with `s = floor(K / P)`; every other subcarrier
/// carries data.
pub fn build_pilot_pattern(k: usize, p: usize) -> Result<PilotPattern> {
    if p == 0 {
        return Err(invalid("pilot count must be positive"));
    }
    if p > k {
        return Err(invalid(format!("pilot count {p} exceeds subcarrier count {k}")));
    }
    let spacing = k / p;
    let pilot_indices: Vec<usize> = (0..p).map(|i| i * spacing).collect();
    let data_indices = (0..k)
        .filter(|i| i % spacing != 0 || i / spacing >= p)
        .collect();
    Ok(PilotPattern {
        k,
        pilot_indices,
        data_indices,
    })
}

/// Rows of the `P`-point DFT matrix, `x_n[p] = exp(-j 2 pi n p / P)`.
///
/// With `seed == 0` the rows are returned as is. Any other seed applies a
/// common random QPSK phase per pilot position, which keeps every entry on the
/// unit circle and leaves all inner products unchanged.
pub fn generate_orthogonal_pilots(n_t: usize, p: usize, seed: u64) -> Result<Vec<Vec<Complex64>>> {
    if n_t > p {
        return Err(invalid(format!(
            "{n_t} orthogonal pilot sequences need at least {n_t} pilots, got {p}"
        )));
    }
    let scramble: Vec<Complex64> = if seed == 0 {
        vec![Complex64::new(1.0, 0.0); p]
    } else {
        let mut rng = crate::harness::rng_from_seed(seed);
        (0..p)
            .map(|_| Complex64::from_polar(1.0, PI / 2.0 * rng.random_range(0..4) as f64))
            .collect()
    };
    Ok((0..n_t)
        .map(|n| {
            (0..p)
                .map(|q| {
                    let phase = -2.0 * PI * ((n * q) % p) as f64 / p as f64;
                    Complex64::from_polar(1.0, phase) * scramble[q]
                })
                .collect()
        })
        .collect())
}

/// One transmitted OFDM frame: a pilot block and a data block per antenna.
#[derive(Debug, Clone)]
pub struct Frame {
    pub pattern: PilotPattern,
    /// `pilots[n]` holds the diagonal of `X_n^p`.
    pub pilots: Vec<Vec<Complex64>>,
    /// `data[n]` holds the diagonal of `X_n^d`.
    pub data: Vec<Vec<Complex64>>,
    /// Source bits per antenna, `bits_per_symbol * (K - P)` each.
    pub payload_bits: Vec<Vec<u8>>,
}

impl Frame {
    pub fn n_t(&self) -> usize {
        self.data.len()
    }

    /// Builds a frame from explicit per-antenna payload bits.
    pub fn from_bits(
        pattern: &PilotPattern,
        pilots: Vec<Vec<Complex64>>,
        payload_bits: Vec<Vec<u8>>,
        constellation: &Constellation,
    ) -> Result<Self> {
        if pilots.len() != payload_bits.len() {
            return Err(dim(format!(
                "{} pilot sequences for {} payloads",
                pilots.len(),
                payload_bits.len()
            )));
        }
        let want = constellation.bits_per_symbol() * pattern.n_data();
        let mut data = Vec::with_capacity(payload_bits.len());
        for (bits, pilot) in payload_bits.iter().zip(&pilots) {
            if bits.len() != want {
                return Err(dim(format!("payload has {} bits, frame carries {want}", bits.len())));
            }
            if pilot.len() != pattern.n_pilots() {
                return Err(dim(format!(
                    "pilot sequence has {} entries, pattern has {}",
                    pilot.len(),
                    pattern.n_pilots()
                )));
            }
            data.push(constellation.modulate(bits)?);
        }
        Ok(Self {
            pattern: pattern.clone(),
            pilots,
            data,
            payload_bits,
        })
    }

    /// Frame with uniformly random payload bits.
    pub fn random<R: Rng + ?Sized>(
        pattern: &PilotPattern,
        pilots: Vec<Vec<Complex64>>,
        constellation: &Constellation,
        rng: &mut R,
    ) -> Result<Self> {
        let want = constellation.bits_per_symbol() * pattern.n_data();
        let bits = (0..pilots.len())
            .map(|_| (0..want).map(|_| rng.random_range(0..2u8)).collect())
            .collect();
        Self::from_bits(pattern, pilots, bits, constellation)
    }
}

/// Received pilot and data observations for one block-fading frame.
#[derive(Debug, Clone)]
pub struct ReceivedFrame {
    pub n_r: usize,
    pub n_t: usize,
    /// `pilot_obs[m * n_t + n]` is `y_{m,n}^p`, length `P`.
    pub pilot_obs: Vec<CVec>,
    /// `data_obs[m]` is `y_m^d`, length `K - P`.
    pub data_obs: Vec<CVec>,
}

impl ReceivedFrame {
    /// `y_m^d` stacked rx-antenna-major into one `N_R (K - P)` vector.
    pub fn stacked_data(&self) -> CVec {
        let d = self.data_obs.first().map_or(0, |v| v.len());
        CVec::from_iterator(self.n_r * d, self.data_obs.iter().flat_map(|v| v.iter().cloned()))
    }
}

/// Circularly symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Passes `frame` through `channel` (symbol `t` of a time-varying
/// realization) with AWGN of variance `sigma2`.
pub fn transmit<R: Rng + ?Sized>(
    frame: &Frame,
    channel: &ChannelRealization,
    t: usize,
    sigma2: f64,
    rng: &mut R,
) -> Result<ReceivedFrame> {
    let (n_r, n_t) = (channel.n_r(), channel.n_t());
    if frame.n_t() != n_t || channel.subcarriers() != frame.pattern.subcarriers() {
        return Err(dim("frame and channel disagree on antennas or subcarriers"));
    }
    let pattern = &frame.pattern;
    let mut pilot_obs = Vec::with_capacity(n_r * n_t);
    for m in 0..n_r {
        for n in 0..n_t {
            let y = CVec::from_iterator(
                pattern.n_pilots(),
                pattern.pilot_indices().iter().enumerate().map(|(q, &k)| {
                    frame.pilots[n][q] * channel.h(m, n, k, t) + complex_gaussian(rng, sigma2)
                }),
            );
            pilot_obs.push(y);
        }
    }
    let data_obs = (0..n_r)
        .map(|m| {
            CVec::from_iterator(
                pattern.n_data(),
                pattern.data_indices().iter().enumerate().map(|(i, &k)| {
                    let s: Complex64 = (0..n_t).map(|n| frame.data[n][i] * channel.h(m, n, k, t)).sum();
                    s + complex_gaussian(rng, sigma2)
                }),
            )
        })
        .collect();
    Ok(ReceivedFrame {
        n_r,
        n_t,
        pilot_obs,
        data_obs,
    })
}

/// Equivalent `N_R x N_T` MIMO system at data subcarrier `k` (absolute
/// index), for symbol 0 of the channel.
pub fn per_subcarrier_system(
    frame: &Frame,
    channel: &ChannelRealization,
    k: usize,
) -> Result<(CMat, CVec)> {
    let pos = frame
        .pattern
        .data_position(k)
        .ok_or_else(|| invalid(format!("subcarrier {k} is not a data subcarrier")))?;
    let h = CMat::from_fn(channel.n_r(), channel.n_t(), |m, n| channel.h(m, n, k, 0));
    let x = CVec::from_iterator(frame.n_t(), frame.data.iter().map(|d| d[pos]));
    Ok((h, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pilot_patterns() {
        let p = build_pilot_pattern(128, 8).unwrap();
        assert_eq!(p.pilot_indices(), (0..8).map(|i| i * 16).collect::<Vec<_>>().as_slice());
        assert_eq!(p.n_data(), 120);
        let p = build_pilot_pattern(128, 16).unwrap();
        assert_eq!(p.pilot_indices(), (0..16).map(|i| i * 8).collect::<Vec<_>>().as_slice());
        let p = build_pilot_pattern(12, 5).unwrap();
        assert_eq!(p.pilot_indices(), &[0, 2, 4, 6, 8]);
        assert_eq!(p.data_indices(), &[1, 3, 5, 7, 9, 10, 11]);
        assert!(build_pilot_pattern(4, 5).is_err());
        assert!(build_pilot_pattern(4, 0).is_err());
    }

    #[test]
    fn dft_pilots() {
        let p = generate_orthogonal_pilots(2, 2, 0).unwrap();
        assert!((p[0][0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((p[0][1] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((p[1][0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((p[1][1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);

        let p = generate_orthogonal_pilots(4, 8, 0).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let g: Complex64 = p[a].iter().zip(&p[b]).map(|(x, y)| x.conj() * y).sum();
                let want = if a == b { 8.0 } else { 0.0 };
                assert!((g - want).norm() < 1e-12, "gram[{a}][{b}] = {g}");
            }
        }
        assert!(generate_orthogonal_pilots(5, 4, 0).is_err());
    }

    #[test]
    fn qpsk_gray_map() {
        let c = Constellation::qpsk();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = c.modulate(&[0, 0, 1, 1]).unwrap();
        assert!((x[0] - Complex64::new(s, s)).norm() < 1e-15);
        assert!((x[1] - Complex64::new(-s, -s)).norm() < 1e-15);
        assert!(c.modulate(&[0, 1, 1]).is_err());
    }

    #[test]
    fn constellation_energy_and_gray() {
        for c in [Constellation::qpsk(), Constellation::qam16()] {
            let mean: Complex64 = c.points().iter().sum::<Complex64>() / c.order() as f64;
            assert!(mean.norm() < 1e-12);
            assert!((c.energy() - 1.0).abs() < 1e-12);
            // nearest neighbours differ in exactly one bit
            let dmin = 2.0 / if c.order() == 4 { 2f64.sqrt() } else { 10f64.sqrt() };
            for i in 0..c.order() {
                for j in 0..c.order() {
                    if ((c.points()[i] - c.points()[j]).norm() - dmin).abs() < 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1, "{i} vs {j}");
                    }
                }
            }
        }
        // enumerate all 16 labels once
        let c = Constellation::qam16();
        let bits: Vec<u8> = (0..16).flat_map(|l| c.label_bits(l)).collect();
        let x = c.modulate(&bits).unwrap();
        let e = x.iter().map(|z| z.norm_sqr()).sum::<f64>() / 16.0;
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn per_subcarrier_view() {
        let pattern = build_pilot_pattern(8, 2).unwrap();
        let c = Constellation::qpsk();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pilots = generate_orthogonal_pilots(2, 2, 0).unwrap();
        let frame = Frame::random(&pattern, pilots, &c, &mut rng).unwrap();
        let flat = ChannelRealization::from_fn(2, 2, 8, 1, |_, _, _, _| Complex64::new(1.0, 0.0));
        let (h, _) = per_subcarrier_system(&frame, &flat, 1).unwrap();
        assert!(h.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        assert!(per_subcarrier_system(&frame, &flat, 0).is_err());

        // single transmit antenna: H is the channel column
        let pilots = generate_orthogonal_pilots(1, 2, 0).unwrap();
        let frame1 = Frame::random(&pattern, pilots, &c, &mut rng).unwrap();
        let ch = ChannelRealization::from_fn(3, 1, 8, 1, |m, _, k, _| Complex64::new(m as f64, k as f64));
        let (h, x) = per_subcarrier_system(&frame1, &ch, 5).unwrap();
        assert_eq!(h.shape(), (3, 1));
        assert_eq!(x.len(), 1);
        for m in 0..3 {
            assert_eq!(h[(m, 0)], Complex64::new(m as f64, 5.0));
        }
    }

    #[test]
    fn stacked_system_matches_received_blocks() {
        let pattern = build_pilot_pattern(16, 4).unwrap();
        let c = Constellation::qam16();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pilots = generate_orthogonal_pilots(3, 4, 0).unwrap();
        let frame = Frame::random(&pattern, pilots, &c, &mut rng).unwrap();
        let ch = ChannelRealization::from_fn(2, 3, 16, 1, |_, _, _, _| complex_gaussian(&mut rng, 1.0));
        let rx = transmit(&frame, &ch, 0, 0.0, &mut rng).unwrap();
        for (pos, &k) in pattern.data_indices().iter().enumerate() {
            let (h, x) = per_subcarrier_system(&frame, &ch, k).unwrap();
            let y = &h * &x;
            for m in 0..2 {
                assert!((y[m] - rx.data_obs[m][pos]).norm() < 1e-12);
            }
        }
    }
}
