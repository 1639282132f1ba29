//! Monte Carlo trials.
//!
//! Trial `r` at every grid point uses seed `base + r`; the channel, the
//! payload/noise stream and the code interleaver draw from decorrelated
//! children of that seed. Trials run on the rayon pool and are merged in
//! (grid point, trial) order, so the output does not depend on scheduling.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{evolve_time_varying, sample_channel, ChannelRealization, CovarianceModel};
use crate::coding::{conv_encode, demap_llr, viterbi_decode};
use crate::error::{Error, Result};
use crate::frame::{generate_orthogonal_pilots, transmit, Constellation, Frame, ReceivedFrame};
use crate::jcd::{pilot_symbol_positions, run_jcd, run_perfect_csi, run_time_varying, LayerTrace, Truth};
use crate::Complex64;

use super::config::{noise_variance, ExperimentSpec};
use super::metrics::{count_bit_errors, BitCounts};
use super::{rng_from_seed, sub_seed};

const CHANNEL_TAG: u64 = 1;
const STREAM_TAG: u64 = 2;
const INTERLEAVER_TAG: u64 = 3;

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Per-receive-antenna SNR actually simulated.
    pub snr_db: f64,
    pub layer: usize,
    pub estimator: String,
    pub mse: f64,
    pub ber: f64,
    pub bit_count: u64,
    pub error_count: u64,
    pub flops: u64,
    pub seed: u64,
}

impl TrialRecord {
    fn new(snr_db: f64, layer: usize, estimator: String, mse: f64, counts: BitCounts, flops: u64, seed: u64) -> Self {
        Self {
            snr_db,
            layer,
            estimator,
            mse,
            ber: counts.ber(),
            bit_count: counts.bits,
            error_count: counts.errors,
            flops,
            seed,
        }
    }
}

/// Records plus any trials that failed.
#[derive(Debug)]
pub struct ExperimentRun {
    pub records: Vec<TrialRecord>,
    pub failures: Vec<Error>,
}

/// Quantities shared by every trial of a spec.
pub struct Experiment {
    spec: ExperimentSpec,
    cov: CovarianceModel,
    pilots: Vec<Vec<Complex64>>,
    constellation: Constellation,
}

/// Per-layer outputs of one pipeline over all frames (or symbols) of a trial.
struct Pipeline {
    label: String,
    layers: Vec<Vec<LayerTrace>>,
    flops: Vec<u64>,
}

impl Experiment {
    pub fn new(spec: ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let cov = spec.covariance()?;
        let pilots = generate_orthogonal_pilots(spec.system.n_t, spec.system.pilots, 0)?;
        let constellation = spec.constellation();
        Ok(Self {
            spec,
            cov,
            pilots,
            constellation,
        })
    }

    pub fn spec(&self) -> &ExperimentSpec {
        &self.spec
    }

    pub fn covariance(&self) -> &CovarianceModel {
        &self.cov
    }

    pub fn pilots(&self) -> &[Vec<Complex64>] {
        &self.pilots
    }

    /// Payload bits one frame carries across all tx antennas.
    pub fn bits_per_frame(&self) -> usize {
        self.spec.system.n_t * self.constellation.bits_per_symbol() * self.cov.n_data()
    }

    /// Frames one codeword is spread over.
    pub fn frames_per_codeword(&self) -> usize {
        self.spec.code.codeword_length().div_ceil(self.bits_per_frame())
    }

    /// All records of trial `trial` at grid value `value`.
    pub fn trial(&self, value: f64, trial: usize) -> Result<Vec<TrialRecord>> {
        let seed = self.spec.seed.wrapping_add(trial as u64);
        let snr_db = self.spec.snr_for(value);
        let sigma2 = noise_variance(snr_db, self.constellation.energy(), self.spec.system.n_t);
        let wrap = |e: Error| Error::Trial {
            snr_db,
            seed,
            message: e.to_string(),
        };
        let out = if self.spec.is_time_varying() {
            self.time_varying_trial(snr_db, sigma2, seed)
        } else if self.spec.system.coded {
            self.coded_trial(snr_db, sigma2, seed)
        } else {
            self.block_trial(snr_db, sigma2, seed)
        };
        out.map_err(wrap)
    }

    fn run_frame(
        &self,
        rx: &ReceivedFrame,
        sigma2: f64,
        truth: &Truth,
        pipes: &mut [Pipeline],
    ) -> Result<()> {
        let trace = run_jcd(rx, &self.pilots, &self.cov, sigma2, &self.spec.jcd, &self.constellation, Some(truth))?;
        for (l, t) in trace.into_iter().enumerate() {
            pipes[0].flops[l] += t.estimate.flops;
            pipes[0].layers[l].push(t);
        }
        if self.spec.perfect_csi {
            let t = run_perfect_csi(rx, &self.cov, sigma2, &self.spec.jcd.ep, &self.constellation, truth)?;
            pipes[1].layers[0].push(t);
        }
        Ok(())
    }

    fn pipelines(&self) -> Vec<Pipeline> {
        let layers = self.spec.jcd.layers;
        let mut v = vec![Pipeline {
            label: self.spec.jcd.estimator.id().as_str().to_string(),
            layers: vec![Vec::new(); layers],
            flops: vec![0; layers],
        }];
        if self.spec.perfect_csi {
            v.push(Pipeline {
                label: "perfect".into(),
                layers: vec![Vec::new()],
                flops: vec![0],
            });
        }
        v
    }

    fn records(&self, snr_db: f64, seed: u64, pipes: &[Pipeline]) -> Vec<TrialRecord> {
        let mut out = Vec::new();
        for p in pipes {
            for (l, traces) in p.layers.iter().enumerate() {
                let label = if l == 0 && p.label != "perfect" { "lmmse".to_string() } else { p.label.clone() };
                let mse = traces.iter().filter_map(|t| t.mse).sum::<f64>() / traces.len() as f64;
                let mut counts = BitCounts::default();
                for t in traces {
                    counts += t.bit_counts.unwrap_or_default();
                }
                out.push(TrialRecord::new(snr_db, l + 1, label, mse, counts, p.flops[l], seed));
            }
        }
        out
    }

    fn block_trial(&self, snr_db: f64, sigma2: f64, seed: u64) -> Result<Vec<TrialRecord>> {
        let channel = sample_channel(&self.cov, sub_seed(seed, CHANNEL_TAG))?;
        let mut rng = rng_from_seed(sub_seed(seed, STREAM_TAG));
        let frame = Frame::random(self.cov.pattern(), self.pilots.clone(), &self.constellation, &mut rng)?;
        let rx = transmit(&frame, &channel, 0, sigma2, &mut rng)?;
        let truth = Truth {
            channel: &channel,
            symbol: 0,
            bits: &frame.payload_bits,
        };
        let mut pipes = self.pipelines();
        self.run_frame(&rx, sigma2, &truth, &mut pipes)?;
        Ok(self.records(snr_db, seed, &pipes))
    }

    /// One codeword, interleaved over as many frames as it needs; leftover
    /// payload positions carry random filler bits. Each frame sees its own
    /// channel realization.
    fn coded_trial(&self, snr_db: f64, sigma2: f64, seed: u64) -> Result<Vec<TrialRecord>> {
        let code = &self.spec.code;
        let mut rng = rng_from_seed(sub_seed(seed, STREAM_TAG));
        let info: Vec<u8> = (0..code.block_length).map(|_| rng.random_range(0..2u8)).collect();
        let codeword = conv_encode(&info, code)?;
        let (n_frames, per_frame) = (self.frames_per_codeword(), self.bits_per_frame());
        let mut perm: Vec<usize> = (0..n_frames * per_frame).collect();
        perm.shuffle(&mut rng_from_seed(sub_seed(seed, INTERLEAVER_TAG)));
        let mut stream: Vec<u8> = (0..n_frames * per_frame).map(|_| rng.random_range(0..2u8)).collect();
        for (i, &c) in codeword.iter().enumerate() {
            stream[perm[i]] = c;
        }
        let (n_t, per_ant) = (self.spec.system.n_t, per_frame / self.spec.system.n_t);
        let mut pipes = self.pipelines();
        for f in 0..n_frames {
            let chunk = &stream[f * per_frame..(f + 1) * per_frame];
            let bits: Vec<Vec<u8>> = (0..n_t).map(|n| chunk[n * per_ant..(n + 1) * per_ant].to_vec()).collect();
            let frame = Frame::from_bits(self.cov.pattern(), self.pilots.clone(), bits, &self.constellation)?;
            let channel = sample_channel(&self.cov, sub_seed(seed, CHANNEL_TAG + 16 * f as u64))?;
            let rx = transmit(&frame, &channel, 0, sigma2, &mut rng)?;
            let truth = Truth {
                channel: &channel,
                symbol: 0,
                bits: &frame.payload_bits,
            };
            self.run_frame(&rx, sigma2, &truth, &mut pipes)?;
        }
        let mut out = self.records(snr_db, seed, &pipes);
        for p in &pipes {
            let last = p.layers.last().expect("at least one layer");
            let mut llr_stream = Vec::with_capacity(n_frames * per_frame);
            for t in last {
                for ant in demap_llr(&t.soft, &self.constellation)? {
                    llr_stream.extend(ant);
                }
            }
            let llrs: Vec<f64> = (0..codeword.len()).map(|i| llr_stream[perm[i]]).collect();
            let decoded = viterbi_decode(&llrs, code)?;
            let counts = count_bit_errors(&decoded, &info)?;
            let mse = last.iter().filter_map(|t| t.mse).sum::<f64>() / last.len() as f64;
            let flops = p.flops.iter().sum();
            out.push(TrialRecord::new(
                snr_db,
                p.layers.len(),
                format!("{}+viterbi", p.label),
                mse,
                counts,
                flops,
                seed,
            ));
        }
        Ok(out)
    }

    fn time_varying_trial(&self, snr_db: f64, sigma2: f64, seed: u64) -> Result<Vec<TrialRecord>> {
        let s = &self.spec.system;
        let channel: ChannelRealization = evolve_time_varying(
            &self.cov,
            s.velocity_kmh,
            s.carrier_hz,
            1.0 / s.subcarrier_spacing_hz,
            s.symbols,
            sub_seed(seed, CHANNEL_TAG),
        )?;
        let mut rng = rng_from_seed(sub_seed(seed, STREAM_TAG));
        let mut frames = Vec::with_capacity(s.symbols);
        let mut rx = Vec::with_capacity(s.symbols);
        for t in 0..s.symbols {
            let frame = Frame::random(self.cov.pattern(), self.pilots.clone(), &self.constellation, &mut rng)?;
            rx.push(transmit(&frame, &channel, t, sigma2, &mut rng)?);
            frames.push(frame);
        }
        let truth: Vec<Truth> = frames
            .iter()
            .enumerate()
            .map(|(t, f)| Truth {
                channel: &channel,
                symbol: t,
                bits: &f.payload_bits,
            })
            .collect();
        let positions = pilot_symbol_positions(s.symbols, s.pilot_symbols)?;
        let trace = run_time_varying(
            &rx,
            &positions,
            &self.pilots,
            &self.cov,
            sigma2,
            &self.spec.jcd,
            &self.constellation,
            Some(&truth),
        )?;
        let mut pipes = self.pipelines();
        pipes[0].layers = trace.layers;
        pipes[0].flops = trace.flops;
        if self.spec.perfect_csi {
            for (r, t) in rx.iter().zip(&truth) {
                let p = run_perfect_csi(r, &self.cov, sigma2, &self.spec.jcd.ep, &self.constellation, t)?;
                pipes[1].layers[0].push(p);
            }
        }
        Ok(self.records(snr_db, seed, &pipes))
    }
}

/// Runs every (grid point, trial) pair. Failed trials are collected in
/// [`ExperimentRun::failures`] and the remaining records are kept.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentRun> {
    let exp = Experiment::new(spec.clone())?;
    let jobs: Vec<(f64, usize)> = spec
        .grid()
        .iter()
        .flat_map(|&v| (0..spec.trials).map(move |r| (v, r)))
        .collect();
    info!("running {} trials over {} grid points", jobs.len(), spec.grid().len());
    let results: Vec<Result<Vec<TrialRecord>>> = jobs.par_iter().map(|&(v, r)| exp.trial(v, r)).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(r) => records.extend(r),
            Err(e) => {
                warn!("{e}");
                failures.push(e);
            }
        }
    }
    Ok(ExperimentRun { records, failures })
}

/// Convenience for callers that treat any failed trial as fatal.
pub fn run_trial(spec: &ExperimentSpec, value: f64, trial: usize) -> Result<Vec<TrialRecord>> {
    Experiment::new(spec.clone())?.trial(value, trial)
}
