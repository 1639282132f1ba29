use mimo_jcd::channel::{assemble_covariance, sample_channel, PowerDelayProfile};
use mimo_jcd::detection::EpConfig;
use mimo_jcd::estimation::{lmmse_weights, traditional_lmmse};
use mimo_jcd::frame::{generate_orthogonal_pilots, transmit, Constellation, Frame};
use mimo_jcd::harness::config::noise_variance;
use mimo_jcd::harness::metrics::true_response;
use mimo_jcd::harness::{mse_metric, run_experiment, summarize, ExperimentSpec};
use mimo_jcd::jcd::{detect_layer, run_jcd, EstimatorKind, JcdConfig, Truth};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(trials: usize, layers: usize, snr: f64) -> ExperimentSpec {
    let mut s = ExperimentSpec::default();
    s.trials = trials;
    s.seed = 31;
    s.system.snr_db = Some(vec![snr]);
    s.jcd.layers = layers;
    s.jcd.estimator = EstimatorKind::Ojcd;
    s
}

#[test]
fn first_layer_standalone_matches_pipeline_and_metrics_agree() {
    let cov = assemble_covariance(&PowerDelayProfile::tdl_c(200e-9), 64, 8, 2, 2, 0.3, 15e3).unwrap();
    let c = Constellation::qpsk();
    let pilots = generate_orthogonal_pilots(2, 8, 0).unwrap();
    let sigma2 = noise_variance(14.0, 1.0, 2);
    let ch = sample_channel(&cov, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frame = Frame::random(cov.pattern(), pilots.clone(), &c, &mut rng).unwrap();
    let rx = transmit(&frame, &ch, 0, sigma2, &mut rng).unwrap();
    let truth = Truth {
        channel: &ch,
        symbol: 0,
        bits: &frame.payload_bits,
    };
    let cfg = JcdConfig {
        layers: 3,
        ..JcdConfig::default()
    };
    let trace = run_jcd(&rx, &pilots, &cov, sigma2, &cfg, &c, Some(&truth)).unwrap();
    assert_eq!(trace.len(), 3);

    let w = lmmse_weights(&cov, sigma2).unwrap();
    let est = traditional_lmmse(&rx, &pilots, &w).unwrap().restrict(cov.pattern().data_indices()).unwrap();
    let soft = detect_layer(&est, &rx, sigma2, &EpConfig::default(), &c).unwrap();
    assert_eq!(est, trace[0].estimate);
    assert_eq!(soft, trace[0].soft);

    let h = true_response(&ch, 0, cov.pattern().data_indices());
    for layer in &trace {
        let d = layer.estimate.stacked() - &h;
        let manual = d.iter().map(|z| z.norm_sqr()).sum::<f64>() / (2.0 * 2.0 * 2.0 * 56.0);
        assert!((layer.mse.unwrap() - manual).abs() < 1e-14);
        assert_eq!(layer.mse.unwrap(), mse_metric(&[layer.estimate.stacked()], &[h.clone()]).unwrap());
    }
}

#[test]
fn second_layer_lowers_ber_at_16_db() {
    // 224 frames x 448 data symbols = 100352 symbols.
    let run = run_experiment(&spec(224, 2, 16.0)).unwrap();
    let rows = summarize(&run.records);
    let (l1, l2) = (&rows[0], &rows[1]);
    assert!(l1.bit_count / 2 >= 100_000);
    assert!(l2.ber < l1.ber, "{} vs {}", l2.ber, l1.ber);
}

#[test]
fn five_layers_saturate() {
    let run = run_experiment(&spec(120, 5, 14.0)).unwrap();
    let rows = summarize(&run.records);
    assert_eq!(rows.len(), 5);
    let ber: Vec<f64> = rows.iter().map(|r| r.ber).collect();
    assert!(ber[1] < ber[0]);
    assert!((ber[4] - ber[1]).abs() <= 0.5 * (ber[0] - ber[1]), "{ber:?}");
}

#[test]
fn empirical_snr_matches_nominal() {
    let cov = assemble_covariance(&PowerDelayProfile::tdl_c(200e-9), 128, 16, 4, 4, 0.0, 15e3).unwrap();
    let c = Constellation::qpsk();
    let pilots = generate_orthogonal_pilots(4, 16, 0).unwrap();
    let snr_db = 12.0;
    let sigma2 = noise_variance(snr_db, c.energy(), 4);
    let (mut signal, mut noise) = (0.0, 0.0);
    for seed in 0..2000 {
        let ch = sample_channel(&cov, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let frame = Frame::random(cov.pattern(), pilots.clone(), &c, &mut rng).unwrap();
        let clean = transmit(&frame, &ch, 0, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let noisy = transmit(&frame, &ch, 0, sigma2, &mut rng).unwrap();
        for (a, b) in clean.data_obs.iter().zip(&noisy.data_obs) {
            signal += a.norm_squared();
            noise += (b - a).norm_squared();
        }
    }
    let measured = 10.0 * (signal / noise).log10();
    assert!((measured - snr_db).abs() < 0.2, "measured {measured} dB");
}
