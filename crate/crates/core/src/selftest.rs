//! Quick oracle checks runnable from the command line.

use crate::channel::{assemble_covariance, PowerDelayProfile};
use crate::coding::{conv_encode, viterbi_decode, CodeConfig};
use crate::detection::{ep_detect, map_oracle, EpConfig};
use crate::error::Result;
use crate::estimation::{data_rows, lmmse_weights, mjcd_covariances, OjcdStatistics};
use crate::frame::{complex_gaussian, generate_orthogonal_pilots, Constellation};
use crate::harness::rng_from_seed;
use crate::jcd::CubicSpline;
use crate::linalg::{rel_frobenius, CMat, CVec};
use crate::oracle::{random_error_stats, sample_stacked_moments, sample_subsystem_moments};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    match f() {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn stacked_covariance() -> Result<(bool, String)> {
    let cov = assemble_covariance(&PowerDelayProfile::tdl_c(300e-9), 8, 2, 2, 2, 0.3, 100e3)?;
    let mut rng = rng_from_seed(11);
    let stats = random_error_stats(&mut rng, 2, 6, 0.3);
    let (c_yh, c_yy) = mjcd_covariances(&stats, &cov, 0.2)?;
    let emp = sample_stacked_moments(&stats, &cov, 0.2, 50_000, 12)?;
    let (a, b) = (rel_frobenius(&emp.c_yh, &c_yh), rel_frobenius(&emp.c_yy, &c_yy));
    Ok((a < 0.04 && b < 0.04, format!("rel err C_yh {a:.4}, C_yy {b:.4}")))
}

fn subsystem_statistics() -> Result<(bool, String)> {
    let cov = assemble_covariance(&PowerDelayProfile::tdl_c(300e-9), 8, 2, 2, 1, 0.3, 100e3)?;
    let sigma2 = 0.3;
    let w1 = data_rows(&lmmse_weights(&cov, sigma2)?, cov.pattern());
    let pilots = generate_orthogonal_pilots(2, 2, 0)?;
    let mut rng = rng_from_seed(13);
    let stats = random_error_stats(&mut rng, 2, 6, 0.2);
    let st = OjcdStatistics::new(&cov, &w1, &stats, &pilots, sigma2)?;
    let emp = sample_subsystem_moments(1, 0, &cov, &w1, &stats, &pilots, sigma2, 50_000, 14)?;
    let (a, b) = (rel_frobenius(&emp.b, &st.b_n(1)), rel_frobenius(&emp.sigma, &st.sigma_n(1)));
    Ok((a < 0.08 && b < 0.04, format!("rel err B {a:.4}, Sigma {b:.4}")))
}

fn ep_against_map() -> Result<(bool, String)> {
    let c = Constellation::qpsk();
    let mut rng = rng_from_seed(15);
    let sigma2 = 2.0 / 10.0;
    let trials = 2000;
    let mut agree = 0;
    for _ in 0..trials {
        let h = CMat::from_fn(2, 2, |_, _| complex_gaussian(&mut rng, 1.0));
        let idx: Vec<usize> = (0..2).map(|_| rng.random_range(0..4)).collect();
        let x = CVec::from_iterator(2, idx.iter().map(|&i| c.points()[i]));
        let y = &h * x + CVec::from_iterator(2, (0..2).map(|_| complex_gaussian(&mut rng, sigma2)));
        let ep = ep_detect(&h, &y, sigma2, &EpConfig::default(), &c)?;
        let hard: Vec<usize> = ep.x_p.iter().map(|&z| c.nearest(z)).collect();
        if hard == map_oracle(&h, &y, sigma2, &c)? {
            agree += 1;
        }
    }
    let frac = agree as f64 / trials as f64;
    // 95% target less three binomial standard deviations.
    let floor = 0.95 - 3.0 * (0.95 * 0.05 / trials as f64).sqrt();
    Ok((frac >= floor, format!("agreement {frac:.3} (floor {floor:.3})")))
}

fn spline_linear() -> Result<(bool, String)> {
    let x = [0.0, 4.0, 9.0, 13.0];
    let y: Vec<f64> = x.iter().map(|v| 0.5 * v - 2.0).collect();
    let s = CubicSpline::new(&x, &y)?;
    let err = (0..14).map(|t| (s.eval(t as f64) - (0.5 * t as f64 - 2.0)).abs()).fold(0.0, f64::max);
    Ok((err < 1e-12, format!("max deviation {err:.2e}")))
}

fn code_roundtrip() -> Result<(bool, String)> {
    let cfg = CodeConfig::default();
    let mut rng = rng_from_seed(17);
    let blocks = 20;
    for _ in 0..blocks {
        let bits: Vec<u8> = (0..cfg.block_length).map(|_| rng.random_range(0..2)).collect();
        let llr: Vec<f64> = conv_encode(&bits, &cfg)?.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
        if viterbi_decode(&llr, &cfg)? != bits {
            return Ok((false, "decoded block differs".into()));
        }
    }
    Ok((true, format!("{blocks} blocks exact")))
}

pub fn run_selftest() -> Vec<CheckOutcome> {
    vec![
        check("stacked covariance vs sampling", stacked_covariance),
        check("subsystem statistics vs sampling", subsystem_statistics),
        check("EP vs exhaustive MAP", ep_against_map),
        check("spline on linear data", spline_linear),
        check("convolutional code roundtrip", code_roundtrip),
    ]
}
