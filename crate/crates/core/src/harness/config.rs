//! Experiment description, read from TOML.
//!
//! ```toml
//! trials = 200
//! seed = 1
//!
//! [system]
//! n_r = 4
//! n_t = 4
//! subcarriers = 128
//! pilots = 16
//! modulation = "qpsk"
//! snr_db = [12.0, 16.0, 20.0]
//!
//! [jcd]
//! layers = 2
//! estimator = "ojcd"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{assemble_covariance, CovarianceModel, PowerDelayProfile};
use crate::coding::{snr_db_for_ebn0, CodeConfig};
use crate::error::{invalid, Error, Result};
use crate::frame::{build_pilot_pattern, Constellation, Modulation};
use crate::jcd::JcdConfig;

/// Link and channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_r: usize,
    pub n_t: usize,
    pub subcarriers: usize,
    pub pilots: usize,
    pub modulation: Modulation,
    /// Spatial correlation coefficient at both ends.
    pub rho: f64,
    /// Per-receive-antenna SNR grid. Exactly one of `snr_db` and `ebn0_db`
    /// must be set.
    pub snr_db: Option<Vec<f64>>,
    pub ebn0_db: Option<Vec<f64>>,
    /// Terminal speed; zero selects block fading over one OFDM symbol.
    pub velocity_kmh: f64,
    /// OFDM symbols per frame in time-varying mode.
    pub symbols: usize,
    /// Pilot-bearing symbols among them (time-varying mode only).
    pub pilot_symbols: usize,
    pub coded: bool,
    pub delay_spread_ns: f64,
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
    /// Optional CSV power-delay profile replacing the built-in TDL-C table.
    pub pdp_file: Option<PathBuf>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_r: 4,
            n_t: 4,
            subcarriers: 128,
            pilots: 16,
            modulation: Modulation::Qpsk,
            rho: 0.0,
            snr_db: None,
            ebn0_db: None,
            velocity_kmh: 0.0,
            symbols: 14,
            pilot_symbols: 14,
            coded: false,
            delay_spread_ns: 200.0,
            subcarrier_spacing_hz: 15e3,
            carrier_hz: 3.5e9,
            pdp_file: None,
        }
    }
}

/// Which quantity the sweep is expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrAxis {
    Snr,
    EbN0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub trials: usize,
    pub seed: u64,
    /// Also run detection with the true channel on the same realizations.
    pub perfect_csi: bool,
    pub output: Option<PathBuf>,
    pub system: SystemConfig,
    pub jcd: JcdConfig,
    pub code: CodeConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            trials: 200,
            seed: 1,
            perfect_csi: false,
            output: None,
            system: SystemConfig::default(),
            jcd: JcdConfig::default(),
            code: CodeConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if s.n_r == 0 || s.n_t == 0 {
            return Err(invalid("antenna counts must be positive"));
        }
        build_pilot_pattern(s.subcarriers, s.pilots)?;
        if s.pilots < s.n_t {
            return Err(invalid(format!("{} pilots cannot separate {} tx antennas", s.pilots, s.n_t)));
        }
        if !(0.0..1.0).contains(&s.rho) {
            return Err(invalid(format!("rho {} outside [0, 1)", s.rho)));
        }
        let grid = match (&s.snr_db, &s.ebn0_db) {
            (Some(g), None) | (None, Some(g)) => g,
            _ => return Err(invalid("set exactly one of snr_db and ebn0_db")),
        };
        if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
            return Err(invalid("SNR grid must be nonempty and finite"));
        }
        if !(s.velocity_kmh >= 0.0) {
            return Err(invalid("velocity must be nonnegative"));
        }
        if s.velocity_kmh > 0.0 {
            if s.symbols < 2 || s.pilot_symbols < 2 || s.pilot_symbols > s.symbols {
                return Err(invalid("time-varying frames need 2 <= pilot_symbols <= symbols"));
            }
            if s.coded {
                return Err(invalid("coded runs use block fading"));
            }
        }
        if !(s.delay_spread_ns > 0.0 && s.subcarrier_spacing_hz > 0.0 && s.carrier_hz > 0.0) {
            return Err(invalid("delay spread, subcarrier spacing and carrier must be positive"));
        }
        if s.coded {
            self.code.validate()?;
        }
        self.jcd.validate()
    }

    pub fn axis(&self) -> SnrAxis {
        if self.system.ebn0_db.is_some() {
            SnrAxis::EbN0
        } else {
            SnrAxis::Snr
        }
    }

    /// Sweep values as configured.
    pub fn grid(&self) -> &[f64] {
        self.system
            .snr_db
            .as_deref()
            .or(self.system.ebn0_db.as_deref())
            .unwrap_or(&[])
    }

    /// Per-receive-antenna SNR for a grid value.
    pub fn snr_for(&self, value: f64) -> f64 {
        match self.axis() {
            SnrAxis::Snr => value,
            SnrAxis::EbN0 => snr_db_for_ebn0(
                value,
                self.system.n_t,
                self.system.modulation.bits_per_symbol(),
                self.system.coded,
            ),
        }
    }

    pub fn constellation(&self) -> Constellation {
        Constellation::new(self.system.modulation)
    }

    pub fn is_time_varying(&self) -> bool {
        self.system.velocity_kmh > 0.0
    }

    pub fn power_delay_profile(&self) -> Result<PowerDelayProfile> {
        match &self.system.pdp_file {
            Some(p) => PowerDelayProfile::from_file(p),
            None => Ok(PowerDelayProfile::tdl_c(self.system.delay_spread_ns * 1e-9)),
        }
    }

    pub fn covariance(&self) -> Result<CovarianceModel> {
        let s = &self.system;
        assemble_covariance(
            &self.power_delay_profile()?,
            s.subcarriers,
            s.pilots,
            s.n_t,
            s.n_r,
            s.rho,
            s.subcarrier_spacing_hz,
        )
    }
}

/// Noise variance per receive antenna for unit-energy symbols:
/// `E_s N_T / 10^(snr / 10)`.
pub fn noise_variance(snr_db: f64, symbol_energy: f64, n_t: usize) -> f64 {
    symbol_energy * n_t as f64 / 10f64.powf(snr_db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
trials = 3
seed = 9

[system]
n_r = 2
n_t = 2
subcarriers = 16
pilots = 4
snr_db = [10.0]

[jcd]
layers = 3
estimator = "mjcd"
"#;

    #[test]
    fn parse_and_roundtrip() {
        let s = ExperimentSpec::from_toml(BASIC).unwrap();
        assert_eq!(s.trials, 3);
        assert_eq!(s.jcd.layers, 3);
        assert_eq!(s.jcd.ep.iterations, 5);
        assert_eq!(s.system.modulation, Modulation::Qpsk);
        let back = ExperimentSpec::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ExperimentSpec::from_toml(&BASIC.replace("seed = 9", "seed = 9\nbogus = 1")).is_err());
        assert!(ExperimentSpec::from_toml(&BASIC.replace("n_r = 2", "n_r = 2\nextra = true")).is_err());
        assert!(ExperimentSpec::from_toml(&BASIC.replace("trials = 3", "trials = 0")).is_err());
        assert!(ExperimentSpec::from_toml(&BASIC.replace("snr_db = [10.0]", "snr_db = []")).is_err());
        assert!(ExperimentSpec::from_toml(&BASIC.replace("snr_db = [10.0]", "")).is_err());
        assert!(ExperimentSpec::from_toml(&BASIC.replace("snr_db = [10.0]", "snr_db = [1.0]\nebn0_db = [1.0]")).is_err());
    }

    #[test]
    fn noise_definition() {
        assert!((noise_variance(0.0, 1.0, 4) - 4.0).abs() < 1e-15);
        assert!((noise_variance(10.0, 1.0, 2) - 0.2).abs() < 1e-15);
    }
}
