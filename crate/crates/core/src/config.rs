//! Experiment configuration: defaults, validation, and the flat key-value
//! config file format (`section.key = value`, `#` comments).

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversary::AttackConfig;
use crate::channel::{AttenuationTable, WaterType, WAVELENGTH_SIGNAL_NM};
use crate::error::{Error, Result};
use crate::receiver::DetectorConfig;
use crate::transmitter::SourceConfig;

/// Beacon channel parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncChannelConfig {
    /// Probability a beacon pulse registers on D5.
    pub detect_prob: f64,
    /// Stray-count rate on D5 (Hz).
    pub noise_hz: f64,
    /// Acceptance half-width of grid recovery (ps).
    pub tolerance_ps: i64,
    /// Receiver clock scale offset in parts per million. A hook only; grid
    /// recovery assumes zero drift.
    pub clock_ppm: f64,
}

impl Default for SyncChannelConfig {
    fn default() -> Self {
        Self {
            detect_prob: 0.4,
            noise_hz: 100.0,
            tolerance_ps: 1_000,
            clock_ppm: 0.0,
        }
    }
}

/// Post-processing parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PostprocessConfig {
    /// Fraction of the sifted key disclosed for error estimation.
    pub sample_fraction: f64,
    /// Abort threshold on the estimated error rate.
    pub qber_abort: f64,
    /// Error-correction efficiency assumed in rate predictions.
    pub f_ec: f64,
    /// Reconciliation passes.
    pub cascade_passes: u32,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            sample_fraction: 0.1,
            qber_abort: 0.11,
            f_ec: 1.16,
            cascade_passes: 4,
        }
    }
}

/// Choice of the sifting factor q in the rate formula.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum RateQ {
    /// Use the sifting rate measured in the round.
    #[default]
    Measured,
    Fixed(f64),
}

/// Distance sweep parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepConfig {
    pub step_m: f64,
    pub max_distance_m: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            step_m: 5.0,
            max_distance_m: 800.0,
        }
    }
}

/// Runner mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    Simulate,
    Sweep,
    SyncTest,
    Analyze,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simulate" => Ok(Mode::Simulate),
            "sweep" => Ok(Mode::Sweep),
            "sync-test" | "sync_test" => Ok(Mode::SyncTest),
            "analyze" => Ok(Mode::Analyze),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Full experiment description. Defaults reproduce the 30 m configuration:
/// measured water, 27 dB channel + 8 dB system loss, 50 MHz source with the
/// 0.9/0.3/0 intensity mix, and the calibrated receiver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    pub water: WaterType,
    pub wavelength_nm: u32,
    pub distance_m: f64,
    pub system_db: f64,
    pub rounds: u32,
    /// Pulses simulated per round; rates are normalized per pulse and then
    /// per second, so this only sets the statistics volume.
    pub round_pulses: u64,
    pub source: SourceConfig,
    pub detector: DetectorConfig,
    pub attack: AttackConfig,
    pub sync: SyncChannelConfig,
    pub post: PostprocessConfig,
    pub rate_q: RateQ,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub water_table: AttenuationTable,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mode: Mode::Simulate,
            water: WaterType::Measured,
            wavelength_nm: WAVELENGTH_SIGNAL_NM,
            distance_m: 30.0,
            system_db: 8.0,
            rounds: 30,
            round_pulses: 10_000_000,
            source: SourceConfig::default(),
            detector: DetectorConfig::default(),
            attack: AttackConfig::default(),
            sync: SyncChannelConfig::default(),
            post: PostprocessConfig::default(),
            rate_q: RateQ::default(),
            sweep: SweepConfig::default(),
            water_table: AttenuationTable::default(),
        }
    }
}

impl ExperimentConfig {
    /// Session seconds represented by one round.
    pub fn round_seconds(&self) -> f64 {
        self.round_pulses as f64 / self.source.repetition_hz
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.detector.validate()?;
        self.attack.validate()?;
        if self.distance_m < 0.0 {
            return Err(Error::Config(format!(
                "distance_m must be non-negative, got {}",
                self.distance_m
            )));
        }
        if self.system_db < 0.0 {
            return Err(Error::Config(format!(
                "system_db must be non-negative, got {}",
                self.system_db
            )));
        }
        if !(self.sync.detect_prob > 0.0 && self.sync.detect_prob <= 1.0) {
            return Err(Error::Config(format!(
                "sync.detect_prob must be in (0, 1], got {}",
                self.sync.detect_prob
            )));
        }
        if self.sync.noise_hz < 0.0 || self.sync.tolerance_ps <= 0 {
            return Err(Error::Config("bad sync noise/tolerance".into()));
        }
        if !(self.post.sample_fraction > 0.0 && self.post.sample_fraction < 1.0) {
            return Err(Error::Config(format!(
                "post.sample_fraction must be in (0, 1), got {}",
                self.post.sample_fraction
            )));
        }
        if !(0.0..=0.5).contains(&self.post.qber_abort) {
            return Err(Error::Config(format!(
                "post.qber_abort must be in [0, 0.5], got {}",
                self.post.qber_abort
            )));
        }
        if self.post.f_ec < 1.0 {
            return Err(Error::Config(format!(
                "post.f_ec must be >= 1, got {}",
                self.post.f_ec
            )));
        }
        if self.post.cascade_passes == 0 {
            return Err(Error::Config("post.cascade_passes must be >= 1".into()));
        }
        if let RateQ::Fixed(q) = self.rate_q {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::Config(format!("rate.q must be in (0, 1], got {q}")));
            }
        }
        if self.sweep.step_m <= 0.0 || self.sweep.max_distance_m <= 0.0 {
            return Err(Error::Config("sweep step/max must be positive".into()));
        }
        // The water table must cover the configured signal wavelength.
        self.water_table.db_per_m(self.water, self.wavelength_nm)?;
        Ok(())
    }

    /// Parse the flat key-value format, starting from defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            cfg.apply(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_config_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_str(&text)
    }

    /// Apply one `key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn f64_of(key: &str, v: &str) -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got '{v}'")))
        }
        fn u64_of(key: &str, v: &str) -> Result<u64> {
            // Accept scientific notation for counts (e.g. 1e7).
            if let Ok(n) = v.parse::<u64>() {
                return Ok(n);
            }
            let f = f64_of(key, v)?;
            if f < 0.0 || f.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "{key}: expected a non-negative integer, got '{v}'"
                )));
            }
            Ok(f as u64)
        }

        match key {
            "seed" => self.seed = u64_of(key, value)?,
            "mode" => self.mode = value.parse()?,
            "water" => self.water = value.parse()?,
            "wavelength_nm" => self.wavelength_nm = u64_of(key, value)? as u32,
            "distance_m" => self.distance_m = f64_of(key, value)?,
            "system_db" => self.system_db = f64_of(key, value)?,
            "rounds" => self.rounds = u64_of(key, value)? as u32,
            "round_pulses" => self.round_pulses = u64_of(key, value)?,
            // Convenience: a session length in seconds sets the pulse count.
            "session_s" => {
                let s = f64_of(key, value)?;
                if s <= 0.0 {
                    return Err(Error::Config(format!("session_s must be positive, got {s}")));
                }
                self.round_pulses = (s * self.source.repetition_hz).round() as u64;
            }

            "source.repetition_hz" => self.source.repetition_hz = f64_of(key, value)?,
            "source.pulse_width_s" => self.source.pulse_width_s = f64_of(key, value)?,
            "source.sync_rate_hz" => self.source.sync_rate_hz = f64_of(key, value)?,
            "source.mu_signal" => self.source.mu_signal = f64_of(key, value)?,
            "source.mu_decoy" => self.source.mu_decoy = f64_of(key, value)?,
            "source.mu_vacuum" => self.source.mu_vacuum = f64_of(key, value)?,

            "detector.qe_450" => self.detector.qe_450 = f64_of(key, value)?,
            "detector.qe_520" => self.detector.qe_520 = f64_of(key, value)?,
            "detector.dark_hz" => self.detector.dark_hz = f64_of(key, value)?,
            "detector.background_hz" => self.detector.background_hz = f64_of(key, value)?,
            "detector.jitter_sigma_s" => self.detector.jitter_sigma_s = f64_of(key, value)?,
            "detector.tdc_bin_s" => self.detector.tdc_bin_s = f64_of(key, value)?,
            "detector.collection_efficiency" => {
                self.detector.collection_efficiency = f64_of(key, value)?
            }
            "detector.polarization_error" => {
                self.detector.polarization_error = f64_of(key, value)?
            }

            "attack.kind" | "attack" => self.attack.kind = value.parse()?,
            "attack.intercept_fraction" => self.attack.intercept_fraction = f64_of(key, value)?,
            "attack.pns_bypass_efficiency" => {
                self.attack.pns_bypass_efficiency = f64_of(key, value)?
            }

            "sync.detect_prob" => self.sync.detect_prob = f64_of(key, value)?,
            "sync.noise_hz" => self.sync.noise_hz = f64_of(key, value)?,
            "sync.tolerance_ps" => self.sync.tolerance_ps = u64_of(key, value)? as i64,
            "sync.clock_ppm" => self.sync.clock_ppm = f64_of(key, value)?,

            "post.sample_fraction" => self.post.sample_fraction = f64_of(key, value)?,
            "post.qber_abort" => self.post.qber_abort = f64_of(key, value)?,
            "post.f_ec" => self.post.f_ec = f64_of(key, value)?,
            "post.cascade_passes" => self.post.cascade_passes = u64_of(key, value)? as u32,

            "rate.q" => {
                self.rate_q = if value.eq_ignore_ascii_case("measured") {
                    RateQ::Measured
                } else {
                    RateQ::Fixed(f64_of(key, value)?)
                }
            }

            "sweep.step_m" => self.sweep.step_m = f64_of(key, value)?,
            "sweep.max_m" | "sweep.max_distance_m" => {
                self.sweep.max_distance_m = f64_of(key, value)?
            }

            _ => {
                // Water-table overrides: water.<name>.<wavelength> = dB/m.
                if let Some(rest) = key.strip_prefix("water.") {
                    let Some((name, nm)) = rest.rsplit_once('.') else {
                        return Err(Error::Config(format!(
                            "expected water.<name>.<wavelength>, got '{key}'"
                        )));
                    };
                    let water: WaterType = name.parse()?;
                    let nm: u32 = nm
                        .parse()
                        .map_err(|_| Error::Config(format!("{key}: bad wavelength '{nm}'")))?;
                    self.water_table.set(water, nm, f64_of(key, value)?)?;
                } else {
                    return Err(Error::Config(format!("unknown config key '{key}'")));
                }
            }
        }
        Ok(())
    }
}
