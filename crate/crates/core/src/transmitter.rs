//! Polarization-encoded decoy-state source.
//!
//! Four laser diodes provide the BB84 states; per pulse a 4-bit random word
//! picks the polarization (first two bits) and the intensity class (last two
//! bits), giving the 50/25/25 signal/decoy/vacuum mix. A separate 500 kHz
//! train provides the timing beacon, with exactly 100 signal slots between
//! consecutive beacon pulses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::timebase::{PS_PER_S, SIGNAL_PERIOD_PS};

/// Measurement/preparation basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Rectilinear,
    Diagonal,
}

/// The four BB84 polarization states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    /// Horizontal; bit 0 in the rectilinear basis.
    H,
    /// Vertical; bit 1 in the rectilinear basis.
    V,
    /// +45 degrees; bit 0 in the diagonal basis.
    D,
    /// -45 degrees; bit 1 in the diagonal basis.
    A,
}

impl Polarization {
    pub const ALL: [Polarization; 4] = [
        Polarization::H,
        Polarization::V,
        Polarization::D,
        Polarization::A,
    ];

    pub fn basis(&self) -> Basis {
        match self {
            Polarization::H | Polarization::V => Basis::Rectilinear,
            Polarization::D | Polarization::A => Basis::Diagonal,
        }
    }

    pub fn bit(&self) -> u8 {
        match self {
            Polarization::H | Polarization::D => 0,
            Polarization::V | Polarization::A => 1,
        }
    }

    /// The state encoding `bit` in `basis`.
    pub fn from_basis_bit(basis: Basis, bit: u8) -> Polarization {
        match (basis, bit & 1) {
            (Basis::Rectilinear, 0) => Polarization::H,
            (Basis::Rectilinear, _) => Polarization::V,
            (Basis::Diagonal, 0) => Polarization::D,
            (Basis::Diagonal, _) => Polarization::A,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Polarization::H => "H",
            Polarization::V => "V",
            Polarization::D => "D",
            Polarization::A => "A",
        }
    }
}

impl std::str::FromStr for Polarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" | "h" => Ok(Polarization::H),
            "V" | "v" => Ok(Polarization::V),
            "D" | "d" => Ok(Polarization::D),
            "A" | "a" => Ok(Polarization::A),
            other => Err(Error::Config(format!("unknown polarization '{other}'"))),
        }
    }
}

/// Pulse intensity class of the three-level decoy protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [
        IntensityClass::Signal,
        IntensityClass::Decoy,
        IntensityClass::Vacuum,
    ];

    pub fn index(&self) -> usize {
        match self {
            IntensityClass::Signal => 0,
            IntensityClass::Decoy => 1,
            IntensityClass::Vacuum => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            IntensityClass::Signal => "signal",
            IntensityClass::Decoy => "decoy",
            IntensityClass::Vacuum => "vacuum",
        }
    }
}

impl std::str::FromStr for IntensityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "signal" => Ok(IntensityClass::Signal),
            "decoy" => Ok(IntensityClass::Decoy),
            "vacuum" => Ok(IntensityClass::Vacuum),
            other => Err(Error::Config(format!("unknown intensity class '{other}'"))),
        }
    }
}

/// Structural mixing ratios fixed by the 4-bit encoding (8/4/4 of 16 words).
pub const CLASS_PROBABILITIES: [(IntensityClass, f64); 3] = [
    (IntensityClass::Signal, 0.50),
    (IntensityClass::Decoy, 0.25),
    (IntensityClass::Vacuum, 0.25),
];

/// Source parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Pulse repetition rate (Hz).
    pub repetition_hz: f64,
    /// Optical pulse width (s); must fit the receiver coincidence window.
    pub pulse_width_s: f64,
    /// Beacon repetition rate (Hz).
    pub sync_rate_hz: f64,
    /// Mean photon number of the signal class.
    pub mu_signal: f64,
    /// Mean photon number of the decoy class.
    pub mu_decoy: f64,
    /// Mean photon number of the vacuum class; always zero.
    pub mu_vacuum: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            repetition_hz: 5.0e7,
            pulse_width_s: 3e-9,
            sync_rate_hz: 5.0e5,
            mu_signal: 0.9,
            mu_decoy: 0.3,
            mu_vacuum: 0.0,
        }
    }
}

impl SourceConfig {
    /// Signal slot period in integer picoseconds.
    pub fn period_ps(&self) -> i64 {
        (PS_PER_S as f64 / self.repetition_hz).round() as i64
    }

    /// Beacon period in integer picoseconds.
    pub fn sync_period_ps(&self) -> i64 {
        (PS_PER_S as f64 / self.sync_rate_hz).round() as i64
    }

    pub fn mu(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Signal => self.mu_signal,
            IntensityClass::Decoy => self.mu_decoy,
            IntensityClass::Vacuum => self.mu_vacuum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetition_hz <= 0.0 || self.sync_rate_hz <= 0.0 {
            return Err(Error::Config("repetition rates must be positive".into()));
        }
        if self.mu_vacuum != 0.0 {
            return Err(Error::Config(format!(
                "vacuum class must have mu = 0, got {}",
                self.mu_vacuum
            )));
        }
        if !(self.mu_signal > self.mu_decoy && self.mu_decoy > 0.0) {
            return Err(Error::Config(format!(
                "intensities must satisfy mu_signal > mu_decoy > 0, got {} / {}",
                self.mu_signal, self.mu_decoy
            )));
        }
        let period = self.period_ps();
        let sync_period = self.sync_period_ps();
        if period <= 0 || sync_period != 100 * period {
            return Err(Error::Config(format!(
                "sync period ({sync_period} ps) must be exactly 100 signal periods ({period} ps)"
            )));
        }
        if self.pulse_width_s <= 0.0 || self.pulse_width_s >= 100.0 * period as f64 / PS_PER_S as f64
        {
            return Err(Error::Config("pulse width out of range".into()));
        }
        Ok(())
    }
}

/// One transmitted pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub index: u64,
    pub time_ps: i64,
    pub polarization: Polarization,
    pub class: IntensityClass,
    /// Mean photon number of this pulse's class.
    pub mu: f64,
}

impl EmissionRecord {
    pub fn new(index: u64, polarization: Polarization, class: IntensityClass, mu: f64) -> Self {
        Self {
            index,
            time_ps: index as i64 * SIGNAL_PERIOD_PS,
            polarization,
            class,
            mu,
        }
    }

    pub fn basis(&self) -> Basis {
        self.polarization.basis()
    }

    pub fn bit(&self) -> u8 {
        self.polarization.bit()
    }
}

/// Map one 4-bit word to a pulse description.
///
/// Bits 1-2 pick the polarization (00 H, 01 V, 10 D, 11 A); bits 3-4 pick the
/// intensity (11 and 10 signal, 01 decoy, 00 vacuum), which yields the 50/25/25
/// class mix over uniform words. `{0,1,1,1}` maps to a signal-intensity V.
pub fn encode_word(bits: [u8; 4]) -> (Polarization, IntensityClass) {
    let pol = match (bits[0] & 1, bits[1] & 1) {
        (0, 0) => Polarization::H,
        (0, 1) => Polarization::V,
        (1, 0) => Polarization::D,
        (1, 1) => Polarization::A,
        _ => unreachable!(),
    };
    let class = match (bits[2] & 1, bits[3] & 1) {
        (1, _) => IntensityClass::Signal,
        (0, 1) => IntensityClass::Decoy,
        (0, 0) => IntensityClass::Vacuum,
        _ => unreachable!(),
    };
    (pol, class)
}

fn encode_nibble(w: u8) -> (Polarization, IntensityClass) {
    encode_word([(w >> 3) & 1, (w >> 2) & 1, (w >> 1) & 1, w & 1])
}

/// A generated pulse train, stored as one code byte per pulse.
#[derive(Debug, Clone)]
pub struct PulseTrain {
    codes: Vec<u8>,
    mus: [f64; 3],
}

impl PulseTrain {
    pub fn from_parts(codes: Vec<u8>, source: &SourceConfig) -> Self {
        Self {
            codes,
            mus: [source.mu_signal, source.mu_decoy, source.mu_vacuum],
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Materialize pulse `index`.
    pub fn record(&self, index: usize) -> EmissionRecord {
        let (pol, class) = encode_nibble(self.codes[index]);
        EmissionRecord::new(index as u64, pol, class, self.mus[class.index()])
    }

    pub fn iter(&self) -> impl Iterator<Item = EmissionRecord> + '_ {
        (0..self.len()).map(move |i| self.record(i))
    }
}

/// Generate `n` pulses, consuming 4 fresh random bits per pulse.
pub fn generate_pulse_train(
    config: &SourceConfig,
    rng: &mut RandomStream,
    n: usize,
) -> PulseTrain {
    let mut codes = Vec::with_capacity(n);
    for _ in 0..n {
        codes.push((rng.random::<u32>() & 0xF) as u8);
    }
    PulseTrain::from_parts(codes, config)
}

/// Beacon emission timestamps: `k * sync_period` for `k = 0..n_sync`.
pub fn generate_sync_train(config: &SourceConfig, n_sync: usize) -> Vec<i64> {
    let period = config.sync_period_ps();
    (0..n_sync as i64).map(|k| k * period).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamDomain, Streams};
    use crate::timebase::SYNC_PERIOD_PS;

    #[test]
    fn anchor_word_0111_is_signal_v() {
        let (pol, class) = encode_word([0, 1, 1, 1]);
        assert_eq!(pol, Polarization::V);
        assert_eq!(class, IntensityClass::Signal);
    }

    #[test]
    fn word_0000_is_vacuum_h() {
        let (pol, class) = encode_word([0, 0, 0, 0]);
        assert_eq!(pol, Polarization::H);
        assert_eq!(class, IntensityClass::Vacuum);
    }

    #[test]
    fn exhaustive_word_census() {
        // All 16 words: 4 of each polarization; 8 signal, 4 decoy, 4 vacuum.
        let mut pol_counts = [0usize; 4];
        let mut class_counts = [0usize; 3];
        for w in 0u8..16 {
            let (pol, class) = encode_nibble(w);
            pol_counts[match pol {
                Polarization::H => 0,
                Polarization::V => 1,
                Polarization::D => 2,
                Polarization::A => 3,
            }] += 1;
            class_counts[class.index()] += 1;
        }
        assert_eq!(pol_counts, [4, 4, 4, 4]);
        assert_eq!(class_counts, [8, 4, 4]);
    }

    #[test]
    fn polarization_bits_and_bases() {
        assert_eq!(Polarization::H.bit(), 0);
        assert_eq!(Polarization::V.bit(), 1);
        assert_eq!(Polarization::D.bit(), 0);
        assert_eq!(Polarization::A.bit(), 1);
        assert_eq!(Polarization::H.basis(), Basis::Rectilinear);
        assert_eq!(Polarization::A.basis(), Basis::Diagonal);
    }

    #[test]
    fn empty_train() {
        let cfg = SourceConfig::default();
        let mut rng = Streams::new(1).stream(0, StreamDomain::Encoding);
        let train = generate_pulse_train(&cfg, &mut rng, 0);
        assert!(train.is_empty());
    }

    #[test]
    fn train_statistics_at_one_million() {
        let cfg = SourceConfig::default();
        let mut rng = Streams::new(11).stream(0, StreamDomain::Encoding);
        let n = 1_000_000;
        let train = generate_pulse_train(&cfg, &mut rng, n);
        let mut signal = 0usize;
        let mut pols = [0usize; 4];
        for rec in train.iter() {
            if rec.class == IntensityClass::Signal {
                signal += 1;
            }
            pols[match rec.polarization {
                Polarization::H => 0,
                Polarization::V => 1,
                Polarization::D => 2,
                Polarization::A => 3,
            }] += 1;
        }
        let sig_frac = signal as f64 / n as f64;
        assert!((sig_frac - 0.5).abs() < 0.002, "signal fraction {sig_frac}");
        for (i, &c) in pols.iter().enumerate() {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.25).abs() < 0.002, "pol {i}: {frac}");
        }
    }

    #[test]
    fn train_class_mix_passes_chi_square() {
        // 2 degrees of freedom; rejection threshold 13.816 at significance 0.001.
        let cfg = SourceConfig::default();
        let mut rng = Streams::new(12).stream(0, StreamDomain::Encoding);
        let n = 1_000_000;
        let train = generate_pulse_train(&cfg, &mut rng, n);
        let mut counts = [0f64; 3];
        for rec in train.iter() {
            counts[rec.class.index()] += 1.0;
        }
        let expected = [n as f64 * 0.5, n as f64 * 0.25, n as f64 * 0.25];
        let chi2: f64 = counts
            .iter()
            .zip(expected.iter())
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        assert!(chi2 < 13.816, "chi2 = {chi2}");
    }

    #[test]
    fn train_is_reproducible() {
        let cfg = SourceConfig::default();
        let streams = Streams::new(99);
        let mut r1 = streams.stream(0, StreamDomain::Encoding);
        let mut r2 = streams.stream(0, StreamDomain::Encoding);
        let a = generate_pulse_train(&cfg, &mut r1, 3);
        let b = generate_pulse_train(&cfg, &mut r2, 3);
        for i in 0..3 {
            assert_eq!(a.record(i), b.record(i));
        }
    }

    #[test]
    fn timestamps_on_exact_grid() {
        let cfg = SourceConfig::default();
        let mut rng = Streams::new(5).stream(0, StreamDomain::Encoding);
        let train = generate_pulse_train(&cfg, &mut rng, 1000);
        let mut last = -1i64;
        for rec in train.iter() {
            assert_eq!(rec.time_ps, rec.index as i64 * SIGNAL_PERIOD_PS);
            assert!(rec.time_ps > last);
            last = rec.time_ps;
        }
        // The grid is exact for arbitrarily deep indices.
        let far = EmissionRecord::new(1_000_000_000, Polarization::H, IntensityClass::Signal, 0.9);
        assert_eq!(far.time_ps, 20_000_000_000_000);
    }

    #[test]
    fn sync_train_spacing() {
        let cfg = SourceConfig::default();
        let ticks = generate_sync_train(&cfg, 3);
        assert_eq!(ticks, vec![0, 2_000_000, 4_000_000]);
        assert!(generate_sync_train(&cfg, 0).is_empty());
        // Exactly 100 signal slots between consecutive beacon pulses.
        assert_eq!(SYNC_PERIOD_PS / SIGNAL_PERIOD_PS, 100);
        assert_eq!(cfg.sync_period_ps() / cfg.period_ps(), 100);
    }

    #[test]
    fn source_config_validation() {
        assert!(SourceConfig::default().validate().is_ok());
        let mut bad = SourceConfig::default();
        bad.mu_decoy = 0.95;
        assert!(bad.validate().is_err());
        let mut bad = SourceConfig::default();
        bad.mu_vacuum = 0.01;
        assert!(bad.validate().is_err());
        let mut bad = SourceConfig::default();
        bad.sync_rate_hz = 4.0e5;
        assert!(bad.validate().is_err());
    }
}
