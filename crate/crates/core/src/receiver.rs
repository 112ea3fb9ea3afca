//! Passive-basis-choice measurement module.
//!
//! A 50:50 beamsplitter picks the analysis basis, a half-wave plate plus two
//! polarizing beamsplitters route each photon to one of four signal detectors
//! (D1 H, D2 V, D3 +45, D4 -45), and a fifth detector watches the beacon
//! wavelength. Detectors have finite quantum efficiency, dark counts, shared
//! optical background, Gaussian timing jitter and TDC-quantized timestamps.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::RandomStream;
use crate::timebase::quantize;
use crate::transmitter::{Basis, Polarization};

/// Detector identifiers. D1-D4 analyze the signal wavelength; D5 is reserved
/// for the sync wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorId {
    D1,
    D2,
    D3,
    D4,
    D5,
}

impl DetectorId {
    pub const SIGNAL: [DetectorId; 4] = [
        DetectorId::D1,
        DetectorId::D2,
        DetectorId::D3,
        DetectorId::D4,
    ];

    /// The polarization this detector clicks for (None for the sync detector).
    pub fn polarization(&self) -> Option<Polarization> {
        match self {
            DetectorId::D1 => Some(Polarization::H),
            DetectorId::D2 => Some(Polarization::V),
            DetectorId::D3 => Some(Polarization::D),
            DetectorId::D4 => Some(Polarization::A),
            DetectorId::D5 => None,
        }
    }

    pub fn basis(&self) -> Option<Basis> {
        self.polarization().map(|p| p.basis())
    }

    /// Key bit this detector reports.
    pub fn bit(&self) -> Option<u8> {
        self.polarization().map(|p| p.bit())
    }

    pub fn name(&self) -> &'static str {
        match self {
            DetectorId::D1 => "D1",
            DetectorId::D2 => "D2",
            DetectorId::D3 => "D3",
            DetectorId::D4 => "D4",
            DetectorId::D5 => "D5",
        }
    }

    pub fn from_name(s: &str) -> Option<DetectorId> {
        match s {
            "D1" => Some(DetectorId::D1),
            "D2" => Some(DetectorId::D2),
            "D3" => Some(DetectorId::D3),
            "D4" => Some(DetectorId::D4),
            "D5" => Some(DetectorId::D5),
            _ => None,
        }
    }

    fn for_state(pol: Polarization) -> DetectorId {
        match pol {
            Polarization::H => DetectorId::D1,
            Polarization::V => DetectorId::D2,
            Polarization::D => DetectorId::D3,
            Polarization::A => DetectorId::D4,
        }
    }

    /// The other detector of the same analysis basis.
    fn conjugate(self) -> DetectorId {
        match self {
            DetectorId::D1 => DetectorId::D2,
            DetectorId::D2 => DetectorId::D1,
            DetectorId::D3 => DetectorId::D4,
            DetectorId::D4 => DetectorId::D3,
            DetectorId::D5 => DetectorId::D5,
        }
    }
}

/// Simulation ground truth of what produced a click; hidden from protocol logic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventOrigin {
    Signal,
    Dark,
    Background,
    Sync,
}

/// One receiver click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub detector: DetectorId,
    /// TDC-quantized timestamp (multiple of the TDC bin).
    pub timestamp_ps: i64,
    pub origin: EventOrigin,
}

/// Receiver parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Quantum efficiency at the signal wavelength.
    pub qe_450: f64,
    /// Quantum efficiency at the sync wavelength.
    pub qe_520: f64,
    /// Dark count rate per signal detector (Hz).
    pub dark_hz: f64,
    /// Optical background shared across the four signal detectors (Hz, total).
    pub background_hz: f64,
    /// Gaussian timing jitter sigma (s).
    pub jitter_sigma_s: f64,
    /// TDC bin width (s).
    pub tdc_bin_s: f64,
    /// Probability a photon entering the module reaches the analysis optics.
    pub collection_efficiency: f64,
    /// Probability a same-basis photon exits the wrong polarizing-beamsplitter port.
    pub polarization_error: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            qe_450: 0.20,
            qe_520: 0.25,
            // Per-detector dark rate. Together with the 100 Hz background this
            // puts ~124 Hz of total noise on the signal detectors, which
            // reproduces the observed ~2.5% error floor at 35 dB total loss.
            dark_hz: 6.0,
            background_hz: 100.0,
            jitter_sigma_s: 250e-12,
            tdc_bin_s: 64e-12,
            collection_efficiency: 0.70,
            polarization_error: 0.0176,
        }
    }
}

impl DetectorConfig {
    pub fn jitter_sigma_ps(&self) -> f64 {
        self.jitter_sigma_s * 1e12
    }

    pub fn tdc_bin_ps(&self) -> i64 {
        (self.tdc_bin_s * 1e12).round() as i64
    }

    /// Total noise rate a signal slot sees across D1-D4 (Hz).
    pub fn total_noise_hz(&self) -> f64 {
        4.0 * self.dark_hz + self.background_hz
    }

    pub fn validate(&self) -> crate::error::Result<()> {
        let probs = [
            ("qe_450", self.qe_450),
            ("qe_520", self.qe_520),
            ("collection_efficiency", self.collection_efficiency),
            ("polarization_error", self.polarization_error),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(crate::error::Error::Config(format!(
                    "{name} must be a probability, got {p}"
                )));
            }
        }
        if self.dark_hz < 0.0 || self.background_hz < 0.0 {
            return Err(crate::error::Error::Config(
                "noise rates must be non-negative".into(),
            ));
        }
        if self.tdc_bin_ps() <= 0 {
            return Err(crate::error::Error::Config("tdc_bin_s must be positive".into()));
        }
        if self.jitter_sigma_s < 0.0 {
            return Err(crate::error::Error::Config(
                "jitter_sigma_s must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Jitter + TDC quantization applied to an arrival time.
pub fn timestamp_with_jitter(arrival_ps: i64, cfg: &DetectorConfig, rng: &mut RandomStream) -> i64 {
    let sigma = cfg.jitter_sigma_ps();
    let jitter = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma > 0").sample(rng).round() as i64
    } else {
        0
    };
    quantize(arrival_ps + jitter, cfg.tdc_bin_ps())
}

/// Measure the surviving photons of one pulse.
///
/// Per photon, in order: collection survival, 50:50 basis choice, routing
/// (same-basis photons exit the wrong port with probability
/// `polarization_error`, conjugate-basis photons route uniformly), then a
/// quantum-efficiency trial. The first photon to fire a detector wins and
/// defines the click; later photons of the same pulse are ignored.
pub fn measure(
    photon_count: u32,
    pol: Polarization,
    arrival_ps: i64,
    cfg: &DetectorConfig,
    rng: &mut RandomStream,
) -> Option<DetectionRecord> {
    for _ in 0..photon_count {
        if cfg.collection_efficiency < 1.0 && rng.random::<f64>() >= cfg.collection_efficiency {
            continue;
        }
        let measured_basis = if rng.random::<bool>() {
            Basis::Rectilinear
        } else {
            Basis::Diagonal
        };
        let detector = route(pol, measured_basis, cfg, rng);
        if rng.random::<f64>() < cfg.qe_450 {
            return Some(DetectionRecord {
                detector,
                timestamp_ps: timestamp_with_jitter(arrival_ps, cfg, rng),
                origin: EventOrigin::Signal,
            });
        }
    }
    None
}

fn route(
    pol: Polarization,
    measured_basis: Basis,
    cfg: &DetectorConfig,
    rng: &mut RandomStream,
) -> DetectorId {
    if pol.basis() == measured_basis {
        let correct = DetectorId::for_state(pol);
        if rng.random::<f64>() < cfg.polarization_error {
            correct.conjugate()
        } else {
            correct
        }
    } else {
        // Conjugate-basis photons carry no bit information; either port is
        // equally likely.
        let bit = rng.random::<bool>() as u8;
        DetectorId::for_state(Polarization::from_basis_bit(measured_basis, bit))
    }
}

/// Dark counts and optical background over a session.
///
/// Dark counts arrive at `dark_hz` per signal detector; the shared background
/// arrives at `background_hz` total and lands on a uniformly random signal
/// detector. Both are homogeneous Poisson processes, timestamps uniform over
/// the session and TDC-quantized. Returned sorted by timestamp.
pub fn inject_noise(
    duration_s: f64,
    cfg: &DetectorConfig,
    rng: &mut RandomStream,
) -> Vec<DetectionRecord> {
    let duration_ps = crate::timebase::seconds_to_ps(duration_s);
    if duration_ps <= 0 {
        return Vec::new();
    }
    let mut events = Vec::new();
    for det in DetectorId::SIGNAL {
        let n = poisson_count(cfg.dark_hz * duration_s, rng);
        for _ in 0..n {
            events.push(DetectionRecord {
                detector: det,
                timestamp_ps: quantize(rng.random_range(0..duration_ps), cfg.tdc_bin_ps()),
                origin: EventOrigin::Dark,
            });
        }
    }
    let n_bg = poisson_count(cfg.background_hz * duration_s, rng);
    for _ in 0..n_bg {
        let det = DetectorId::SIGNAL[rng.random_range(0..4usize)];
        events.push(DetectionRecord {
            detector: det,
            timestamp_ps: quantize(rng.random_range(0..duration_ps), cfg.tdc_bin_ps()),
            origin: EventOrigin::Background,
        });
    }
    events.sort_by_key(|e| e.timestamp_ps);
    events
}

/// Sample a Poisson count with arbitrary (possibly large) mean.
pub(crate) fn poisson_count(mean: f64, rng: &mut RandomStream) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    rand_distr::Poisson::new(mean)
        .expect("mean > 0")
        .sample(rng) as u64
}

/// Drive `n_trials` single photons of a known state through the analyzer with
/// the basis forced to match, and estimate the polarization fidelity as the
/// fraction of clicks on the correct detector. Expectation: `1 - polarization_error`.
pub fn measure_fidelity(
    pol: Polarization,
    n_trials: u64,
    cfg: &DetectorConfig,
    rng: &mut RandomStream,
) -> f64 {
    assert!(n_trials > 0, "fidelity needs at least one trial");
    let correct = DetectorId::for_state(pol);
    let mut clicks = 0u64;
    let mut hits = 0u64;
    for _ in 0..n_trials {
        if cfg.collection_efficiency < 1.0 && rng.random::<f64>() >= cfg.collection_efficiency {
            continue;
        }
        let det = route(pol, pol.basis(), cfg, rng);
        if rng.random::<f64>() < cfg.qe_450 {
            clicks += 1;
            if det == correct {
                hits += 1;
            }
        }
    }
    if clicks == 0 {
        return 0.0;
    }
    hits as f64 / clicks as f64
}

/// Keep one click per time slot: the earliest timestamp wins, exact ties are
/// broken uniformly at random. Input pairs are `(slot key, record)`.
pub fn resolve_double_clicks(
    mut events: Vec<(u64, DetectionRecord)>,
    rng: &mut RandomStream,
) -> Vec<(u64, DetectionRecord)> {
    events.sort_by_key(|(slot, e)| (*slot, e.timestamp_ps));
    let mut out: Vec<(u64, DetectionRecord)> = Vec::with_capacity(events.len());
    let mut i = 0;
    while i < events.len() {
        let slot = events[i].0;
        let mut j = i + 1;
        while j < events.len() && events[j].0 == slot {
            j += 1;
        }
        // Earliest timestamp wins within [i, j); ties resolved uniformly.
        let t_min = events[i].1.timestamp_ps;
        let ties = events[i..j]
            .iter()
            .take_while(|(_, e)| e.timestamp_ps == t_min)
            .count();
        let pick = if ties > 1 {
            i + rng.random_range(0..ties)
        } else {
            i
        };
        out.push(events[pick]);
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamDomain, Streams};
    use crate::timebase::SIGNAL_PERIOD_PS;

    fn rng(seed: u64) -> RandomStream {
        Streams::new(seed).stream(0, StreamDomain::Measurement)
    }

    fn ideal_optics() -> DetectorConfig {
        DetectorConfig {
            collection_efficiency: 1.0,
            qe_450: 1.0,
            jitter_sigma_s: 0.0,
            dark_hz: 0.0,
            background_hz: 0.0,
            ..DetectorConfig::default()
        }
    }

    #[test]
    fn zero_photons_never_click() {
        let cfg = DetectorConfig::default();
        let mut r = rng(1);
        for _ in 0..100 {
            assert!(measure(0, Polarization::H, 0, &cfg, &mut r).is_none());
        }
    }

    #[test]
    fn conjugate_basis_routes_uniformly() {
        // H photons analyzed in the diagonal basis split 50/50 between D3/D4.
        let cfg = ideal_optics();
        let mut r = rng(2);
        let mut d3 = 0u64;
        let mut fired = 0u64;
        while fired < 1_000_000 {
            if let Some(rec) = measure(1, Polarization::H, 0, &cfg, &mut r) {
                if rec.detector.basis() == Some(Basis::Diagonal) {
                    fired += 1;
                    if rec.detector == DetectorId::D3 {
                        d3 += 1;
                    }
                }
            }
        }
        let frac = d3 as f64 / fired as f64;
        assert!((frac - 0.5).abs() < 0.002, "D3 fraction {frac}");
    }

    #[test]
    fn same_basis_wrong_port_rate_matches_config() {
        let cfg = ideal_optics();
        let mut r = rng(3);
        let mut wrong = 0u64;
        let mut fired = 0u64;
        while fired < 1_000_000 {
            if let Some(rec) = measure(1, Polarization::H, 0, &cfg, &mut r) {
                if rec.detector.basis() == Some(Basis::Rectilinear) {
                    fired += 1;
                    if rec.detector == DetectorId::D2 {
                        wrong += 1;
                    }
                }
            }
        }
        let frac = wrong as f64 / fired as f64;
        assert!((frac - 0.0176).abs() < 0.0005, "wrong-port fraction {frac}");
    }

    #[test]
    fn basis_choice_is_balanced() {
        let cfg = ideal_optics();
        let mut r = rng(4);
        let mut rect = 0u64;
        let n = 1_000_000u64;
        for _ in 0..n {
            let rec = measure(1, Polarization::H, 0, &cfg, &mut r).unwrap();
            if rec.detector.basis() == Some(Basis::Rectilinear) {
                rect += 1;
            }
        }
        let frac = rect as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.002, "rectilinear fraction {frac}");
    }

    #[test]
    fn timestamps_are_tdc_quantized() {
        let cfg = DetectorConfig {
            collection_efficiency: 1.0,
            qe_450: 1.0,
            ..DetectorConfig::default()
        };
        let mut r = rng(5);
        for i in 0..2000u64 {
            let arrival = i as i64 * SIGNAL_PERIOD_PS;
            if let Some(rec) = measure(1, Polarization::D, arrival, &cfg, &mut r) {
                assert_eq!(rec.timestamp_ps.rem_euclid(64), 0);
            }
        }
    }

    #[test]
    fn no_jitter_no_noise_is_deterministic_quantization() {
        let cfg = ideal_optics();
        let mut r = rng(6);
        for i in 0..500u64 {
            let arrival = i as i64 * SIGNAL_PERIOD_PS;
            let rec = measure(1, Polarization::V, arrival, &cfg, &mut r).unwrap();
            assert_eq!(rec.timestamp_ps, quantize(arrival, 64));
        }
    }

    #[test]
    fn dark_counts_scale_with_duration() {
        // 300 s at 50 Hz per detector: mean 15000 each.
        let cfg = DetectorConfig {
            dark_hz: 50.0,
            background_hz: 0.0,
            ..DetectorConfig::default()
        };
        let mut r = rng(7);
        let events = inject_noise(300.0, &cfg, &mut r);
        for det in DetectorId::SIGNAL {
            let n = events.iter().filter(|e| e.detector == det).count() as f64;
            let sigma = 15000f64.sqrt();
            assert!(
                (n - 15000.0).abs() < 4.0 * sigma,
                "{}: {n} dark counts",
                det.name()
            );
            assert!(events
                .iter()
                .filter(|e| e.detector == det)
                .all(|e| e.origin == EventOrigin::Dark));
        }
    }

    #[test]
    fn zero_duration_is_silent() {
        let cfg = DetectorConfig::default();
        let mut r = rng(8);
        assert!(inject_noise(0.0, &cfg, &mut r).is_empty());
    }

    #[test]
    fn background_splits_uniformly() {
        let cfg = DetectorConfig {
            dark_hz: 0.0,
            background_hz: 100.0,
            ..DetectorConfig::default()
        };
        let mut r = rng(9);
        // 100 Hz over 100 s pooled for per-detector statistics.
        let events = inject_noise(100.0, &cfg, &mut r);
        let total = events.len() as f64;
        let sigma_total = 10000f64.sqrt();
        assert!((total - 10000.0).abs() < 4.0 * sigma_total, "total {total}");
        for det in DetectorId::SIGNAL {
            let n = events.iter().filter(|e| e.detector == det).count() as f64;
            let sigma = 2500f64.sqrt();
            assert!((n - 2500.0).abs() < 4.0 * sigma, "{}: {n}", det.name());
        }
    }

    #[test]
    fn noise_timestamps_sorted_and_quantized() {
        let cfg = DetectorConfig::default();
        let mut r = rng(10);
        let events = inject_noise(10.0, &cfg, &mut r);
        assert!(!events.is_empty());
        let mut last = i64::MIN;
        for e in &events {
            assert!(e.timestamp_ps >= last);
            assert_eq!(e.timestamp_ps.rem_euclid(64), 0);
            last = e.timestamp_ps;
        }
    }

    #[test]
    fn fidelity_tracks_polarization_error() {
        let mut cfg = ideal_optics();
        cfg.polarization_error = 0.018;
        let mut r = rng(11);
        for pol in Polarization::ALL {
            let f = measure_fidelity(pol, 1_000_000, &cfg, &mut r);
            assert!((f - 0.982).abs() < 0.001, "{}: {f}", pol.name());
        }
    }

    #[test]
    fn fidelity_extremes() {
        let mut r = rng(12);
        let mut cfg = ideal_optics();
        cfg.polarization_error = 0.0;
        let f = measure_fidelity(Polarization::H, 10_000, &cfg, &mut r);
        assert_eq!(f, 1.0);
        cfg.polarization_error = 0.5;
        let f = measure_fidelity(Polarization::A, 1_000_000, &cfg, &mut r);
        assert!((f - 0.5).abs() < 0.002, "coin-flip fidelity {f}");
    }

    #[test]
    fn double_click_keeps_earliest() {
        let mut r = rng(13);
        let rec = |t| DetectionRecord {
            detector: DetectorId::D1,
            timestamp_ps: t,
            origin: EventOrigin::Signal,
        };
        let events = vec![(7u64, rec(128)), (7u64, rec(64)), (8u64, rec(256))];
        let resolved = resolve_double_clicks(events, &mut r);
        assert_eq!(resolved.len(), 2);
        assert_eq!(resolved[0].1.timestamp_ps, 64);
        assert_eq!(resolved[1].1.timestamp_ps, 256);
    }

    #[test]
    fn double_click_tie_break_is_fair() {
        let mut r = rng(14);
        let mut first = 0u64;
        let n = 100_000;
        for _ in 0..n {
            let events = vec![
                (
                    0u64,
                    DetectionRecord {
                        detector: DetectorId::D1,
                        timestamp_ps: 64,
                        origin: EventOrigin::Signal,
                    },
                ),
                (
                    0u64,
                    DetectionRecord {
                        detector: DetectorId::D2,
                        timestamp_ps: 64,
                        origin: EventOrigin::Dark,
                    },
                ),
            ];
            let resolved = resolve_double_clicks(events, &mut r);
            if resolved[0].1.detector == DetectorId::D1 {
                first += 1;
            }
        }
        let frac = first as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "tie fraction {frac}");
    }

    #[test]
    fn config_validation_rejects_bad_probabilities() {
        let mut cfg = DetectorConfig::default();
        cfg.qe_450 = 1.2;
        assert!(cfg.validate().is_err());
        let mut cfg = DetectorConfig::default();
        cfg.dark_hz = -1.0;
        assert!(cfg.validate().is_err());
        assert!(DetectorConfig::default().validate().is_ok());
    }
}
