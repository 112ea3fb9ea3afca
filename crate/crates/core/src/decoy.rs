//! Decoy-state analysis and secret-key rate evaluation.
//!
//! Accumulates per-intensity-class gains and error rates, bounds the
//! single-photon yield and error rate from the vacuum+weak decoy statistics,
//! and evaluates the secret-key rate
//! `R >= q { -Q_u f(E_u) H2(E_u) + Q1 [1 - H2(e1)] }`
//! together with analytic rate-versus-distance curves.

use serde::{Deserialize, Serialize};

use crate::channel::{AttenuationTable, WaterType};
use crate::error::{Error, Result};
use crate::receiver::DetectorConfig;
use crate::sync::TaggedEvent;
use crate::transmitter::{IntensityClass, PulseTrain, SourceConfig};

/// Per-intensity-class counting statistics.
///
/// `gain` uses all valid detections of a class; error rates use only
/// basis-matched detections (the conjugate half carries no bit information),
/// which is also what makes the vacuum-class error rate sit at 1/2.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ClassTally {
    pub n_sent: u64,
    pub n_detected: u64,
    pub n_matched: u64,
    pub n_error: u64,
}

impl ClassTally {
    pub fn gain(&self) -> f64 {
        if self.n_sent == 0 {
            0.0
        } else {
            self.n_detected as f64 / self.n_sent as f64
        }
    }

    pub fn error_rate(&self) -> f64 {
        if self.n_matched == 0 {
            0.0
        } else {
            self.n_error as f64 / self.n_matched as f64
        }
    }
}

/// Gains and error rates for the three intensity classes.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GainStats {
    pub classes: [ClassTally; 3],
}

impl GainStats {
    pub fn class(&self, c: IntensityClass) -> &ClassTally {
        &self.classes[c.index()]
    }

    pub fn class_mut(&mut self, c: IntensityClass) -> &mut ClassTally {
        &mut self.classes[c.index()]
    }

    pub fn gain(&self, c: IntensityClass) -> f64 {
        self.class(c).gain()
    }

    pub fn error_rate(&self, c: IntensityClass) -> f64 {
        self.class(c).error_rate()
    }

    /// Vacuum yield: the per-slot noise detection probability.
    pub fn y0(&self) -> f64 {
        self.gain(IntensityClass::Vacuum)
    }

    pub fn total_detected(&self) -> u64 {
        self.classes.iter().map(|c| c.n_detected).sum()
    }

    pub fn total_matched(&self) -> u64 {
        self.classes.iter().map(|c| c.n_matched).sum()
    }

    /// Measured sifting rate: basis-matched fraction of valid detections.
    pub fn sift_rate(&self) -> f64 {
        let det = self.total_detected();
        if det == 0 {
            0.0
        } else {
            self.total_matched() as f64 / det as f64
        }
    }

    fn validate_counts(&self) {
        for c in &self.classes {
            debug_assert!(c.n_error <= c.n_matched);
            debug_assert!(c.n_matched <= c.n_detected);
            debug_assert!(c.n_detected <= c.n_sent);
        }
    }
}

/// Count detections against the emission log, matching by sequence number
/// only (no simulation ground truth). `events` must already be double-click
/// resolved; invalid tags and indices beyond the train are ignored.
pub fn accumulate_gains(train: &PulseTrain, events: &[TaggedEvent]) -> GainStats {
    let mut stats = GainStats::default();
    for i in 0..train.len() {
        let rec = train.record(i);
        stats.class_mut(rec.class).n_sent += 1;
    }
    for ev in events {
        if !ev.valid || ev.global_index >= train.len() as u64 {
            continue;
        }
        let rec = train.record(ev.global_index as usize);
        let tally = stats.class_mut(rec.class);
        tally.n_detected += 1;
        if let (Some(basis), Some(bit)) = (ev.detection.detector.basis(), ev.detection.detector.bit())
        {
            if basis == rec.basis() {
                tally.n_matched += 1;
                if bit != rec.bit() {
                    tally.n_error += 1;
                }
            }
        }
    }
    stats.validate_counts();
    stats
}

/// Single-photon bounds from the decoy statistics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecoyBounds {
    /// Lower bound on the single-photon yield Y1.
    pub y1_lower: f64,
    /// Upper bound on the single-photon error rate e1.
    pub e1_upper: f64,
    /// Lower bound on the single-photon gain, `Y1 * mu_s * e^(-mu_s)`.
    pub q1_lower: f64,
    /// Set when the yield bound collapsed to zero; the rate will clamp to 0.
    pub degenerate: bool,
}

/// Vacuum+weak decoy bounds from explicit rates.
///
/// `Y1 >= mu_s/(mu_s mu_1 - mu_1^2) * (Q_v e^{mu_1} - Q_u e^{mu_s} mu_1^2/mu_s^2
///        - (mu_s^2 - mu_1^2)/mu_s^2 * Y0)` and
/// `e1 <= (E_v Q_v e^{mu_1} - Y0/2) / (Y1^L mu_1)`, both clamped to [0, 1].
pub fn bound_single_photon_from(
    q_signal: f64,
    q_decoy: f64,
    e_decoy: f64,
    y0: f64,
    mu_s: f64,
    mu_1: f64,
) -> DecoyBounds {
    assert!(mu_s > mu_1 && mu_1 > 0.0, "need mu_s > mu_1 > 0");
    let coef = mu_s / (mu_s * mu_1 - mu_1 * mu_1);
    let raw = coef
        * (q_decoy * mu_1.exp()
            - q_signal * mu_s.exp() * (mu_1 * mu_1) / (mu_s * mu_s)
            - (mu_s * mu_s - mu_1 * mu_1) / (mu_s * mu_s) * y0);
    let degenerate = raw <= 0.0;
    let y1_lower = raw.clamp(0.0, 1.0);
    let e1_upper = if degenerate {
        0.5
    } else {
        ((e_decoy * q_decoy * mu_1.exp() - 0.5 * y0) / (y1_lower * mu_1)).clamp(0.0, 1.0)
    };
    let q1_lower = (y1_lower * mu_s * (-mu_s).exp()).min(q_signal.max(0.0));
    DecoyBounds {
        y1_lower,
        e1_upper,
        q1_lower,
        degenerate,
    }
}

/// Vacuum+weak decoy bounds from accumulated statistics.
pub fn bound_single_photon(stats: &GainStats, mu_s: f64, mu_1: f64) -> DecoyBounds {
    bound_single_photon_from(
        stats.gain(IntensityClass::Signal),
        stats.gain(IntensityClass::Decoy),
        stats.error_rate(IntensityClass::Decoy),
        stats.y0(),
        mu_s,
        mu_1,
    )
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::EntropyDomain(x));
    }
    Ok(h2(x))
}

pub(crate) fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Secret-key rate per pulse, clamped at zero.
pub fn gllp_rate(stats: &GainStats, bounds: &DecoyBounds, q: f64, f_ec: f64) -> f64 {
    gllp_rate_raw(stats, bounds, q, f_ec).max(0.0)
}

/// Unclamped rate; negative values mean the round yields no key.
pub fn gllp_rate_raw(stats: &GainStats, bounds: &DecoyBounds, q: f64, f_ec: f64) -> f64 {
    assert!(q > 0.0 && q <= 1.0, "q in (0, 1]");
    assert!(f_ec >= 1.0, "error-correction efficiency f >= 1");
    let q_u = stats.gain(IntensityClass::Signal);
    let e_u = stats.error_rate(IntensityClass::Signal);
    q * (-q_u * f_ec * h2(e_u) + bounds.q1_lower * (1.0 - h2(bounds.e1_upper)))
}

/// Asymptotic per-class gain and error rate of a Poissonian source through a
/// channel of per-photon detection probability `eta`, noise yield `y0` and
/// intrinsic misrouting probability `e_det`.
pub fn analytic_gain_model(mu: f64, eta: f64, y0: f64, e_det: f64) -> (f64, f64) {
    let s = 1.0 - (-eta * mu).exp();
    let q = (y0 + s).min(1.0);
    let e = if y0 + s <= 0.0 {
        0.5
    } else {
        (0.5 * y0 + e_det * s) / (y0 + s)
    };
    (q, e)
}

/// One point of a rate-distance curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RatePoint {
    pub distance_m: f64,
    pub loss_db: f64,
    pub q_signal: f64,
    pub e_signal: f64,
    pub y1_lower: f64,
    pub e1_upper: f64,
    pub rate_per_pulse: f64,
    pub rate_bps: f64,
}

/// Sweep parameters for [`rate_vs_distance`].
#[derive(Debug, Clone, Copy)]
pub struct SweepSpec {
    pub system_db: f64,
    pub step_m: f64,
    pub max_distance_m: f64,
    /// Sifting factor q of the rate formula.
    pub q: f64,
    /// Error-correction efficiency assumed for predictions.
    pub f_ec: f64,
    /// Coincidence window defining the per-slot noise yield.
    pub window_ps: i64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            system_db: 8.0,
            step_m: 5.0,
            max_distance_m: 800.0,
            q: 0.5,
            f_ec: 1.16,
            window_ps: 5_000,
        }
    }
}

/// Per-slot noise yield of the receiver for a given coincidence window.
pub fn window_noise_yield(det: &DetectorConfig, window_ps: i64) -> f64 {
    det.total_noise_hz() * window_ps as f64 * 1e-12
}

/// Analytic secret-key rate as a function of water distance.
pub fn rate_vs_distance(
    table: &AttenuationTable,
    water: WaterType,
    wavelength_nm: u32,
    det: &DetectorConfig,
    source: &SourceConfig,
    spec: &SweepSpec,
) -> Result<Vec<RatePoint>> {
    if spec.step_m <= 0.0 {
        return Err(Error::Config(format!(
            "sweep step must be positive, got {}",
            spec.step_m
        )));
    }
    let y0 = window_noise_yield(det, spec.window_ps);
    let mut points = Vec::new();
    let steps = (spec.max_distance_m / spec.step_m).floor() as u64;
    for i in 0..=steps {
        let distance = i as f64 * spec.step_m;
        let link = table.build_link(water, wavelength_nm, distance, spec.system_db)?;
        let eta = link.transmittance * det.collection_efficiency * det.qe_450;
        let (q_u, e_u) = analytic_gain_model(source.mu_signal, eta, y0, det.polarization_error);
        let (q_v, e_v) = analytic_gain_model(source.mu_decoy, eta, y0, det.polarization_error);
        let bounds = bound_single_photon_from(q_u, q_v, e_v, y0, source.mu_signal, source.mu_decoy);
        let rate = (spec.q * (-q_u * spec.f_ec * h2(e_u)
            + bounds.q1_lower * (1.0 - h2(bounds.e1_upper))))
        .max(0.0);
        points.push(RatePoint {
            distance_m: distance,
            loss_db: link.total_db,
            q_signal: q_u,
            e_signal: e_u,
            y1_lower: bounds.y1_lower,
            e1_upper: bounds.e1_upper,
            rate_per_pulse: rate,
            rate_bps: rate * source.repetition_hz,
        });
    }
    Ok(points)
}

/// First distance at which the analytic rate reaches zero, if inside the sweep.
pub fn cutoff_distance(points: &[RatePoint]) -> Option<f64> {
    points
        .iter()
        .find(|p| p.rate_per_pulse <= 0.0)
        .map(|p| p.distance_m)
}

/// Ground-truth tallies keyed by the photon number each pulse left the source
/// with. Simulation-only bookkeeping for certifying the decoy bounds; never
/// visible to protocol logic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TruthTally {
    /// Index k is photon number; the last bucket absorbs k >= 15.
    pub sent: [u64; 16],
    pub detected: [u64; 16],
    pub matched: [u64; 16],
    pub errors: [u64; 16],
}

impl TruthTally {
    fn bucket(k: u32) -> usize {
        (k as usize).min(15)
    }

    pub fn record_sent(&mut self, photons: u32) {
        self.sent[Self::bucket(photons)] += 1;
    }

    pub fn record_detected(&mut self, photons: u32, matched: bool, error: bool) {
        let b = Self::bucket(photons);
        self.detected[b] += 1;
        if matched {
            self.matched[b] += 1;
            if error {
                self.errors[b] += 1;
            }
        }
    }

    /// True single-photon yield.
    pub fn y1(&self) -> Option<f64> {
        (self.sent[1] > 0).then(|| self.detected[1] as f64 / self.sent[1] as f64)
    }

    /// True single-photon error rate.
    pub fn e1(&self) -> Option<f64> {
        (self.matched[1] > 0).then(|| self.errors[1] as f64 / self.matched[1] as f64)
    }
}
