//! Classical post-processing: sifting, error estimation, reconciliation,
//! verification and privacy amplification.

mod cascade;
mod toeplitz;

pub use cascade::{correct_errors, CascadeConfig, CascadeOutcome};
pub use toeplitz::privacy_amplification;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoy::{accumulate_gains, h2, DecoyBounds, GainStats};
use crate::error::{Error, Result};
use crate::receiver::resolve_double_clicks;
use crate::rng::RandomStream;
use crate::sync::TaggedEvent;
use crate::transmitter::{IntensityClass, PulseTrain};

/// Bits disclosed by the 64-bit verification hash exchange.
pub const VERIFY_BITS: u64 = 64;

/// Why a round produced no key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortReason {
    /// The disclosed-sample error estimate crossed the protocol threshold.
    QberAboveThreshold,
    /// Reconciliation finished but the verification hashes disagreed.
    VerificationFailed,
    /// The sifted batch was too small to sample.
    BatchTooSmall,
    /// No sync reference could be recovered.
    SyncUnrecoverable,
}

impl AbortReason {
    pub fn name(&self) -> &'static str {
        match self {
            AbortReason::QberAboveThreshold => "qber_above_threshold",
            AbortReason::VerificationFailed => "verification_failed",
            AbortReason::BatchTooSmall => "batch_too_small",
            AbortReason::SyncUnrecoverable => "sync_unrecoverable",
        }
    }
}

/// Basis-matched signal-class key material plus the per-class tallies.
#[derive(Debug, Clone, Default)]
pub struct SiftedBatch {
    /// Emission sequence numbers of the kept bits, strictly increasing.
    pub pulse_indices: Vec<u64>,
    pub alice_bits: Vec<bool>,
    pub bob_bits: Vec<bool>,
    /// Gains/errors of all three classes (decoy analysis input).
    pub stats: GainStats,
}

impl SiftedBatch {
    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }
}

/// End-of-round key state.
#[derive(Debug, Clone, Default)]
pub struct KeyMaterial {
    pub sifted: Vec<bool>,
    pub corrected: Vec<bool>,
    pub final_key: Vec<bool>,
    pub leakage_bits: u64,
    pub qber_estimate: f64,
}

/// Drop invalid tags and collapse double-assigned slots: the earliest click
/// in a slot wins, exact timestamp ties break uniformly at random.
pub fn resolve_valid_tags(tagged: &[TaggedEvent], rng: &mut RandomStream) -> Vec<TaggedEvent> {
    let pairs: Vec<_> = tagged
        .iter()
        .filter(|e| e.valid)
        .map(|e| (e.global_index, e.detection))
        .collect();
    resolve_double_clicks(pairs, rng)
        .into_iter()
        .map(|(g, det)| TaggedEvent {
            detection: det,
            sync_index: g / 100,
            slot: (g % 100) as u32,
            global_index: g,
            valid: true,
            invalid_reason: None,
        })
        .collect()
}

/// Base sifting: keep detections whose analysis basis matches the preparation
/// basis; key bits come from the signal class only, while every class feeds
/// the gain tallies.
pub fn sift(train: &PulseTrain, resolved: &[TaggedEvent]) -> SiftedBatch {
    let stats = accumulate_gains(train, resolved);
    let mut batch = SiftedBatch {
        stats,
        ..SiftedBatch::default()
    };
    for ev in resolved {
        if !ev.valid || ev.global_index >= train.len() as u64 {
            continue;
        }
        let rec = train.record(ev.global_index as usize);
        if rec.class != IntensityClass::Signal {
            continue;
        }
        let (Some(basis), Some(bit)) = (ev.detection.detector.basis(), ev.detection.detector.bit())
        else {
            continue;
        };
        if basis == rec.basis() {
            batch.pulse_indices.push(ev.global_index);
            batch.alice_bits.push(rec.bit() == 1);
            batch.bob_bits.push(bit == 1);
        }
    }
    batch
}

/// Error-estimation result.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QberEstimate {
    pub estimate: f64,
    pub sampled_bits: u64,
    pub sample_errors: u64,
}

/// Disclose a uniform random sample of the sifted key, estimate the error
/// rate from it, and strip the sampled bits from the key material.
pub fn estimate_qber(
    batch: &SiftedBatch,
    sample_fraction: f64,
    rng: &mut RandomStream,
) -> Result<(QberEstimate, SiftedBatch)> {
    assert!(
        sample_fraction > 0.0 && sample_fraction < 1.0,
        "sample fraction in (0, 1)"
    );
    let n = batch.len();
    let sample_count = ((n as f64) * sample_fraction).floor() as usize;
    if sample_count == 0 {
        return Err(Error::BatchTooSmall { len: n });
    }
    // Partial Fisher-Yates over the index range picks the sample positions.
    let mut order: Vec<u32> = (0..n as u32).collect();
    for i in 0..sample_count {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut sampled = vec![false; n];
    let mut errors = 0u64;
    for &pos in &order[..sample_count] {
        sampled[pos as usize] = true;
        if batch.alice_bits[pos as usize] != batch.bob_bits[pos as usize] {
            errors += 1;
        }
    }
    let mut remaining = SiftedBatch {
        stats: batch.stats,
        ..SiftedBatch::default()
    };
    for (i, &taken) in sampled.iter().enumerate() {
        if !taken {
            remaining.pulse_indices.push(batch.pulse_indices[i]);
            remaining.alice_bits.push(batch.alice_bits[i]);
            remaining.bob_bits.push(batch.bob_bits[i]);
        }
    }
    let est = QberEstimate {
        estimate: errors as f64 / sample_count as f64,
        sampled_bits: sample_count as u64,
        sample_errors: errors,
    };
    Ok((est, remaining))
}

/// Secure length of the final key:
/// `n_input * Q1L/Qu * (1 - H2(e1U)) - leakage - verification`, clamped at 0.
pub fn final_length_from_rate(
    n_input: usize,
    stats: &GainStats,
    bounds: &DecoyBounds,
    leakage_bits: u64,
) -> usize {
    let q_u = stats.gain(IntensityClass::Signal);
    if q_u <= 0.0 || bounds.degenerate {
        return 0;
    }
    let single_fraction = (bounds.q1_lower / q_u).min(1.0) * (1.0 - h2(bounds.e1_upper));
    let secret = (n_input as f64 * single_fraction).floor() - (leakage_bits + VERIFY_BITS) as f64;
    secret.max(0.0) as usize
}
