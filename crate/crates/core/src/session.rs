//! Experiment runner: composes source, adversary, channel, receiver, sync
//! recovery and post-processing into seeded rounds and aggregates reports.
//!
//! A round simulates `round_pulses` slots. Rates are normalized per pulse and
//! then per second of source time, so the pulse count only sets statistical
//! volume. Rounds draw all randomness from substreams of `(seed, round)` and
//! may therefore run on any number of threads with identical results.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{self, AttackKind};
use crate::channel::survive_photons;
use crate::config::{ExperimentConfig, RateQ};
use crate::decoy::{
    bound_single_photon, gllp_rate, gllp_rate_raw, DecoyBounds, GainStats, TruthTally,
};
use crate::error::{Error, Result};
use crate::postprocess::{
    correct_errors, estimate_qber, final_length_from_rate, privacy_amplification,
    resolve_valid_tags, sift, AbortReason, CascadeConfig,
};
use crate::receiver::{
    inject_noise, measure, timestamp_with_jitter, DetectionRecord, DetectorId, EventOrigin,
};
use crate::rng::{StreamDomain, Streams};
use crate::sync::{
    assign_time_tags, recover_sync_grid_with_stats, RecoveryStats, SyncParams, TagParams,
    TaggedEvent,
};
use crate::timebase::quantize;
use crate::transmitter::{generate_pulse_train, PulseTrain};

/// Decoy bounds as reported.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundsReport {
    pub y1_lower: f64,
    pub e1_upper: f64,
    pub q1_lower: f64,
    pub degenerate: bool,
}

impl From<DecoyBounds> for BoundsReport {
    fn from(b: DecoyBounds) -> Self {
        Self {
            y1_lower: b.y1_lower,
            e1_upper: b.e1_upper,
            q1_lower: b.q1_lower,
            degenerate: b.degenerate,
        }
    }
}

/// One line of the JSON-lines results stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub n_sent: u64,
    pub sim_seconds: f64,
    /// Valid, double-click-resolved detections.
    pub n_detected: u64,
    pub n_sifted: u64,
    pub sift_rate: f64,
    /// Exact error rate of the sifted key, pooled from the disclosed sample
    /// and the reconciliation flips; equals the sample estimate on aborts.
    pub qber: f64,
    pub qber_estimate: f64,
    /// Numerator/denominator behind `qber`, for exact pooling across rounds.
    pub error_bits: u64,
    pub compared_bits: u64,
    pub sampled_bits: u64,
    /// Parities disclosed during reconciliation.
    pub leakage: u64,
    pub n_corrected: u64,
    pub n_final: u64,
    pub sifted_bps: f64,
    pub final_bps: f64,
    /// Secret-rate formula value per pulse (clamped at zero) and scaled by
    /// the repetition rate.
    pub rate_per_pulse: f64,
    pub rate_bps: f64,
    /// Unclamped rate for diagnostics; negative means no key.
    pub rate_raw_per_pulse: f64,
    pub q_factor: f64,
    pub f_assumed: f64,
    pub f_measured: Option<f64>,
    pub bounds: BoundsReport,
    /// Raw per-class tallies behind the gains (protocol-visible counts).
    pub class_stats: GainStats,
    pub aborted: bool,
    pub abort_reason: Option<String>,
    pub keys_match: bool,
}

/// Everything a simulated round produces.
#[derive(Debug)]
pub struct RoundOutput {
    pub report: RoundReport,
    /// All receiver events (D1-D5), time-sorted; the export payload.
    pub events: Vec<DetectionRecord>,
    pub train: PulseTrain,
    pub alice_key: Vec<bool>,
    pub bob_key: Vec<bool>,
    /// Ground-truth tallies by source photon number.
    pub truth: TruthTally,
}

/// Protocol-visible processing of one round's events.
#[derive(Debug)]
pub struct ProcessedRound {
    pub report: RoundReport,
    pub alice_key: Vec<bool>,
    pub bob_key: Vec<bool>,
    /// Valid resolved tags (for ground-truth bookkeeping downstream).
    pub resolved: Vec<TaggedEvent>,
}

fn sort_events(events: &mut [DetectionRecord]) {
    events.sort_by_key(|e| (e.timestamp_ps, e.detector as u8));
}

/// Simulate one round end to end.
pub fn run_round(cfg: &ExperimentConfig, round: u64) -> Result<RoundOutput> {
    cfg.validate()?;
    let streams = Streams::new(cfg.seed);
    let n = cfg.round_pulses as usize;
    let period = cfg.source.period_ps();

    // Source.
    let mut encode_rng = streams.stream(round, StreamDomain::Encoding);
    let train = generate_pulse_train(&cfg.source, &mut encode_rng, n);

    // Channel.
    let link = cfg.water_table.build_link(
        cfg.water,
        cfg.wavelength_nm,
        cfg.distance_m,
        cfg.system_db,
    )?;

    let mut photon_rng = streams.stream(round, StreamDomain::PhotonNumber);
    let mut channel_rng = streams.stream(round, StreamDomain::Channel);
    let mut adversary_rng = streams.stream(round, StreamDomain::Adversary);
    let mut meas_rng = streams.stream(round, StreamDomain::Measurement);

    let poisson_signal = Poisson::new(cfg.source.mu_signal).expect("mu_signal > 0");
    let poisson_decoy = Poisson::new(cfg.source.mu_decoy).expect("mu_decoy > 0");
    let attack_on = cfg.attack.kind != AttackKind::None;

    let mut photon_counts: Vec<u8> = Vec::with_capacity(n);
    let mut events: Vec<DetectionRecord> = Vec::new();

    for i in 0..n {
        let rec = train.record(i);
        let k = match rec.class {
            crate::transmitter::IntensityClass::Signal => {
                poisson_signal.sample(&mut photon_rng) as u32
            }
            crate::transmitter::IntensityClass::Decoy => {
                poisson_decoy.sample(&mut photon_rng) as u32
            }
            crate::transmitter::IntensityClass::Vacuum => 0,
        };
        photon_counts.push(k.min(255) as u8);

        let (pol, photons, eta) = if attack_on {
            let fwd = adversary::apply(&cfg.attack, rec.polarization, k, &mut adversary_rng);
            (
                fwd.polarization,
                fwd.photons,
                fwd.bypass_transmittance.unwrap_or(link.transmittance),
            )
        } else {
            (rec.polarization, k, link.transmittance)
        };

        if photons == 0 {
            continue;
        }
        let survivors = survive_photons(photons, eta, &mut channel_rng);
        if survivors == 0 {
            continue;
        }
        if let Some(det) = measure(survivors, pol, rec.time_ps, &cfg.detector, &mut meas_rng) {
            events.push(det);
        }
    }

    // Detector noise (D1-D4).
    let mut noise_rng = streams.stream(round, StreamDomain::Noise);
    events.extend(inject_noise(cfg.round_seconds(), &cfg.detector, &mut noise_rng));

    // Beacon channel (D5): thinned ticks plus stray counts.
    let mut sync_rng = streams.stream(round, StreamDomain::SyncChannel);
    let duration_ps = n as i64 * period;
    let n_sync = n.div_ceil(100);
    for k in 0..n_sync {
        if sync_rng.random::<f64>() < cfg.sync.detect_prob {
            let arrival = k as i64 * 100 * period;
            events.push(DetectionRecord {
                detector: DetectorId::D5,
                timestamp_ps: timestamp_with_jitter(arrival, &cfg.detector, &mut sync_rng),
                origin: EventOrigin::Sync,
            });
        }
    }
    let n_d5_noise =
        crate::receiver::poisson_count(cfg.sync.noise_hz * cfg.round_seconds(), &mut sync_rng);
    for _ in 0..n_d5_noise {
        events.push(DetectionRecord {
            detector: DetectorId::D5,
            timestamp_ps: quantize(sync_rng.random_range(0..duration_ps), cfg.detector.tdc_bin_ps()),
            origin: EventOrigin::Dark,
        });
    }

    // Receiver clock scale hook; grid recovery assumes this stays at zero.
    if cfg.sync.clock_ppm != 0.0 {
        let factor = 1.0 + cfg.sync.clock_ppm * 1e-6;
        for e in events.iter_mut() {
            e.timestamp_ps = quantize(
                (e.timestamp_ps as f64 * factor).round() as i64,
                cfg.detector.tdc_bin_ps(),
            );
        }
    }

    sort_events(&mut events);

    let processed = process_events(cfg, round, &train, &events)?;

    // Ground truth by source photon number, using the protocol's own notion
    // of a detection (valid resolved tag).
    let mut truth = TruthTally::default();
    for &k in &photon_counts {
        truth.record_sent(k as u32);
    }
    for ev in &processed.resolved {
        if ev.global_index >= train.len() as u64 {
            continue;
        }
        let rec = train.record(ev.global_index as usize);
        let k = photon_counts[ev.global_index as usize] as u32;
        let (matched, error) = match (ev.detection.detector.basis(), ev.detection.detector.bit()) {
            (Some(basis), Some(bit)) if basis == rec.basis() => (true, bit != rec.bit()),
            _ => (false, false),
        };
        truth.record_detected(k, matched, error);
    }

    Ok(RoundOutput {
        report: processed.report,
        events,
        train,
        alice_key: processed.alice_key,
        bob_key: processed.bob_key,
        truth,
    })
}

/// Run sync recovery, tagging, sifting, reconciliation, privacy amplification
/// and decoy analysis over recorded events. Shared verbatim by the simulator
/// and the replay path, so a replayed session reproduces its report exactly.
pub fn process_events(
    cfg: &ExperimentConfig,
    round: u64,
    train: &PulseTrain,
    events: &[DetectionRecord],
) -> Result<ProcessedRound> {
    let streams = Streams::new(cfg.seed);
    let n = train.len();
    let period = cfg.source.period_ps();
    let sim_seconds = n as f64 / cfg.source.repetition_hz;

    let mut canonical: Vec<DetectionRecord> = events.to_vec();
    sort_events(&mut canonical);

    let d5: Vec<i64> = canonical
        .iter()
        .filter(|e| e.detector == DetectorId::D5)
        .map(|e| e.timestamp_ps)
        .collect();
    let signal_events: Vec<DetectionRecord> = canonical
        .iter()
        .filter(|e| e.detector != DetectorId::D5)
        .copied()
        .collect();

    let sync_params = SyncParams {
        nominal_period_ps: 100 * period,
        tolerance_ps: cfg.sync.tolerance_ps,
        tdc_bin_ps: cfg.detector.tdc_bin_ps(),
    };
    let grid = match recover_sync_grid_with_stats(&d5, &sync_params) {
        Ok((grid, _)) => grid.extend_to_span(0, n as i64 * period),
        Err(Error::UnrecoverableGrid { .. }) => {
            return Ok(aborted_round(
                cfg,
                round,
                n,
                sim_seconds,
                AbortReason::SyncUnrecoverable,
            ));
        }
        Err(e) => return Err(e),
    };

    let tag_params = TagParams {
        slot_period_ps: period,
        ..TagParams::default()
    };
    let tagged = assign_time_tags(&signal_events, &grid, &tag_params)?;
    let mut dclick_rng = streams.stream(round, StreamDomain::DoubleClick);
    let resolved = resolve_valid_tags(&tagged, &mut dclick_rng);

    let batch = sift(train, &resolved);
    let stats = batch.stats;
    let bounds = bound_single_photon(&stats, cfg.source.mu_signal, cfg.source.mu_decoy);

    let q_factor = match cfg.rate_q {
        RateQ::Measured => {
            let q = stats.sift_rate();
            if q > 0.0 {
                q
            } else {
                0.5
            }
        }
        RateQ::Fixed(q) => q,
    };
    let rate_per_pulse = gllp_rate(&stats, &bounds, q_factor, cfg.post.f_ec);
    let rate_raw = gllp_rate_raw(&stats, &bounds, q_factor, cfg.post.f_ec);

    let n_detected = resolved.len() as u64;
    let n_sifted = batch.len() as u64;

    let mut report = RoundReport {
        round,
        n_sent: n as u64,
        sim_seconds,
        n_detected,
        n_sifted,
        sift_rate: stats.sift_rate(),
        qber: 0.0,
        qber_estimate: 0.0,
        error_bits: 0,
        compared_bits: 0,
        sampled_bits: 0,
        leakage: 0,
        n_corrected: 0,
        n_final: 0,
        sifted_bps: n_sifted as f64 / sim_seconds,
        final_bps: 0.0,
        rate_per_pulse,
        rate_bps: rate_per_pulse * cfg.source.repetition_hz,
        rate_raw_per_pulse: rate_raw,
        q_factor,
        f_assumed: cfg.post.f_ec,
        f_measured: None,
        bounds: bounds.into(),
        class_stats: stats,
        aborted: false,
        abort_reason: None,
        keys_match: true,
    };

    // Error estimation.
    let sample_would_be = (batch.len() as f64 * cfg.post.sample_fraction).floor() as usize;
    if sample_would_be == 0 {
        report.aborted = true;
        report.abort_reason = Some(AbortReason::BatchTooSmall.name().to_string());
        return Ok(ProcessedRound {
            report,
            alice_key: Vec::new(),
            bob_key: Vec::new(),
            resolved,
        });
    }
    let mut qber_rng = streams.stream(round, StreamDomain::QberSample);
    let (est, remaining) = estimate_qber(&batch, cfg.post.sample_fraction, &mut qber_rng)?;
    report.qber_estimate = est.estimate;
    report.sampled_bits = est.sampled_bits;
    report.qber = est.estimate;
    report.error_bits = est.sample_errors;
    report.compared_bits = est.sampled_bits;

    if est.estimate >= cfg.post.qber_abort {
        report.aborted = true;
        report.abort_reason = Some(AbortReason::QberAboveThreshold.name().to_string());
        return Ok(ProcessedRound {
            report,
            alice_key: Vec::new(),
            bob_key: Vec::new(),
            resolved,
        });
    }

    // Reconciliation.
    let mut recon_rng = streams.stream(round, StreamDomain::Reconciliation);
    let cascade_cfg = CascadeConfig {
        passes: cfg.post.cascade_passes,
        ..CascadeConfig::default()
    };
    let cascade = correct_errors(
        &remaining.alice_bits,
        &remaining.bob_bits,
        est.estimate,
        &cascade_cfg,
        &mut recon_rng,
    );
    report.leakage = cascade.leakage_bits;
    report.n_corrected = cascade.corrected.len() as u64;
    report.f_measured = cascade.f_measured;
    report.error_bits = est.sample_errors + cascade.flips;
    report.compared_bits = est.sampled_bits + cascade.corrected.len() as u64;
    report.qber = report.error_bits as f64 / report.compared_bits as f64;

    if !cascade.verified {
        report.aborted = true;
        report.abort_reason = Some(AbortReason::VerificationFailed.name().to_string());
        return Ok(ProcessedRound {
            report,
            alice_key: Vec::new(),
            bob_key: Vec::new(),
            resolved,
        });
    }

    // Privacy amplification: both parties hash with the same shared seed.
    let n_final = final_length_from_rate(
        cascade.corrected.len(),
        &stats,
        &bounds,
        cascade.leakage_bits,
    );
    let pa_rng = streams.stream(round, StreamDomain::PrivacyAmplification);
    let alice_key = privacy_amplification(&remaining.alice_bits, n_final, &mut pa_rng.clone());
    let bob_key = privacy_amplification(&cascade.corrected, n_final, &mut pa_rng.clone());
    report.n_final = n_final as u64;
    report.final_bps = n_final as f64 / sim_seconds;
    report.keys_match = alice_key == bob_key;

    Ok(ProcessedRound {
        report,
        alice_key,
        bob_key,
        resolved,
    })
}

fn aborted_round(
    cfg: &ExperimentConfig,
    round: u64,
    n: usize,
    sim_seconds: f64,
    reason: AbortReason,
) -> ProcessedRound {
    let stats = GainStats::default();
    let bounds = bound_single_photon(&stats, cfg.source.mu_signal, cfg.source.mu_decoy);
    ProcessedRound {
        report: RoundReport {
            round,
            n_sent: n as u64,
            sim_seconds,
            n_detected: 0,
            n_sifted: 0,
            sift_rate: 0.0,
            qber: 0.0,
            qber_estimate: 0.0,
            error_bits: 0,
            compared_bits: 0,
            sampled_bits: 0,
            leakage: 0,
            n_corrected: 0,
            n_final: 0,
            sifted_bps: 0.0,
            final_bps: 0.0,
            rate_per_pulse: 0.0,
            rate_bps: 0.0,
            rate_raw_per_pulse: 0.0,
            q_factor: 0.0,
            f_assumed: cfg.post.f_ec,
            f_measured: None,
            bounds: bounds.into(),
            class_stats: stats,
            aborted: true,
            abort_reason: Some(reason.name().to_string()),
            keys_match: true,
        },
        alice_key: Vec::new(),
        bob_key: Vec::new(),
        resolved: Vec::new(),
    }
}

/// Aggregates over a multi-round run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: u32,
    pub aborted_rounds: u32,
    pub n_sifted_total: u64,
    pub n_final_total: u64,
    /// Exact pooled error rate over all compared bits of non-aborted rounds.
    pub qber_pooled: f64,
    pub mean_sifted_bps: f64,
    pub mean_final_bps: f64,
    pub mean_rate_bps: f64,
    pub keys_match_all: bool,
}

pub fn summarize(reports: &[RoundReport]) -> RunSummary {
    let rounds = reports.len() as u32;
    let aborted = reports.iter().filter(|r| r.aborted).count() as u32;
    let live: Vec<&RoundReport> = reports.iter().filter(|r| !r.aborted).collect();
    let errors: u64 = live.iter().map(|r| r.error_bits).sum();
    let compared: u64 = live.iter().map(|r| r.compared_bits).sum();
    let mean = |f: &dyn Fn(&RoundReport) -> f64| {
        if live.is_empty() {
            0.0
        } else {
            live.iter().map(|r| f(r)).sum::<f64>() / live.len() as f64
        }
    };
    RunSummary {
        rounds,
        aborted_rounds: aborted,
        n_sifted_total: reports.iter().map(|r| r.n_sifted).sum(),
        n_final_total: reports.iter().map(|r| r.n_final).sum(),
        qber_pooled: if compared == 0 {
            0.0
        } else {
            errors as f64 / compared as f64
        },
        mean_sifted_bps: mean(&|r| r.sifted_bps),
        mean_final_bps: mean(&|r| r.final_bps),
        mean_rate_bps: mean(&|r| r.rate_bps),
        keys_match_all: reports.iter().all(|r| r.keys_match),
    }
}

/// A full multi-round run (reports only; per-round artifacts are dropped).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRun {
    pub reports: Vec<RoundReport>,
    pub summary: RunSummary,
}

/// Run all configured rounds in parallel; output is ordered and identical
/// regardless of thread count.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<SimulationRun> {
    cfg.validate()?;
    let reports: Result<Vec<RoundReport>> = (0..cfg.rounds as u64)
        .into_par_iter()
        .map(|round| run_round(cfg, round).map(|out| out.report))
        .collect();
    let reports = reports?;
    let summary = summarize(&reports);
    Ok(SimulationRun { reports, summary })
}

/// Sync-layer test report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncTestReport {
    pub n_slots: u64,
    pub n_sync_sent: u64,
    pub n_sync_detected: u64,
    pub recovery: RecoveryStats,
    pub grid_exact: bool,
    pub n_signal_detections: u64,
    pub tag_valid_fraction: f64,
    pub tag_correct_fraction: f64,
    pub noise_events_probed: u64,
    pub noise_pass_rate: f64,
}

/// Exercise only the beacon recovery and tagging layers: thin the beacon by
/// the configured detection probability, add D5 stray counts, recover the
/// grid, and tag a directly sampled population of signal detections plus a
/// uniform-noise probe.
pub fn run_sync_test(cfg: &ExperimentConfig) -> Result<SyncTestReport> {
    cfg.validate()?;
    let streams = Streams::new(cfg.seed);
    let mut rng = streams.stream(0, StreamDomain::SyncChannel);
    let n = cfg.round_pulses;
    let period = cfg.source.period_ps();
    let duration_ps = n as i64 * period;
    let n_sync = n.div_ceil(100);

    let mut d5: Vec<i64> = Vec::new();
    let mut detected = 0u64;
    for k in 0..n_sync {
        if rng.random::<f64>() < cfg.sync.detect_prob {
            detected += 1;
            d5.push(timestamp_with_jitter(
                k as i64 * 100 * period,
                &cfg.detector,
                &mut rng,
            ));
        }
    }
    let n_noise = crate::receiver::poisson_count(cfg.sync.noise_hz * cfg.round_seconds(), &mut rng);
    for _ in 0..n_noise {
        d5.push(quantize(
            rng.random_range(0..duration_ps),
            cfg.detector.tdc_bin_ps(),
        ));
    }
    d5.sort_unstable();

    let sync_params = SyncParams {
        nominal_period_ps: 100 * period,
        tolerance_ps: cfg.sync.tolerance_ps,
        tdc_bin_ps: cfg.detector.tdc_bin_ps(),
    };
    let (grid, recovery) = recover_sync_grid_with_stats(&d5, &sync_params)?;
    let grid = grid.extend_to_span(0, duration_ps);
    let grid_exact = grid.phase_ps == 0
        && grid.start_ps == 0
        && grid.tick_count == n_sync
        && grid.period_ps == 100 * period;

    // Signal detections sampled directly at the end-to-end detection
    // probability (geometric slot skipping keeps this O(detections)).
    let link = cfg.water_table.build_link(
        cfg.water,
        cfg.wavelength_nm,
        cfg.distance_m,
        cfg.system_db,
    )?;
    let eta = link.transmittance * cfg.detector.collection_efficiency * cfg.detector.qe_450;
    let y0 = crate::decoy::window_noise_yield(&cfg.detector, TagParams::default().window_ps);
    let p_slot = 0.5 * (1.0 - (-cfg.source.mu_signal * eta).exp())
        + 0.25 * (1.0 - (-cfg.source.mu_decoy * eta).exp())
        + y0;

    let tag_params = TagParams {
        slot_period_ps: period,
        ..TagParams::default()
    };
    let mut genuine = 0u64;
    let mut valid = 0u64;
    let mut correct = 0u64;
    let mut slot: u64 = 0;
    if p_slot > 0.0 {
        loop {
            let u: f64 = rng.random();
            let skip = (u.ln() / (1.0 - p_slot).ln()).floor() as u64;
            slot = slot.saturating_add(skip);
            if slot >= n {
                break;
            }
            genuine += 1;
            let det = DetectionRecord {
                detector: DetectorId::D1,
                timestamp_ps: timestamp_with_jitter(slot as i64 * period, &cfg.detector, &mut rng),
                origin: EventOrigin::Signal,
            };
            let tags = assign_time_tags(&[det], &grid, &tag_params)?;
            if tags[0].valid {
                valid += 1;
                if tags[0].global_index == slot {
                    correct += 1;
                }
            }
            slot += 1;
        }
    }

    // Window-filter probe: uniform noise should pass at window/period.
    let probe = 100_000u64;
    let mut passed = 0u64;
    for _ in 0..probe {
        let det = DetectionRecord {
            detector: DetectorId::D2,
            timestamp_ps: quantize(rng.random_range(0..duration_ps), cfg.detector.tdc_bin_ps()),
            origin: EventOrigin::Background,
        };
        let tags = assign_time_tags(&[det], &grid, &tag_params)?;
        if tags[0].valid {
            passed += 1;
        }
    }

    Ok(SyncTestReport {
        n_slots: n,
        n_sync_sent: n_sync,
        n_sync_detected: detected,
        recovery,
        grid_exact,
        n_signal_detections: genuine,
        tag_valid_fraction: if genuine == 0 {
            0.0
        } else {
            valid as f64 / genuine as f64
        },
        tag_correct_fraction: if genuine == 0 {
            0.0
        } else {
            correct as f64 / genuine as f64
        },
        noise_events_probed: probe,
        noise_pass_rate: passed as f64 / probe as f64,
    })
}
