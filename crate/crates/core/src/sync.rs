//! Sync-grid recovery and per-pulse time tagging.
//!
//! The 500 kHz beacon arrives at single-photon level, so only a fraction of
//! its pulses register on D5 and stray noise mixes in. Recovery exploits the
//! exact periodicity: histogram the event residues modulo the nominal period
//! to locate the phase, reject events off the candidate grid, refine the phase
//! from the accepted residuals, and fill in every missing tick across the
//! session. Signal events are then tagged with slot numbers inside their sync
//! interval; events outside the coincidence window are discarded as noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::receiver::DetectionRecord;
use crate::timebase::{SIGNAL_PERIOD_PS, SYNC_PERIOD_PS, TDC_BIN_PS};

/// Recovery parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyncParams {
    /// Nominal beacon period.
    pub nominal_period_ps: i64,
    /// Acceptance half-width around a candidate tick (~4 sigma of jitter).
    pub tolerance_ps: i64,
    /// TDC bin; the recovered phase snaps to this lattice since every
    /// timestamp lives on it.
    pub tdc_bin_ps: i64,
}

impl Default for SyncParams {
    fn default() -> Self {
        Self {
            nominal_period_ps: SYNC_PERIOD_PS,
            tolerance_ps: 1_000,
            tdc_bin_ps: TDC_BIN_PS,
        }
    }
}

/// Time-tag parameters (Eq.-style slot assignment).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TagParams {
    /// Signal slot period T.
    pub slot_period_ps: i64,
    /// Pre-offset centering the pulse in its window.
    pub pre_offset_ps: i64,
    /// Coincidence window width.
    pub window_ps: i64,
}

impl Default for TagParams {
    fn default() -> Self {
        Self {
            slot_period_ps: SIGNAL_PERIOD_PS,
            pre_offset_ps: 2_500,
            window_ps: 5_000,
        }
    }
}

/// The recovered beacon lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncGrid {
    pub period_ps: i64,
    /// Tick position modulo the period, in `[0, period)`.
    pub phase_ps: i64,
    /// First tick.
    pub start_ps: i64,
    pub tick_count: u64,
}

impl SyncGrid {
    pub fn tick(&self, k: u64) -> i64 {
        self.start_ps + k as i64 * self.period_ps
    }

    pub fn ticks(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.tick_count).map(move |k| self.tick(k))
    }

    pub fn last_tick(&self) -> i64 {
        self.tick(self.tick_count.saturating_sub(1))
    }

    /// Latest tick at or before `t`, clamped to the grid range.
    pub fn index_at_or_before(&self, t_ps: i64) -> Option<(u64, i64)> {
        if t_ps < self.start_ps || self.tick_count == 0 {
            return None;
        }
        let k = ((t_ps - self.start_ps) / self.period_ps) as u64;
        let k = k.min(self.tick_count - 1);
        Some((k, self.tick(k)))
    }

    /// Grow the grid so its ticks cover `[lo, hi)` on the same lattice.
    pub fn extend_to_span(&self, lo_ps: i64, hi_ps: i64) -> SyncGrid {
        let p = self.period_ps;
        let k_lo = (lo_ps - self.phase_ps).div_euclid(p) + i64::from((lo_ps - self.phase_ps).rem_euclid(p) != 0);
        let k_hi = (hi_ps - 1 - self.phase_ps).div_euclid(p);
        let cur_lo = (self.start_ps - self.phase_ps) / p;
        let cur_hi = (self.last_tick() - self.phase_ps) / p;
        let new_lo = k_lo.min(cur_lo);
        let new_hi = k_hi.max(cur_hi);
        SyncGrid {
            period_ps: p,
            phase_ps: self.phase_ps,
            start_ps: self.phase_ps + new_lo * p,
            tick_count: (new_hi - new_lo + 1).max(0) as u64,
        }
    }
}

/// Recovery diagnostics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub n_events: usize,
    pub n_accepted: usize,
    pub n_rejected: usize,
}

/// Recover the beacon grid from sparse, noisy D5 timestamps.
pub fn recover_sync_grid(d5_events: &[i64], params: &SyncParams) -> Result<SyncGrid> {
    recover_sync_grid_with_stats(d5_events, params).map(|(grid, _)| grid)
}

pub fn recover_sync_grid_with_stats(
    d5_events: &[i64],
    params: &SyncParams,
) -> Result<(SyncGrid, RecoveryStats)> {
    let p = params.nominal_period_ps;
    let tol = params.tolerance_ps.clamp(1, p / 2);
    if d5_events.len() < 2 {
        return Err(Error::UnrecoverableGrid {
            accepted: d5_events.len(),
        });
    }

    // 1. Histogram residues modulo the nominal period; the genuine cluster
    //    dominates any uniform noise. Score three adjacent bins circularly so
    //    a cluster straddling a bin edge still wins.
    let n_bins = ((p + tol - 1) / tol).max(1) as usize;
    let mut counts = vec![0u32; n_bins];
    for &t in d5_events {
        let r = t.rem_euclid(p);
        counts[(r / tol) as usize % n_bins] += 1;
    }
    let mut best_bin = 0;
    let mut best_score = 0u32;
    for b in 0..n_bins {
        let score =
            counts[b] + counts[(b + 1) % n_bins] + counts[(b + n_bins - 1) % n_bins];
        if score > best_score {
            best_score = score;
            best_bin = b;
        }
    }
    let mut phase = (best_bin as i64 * tol + tol / 2).rem_euclid(p);

    // 2/3. Accept events near the candidate grid, refine the phase from the
    //      mean accepted residual, snap to the TDC lattice, repeat once.
    let mut accepted = 0usize;
    for _ in 0..2 {
        let mut sum = 0i64;
        accepted = 0;
        for &t in d5_events {
            if let Some(res) = residual(t, phase, p, tol) {
                sum += res;
                accepted += 1;
            }
        }
        if accepted < 2 {
            return Err(Error::UnrecoverableGrid { accepted });
        }
        let mean = (sum as f64 / accepted as f64).round() as i64;
        phase = snap(phase + mean, params.tdc_bin_ps).rem_euclid(p);
    }

    // 4. Fill every tick between the first and last accepted event.
    let mut k_min = i64::MAX;
    let mut k_max = i64::MIN;
    for &t in d5_events {
        if residual(t, phase, p, tol).is_some() {
            let k = (t - phase + p / 2).div_euclid(p);
            k_min = k_min.min(k);
            k_max = k_max.max(k);
        }
    }
    let grid = SyncGrid {
        period_ps: p,
        phase_ps: phase,
        start_ps: phase + k_min * p,
        tick_count: (k_max - k_min + 1) as u64,
    };
    let stats = RecoveryStats {
        n_events: d5_events.len(),
        n_accepted: accepted,
        n_rejected: d5_events.len() - accepted,
    };
    Ok((grid, stats))
}

/// Signed distance from the nearest grid tick, when within tolerance.
fn residual(t: i64, phase: i64, period: i64, tol: i64) -> Option<i64> {
    let r = (t - phase + period / 2).rem_euclid(period) - period / 2;
    (r.abs() <= tol).then_some(r)
}

fn snap(t: i64, bin: i64) -> i64 {
    (t + bin / 2).div_euclid(bin) * bin
}

/// Why an event carries no usable tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvalidReason {
    /// Arrived before the first recovered tick.
    NoReference,
    /// Residual exceeded the coincidence window.
    OutsideWindow,
}

/// A detection with its recovered sequence position.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TaggedEvent {
    pub detection: DetectionRecord,
    /// Index of the reference tick.
    pub sync_index: u64,
    /// Slot within the sync interval, 0..=99.
    pub slot: u32,
    /// Global pulse sequence number, `100 * sync_index + slot` folded.
    pub global_index: u64,
    pub valid: bool,
    pub invalid_reason: Option<InvalidReason>,
}

/// Tag every signal detection against the recovered grid.
///
/// For an event at `t` with reference tick `t_sync` (the latest tick at or
/// before `t`): `n = floor((t - t_sync + pre_offset) / T)` with the event
/// valid iff the remainder is at most `window_ps`. A remainder landing in the
/// next interval (`n == 100`) is slot 0 of the following tick.
pub fn assign_time_tags(
    signal_events: &[DetectionRecord],
    grid: &SyncGrid,
    params: &TagParams,
) -> Result<Vec<TaggedEvent>> {
    if params.slot_period_ps * 100 != grid.period_ps {
        return Err(Error::SlotPeriodMismatch {
            slot_period_ps: params.slot_period_ps,
            sync_period_ps: grid.period_ps,
        });
    }
    let t_slot = params.slot_period_ps;
    let mut out = Vec::with_capacity(signal_events.len());
    for &det in signal_events {
        let tagged = match grid.index_at_or_before(det.timestamp_ps) {
            None => TaggedEvent {
                detection: det,
                sync_index: 0,
                slot: 0,
                global_index: 0,
                valid: false,
                invalid_reason: Some(InvalidReason::NoReference),
            },
            Some((k, t_sync)) => {
                let x = det.timestamp_ps - t_sync + params.pre_offset_ps;
                let n = x.div_euclid(t_slot);
                let r = x.rem_euclid(t_slot);
                let global = 100 * k + n as u64;
                let valid = r <= params.window_ps;
                TaggedEvent {
                    detection: det,
                    sync_index: global / 100,
                    slot: (global % 100) as u32,
                    global_index: global,
                    valid,
                    invalid_reason: (!valid).then_some(InvalidReason::OutsideWindow),
                }
            }
        };
        out.push(tagged);
    }
    Ok(out)
}
