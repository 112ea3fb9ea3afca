//! Integer picosecond timebase.
//!
//! All event times are integer picoseconds. The 20 ns pulse period, the
//! 2000 ns sync period and the 64 ps TDC bin are all exact in this unit, so
//! timestamp arithmetic never drifts no matter how long the train runs.

/// Picoseconds per nanosecond.
pub const PS_PER_NS: i64 = 1_000;

/// Picoseconds per second.
pub const PS_PER_S: i64 = 1_000_000_000_000;

/// Signal pulse period at the 50 MHz repetition rate.
pub const SIGNAL_PERIOD_PS: i64 = 20_000;

/// Sync pulse period at the 500 kHz beacon rate (100 signal slots).
pub const SYNC_PERIOD_PS: i64 = 2_000_000;

/// TDC bin width.
pub const TDC_BIN_PS: i64 = 64;

/// Quantize a timestamp to the nearest multiple of `bin_ps` (half rounds up).
pub fn quantize(t_ps: i64, bin_ps: i64) -> i64 {
    debug_assert!(bin_ps > 0);
    (t_ps + bin_ps / 2).div_euclid(bin_ps) * bin_ps
}

/// Convert seconds to integer picoseconds (rounded).
pub fn seconds_to_ps(s: f64) -> i64 {
    (s * PS_PER_S as f64).round() as i64
}
