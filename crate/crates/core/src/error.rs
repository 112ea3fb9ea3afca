use crate::channel::WaterType;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("water type {water:?} has no attenuation entry for {wavelength_nm} nm")]
    UnsupportedWavelength {
        water: WaterType,
        wavelength_nm: u32,
    },

    #[error("negative distance: {0} m")]
    NegativeDistance(f64),

    #[error("negative loss: {0} dB")]
    NegativeLoss(f64),

    #[error("sync grid unrecoverable: {accepted} event(s) accepted, need at least 2")]
    UnrecoverableGrid { accepted: usize },

    #[error("time-tag slot period {slot_period_ps} ps does not divide sync period {sync_period_ps} ps into 100 slots")]
    SlotPeriodMismatch {
        slot_period_ps: i64,
        sync_period_ps: i64,
    },

    #[error("sifted batch too small: {len} bits, sample would be empty")]
    BatchTooSmall { len: usize },

    #[error("binary entropy argument {0} outside [0, 1]")]
    EntropyDomain(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    CsvParse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
