//! Deterministic, splittable random streams.
//!
//! Every stochastic stage of the pipeline draws from its own substream derived
//! from `(master seed, round, domain)`. Results are therefore bit-reproducible
//! for a given seed regardless of evaluation order, and rounds can run on
//! separate threads without sharing generator state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// One generator instance handed to a pipeline stage.
pub type RandomStream = ChaCha12Rng;

/// Logical consumers of randomness within one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamDomain {
    /// 4-bit word stream driving the encoder.
    Encoding = 1,
    /// Photon-number draws at the source.
    PhotonNumber = 2,
    /// Per-photon channel survival.
    Channel = 3,
    /// Eavesdropper choices.
    Adversary = 4,
    /// Beamsplitter routing, detector firing and timing jitter.
    Measurement = 5,
    /// Dark counts and optical background on the signal detectors.
    Noise = 6,
    /// Sync-pulse survival, jitter and D5 noise.
    SyncChannel = 7,
    /// Double-click tie breaking.
    DoubleClick = 8,
    /// Error-estimation sample positions.
    QberSample = 9,
    /// Reconciliation shuffles and verification hash key.
    Reconciliation = 10,
    /// Toeplitz seed bits for privacy amplification.
    PrivacyAmplification = 11,
}

/// Factory for per-(round, domain) substreams of one master seed.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive the substream for `domain` within `round`.
    pub fn stream(&self, round: u64, domain: StreamDomain) -> RandomStream {
        self.stream_indexed(round, domain, 0)
    }

    /// Like [`Streams::stream`] with an extra index, e.g. one stream per detector.
    pub fn stream_indexed(&self, round: u64, domain: StreamDomain, index: u64) -> RandomStream {
        let mut key = [0u8; 32];
        let mut state = splitmix(self.seed ^ 0x243f_6a88_85a3_08d3);
        state = splitmix(state ^ round);
        state = splitmix(state ^ (domain as u64));
        state = splitmix(state ^ index);
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha12Rng::from_seed(key)
    }
}

/// SplitMix64 finalizer; mixes one 64-bit word into a well-distributed output.
fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
