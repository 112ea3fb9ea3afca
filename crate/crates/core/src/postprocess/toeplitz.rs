//! Privacy amplification by Toeplitz hashing.
//!
//! The final key is `T x`, where `x` is the reconciled key and `T` is an
//! `m x n` Toeplitz matrix over GF(2) defined by `n + m - 1` seed bits drawn
//! from a shared stream. Both parties derive the same matrix from the same
//! seed, so identical inputs map to identical final keys.

use rand::Rng;

use crate::rng::RandomStream;

/// Compress `input` to `final_length` bits with a seed-determined random
/// Toeplitz matrix. Panics if `final_length > input.len()`; a zero
/// `final_length` yields the empty key (the round produced no secret bits).
pub fn privacy_amplification(
    input: &[bool],
    final_length: usize,
    rng: &mut RandomStream,
) -> Vec<bool> {
    let n = input.len();
    let m = final_length;
    assert!(m <= n, "cannot expand {n} bits to {m}");
    if m == 0 {
        return Vec::new();
    }

    // Seed bits r[0..n+m-1]; row i of T is r[i .. i+n] reversed, i.e.
    // out[i] = XOR_j input[j] & r[n - 1 + i - j].
    let seed = PackedBits::random(n + m - 1, rng);
    let x = PackedBits::from_bits(input);

    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        // Reverse-index the seed so the row becomes a contiguous window:
        // r[n-1+i-j] for j = 0..n is seed reversed, offset m-1-i.
        out.push(x.masked_parity(&seed, n - 1 + i));
    }
    out
}

/// Bit vector packed into u64 words, little-endian within a word.
struct PackedBits {
    words: Vec<u64>,
    len: usize,
}

impl PackedBits {
    fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1u64 << (i % 64);
            }
        }
        Self {
            words,
            len: bits.len(),
        }
    }

    fn random(len: usize, rng: &mut RandomStream) -> Self {
        let mut words: Vec<u64> = (0..len.div_ceil(64)).map(|_| rng.random()).collect();
        let tail = len % 64;
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Self { words, len }
    }

    fn word_at(&self, bit_offset: usize) -> u64 {
        let w = bit_offset / 64;
        let s = bit_offset % 64;
        let lo = self.words.get(w).copied().unwrap_or(0) >> s;
        if s == 0 {
            lo
        } else {
            lo | (self.words.get(w + 1).copied().unwrap_or(0) << (64 - s))
        }
    }

    /// Parity of `self[j] & other[top - j]` over all j, i.e. a GF(2) dot
    /// product against a reversed window of `other` ending at `top`.
    fn masked_parity(&self, other: &PackedBits, top: usize) -> bool {
        debug_assert!(top < other.len);
        let mut acc = 0u64;
        let n_words = self.words.len();
        for w in 0..n_words {
            let x = self.words[w];
            if x == 0 {
                continue;
            }
            // Bits j = 64w .. 64w+63 need other[top - j]; gather the window
            // other[top-64w-63 ..= top-64w] and reverse it.
            let hi_index = top as i64 - (64 * w) as i64;
            let window = reversed_window(other, hi_index);
            acc ^= x & window;
        }
        (acc.count_ones() & 1) == 1
    }
}

/// 64 bits of `bits` read downward from `hi_index` (bit i of the result is
/// `bits[hi_index - i]`); out-of-range positions read as zero.
fn reversed_window(bits: &PackedBits, hi_index: i64) -> u64 {
    let lo_index = hi_index - 63;
    // Grab the aligned forward window [lo_index, lo_index+64) then reverse.
    let forward = if lo_index >= 0 {
        bits.word_at(lo_index as usize)
    } else if hi_index < 0 {
        0
    } else {
        // Window straddles zero: only bits [0, hi_index] exist.
        bits.word_at(0) << (-lo_index as u32)
    };
    forward.reverse_bits()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamDomain, Streams};

    fn rng(seed: u64) -> RandomStream {
        Streams::new(seed).stream(0, StreamDomain::PrivacyAmplification)
    }

    /// Bit-by-bit reference implementation.
    fn reference(input: &[bool], m: usize, rng: &mut RandomStream) -> Vec<bool> {
        let n = input.len();
        let r: Vec<bool> = (0..(n + m - 1).div_ceil(64))
            .flat_map(|_| {
                let w: u64 = rng.random();
                (0..64).map(move |i| (w >> i) & 1 == 1)
            })
            .take(n + m - 1)
            .collect();
        // Match PackedBits::random exactly: it draws ceil((n+m-1)/64) words.
        (0..m)
            .map(|i| {
                let mut acc = false;
                for j in 0..n {
                    acc ^= input[j] & r[n - 1 + i - j];
                }
                acc
            })
            .collect()
    }

    #[test]
    fn matches_bitwise_reference() {
        for (n, m) in [(1usize, 1usize), (13, 5), (64, 64), (130, 40), (257, 100)] {
            let mut r1 = rng(n as u64 * 1000 + m as u64);
            let mut r2 = r1.clone();
            let input: Vec<bool> = (0..n).map(|_| r1.random()).collect();
            let got = privacy_amplification(&input, m, &mut r1);
            let _skip: Vec<bool> = (0..n).map(|_| r2.random()).collect();
            let want = reference(&input, m, &mut r2);
            assert_eq!(got, want, "n={n} m={m}");
        }
    }

    #[test]
    fn length_contract() {
        let mut r = rng(1);
        let input: Vec<bool> = (0..500).map(|_| r.random()).collect();
        assert_eq!(privacy_amplification(&input, 500, &mut r).len(), 500);
        assert_eq!(privacy_amplification(&input, 1, &mut r).len(), 1);
        assert!(privacy_amplification(&input, 0, &mut r).is_empty());
    }

    #[test]
    fn identical_inputs_and_seeds_agree() {
        let streams = Streams::new(5);
        let mut ra = streams.stream(0, StreamDomain::PrivacyAmplification);
        let mut rb = streams.stream(0, StreamDomain::PrivacyAmplification);
        let mut r = rng(2);
        let input: Vec<bool> = (0..1000).map(|_| r.random()).collect();
        let a = privacy_amplification(&input, 300, &mut ra);
        let b = privacy_amplification(&input, 300, &mut rb);
        assert_eq!(a, b);
    }

    #[test]
    fn avalanche_on_single_bit_flip() {
        // Flipping one input bit flips each output bit with probability 1/2
        // over random seeds; the mean flip fraction across 100 trials sits
        // within 0.5 +/- 0.05.
        let mut r = rng(3);
        let n = 400;
        let m = 128;
        let input: Vec<bool> = (0..n).map(|_| r.random()).collect();
        let mut flipped = input.clone();
        flipped[137] = !flipped[137];
        let mut total_frac = 0.0;
        let trials = 100;
        for t in 0..trials {
            let streams = Streams::new(1000 + t);
            let mut ra = streams.stream(0, StreamDomain::PrivacyAmplification);
            let mut rb = streams.stream(0, StreamDomain::PrivacyAmplification);
            let a = privacy_amplification(&input, m, &mut ra);
            let b = privacy_amplification(&flipped, m, &mut rb);
            let flips = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            total_frac += flips as f64 / m as f64;
        }
        let mean = total_frac / trials as f64;
        assert!((mean - 0.5).abs() < 0.05, "avalanche fraction {mean}");
    }

    #[test]
    fn monobit_balance_over_runs() {
        let mut r = rng(4);
        let input: Vec<bool> = (0..1000).map(|_| r.random()).collect();
        let mut ones = 0usize;
        let mut total = 0usize;
        for t in 0..100u64 {
            let mut rt = rng(5000 + t);
            let out = privacy_amplification(&input, 250, &mut rt);
            ones += out.iter().filter(|&&b| b).count();
            total += out.len();
        }
        let frac = ones as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.02, "ones fraction {frac}");
    }
}
