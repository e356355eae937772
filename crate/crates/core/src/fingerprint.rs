//! Fixed-length binary fingerprints and the similarity measures defined on them.
//!
//! A [`Fingerprint`] is a packed bit vector. Bit `i` lives in word `i / 64` at
//! position `i % 64`; bits past the logical length are always zero, so the
//! derived `Eq`/`Hash` are bit-exact over the logical contents.
//!
//! The canonical text form is a hex string of `len / 4` digits in which bit `i`
//! is bit `3 - i % 4` of digit `i / 4`, i.e. the first fingerprint position is
//! the most significant bit of the first digit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const WORD_BITS: usize = 64;

/// Errors from constructing or combining fingerprints.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint length must be positive")]
    ZeroLength,
    #[error("fingerprint length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("fingerprint length {0} is not a multiple of 4 and has no hex form")]
    NotHexAligned(usize),
    #[error("invalid hex digit {digit:?} at offset {offset}")]
    InvalidHex { digit: char, offset: usize },
    #[error("expected a hex string of {expected} digits, got {actual}")]
    HexLength { expected: usize, actual: usize },
    #[error("diversity needs at least 2 fingerprints, got {0}")]
    TooFewForDiversity(usize),
}

/// A fixed-length binary vector.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint {
    len: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    /// All-zero fingerprint of `len` bits.
    pub fn zeros(len: usize) -> Result<Self, FingerprintError> {
        if len == 0 {
            return Err(FingerprintError::ZeroLength);
        }
        Ok(Self {
            len,
            words: vec![0; len.div_ceil(WORD_BITS)],
        })
    }

    /// All-one fingerprint of `len` bits.
    pub fn ones(len: usize) -> Result<Self, FingerprintError> {
        let mut fp = Self::zeros(len)?;
        fp.words.iter_mut().for_each(|w| *w = u64::MAX);
        fp.clear_tail();
        Ok(fp)
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Result<Self, FingerprintError> {
        let bits: Vec<bool> = bits.into_iter().collect();
        let mut fp = Self::zeros(bits.len())?;
        for (i, b) in bits.into_iter().enumerate() {
            fp.set(i, b);
        }
        Ok(fp)
    }

    /// Parses a string of `0`/`1` characters, e.g. `"1100"`. Mostly handy in tests.
    pub fn from_bit_str(s: &str) -> Result<Self, FingerprintError> {
        let mut bits = Vec::with_capacity(s.len());
        for (offset, c) in s.chars().enumerate() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                digit => return Err(FingerprintError::InvalidHex { digit, offset }),
            }
        }
        Self::from_bits(bits)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; fingerprints have positive length.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        self.words[i / WORD_BITS] ^= 1u64 << (i % WORD_BITS);
    }

    /// Number of set bits.
    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Indices of the set bits in increasing order.
    pub fn ones_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD_BITS + tz)
            })
        })
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.iter().collect()
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    pub(crate) fn from_words(len: usize, words: Vec<u64>) -> Self {
        debug_assert_eq!(words.len(), len.div_ceil(WORD_BITS));
        let mut fp = Self { len, words };
        fp.clear_tail();
        fp
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    fn check_len(&self, other: &Self) -> Result<(), FingerprintError> {
        if self.len == other.len {
            Ok(())
        } else {
            Err(FingerprintError::LengthMismatch {
                left: self.len,
                right: other.len,
            })
        }
    }

    /// Popcount of `self & other`.
    pub fn intersection_count(&self, other: &Self) -> Result<usize, FingerprintError> {
        self.check_len(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    /// Popcount of `self | other`.
    pub fn union_count(&self, other: &Self) -> Result<usize, FingerprintError> {
        self.check_len(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum())
    }

    /// Canonical lowercase hex serialization.
    pub fn to_hex(&self) -> Result<String, FingerprintError> {
        if self.len % 4 != 0 {
            return Err(FingerprintError::NotHexAligned(self.len));
        }
        const DIGITS: &[u8; 16] = b"0123456789abcdef";
        let mut out = String::with_capacity(self.len / 4);
        for d in 0..self.len / 4 {
            let base = 4 * d;
            let nibble = (u8::from(self.get(base)) << 3)
                | (u8::from(self.get(base + 1)) << 2)
                | (u8::from(self.get(base + 2)) << 1)
                | u8::from(self.get(base + 3));
            out.push(DIGITS[nibble as usize] as char);
        }
        Ok(out)
    }

    /// Parses the canonical hex form; the length is `4 * hex.len()`. Either case is accepted.
    pub fn from_hex(hex: &str) -> Result<Self, FingerprintError> {
        let mut fp = Self::zeros(hex.len() * 4)?;
        for (offset, c) in hex.chars().enumerate() {
            let nibble = c
                .to_digit(16)
                .ok_or(FingerprintError::InvalidHex { digit: c, offset })?;
            let base = 4 * offset;
            for k in 0..4 {
                if (nibble >> (3 - k)) & 1 == 1 {
                    fp.set(base + k, true);
                }
            }
        }
        Ok(fp)
    }

    /// Like [`Fingerprint::from_hex`], but also checks the decoded length.
    pub fn from_hex_with_len(hex: &str, len: usize) -> Result<Self, FingerprintError> {
        if len % 4 != 0 {
            return Err(FingerprintError::NotHexAligned(len));
        }
        if hex.len() != len / 4 {
            return Err(FingerprintError::HexLength {
                expected: len / 4,
                actual: hex.len(),
            });
        }
        Self::from_hex(hex)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 64 {
            let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
            write!(f, "Fingerprint({s})")
        } else {
            write!(
                f,
                "Fingerprint(len={}, ones={})",
                self.len,
                self.count_ones()
            )
        }
    }
}

impl FromStr for Fingerprint {
    type Err = FingerprintError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_hex(s)
    }
}

/// Which similarity measure to use where a choice exists (diversity, hidden-target scoring).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    /// `|a ∧ b| / |a ∨ b|`.
    #[default]
    Tanimoto,
    /// `a·b / (‖a‖₂ ‖b‖₂)`.
    Cosine,
}

impl SimilarityKind {
    pub fn similarity(self, a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
        match self {
            SimilarityKind::Tanimoto => tanimoto_similarity(a, b),
            SimilarityKind::Cosine => cosine_similarity(a, b),
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityKind::Tanimoto => "tanimoto",
            SimilarityKind::Cosine => "cosine",
        })
    }
}

/// Cosine similarity of two binary vectors. An all-zero operand yields `0.0`.
pub fn cosine_similarity(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    let dot = a.intersection_count(b)?;
    let (na, nb) = (a.count_ones(), b.count_ones());
    if na == 0 || nb == 0 {
        return Ok(0.0);
    }
    if dot == na && dot == nb {
        return Ok(1.0);
    }
    Ok(dot as f64 / ((na as f64).sqrt() * (nb as f64).sqrt()))
}

/// Tanimoto (Jaccard) similarity. Two all-zero operands yield `0.0`.
pub fn tanimoto_similarity(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    let inter = a.intersection_count(b)?;
    let union = a.union_count(b)?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// `1 - mean pairwise similarity` over all unordered pairs of `set`.
///
/// Averaging over ordered pairs gives the same value since both similarity
/// measures are symmetric.
pub fn diversity<'a, I>(set: I, sim: SimilarityKind) -> Result<f64, FingerprintError>
where
    I: IntoIterator<Item = &'a Fingerprint>,
{
    let set: Vec<&Fingerprint> = set.into_iter().collect();
    let n = set.len();
    if n < 2 {
        return Err(FingerprintError::TooFewForDiversity(n));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += sim.similarity(set[i], set[j])?;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(1.0 - total / pairs)
}

/// Number of positions where `a` and `b` differ.
pub fn hamming_distance(a: &Fingerprint, b: &Fingerprint) -> Result<usize, FingerprintError> {
    a.check_len(b)?;
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum())
}
