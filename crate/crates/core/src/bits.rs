//! Fixed-width bit strings used for inputs, interval submissions and outputs.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A packed, fixed-length string of bits. Positions are 0-based.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitString {
    len: usize,
    words: Vec<u64>,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut s = BitString::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    /// Parses a string of `0`/`1` characters. Returns `None` on any other char.
    pub fn parse(text: &str) -> Option<Self> {
        let bits: Option<Vec<bool>> = text
            .chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect();
        bits.map(|b| BitString::from_bools(&b))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for width {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for width {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    /// Copies bits `[start, start + len)` into a new string.
    pub fn slice(&self, start: usize, len: usize) -> BitString {
        assert!(start + len <= self.len, "slice out of range");
        let mut out = BitString::zeros(len);
        if start % 64 == 0 {
            let first = start / 64;
            let n_words = len.div_ceil(64);
            out.words.copy_from_slice(&self.words[first..first + n_words]);
            out.clear_tail();
        } else {
            for i in 0..len {
                out.set(i, self.get(start + i));
            }
        }
        out
    }

    /// Writes `src` into positions `[start, start + src.len())`.
    pub fn splice(&mut self, start: usize, src: &BitString) {
        assert!(start + src.len <= self.len, "splice out of range");
        if start % 64 == 0 && (src.len % 64 == 0 || start + src.len == self.len) {
            let first = start / 64;
            let n_words = src.len.div_ceil(64);
            self.words[first..first + n_words].copy_from_slice(&src.words);
        } else {
            for i in 0..src.len {
                self.set(start + i, src.get(i));
            }
        }
    }

    /// Concatenation `self ‖ other`.
    pub fn concat(&self, other: &BitString) -> BitString {
        let mut out = BitString::zeros(self.len + other.len);
        out.splice(0, self);
        out.splice(self.len, other);
        out
    }

    /// Bitwise complement.
    pub fn complement(&self) -> BitString {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        out.clear_tail();
        out
    }

    /// Bitwise xor with a string of the same width.
    pub fn xor(&self, other: &BitString) -> BitString {
        assert_eq!(self.len, other.len, "xor of unequal widths");
        let mut out = self.clone();
        for (w, o) in out.words.iter_mut().zip(&other.words) {
            *w ^= o;
        }
        out
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Smallest position where the two strings differ.
    pub fn first_difference(&self, other: &BitString) -> Option<usize> {
        assert_eq!(self.len, other.len, "comparison of unequal widths");
        self.words
            .iter()
            .zip(&other.words)
            .enumerate()
            .find(|(_, (a, b))| a != b)
            .map(|(w, (a, b))| w * 64 + (a ^ b).trailing_zeros() as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

/// Shorter strings first, then lexicographic from position 0.
impl Ord for BitString {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.len.cmp(&other.len).then_with(|| {
            self.first_difference(other)
                .map_or(std::cmp::Ordering::Equal, |i| self.get(i).cmp(&other.get(i)))
        })
    }
}

impl PartialOrd for BitString {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitString({self})")
        } else {
            write!(f, "BitString(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

/// Partial knowledge of an n-bit array: each position is unknown or known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialBits {
    known: BitString,
    value: BitString,
    known_count: usize,
}

impl PartialBits {
    pub fn unknown(len: usize) -> Self {
        PartialBits {
            known: BitString::zeros(len),
            value: BitString::zeros(len),
            known_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        self.known.get(i).then(|| self.value.get(i))
    }

    pub fn is_known(&self, i: usize) -> bool {
        self.known.get(i)
    }

    /// Records a value. Returns `false` if the position already held a
    /// different value (callers treat that as an invariant violation).
    pub fn set(&mut self, i: usize, b: bool) -> bool {
        if self.known.get(i) {
            return self.value.get(i) == b;
        }
        self.known.set(i, true);
        self.value.set(i, b);
        self.known_count += 1;
        true
    }

    pub fn known_count(&self) -> usize {
        self.known_count
    }

    pub fn unknown_count(&self) -> usize {
        self.len() - self.known_count
    }

    pub fn is_complete(&self) -> bool {
        self.known_count == self.len()
    }

    pub fn unknown_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| !self.known.get(i))
    }

    /// The full string once every position is known.
    pub fn to_complete(&self) -> Option<BitString> {
        self.is_complete().then(|| self.value.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_and_splice_round_trip() {
        let s = BitString::parse("1011001110001111000011111000001").unwrap();
        for start in 0..s.len() {
            for len in 0..=(s.len() - start) {
                let part = s.slice(start, len);
                let mut t = BitString::zeros(s.len());
                t.splice(start, &part);
                for i in 0..len {
                    assert_eq!(t.get(start + i), s.get(start + i));
                }
            }
        }
    }

    #[test]
    fn first_difference_finds_lowest_index() {
        let a = BitString::parse("0000").unwrap();
        let b = BitString::parse("0101").unwrap();
        assert_eq!(a.first_difference(&b), Some(1));
        assert_eq!(a.first_difference(&a), None);
    }

    #[test]
    fn complement_keeps_tail_clear() {
        let a = BitString::zeros(70).complement();
        assert_eq!(a.count_ones(), 70);
        assert_eq!(a, BitString::from_bools(&[true; 70]));
    }

    #[test]
    fn partial_bits_refuse_overwrite() {
        let mut p = PartialBits::unknown(3);
        assert!(p.set(1, true));
        assert!(p.set(1, true));
        assert!(!p.set(1, false));
        assert_eq!(p.known_count(), 1);
        assert_eq!(p.unknown_positions().collect::<Vec<_>>(), vec![0, 2]);
    }
}
