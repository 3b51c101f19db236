//! Finite binary strings and the standard metric on Cantor space.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;
use crate::value::Value;

/// Longest representable string. Everything in this crate is depth-truncated,
/// so a fixed cap keeps strings `Copy` and comparisons branch-free.
pub const MAX_LEN: u32 = 120;

/// A finite binary string, stored big-endian in the low `len` bits of `bits`.
///
/// The derived `Ord` sorts by length first and lexicographically within a
/// length, i.e. level order on the binary tree.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    len: u8,
    bits: u128,
}

impl BitString {
    pub const EMPTY: BitString = BitString { len: 0, bits: 0 };

    pub fn new(len: u32, bits: u128) -> BitString {
        assert!(len <= MAX_LEN, "bit string too long");
        debug_assert!(len == 128 || bits >> len == 0);
        BitString { len: len as u8, bits }
    }

    pub fn len(&self) -> u32 {
        self.len as u32
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bit at position `i`, counted from the start of the string.
    pub fn bit(&self, i: u32) -> u8 {
        debug_assert!(i < self.len());
        ((self.bits >> (self.len() - 1 - i)) & 1) as u8
    }

    /// The one-bit extension `self⌢b`.
    pub fn child(&self, b: u8) -> BitString {
        assert!(self.len() < MAX_LEN, "bit string too long");
        debug_assert!(b <= 1);
        BitString { len: self.len + 1, bits: (self.bits << 1) | b as u128 }
    }

    /// Extends by `k` zero bits (the leftmost point of the cylinder).
    pub fn extend_zeros(&self, k: u32) -> BitString {
        assert!(self.len() + k <= MAX_LEN, "bit string too long");
        BitString { len: self.len + k as u8, bits: self.bits << k }
    }

    pub fn parent(&self) -> Option<BitString> {
        if self.len == 0 {
            None
        } else {
            Some(BitString { len: self.len - 1, bits: self.bits >> 1 })
        }
    }

    /// First `n` bits.
    pub fn truncate(&self, n: u32) -> BitString {
        debug_assert!(n <= self.len());
        BitString { len: n as u8, bits: self.bits >> (self.len() - n) }
    }

    /// Same string with the last bit flipped.
    pub fn sibling(&self) -> BitString {
        debug_assert!(self.len > 0);
        BitString { len: self.len, bits: self.bits ^ 1 }
    }

    pub fn is_prefix_of(&self, other: &BitString) -> bool {
        self.len <= other.len && other.bits >> (other.len() - self.len()) == self.bits
    }

    pub fn comparable(&self, other: &BitString) -> bool {
        self.is_prefix_of(other) || other.is_prefix_of(self)
    }

    /// Length of the longest common prefix.
    pub fn lcp_len(&self, other: &BitString) -> u32 {
        let common = self.len().min(other.len());
        let a = self.bits >> (self.len() - common);
        let b = other.bits >> (other.len() - common);
        let x = a ^ b;
        if x == 0 {
            common
        } else {
            // Highest set bit of the XOR marks the first disagreement.
            common - 1 - (127 - x.leading_zeros())
        }
    }

    /// Leading-zero count strippped representative: removes trailing zeros,
    /// the canonical name for the point `self⌢000…`.
    pub fn strip_trailing_zeros(&self) -> BitString {
        let tz = self.bits.trailing_zeros().min(self.len());
        BitString { len: self.len - tz as u8, bits: self.bits >> tz }
    }

    /// All strings of length `n` in lexicographic order. Only sensible for
    /// small `n`; callers guard with their own budgets.
    pub fn level(n: u32) -> impl Iterator<Item = BitString> {
        assert!(n <= 60, "level enumeration too large");
        (0..(1u128 << n)).map(move |bits| BitString { len: n as u8, bits })
    }

    /// Raw bits, for use as an index within a fixed level.
    pub fn raw_bits(&self) -> u128 {
        self.bits
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            write!(f, "{}", self.bit(i))?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{self}\"")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s.len() as u32 > MAX_LEN {
            return Err(Error::Parse(format!("bit string longer than {MAX_LEN}")));
        }
        let mut out = BitString::EMPTY;
        for c in s.chars() {
            match c {
                '0' => out = out.child(0),
                '1' => out = out.child(1),
                _ => return Err(Error::Parse(format!("invalid bit {c:?} in {s:?}"))),
            }
        }
        Ok(out)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Distance between the cylinders named by two strings.
#[derive(Debug, Clone)]
pub struct CantorDistance {
    pub value: Value,
    /// False when one string is a prefix of the other: the points could still
    /// agree forever, so only `0 ≤ d ≤ 2^(-common length)` is known.
    pub resolved: bool,
}

/// Distance `2^(-i)` where `i` is the first disagreement, or an unresolved
/// zero when one string is a prefix of the other. Infinite sequences are
/// never simulated; everything is read off the finite prefixes.
pub fn cantor_distance(a: &BitString, b: &BitString) -> CantorDistance {
    let lcp = a.lcp_len(b);
    if lcp < a.len().min(b.len()) {
        CantorDistance { value: Value::exact_pow2(-(lcp as i64)), resolved: true }
    } else {
        CantorDistance { value: Value::zero(), resolved: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn rat(s: &str) -> BigRational {
        s.parse().unwrap()
    }

    #[test]
    fn prefix_and_lcp() {
        assert!(bs("01").is_prefix_of(&bs("0110")));
        assert!(!bs("10").is_prefix_of(&bs("0110")));
        assert_eq!(bs("0101").lcp_len(&bs("0110")), 2);
        assert_eq!(bs("0110").lcp_len(&bs("0110")), 4);
        assert_eq!(bs("0").lcp_len(&bs("1")), 0);
        assert_eq!(BitString::EMPTY.lcp_len(&bs("1")), 0);
    }

    #[test]
    fn distance_examples() {
        let d = cantor_distance(&bs("0101"), &bs("0110"));
        assert!(d.resolved);
        assert_eq!(d.value.expect_exact(), rat("1/4"));

        let d = cantor_distance(&bs("0110"), &bs("0110"));
        assert!(!d.resolved);
        assert_eq!(d.value.expect_exact(), rat("0"));

        let d = cantor_distance(&bs("0111"), &bs("1000"));
        assert!(d.resolved);
        assert_eq!(d.value.expect_exact(), rat("1"));
    }

    #[test]
    fn level_order() {
        let mut v = vec![bs("1"), bs("00"), bs(""), bs("0"), bs("01")];
        v.sort();
        assert_eq!(v, vec![bs(""), bs("0"), bs("1"), bs("00"), bs("01")]);
    }

    #[test]
    fn string_roundtrip() {
        for s in ["", "0", "1", "0101", "1111111100000000"] {
            assert_eq!(bs(s).to_string(), s);
        }
        assert!("012".parse::<BitString>().is_err());
    }

    #[test]
    fn strip_trailing() {
        assert_eq!(bs("0100").strip_trailing_zeros(), bs("01"));
        assert_eq!(bs("000").strip_trailing_zeros(), BitString::EMPTY);
        assert_eq!(bs("011").strip_trailing_zeros(), bs("011"));
    }
}
