//! Exact-rational / interval value system.
//!
//! Every real quantity in this crate is either an exact rational or a pair of
//! rational bounds produced by directed rounding. Interval endpoints are kept
//! exact under ring operations, so the only source of width is `pow2` on a
//! non-integer exponent. Comparisons against a threshold return
//! `Some(true/false)` when the interval decides them and `None` when it
//! straddles.

use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_integer::Roots;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Default number of fractional bits for directed rounding.
pub const DEFAULT_PRECISION: u32 = 128;

/// Hard ceiling for precision escalation.
pub const MAX_PRECISION: u32 = 4096;

/// `2^k` as an exact rational, for any sign of `k`.
pub fn pow2_rational(k: i64) -> BigRational {
    if k >= 0 {
        BigRational::from_integer(BigInt::one() << k as usize)
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << (-k) as usize)
    }
}

/// Largest dyadic `m/2^prec ≤ x`.
pub fn dyadic_floor(x: &BigRational, prec: u32) -> BigRational {
    let scaled = x * pow2_rational(prec as i64);
    BigRational::new(scaled.floor().to_integer(), BigInt::one() << prec as usize)
}

/// Smallest dyadic `m/2^prec ≥ x`.
pub fn dyadic_ceil(x: &BigRational, prec: u32) -> BigRational {
    let scaled = x * pow2_rational(prec as i64);
    BigRational::new(scaled.ceil().to_integer(), BigInt::one() << prec as usize)
}

#[derive(Clone, PartialEq)]
pub enum Value {
    Exact(BigRational),
    Interval { lo: BigRational, hi: BigRational },
}

impl Value {
    pub fn zero() -> Value {
        Value::Exact(BigRational::zero())
    }

    pub fn one() -> Value {
        Value::Exact(BigRational::one())
    }

    pub fn exact(r: BigRational) -> Value {
        Value::Exact(r)
    }

    pub fn exact_pow2(k: i64) -> Value {
        Value::Exact(pow2_rational(k))
    }

    pub fn interval(lo: BigRational, hi: BigRational) -> Value {
        debug_assert!(lo <= hi);
        if lo == hi {
            Value::Exact(lo)
        } else {
            Value::Interval { lo, hi }
        }
    }

    /// `2^exp` with outward rounding to `prec` fractional bits. Exact when
    /// the exponent is an integer.
    pub fn pow2(exp: &BigRational, prec: u32) -> Value {
        if exp.is_integer() {
            let k = exp
                .to_integer()
                .to_i64()
                .expect("pow2 exponent out of range");
            return Value::exact_pow2(k);
        }
        let b = exp
            .denom()
            .to_u32()
            .expect("pow2 exponent denominator out of range");
        let a = exp.numer().to_i64().expect("pow2 exponent numerator out of range");
        // Choose k so that k*b + a >= b*prec; then floor(2^((kb+a)/b)) at
        // scale 2^k encloses 2^exp with width 2^-k <= 2^-prec.
        let mut k = prec as i64;
        if a < 0 {
            k += (-a) / b as i64 + 1;
        }
        let e = k * b as i64 + a;
        debug_assert!(e > 0);
        let root = (BigUint::one() << e as usize).nth_root(b);
        let denom = BigInt::one() << k as usize;
        let lo = BigRational::new(BigInt::from(root.clone()), denom.clone());
        let hi = BigRational::new(BigInt::from(root + BigUint::one()), denom);
        Value::interval(lo, hi)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Value::Exact(_))
    }

    pub fn lower(&self) -> &BigRational {
        match self {
            Value::Exact(r) => r,
            Value::Interval { lo, .. } => lo,
        }
    }

    pub fn upper(&self) -> &BigRational {
        match self {
            Value::Exact(r) => r,
            Value::Interval { hi, .. } => hi,
        }
    }

    pub fn width(&self) -> BigRational {
        self.upper() - self.lower()
    }

    pub fn expect_exact(&self) -> BigRational {
        match self {
            Value::Exact(r) => r.clone(),
            Value::Interval { .. } => panic!("expected exact value, got interval"),
        }
    }

    pub fn add(&self, other: &Value) -> Value {
        match (self, other) {
            (Value::Exact(a), Value::Exact(b)) => Value::Exact(a + b),
            _ => Value::interval(self.lower() + other.lower(), self.upper() + other.upper()),
        }
    }

    pub fn add_rational(&self, r: &BigRational) -> Value {
        match self {
            Value::Exact(a) => Value::Exact(a + r),
            Value::Interval { lo, hi } => Value::interval(lo + r, hi + r),
        }
    }

    /// Multiplication, assuming both operands are nonnegative (every quantity
    /// in this crate is).
    pub fn mul(&self, other: &Value) -> Value {
        debug_assert!(!self.lower().is_negative() && !other.lower().is_negative());
        match (self, other) {
            (Value::Exact(a), Value::Exact(b)) => Value::Exact(a * b),
            _ => Value::interval(self.lower() * other.lower(), self.upper() * other.upper()),
        }
    }

    pub fn mul_rational(&self, r: &BigRational) -> Value {
        debug_assert!(!r.is_negative());
        match self {
            Value::Exact(a) => Value::Exact(a * r),
            Value::Interval { lo, hi } => Value::interval(lo * r, hi * r),
        }
    }

    /// `1 - self`, for `self` enclosed in `[0, 1]`.
    pub fn one_minus(&self) -> Value {
        match self {
            Value::Exact(a) => Value::Exact(BigRational::one() - a),
            Value::Interval { lo, hi } => {
                Value::interval(BigRational::one() - hi, BigRational::one() - lo)
            }
        }
    }

    /// `1 / self`, requiring a strictly positive lower bound.
    pub fn recip_positive(&self) -> Value {
        assert!(self.lower().is_positive(), "reciprocal of a value not bounded away from 0");
        match self {
            Value::Exact(a) => Value::Exact(a.recip()),
            Value::Interval { lo, hi } => Value::interval(hi.recip(), lo.recip()),
        }
    }

    /// Enclosure of `min(self, other)`.
    pub fn min_enclose(&self, other: &Value) -> Value {
        match (self, other) {
            (Value::Exact(a), Value::Exact(b)) => Value::Exact(a.min(b).clone()),
            _ => Value::interval(
                self.lower().min(other.lower()).clone(),
                self.upper().min(other.upper()).clone(),
            ),
        }
    }

    /// Re-rounds interval endpoints outward to `prec` fractional bits.
    /// Exact values are never rounded.
    pub fn round_out(&self, prec: u32) -> Value {
        match self {
            Value::Exact(_) => self.clone(),
            Value::Interval { lo, hi } => {
                Value::interval(dyadic_floor(lo, prec), dyadic_ceil(hi, prec))
            }
        }
    }

    pub fn lt(&self, q: &BigRational) -> Option<bool> {
        match self {
            Value::Exact(a) => Some(a < q),
            Value::Interval { lo, hi } => {
                if hi < q {
                    Some(true)
                } else if lo >= q {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }

    pub fn le(&self, q: &BigRational) -> Option<bool> {
        match self {
            Value::Exact(a) => Some(a <= q),
            Value::Interval { lo, hi } => {
                if hi <= q {
                    Some(true)
                } else if lo > q {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }

    pub fn gt(&self, q: &BigRational) -> Option<bool> {
        self.le(q).map(|b| !b)
    }

    pub fn ge(&self, q: &BigRational) -> Option<bool> {
        self.lt(q).map(|b| !b)
    }

    /// `self ≤ other` when decidable.
    pub fn le_value(&self, other: &Value) -> Option<bool> {
        match (self, other) {
            (Value::Exact(a), Value::Exact(b)) => Some(a <= b),
            _ => {
                if self.upper() <= other.lower() {
                    Some(true)
                } else if self.lower() > other.upper() {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Value::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            Value::Interval { lo, hi } => {
                let (l, h) = (lo.to_f64().unwrap_or(f64::NAN), hi.to_f64().unwrap_or(f64::NAN));
                (l + h) / 2.0
            }
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Exact(r) => write!(f, "{r}"),
            Value::Interval { lo, hi } => write!(f, "[{lo}, {hi}]"),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Exact(r) => write!(f, "{r}"),
            Value::Interval { .. } => write!(f, "~{:.12}", self.to_f64()),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Value::Exact(r) => serializer.collect_str(r),
            Value::Interval { lo, hi } => {
                let mut s = serializer.serialize_struct("Interval", 3)?;
                s.serialize_field("lo", &lo.to_string())?;
                s.serialize_field("hi", &hi.to_string())?;
                s.serialize_field("decimal", &self.to_f64())?;
                s.end()
            }
        }
    }
}

/// Runs a comparison at escalating precision until it decides, starting at
/// `start` fractional bits and doubling up to [`MAX_PRECISION`].
pub fn decide<F>(context: &str, start: u32, mut probe: F) -> Result<bool>
where
    F: FnMut(u32) -> Option<bool>,
{
    let mut prec = start.max(1);
    loop {
        if let Some(b) = probe(prec) {
            return Ok(b);
        }
        if prec >= MAX_PRECISION {
            return Err(Error::Undecided { context: context.to_string(), precision: prec });
        }
        prec = (prec * 2).min(MAX_PRECISION);
    }
}

/// Parses a rational from `"p/q"` or `"p"` form.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let r: BigRational = s
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad rational {s:?}: {e}")))?;
    Ok(r.reduced())
}

/// Rational from an unsigned integer.
pub fn rat_u(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// `p/q` from machine integers.
pub fn rat(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

/// Floor of `log2` for a positive rational, used to size search brackets.
pub fn floor_log2(x: &BigRational) -> i64 {
    assert!(x.is_positive());
    let n = x.numer().abs().to_biguint().unwrap();
    let d = x.denom().abs().to_biguint().unwrap();
    // bits() difference is within 1 of log2; adjust exactly.
    let mut e = n.bits() as i64 - d.bits() as i64;
    while pow2_rational(e + 1) <= *x {
        e += 1;
    }
    while pow2_rational(e) > *x {
        e -= 1;
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> BigRational {
        parse_rational(s).unwrap()
    }

    #[test]
    fn pow2_integer_is_exact() {
        assert_eq!(Value::pow2(&r("3"), 128).expect_exact(), r("8"));
        assert_eq!(Value::pow2(&r("-2"), 128).expect_exact(), r("1/4"));
        assert_eq!(Value::pow2(&r("0"), 128).expect_exact(), r("1"));
    }

    #[test]
    fn pow2_half_encloses_sqrt2() {
        let v = Value::pow2(&r("1/2"), 128);
        assert!(!v.is_exact());
        // sqrt(2) = 1.41421356...
        assert!(v.lower() < &r("14142135624/10000000000"));
        assert!(v.upper() > &r("14142135623/10000000000"));
        assert!(v.width() <= pow2_rational(-128));
    }

    #[test]
    fn pow2_negative_fraction() {
        let v = Value::pow2(&r("-1/2"), 96);
        // 2^(-1/2) = 0.70710678...
        assert!(v.lower() < &r("70710678119/100000000000"));
        assert!(v.upper() > &r("70710678118/100000000000"));
        assert!(v.width() <= pow2_rational(-96));
    }

    #[test]
    fn comparisons_decide_or_abstain() {
        let v = Value::pow2(&r("-1/2"), 128);
        assert_eq!(v.lt(&r("7/10")), Some(false));
        assert_eq!(v.lt(&r("8/11")), Some(true));
        let wide = Value::interval(r("1/4"), r("3/4"));
        assert_eq!(wide.lt(&r("1/2")), None);
        assert_eq!(wide.le(&r("3/4")), Some(true));
        assert_eq!(wide.lt(&r("3/4")), None);
    }

    #[test]
    fn escalation_decides_close_cut() {
        // 2^(-1/2) vs a rational within 2^-40 of it: needs escalation past 32 bits.
        let target = Value::pow2(&r("-1/2"), 60).lower().clone();
        let out = decide("test", 8, |p| Value::pow2(&r("-1/2"), p).gt(&target)).unwrap();
        assert!(out);
    }

    #[test]
    fn floor_log2_values() {
        assert_eq!(floor_log2(&r("1")), 0);
        assert_eq!(floor_log2(&r("3/2")), 0);
        assert_eq!(floor_log2(&r("2")), 1);
        assert_eq!(floor_log2(&r("1/3")), -2);
        assert_eq!(floor_log2(&r("63/8")), 2);
    }

    #[test]
    fn interval_arithmetic_is_outward() {
        let a = Value::pow2(&r("1/2"), 128);
        let b = Value::pow2(&r("1/3"), 128);
        let s = a.add(&b);
        assert!(s.lower() <= &(a.lower() + b.lower()));
        assert!(s.upper() >= &(a.upper() + b.upper()));
        let p = a.mul_rational(&r("3/7"));
        assert_eq!(p.lower().clone(), a.lower() * r("3/7"));
    }
}
