//! Order functions `h: ℕ → ℚ≥0` driving Hausdorff premeasures `2^(-h(n))`.

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{parse_rational, rat_u};

/// A nondecreasing rational order, either linear `h(n) = s·n` or a finite
/// staircase table with an optional constant-slope tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Order {
    Linear { slope: BigRational },
    Table { values: Vec<BigRational>, tail_slope: Option<BigRational> },
}

impl Order {
    pub fn linear(slope: BigRational) -> Result<Order> {
        if slope.is_negative() {
            return Err(Error::Parse("order slope must be nonnegative".into()));
        }
        Ok(Order::Linear { slope })
    }

    pub fn table(values: Vec<BigRational>, tail_slope: Option<BigRational>) -> Result<Order> {
        if values.is_empty() {
            return Err(Error::Parse("order table must be nonempty".into()));
        }
        if values[0].is_negative() {
            return Err(Error::Parse("order values must be nonnegative".into()));
        }
        for w in values.windows(2) {
            if w[1] < w[0] {
                return Err(Error::Parse("order table must be nondecreasing".into()));
            }
        }
        if let Some(t) = &tail_slope {
            if t.is_negative() {
                return Err(Error::Parse("order tail slope must be nonnegative".into()));
            }
        }
        Ok(Order::Table { values, tail_slope })
    }

    pub fn eval(&self, n: u32) -> Result<BigRational> {
        match self {
            Order::Linear { slope } => Ok(slope * rat_u(n as u64)),
            Order::Table { values, tail_slope } => {
                if (n as usize) < values.len() {
                    Ok(values[n as usize].clone())
                } else if let Some(t) = tail_slope {
                    let last = values.last().unwrap();
                    let overshoot = rat_u(n as u64 - (values.len() as u64 - 1));
                    Ok(last + t * overshoot)
                } else {
                    Err(Error::OrderOutOfRange(n))
                }
            }
        }
    }

    /// True when the declared extension makes `h` unbounded.
    pub fn is_unbounded(&self) -> bool {
        match self {
            Order::Linear { slope } => slope.is_positive(),
            Order::Table { tail_slope, .. } => {
                tail_slope.as_ref().is_some_and(|t| t.is_positive())
            }
        }
    }

    /// Exact check of `h(n+1) ≤ h(n) + 1` for all `n < up_to`.
    pub fn is_convex(&self, up_to: u32) -> Result<bool> {
        let one = BigRational::one();
        let mut prev = self.eval(0)?;
        for n in 1..=up_to {
            let cur = self.eval(n)?;
            if cur > &prev + &one {
                return Ok(false);
            }
            prev = cur;
        }
        Ok(true)
    }

    /// First convexity violation below `up_to`, if any.
    pub fn convexity_violation(&self, up_to: u32) -> Result<Option<u32>> {
        let one = BigRational::one();
        let mut prev = self.eval(0)?;
        for n in 1..=up_to {
            let cur = self.eval(n)?;
            if cur > &prev + &one {
                return Ok(Some(n - 1));
            }
            prev = cur;
        }
        Ok(None)
    }

    /// True when `h(n)` is an integer for every `n ≤ up_to`.
    pub fn integer_valued_to(&self, up_to: u32) -> Result<bool> {
        for n in 0..=up_to {
            if !self.eval(n)?.is_integer() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// The order `n ↦ ⌈n/2⌉` as a staircase with a half-slope tail, tabulated
    /// to `table_len` entries.
    pub fn ceil_half(table_len: u32) -> Order {
        let values = (0..table_len.max(2))
            .map(|n| rat_u((n as u64).div_ceil(2)))
            .collect();
        Order::Table { values, tail_slope: Some(BigRational::new(1.into(), 2.into())) }
    }

    /// The zero order (`h ≡ 0`), handy as a degenerate probe.
    pub fn flat() -> Order {
        Order::Linear { slope: BigRational::zero() }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum OrderRepr {
    Linear {
        s: String,
    },
    Table {
        values: Vec<String>,
        #[serde(rename = "tailSlope", skip_serializing_if = "Option::is_none")]
        tail_slope: Option<String>,
    },
}

impl Serialize for Order {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            Order::Linear { slope } => OrderRepr::Linear { s: slope.to_string() },
            Order::Table { values, tail_slope } => OrderRepr::Table {
                values: values.iter().map(|v| v.to_string()).collect(),
                tail_slope: tail_slope.as_ref().map(|t| t.to_string()),
            },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Order {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = OrderRepr::deserialize(deserializer)?;
        let order = match repr {
            OrderRepr::Linear { s } => {
                Order::linear(parse_rational(&s).map_err(serde::de::Error::custom)?)
            }
            OrderRepr::Table { values, tail_slope } => {
                let vals = values
                    .iter()
                    .map(|v| parse_rational(v))
                    .collect::<Result<Vec<_>>>()
                    .map_err(serde::de::Error::custom)?;
                let tail = tail_slope
                    .map(|t| parse_rational(&t))
                    .transpose()
                    .map_err(serde::de::Error::custom)?;
                Order::table(vals, tail)
            }
        };
        order.map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::rat;

    #[test]
    fn eval_examples() {
        let h = Order::linear(rat(1, 1)).unwrap();
        assert_eq!(h.eval(5).unwrap(), rat(5, 1));
        let h = Order::linear(rat(1, 2)).unwrap();
        assert_eq!(h.eval(5).unwrap(), rat(5, 2));
        let h = Order::ceil_half(4);
        assert_eq!(h.eval(5).unwrap(), rat(3, 1));
        assert_eq!(h.eval(100).unwrap(), rat(50, 1));
    }

    #[test]
    fn table_without_tail_errors_past_end() {
        let h = Order::table(vec![rat(0, 1), rat(1, 1)], None).unwrap();
        assert!(h.eval(1).is_ok());
        assert!(matches!(h.eval(2), Err(Error::OrderOutOfRange(2))));
    }

    #[test]
    fn convexity_examples() {
        assert!(Order::linear(rat(1, 1)).unwrap().is_convex(100).unwrap());
        let jump = Order::table(vec![rat(0, 1), rat(2, 1), rat(2, 1), rat(4, 1)], None).unwrap();
        assert!(!jump.is_convex(3).unwrap());
        assert_eq!(jump.convexity_violation(3).unwrap(), Some(0));
        assert!(Order::ceil_half(8).is_convex(100).unwrap());
    }

    #[test]
    fn unboundedness() {
        assert!(Order::linear(rat(1, 3)).unwrap().is_unbounded());
        assert!(!Order::flat().is_unbounded());
        assert!(!Order::table(vec![rat(0, 1), rat(1, 1)], None).unwrap().is_unbounded());
        assert!(Order::ceil_half(4).is_unbounded());
    }

    #[test]
    fn json_roundtrip() {
        let h = Order::ceil_half(4);
        let js = serde_json::to_string(&h).unwrap();
        let back: Order = serde_json::from_str(&js).unwrap();
        assert_eq!(h, back);
        let lin: Order = serde_json::from_str(r#"{"kind":"linear","s":"1/2"}"#).unwrap();
        assert_eq!(lin, Order::linear(rat(1, 2)).unwrap());
        assert!(serde_json::from_str::<Order>(r#"{"kind":"linear","s":"-1"}"#).is_err());
    }
}
