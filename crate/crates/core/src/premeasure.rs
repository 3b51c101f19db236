//! Premeasures: nonnegative evaluators on finite strings.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::bitstring::BitString;
use crate::error::{Error, Result};
use crate::measure::Measure;
use crate::order::Order;
use crate::value::{decide, rat, rat_u, Value, DEFAULT_PRECISION};

#[derive(Debug, Clone, PartialEq)]
pub enum PremeasureKind {
    /// `ρ(σ) = 2^(-h(|σ|))`, length-invariant.
    Hausdorff(Order),
    /// `ρ(σ) = μ(σ)` for a probability measure.
    Probability(Measure),
    /// Finite lookup table.
    Explicit(BTreeMap<BitString, BigRational>),
}

/// A premeasure together with the interval precision used for irrational
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct Premeasure {
    pub kind: PremeasureKind,
    pub precision: u32,
}

impl Premeasure {
    pub fn hausdorff(order: Order) -> Premeasure {
        Premeasure { kind: PremeasureKind::Hausdorff(order), precision: DEFAULT_PRECISION }
    }

    pub fn probability(measure: Measure) -> Premeasure {
        Premeasure { kind: PremeasureKind::Probability(measure), precision: DEFAULT_PRECISION }
    }

    pub fn explicit(table: BTreeMap<BitString, BigRational>) -> Premeasure {
        Premeasure { kind: PremeasureKind::Explicit(table), precision: DEFAULT_PRECISION }
    }

    pub fn lebesgue() -> Premeasure {
        Premeasure::probability(Measure::lebesgue())
    }

    pub fn with_precision(mut self, precision: u32) -> Premeasure {
        self.precision = precision;
        self
    }

    /// True when `ρ(σ)` depends only on `|σ|`.
    pub fn length_invariant(&self) -> bool {
        matches!(self.kind, PremeasureKind::Hausdorff(_))
    }

    pub fn eval(&self, s: &BitString) -> Result<Value> {
        self.eval_prec(s, self.precision)
    }

    pub fn eval_prec(&self, s: &BitString, precision: u32) -> Result<Value> {
        match &self.kind {
            PremeasureKind::Hausdorff(h) => self.level_value_prec(s.len(), precision),
            PremeasureKind::Probability(m) => Ok(Value::exact(m.mass(s)?)),
            PremeasureKind::Explicit(t) => t
                .get(s)
                .map(|v| Value::exact(v.clone()))
                .ok_or_else(|| Error::OutOfDomain(format!("{s} is not in the explicit table"))),
        }
    }

    /// Level value `2^(-h(n))` for the length-invariant variant.
    pub fn level_value_prec(&self, n: u32, precision: u32) -> Result<Value> {
        match &self.kind {
            PremeasureKind::Hausdorff(h) => {
                let e = -h.eval(n)?;
                Ok(Value::pow2(&e, precision))
            }
            _ => Err(Error::OutOfDomain("not a length-invariant premeasure".into())),
        }
    }

    /// The rational-representation oracle: `q1 < ρ(σ) < q2`, strict.
    /// Escalates the interval precision until the two comparisons decide.
    pub fn rational_rep_query(
        &self,
        s: &BitString,
        q1: &BigRational,
        q2: &BigRational,
    ) -> Result<bool> {
        if q1 >= q2 {
            return Err(Error::Precondition("rational representation needs q1 < q2".into()));
        }
        decide("rational representation query", self.precision, |prec| {
            let v = match self.eval_prec(s, prec) {
                Ok(v) => v,
                Err(_) => return Some(false),
            };
            match (v.gt(q1), v.lt(q2)) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            }
        })
    }
}

/// Witnesses or refutation for the geometrical premeasure conditions: decay
/// `ρ(σi) ≤ p·ρ(σ)` with `1/2 ≤ p < 1` and near-additivity
/// `q·ρ(σ) ≤ ρ(σ0) + ρ(σ1)` with `1 ≤ q < 2`.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum GeometricalCheck {
    Geometrical { p: Value, q: Value },
    Violation { node: BitString, clause: String },
}

impl GeometricalCheck {
    pub fn is_geometrical(&self) -> bool {
        matches!(self, GeometricalCheck::Geometrical { .. })
    }
}

/// Checks (decay, near-additivity) on all nodes to depth `up_to` and returns
/// the tightest admissible witnesses, or the first violation.
pub fn check_geometrical(rho: &Premeasure, up_to: u32) -> Result<GeometricalCheck> {
    match &rho.kind {
        PremeasureKind::Hausdorff(h) => {
            // Ratios live in exponent space: child/parent = 2^(h(n)-h(n+1)),
            // so the clauses reduce to 0 < h(n+1)-h(n) <= 1, decided exactly.
            let mut min_step: Option<(BigRational, u32)> = None;
            let mut max_step: Option<(BigRational, u32)> = None;
            let mut prev = h.eval(0)?;
            for n in 0..up_to {
                let next = h.eval(n + 1)?;
                let step = &next - &prev;
                if min_step.as_ref().is_none_or(|(m, _)| &step < m) {
                    min_step = Some((step.clone(), n));
                }
                if max_step.as_ref().is_none_or(|(m, _)| &step > m) {
                    max_step = Some((step.clone(), n));
                }
                prev = next;
            }
            let (min_step, min_at) = min_step.ok_or(Error::Precondition("depth must be >= 1".into()))?;
            let (max_step, max_at) = max_step.unwrap();
            if min_step <= BigRational::zero() {
                // Child does not shrink below the parent level.
                return Ok(GeometricalCheck::Violation {
                    node: BitString::EMPTY.extend_zeros(min_at),
                    clause: format!("G2: child/parent ratio is 2^({}) >= 1 at level {min_at}", -&min_step),
                });
            }
            if max_step > BigRational::one() {
                return Ok(GeometricalCheck::Violation {
                    node: BitString::EMPTY.extend_zeros(max_at),
                    clause: format!(
                        "G3: children sum to 2^({}) < 1 of the parent at level {max_at}",
                        BigRational::one() - &max_step
                    ),
                });
            }
            let p = Value::pow2(&-min_step, rho.precision);
            let q = Value::pow2(&(BigRational::one() - max_step), rho.precision);
            Ok(GeometricalCheck::Geometrical { p, q })
        }
        _ => {
            // Per-node exact ratios.
            let mut p_tight = BigRational::zero();
            let mut q_tight: Option<BigRational> = None;
            let half = rat(1, 2);
            let two = rat_u(2);
            for n in 0..up_to {
                for s in BitString::level(n) {
                    let parent = rho.eval(&s)?.expect_exact();
                    let c0 = rho.eval(&s.child(0))?.expect_exact();
                    let c1 = rho.eval(&s.child(1))?.expect_exact();
                    if parent.is_zero() {
                        if !c0.is_zero() || !c1.is_zero() {
                            return Ok(GeometricalCheck::Violation {
                                node: s,
                                clause: "G2: positive child mass on a zero-mass parent".into(),
                            });
                        }
                        continue;
                    }
                    let ratio = c0.max(c1.clone()) / &parent;
                    if ratio > p_tight {
                        p_tight = ratio;
                    }
                    let sum_ratio = (c0 + c1) / &parent;
                    if q_tight.as_ref().is_none_or(|q| &sum_ratio < q) {
                        q_tight = Some(sum_ratio);
                    }
                    if p_tight >= BigRational::one() {
                        return Ok(GeometricalCheck::Violation {
                            node: s,
                            clause: "G2: child/parent ratio reaches 1".into(),
                        });
                    }
                }
            }
            let q_tight = q_tight.ok_or(Error::Precondition("depth must be >= 1".into()))?;
            if q_tight < BigRational::one() {
                return Ok(GeometricalCheck::Violation {
                    node: BitString::EMPTY,
                    clause: format!("G3: minimal children/parent sum ratio {q_tight} < 1"),
                });
            }
            debug_assert!(p_tight >= half && q_tight < two);
            Ok(GeometricalCheck::Geometrical {
                p: Value::exact(p_tight),
                q: Value::exact(q_tight),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::CylinderMeasure;
    use crate::value::pow2_rational;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn eval_examples() {
        let leb = Premeasure::lebesgue();
        assert_eq!(leb.eval(&bs("010")).unwrap().expect_exact(), rat(1, 8));

        let h = Premeasure::hausdorff(Order::linear(rat(1, 2)).unwrap());
        assert_eq!(h.eval(&bs("0101")).unwrap().expect_exact(), rat(1, 4));
        let v = h.eval(&bs("011")).unwrap();
        assert!(!v.is_exact());

        let table = Premeasure::explicit(BTreeMap::from([(bs("01"), rat(3, 7))]));
        assert_eq!(table.eval(&bs("01")).unwrap().expect_exact(), rat(3, 7));
        assert!(table.eval(&bs("10")).is_err());
    }

    #[test]
    fn length_invariance() {
        let h = Premeasure::hausdorff(Order::ceil_half(8));
        let a = h.eval(&bs("0110")).unwrap();
        let b = h.eval(&bs("1001")).unwrap();
        assert_eq!(a.expect_exact(), b.expect_exact());
    }

    #[test]
    fn rational_rep_examples() {
        let leb = Premeasure::lebesgue();
        assert!(leb.rational_rep_query(&bs("01"), &rat(1, 5), &rat(3, 10)).unwrap());
        assert!(!leb.rational_rep_query(&bs("01"), &rat(1, 4), &rat(1, 2)).unwrap());

        let h = Premeasure::hausdorff(Order::linear(rat(1, 2)).unwrap());
        assert!(h.rational_rep_query(&bs("0"), &rat(7, 10), &rat(8, 11)).unwrap());
    }

    #[test]
    fn geometrical_half_slope() {
        let rho = Premeasure::hausdorff(Order::linear(rat(1, 2)).unwrap());
        match check_geometrical(&rho, 10).unwrap() {
            GeometricalCheck::Geometrical { p, q } => {
                // p = 2^(-1/2), q = 2^(1/2)
                assert_eq!(p.lt(&rat(1, 1)), Some(true));
                assert_eq!(p.gt(&rat(7, 10)), Some(true));
                assert_eq!(q.gt(&rat(14, 10)), Some(true));
                assert_eq!(q.lt(&rat(15, 10)), Some(true));
            }
            other => panic!("expected witnesses, got {other:?}"),
        }
    }

    #[test]
    fn geometrical_lebesgue_premeasure() {
        let rho = Premeasure::hausdorff(Order::linear(rat(1, 1)).unwrap());
        match check_geometrical(&rho, 10).unwrap() {
            GeometricalCheck::Geometrical { p, q } => {
                assert_eq!(p.expect_exact(), rat(1, 2));
                assert_eq!(q.expect_exact(), rat(1, 1));
            }
            other => panic!("expected witnesses, got {other:?}"),
        }
    }

    #[test]
    fn geometrical_ceil_half_fails_g2() {
        let rho = Premeasure::hausdorff(Order::ceil_half(16));
        match check_geometrical(&rho, 10).unwrap() {
            GeometricalCheck::Violation { node, clause } => {
                // The flat step is h(1) -> h(2), i.e. parent level 1.
                assert_eq!(node.len(), 1);
                assert!(clause.starts_with("G2"));
            }
            other => panic!("expected a violation, got {other:?}"),
        }
    }

    #[test]
    fn geometrical_probability_table() {
        // Bernoulli(1/3) to depth 3.
        let mut leaves = BTreeMap::new();
        for s in BitString::level(3) {
            let ones = (0..3).filter(|&i| s.bit(i) == 1).count() as i64;
            let zeros = 3 - ones;
            let w = rat(1, 3).pow(ones as i32) * rat(2, 3).pow(zeros as i32);
            leaves.insert(s, w);
        }
        let m = CylinderMeasure::from_leaves(3, leaves).unwrap();
        let rho = Premeasure::probability(Measure::Table(m));
        match check_geometrical(&rho, 2).unwrap() {
            GeometricalCheck::Geometrical { p, q } => {
                assert_eq!(p.expect_exact(), rat(2, 3));
                assert_eq!(q.expect_exact(), rat(1, 1));
            }
            other => panic!("expected witnesses, got {other:?}"),
        }
    }

    #[test]
    fn geometrical_reverification() {
        // check_geometrical true implies the clauses hold pointwise.
        let rho = Premeasure::hausdorff(Order::linear(rat(1, 2)).unwrap());
        let GeometricalCheck::Geometrical { p, q } = check_geometrical(&rho, 6).unwrap() else {
            panic!("expected witnesses");
        };
        for n in 0..6u32 {
            let s = BitString::EMPTY.extend_zeros(n);
            let parent = rho.eval(&s).unwrap();
            let child = rho.eval(&s.child(1)).unwrap();
            // child <= p * parent holds on upper bounds within interval slack.
            let bound = p.mul(&parent);
            assert!(child.lower() <= bound.upper());
            let sum = child.add(&rho.eval(&s.child(0)).unwrap());
            let lhs = q.mul(&parent);
            assert!(lhs.lower() <= sum.upper());
        }
        let _ = pow2_rational(0);
    }
}
