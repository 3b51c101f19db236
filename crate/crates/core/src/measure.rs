//! Cylinder measures, dyadic point measures, and the metric on the space of
//! probability measures.
//!
//! Four measure representations share one interface:
//!
//! * `Table` — an explicit additive table of cylinder masses to a fixed depth.
//! * `Dyadic` — finitely many point masses at points `σ⌢000…`.
//! * `Natural` — even splitting among the live children of a pruned
//!   automaton tree, defined at every depth.
//! * `Flow` — an automaton tree with per-(state, depth) split ratios, the
//!   structured output of the max-flow construction.
//!
//! All masses are exact rationals. Where an operation must look below a
//! table's depth (the metric, Cauchy approximants), the table is extended by
//! the dyadic convention: each depth-level mass sits on the leftmost point of
//! its cylinder.

use std::collections::{BTreeMap, HashMap};

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize};

use crate::bitstring::BitString;
use crate::error::{Error, Result};
use crate::tree::{TreeAutomaton, TreeModel, NODE_BUDGET};
use crate::value::{parse_rational, pow2_rational};

/// Outcome of validating the probability-measure invariants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ProbabilityCheck {
    Valid,
    Violation { node: BitString, reason: String },
}

impl ProbabilityCheck {
    pub fn is_valid(&self) -> bool {
        matches!(self, ProbabilityCheck::Valid)
    }
}

/// Depth-truncated additive table of nonnegative cylinder masses. Only
/// nonzero entries are stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CylinderMeasure {
    depth: u32,
    mass: BTreeMap<BitString, BigRational>,
}

impl CylinderMeasure {
    /// Raw constructor; `validate_probability` reports violations.
    pub fn new(depth: u32, mass: BTreeMap<BitString, BigRational>) -> CylinderMeasure {
        let mass = mass.into_iter().filter(|(_, v)| !v.is_zero()).collect();
        CylinderMeasure { depth, mass }
    }

    /// Builds the table from depth-level masses, summing ancestors.
    pub fn from_leaves(
        depth: u32,
        leaves: BTreeMap<BitString, BigRational>,
    ) -> Result<CylinderMeasure> {
        let mut mass: BTreeMap<BitString, BigRational> = BTreeMap::new();
        for (leaf, w) in leaves {
            if leaf.len() != depth {
                return Err(Error::OutOfDomain(format!(
                    "leaf {leaf} has length {} but the table depth is {depth}",
                    leaf.len()
                )));
            }
            if w.is_negative() {
                return Err(Error::BoundViolation {
                    node: leaf,
                    detail: "negative mass".into(),
                });
            }
            if w.is_zero() {
                continue;
            }
            let mut cur = leaf;
            loop {
                *mass.entry(cur).or_insert_with(BigRational::zero) += &w;
                match cur.parent() {
                    Some(p) => cur = p,
                    None => break,
                }
            }
        }
        let m = CylinderMeasure { depth, mass };
        if m.mass(&BitString::EMPTY) != BigRational::one() {
            return Err(Error::Precondition("leaf masses must sum to 1".into()));
        }
        Ok(m)
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Mass of the cylinder at `s`; zero when absent from the table.
    pub fn mass(&self, s: &BitString) -> BigRational {
        debug_assert!(s.len() <= self.depth);
        self.mass.get(s).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&BitString, &BigRational)> {
        self.mass.iter()
    }

    pub fn level_entries(&self, n: u32) -> impl Iterator<Item = (&BitString, &BigRational)> {
        self.mass.iter().filter(move |(s, _)| s.len() == n)
    }

    /// Checks `m(ε) = 1`, nonnegativity, and exact additivity at every
    /// internal node; reports the first violating node in level order.
    pub fn validate_probability(&self) -> ProbabilityCheck {
        if self.mass(&BitString::EMPTY) != BigRational::one() {
            return ProbabilityCheck::Violation {
                node: BitString::EMPTY,
                reason: format!("root mass {} is not 1", self.mass(&BitString::EMPTY)),
            };
        }
        // Internal nodes with any nonzero mass nearby, in level order.
        let mut internal: BTreeMap<BitString, ()> = BTreeMap::new();
        for (s, v) in &self.mass {
            if v.is_negative() {
                return ProbabilityCheck::Violation { node: *s, reason: "negative mass".into() };
            }
            if s.len() < self.depth {
                internal.insert(*s, ());
            }
            if let Some(p) = s.parent() {
                internal.insert(p, ());
            }
        }
        for (s, _) in internal {
            let total = self.mass(&s.child(0)) + self.mass(&s.child(1));
            if self.mass(&s) != total {
                return ProbabilityCheck::Violation {
                    node: s,
                    reason: format!("mass {} but children sum to {}", self.mass(&s), total),
                };
            }
        }
        ProbabilityCheck::Valid
    }

    /// The uniform table to `depth`.
    pub fn lebesgue(depth: u32) -> CylinderMeasure {
        assert!(depth <= 20, "lebesgue table too large; use the natural measure on the full tree");
        let w = pow2_rational(-(depth as i64));
        let leaves = BitString::level(depth).map(|s| (s, w.clone())).collect();
        CylinderMeasure::from_leaves(depth, leaves).unwrap()
    }

    /// Point mass on the all-zeros branch, as a table.
    pub fn dirac_zero(depth: u32) -> CylinderMeasure {
        let leaves =
            BTreeMap::from([(BitString::EMPTY.extend_zeros(depth), BigRational::one())]);
        CylinderMeasure::from_leaves(depth, leaves).unwrap()
    }

    /// Conditions the table on the tree: depth-level mass outside the tree is
    /// dropped and the remainder rescaled to a probability measure.
    pub fn restrict_normalize(&self, tree: &TreeModel) -> Result<CylinderMeasure> {
        let mut leaves: BTreeMap<BitString, BigRational> = BTreeMap::new();
        let mut total = BigRational::zero();
        for (s, v) in self.level_entries(self.depth) {
            if tree.contains(s) {
                total += v;
                leaves.insert(*s, v.clone());
            }
        }
        if total.is_zero() {
            return Err(Error::ZeroRestrictedMass);
        }
        let leaves = leaves.into_iter().map(|(s, v)| (s, v / &total)).collect();
        CylinderMeasure::from_leaves(self.depth, leaves)
    }
}

impl Serialize for CylinderMeasure {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mass: BTreeMap<BitString, String> =
            self.mass.iter().map(|(s, v)| (*s, v.to_string())).collect();
        let mut st = serializer.serialize_struct("CylinderMeasure", 2)?;
        st.serialize_field("depth", &self.depth)?;
        st.serialize_field("mass", &mass)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for CylinderMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            depth: u32,
            mass: BTreeMap<BitString, String>,
        }
        let repr = Repr::deserialize(deserializer)?;
        let mut mass = BTreeMap::new();
        for (s, v) in repr.mass {
            if s.len() > repr.depth {
                return Err(serde::de::Error::custom(format!(
                    "entry {s} is deeper than the declared depth {}",
                    repr.depth
                )));
            }
            mass.insert(s, parse_rational(&v).map_err(serde::de::Error::custom)?);
        }
        Ok(CylinderMeasure::new(repr.depth, mass))
    }
}

/// Finitely many point masses at points `σ⌢000…`, with positive rational
/// weights summing to one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DyadicMeasure {
    support: Vec<BitString>,
    weights: Vec<BigRational>,
}

impl DyadicMeasure {
    pub fn new(support: Vec<BitString>, weights: Vec<BigRational>) -> Result<DyadicMeasure> {
        if support.len() != weights.len() {
            return Err(Error::Parse("support and weights differ in length".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &support {
            if !seen.insert(*s) {
                return Err(Error::Parse(format!("duplicate support string {s}")));
            }
        }
        let mut total = BigRational::zero();
        for w in &weights {
            if !w.is_positive() {
                return Err(Error::Parse("weights must be positive".into()));
            }
            total += w;
        }
        if total != BigRational::one() {
            return Err(Error::Parse(format!("weights sum to {total}, not 1")));
        }
        Ok(DyadicMeasure { support, weights })
    }

    pub fn point(s: BitString) -> DyadicMeasure {
        DyadicMeasure { support: vec![s], weights: vec![BigRational::one()] }
    }

    pub fn support(&self) -> &[BitString] {
        &self.support
    }

    pub fn weights(&self) -> &[BigRational] {
        &self.weights
    }

    /// Weights keyed by the canonical (trailing-zero-stripped) point name.
    /// Distinct support strings can name the same point; their weights merge.
    pub fn point_masses(&self) -> BTreeMap<BitString, BigRational> {
        let mut out: BTreeMap<BitString, BigRational> = BTreeMap::new();
        for (s, w) in self.support.iter().zip(&self.weights) {
            *out.entry(s.strip_trailing_zeros()).or_insert_with(BigRational::zero) += w;
        }
        out
    }

    pub fn mass(&self, s: &BitString) -> BigRational {
        let mut total = BigRational::zero();
        for (p, w) in self.support.iter().zip(&self.weights) {
            if point_in_cylinder(p, s) {
                total += w;
            }
        }
        total
    }
}

/// Whether the point `p⌢000…` lies in the cylinder at `s`.
fn point_in_cylinder(p: &BitString, s: &BitString) -> bool {
    if s.len() <= p.len() {
        s.is_prefix_of(p)
    } else {
        p.is_prefix_of(s) && s.strip_trailing_zeros().len() <= p.len()
    }
}

impl Serialize for DyadicMeasure {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("DyadicMeasure", 2)?;
        st.serialize_field("support", &self.support)?;
        st.serialize_field(
            "weights",
            &self.weights.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
        )?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for DyadicMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            support: Vec<BitString>,
            weights: Vec<String>,
        }
        let repr = Repr::deserialize(deserializer)?;
        let weights = repr
            .weights
            .iter()
            .map(|w| parse_rational(w))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        DyadicMeasure::new(repr.support, weights).map_err(serde::de::Error::custom)
    }
}

/// Automaton tree with stored split ratios; masses are path products.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowMeasure {
    pub tree: TreeAutomaton,
    pub depth: u32,
    /// `(state, level) -> [share to child 0, share to child 1]`, summing to 1
    /// wherever mass flows.
    pub splits: HashMap<(usize, u32), [BigRational; 2]>,
}

impl FlowMeasure {
    fn mass(&self, s: &BitString) -> Result<BigRational> {
        if s.len() > self.depth {
            return Err(Error::OutOfDomain(format!(
                "flow measure is defined to depth {}",
                self.depth
            )));
        }
        let mut state = match self.tree.run(&BitString::EMPTY) {
            Some(st) => st,
            None => return Ok(BigRational::zero()),
        };
        let mut m = BigRational::one();
        for i in 0..s.len() {
            let b = s.bit(i) as usize;
            let Some(next) = self.tree.live(state)[b] else {
                return Ok(BigRational::zero());
            };
            let Some(split) = self.splits.get(&(state, i)) else {
                return Ok(BigRational::zero());
            };
            m *= &split[b];
            if m.is_zero() {
                return Ok(BigRational::zero());
            }
            state = next;
        }
        Ok(m)
    }
}

/// A probability measure in one of the four representations.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    Table(CylinderMeasure),
    Dyadic(DyadicMeasure),
    Natural(TreeAutomaton),
    Flow(FlowMeasure),
}

impl Measure {
    /// Even splitting among live children; requires a pruned, nonempty
    /// automaton so mass never gets stuck.
    pub fn natural(tree: TreeAutomaton) -> Result<Measure> {
        tree.validate()?;
        if !tree.is_accepting(tree.start) {
            return Err(Error::EmptyTree(0));
        }
        if !tree.is_pruned() {
            return Err(Error::BadAutomaton(
                "natural measure needs a pruned automaton (every state must have a live child)"
                    .into(),
            ));
        }
        Ok(Measure::Natural(tree))
    }

    pub fn lebesgue() -> Measure {
        Measure::natural(TreeAutomaton::full()).unwrap()
    }

    pub fn dirac_zero() -> Measure {
        Measure::Dyadic(DyadicMeasure::point(BitString::EMPTY))
    }

    pub fn dirac_one() -> Measure {
        Measure::Dyadic(DyadicMeasure::point("1".parse().unwrap()))
    }

    pub fn every_other_natural() -> Measure {
        Measure::natural(TreeAutomaton::every_other()).unwrap()
    }

    /// Depth beyond which masses are no longer determined, if any.
    pub fn depth_limit(&self) -> Option<u32> {
        match self {
            Measure::Table(t) => Some(t.depth()),
            Measure::Flow(f) => Some(f.depth),
            Measure::Dyadic(_) | Measure::Natural(_) => None,
        }
    }

    /// Exact cylinder mass. Errors past a table's depth.
    pub fn mass(&self, s: &BitString) -> Result<BigRational> {
        match self {
            Measure::Table(t) => {
                if s.len() > t.depth() {
                    Err(Error::OutOfDomain(format!(
                        "measure table is defined to depth {}",
                        t.depth()
                    )))
                } else {
                    Ok(t.mass(s))
                }
            }
            Measure::Dyadic(d) => Ok(d.mass(s)),
            Measure::Natural(a) => Ok(natural_mass(a, s)),
            Measure::Flow(f) => f.mass(s),
        }
    }

    /// Mass under the dyadic extension convention: below a table's depth the
    /// depth-level mass sits on the leftmost point of its cylinder.
    pub fn ext_mass(&self, s: &BitString) -> BigRational {
        match self.depth_limit() {
            Some(d) if s.len() > d => {
                let head = s.truncate(d);
                if s.strip_trailing_zeros().len() <= d {
                    self.mass(&head).expect("within depth")
                } else {
                    BigRational::zero()
                }
            }
            _ => self.mass(s).expect("within depth"),
        }
    }

    /// Nonzero masses at one level, under the dyadic extension convention.
    pub fn level_masses(&self, n: u32, budget: usize) -> Result<BTreeMap<BitString, BigRational>> {
        match self {
            Measure::Table(t) => {
                if n <= t.depth() {
                    Ok(t.level_entries(n).map(|(s, v)| (*s, v.clone())).collect())
                } else {
                    Ok(t
                        .level_entries(t.depth())
                        .map(|(s, v)| (s.extend_zeros(n - t.depth()), v.clone()))
                        .collect())
                }
            }
            Measure::Dyadic(d) => {
                let mut out: BTreeMap<BitString, BigRational> = BTreeMap::new();
                for (p, w) in d.support().iter().zip(d.weights()) {
                    let name = if p.len() >= n { p.truncate(n) } else { p.extend_zeros(n - p.len()) };
                    *out.entry(name).or_insert_with(BigRational::zero) += w;
                }
                Ok(out)
            }
            Measure::Natural(a) => walk_levels(a, n, budget, |state, lvl| {
                let _ = lvl;
                let k = a.branching(state);
                let share = BigRational::new(1.into(), (k.max(1) as i64).into());
                [share.clone(), share]
            }),
            Measure::Flow(f) => {
                let walk_to = n.min(f.depth);
                let at_depth = walk_levels(&f.tree, walk_to, budget, |state, lvl| {
                    f.splits
                        .get(&(state, lvl))
                        .cloned()
                        .unwrap_or([BigRational::zero(), BigRational::zero()])
                })?;
                if n <= f.depth {
                    Ok(at_depth)
                } else {
                    Ok(at_depth
                        .into_iter()
                        .map(|(s, v)| (s.extend_zeros(n - f.depth), v))
                        .collect())
                }
            }
        }
    }

    /// Max over `|σ| = n` of the cylinder mass, computed without enumerating
    /// the level.
    pub fn max_cylinder_mass(&self, n: u32) -> Result<BigRational> {
        match self {
            Measure::Table(t) => {
                if n > t.depth() {
                    return Err(Error::OutOfDomain(format!(
                        "measure table is defined to depth {}",
                        t.depth()
                    )));
                }
                Ok(t
                    .level_entries(n)
                    .map(|(_, v)| v.clone())
                    .max()
                    .unwrap_or_else(BigRational::zero))
            }
            Measure::Dyadic(d) => {
                let mut best = BigRational::zero();
                let mut groups: BTreeMap<BitString, BigRational> = BTreeMap::new();
                for (p, w) in d.support().iter().zip(d.weights()) {
                    let name = if p.len() >= n { p.truncate(n) } else { p.extend_zeros(n - p.len()) };
                    let e = groups.entry(name).or_insert_with(BigRational::zero);
                    *e += w;
                    if *e > best {
                        best = e.clone();
                    }
                }
                Ok(best)
            }
            Measure::Natural(a) => {
                let mut cur: HashMap<usize, BigRational> = HashMap::new();
                if a.is_accepting(a.start) {
                    cur.insert(a.start, BigRational::one());
                }
                for _ in 0..n {
                    let mut next: HashMap<usize, BigRational> = HashMap::new();
                    for (s, m) in &cur {
                        let share = m / crate::value::rat_u(a.branching(*s).max(1) as u64);
                        for t in a.live(*s).into_iter().flatten() {
                            let e = next.entry(t).or_insert_with(BigRational::zero);
                            if share > *e {
                                *e = share.clone();
                            }
                        }
                    }
                    cur = next;
                }
                Ok(cur.into_values().max().unwrap_or_else(BigRational::zero))
            }
            Measure::Flow(f) => {
                if n > f.depth {
                    return Err(Error::OutOfDomain(format!(
                        "flow measure is defined to depth {}",
                        f.depth
                    )));
                }
                let a = &f.tree;
                let mut cur: HashMap<usize, BigRational> = HashMap::new();
                if a.is_accepting(a.start) {
                    cur.insert(a.start, BigRational::one());
                }
                for lvl in 0..n {
                    let mut next: HashMap<usize, BigRational> = HashMap::new();
                    for (s, m) in &cur {
                        let Some(split) = f.splits.get(&(*s, lvl)) else { continue };
                        for (b, t) in a.live(*s).into_iter().enumerate() {
                            let Some(t) = t else { continue };
                            let share = m * &split[b];
                            if share.is_zero() {
                                continue;
                            }
                            let e = next.entry(t).or_insert_with(BigRational::zero);
                            if share > *e {
                                *e = share;
                            }
                        }
                    }
                    cur = next;
                }
                Ok(cur.into_values().max().unwrap_or_else(BigRational::zero))
            }
        }
    }
}

fn natural_mass(a: &TreeAutomaton, s: &BitString) -> BigRational {
    if !a.is_accepting(a.start) {
        return BigRational::zero();
    }
    let mut state = a.start;
    let mut m = BigRational::one();
    for i in 0..s.len() {
        let branching = a.branching(state);
        match a.live(state)[s.bit(i) as usize] {
            Some(t) => {
                m /= crate::value::rat_u(branching.max(1) as u64);
                state = t;
            }
            None => return BigRational::zero(),
        }
    }
    m
}

impl Measure {
    /// `S_n = Σ_{|σ|=n} 2·m(σ0)·m(σ1)` for `n = 0..up_to`, the per-level
    /// sibling products. Levels at or past a table's depth contribute zero
    /// (dyadic extension: each cylinder is a single point there).
    pub fn sibling_product_level_sums(&self, up_to: u32) -> Result<Vec<BigRational>> {
        let two = crate::value::rat_u(2);
        match self {
            Measure::Table(t) => {
                let mut sums = vec![BigRational::zero(); up_to as usize];
                for (s, v) in t.entries() {
                    if s.len() >= up_to || s.len() >= t.depth() {
                        continue;
                    }
                    let p = t.mass(&s.child(0)) * t.mass(&s.child(1));
                    if !p.is_zero() {
                        let _ = v;
                        sums[s.len() as usize] += &two * p;
                    }
                }
                Ok(sums)
            }
            Measure::Dyadic(d) => {
                let mut sums = vec![BigRational::zero(); up_to as usize];
                let points: Vec<(BitString, BigRational)> = d.point_masses().into_iter().collect();
                dyadic_sibling_products(&points, 0, up_to, &mut sums);
                Ok(sums)
            }
            Measure::Natural(a) => {
                let mut q = square_start(a);
                let mut sums = Vec::with_capacity(up_to as usize);
                for lvl in 0..up_to {
                    let _ = lvl;
                    let mut s_n = BigRational::zero();
                    for (state, qm) in &q {
                        if a.branching(*state) == 2 {
                            // children each carry m/2: 2·(m/2)·(m/2) = m²/2
                            s_n += qm / &two;
                        }
                    }
                    sums.push(s_n);
                    q = square_step(a, &q, |state, _| natural_shares(a, state));
                }
                Ok(sums)
            }
            Measure::Flow(f) => {
                let a = &f.tree;
                let mut q = square_start(a);
                let mut sums = Vec::with_capacity(up_to as usize);
                for lvl in 0..up_to {
                    let mut s_n = BigRational::zero();
                    if lvl < f.depth {
                        for (state, qm) in &q {
                            if let Some(sp) = f.splits.get(&(*state, lvl)) {
                                s_n += qm * &two * &sp[0] * &sp[1];
                            }
                        }
                    }
                    sums.push(s_n);
                    if lvl < f.depth {
                        q = square_step(a, &q, |state, _| {
                            f.splits
                                .get(&(state, lvl))
                                .cloned()
                                .unwrap_or([BigRational::zero(), BigRational::zero()])
                        });
                    }
                }
                Ok(sums)
            }
        }
    }

    /// `Q_n = Σ_{|σ|=n} m(σ)²`.
    pub fn level_square_sum(&self, n: u32) -> Result<BigRational> {
        match self {
            Measure::Table(t) => {
                let lvl = n.min(t.depth());
                Ok(t.level_entries(lvl).map(|(_, v)| v * v).sum())
            }
            Measure::Dyadic(d) => {
                Ok(self
                    .level_masses_small(d, n)
                    .values()
                    .map(|v| v * v)
                    .sum())
            }
            Measure::Natural(a) => {
                let mut q = square_start(a);
                for _ in 0..n {
                    q = square_step(a, &q, |state, _| natural_shares(a, state));
                }
                Ok(q.values().sum())
            }
            Measure::Flow(f) => {
                let a = &f.tree;
                let walk = n.min(f.depth);
                let mut q = square_start(a);
                for lvl in 0..walk {
                    q = square_step(a, &q, |state, _| {
                        f.splits
                            .get(&(state, lvl))
                            .cloned()
                            .unwrap_or([BigRational::zero(), BigRational::zero()])
                    });
                }
                Ok(q.values().sum())
            }
        }
    }

    fn level_masses_small(&self, d: &DyadicMeasure, n: u32) -> BTreeMap<BitString, BigRational> {
        let mut out: BTreeMap<BitString, BigRational> = BTreeMap::new();
        for (p, w) in d.support().iter().zip(d.weights()) {
            let name = if p.len() >= n { p.truncate(n) } else { p.extend_zeros(n - p.len()) };
            *out.entry(name).or_insert_with(BigRational::zero) += w;
        }
        out
    }

    /// Masses of the siblings peeled off along the path `x`:
    /// `m(x↾n ⌢ (1-x(n)))` for `n = 0..up_to`. Requires `|x| ≥ up_to`.
    pub fn path_sibling_masses(&self, x: &BitString, up_to: u32) -> Result<Vec<BigRational>> {
        if x.len() < up_to {
            return Err(Error::Precondition(format!(
                "path of length {} is shorter than the requested depth {up_to}",
                x.len()
            )));
        }
        (0..up_to).map(|n| self.mass(&x.truncate(n + 1).sibling())).collect()
    }
}

fn square_start(a: &TreeAutomaton) -> HashMap<usize, BigRational> {
    let mut q = HashMap::new();
    if a.is_accepting(a.start) {
        q.insert(a.start, BigRational::one());
    }
    q
}

fn natural_shares(a: &TreeAutomaton, state: usize) -> [BigRational; 2] {
    let k = a.branching(state).max(1);
    let share = BigRational::new(1.into(), (k as i64).into());
    [share.clone(), share]
}

/// One step of the squared-mass recursion `q'[t] += q[s]·share²`.
fn square_step<F>(
    a: &TreeAutomaton,
    q: &HashMap<usize, BigRational>,
    shares: F,
) -> HashMap<usize, BigRational>
where
    F: Fn(usize, ()) -> [BigRational; 2],
{
    let mut next: HashMap<usize, BigRational> = HashMap::new();
    for (state, qm) in q {
        let sh = shares(*state, ());
        for (b, t) in a.live(*state).into_iter().enumerate() {
            let Some(t) = t else { continue };
            let contrib = qm * &sh[b] * &sh[b];
            if !contrib.is_zero() {
                *next.entry(t).or_insert_with(BigRational::zero) += contrib;
            }
        }
    }
    next
}

/// Sibling products of a dyadic point set, accumulated per level by trie
/// recursion. Stops as soon as a branch holds at most one point.
fn dyadic_sibling_products(
    points: &[(BitString, BigRational)],
    level: u32,
    up_to: u32,
    sums: &mut [BigRational],
) {
    if level >= up_to || points.len() <= 1 {
        return;
    }
    let two = crate::value::rat_u(2);
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (p, w) in points {
        // A canonical point shorter than the level continues with zeros.
        let bit = if p.len() > level { p.bit(level) } else { 0 };
        if bit == 0 {
            left.push((*p, w.clone()));
        } else {
            right.push((*p, w.clone()));
        }
    }
    let lw: BigRational = left.iter().map(|(_, w)| w.clone()).sum();
    let rw: BigRational = right.iter().map(|(_, w)| w.clone()).sum();
    let prod = lw * rw;
    if !prod.is_zero() {
        sums[level as usize] += two * prod;
    }
    dyadic_sibling_products(&left, level + 1, up_to, sums);
    dyadic_sibling_products(&right, level + 1, up_to, sums);
}

/// Truncated distance between probability measures with a certified tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DmeasReport {
    /// `Σ_{n=1..K} 2^(-n)·d_n`, exact.
    pub value: BigRational,
    /// The remaining series is at most this (each `d_n ≤ 1`).
    pub tail_bound: BigRational,
    pub truncation: u32,
}

impl Serialize for DmeasReport {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("DmeasReport", 4)?;
        st.serialize_field("value", &self.value.to_string())?;
        st.serialize_field("tailBound", &self.tail_bound.to_string())?;
        st.serialize_field("decimal", &crate::value::Value::exact(self.value.clone()).to_f64())?;
        st.serialize_field("truncation", &self.truncation)?;
        st.end()
    }
}

/// Level distance `d_n = (1/2)·Σ_{|σ|=n} |a(σ) - b(σ)| = 1 - Σ_σ min(a, b)`,
/// computed by walking the sparser side's support.
fn level_distance(a: &Measure, b: &Measure, n: u32) -> Result<BigRational> {
    let hint = |m: &Measure| -> Option<usize> {
        match m {
            Measure::Dyadic(d) => Some(d.support().len()),
            Measure::Table(t) => Some(t.entries().count()),
            _ => None,
        }
    };
    let (walk, other) = match (hint(a), hint(b)) {
        (Some(x), Some(y)) if x <= y => (a, b),
        (Some(_), Some(_)) => (b, a),
        (Some(_), None) => (a, b),
        (None, Some(_)) => (b, a),
        (None, None) => (a, b),
    };
    let support = walk.level_masses(n, NODE_BUDGET)?;
    let mut common = BigRational::zero();
    for (s, va) in &support {
        let vb = other.ext_mass(s);
        common += va.min(&vb);
    }
    Ok(BigRational::one() - common)
}

/// `Σ_{n=1..K} 2^(-n)·d_n(a, b)` with the tail bounded by `2^(-K)`.
pub fn dmeas_distance(a: &Measure, b: &Measure, truncation: u32) -> Result<DmeasReport> {
    let mut total = BigRational::zero();
    for n in 1..=truncation {
        let d_n = level_distance(a, b, n)?;
        total += pow2_rational(-(n as i64)) * d_n;
    }
    Ok(DmeasReport {
        value: total,
        tail_bound: pow2_rational(-(truncation as i64)),
        truncation,
    })
}

/// Exact distance between dyadic measures: the level distances stabilize once
/// every pair of distinct points is separated, so the series has a closed
/// tail. This is what makes `d < q` and `d ≤ q` decidable on the dense set.
pub fn dmeas_exact_dyadic(a: &DyadicMeasure, b: &DyadicMeasure) -> BigRational {
    let pa = a.point_masses();
    let pb = b.point_masses();
    let all: Vec<BitString> = pa.keys().chain(pb.keys()).copied().collect();
    let mut sep = 1u32;
    for (i, p) in all.iter().enumerate() {
        for q in &all[i + 1..] {
            if p != q {
                let l = p.len().max(q.len());
                let pe = p.extend_zeros(l - p.len());
                let qe = q.extend_zeros(l - q.len());
                sep = sep.max(pe.lcp_len(&qe) + 1);
            }
        }
    }
    let ma = Measure::Dyadic(a.clone());
    let mb = Measure::Dyadic(b.clone());
    let mut total = BigRational::zero();
    let mut last = BigRational::zero();
    for n in 1..=sep {
        last = level_distance(&ma, &mb, n).expect("dyadic level distance");
        total += pow2_rational(-(n as i64)) * &last;
    }
    // d_n is constant from the separation level on.
    total + pow2_rational(-(sep as i64)) * last
}

/// Depth-`n` dyadic approximant: all of each depth-`n` cylinder's mass moves
/// to the cylinder's leftmost point. The first `n` level distances to the
/// original vanish, so `d_meas(m, ν) ≤ 2^(-n)`.
pub fn cauchy_approximate(m: &Measure, n: u32) -> Result<DyadicMeasure> {
    let level = m.level_masses(n, NODE_BUDGET)?;
    let (support, weights) = level.into_iter().unzip();
    DyadicMeasure::new(support, weights)
}

impl Serialize for Measure {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Measure::Table(t) => t.serialize(serializer),
            Measure::Dyadic(d) => d.serialize(serializer),
            Measure::Natural(a) => {
                let mut st = serializer.serialize_struct("Natural", 2)?;
                st.serialize_field("kind", "natural")?;
                st.serialize_field("tree", a)?;
                st.end()
            }
            Measure::Flow(f) => {
                let mut st = serializer.serialize_struct("Flow", 3)?;
                st.serialize_field("kind", "flow")?;
                st.serialize_field("depth", &f.depth)?;
                st.serialize_field("tree", &f.tree)?;
                st.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Measure {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(deserializer)?;
        let obj = v
            .as_object()
            .ok_or_else(|| serde::de::Error::custom("measure must be a JSON object"))?;
        if obj.contains_key("mass") {
            let t: CylinderMeasure =
                serde_json::from_value(v.clone()).map_err(serde::de::Error::custom)?;
            return Ok(Measure::Table(t));
        }
        if obj.contains_key("support") {
            let d: DyadicMeasure =
                serde_json::from_value(v.clone()).map_err(serde::de::Error::custom)?;
            return Ok(Measure::Dyadic(d));
        }
        match obj.get("kind").and_then(|k| k.as_str()) {
            Some("natural") => {
                let tree = obj
                    .get("tree")
                    .ok_or_else(|| serde::de::Error::custom("natural measure needs a tree"))?;
                let a: TreeAutomaton =
                    serde_json::from_value(tree.clone()).map_err(serde::de::Error::custom)?;
                Measure::natural(a).map_err(serde::de::Error::custom)
            }
            other => Err(serde::de::Error::custom(format!(
                "unrecognized measure form (kind = {other:?})"
            ))),
        }
    }
}

/// Walks an automaton tree `n` levels, distributing mass to live children by
/// the per-(state, level) shares, and returns the nonzero level-`n` masses.
fn walk_levels<F>(
    a: &TreeAutomaton,
    n: u32,
    budget: usize,
    shares: F,
) -> Result<BTreeMap<BitString, BigRational>>
where
    F: Fn(usize, u32) -> [BigRational; 2],
{
    let mut frontier: Vec<(BitString, usize, BigRational)> = Vec::new();
    if a.is_accepting(a.start) {
        frontier.push((BitString::EMPTY, a.start, BigRational::one()));
    }
    for lvl in 0..n {
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for (s, state, m) in &frontier {
            let sh = shares(*state, lvl);
            for (b, t) in a.live(*state).into_iter().enumerate() {
                let Some(t) = t else { continue };
                let cm = m * &sh[b];
                if !cm.is_zero() {
                    next.push((s.child(b as u8), t, cm));
                }
            }
        }
        if next.len() > budget {
            return Err(Error::TooLarge(format!(
                "level {n} support exceeds the {budget}-node budget"
            )));
        }
        frontier = next;
    }
    Ok(frontier.into_iter().map(|(s, _, m)| (s, m)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{rat, rat_u};

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn lebesgue_table_is_valid() {
        let m = CylinderMeasure::lebesgue(4);
        assert!(m.validate_probability().is_valid());
        assert_eq!(m.mass(&bs("010")), rat(1, 8));
    }

    #[test]
    fn additivity_violation_site() {
        let mut mass = BTreeMap::new();
        mass.insert(BitString::EMPTY, rat(1, 1));
        mass.insert(bs("0"), rat(3, 5));
        mass.insert(bs("1"), rat(1, 2));
        let m = CylinderMeasure::new(1, mass);
        match m.validate_probability() {
            ProbabilityCheck::Violation { node, .. } => assert_eq!(node, BitString::EMPTY),
            ProbabilityCheck::Valid => panic!("expected a violation"),
        }
    }

    #[test]
    fn dirac_table_is_valid() {
        let m = CylinderMeasure::dirac_zero(5);
        assert!(m.validate_probability().is_valid());
        assert_eq!(m.mass(&bs("00000")), rat(1, 1));
        assert_eq!(m.mass(&bs("00001")), rat(0, 1));
    }

    #[test]
    fn natural_measure_masses() {
        let m = Measure::every_other_natural();
        assert_eq!(m.mass(&bs("00")).unwrap(), rat(1, 2));
        assert_eq!(m.mass(&bs("0000")).unwrap(), rat(1, 4));
        assert_eq!(m.mass(&bs("01")).unwrap(), rat(0, 1));
        assert_eq!(m.max_cylinder_mass(4).unwrap(), rat(1, 4));
    }

    #[test]
    fn lebesgue_natural_equals_table() {
        let nat = Measure::lebesgue();
        let tab = CylinderMeasure::lebesgue(6);
        for (s, v) in tab.entries() {
            assert_eq!(&nat.mass(s).unwrap(), v);
        }
    }

    #[test]
    fn max_mass_examples() {
        assert_eq!(Measure::lebesgue().max_cylinder_mass(5).unwrap(), rat(1, 32));
        assert_eq!(Measure::dirac_zero().max_cylinder_mass(5).unwrap(), rat(1, 1));
    }

    #[test]
    fn restrict_normalize_conditioning() {
        let m = CylinderMeasure::lebesgue(4);
        // Subtree below "0": all nodes starting with 0, plus the root.
        let nodes: Vec<BitString> = TreeModel::full()
            .expand(4)
            .unwrap()
            .nodes()
            .filter(|s| s.is_empty() || s.bit(0) == 0)
            .copied()
            .collect();
        let tree = TreeModel::explicit(nodes).unwrap();
        let nu = m.restrict_normalize(&tree).unwrap();
        assert!(nu.validate_probability().is_valid());
        assert_eq!(nu.mass(&bs("0")), rat(1, 1));
        assert_eq!(nu.mass(&bs("010")), rat(1, 4));
        assert_eq!(nu.mass(&bs("1")), rat(0, 1));
    }

    #[test]
    fn restrict_normalize_full_tree_is_identity() {
        let m = CylinderMeasure::lebesgue(3);
        let nu = m.restrict_normalize(&TreeModel::full()).unwrap();
        assert_eq!(nu, m);
    }

    #[test]
    fn restrict_normalize_zero_mass_errors() {
        let m = CylinderMeasure::dirac_zero(3);
        // Tree containing only the 1-branch.
        let tree = TreeModel::explicit([
            BitString::EMPTY,
            bs("1"),
            bs("11"),
            bs("111"),
        ])
        .unwrap();
        assert!(matches!(m.restrict_normalize(&tree), Err(Error::ZeroRestrictedMass)));
    }

    #[test]
    fn dmeas_diracs() {
        let a = Measure::dirac_zero();
        let b = Measure::dirac_one();
        let r = dmeas_distance(&a, &b, 30).unwrap();
        // d_n = 1 for every n >= 1.
        assert_eq!(r.value, rat_u(1) - pow2_rational(-30));
        assert_eq!(r.tail_bound, pow2_rational(-30));
        let exact = dmeas_exact_dyadic(
            &DyadicMeasure::point(BitString::EMPTY),
            &DyadicMeasure::point(bs("1")),
        );
        assert_eq!(exact, rat(1, 1));
    }

    #[test]
    fn dmeas_self_is_zero() {
        let m = Measure::every_other_natural();
        let r = dmeas_distance(&m, &m, 12).unwrap();
        assert!(r.value.is_zero());
    }

    #[test]
    fn dmeas_lebesgue_dirac() {
        let r = dmeas_distance(&Measure::lebesgue(), &Measure::dirac_zero(), 30).unwrap();
        // d_n = 1 - 2^(-n); the full series sums to 2/3.
        let expect: BigRational = (1..=30)
            .map(|n| pow2_rational(-n) * (rat_u(1) - pow2_rational(-n)))
            .sum();
        assert_eq!(r.value, expect);
        let diff = rat(2, 3) - &r.value;
        assert!(diff.abs() <= pow2_rational(-30));
    }

    #[test]
    fn cauchy_examples() {
        let nu = cauchy_approximate(&Measure::lebesgue(), 3).unwrap();
        assert_eq!(nu.support().len(), 8);
        assert!(nu.weights().iter().all(|w| *w == rat(1, 8)));

        let d = cauchy_approximate(&Measure::dirac_zero(), 5).unwrap();
        let r = dmeas_distance(&Measure::dirac_zero(), &Measure::Dyadic(d), 16).unwrap();
        assert!(r.value.is_zero());

        let mut leaves = BTreeMap::new();
        leaves.insert(bs("0"), rat(1, 3));
        leaves.insert(bs("1"), rat(2, 3));
        let m = CylinderMeasure::from_leaves(1, leaves).unwrap();
        let nu = cauchy_approximate(&Measure::Table(m), 1).unwrap();
        assert_eq!(nu.support(), &[bs("0"), bs("1")]);
        assert_eq!(nu.weights(), &[rat(1, 3), rat(2, 3)]);
    }

    #[test]
    fn cauchy_error_certificate() {
        let m = Measure::every_other_natural();
        for n in [1u32, 3, 5] {
            let nu = cauchy_approximate(&m, n).unwrap();
            let r = dmeas_distance(&m, &Measure::Dyadic(nu), (n + 10).min(24)).unwrap();
            assert!(r.value <= pow2_rational(-(n as i64)));
        }
    }

    #[test]
    fn sibling_sums_lebesgue() {
        let m = Measure::lebesgue();
        let sums = m.sibling_product_level_sums(5).unwrap();
        // S_n = 2^n · 2 · (2^-(n+1))² = 2^(-n-1)
        for (n, s) in sums.iter().enumerate() {
            assert_eq!(s, &pow2_rational(-(n as i64) - 1));
        }
        let table = Measure::Table(CylinderMeasure::lebesgue(6));
        assert_eq!(table.sibling_product_level_sums(5).unwrap(), sums);
    }

    #[test]
    fn sibling_sums_dyadic_match_table() {
        let d = DyadicMeasure::new(
            vec![bs("00"), bs("01"), bs("1")],
            vec![rat(1, 4), rat(1, 4), rat(1, 2)],
        )
        .unwrap();
        let dy = Measure::Dyadic(d.clone());
        let sums = dy.sibling_product_level_sums(4).unwrap();
        // lcp(00*,01*) = 1 with product (1/4)(1/4); lcp(0*,1*) at root.
        assert_eq!(sums[0], rat(2, 1) * rat(1, 2) * rat(1, 2));
        assert_eq!(sums[1], rat(2, 1) * rat(1, 4) * rat(1, 4));
        assert!(sums[2].is_zero() && sums[3].is_zero());
    }

    #[test]
    fn square_sums() {
        assert_eq!(Measure::lebesgue().level_square_sum(4).unwrap(), pow2_rational(-4));
        assert_eq!(Measure::dirac_zero().level_square_sum(9).unwrap(), rat(1, 1));
        assert_eq!(
            Measure::every_other_natural().level_square_sum(4).unwrap(),
            rat(4, 1) * rat(1, 16)
        );
    }

    #[test]
    fn measure_json_roundtrip() {
        let m: Measure = serde_json::from_str(
            r#"{"depth":1,"mass":{"":"1","0":"1/2","1":"1/2"}}"#,
        )
        .unwrap();
        assert!(matches!(&m, Measure::Table(t) if t.depth() == 1));
        let d: Measure =
            serde_json::from_str(r#"{"support":["00","01"],"weights":["1/2","1/2"]}"#).unwrap();
        let js = serde_json::to_string(&d).unwrap();
        let back: Measure = serde_json::from_str(&js).unwrap();
        assert_eq!(d, back);
    }
}
