//! Prefix-closed node sets representing closed subsets of Cantor space.
//!
//! A tree is given either by an explicit node list or by a safety automaton
//! over `{0,1}`: a string is a node iff its run stays inside the accepting
//! states. Automaton trees make depth-uniform structure exploitable, so the
//! min-cut machinery can work per (state, depth) instead of per node.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::bitstring::BitString;
use crate::error::{Error, Result};

/// Expansion guard: explicit materialization stops at this many nodes.
pub const NODE_BUDGET: usize = 1 << 22;

/// Deterministic safety automaton over the binary alphabet. A transition of
/// `None` is dead. A state outside `accept` kills every run through it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeAutomaton {
    pub start: usize,
    pub accept: Vec<usize>,
    /// `transitions[state] = [on 0, on 1]`.
    pub transitions: Vec<[Option<usize>; 2]>,
}

impl TreeAutomaton {
    pub fn validate(&self) -> Result<()> {
        let n = self.transitions.len();
        if self.start >= n {
            return Err(Error::BadAutomaton(format!("start state {} out of range", self.start)));
        }
        for s in &self.accept {
            if *s >= n {
                return Err(Error::BadAutomaton(format!("accept state {s} out of range")));
            }
        }
        for (i, t) in self.transitions.iter().enumerate() {
            for target in t.iter().flatten() {
                if *target >= n {
                    return Err(Error::BadAutomaton(format!(
                        "transition {i} -> {target} out of range"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn state_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_accepting(&self, state: usize) -> bool {
        self.accept.contains(&state)
    }

    /// Children of a node in automaton state `state`: the target is live iff
    /// the transition exists and lands on an accepting state.
    pub fn live(&self, state: usize) -> [Option<usize>; 2] {
        let mut out = [None, None];
        for b in 0..2 {
            if let Some(t) = self.transitions[state][b] {
                if self.is_accepting(t) {
                    out[b] = Some(t);
                }
            }
        }
        out
    }

    pub fn branching(&self, state: usize) -> u32 {
        self.live(state).iter().flatten().count() as u32
    }

    /// Runs the automaton; `None` when the string is not a node.
    pub fn run(&self, s: &BitString) -> Option<usize> {
        if !self.is_accepting(self.start) {
            return None;
        }
        let mut state = self.start;
        for i in 0..s.len() {
            state = self.live(state)[s.bit(i) as usize]?;
        }
        Some(state)
    }

    /// Accepting states reachable from the start.
    pub fn reachable(&self) -> Vec<usize> {
        let mut seen = vec![false; self.state_count()];
        let mut stack = Vec::new();
        if self.is_accepting(self.start) {
            seen[self.start] = true;
            stack.push(self.start);
        }
        let mut out = Vec::new();
        while let Some(s) = stack.pop() {
            out.push(s);
            for t in self.live(s).into_iter().flatten() {
                if !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// True when every reachable state has at least one live child, i.e. no
    /// branch of the tree dies out.
    pub fn is_pruned(&self) -> bool {
        self.reachable().iter().all(|&s| self.branching(s) >= 1)
    }

    /// Minimum number of branching states on any cycle, divided by the cycle
    /// length (Karp's minimum mean cycle). `None` when no cycle is reachable.
    /// A zero mean witnesses an eventually-unbranching path.
    pub fn min_mean_branch_rate(&self) -> Option<num_rational::BigRational> {
        use crate::value::rat;
        let states = self.reachable();
        if states.is_empty() {
            return None;
        }
        let idx = |s: usize| states.binary_search(&s).unwrap();
        let n = states.len();
        // d[k][v] = min weight of a length-k walk from start to v, where an
        // edge out of state s weighs 1 iff s branches.
        let inf = i64::MAX / 4;
        let mut d = vec![vec![inf; n]; n + 1];
        d[0][idx(self.start)] = 0;
        for k in 0..n {
            for (vi, &v) in states.iter().enumerate() {
                if d[k][vi] >= inf {
                    continue;
                }
                let w = if self.branching(v) == 2 { 1 } else { 0 };
                for t in self.live(v).into_iter().flatten() {
                    let ti = idx(t);
                    if d[k][vi] + w < d[k + 1][ti] {
                        d[k + 1][ti] = d[k][vi] + w;
                    }
                }
            }
        }
        let mut best: Option<num_rational::BigRational> = None;
        for vi in 0..n {
            if d[n][vi] >= inf {
                continue;
            }
            // max over k of (d[n][v] - d[k][v]) / (n - k), then min over v.
            let mut vmax: Option<num_rational::BigRational> = None;
            for k in 0..n {
                if d[k][vi] >= inf {
                    continue;
                }
                let mean = rat(d[n][vi] - d[k][vi], (n - k) as i64);
                if vmax.as_ref().is_none_or(|m| &mean > m) {
                    vmax = Some(mean);
                }
            }
            if let Some(m) = vmax {
                if best.as_ref().is_none_or(|b| &m < b) {
                    best = Some(m);
                }
            }
        }
        best
    }

    /// Minimum number of branching states along any length-`n` path from the
    /// start, for `n = 0..=horizon`. `None` entries mean no path survives.
    pub fn min_branch_counts(&self, horizon: u32) -> Vec<Option<u64>> {
        let n = self.state_count();
        let mut cur: Vec<Option<u64>> = vec![None; n];
        if self.is_accepting(self.start) {
            cur[self.start] = Some(0);
        }
        let mut out = Vec::with_capacity(horizon as usize + 1);
        for _ in 0..=horizon {
            out.push(cur.iter().flatten().min().copied());
            let mut next: Vec<Option<u64>> = vec![None; n];
            for (s, c) in cur.iter().enumerate() {
                let Some(c) = c else { continue };
                let w = if self.branching(s) == 2 { 1 } else { 0 };
                for t in self.live(s).into_iter().flatten() {
                    let cand = c + w;
                    if next[t].is_none_or(|x| cand < x) {
                        next[t] = Some(cand);
                    }
                }
            }
            cur = next;
        }
        out
    }

    /// The full binary tree.
    pub fn full() -> TreeAutomaton {
        TreeAutomaton { start: 0, accept: vec![0], transitions: vec![[Some(0), Some(0)]] }
    }

    /// Branch at even depths, forced 0 at odd depths.
    pub fn every_other() -> TreeAutomaton {
        TreeAutomaton {
            start: 0,
            accept: vec![0, 1],
            transitions: vec![[Some(1), Some(1)], [Some(0), None]],
        }
    }

    /// The single path `000…`.
    pub fn single_path() -> TreeAutomaton {
        TreeAutomaton { start: 0, accept: vec![0], transitions: vec![[Some(0), None]] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeGen {
    Explicit(BTreeSet<BitString>),
    Automaton(TreeAutomaton),
}

/// A prefix-closed set of strings, possibly implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeModel {
    gen: TreeGen,
    pub max_depth_hint: Option<u32>,
}

impl TreeModel {
    /// Builds from an explicit node list; deduplicates and checks
    /// prefix-closure.
    pub fn explicit<I: IntoIterator<Item = BitString>>(nodes: I) -> Result<TreeModel> {
        let set: BTreeSet<BitString> = nodes.into_iter().collect();
        for node in &set {
            if let Some(p) = node.parent() {
                if !set.contains(&p) {
                    return Err(Error::NotPrefixClosed { node: *node });
                }
            }
        }
        Ok(TreeModel { gen: TreeGen::Explicit(set), max_depth_hint: None })
    }

    pub fn automaton(a: TreeAutomaton) -> Result<TreeModel> {
        a.validate()?;
        Ok(TreeModel { gen: TreeGen::Automaton(a), max_depth_hint: None })
    }

    pub fn full() -> TreeModel {
        TreeModel::automaton(TreeAutomaton::full()).unwrap()
    }

    pub fn every_other() -> TreeModel {
        TreeModel::automaton(TreeAutomaton::every_other()).unwrap()
    }

    pub fn single_path() -> TreeModel {
        TreeModel::automaton(TreeAutomaton::single_path()).unwrap()
    }

    pub fn generator(&self) -> &TreeGen {
        &self.gen
    }

    pub fn as_automaton(&self) -> Option<&TreeAutomaton> {
        match &self.gen {
            TreeGen::Automaton(a) => Some(a),
            TreeGen::Explicit(_) => None,
        }
    }

    pub fn contains(&self, s: &BitString) -> bool {
        match &self.gen {
            TreeGen::Explicit(set) => set.contains(s),
            TreeGen::Automaton(a) => a.run(s).is_some(),
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.contains(&BitString::EMPTY)
    }

    /// True when some node of length `depth` exists.
    pub fn nonempty_at_depth(&self, depth: u32) -> bool {
        match &self.gen {
            TreeGen::Explicit(set) => set.iter().any(|s| s.len() == depth),
            TreeGen::Automaton(a) => {
                let mut live: BTreeSet<usize> = BTreeSet::new();
                if a.is_accepting(a.start) {
                    live.insert(a.start);
                }
                for _ in 0..depth {
                    live = live.iter().flat_map(|&s| a.live(s).into_iter().flatten()).collect();
                    if live.is_empty() {
                        return false;
                    }
                }
                !live.is_empty()
            }
        }
    }

    /// Materializes all nodes up to `depth`, level by level.
    pub fn expand(&self, depth: u32) -> Result<ExpandedTree> {
        if self.is_empty() {
            return Err(Error::EmptyTree(0));
        }
        let mut levels: Vec<Vec<BitString>> = Vec::with_capacity(depth as usize + 1);
        let mut total = 0usize;
        match &self.gen {
            TreeGen::Explicit(set) => {
                for n in 0..=depth {
                    let level: Vec<BitString> =
                        set.iter().filter(|s| s.len() == n).copied().collect();
                    total += level.len();
                    if total > NODE_BUDGET {
                        return Err(Error::TooLarge(format!(
                            "tree expansion exceeds {NODE_BUDGET} nodes"
                        )));
                    }
                    levels.push(level);
                }
            }
            TreeGen::Automaton(a) => {
                let mut frontier = vec![BitString::EMPTY];
                for n in 0..=depth {
                    total += frontier.len();
                    if total > NODE_BUDGET {
                        return Err(Error::TooLarge(format!(
                            "tree expansion exceeds {NODE_BUDGET} nodes"
                        )));
                    }
                    levels.push(frontier.clone());
                    if n == depth {
                        break;
                    }
                    let mut next = Vec::new();
                    for s in &frontier {
                        let state = a.run(s).unwrap();
                        for (b, t) in a.live(state).into_iter().enumerate() {
                            if t.is_some() {
                                next.push(s.child(b as u8));
                            }
                        }
                    }
                    frontier = next;
                }
            }
        }
        Ok(ExpandedTree { levels })
    }
}

/// Explicit representation to a fixed depth; level `n` holds the length-`n`
/// nodes in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedTree {
    levels: Vec<Vec<BitString>>,
}

impl ExpandedTree {
    pub fn depth(&self) -> u32 {
        self.levels.len() as u32 - 1
    }

    pub fn level(&self, n: u32) -> &[BitString] {
        &self.levels[n as usize]
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &BitString> {
        self.levels.iter().flatten()
    }

    pub fn contains(&self, s: &BitString) -> bool {
        s.len() < self.levels.len() as u32
            && self.levels[s.len() as usize].binary_search(s).is_ok()
    }

    pub fn is_prefix_closed(&self) -> bool {
        self.nodes().all(|s| s.parent().map(|p| self.contains(&p)).unwrap_or(true))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum TreeRepr {
    Explicit {
        nodes: Vec<BitString>,
        #[serde(rename = "maxDepth", skip_serializing_if = "Option::is_none", default)]
        max_depth: Option<u32>,
    },
    Automaton {
        start: usize,
        accept: Vec<usize>,
        transitions: Vec<[Option<usize>; 2]>,
        #[serde(rename = "maxDepth", skip_serializing_if = "Option::is_none", default)]
        max_depth: Option<u32>,
    },
}

impl Serialize for TreeModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match &self.gen {
            TreeGen::Explicit(set) => TreeRepr::Explicit {
                nodes: set.iter().copied().collect(),
                max_depth: self.max_depth_hint,
            },
            TreeGen::Automaton(a) => TreeRepr::Automaton {
                start: a.start,
                accept: a.accept.clone(),
                transitions: a.transitions.clone(),
                max_depth: self.max_depth_hint,
            },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TreeModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = TreeRepr::deserialize(deserializer)?;
        let (tree, hint) = match repr {
            TreeRepr::Explicit { nodes, max_depth } => {
                (TreeModel::explicit(nodes).map_err(serde::de::Error::custom)?, max_depth)
            }
            TreeRepr::Automaton { start, accept, transitions, max_depth } => {
                let a = TreeAutomaton { start, accept, transitions };
                (TreeModel::automaton(a).map_err(serde::de::Error::custom)?, max_depth)
            }
        };
        Ok(TreeModel { max_depth_hint: hint, ..tree })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn names(level: &[BitString]) -> Vec<String> {
        level.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn full_tree_expansion() {
        let t = TreeModel::full().expand(2).unwrap();
        assert_eq!(names(t.level(0)), vec![""]);
        assert_eq!(names(t.level(1)), vec!["0", "1"]);
        assert_eq!(names(t.level(2)), vec!["00", "01", "10", "11"]);
        assert!(t.is_prefix_closed());
    }

    #[test]
    fn every_other_expansion() {
        let t = TreeModel::every_other().expand(3).unwrap();
        let mut all: Vec<String> = t.nodes().map(|s| s.to_string()).collect();
        all.sort();
        let mut expect =
            vec!["", "0", "1", "00", "10", "000", "001", "100", "101"];
        expect.sort();
        assert_eq!(all, expect);
    }

    #[test]
    fn explicit_validation() {
        let t = TreeModel::explicit([bs(""), bs("0"), bs("00")]).unwrap();
        let e = t.expand(2).unwrap();
        assert_eq!(e.node_count(), 3);
        assert!(e.is_prefix_closed());

        let bad = TreeModel::explicit([bs(""), bs("00")]);
        assert!(matches!(bad, Err(Error::NotPrefixClosed { .. })));
    }

    #[test]
    fn dead_start_is_empty() {
        let a = TreeAutomaton { start: 0, accept: vec![], transitions: vec![[None, None]] };
        let t = TreeModel::automaton(a).unwrap();
        assert!(t.is_empty());
        assert!(matches!(t.expand(1), Err(Error::EmptyTree(_))));
    }

    #[test]
    fn expansion_idempotent() {
        let t = TreeModel::every_other();
        let a = t.expand(4).unwrap();
        let b = t.expand(4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn branch_rates() {
        assert_eq!(
            TreeAutomaton::full().min_mean_branch_rate().unwrap(),
            crate::value::rat(1, 1)
        );
        assert_eq!(
            TreeAutomaton::every_other().min_mean_branch_rate().unwrap(),
            crate::value::rat(1, 2)
        );
        assert_eq!(
            TreeAutomaton::single_path().min_mean_branch_rate().unwrap(),
            crate::value::rat(0, 1)
        );
    }

    #[test]
    fn min_branch_counts_every_other() {
        let counts = TreeAutomaton::every_other().min_branch_counts(5);
        let got: Vec<u64> = counts.into_iter().map(Option::unwrap).collect();
        assert_eq!(got, vec![0, 1, 1, 2, 2, 3]);
    }

    #[test]
    fn json_roundtrip() {
        let t: TreeModel =
            serde_json::from_str(r#"{"kind":"explicit","nodes":["","0","00"]}"#).unwrap();
        assert!(t.contains(&bs("00")));
        let js = serde_json::to_string(&TreeModel::every_other()).unwrap();
        let back: TreeModel = serde_json::from_str(&js).unwrap();
        assert_eq!(back, TreeModel::every_other());
    }
}
