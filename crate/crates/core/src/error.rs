use crate::bitstring::BitString;

/// Crate-wide error type.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("comparison undecided at maximum precision {precision} bits: {context}")]
    Undecided { context: String, precision: u32 },

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("order is not evaluable at n = {0} (table exhausted, no tail slope)")]
    OrderOutOfRange(u32),

    #[error("tree is empty at depth {0}")]
    EmptyTree(u32),

    #[error("explicit node list is not prefix-closed: {node} is listed but its parent is not")]
    NotPrefixClosed { node: BitString },

    #[error("automaton is malformed: {0}")]
    BadAutomaton(String),

    #[error("measure gives no mass to closed set approximation")]
    ZeroRestrictedMass,

    #[error("order is not convex: h({n}+1) > h({n}) + 1")]
    NonConvexOrder { n: u32 },

    #[error("order takes the non-integer value {value} at n = {n}; exact measure construction needs integer orders")]
    NonIntegerOrder { n: u32, value: String },

    #[error("root capacity {cap} is below 1; no probability measure fits under the bound")]
    RootCapTooSmall { cap: String },

    #[error("bound violated at {node}: {detail}")]
    BoundViolation { node: BitString, detail: String },

    #[error("semimeasure invalid at {node}")]
    InvalidSemimeasure { node: BitString },

    #[error("machine table is not monotone: inputs {a} \u{2286} {b} map to incomparable outputs")]
    InconsistentMachine { a: BitString, b: BitString },

    #[error("structure too large: {0}")]
    TooLarge(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("the conversion factor diverges: t must exceed s")]
    NonDominatingExponents,

    #[error("not enough input levels: need at least {need}, have {have}")]
    InsufficientLevels { need: usize, have: usize },

    #[error("dimension interval did not close within tolerance at this depth (width {width}); increase the depth")]
    InsufficientDepth { width: String },

    #[error("flow polytope is empty: the tree has no nodes at the requested depth")]
    InfeasibleFlow,
}

pub type Result<T> = std::result::Result<T, Error>;
