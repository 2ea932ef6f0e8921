//! Step-by-step record of what the search did, in commit order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    /// Baseline did not exhibit the focal behavior; the search never ran.
    GateFailed,
    /// The requested number of explanations was found.
    ExplanationCap,
    /// The time budget ran out.
    TimeBudget,
    /// Every candidate subset was evaluated or pruned.
    Exhausted,
    /// The candidate space at the next cardinality exceeded the safety cap.
    CandidateLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    BaselineScored {
        score: f64,
    },
    GateSkipped {
        baseline: f64,
    },
    ElementScored {
        index: usize,
        score: f64,
    },
    SingleAccepted {
        index: usize,
        score: f64,
    },
    SubsetEvaluated {
        subset: Vec<usize>,
        predicted: f64,
        score: f64,
        accepted: bool,
    },
    /// Emitted right after a subset is accepted: every strict superset still
    /// pending is dropped from the work list.
    SupersetsPruned {
        of: Vec<usize>,
    },
    Halted {
        reason: HaltReason,
    },
}
