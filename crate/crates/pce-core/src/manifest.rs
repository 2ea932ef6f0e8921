//! Run provenance: everything needed to audit or reproduce a run.
//!
//! Every aggregate score that appears in a [`RunResult`] is traceable to an
//! [`EvaluationRecord`] in the manifest — baseline, per-element scores, and
//! every subset evaluation, each with the masked-text hash and seed base
//! that produced it.

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregateSpec, WilsonInterval};
use crate::backends::GeneratorCapabilities;
use crate::engine::cache::CacheStats;
use crate::engine::trace::TraceEvent;
use crate::model::{CharacteristicQuery, ElementKind, ExplanationKind, ScoreTable};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPhase {
    Baseline,
    Element,
    Subset,
}

/// One committed evaluation: a masked prompt scored over `num_samples`
/// generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub phase: EvalPhase,
    /// Masked element indices; empty for the baseline.
    pub subset: Vec<usize>,
    pub masked_text_sha256: String,
    pub seed_base: u64,
    /// False when the generator cannot be seeded.
    pub sample_seeds_recorded: bool,
    pub num_samples: usize,
    pub aggregate: f64,
    pub cache_hit: bool,
    /// Clock reading (ms) when the evaluation was committed.
    pub at_ms: f64,
}

/// Engine settings that affect the search, snapshotted into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSnapshot {
    pub mask_strategy: String,
    pub parallelism: usize,
    pub lookahead: usize,
    pub cache_enabled: bool,
    pub deterministic_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub generator: GeneratorCapabilities,
    pub classifier_identity: String,
    pub aggregate: AggregateSpec,
    pub query: CharacteristicQuery,
    pub segmenter_mode: ElementKind,
    pub engine: EngineSnapshot,
    pub evaluations: Vec<EvaluationRecord>,
    pub cache: CacheStats,
    /// Window evaluations discarded because an earlier commit pruned them;
    /// always 0 with lookahead 1.
    pub speculative_discarded: usize,
    pub elapsed_ms: f64,
    pub truncated: bool,
    pub non_seedable_generator: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSummary {
    pub text: String,
    pub mode: ElementKind,
    pub elements: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub score: f64,
    /// 95% Wilson interval, present for proportion aggregates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wilson95: Option<WilsonInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub element_indices: Vec<usize>,
    pub element_texts: Vec<String>,
    pub achieved_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wilson95: Option<WilsonInterval>,
    pub evaluated_with: usize,
    pub kind: ExplanationKind,
}

/// The complete outcome of one explanation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub prompt: PromptSummary,
    pub baseline: ScoreSummary,
    pub gate_passed: bool,
    /// Per-element masked scores; absent when the gate failed or element
    /// scoring was cut off by the budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_table: Option<ScoreTable>,
    pub explanations: Vec<ExplanationRecord>,
    pub truncated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub trace: Vec<TraceEvent>,
    pub manifest: RunManifest,
}

impl RunResult {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("run result serializes")
    }

    pub fn from_json(body: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(body)
    }
}
