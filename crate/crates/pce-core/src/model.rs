//! Domain types shared by every other module.
//!
//! A [`SegmentedPrompt`] is the unit the whole pipeline operates on: an
//! ordered list of explanation elements (words, sentences, or custom spans)
//! plus the joiner text between them, so the original prompt can always be
//! reconstructed byte-exactly. Masking a set of elements produces the
//! perturbed prompt text that gets sent to the generator.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("element index {index} out of range for prompt with {len} elements")]
    InvalidIndex { index: usize, len: usize },
    #[error("mask target must name at least one element")]
    EmptyTarget,
    #[error("literal replacement must supply exactly one string per targeted index")]
    ReplacementMismatch,
    #[error("prompt must contain at least one element")]
    NoElements,
    #[error("element {index} is invalid: {reason}")]
    InvalidElement { index: usize, reason: String },
    #[error("joiner list must have exactly one more entry than the element list")]
    JoinerArity,
    #[error("elements and joiners do not reassemble into the original text")]
    ReconstructionMismatch,
    #[error("{0}")]
    InvalidQuery(String),
}

/// Granularity of an explanation element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Word,
    Sentence,
    Custom,
}

/// One maskable unit of the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    /// 0-based position in document order.
    pub index: usize,
    /// The exact text of the element, identical to `original_text[span]`.
    pub text: String,
    /// Byte range `[start, end)` into the original text.
    pub span: (usize, usize),
    pub kind: ElementKind,
}

/// A prompt split into elements with enough joiner metadata to reassemble
/// the original text byte-exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedPrompt {
    original_text: String,
    elements: Vec<Element>,
    /// `n + 1` entries: leading text, the gap after each element except the
    /// last, and trailing text.
    joiners: Vec<String>,
}

impl SegmentedPrompt {
    /// Builds a prompt and checks every structural invariant, including the
    /// byte-exact round trip.
    pub fn new(
        original_text: String,
        elements: Vec<Element>,
        joiners: Vec<String>,
    ) -> Result<Self, ModelError> {
        if elements.is_empty() {
            return Err(ModelError::NoElements);
        }
        if joiners.len() != elements.len() + 1 {
            return Err(ModelError::JoinerArity);
        }
        let mut prev_end = 0usize;
        for (i, el) in elements.iter().enumerate() {
            if el.index != i {
                return Err(ModelError::InvalidElement {
                    index: i,
                    reason: format!("index field is {}, expected {}", el.index, i),
                });
            }
            let (start, end) = el.span;
            if el.text.is_empty() {
                return Err(ModelError::InvalidElement {
                    index: i,
                    reason: "empty text".into(),
                });
            }
            if start < prev_end || end <= start || end > original_text.len() {
                return Err(ModelError::InvalidElement {
                    index: i,
                    reason: format!("span {start}..{end} is out of order or out of bounds"),
                });
            }
            if original_text.get(start..end) != Some(el.text.as_str()) {
                return Err(ModelError::InvalidElement {
                    index: i,
                    reason: "span does not match text".into(),
                });
            }
            prev_end = end;
        }
        let prompt = Self {
            original_text,
            elements,
            joiners,
        };
        if prompt.reconstruct() != prompt.original_text {
            return Err(ModelError::ReconstructionMismatch);
        }
        Ok(prompt)
    }

    pub fn original_text(&self) -> &str {
        &self.original_text
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// Number of elements `n` (always ≥ 1).
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn element_texts(&self) -> Vec<String> {
        self.elements.iter().map(|e| e.text.clone()).collect()
    }

    /// Reassembles the original text from elements and joiners.
    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.original_text.len());
        out.push_str(&self.joiners[0]);
        for (i, el) in self.elements.iter().enumerate() {
            if i > 0 {
                out.push_str(&self.joiners[i]);
            }
            out.push_str(&el.text);
        }
        out.push_str(&self.joiners[self.elements.len()]);
        out
    }

    /// Applies a mask plan and returns the perturbed prompt text.
    ///
    /// Underscore masking replaces each targeted element with a run of
    /// underscores matching its character length. Removal drops the element
    /// together with the joiner that precedes it (so interior whitespace
    /// collapses instead of doubling). Literal replacement substitutes the
    /// supplied string per index.
    pub fn apply_mask(&self, plan: &MaskPlan) -> Result<String, ModelError> {
        let n = self.elements.len();
        if plan.target.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        if let Some(&bad) = plan.target.iter().find(|&&i| i >= n) {
            return Err(ModelError::InvalidIndex { index: bad, len: n });
        }
        match &plan.strategy {
            MaskStrategy::Removal => {
                let mut out = String::new();
                out.push_str(&self.joiners[0]);
                let mut emitted = 0usize;
                for (i, el) in self.elements.iter().enumerate() {
                    if plan.target.contains(&i) {
                        continue;
                    }
                    if emitted > 0 {
                        // The gap kept is the one immediately before this
                        // element in the original text.
                        out.push_str(&self.joiners[i]);
                    }
                    out.push_str(&el.text);
                    emitted += 1;
                }
                out.push_str(&self.joiners[n]);
                Ok(out)
            }
            MaskStrategy::UnderscoreMask | MaskStrategy::LiteralReplacement(_) => {
                let replacement_for = |i: usize, el: &Element| -> Result<String, ModelError> {
                    match &plan.strategy {
                        MaskStrategy::UnderscoreMask => {
                            Ok("_".repeat(el.text.chars().count()))
                        }
                        MaskStrategy::LiteralReplacement(map) => map
                            .get(&i)
                            .cloned()
                            .ok_or(ModelError::ReplacementMismatch),
                        MaskStrategy::Removal => unreachable!(),
                    }
                };
                let mut out = String::new();
                out.push_str(&self.joiners[0]);
                for (i, el) in self.elements.iter().enumerate() {
                    if i > 0 {
                        out.push_str(&self.joiners[i]);
                    }
                    if plan.target.contains(&i) {
                        out.push_str(&replacement_for(i, el)?);
                    } else {
                        out.push_str(&el.text);
                    }
                }
                out.push_str(&self.joiners[n]);
                Ok(out)
            }
        }
    }
}

/// How targeted elements are replaced in the masked prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Replace each element with underscores of equal character length.
    UnderscoreMask,
    /// Delete the element and collapse the adjacent joiner.
    Removal,
    /// Substitute a caller-supplied string per targeted index.
    LiteralReplacement(BTreeMap<usize, String>),
}

/// A validated set of element indices plus the replacement strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    target: BTreeSet<usize>,
    strategy: MaskStrategy,
}

impl MaskPlan {
    pub fn new(target: BTreeSet<usize>, strategy: MaskStrategy) -> Result<Self, ModelError> {
        if target.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        if let MaskStrategy::LiteralReplacement(map) = &strategy {
            if map.keys().cloned().collect::<BTreeSet<_>>() != target {
                return Err(ModelError::ReplacementMismatch);
            }
        }
        Ok(Self { target, strategy })
    }

    pub fn target(&self) -> &BTreeSet<usize> {
        &self.target
    }

    pub fn strategy(&self) -> &MaskStrategy {
        &self.strategy
    }
}

/// The generations produced for one prompt variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<String>,
    /// Per-sample seeds; `None` when the backend cannot be seeded, which is
    /// flagged in the run manifest.
    pub seeds: Option<Vec<u64>>,
    pub source_prompt_text: String,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One downstream classifier verdict, normalized so that higher scores mean
/// "more of the focal characteristic".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierValue {
    Score(f64),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOutput {
    pub value: ClassifierValue,
    /// Opaque backend payload retained for audit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<serde_json::Value>,
}

impl ClassifierOutput {
    pub fn score(score: f64) -> Self {
        Self {
            value: ClassifierValue::Score(score),
            raw: None,
        }
    }

    pub fn label(label: impl Into<String>) -> Self {
        Self {
            value: ClassifierValue::Label(label.into()),
            raw: None,
        }
    }

    pub fn with_raw(mut self, raw: serde_json::Value) -> Self {
        self.raw = Some(raw);
        self
    }
}

/// Which way the aggregate must move past the threshold for an explanation
/// to count as successful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SuccessDirection {
    #[default]
    Below,
    Above,
}

/// The question a run answers: what must masking achieve, with how many
/// samples, and under which budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicQuery {
    pub threshold: f64,
    #[serde(default)]
    pub success_direction: SuccessDirection,
    pub num_samples: usize,
    pub num_explanations: usize,
    pub time_limit: Duration,
    #[serde(default = "default_max_subset_cardinality")]
    pub max_subset_cardinality: usize,
}

fn default_max_subset_cardinality() -> usize {
    3
}

impl CharacteristicQuery {
    pub fn new(threshold: f64, num_samples: usize, num_explanations: usize) -> Self {
        Self {
            threshold,
            success_direction: SuccessDirection::Below,
            num_samples,
            num_explanations,
            time_limit: Duration::from_secs(60),
            max_subset_cardinality: default_max_subset_cardinality(),
        }
    }

    pub fn with_direction(mut self, dir: SuccessDirection) -> Self {
        self.success_direction = dir;
        self
    }

    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = limit;
        self
    }

    pub fn with_max_subset_cardinality(mut self, cap: usize) -> Self {
        self.max_subset_cardinality = cap;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_samples == 0 {
            return Err(ModelError::InvalidQuery("num_samples must be ≥ 1".into()));
        }
        if self.num_explanations == 0 {
            return Err(ModelError::InvalidQuery(
                "num_explanations must be ≥ 1".into(),
            ));
        }
        if self.time_limit.is_zero() {
            return Err(ModelError::InvalidQuery("time_limit must be > 0".into()));
        }
        if self.max_subset_cardinality == 0 {
            return Err(ModelError::InvalidQuery(
                "max_subset_cardinality must be ≥ 1".into(),
            ));
        }
        if !self.threshold.is_finite() {
            return Err(ModelError::InvalidQuery("threshold must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationKind {
    Single,
    Multi,
}

/// A minimal set of element indices whose masking moved the aggregate past
/// the threshold, together with the score that proved it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub element_indices: BTreeSet<usize>,
    pub achieved_score: f64,
    pub evaluated_with: usize,
    pub kind: ExplanationKind,
}

impl Explanation {
    pub fn is_strict_superset_of(&self, other: &Explanation) -> bool {
        self.element_indices.len() > other.element_indices.len()
            && other
                .element_indices
                .iter()
                .all(|i| self.element_indices.contains(i))
    }
}

/// Baseline aggregate plus one masked-aggregate per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub baseline: f64,
    pub per_element: BTreeMap<usize, f64>,
}

impl ScoreTable {
    /// Element indices ordered by ascending masked score, ties broken by
    /// ascending index.
    pub fn indices_by_ascending_score(&self) -> Vec<usize> {
        let mut indices: Vec<usize> = self.per_element.keys().copied().collect();
        indices.sort_by(|a, b| {
            let sa = self.per_element[a];
            let sb = self.per_element[b];
            sa.partial_cmp(&sb)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        });
        indices
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{segment, SegmenterConfig};

    fn word_prompt(text: &str) -> SegmentedPrompt {
        segment(text, &SegmenterConfig::word()).unwrap()
    }

    fn plan(indices: &[usize], strategy: MaskStrategy) -> MaskPlan {
        MaskPlan::new(indices.iter().copied().collect(), strategy).unwrap()
    }

    #[test]
    fn reconstruct_is_identity() {
        for text in ["a b c", "Hello.  World.", "x", "  leading and  trailing  "] {
            let p = word_prompt(text);
            assert_eq!(p.reconstruct(), text);
        }
    }

    #[test]
    fn removal_collapses_adjacent_joiner() {
        let p = word_prompt("Create a horrible short story about a dog");
        let masked = p
            .apply_mask(&plan(&[2], MaskStrategy::Removal))
            .unwrap();
        assert_eq!(masked, "Create a short story about a dog");
    }

    #[test]
    fn removal_of_last_element_drops_preceding_gap() {
        let p = word_prompt("a b c");
        assert_eq!(p.apply_mask(&plan(&[2], MaskStrategy::Removal)).unwrap(), "a b");
    }

    #[test]
    fn removal_of_all_elements_leaves_only_outer_joiners() {
        let p = word_prompt(" a b c ");
        let masked = p
            .apply_mask(&plan(&[0, 1, 2], MaskStrategy::Removal))
            .unwrap();
        assert_eq!(masked, "  ");
    }

    #[test]
    fn underscore_mask_matches_character_length() {
        let p = word_prompt("a b c");
        assert_eq!(
            p.apply_mask(&plan(&[1], MaskStrategy::UnderscoreMask)).unwrap(),
            "a _ c"
        );
        let p = word_prompt("say héllo now");
        assert_eq!(
            p.apply_mask(&plan(&[1], MaskStrategy::UnderscoreMask)).unwrap(),
            "say _____ now"
        );
    }

    #[test]
    fn empty_target_is_rejected() {
        assert_eq!(
            MaskPlan::new(BTreeSet::new(), MaskStrategy::UnderscoreMask).unwrap_err(),
            ModelError::EmptyTarget
        );
    }

    #[test]
    fn out_of_range_target_is_rejected() {
        let p = word_prompt("a b");
        let err = p
            .apply_mask(&plan(&[5], MaskStrategy::UnderscoreMask))
            .unwrap_err();
        assert_eq!(err, ModelError::InvalidIndex { index: 5, len: 2 });
    }

    #[test]
    fn literal_replacement_substitutes_per_index() {
        let p = word_prompt("the lawsuit continues");
        let mut map = BTreeMap::new();
        map.insert(1usize, "legal case".to_string());
        let masked = p
            .apply_mask(&plan(&[1], MaskStrategy::LiteralReplacement(map)))
            .unwrap();
        assert_eq!(masked, "the legal case continues");
    }

    #[test]
    fn literal_replacement_must_cover_target() {
        let mut map = BTreeMap::new();
        map.insert(0usize, "x".to_string());
        let err = MaskPlan::new([0, 1].into_iter().collect(), MaskStrategy::LiteralReplacement(map))
            .unwrap_err();
        assert_eq!(err, ModelError::ReplacementMismatch);
    }

    #[test]
    fn single_element_prompt_round_trips() {
        let p = word_prompt("x");
        assert_eq!(p.len(), 1);
        assert_eq!(p.reconstruct(), "x");
    }

    #[test]
    fn query_validation_rejects_zero_budgets() {
        let mut q = CharacteristicQuery::new(0.5, 10, 5);
        assert!(q.validate().is_ok());
        q.num_samples = 0;
        assert!(q.validate().is_err());
        let mut q = CharacteristicQuery::new(0.5, 10, 5);
        q.time_limit = Duration::ZERO;
        assert!(q.validate().is_err());
    }
}
