//! Seeded planted-ground-truth world plus an exhaustive brute-force oracle.
//!
//! A [`PlantedWorld`] makes focal output depend on a known boolean trigger
//! over the prompt's surviving words, so the engine's results can be checked
//! against exact enumeration on small instances. Trigger words are matched
//! against whitespace tokens with punctuation trimmed, which means
//! underscore runs and removals both defeat a trigger.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::aggregation::{aggregate, exhibits_focal_behavior, passes_threshold, AggregateSpec};
use crate::model::{
    CharacteristicQuery, ClassifierOutput, MaskPlan, MaskStrategy, SampleSet, SegmentedPrompt,
};

/// Marker token the simulated generator embeds in focal samples. The
/// simulated classifier keys on it; it never occurs in filler vocabulary.
pub const FOCAL_MARKER: &str = "[[FOCAL]]";

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("exhaustive oracle supports at most 20 elements, got {0}")]
    TooLarge(usize),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

/// Boolean formula over word presence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TriggerExpr {
    Word(String),
    And(Vec<TriggerExpr>),
    Or(Vec<TriggerExpr>),
}

impl TriggerExpr {
    pub fn word(w: impl Into<String>) -> Self {
        TriggerExpr::Word(normalize_word(&w.into()))
    }

    pub fn and(children: Vec<TriggerExpr>) -> Self {
        TriggerExpr::And(children)
    }

    pub fn or(children: Vec<TriggerExpr>) -> Self {
        TriggerExpr::Or(children)
    }

    pub fn eval(&self, present: &BTreeSet<String>) -> bool {
        match self {
            TriggerExpr::Word(w) => present.contains(w),
            TriggerExpr::And(cs) => cs.iter().all(|c| c.eval(present)),
            TriggerExpr::Or(cs) => cs.iter().any(|c| c.eval(present)),
        }
    }

    /// All distinct words mentioned anywhere in the formula.
    pub fn words(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_words(&mut out);
        out
    }

    fn collect_words(&self, out: &mut BTreeSet<String>) {
        match self {
            TriggerExpr::Word(w) => {
                out.insert(w.clone());
            }
            TriggerExpr::And(cs) | TriggerExpr::Or(cs) => {
                for c in cs {
                    c.collect_words(out);
                }
            }
        }
    }

    fn to_value(&self) -> serde_json::Value {
        match self {
            TriggerExpr::Word(w) => serde_json::Value::String(w.clone()),
            TriggerExpr::And(cs) => {
                let mut arr = vec![serde_json::Value::String("and".into())];
                arr.extend(cs.iter().map(|c| c.to_value()));
                serde_json::Value::Array(arr)
            }
            TriggerExpr::Or(cs) => {
                let mut arr = vec![serde_json::Value::String("or".into())];
                arr.extend(cs.iter().map(|c| c.to_value()));
                serde_json::Value::Array(arr)
            }
        }
    }

    fn from_value(value: &serde_json::Value) -> Result<Self, String> {
        match value {
            serde_json::Value::String(w) => Ok(TriggerExpr::word(w)),
            serde_json::Value::Array(arr) => {
                let op = arr
                    .first()
                    .and_then(|v| v.as_str())
                    .ok_or("operator expected as first array entry")?;
                if arr.len() < 2 {
                    return Err(format!("operator {op:?} needs at least one operand"));
                }
                let children: Result<Vec<_>, _> =
                    arr[1..].iter().map(Self::from_value).collect();
                match op {
                    "and" => Ok(TriggerExpr::And(children?)),
                    "or" => Ok(TriggerExpr::Or(children?)),
                    other => Err(format!("unknown operator {other:?}")),
                }
            }
            other => Err(format!("expected string or array, got {other}")),
        }
    }
}

impl Serialize for TriggerExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TriggerExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        Self::from_value(&value).map_err(D::Error::custom)
    }
}

/// Classifier score values emitted for focal and clean samples; used both by
/// the score-mode simulated classifier and by closed-form evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionProfile {
    pub focal_score: f64,
    pub clean_score: f64,
}

impl Default for EmissionProfile {
    fn default() -> Self {
        Self {
            focal_score: 1.0,
            clean_score: 0.0,
        }
    }
}

fn default_vocabulary() -> Vec<String> {
    [
        "river", "lantern", "meadow", "quietly", "orchard", "pebble", "harbor", "violet",
        "thread", "morning",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// A seeded world in which focal output depends on a known trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedWorld {
    pub trigger: TriggerExpr,
    /// P(focal sample) when the trigger is satisfied.
    pub p_hi: f64,
    /// P(focal sample) when the trigger is not satisfied.
    pub p_lo: f64,
    #[serde(default = "default_vocabulary")]
    pub vocabulary: Vec<String>,
    pub master_seed: u64,
    #[serde(default)]
    pub emission: EmissionProfile,
}

impl PlantedWorld {
    pub fn new(trigger: TriggerExpr, p_hi: f64, p_lo: f64, master_seed: u64) -> Self {
        Self {
            trigger,
            p_hi,
            p_lo,
            vocabulary: default_vocabulary(),
            master_seed,
            emission: EmissionProfile::default(),
        }
    }

    pub fn with_emission(mut self, focal_score: f64, clean_score: f64) -> Self {
        self.emission = EmissionProfile {
            focal_score,
            clean_score,
        };
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.p_lo)
            || !(0.0..=1.0).contains(&self.p_hi)
            || self.p_lo > self.p_hi
        {
            return Err(SimError::InvalidWorld(format!(
                "probabilities must satisfy 0 ≤ p_lo ≤ p_hi ≤ 1, got p_lo={} p_hi={}",
                self.p_lo, self.p_hi
            )));
        }
        if self.vocabulary.is_empty() {
            return Err(SimError::InvalidWorld("vocabulary must be non-empty".into()));
        }
        Ok(())
    }

    pub fn from_json(body: &str) -> Result<Self, SimError> {
        let world: PlantedWorld =
            serde_json::from_str(body).map_err(|e| SimError::InvalidWorld(e.to_string()))?;
        world.validate()?;
        Ok(world)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    /// True when every sample outcome is fully determined by the trigger.
    pub fn is_deterministic(&self) -> bool {
        (self.p_hi == 0.0 || self.p_hi == 1.0) && (self.p_lo == 0.0 || self.p_lo == 1.0)
    }

    /// P(focal sample) for the given prompt text.
    pub fn focal_probability(&self, prompt_text: &str) -> f64 {
        if self.trigger.eval(&surviving_words(prompt_text)) {
            self.p_hi
        } else {
            self.p_lo
        }
    }
}

/// Lowercased word cores present in the text: whitespace tokens with
/// non-alphanumeric edges trimmed. Underscore runs trim to nothing and are
/// dropped, which is what lets masking defeat triggers.
pub fn surviving_words(text: &str) -> BTreeSet<String> {
    text.split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Trims non-alphanumeric edges and lowercases.
pub fn normalize_word(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Draws `k` samples for the prompt; sample `i` is fully determined by
/// `seed_base + i`.
pub fn sim_generate(world: &PlantedWorld, prompt_text: &str, k: usize, seed_base: u64) -> SampleSet {
    let p = world.focal_probability(prompt_text);
    let mut samples = Vec::with_capacity(k);
    let mut seeds = Vec::with_capacity(k);
    for i in 0..k {
        let seed = seed_base.wrapping_add(i as u64);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let focal = rng.gen_bool(p);
        let mut words = Vec::with_capacity(6);
        for _ in 0..5 {
            let idx = rng.gen_range(0..world.vocabulary.len());
            words.push(world.vocabulary[idx].as_str());
        }
        let mut text = words.join(" ");
        if focal {
            text.push(' ');
            text.push_str(FOCAL_MARKER);
        }
        samples.push(text);
        seeds.push(seed);
    }
    SampleSet {
        samples,
        seeds: Some(seeds),
        source_prompt_text: prompt_text.to_string(),
    }
}

/// Classifies a simulated sample by marker presence. Shared by the oracle's
/// sampling fallback and the simulated classifier backend.
pub fn sample_is_focal(text: &str) -> bool {
    text.contains(FOCAL_MARKER)
}

/// Exact expected aggregate for a focal probability `p`, valid whenever the
/// outcome distribution is two-pointed. For deterministic worlds
/// (`p ∈ {0, 1}`) this is the exact aggregate of any sample set.
pub fn expected_aggregate(world: &PlantedWorld, p: f64, spec: &AggregateSpec) -> f64 {
    use crate::aggregation::AggregateKind;
    match &spec.kind {
        AggregateKind::FocalLabelProportion => p,
        AggregateKind::MeanScore => {
            p * world.emission.focal_score + (1.0 - p) * world.emission.clean_score
        }
        AggregateKind::Quantile { q } => {
            // Mass (1-p) sits at clean_score, p at focal_score (clean < focal
            // not assumed; handle both orders).
            let (lo, hi, mass_lo) = if world.emission.clean_score <= world.emission.focal_score {
                (world.emission.clean_score, world.emission.focal_score, 1.0 - p)
            } else {
                (world.emission.focal_score, world.emission.clean_score, p)
            };
            if *q < mass_lo {
                lo
            } else {
                hi
            }
        }
    }
}

fn classify_samples(samples: &SampleSet, spec: &AggregateSpec) -> Vec<ClassifierOutput> {
    use crate::aggregation::AggregateKind;
    samples
        .samples
        .iter()
        .map(|s| {
            let focal = sample_is_focal(s);
            match spec.kind {
                AggregateKind::FocalLabelProportion => {
                    ClassifierOutput::label(if focal { "focal" } else { "clean" })
                }
                _ => ClassifierOutput::score(if focal { 1.0 } else { 0.0 }),
            }
        })
        .collect()
}

/// Number of samples the oracle draws per masking in stochastic worlds.
const ORACLE_SAMPLES: usize = 4000;

/// Exact aggregate for one masking: closed form in deterministic worlds,
/// large seeded sample otherwise.
fn oracle_score(
    world: &PlantedWorld,
    prompt: &SegmentedPrompt,
    mask: &BTreeSet<usize>,
    spec: &AggregateSpec,
) -> f64 {
    let text = if mask.is_empty() {
        prompt.original_text().to_string()
    } else {
        let plan = MaskPlan::new(mask.clone(), MaskStrategy::UnderscoreMask)
            .expect("non-empty validated mask");
        prompt.apply_mask(&plan).expect("mask indices validated")
    };
    let p = world.focal_probability(&text);
    if world.is_deterministic() {
        return expected_aggregate(world, p, spec);
    }
    let seed = crate::engine::derive_seed(world.master_seed ^ 0x6f72_6163_6c65, &text);
    let samples = sim_generate(world, &text, ORACLE_SAMPLES, seed);
    let outputs = classify_samples(&samples, spec);
    let mut spec_for_scores = spec.clone();
    if spec_for_scores.focal_label.is_none() {
        spec_for_scores.focal_label = Some("focal".into());
    }
    aggregate(&outputs, &spec_for_scores).expect("oracle outputs are well-formed")
}

/// Enumerates every non-empty masking of the prompt and returns the set of
/// minimal passing subsets (an anti-chain). Mirrors the engine's gate: when
/// the unmasked prompt does not exhibit focal behavior there is nothing to
/// explain and the result is empty.
pub fn oracle_explanations(
    world: &PlantedWorld,
    prompt: &SegmentedPrompt,
    query: &CharacteristicQuery,
    spec: &AggregateSpec,
) -> Result<BTreeSet<BTreeSet<usize>>, SimError> {
    let n = prompt.len();
    if n > 20 {
        return Err(SimError::TooLarge(n));
    }
    let baseline = oracle_score(world, prompt, &BTreeSet::new(), spec);
    let mut minimal: BTreeSet<BTreeSet<usize>> = BTreeSet::new();
    if !exhibits_focal_behavior(baseline, query) {
        return Ok(minimal);
    }
    let mut subsets: Vec<u32> = (1..(1u32 << n)).collect();
    subsets.sort_by_key(|m| m.count_ones());
    for mask_bits in subsets {
        let subset: BTreeSet<usize> = (0..n).filter(|i| mask_bits & (1 << i) != 0).collect();
        if minimal
            .iter()
            .any(|m| m.iter().all(|i| subset.contains(i)))
        {
            continue; // a passing proper subset exists; not minimal
        }
        let score = oracle_score(world, prompt, &subset, spec);
        if passes_threshold(score, query) {
            minimal.insert(subset);
        }
    }
    Ok(minimal)
}
