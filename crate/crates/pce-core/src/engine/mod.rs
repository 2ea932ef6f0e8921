//! The explanation search: baseline scoring, per-element scoring, and
//! subset construction with caching, budget enforcement, and superset
//! pruning.
//!
//! The search runs in two phases. Phase one scores the unmodified prompt,
//! gates on focal behavior, then scores each element's masking. Phase two
//! first accepts every single element whose masked score already crosses
//! the threshold, then walks multi-element subsets of the remaining
//! elements ordered by (cardinality ascending, predicted score ascending,
//! index order), re-generating fresh samples for each candidate. Accepting
//! a subset prunes all of its strict supersets, which is what keeps the
//! returned set an anti-chain.

pub mod cache;
pub mod clock;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregation::{
    aggregate, exhibits_focal_behavior, passes_threshold, wilson95, AggregateError, AggregateSpec,
    WilsonInterval,
};
use crate::backends::{BackendError, ClassifierBackend, GeneratorBackend, GeneratorCapabilities};
use crate::manifest::{
    EngineSnapshot, EvalPhase, EvaluationRecord, ExplanationRecord, PromptSummary, RunManifest,
    RunResult, ScoreSummary, SCHEMA_VERSION,
};
use crate::model::{
    CharacteristicQuery, Explanation, ExplanationKind, MaskPlan, MaskStrategy, ModelError,
    ScoreTable, SegmentedPrompt,
};
use crate::segmentation::{segment, SegmentError, SegmenterConfig};

use cache::{CacheKey, CacheStats, CachedEvaluation, EvaluationCache};
use clock::{ClockSpec, RunClock};
use trace::{HaltReason, TraceEvent};

/// Upper bound on the candidate list materialized for one cardinality.
const CANDIDATE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("generator {endpoint} returned {got} samples, expected {expected}")]
    WrongSampleCount {
        endpoint: String,
        expected: usize,
        got: usize,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("time budget exhausted during element scoring")]
    TimeBudget,
}

/// Replacement strategy the search uses for candidate maskings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EngineMaskStrategy {
    #[default]
    Underscore,
    Removal,
}

impl EngineMaskStrategy {
    fn to_mask_strategy(self) -> MaskStrategy {
        match self {
            EngineMaskStrategy::Underscore => MaskStrategy::UnderscoreMask,
            EngineMaskStrategy::Removal => MaskStrategy::Removal,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EngineMaskStrategy::Underscore => "underscore",
            EngineMaskStrategy::Removal => "removal",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub master_seed: u64,
    pub mask_strategy: EngineMaskStrategy,
    /// Worker threads for fan-out over independent evaluations.
    pub parallelism: usize,
    /// How many surviving candidates phase two dispatches per window.
    /// Results always commit in work-list order; with 1 the halt bound is
    /// exactly `time_limit` + one evaluation.
    pub lookahead: usize,
    pub cache_enabled: bool,
    pub clock: ClockSpec,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            mask_strategy: EngineMaskStrategy::Underscore,
            parallelism: 1,
            lookahead: 1,
            cache_enabled: true,
            clock: ClockSpec::default(),
        }
    }
}

impl EngineConfig {
    pub fn with_seed(master_seed: u64) -> Self {
        Self {
            master_seed,
            ..Self::default()
        }
    }
}

/// Running state of one explanation search.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub score_table: ScoreTable,
    pub explanations: Vec<Explanation>,
    pub evaluations_used: usize,
    pub elapsed: Duration,
    pub truncated: bool,
}

impl SearchState {
    pub fn new(score_table: ScoreTable) -> Self {
        Self {
            score_table,
            explanations: Vec::new(),
            evaluations_used: 0,
            elapsed: Duration::ZERO,
            truncated: false,
        }
    }
}

/// Stable seed for a masked prompt: the same masking always regenerates the
/// same samples, and different maskings get independent streams.
pub fn derive_seed(master_seed: u64, masked_text: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(masked_text.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

pub fn text_sha256(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn sample_digest(samples: &[String]) -> String {
    let mut hasher = Sha256::new();
    for s in samples {
        hasher.update((s.len() as u64).to_le_bytes());
        hasher.update(s.as_bytes());
    }
    hex(&hasher.finalize())
}

pub struct Engine {
    config: EngineConfig,
    cache: EvaluationCache,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Self {
            config,
            cache: EvaluationCache::new(),
        }
    }

    pub fn with_cache(config: EngineConfig, cache: EvaluationCache) -> Self {
        Self { config, cache }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn cache(&self) -> &EvaluationCache {
        &self.cache
    }

    /// Aggregate score of the unmodified prompt over `num_samples` fresh
    /// generations.
    pub fn score_baseline(
        &self,
        prompt: &SegmentedPrompt,
        query: &CharacteristicQuery,
        generator: &dyn GeneratorBackend,
        classifier: &dyn ClassifierBackend,
        spec: &AggregateSpec,
    ) -> Result<f64, EngineError> {
        query.validate()?;
        let mut ctx = RunCtx::new(self, prompt, query, generator, classifier, spec);
        let pending = ctx.evaluate(&BTreeSet::new())?;
        Ok(ctx.commit(pending, EvalPhase::Baseline))
    }

    /// One aggregate score per element, each over `num_samples` fresh
    /// generations of the element-masked prompt. Requires that the baseline
    /// exhibited focal behavior.
    pub fn score_elements(
        &self,
        prompt: &SegmentedPrompt,
        baseline: f64,
        query: &CharacteristicQuery,
        generator: &dyn GeneratorBackend,
        classifier: &dyn ClassifierBackend,
        spec: &AggregateSpec,
    ) -> Result<ScoreTable, EngineError> {
        query.validate()?;
        if !exhibits_focal_behavior(baseline, query) {
            return Err(EngineError::Precondition(
                "score_elements requires a baseline that exhibits the focal behavior".into(),
            ));
        }
        let mut ctx = RunCtx::new(self, prompt, query, generator, classifier, spec);
        match ctx.score_elements_inner(baseline)? {
            Some(table) => Ok(table),
            None => Err(EngineError::TimeBudget),
        }
    }

    /// Phase two: accept singletons, then walk multi-element candidates.
    /// Running out of time is not an error; the state is marked truncated
    /// and whatever was found so far is kept.
    pub fn construct_explanations(
        &self,
        state: &mut SearchState,
        prompt: &SegmentedPrompt,
        query: &CharacteristicQuery,
        generator: &dyn GeneratorBackend,
        classifier: &dyn ClassifierBackend,
        spec: &AggregateSpec,
    ) -> Result<(), EngineError> {
        query.validate()?;
        let mut ctx = RunCtx::new(self, prompt, query, generator, classifier, spec);
        ctx.construct_inner(state)?;
        Ok(())
    }

    /// End-to-end run: segment, score the baseline, gate, score elements,
    /// construct explanations, and assemble the manifest.
    pub fn explain(
        &self,
        prompt_text: &str,
        segmenter: &SegmenterConfig,
        query: &CharacteristicQuery,
        generator: &dyn GeneratorBackend,
        classifier: &dyn ClassifierBackend,
        spec: &AggregateSpec,
    ) -> Result<RunResult, EngineError> {
        query.validate()?;
        let prompt = segment(prompt_text, segmenter)?;
        let mut ctx = RunCtx::new(self, &prompt, query, generator, classifier, spec);

        let pending = ctx.evaluate(&BTreeSet::new())?;
        let baseline = ctx.commit(pending, EvalPhase::Baseline);
        ctx.trace.push(TraceEvent::BaselineScored { score: baseline });

        if !exhibits_focal_behavior(baseline, query) {
            ctx.trace.push(TraceEvent::GateSkipped { baseline });
            ctx.trace.push(TraceEvent::Halted {
                reason: HaltReason::GateFailed,
            });
            return Ok(ctx.finish(
                &prompt,
                baseline,
                false,
                None,
                Vec::new(),
                false,
                Some("no focal behavior".to_string()),
            ));
        }

        let table = match ctx.score_elements_inner(baseline)? {
            Some(table) => table,
            None => {
                ctx.trace.push(TraceEvent::Halted {
                    reason: HaltReason::TimeBudget,
                });
                return Ok(ctx.finish(
                    &prompt,
                    baseline,
                    true,
                    None,
                    Vec::new(),
                    true,
                    Some("time budget exhausted during element scoring".to_string()),
                ));
            }
        };

        let mut state = SearchState::new(table);
        ctx.construct_inner(&mut state)?;

        let note = if state.explanations.is_empty() {
            if prompt.len() == 1 {
                Some("irreducible prompt: masking its single element did not cross the threshold".to_string())
            } else if state.truncated {
                Some("no explanations found before the time budget ran out".to_string())
            } else {
                Some("no explanations found within the configured budgets".to_string())
            }
        } else {
            None
        };

        let truncated = state.truncated;
        let explanations = state.explanations.clone();
        Ok(ctx.finish(
            &prompt,
            baseline,
            true,
            Some(state.score_table),
            explanations,
            truncated,
            note,
        ))
    }
}

struct PendingEval {
    subset: Vec<usize>,
    masked_text_sha256: String,
    seed_base: u64,
    num_samples: usize,
    score: f64,
    cache_hit: bool,
}

struct RunCtx<'a> {
    engine: &'a Engine,
    prompt: &'a SegmentedPrompt,
    query: &'a CharacteristicQuery,
    generator: &'a dyn GeneratorBackend,
    classifier: &'a dyn ClassifierBackend,
    spec: &'a AggregateSpec,
    clock: Arc<dyn RunClock>,
    gen_caps: GeneratorCapabilities,
    records: Vec<EvaluationRecord>,
    trace: Vec<TraceEvent>,
    cache_stats: CacheStats,
    speculative_discarded: usize,
    notes: Vec<String>,
}

impl<'a> RunCtx<'a> {
    fn new(
        engine: &'a Engine,
        prompt: &'a SegmentedPrompt,
        query: &'a CharacteristicQuery,
        generator: &'a dyn GeneratorBackend,
        classifier: &'a dyn ClassifierBackend,
        spec: &'a AggregateSpec,
    ) -> Self {
        Self {
            engine,
            prompt,
            query,
            generator,
            classifier,
            spec,
            clock: engine.config.clock.start(),
            gen_caps: generator.capabilities(),
            records: Vec::new(),
            trace: Vec::new(),
            cache_stats: CacheStats::default(),
            speculative_discarded: 0,
            notes: Vec::new(),
        }
    }

    fn workers(&self) -> usize {
        if cfg!(target_arch = "wasm32") {
            1
        } else {
            self.engine.config.parallelism.max(1)
        }
    }

    fn masked_text(&self, subset: &BTreeSet<usize>) -> Result<String, ModelError> {
        if subset.is_empty() {
            return Ok(self.prompt.original_text().to_string());
        }
        let plan = MaskPlan::new(
            subset.clone(),
            self.engine.config.mask_strategy.to_mask_strategy(),
        )?;
        self.prompt.apply_mask(&plan)
    }

    /// Evaluates one masking. Safe to call from worker threads; the caller
    /// commits results in a deterministic order afterwards.
    fn evaluate(&self, subset: &BTreeSet<usize>) -> Result<PendingEval, EngineError> {
        let masked = self.masked_text(subset)?;
        let masked_hash = text_sha256(&masked);
        let seed_base = derive_seed(self.engine.config.master_seed, &masked);
        let k = self.query.num_samples;
        let key = CacheKey {
            masked_text_sha256: masked_hash.clone(),
            num_samples: k,
            seed_base,
            generator_identity: self.gen_caps.identity.clone(),
            classifier_identity: self.classifier.identity(),
            aggregate_fingerprint: self.spec.fingerprint(),
        };

        if self.engine.config.cache_enabled {
            if let Some(hit) = self.engine.cache.get(&key) {
                return Ok(PendingEval {
                    subset: subset.iter().copied().collect(),
                    masked_text_sha256: masked_hash,
                    seed_base,
                    num_samples: k,
                    score: hit.aggregate,
                    cache_hit: true,
                });
            }
        }

        let samples = self.generator.generate(&masked, k, seed_base)?;
        if samples.len() != k {
            return Err(EngineError::WrongSampleCount {
                endpoint: self.gen_caps.identity.clone(),
                expected: k,
                got: samples.len(),
            });
        }
        let outputs = samples
            .samples
            .iter()
            .map(|s| self.classifier.classify(s))
            .collect::<Result<Vec<_>, _>>()?;
        let score = aggregate(&outputs, self.spec)?;

        if self.engine.config.cache_enabled {
            self.engine.cache.insert(
                key,
                CachedEvaluation {
                    aggregate: score,
                    sample_digest: sample_digest(&samples.samples),
                },
            );
        }
        Ok(PendingEval {
            subset: subset.iter().copied().collect(),
            masked_text_sha256: masked_hash,
            seed_base,
            num_samples: k,
            score,
            cache_hit: false,
        })
    }

    /// Commits a finished evaluation: advances the clock, records it in the
    /// manifest, and returns the score.
    fn commit(&mut self, pending: PendingEval, phase: EvalPhase) -> f64 {
        self.clock.tick();
        if pending.cache_hit {
            self.cache_stats.hits += 1;
        } else {
            self.cache_stats.misses += 1;
        }
        let score = pending.score;
        self.records.push(EvaluationRecord {
            phase,
            subset: pending.subset,
            masked_text_sha256: pending.masked_text_sha256,
            seed_base: pending.seed_base,
            sample_seeds_recorded: self.gen_caps.supports_seed,
            num_samples: pending.num_samples,
            aggregate: score,
            cache_hit: pending.cache_hit,
            at_ms: self.clock.elapsed().as_secs_f64() * 1000.0,
        });
        score
    }

    fn budget_exhausted(&self) -> bool {
        self.clock.elapsed() >= self.query.time_limit
    }

    /// Scores every element's masking, fanning out across workers but
    /// committing in index order. Returns `None` when the time budget runs
    /// out before the table is complete.
    fn score_elements_inner(&mut self, baseline: f64) -> Result<Option<ScoreTable>, EngineError> {
        let n = self.prompt.len();
        let workers = self.workers();
        let mut per_element = BTreeMap::new();
        let mut next = 0usize;
        while next < n {
            if self.budget_exhausted() {
                return Ok(None);
            }
            let end = (next + workers).min(n);
            let chunk: Vec<usize> = (next..end).collect();
            let results = parallel_map(chunk, workers, |i| {
                let subset: BTreeSet<usize> = [i].into_iter().collect();
                self.evaluate(&subset).map(|p| (i, p))
            });
            for result in results {
                let (i, pending) = result?;
                let score = self.commit(pending, EvalPhase::Element);
                self.trace.push(TraceEvent::ElementScored { index: i, score });
                per_element.insert(i, score);
            }
            next = end;
        }
        Ok(Some(ScoreTable {
            baseline,
            per_element,
        }))
    }

    fn construct_inner(&mut self, state: &mut SearchState) -> Result<(), EngineError> {
        let cap = self.query.num_explanations;

        // Phase A: single elements, lowest masked score first.
        for index in state.score_table.indices_by_ascending_score() {
            if state.explanations.len() >= cap {
                break;
            }
            let score = state.score_table.per_element[&index];
            if passes_threshold(score, self.query) {
                state.explanations.push(Explanation {
                    element_indices: [index].into_iter().collect(),
                    achieved_score: score,
                    evaluated_with: self.query.num_samples,
                    kind: ExplanationKind::Single,
                });
                self.trace.push(TraceEvent::SingleAccepted { index, score });
            }
        }
        if state.explanations.len() >= cap {
            self.trace.push(TraceEvent::Halted {
                reason: HaltReason::ExplanationCap,
            });
            self.sync_state(state);
            return Ok(());
        }

        // Candidates come only from elements that are not already
        // single-element explanations, which keeps multi-element results
        // minimal with respect to the singles.
        let singles: BTreeSet<usize> = state
            .explanations
            .iter()
            .flat_map(|e| e.element_indices.iter().copied())
            .collect();
        let universe: Vec<usize> = state
            .score_table
            .per_element
            .keys()
            .copied()
            .filter(|i| !singles.contains(i))
            .collect();

        let max_card = self.query.max_subset_cardinality.min(universe.len());
        let mut halt = None;

        'outer: for card in 2..=max_card {
            if binomial(universe.len(), card) > CANDIDATE_LIMIT {
                self.notes.push(format!(
                    "stopped before cardinality {card}: candidate count exceeds {CANDIDATE_LIMIT}"
                ));
                state.truncated = true;
                halt = Some(HaltReason::CandidateLimit);
                break 'outer;
            }
            let mut candidates: Vec<(Vec<usize>, f64)> = Vec::new();
            let mut cur = Vec::with_capacity(card);
            combinations(&universe, card, 0, &mut cur, &mut |c| {
                let predicted: f64 = c.iter().map(|i| state.score_table.per_element[i]).sum();
                candidates.push((c.to_vec(), predicted));
            });
            candidates.sort_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.0.cmp(&b.0))
            });

            let lookahead = self.engine.config.lookahead.max(1);
            let workers = self.workers();
            let mut pos = 0usize;
            while pos < candidates.len() {
                let mut window: Vec<(Vec<usize>, f64)> = Vec::new();
                while pos < candidates.len() && window.len() < lookahead {
                    let cand = &candidates[pos];
                    pos += 1;
                    if is_pruned(&cand.0, &state.explanations) {
                        continue;
                    }
                    window.push(cand.clone());
                }
                if window.is_empty() {
                    continue;
                }
                if self.budget_exhausted() {
                    state.truncated = true;
                    halt = Some(HaltReason::TimeBudget);
                    break 'outer;
                }
                let results = parallel_map(window, workers, |(indices, predicted)| {
                    let subset: BTreeSet<usize> = indices.iter().copied().collect();
                    self.evaluate(&subset).map(|p| (indices, predicted, p))
                });
                for result in results {
                    let (indices, predicted, pending) = result?;
                    if is_pruned(&indices, &state.explanations) {
                        // Window speculation that a sibling commit pruned.
                        self.speculative_discarded += 1;
                        continue;
                    }
                    let score = self.commit(pending, EvalPhase::Subset);
                    let accepted = passes_threshold(score, self.query);
                    self.trace.push(TraceEvent::SubsetEvaluated {
                        subset: indices.clone(),
                        predicted,
                        score,
                        accepted,
                    });
                    if accepted {
                        state.explanations.push(Explanation {
                            element_indices: indices.iter().copied().collect(),
                            achieved_score: score,
                            evaluated_with: self.query.num_samples,
                            kind: ExplanationKind::Multi,
                        });
                        self.trace.push(TraceEvent::SupersetsPruned { of: indices });
                        if state.explanations.len() >= cap {
                            halt = Some(HaltReason::ExplanationCap);
                            break 'outer;
                        }
                    }
                }
            }
        }

        self.trace.push(TraceEvent::Halted {
            reason: halt.unwrap_or(HaltReason::Exhausted),
        });
        self.sync_state(state);
        Ok(())
    }

    fn sync_state(&self, state: &mut SearchState) {
        state.evaluations_used = self.records.len();
        state.elapsed = self.clock.elapsed();
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        prompt: &SegmentedPrompt,
        baseline: f64,
        gate_passed: bool,
        score_table: Option<ScoreTable>,
        explanations: Vec<Explanation>,
        truncated: bool,
        note: Option<String>,
    ) -> RunResult {
        let mut notes = self.notes;
        if let Some(n) = &note {
            notes.push(n.clone());
        }
        let k = self.query.num_samples;
        let explanation_records: Vec<ExplanationRecord> = explanations
            .iter()
            .map(|e| ExplanationRecord {
                element_indices: e.element_indices.iter().copied().collect(),
                element_texts: e
                    .element_indices
                    .iter()
                    .map(|&i| prompt.elements()[i].text.clone())
                    .collect(),
                achieved_score: e.achieved_score,
                wilson95: self.wilson_for(e.achieved_score, e.evaluated_with),
                evaluated_with: e.evaluated_with,
                kind: e.kind,
            })
            .collect();
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            master_seed: self.engine.config.master_seed,
            generator: self.gen_caps.clone(),
            classifier_identity: self.classifier.identity(),
            aggregate: self.spec.clone(),
            query: self.query.clone(),
            segmenter_mode: prompt.elements()[0].kind,
            engine: EngineSnapshot {
                mask_strategy: self.engine.config.mask_strategy.name().to_string(),
                parallelism: self.engine.config.parallelism,
                lookahead: self.engine.config.lookahead,
                cache_enabled: self.engine.config.cache_enabled,
                deterministic_clock: self.engine.config.clock.is_deterministic(),
            },
            evaluations: self.records,
            cache: self.cache_stats,
            speculative_discarded: self.speculative_discarded,
            elapsed_ms: self.clock.elapsed().as_secs_f64() * 1000.0,
            truncated,
            non_seedable_generator: !self.gen_caps.supports_seed,
            notes,
        };
        RunResult {
            schema_version: SCHEMA_VERSION,
            prompt: PromptSummary {
                text: prompt.original_text().to_string(),
                mode: prompt.elements()[0].kind,
                elements: prompt.element_texts(),
            },
            baseline: ScoreSummary {
                score: baseline,
                wilson95: self.wilson_for(baseline, k),
            },
            gate_passed,
            score_table,
            explanations: explanation_records,
            truncated,
            note,
            trace: self.trace,
            manifest,
        }
    }

    fn wilson_for(&self, score: f64, samples: usize) -> Option<WilsonInterval> {
        if self.spec.is_proportion() {
            let successes = (score * samples as f64).round() as usize;
            Some(wilson95(successes.min(samples), samples))
        } else {
            None
        }
    }
}

fn is_pruned(candidate: &[usize], explanations: &[Explanation]) -> bool {
    explanations.iter().any(|e| {
        e.element_indices.len() < candidate.len()
            && e.element_indices.iter().all(|i| candidate.contains(i))
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 0..k {
        result = result.saturating_mul((n - i) as u128) / (i + 1) as u128;
        if result > CANDIDATE_LIMIT {
            return result;
        }
    }
    result
}

/// Enumerates k-subsets of `items` in lexicographic order, preserving the
/// order of `items`.
fn combinations(
    items: &[usize],
    k: usize,
    start: usize,
    cur: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if cur.len() == k {
        visit(cur);
        return;
    }
    let remaining = k - cur.len();
    for i in start..items.len() {
        if items.len() - i < remaining {
            break;
        }
        cur.push(items[i]);
        combinations(items, k, i + 1, cur, visit);
        cur.pop();
    }
}

/// Order-preserving map over `items`, fanning out across `workers` scoped
/// threads when more than one is requested. Results are returned in input
/// order regardless of completion order.
fn parallel_map<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    if workers <= 1 || items.len() <= 1 || cfg!(target_arch = "wasm32") {
        return items.into_iter().map(f).collect();
    }
    #[cfg(not(target_arch = "wasm32"))]
    {
        use std::collections::VecDeque;
        use std::sync::Mutex;
        let n = items.len();
        let queue: Mutex<VecDeque<(usize, T)>> =
            Mutex::new(items.into_iter().enumerate().collect());
        let results: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers.min(n) {
                scope.spawn(|| loop {
                    let item = queue.lock().unwrap().pop_front();
                    match item {
                        Some((i, t)) => {
                            let r = f(t);
                            results.lock().unwrap()[i] = Some(r);
                        }
                        None => break,
                    }
                });
            }
        });
        results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|o| o.expect("worker filled every slot"))
            .collect()
    }
    #[cfg(target_arch = "wasm32")]
    {
        unreachable!("wasm path returns above")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::sim::{SimClassifier, SimGenerator};
    use crate::sim::{PlantedWorld, TriggerExpr};

    fn setup(
        trigger: TriggerExpr,
        p_hi: f64,
        p_lo: f64,
    ) -> (SimGenerator, SimClassifier) {
        let world = Arc::new(PlantedWorld::new(trigger, p_hi, p_lo, 17));
        (SimGenerator::new(Arc::clone(&world)), SimClassifier::labels())
    }

    fn query(num_samples: usize, num_explanations: usize) -> CharacteristicQuery {
        CharacteristicQuery::new(0.5, num_samples, num_explanations)
            .with_max_subset_cardinality(4)
    }

    fn spec() -> AggregateSpec {
        AggregateSpec::focal_label_proportion("focal")
    }

    #[test]
    fn planted_single_trigger_is_found_as_singleton() {
        let (gen, cls) = setup(TriggerExpr::word("horrible"), 1.0, 0.0);
        let engine = Engine::new(EngineConfig::with_seed(1));
        let result = engine
            .explain(
                "Create a horrible short story about a dog",
                &SegmenterConfig::word(),
                &query(10, 5),
                &gen,
                &cls,
                &spec(),
            )
            .unwrap();
        assert!(result.gate_passed);
        assert_eq!(result.baseline.score, 1.0);
        let singles: Vec<_> = result
            .explanations
            .iter()
            .filter(|e| e.kind == ExplanationKind::Single)
            .collect();
        assert!(singles.iter().any(|e| e.element_texts == vec!["horrible"]));
        // The trigger's masked score is zero while everything else stays at 1.
        let table = result.score_table.unwrap();
        assert_eq!(table.per_element[&2], 0.0);
        assert_eq!(table.per_element[&0], 1.0);
    }

    #[test]
    fn gate_failure_skips_the_search() {
        let (gen, cls) = setup(TriggerExpr::word("absent"), 1.0, 0.0);
        let engine = Engine::new(EngineConfig::with_seed(1));
        let result = engine
            .explain(
                "a calm story",
                &SegmenterConfig::word(),
                &query(10, 5),
                &gen,
                &cls,
                &spec(),
            )
            .unwrap();
        assert!(!result.gate_passed);
        assert!(result.explanations.is_empty());
        assert_eq!(result.note.as_deref(), Some("no focal behavior"));
        assert!(result.score_table.is_none());
        assert!(result
            .trace
            .iter()
            .any(|e| matches!(e, TraceEvent::GateSkipped { .. })));
        // Only the baseline was evaluated.
        assert_eq!(result.manifest.evaluations.len(), 1);
    }

    #[test]
    fn conjunctive_trigger_yields_both_singletons() {
        let (gen, cls) = setup(
            TriggerExpr::and(vec![TriggerExpr::word("alpha"), TriggerExpr::word("beta")]),
            1.0,
            0.0,
        );
        let engine = Engine::new(EngineConfig::with_seed(2));
        let result = engine
            .explain(
                "alpha beta gamma",
                &SegmenterConfig::word(),
                &query(10, 5),
                &gen,
                &cls,
                &spec(),
            )
            .unwrap();
        let sets: Vec<Vec<usize>> = result
            .explanations
            .iter()
            .map(|e| e.element_indices.clone())
            .collect();
        assert_eq!(sets, vec![vec![0], vec![1]]);
    }

    #[test]
    fn disjunctive_trigger_requires_the_pair() {
        let (gen, cls) = setup(
            TriggerExpr::or(vec![TriggerExpr::word("alpha"), TriggerExpr::word("beta")]),
            1.0,
            0.0,
        );
        let engine = Engine::new(EngineConfig::with_seed(3));
        let result = engine
            .explain(
                "alpha beta gamma",
                &SegmenterConfig::word(),
                &query(10, 5),
                &gen,
                &cls,
                &spec(),
            )
            .unwrap();
        assert_eq!(result.explanations.len(), 1);
        assert_eq!(result.explanations[0].element_indices, vec![0, 1]);
        assert_eq!(result.explanations[0].kind, ExplanationKind::Multi);
    }

    #[test]
    fn explanation_cap_short_circuits_phase_two() {
        // Five words, each sufficient on its own (OR over all), cap at 2.
        let words = ["a1", "a2", "a3", "a4", "a5"];
        let trigger = TriggerExpr::and(words.iter().map(|w| TriggerExpr::word(*w)).collect());
        let (gen, cls) = setup(trigger, 1.0, 0.0);
        let engine = Engine::new(EngineConfig::with_seed(4));
        let result = engine
            .explain(
                "a1 a2 a3 a4 a5",
                &SegmenterConfig::word(),
                &query(10, 2),
                &gen,
                &cls,
                &spec(),
            )
            .unwrap();
        assert_eq!(result.explanations.len(), 2);
        assert!(result
            .explanations
            .iter()
            .all(|e| e.kind == ExplanationKind::Single));
        // No subset evaluations happened: baseline + 5 elements only.
        assert_eq!(result.manifest.evaluations.len(), 6);
    }

    #[test]
    fn rerun_with_same_seed_is_identical() {
        let (gen, cls) = setup(TriggerExpr::word("bad"), 1.0, 0.0);
        let make = || {
            let engine = Engine::new(EngineConfig {
                master_seed: 9,
                clock: ClockSpec::counter_ms(1),
                ..EngineConfig::default()
            });
            engine
                .explain(
                    "a bad tale",
                    &SegmenterConfig::word(),
                    &query(10, 5),
                    &gen,
                    &cls,
                    &spec(),
                )
                .unwrap()
        };
        let a = make();
        let b = make();
        assert_eq!(a.to_json_pretty(), b.to_json_pretty());
    }

    #[test]
    fn cache_disabled_and_enabled_agree() {
        let (gen, cls) = setup(TriggerExpr::word("bad"), 1.0, 0.0);
        let run = |cache_enabled: bool| {
            let engine = Engine::new(EngineConfig {
                master_seed: 9,
                cache_enabled,
                clock: ClockSpec::counter_ms(1),
                ..EngineConfig::default()
            });
            engine
                .explain(
                    "a bad bad tale",
                    &SegmenterConfig::word(),
                    &query(10, 5),
                    &gen,
                    &cls,
                    &spec(),
                )
                .unwrap()
        };
        let with = run(true);
        let without = run(false);
        assert_eq!(with.explanations, without.explanations);
        assert_eq!(with.baseline, without.baseline);
    }

    #[test]
    fn warm_cache_rerun_issues_no_generator_calls() {
        use crate::backends::CountingGenerator;
        let world = Arc::new(PlantedWorld::new(TriggerExpr::word("bad"), 1.0, 0.0, 17));
        let gen = CountingGenerator::new(SimGenerator::new(world));
        let cls = SimClassifier::labels();
        let engine = Engine::new(EngineConfig::with_seed(9));
        let run = || {
            engine
                .explain(
                    "a bad tale",
                    &SegmenterConfig::word(),
                    &query(10, 5),
                    &gen,
                    &cls,
                    &spec(),
                )
                .unwrap()
        };
        let first = run();
        let calls_after_first = gen.calls();
        assert!(calls_after_first > 0);
        let second = run();
        assert_eq!(gen.calls(), calls_after_first, "warm rerun hit the backend");
        assert_eq!(first.explanations, second.explanations);
        assert!(second
            .manifest
            .evaluations
            .iter()
            .all(|r| r.cache_hit));
    }

    #[test]
    fn single_element_prompt_failure_is_noted_as_irreducible() {
        let (gen, cls) = setup(TriggerExpr::word("other"), 1.0, 1.0);
        let engine = Engine::new(EngineConfig::with_seed(5));
        let result = engine
            .explain("word", &SegmenterConfig::word(), &query(10, 5), &gen, &cls, &spec())
            .unwrap();
        assert!(result.gate_passed);
        assert!(result.explanations.is_empty());
        assert!(result.note.unwrap().contains("irreducible"));
    }

    #[test]
    fn parallel_runs_commit_in_deterministic_order() {
        let (gen, cls) = setup(
            TriggerExpr::or(vec![TriggerExpr::word("x1"), TriggerExpr::word("x2")]),
            1.0,
            0.0,
        );
        let run = |parallelism: usize, lookahead: usize| {
            let engine = Engine::new(EngineConfig {
                master_seed: 11,
                parallelism,
                lookahead,
                clock: ClockSpec::counter_ms(1),
                ..EngineConfig::default()
            });
            engine
                .explain(
                    "x1 x2 y1 y2 y3",
                    &SegmenterConfig::word(),
                    &query(10, 5),
                    &gen,
                    &cls,
                    &spec(),
                )
                .unwrap()
        };
        let serial = run(1, 1);
        let parallel = run(4, 1);
        assert_eq!(serial.trace, parallel.trace);
        assert_eq!(serial.explanations, parallel.explanations);
        assert_eq!(
            serial
                .manifest
                .evaluations
                .iter()
                .map(|r| r.subset.clone())
                .collect::<Vec<_>>(),
            parallel
                .manifest
                .evaluations
                .iter()
                .map(|r| r.subset.clone())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn derive_seed_is_stable_and_text_sensitive() {
        let a = derive_seed(1, "text");
        assert_eq!(a, derive_seed(1, "text"));
        assert_ne!(a, derive_seed(2, "text"));
        assert_ne!(a, derive_seed(1, "text2"));
    }

    #[test]
    fn binomial_counts() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(4, 4), 1);
        assert_eq!(binomial(3, 5), 0);
    }
}
