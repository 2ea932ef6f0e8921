//! In-process backend implementations over a [`PlantedWorld`], used for
//! offline verification and demos. All of them are pure seeded functions.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::backends::{
    BackendError, ClassifierBackend, GeneratorBackend, GeneratorCapabilities, RewriteRequest,
    RewriterBackend,
};
use crate::model::{ClassifierOutput, SampleSet};
use crate::sim::{normalize_word, sample_is_focal, sim_generate, EmissionProfile, PlantedWorld};

/// Seeded generator over a planted world.
pub struct SimGenerator {
    world: Arc<PlantedWorld>,
}

impl SimGenerator {
    pub fn new(world: Arc<PlantedWorld>) -> Self {
        Self { world }
    }

    pub fn world(&self) -> &PlantedWorld {
        &self.world
    }
}

impl GeneratorBackend for SimGenerator {
    fn capabilities(&self) -> GeneratorCapabilities {
        GeneratorCapabilities {
            identity: "sim-generator".to_string(),
            supports_seed: true,
            max_concurrent: 1024,
        }
    }

    fn generate(
        &self,
        prompt_text: &str,
        k: usize,
        seed_base: u64,
    ) -> Result<SampleSet, BackendError> {
        if k == 0 {
            return Err(BackendError::InvalidRequest(
                "generate requires k ≥ 1".into(),
            ));
        }
        Ok(sim_generate(&self.world, prompt_text, k, seed_base))
    }
}

/// How the simulated classifier reports its verdict.
#[derive(Debug, Clone)]
pub enum SimClassifierMode {
    /// Categorical output with the given focal and clean label names.
    Labels { focal: String, clean: String },
    /// Numeric output using the world's emission profile.
    Scores(EmissionProfile),
}

/// Marker-based classifier over simulated generations.
pub struct SimClassifier {
    mode: SimClassifierMode,
}

impl SimClassifier {
    pub fn labels() -> Self {
        Self {
            mode: SimClassifierMode::Labels {
                focal: "focal".to_string(),
                clean: "clean".to_string(),
            },
        }
    }

    pub fn scores(emission: EmissionProfile) -> Self {
        Self {
            mode: SimClassifierMode::Scores(emission),
        }
    }

    pub fn scores_for(world: &PlantedWorld) -> Self {
        Self::scores(world.emission)
    }
}

impl ClassifierBackend for SimClassifier {
    fn identity(&self) -> String {
        match &self.mode {
            SimClassifierMode::Labels { .. } => "sim-classifier(labels)".to_string(),
            SimClassifierMode::Scores(_) => "sim-classifier(scores)".to_string(),
        }
    }

    fn classify(&self, text: &str) -> Result<ClassifierOutput, BackendError> {
        if text.is_empty() {
            return Err(BackendError::InvalidRequest(
                "classify requires non-empty text".into(),
            ));
        }
        let focal = sample_is_focal(text);
        Ok(match &self.mode {
            SimClassifierMode::Labels { focal: f, clean: c } => {
                ClassifierOutput::label(if focal { f.clone() } else { c.clone() })
            }
            SimClassifierMode::Scores(em) => ClassifierOutput::score(if focal {
                em.focal_score
            } else {
                em.clean_score
            }),
        })
    }
}

/// Deterministic table-lookup rewriter. Unknown inputs pass through
/// unchanged so experiments degrade gracefully.
#[derive(Debug, Default, Clone)]
pub struct SimRewriter {
    synonyms: BTreeMap<String, String>,
    paraphrases: BTreeMap<String, String>,
}

impl SimRewriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_synonyms<I, A, B>(mut self, pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        for (from, to) in pairs {
            self.synonyms.insert(normalize_word(&from.into()), to.into());
        }
        self
    }

    pub fn with_paraphrases<I, A, B>(mut self, pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        for (from, to) in pairs {
            self.paraphrases.insert(from.into(), to.into());
        }
        self
    }
}

impl RewriterBackend for SimRewriter {
    fn identity(&self) -> String {
        "sim-rewriter".to_string()
    }

    fn rewrite(&self, request: &RewriteRequest) -> Result<String, BackendError> {
        match request {
            RewriteRequest::Synonym { word } => Ok(self
                .synonyms
                .get(&normalize_word(word))
                .cloned()
                .unwrap_or_else(|| word.clone())),
            RewriteRequest::Paraphrase { sentence } => Ok(self
                .paraphrases
                .get(sentence)
                .cloned()
                .unwrap_or_else(|| sentence.clone())),
            RewriteRequest::ComposePrompt { words } => {
                if words.is_empty() {
                    return Err(BackendError::InvalidRequest(
                        "compose_prompt requires at least one word".into(),
                    ));
                }
                Ok(format!("Write a short piece about {}", words.join(" ")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::TriggerExpr;

    fn world() -> Arc<PlantedWorld> {
        Arc::new(PlantedWorld::new(TriggerExpr::word("horrible"), 1.0, 0.0, 7))
    }

    #[test]
    fn generator_is_deterministic_across_reruns() {
        let g = SimGenerator::new(world());
        let a = g.generate("a horrible story", 10, 7).unwrap();
        let b = g.generate("a horrible story", 10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(a.seeds.as_ref().unwrap()[0], 7);
    }

    #[test]
    fn generator_rejects_zero_samples() {
        let g = SimGenerator::new(world());
        assert!(matches!(
            g.generate("x", 0, 1),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn classifier_flags_trigger_samples() {
        let c = SimClassifier::labels();
        let out = c.classify("pebble river [[FOCAL]]").unwrap();
        assert_eq!(out.value, crate::model::ClassifierValue::Label("focal".into()));
        let out = c.classify("pebble river").unwrap();
        assert_eq!(out.value, crate::model::ClassifierValue::Label("clean".into()));
    }

    #[test]
    fn classifier_rejects_empty_text() {
        let c = SimClassifier::labels();
        assert!(matches!(
            c.classify(""),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn synonym_lookup_with_passthrough() {
        let r = SimRewriter::new().with_synonyms([("lawsuit", "legal case")]);
        assert_eq!(
            r.rewrite(&RewriteRequest::Synonym { word: "lawsuit".into() }).unwrap(),
            "legal case"
        );
        assert_eq!(
            r.rewrite(&RewriteRequest::Synonym { word: "unknown".into() }).unwrap(),
            "unknown"
        );
    }

    #[test]
    fn composed_prompts_contain_their_words() {
        let r = SimRewriter::new();
        let prompt = r
            .rewrite(&RewriteRequest::ComposePrompt {
                words: vec!["alpha".into(), "beta".into()],
            })
            .unwrap();
        assert!(prompt.contains("alpha") && prompt.contains("beta"));
    }
}
