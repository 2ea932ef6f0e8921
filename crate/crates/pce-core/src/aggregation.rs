//! Aggregate scoring over a sample set's classifier outputs, plus the two
//! threshold predicates.
//!
//! The success predicate is strict (an explanation must move the aggregate
//! strictly past the threshold) while the focal-behavior gate is inclusive
//! (a baseline sitting exactly on the threshold still counts as focal).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CharacteristicQuery, ClassifierOutput, ClassifierValue, SuccessDirection};

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("cannot aggregate an empty sample set")]
    EmptySampleSet,
    #[error("classifier output kind does not match aggregate spec: {0}")]
    KindMismatch(String),
    #[error("focal_label_proportion requires a focal label in the spec")]
    MissingFocalLabel,
    #[error("quantile q must lie in [0, 1], got {0}")]
    InvalidQuantile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AggregateKind {
    MeanScore,
    FocalLabelProportion,
    Quantile { q: f64 },
}

/// The aggregation function applied to per-sample classifier outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSpec {
    #[serde(flatten)]
    pub kind: AggregateKind,
    /// Which categorical label counts as focal; required for
    /// `focal_label_proportion`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focal_label: Option<String>,
}

impl AggregateSpec {
    pub fn mean_score() -> Self {
        Self {
            kind: AggregateKind::MeanScore,
            focal_label: None,
        }
    }

    pub fn focal_label_proportion(label: impl Into<String>) -> Self {
        Self {
            kind: AggregateKind::FocalLabelProportion,
            focal_label: Some(label.into()),
        }
    }

    pub fn quantile(q: f64) -> Self {
        Self {
            kind: AggregateKind::Quantile { q },
            focal_label: None,
        }
    }

    /// Stable string identity used in cache keys and manifests.
    pub fn fingerprint(&self) -> String {
        match &self.kind {
            AggregateKind::MeanScore => "mean_score".to_string(),
            AggregateKind::FocalLabelProportion => format!(
                "focal_label_proportion({})",
                self.focal_label.as_deref().unwrap_or("")
            ),
            AggregateKind::Quantile { q } => format!("quantile({q})"),
        }
    }

    /// True when the aggregate is a proportion, i.e. scores render as `k/N`.
    pub fn is_proportion(&self) -> bool {
        matches!(self.kind, AggregateKind::FocalLabelProportion)
    }
}

/// Reduces classifier outputs to a single aggregate score.
pub fn aggregate(outputs: &[ClassifierOutput], spec: &AggregateSpec) -> Result<f64, AggregateError> {
    if outputs.is_empty() {
        return Err(AggregateError::EmptySampleSet);
    }
    match &spec.kind {
        AggregateKind::MeanScore => {
            let scores = require_scores(outputs)?;
            Ok(scores.iter().sum::<f64>() / scores.len() as f64)
        }
        AggregateKind::FocalLabelProportion => {
            let focal = spec
                .focal_label
                .as_deref()
                .ok_or(AggregateError::MissingFocalLabel)?;
            let mut count = 0usize;
            for out in outputs {
                match &out.value {
                    ClassifierValue::Label(label) => {
                        if label == focal {
                            count += 1;
                        }
                    }
                    ClassifierValue::Score(_) => {
                        return Err(AggregateError::KindMismatch(
                            "expected categorical labels, got a score".into(),
                        ))
                    }
                }
            }
            Ok(count as f64 / outputs.len() as f64)
        }
        AggregateKind::Quantile { q } => {
            if !(0.0..=1.0).contains(q) {
                return Err(AggregateError::InvalidQuantile(*q));
            }
            let mut scores = require_scores(outputs)?;
            scores.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            // Order statistic with linear interpolation.
            let h = (scores.len() - 1) as f64 * q;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            Ok(scores[lo] + (h - lo as f64) * (scores[hi] - scores[lo]))
        }
    }
}

fn require_scores(outputs: &[ClassifierOutput]) -> Result<Vec<f64>, AggregateError> {
    outputs
        .iter()
        .map(|o| match &o.value {
            ClassifierValue::Score(s) => Ok(*s),
            ClassifierValue::Label(l) => Err(AggregateError::KindMismatch(format!(
                "expected scores, got categorical label {l:?}"
            ))),
        })
        .collect()
}

/// The explanation-success predicate: strictly past the threshold in the
/// query's success direction.
pub fn passes_threshold(score: f64, query: &CharacteristicQuery) -> bool {
    match query.success_direction {
        SuccessDirection::Below => score < query.threshold,
        SuccessDirection::Above => score > query.threshold,
    }
}

/// The gate that decides whether the search runs at all: the baseline must
/// sit at or beyond the threshold on the focal side.
pub fn exhibits_focal_behavior(baseline: f64, query: &CharacteristicQuery) -> bool {
    match query.success_direction {
        SuccessDirection::Below => baseline >= query.threshold,
        SuccessDirection::Above => baseline <= query.threshold,
    }
}

/// A 95% Wilson score interval for a binomial proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonInterval {
    pub low: f64,
    pub high: f64,
}

/// Wilson 95% confidence interval for `successes` out of `trials`.
pub fn wilson95(successes: usize, trials: usize) -> WilsonInterval {
    const Z: f64 = 1.959963984540054;
    if trials == 0 {
        return WilsonInterval { low: 0.0, high: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let margin = (Z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    WilsonInterval {
        low: (center - margin).max(0.0),
        high: (center + margin).min(1.0),
    }
}

impl WilsonInterval {
    pub fn contains(&self, p: f64) -> bool {
        p >= self.low && p <= self.high
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SuccessDirection;

    fn labels(focal: usize, clean: usize) -> Vec<ClassifierOutput> {
        let mut v = Vec::new();
        v.extend((0..focal).map(|_| ClassifierOutput::label("focal")));
        v.extend((0..clean).map(|_| ClassifierOutput::label("clean")));
        v
    }

    #[test]
    fn proportion_counts_focal_labels() {
        let spec = AggregateSpec::focal_label_proportion("focal");
        assert_eq!(aggregate(&labels(8, 2), &spec).unwrap(), 0.8);
    }

    #[test]
    fn mean_of_equal_scores_is_that_score() {
        let outs: Vec<_> = (0..7).map(|_| ClassifierOutput::score(0.42)).collect();
        assert_eq!(aggregate(&outs, &AggregateSpec::mean_score()).unwrap(), 0.42);
    }

    #[test]
    fn empty_sample_set_is_an_error() {
        assert_eq!(
            aggregate(&[], &AggregateSpec::mean_score()).unwrap_err(),
            AggregateError::EmptySampleSet
        );
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let spec = AggregateSpec::focal_label_proportion("focal");
        let outs = vec![ClassifierOutput::score(0.5)];
        assert!(matches!(
            aggregate(&outs, &spec).unwrap_err(),
            AggregateError::KindMismatch(_)
        ));
        let outs = vec![ClassifierOutput::label("focal")];
        assert!(matches!(
            aggregate(&outs, &AggregateSpec::mean_score()).unwrap_err(),
            AggregateError::KindMismatch(_)
        ));
    }

    #[test]
    fn quantile_interpolates_linearly() {
        let outs: Vec<_> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&s| ClassifierOutput::score(s))
            .collect();
        assert_eq!(aggregate(&outs, &AggregateSpec::quantile(0.5)).unwrap(), 2.5);
        assert_eq!(aggregate(&outs, &AggregateSpec::quantile(0.0)).unwrap(), 1.0);
        assert_eq!(aggregate(&outs, &AggregateSpec::quantile(1.0)).unwrap(), 4.0);
    }

    #[test]
    fn success_is_strict_and_direction_aware() {
        let below = CharacteristicQuery::new(0.5, 10, 5);
        assert!(passes_threshold(0.3, &below));
        assert!(!passes_threshold(0.5, &below));
        assert!(!passes_threshold(0.7, &below));

        let above = CharacteristicQuery::new(0.5, 10, 5).with_direction(SuccessDirection::Above);
        assert!(passes_threshold(0.7, &above));
        assert!(!passes_threshold(0.5, &above));
    }

    #[test]
    fn toxicity_style_threshold_is_strict() {
        let q = CharacteristicQuery::new(0.05, 100, 5);
        assert!(!passes_threshold(0.05, &q));
        assert!(passes_threshold(0.04, &q));
    }

    #[test]
    fn gate_is_inclusive() {
        let q = CharacteristicQuery::new(0.5, 10, 5);
        assert!(exhibits_focal_behavior(0.8, &q));
        assert!(exhibits_focal_behavior(0.5, &q));
        assert!(!exhibits_focal_behavior(0.3, &q));

        let above = CharacteristicQuery::new(0.5, 10, 5).with_direction(SuccessDirection::Above);
        assert!(exhibits_focal_behavior(0.2, &above));
        assert!(exhibits_focal_behavior(0.5, &above));
        assert!(!exhibits_focal_behavior(0.8, &above));
    }

    #[test]
    fn wilson_interval_brackets_the_point_estimate() {
        let iv = wilson95(80, 100);
        assert!(iv.low < 0.8 && 0.8 < iv.high);
        assert!(iv.low > 0.70 && iv.high < 0.88);
        let full = wilson95(0, 0);
        assert_eq!((full.low, full.high), (0.0, 1.0));
    }
}
