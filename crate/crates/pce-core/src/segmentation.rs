//! Splits prompt text into explanation elements.
//!
//! Word mode keeps punctuation glued to its token (so `Bannon,` or `flag]`
//! are single elements). Sentence mode is deliberately rule-based: a
//! sentence ends at `.`, `!` or `?` followed by whitespace or end of input,
//! unless the token in front of a period is on the abbreviation stoplist.
//! Custom mode accepts caller-supplied byte ranges.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Element, ElementKind, ModelError, SegmentedPrompt};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("prompt is empty or whitespace-only")]
    EmptyPrompt,
    #[error("invalid custom spans: {0}")]
    InvalidSpans(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterMode {
    Word,
    Sentence,
    CustomSpans(Vec<(usize, usize)>),
}

impl SegmenterMode {
    pub fn element_kind(&self) -> ElementKind {
        match self {
            SegmenterMode::Word => ElementKind::Word,
            SegmenterMode::Sentence => ElementKind::Sentence,
            SegmenterMode::CustomSpans(_) => ElementKind::Custom,
        }
    }
}

/// Tokens that keep a trailing period from ending a sentence (stored
/// without the period).
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "Dr", "Mr", "Mrs", "Ms", "Prof", "Sr", "Jr", "St", "Mt", "vs", "etc", "e.g", "i.e", "Inc",
    "Corp", "Ltd", "Fig", "No", "approx",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub mode: SegmenterMode,
    /// Abbreviation stoplist for sentence mode; entries are compared against
    /// the token preceding a candidate period, minus that period.
    pub abbreviations: BTreeSet<String>,
}

impl SegmenterConfig {
    pub fn word() -> Self {
        Self {
            mode: SegmenterMode::Word,
            abbreviations: BTreeSet::new(),
        }
    }

    pub fn sentence() -> Self {
        Self {
            mode: SegmenterMode::Sentence,
            abbreviations: DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn sentence_with_abbreviations<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            mode: SegmenterMode::Sentence,
            abbreviations: abbreviations
                .into_iter()
                .map(|s| normalize_abbreviation(&s.into()))
                .collect(),
        }
    }

    pub fn custom(spans: Vec<(usize, usize)>) -> Self {
        Self {
            mode: SegmenterMode::CustomSpans(spans),
            abbreviations: BTreeSet::new(),
        }
    }
}

fn normalize_abbreviation(token: &str) -> String {
    token.trim().trim_end_matches('.').to_string()
}

/// Parses a stoplist file body: one token per line, UTF-8, `#` comments and
/// blank lines ignored.
pub fn parse_abbreviation_list(body: &str) -> BTreeSet<String> {
    body.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize_abbreviation)
        .collect()
}

/// Splits `text` into a [`SegmentedPrompt`] per the configured mode.
pub fn segment(text: &str, cfg: &SegmenterConfig) -> Result<SegmentedPrompt, SegmentError> {
    if text.trim().is_empty() {
        return Err(SegmentError::EmptyPrompt);
    }
    let spans = match &cfg.mode {
        SegmenterMode::Word => word_spans(text),
        SegmenterMode::Sentence => sentence_spans(text, &cfg.abbreviations),
        SegmenterMode::CustomSpans(spans) => validated_custom_spans(text, spans)?,
    };
    build_prompt(text, spans, cfg.mode.element_kind())
}

fn build_prompt(
    text: &str,
    spans: Vec<(usize, usize)>,
    kind: ElementKind,
) -> Result<SegmentedPrompt, SegmentError> {
    if spans.is_empty() {
        return Err(SegmentError::EmptyPrompt);
    }
    let mut elements = Vec::with_capacity(spans.len());
    let mut joiners = Vec::with_capacity(spans.len() + 1);
    let mut cursor = 0usize;
    for (i, &(start, end)) in spans.iter().enumerate() {
        joiners.push(text[cursor..start].to_string());
        elements.push(Element {
            index: i,
            text: text[start..end].to_string(),
            span: (start, end),
            kind,
        });
        cursor = end;
    }
    joiners.push(text[cursor..].to_string());
    Ok(SegmentedPrompt::new(text.to_string(), elements, joiners)?)
}

/// Maximal runs of non-whitespace characters.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

fn is_terminator(ch: char) -> bool {
    matches!(ch, '.' | '!' | '?')
}

/// Token immediately preceding and including the period at `dot_idx`,
/// with the final period stripped.
fn token_before_period(text: &str, dot_idx: usize) -> &str {
    let head = &text[..dot_idx];
    let tok_start = head
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    &text[tok_start..dot_idx]
}

fn sentence_spans(text: &str, abbreviations: &BTreeSet<String>) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut sent_start: Option<usize> = None;
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        if sent_start.is_none() && !ch.is_whitespace() {
            sent_start = Some(i);
        }
        if sent_start.is_none() || !is_terminator(ch) {
            continue;
        }
        let next = chars.peek().map(|&(_, c)| c);
        let at_boundary = next.map_or(true, |c| c.is_whitespace());
        if !at_boundary {
            continue;
        }
        if ch == '.' {
            let token = token_before_period(text, i);
            if abbreviations.contains(token.trim_end_matches('.')) {
                continue;
            }
        }
        let end = i + ch.len_utf8();
        spans.push((sent_start.take().unwrap(), end));
    }
    if let Some(start) = sent_start {
        // Unterminated final sentence: runs to the last non-whitespace char.
        let end = text
            .char_indices()
            .rev()
            .find(|(_, c)| !c.is_whitespace())
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(text.len());
        if end > start {
            spans.push((start, end));
        }
    }
    spans
}

fn validated_custom_spans(
    text: &str,
    spans: &[(usize, usize)],
) -> Result<Vec<(usize, usize)>, SegmentError> {
    let mut prev_end = 0usize;
    for &(start, end) in spans {
        if start < prev_end {
            return Err(SegmentError::InvalidSpans(format!(
                "span {start}..{end} overlaps or is out of order"
            )));
        }
        if end <= start || end > text.len() {
            return Err(SegmentError::InvalidSpans(format!(
                "span {start}..{end} is empty or out of bounds"
            )));
        }
        if !text.is_char_boundary(start) || !text.is_char_boundary(end) {
            return Err(SegmentError::InvalidSpans(format!(
                "span {start}..{end} is not on character boundaries"
            )));
        }
        prev_end = end;
    }
    Ok(spans.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_mode_keeps_punctuation_attached() {
        let p = segment("Under Bannon, Breitbart published a call", &SegmenterConfig::word())
            .unwrap();
        assert_eq!(
            p.element_texts(),
            vec!["Under", "Bannon,", "Breitbart", "published", "a", "call"]
        );
    }

    #[test]
    fn word_mode_counts_nonwhitespace_runs() {
        let p = segment("  a\t bb  ccc \n", &SegmenterConfig::word()).unwrap();
        assert_eq!(p.element_texts(), vec!["a", "bb", "ccc"]);
        assert_eq!(p.reconstruct(), "  a\t bb  ccc \n");
    }

    #[test]
    fn single_word() {
        let p = segment("x", &SegmenterConfig::word()).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn whitespace_only_is_empty_prompt() {
        assert_eq!(
            segment("  \t \n", &SegmenterConfig::word()).unwrap_err(),
            SegmentError::EmptyPrompt
        );
    }

    #[test]
    fn sentence_mode_splits_on_terminators() {
        let p = segment("A. B? C!", &SegmenterConfig::sentence()).unwrap();
        assert_eq!(p.element_texts(), vec!["A.", "B?", "C!"]);
        assert_eq!(p.reconstruct(), "A. B? C!");
    }

    #[test]
    fn sentence_mode_respects_abbreviations() {
        let p = segment(
            "Dr. Smith arrived. He was late.",
            &SegmenterConfig::sentence(),
        )
        .unwrap();
        assert_eq!(
            p.element_texts(),
            vec!["Dr. Smith arrived.", "He was late."]
        );
    }

    #[test]
    fn sentence_mode_ignores_decimals() {
        let p = segment("The value is 3.14 exactly. Next.", &SegmenterConfig::sentence()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.elements()[0].text, "The value is 3.14 exactly.");
    }

    #[test]
    fn sentence_mode_handles_unterminated_tail() {
        let p = segment("First one. and then", &SegmenterConfig::sentence()).unwrap();
        assert_eq!(p.element_texts(), vec!["First one.", "and then"]);
    }

    #[test]
    fn sentence_mode_preserves_double_spaces() {
        let text = "Hello.  World.";
        let p = segment(text, &SegmenterConfig::sentence()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.reconstruct(), text);
    }

    #[test]
    fn custom_spans_must_be_sorted_and_disjoint() {
        let text = "abcdef";
        assert!(segment(text, &SegmenterConfig::custom(vec![(0, 2), (2, 4)])).is_ok());
        assert!(matches!(
            segment(text, &SegmenterConfig::custom(vec![(0, 3), (2, 4)])),
            Err(SegmentError::InvalidSpans(_))
        ));
        assert!(matches!(
            segment(text, &SegmenterConfig::custom(vec![(4, 2)])),
            Err(SegmentError::InvalidSpans(_))
        ));
    }

    #[test]
    fn stoplist_parsing_strips_comments_and_periods() {
        let set = parse_abbreviation_list("# common titles\nDr.\n e.g.\n\nMt\n");
        assert!(set.contains("Dr"));
        assert!(set.contains("e.g"));
        assert!(set.contains("Mt"));
        assert_eq!(set.len(), 3);
    }
}
