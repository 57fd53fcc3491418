//! Turning raw model replies into annotation outcomes.

use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_key, LabelVocabulary};

const CUES: [&str; 4] = ["type:", "class:", "classes:", "domain:"];
const IDK: &str = "i don't know";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Matched,
    SynonymMatched,
    IDontKnow,
    OutOfVocabulary,
    Missing,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Matched => "matched",
            OutcomeKind::SynonymMatched => "synonym",
            OutcomeKind::IDontKnow => "idk",
            OutcomeKind::OutOfVocabulary => "oov",
            OutcomeKind::Missing => "missing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "matched" => OutcomeKind::Matched,
            "synonym" => OutcomeKind::SynonymMatched,
            "idk" => OutcomeKind::IDontKnow,
            "oov" => OutcomeKind::OutOfVocabulary,
            "missing" => OutcomeKind::Missing,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationOutcome {
    pub kind: OutcomeKind,
    /// Canonical label, present only for `Matched` and `SynonymMatched`.
    pub label: Option<String>,
    pub raw: String,
}

impl AnnotationOutcome {
    pub fn missing(raw: impl Into<String>) -> Self {
        AnnotationOutcome {
            kind: OutcomeKind::Missing,
            label: None,
            raw: raw.into(),
        }
    }

    pub fn is_prediction(&self) -> bool {
        self.label.is_some()
    }
}

fn strip_cue(s: &str) -> &str {
    for cue in CUES {
        if s.len() >= cue.len()
            && s.is_char_boundary(cue.len())
            && s[..cue.len()].eq_ignore_ascii_case(cue)
        {
            return s[cue.len()..].trim_start();
        }
    }
    s
}

fn is_quote(c: char) -> bool {
    matches!(c, '"' | '\u{201c}' | '\u{201d}')
}

/// First span enclosed in double quotes, or the text with a dangling quote removed.
fn extract_quoted(s: &str) -> String {
    let Some(open) = s.find(is_quote) else {
        return s.to_string();
    };
    let rest = &s[open + s[open..].chars().next().unwrap().len_utf8()..];
    match rest.find(is_quote) {
        Some(close) => rest[..close].to_string(),
        None => s.chars().filter(|c| !is_quote(*c)).collect(),
    }
}

fn normalize_once(raw: &str) -> String {
    let s = raw.trim();
    let s = strip_cue(s);
    let s = extract_quoted(s);
    let s = strip_cue(s.trim());
    let s = s.trim_end().trim_end_matches('.');
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Cleans a reply fragment down to a candidate label. Applied to a fixpoint
/// so the result is stable under re-normalization.
pub fn normalize_answer(raw: &str) -> String {
    let mut cur = normalize_once(raw);
    // every pass either shrinks the text or leaves it unchanged
    loop {
        let next = normalize_once(&cur);
        if next == cur || next.len() > cur.len() {
            return cur;
        }
        cur = next;
    }
}

fn is_idk(candidate: &str) -> bool {
    normalize_key(&candidate.replace('\u{2019}', "'")) == IDK
}

pub fn map_to_label(candidate: &str, vocab: &LabelVocabulary) -> AnnotationOutcome {
    let raw = candidate.to_string();
    if candidate.trim().is_empty() {
        return AnnotationOutcome::missing(raw);
    }
    if let Some(label) = vocab.canonical(candidate) {
        return AnnotationOutcome {
            kind: OutcomeKind::Matched,
            label: Some(label.to_string()),
            raw,
        };
    }
    if let Some(label) = vocab.resolve_synonym(candidate) {
        return AnnotationOutcome {
            kind: OutcomeKind::SynonymMatched,
            label: Some(label.to_string()),
            raw,
        };
    }
    let kind = if is_idk(candidate) {
        OutcomeKind::IDontKnow
    } else {
        OutcomeKind::OutOfVocabulary
    };
    AnnotationOutcome {
        kind,
        label: None,
        raw,
    }
}

/// Normalizes and maps a single-label reply.
pub fn parse_single_answer(raw: &str, vocab: &LabelVocabulary) -> AnnotationOutcome {
    let mut out = map_to_label(&normalize_answer(raw), vocab);
    out.raw = raw.trim().to_string();
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableAnswer {
    pub outcomes: Vec<AnnotationOutcome>,
    /// Fragment count differed from the column count.
    pub mismatch: bool,
}

/// Splits on commas that are not inside a double-quoted span.
pub fn split_outside_quotes(raw: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut in_quote = false;
    let mut start = 0;
    for (i, c) in raw.char_indices() {
        if is_quote(c) {
            in_quote = !in_quote;
        } else if c == ',' && !in_quote {
            parts.push(&raw[start..i]);
            start = i + 1;
        }
    }
    parts.push(&raw[start..]);
    parts
}

pub fn parse_table_answer(raw: &str, n_columns: usize, vocab: &LabelVocabulary) -> TableAnswer {
    let body = strip_cue(raw.trim());
    let mut fragments = split_outside_quotes(body);
    while fragments.last().is_some_and(|f| f.trim().is_empty()) {
        fragments.pop();
    }
    let mismatch = fragments.len() != n_columns;
    let outcomes = (0..n_columns)
        .map(|i| match fragments.get(i) {
            Some(frag) => {
                let mut o = map_to_label(&normalize_answer(frag), vocab);
                o.raw = frag.trim().to_string();
                o
            }
            None => AnnotationOutcome::missing(""),
        })
        .collect();
    TableAnswer { outcomes, mismatch }
}
