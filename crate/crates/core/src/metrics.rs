//! Micro precision/recall/F1, per-label scores, out-of-vocabulary accounting
//! and ΔF1 report rows.
//!
//! Wrong-but-in-vocabulary predictions count against precision. Abstentions
//! ("I don't know"), out-of-vocabulary answers and missing answers count only
//! against recall.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::{AnnotationOutcome, OutcomeKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no records to score")]
    Empty,
    #[error("unknown baseline experiment {0:?}")]
    UnknownBaseline(String),
}

/// One scored unit: a gold label and what the model produced for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub table_id: String,
    pub column_index: usize,
    pub gold: String,
    pub outcome: AnnotationOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Record {
    pub fn is_correct(&self) -> bool {
        self.outcome.label.as_deref() == Some(self.gold.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl LabelCounts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalResult {
    pub n_total: usize,
    pub n_predicted: usize,
    pub n_correct: usize,
    pub n_idk: usize,
    pub n_oov: usize,
    pub n_missing: usize,
    pub per_label: BTreeMap<String, LabelCounts>,
}

/// Precision, recall and F1 as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MicroScores {
    pub fn from_counts(correct: usize, predicted: usize, total: usize) -> Self {
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, total);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MicroScores {
            precision,
            recall,
            f1,
        }
    }

    /// Percentages rounded half-up to two decimals.
    pub fn percent(&self) -> Percent {
        Percent {
            precision: round2(self.precision * 100.0),
            recall: round2(self.recall * 100.0),
            f1: round2(self.f1 * 100.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percent {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Rounds half-up at two decimals. A relative nudge absorbs binary
/// representation error so that e.g. 66.665 rounds up.
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    let nudged = scaled + scaled.abs() * 1e-12;
    (nudged + 0.5).floor() / 100.0
}

impl EvalResult {
    pub fn scores(&self) -> MicroScores {
        MicroScores::from_counts(self.n_correct, self.n_predicted, self.n_total)
    }
}

pub fn evaluate(records: &[Record]) -> Result<EvalResult, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut r = EvalResult {
        n_total: records.len(),
        n_predicted: 0,
        n_correct: 0,
        n_idk: 0,
        n_oov: 0,
        n_missing: 0,
        per_label: BTreeMap::new(),
    };
    for rec in records {
        match rec.outcome.kind {
            OutcomeKind::IDontKnow => r.n_idk += 1,
            OutcomeKind::OutOfVocabulary => r.n_oov += 1,
            OutcomeKind::Missing => r.n_missing += 1,
            OutcomeKind::Matched | OutcomeKind::SynonymMatched => {}
        }
        match rec.outcome.label.as_deref() {
            Some(pred) if pred == rec.gold => {
                r.n_predicted += 1;
                r.n_correct += 1;
                r.per_label.entry(rec.gold.clone()).or_default().tp += 1;
            }
            Some(pred) => {
                r.n_predicted += 1;
                r.per_label.entry(pred.to_string()).or_default().fp += 1;
                r.per_label.entry(rec.gold.clone()).or_default().fn_ += 1;
            }
            None => r.per_label.entry(rec.gold.clone()).or_default().fn_ += 1,
        }
    }
    Ok(r)
}

pub fn compute_micro(records: &[Record]) -> Result<MicroScores, MetricsError> {
    Ok(evaluate(records)?.scores())
}

pub fn per_label_f1(records: &[Record]) -> BTreeMap<String, f64> {
    match evaluate(records) {
        Ok(r) => r
            .per_label
            .into_iter()
            .map(|(label, c)| (label, c.f1()))
            .collect(),
        Err(_) => BTreeMap::new(),
    }
}

/// Answers that missed the label space verbatim, and how many of those the
/// synonym table recovered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OovSummary {
    pub n_oov_raw: usize,
    pub n_recovered: usize,
}

pub fn oov_summary(records: &[Record]) -> OovSummary {
    let mut s = OovSummary::default();
    for r in records {
        match r.outcome.kind {
            OutcomeKind::SynonymMatched => {
                s.n_oov_raw += 1;
                s.n_recovered += 1;
            }
            OutcomeKind::OutOfVocabulary => s.n_oov_raw += 1,
            _ => {}
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub delta_f1: f64,
}

/// Rows of (experiment, P, R, F1, ΔF1) against `baseline`, all in percent.
pub fn delta_table(
    experiments: &[(String, Percent)],
    baseline: &str,
) -> Result<Vec<ReportRow>, MetricsError> {
    let base = experiments
        .iter()
        .find(|(n, _)| n == baseline)
        .map(|(_, p)| p.f1)
        .ok_or_else(|| MetricsError::UnknownBaseline(baseline.to_string()))?;
    Ok(experiments
        .iter()
        .map(|(name, p)| ReportRow {
            experiment: name.clone(),
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            delta_f1: round2(p.f1 - base),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(gold: &str, kind: OutcomeKind, label: Option<&str>) -> Record {
        Record {
            table_id: "t".into(),
            column_index: 0,
            gold: gold.into(),
            outcome: AnnotationOutcome {
                kind,
                label: label.map(str::to_string),
                raw: label.unwrap_or("?").into(),
            },
            error: None,
        }
    }

    #[test]
    fn worked_case() {
        let mut rs = Vec::new();
        for _ in 0..6 {
            rs.push(rec("Time", OutcomeKind::Matched, Some("Time")));
        }
        for _ in 0..2 {
            rs.push(rec("Time", OutcomeKind::Matched, Some("Date")));
        }
        for _ in 0..2 {
            rs.push(rec("Time", OutcomeKind::IDontKnow, None));
        }
        let p = compute_micro(&rs).unwrap().percent();
        assert_eq!((p.precision, p.recall, p.f1), (75.0, 60.0, 66.67));
    }

    #[test]
    fn all_abstain() {
        let rs = vec![rec("Time", OutcomeKind::IDontKnow, None); 3];
        let s = compute_micro(&rs).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert_eq!(compute_micro(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn per_label_counts() {
        let rs = vec![
            rec("Time", OutcomeKind::Matched, Some("Time")),
            rec("Date", OutcomeKind::Matched, Some("Time")),
        ];
        let e = evaluate(&rs).unwrap();
        assert_eq!(
            e.per_label["Time"],
            LabelCounts {
                tp: 1,
                fp: 1,
                fn_: 0
            }
        );
        assert_eq!(
            e.per_label["Date"],
            LabelCounts {
                tp: 0,
                fp: 0,
                fn_: 1
            }
        );
        let f1 = per_label_f1(&rs);
        assert!((f1["Time"] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1["Date"], 0.0);
    }

    #[test]
    fn oov_accounting() {
        let rs = vec![
            rec("Time", OutcomeKind::SynonymMatched, Some("Time")),
            rec("Time", OutcomeKind::OutOfVocabulary, None),
            rec("Time", OutcomeKind::IDontKnow, None),
        ];
        assert_eq!(
            oov_summary(&rs),
            OovSummary {
                n_oov_raw: 2,
                n_recovered: 1
            }
        );
    }

    #[test]
    fn deltas() {
        let p = |f1| Percent {
            precision: 0.0,
            recall: 0.0,
            f1,
        };
        let exps = vec![
            ("column".to_string(), p(45.85)),
            ("table".to_string(), p(85.25)),
        ];
        let rows = delta_table(&exps, "column").unwrap();
        assert_eq!(rows[0].delta_f1, 0.0);
        assert_eq!(rows[1].delta_f1, 39.4);
        assert!(delta_table(&exps, "text").is_err());
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(round2(66.665), 66.67);
        assert_eq!(round2(200.0 / 3.0), 66.67);
        assert_eq!(round2(12.344), 12.34);
        assert_eq!(round2(100.0), 100.0);
    }
}
