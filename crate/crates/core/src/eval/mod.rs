//! Composite answer/document/page metric and ablation reports.
//!
//! Each question scores `a_i` (answer label correct), `d_i` (document
//! correct) and `p_i` (page proximity: `max(0, 1 - |Δpage| / W)` when the
//! document is correct, else 0). The final metric is
//!
//! ```text
//! 0.5 * mean(a) + 0.25 * mean(d) + 0.25 * mean(p)
//! ```
//!
//! Scores are only comparable at equal window `W`, which is why every
//! breakdown and report carries it.

mod report;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{PageKey, Question};

pub use report::{ablation_report, ReportFormat, ReportRow, ReportShape, RunMetrics};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no prediction for question {0:?}")]
    MissingPrediction(String),
    #[error("prediction for unknown question {0:?}")]
    UnknownQuestionId(String),
    #[error("question {0:?} has no gold label")]
    MissingGold(String),
    #[error("more than one prediction for question {0:?}")]
    DuplicatePrediction(String),
    #[error("proximity window must be >= 1")]
    BadWindow,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProximityConfig {
    pub window: u32,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        Self { window: 10 }
    }
}

impl ProximityConfig {
    pub fn new(window: u32) -> Result<Self, EvalError> {
        if window == 0 {
            return Err(EvalError::BadWindow);
        }
        Ok(Self { window })
    }
}

pub fn page_proximity(pred: &PageKey, gold: &PageKey, cfg: ProximityConfig) -> f64 {
    if pred.doc_id != gold.doc_id {
        return 0.0;
    }
    let distance = (pred.page_number as i64 - gold.page_number as i64).unsigned_abs() as f64;
    (1.0 - distance / cfg.window as f64).max(0.0)
}

pub fn final_metric(mean_a: f64, mean_d: f64, mean_p: f64) -> f64 {
    0.5 * mean_a + 0.25 * mean_d + 0.25 * mean_p
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub answer: char,
    pub doc_id: String,
    pub page: u32,
}

impl Prediction {
    pub fn page_key(&self) -> PageKey {
        PageKey::new(self.doc_id.clone(), self.page)
    }
}

pub fn write_predictions(predictions: &[Prediction], mut out: impl Write) -> std::io::Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_predictions(input: &str) -> Result<Vec<Prediction>, EvalError> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let p: Prediction = serde_json::from_str(line).map_err(|e| EvalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if p.page == 0 {
                return Err(EvalError::Parse {
                    line: i + 1,
                    message: "page must be >= 1".into(),
                });
            }
            Ok(p)
        })
        .collect()
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, EvalError> {
    parse_predictions(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub a: u8,
    pub d: u8,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub window: u32,
    pub per_question: Vec<QuestionScore>,
    pub mean_a: f64,
    pub mean_d: f64,
    pub mean_p: f64,
    #[serde(rename = "final")]
    pub final_score: f64,
}

impl ScoreBreakdown {
    pub fn from_scores(per_question: Vec<QuestionScore>, window: u32) -> Self {
        let n = per_question.len().max(1) as f64;
        let mean_a = per_question.iter().map(|q| q.a as f64).sum::<f64>() / n;
        let mean_d = per_question.iter().map(|q| q.d as f64).sum::<f64>() / n;
        let mean_p = per_question.iter().map(|q| q.p).sum::<f64>() / n;
        Self {
            window,
            per_question,
            mean_a,
            mean_d,
            mean_p,
            final_score: final_metric(mean_a, mean_d, mean_p),
        }
    }

    pub fn metrics(&self) -> RunMetrics {
        RunMetrics::Full {
            mean_a: self.mean_a,
            mean_d: self.mean_d,
            mean_p: self.mean_p,
            final_score: self.final_score,
        }
    }
}

/// Scores predictions against every gold question, in gold order.
///
/// Strict mode rejects missing predictions; `lenient` scores them as
/// `(0, 0, 0)`. Predictions for unknown questions are always rejected.
pub fn score(
    predictions: &[Prediction],
    gold: &[Question],
    cfg: ProximityConfig,
    lenient: bool,
) -> Result<ScoreBreakdown, EvalError> {
    if cfg.window == 0 {
        return Err(EvalError::BadWindow);
    }
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if by_id.insert(p.question_id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.question_id.clone()));
        }
    }
    let gold_ids: HashSet<&str> = gold.iter().map(|q| q.question_id.as_str()).collect();
    if let Some(p) = predictions
        .iter()
        .find(|p| !gold_ids.contains(p.question_id.as_str()))
    {
        return Err(EvalError::UnknownQuestionId(p.question_id.clone()));
    }
    let mut per_question = Vec::with_capacity(gold.len());
    for q in gold {
        let g = q
            .gold
            .as_ref()
            .ok_or_else(|| EvalError::MissingGold(q.question_id.clone()))?;
        let Some(p) = by_id.get(q.question_id.as_str()) else {
            if lenient {
                per_question.push(QuestionScore {
                    question_id: q.question_id.clone(),
                    a: 0,
                    d: 0,
                    p: 0.0,
                });
                continue;
            }
            return Err(EvalError::MissingPrediction(q.question_id.clone()));
        };
        let pred_page = p.page_key();
        per_question.push(QuestionScore {
            question_id: q.question_id.clone(),
            a: u8::from(p.answer == g.answer),
            d: u8::from(p.doc_id == g.page.doc_id),
            p: page_proximity(&pred_page, &g.page, cfg),
        });
    }
    Ok(ScoreBreakdown::from_scores(per_question, cfg.window))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GoldLabel;
    use proptest::prelude::*;

    fn w(n: u32) -> ProximityConfig {
        ProximityConfig::new(n).unwrap()
    }

    fn gold_q(id: &str, answer: char, doc: &str, page: u32) -> Question {
        Question::new(
            id,
            "?",
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            Some(GoldLabel {
                answer,
                page: PageKey::new(doc, page),
            }),
        )
        .unwrap()
    }

    fn pred(id: &str, answer: char, doc: &str, page: u32) -> Prediction {
        Prediction {
            question_id: id.into(),
            answer,
            doc_id: doc.into(),
            page,
        }
    }

    #[test]
    fn proximity_ramp() {
        let g = PageKey::new("d", 20);
        assert_eq!(page_proximity(&PageKey::new("d", 20), &g, w(10)), 1.0);
        assert_eq!(page_proximity(&PageKey::new("x", 20), &g, w(10)), 0.0);
        assert_eq!(page_proximity(&PageKey::new("d", 30), &g, w(10)), 0.0);
        assert_eq!(page_proximity(&PageKey::new("d", 45), &g, w(10)), 0.0);
        assert_eq!(page_proximity(&PageKey::new("d", 15), &g, w(10)), 0.5);
        assert_eq!(page_proximity(&PageKey::new("d", 25), &g, w(10)), 0.5);
        assert_eq!(page_proximity(&PageKey::new("d", 21), &g, w(1)), 0.0);
    }

    #[test]
    fn zero_window_rejected() {
        assert!(ProximityConfig::new(0).is_err());
    }

    #[test]
    fn perfect_and_doc_wrong() {
        let gold = vec![gold_q("1", 'A', "d", 1), gold_q("2", 'B', "e", 5)];
        let perfect = vec![pred("1", 'A', "d", 1), pred("2", 'B', "e", 5)];
        assert_eq!(score(&perfect, &gold, w(10), false).unwrap().final_score, 1.0);
        let wrong_docs = vec![pred("1", 'A', "x", 1), pred("2", 'B', "x", 5)];
        let s = score(&wrong_docs, &gold, w(10), false).unwrap();
        assert_eq!(s.final_score, 0.5);
        assert!(s.per_question.iter().all(|q| q.p == 0.0 && q.d == 0));
    }

    #[test]
    fn strict_and_lenient_missing() {
        let gold = vec![gold_q("1", 'A', "d", 1), gold_q("2", 'B', "e", 5)];
        let preds = vec![pred("1", 'A', "d", 1)];
        assert!(matches!(
            score(&preds, &gold, w(10), false),
            Err(EvalError::MissingPrediction(id)) if id == "2"
        ));
        let s = score(&preds, &gold, w(10), true).unwrap();
        assert_eq!(s.final_score, 0.5);
    }

    #[test]
    fn unknown_duplicate_and_missing_gold() {
        let gold = vec![gold_q("1", 'A', "d", 1)];
        assert!(matches!(
            score(&[pred("1", 'A', "d", 1), pred("9", 'A', "d", 1)], &gold, w(10), false),
            Err(EvalError::UnknownQuestionId(id)) if id == "9"
        ));
        assert!(matches!(
            score(&[pred("1", 'A', "d", 1), pred("1", 'B', "d", 1)], &gold, w(10), false),
            Err(EvalError::DuplicatePrediction(_))
        ));
        let no_gold = Question::new("1", "?", vec!["a".into(), "b".into()], None).unwrap();
        assert!(matches!(
            score(&[pred("1", 'A', "d", 1)], &[no_gold], w(10), false),
            Err(EvalError::MissingGold(_))
        ));
    }

    #[test]
    fn predictions_file_round_trip() {
        let preds = vec![pred("q1", 'C', "док", 3), pred("q2", 'A', "d", 10)];
        let mut buf = Vec::new();
        write_predictions(&preds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(r#"{"question_id":"q1","answer":"C","doc_id":"док","page":3}"#));
        assert_eq!(parse_predictions(&text).unwrap(), preds);
        assert!(parse_predictions("{\"question_id\":\"q\",\"answer\":\"A\",\"doc_id\":\"d\",\"page\":0}").is_err());
    }

    fn arb_case() -> impl Strategy<Value = Vec<(bool, bool, u32, u32)>> {
        proptest::collection::vec((any::<bool>(), any::<bool>(), 1u32..40, 1u32..40), 1..30)
    }

    fn build(case: &[(bool, bool, u32, u32)]) -> (Vec<Prediction>, Vec<Question>) {
        let mut preds = Vec::new();
        let mut gold = Vec::new();
        for (i, &(a_ok, d_ok, pp, gp)) in case.iter().enumerate() {
            let id = format!("q{i}");
            gold.push(gold_q(&id, 'B', "doc", gp));
            preds.push(pred(&id, if a_ok { 'B' } else { 'C' }, if d_ok { "doc" } else { "other" }, pp));
        }
        (preds, gold)
    }

    proptest! {
        #[test]
        fn final_is_bounded_and_permutation_invariant(case in arb_case(), shift in 0usize..30) {
            let (preds, gold) = build(&case);
            let s = score(&preds, &gold, w(10), false).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.final_score));
            for q in &s.per_question {
                prop_assert!(q.d == 1 || q.p == 0.0);
            }
            let mut rotated = gold.clone();
            rotated.rotate_left(shift % gold.len());
            let r = score(&preds, &rotated, w(10), false).unwrap();
            prop_assert!((r.final_score - s.final_score).abs() < 1e-12);
            let perfect = s.per_question.iter().all(|q| q.a == 1 && q.d == 1 && q.p == 1.0);
            prop_assert_eq!(perfect, s.final_score == 1.0);
        }

        #[test]
        fn moving_toward_gold_page_never_hurts(case in arb_case(), idx in 0usize..30) {
            let (mut preds, gold) = build(&case);
            let i = idx % preds.len();
            let before = score(&preds, &gold, w(10), false).unwrap().final_score;
            let target = gold[i].gold.as_ref().unwrap().page.page_number;
            let p = &mut preds[i];
            if p.page < target { p.page += 1 } else if p.page > target { p.page -= 1 }
            let after = score(&preds, &gold, w(10), false).unwrap().final_score;
            prop_assert!(after >= before);
        }
    }
}
