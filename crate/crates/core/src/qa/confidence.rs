use std::collections::BTreeMap;

use super::QaError;

/// Softmax over the provided option scores.
pub fn option_probabilities(scores: &BTreeMap<char, f64>) -> BTreeMap<char, f64> {
    let finite: Vec<(char, f64)> = scores
        .iter()
        .filter(|(_, s)| s.is_finite())
        .map(|(&l, &s)| (l, s))
        .collect();
    let max = finite.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<(char, f64)> = finite.iter().map(|&(l, s)| (l, (s - max).exp())).collect();
    let total: f64 = exps.iter().map(|(_, e)| e).sum();
    exps.into_iter().map(|(l, e)| (l, e / total)).collect()
}

/// Most frequent label; ties go to the label seen first.
pub fn majority_label(samples: &[char]) -> Option<(char, usize)> {
    let mut counts: Vec<(char, usize)> = Vec::new();
    for &s in samples {
        match counts.iter_mut().find(|(l, _)| *l == s) {
            Some((_, n)) => *n += 1,
            None => counts.push((s, 1)),
        }
    }
    let mut best: Option<(char, usize)> = None;
    for (l, n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((l, n));
        }
    }
    best
}

/// Confidence of one attempt.
///
/// With option scores, the softmax probability of `label` (0 when the label
/// has no score). Otherwise the self-consistency vote: the fraction of
/// `samples` agreeing with the majority label.
pub fn attempt_confidence(
    option_scores: Option<&BTreeMap<char, f64>>,
    label: char,
    samples: &[char],
) -> Result<f64, QaError> {
    if let Some(scores) = option_scores.filter(|s| s.values().any(|v| v.is_finite())) {
        return Ok(option_probabilities(scores).get(&label).copied().unwrap_or(0.0));
    }
    match majority_label(samples) {
        Some((_, n)) => Ok(n as f64 / samples.len() as f64),
        None => Err(QaError::NoConfidenceSignal),
    }
}
