//! Classification metrics over score-domain labels (-1/+1).

use crate::error::EvalError;

fn check_label(y: f32) -> Result<(), EvalError> {
    if y != 1.0 && y != -1.0 {
        return Err(EvalError::BadLabel(y as f64));
    }
    Ok(())
}

/// Map raw scores to hard predictions; zero counts as the positive class.
pub fn predictions_from_scores(scores: &[f32]) -> Vec<f32> {
    scores.iter().map(|&s| if s >= 0.0 { 1.0 } else { -1.0 }).collect()
}

/// Fraction of agreeing hard predictions.
pub fn accuracy(predicted: &[f32], actual: &[f32]) -> Result<f64, EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::LengthMismatch { left: predicted.len(), right: actual.len() });
    }
    if actual.is_empty() {
        return Err(EvalError::LengthMismatch { left: 0, right: 0 });
    }
    for &y in predicted.iter().chain(actual) {
        check_label(y)?;
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(hits as f64 / actual.len() as f64)
}

/// Area under the ROC curve from raw scores, by average ranks: a tied
/// positive/negative pair contributes ½. Undefined (an error) when only one
/// class is present.
pub fn auroc(scores: &[f32], labels: &[f32]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { left: scores.len(), right: labels.len() });
    }
    for &y in labels {
        check_label(y)?;
    }
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        let class = if n_pos == 0 { "-1" } else { "+1" };
        return Err(EvalError::SingleClass(class.to_string()));
    }

    // ranks 1..=n with ties sharing their average rank
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share the average of ranks i+1..=j
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] > 0.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    Ok(auc)
}

/// Majority vote over score-domain labels; an exact tie goes to +1.
pub fn majority_label(labels: &[f32]) -> f32 {
    let pos = labels.iter().filter(|&&y| y > 0.0).count();
    if 2 * pos >= labels.len() {
        1.0
    } else {
        -1.0
    }
}

/// Accuracy of always predicting the most common class — the floor any
/// learner has to beat. A pure function of the label multiset.
pub fn majority_accuracy<S: AsRef<str>>(labels: &[S]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::HashMap::new();
    for l in labels {
        *counts.entry(l.as_ref()).or_insert(0usize) += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    max as f64 / labels.len() as f64
}
