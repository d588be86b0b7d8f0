//! Evaluation metrics: ROC AUC, average precision (AUPRC) and RMSE.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub samples: usize,
    /// Only meaningful for classification metrics.
    pub positives: Option<usize>,
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::shape("metric inputs", scores.len(), labels.len()));
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { what: "scores", index });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    Ok(pos)
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Probability that a random positive outscores a random negative; ties count one half.
///
/// Computed from mid-ranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = check_binary(scores, labels)?;
    let neg = labels.len() - pos;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // sum of (1-based) mid-ranks of positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Average precision: sum over recall increments of precision, sweeping scores from high to
/// low with tied scores handled as one block.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = check_binary(scores, labels)?;
    let idx = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let block_pos = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += block_pos;
        fp += j + 1 - i - block_pos;
        if block_pos > 0 {
            ap += (tp as f64 / (tp + fp) as f64) * (block_pos as f64 / pos as f64);
        }
        i = j + 1;
    }
    Ok(ap)
}

pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::shape("rmse", predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("rmse needs at least one prediction"));
    }
    let mse = predictions.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / predictions.len() as f64;
    Ok(mse.sqrt())
}

pub fn auc_report(scores: &[f64], labels: &[bool]) -> Result<EvalReport> {
    Ok(EvalReport {
        metric: "auc".into(),
        value: auc(scores, labels)?,
        samples: scores.len(),
        positives: Some(labels.iter().filter(|&&l| l).count()),
    })
}

pub fn auprc_report(scores: &[f64], labels: &[bool]) -> Result<EvalReport> {
    Ok(EvalReport {
        metric: "auprc".into(),
        value: auprc(scores, labels)?,
        samples: scores.len(),
        positives: Some(labels.iter().filter(|&&l| l).count()),
    })
}

pub fn rmse_report(predictions: &[f64], truths: &[f64]) -> Result<EvalReport> {
    Ok(EvalReport {
        metric: "rmse".into(),
        value: rmse(predictions, truths)?,
        samples: predictions.len(),
        positives: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn all_pairs_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn perfect_and_inverted() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(auprc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
        assert!(matches!(auprc(&[0.1, 0.2], &[false, false]), Err(Error::SingleClass)));
    }

    #[test]
    fn tied_scores_give_prevalence() {
        let labels = [true, false, false, true, false];
        assert!((auprc(&[0.3; 5], &labels).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(auc(&[0.3; 5], &labels).unwrap(), 0.5);
    }

    #[test]
    fn six_sample_instances_match_all_pairs() {
        let mut rng = Rng::new(99);
        for _ in 0..200 {
            let scores: Vec<f64> = (0..6).map(|_| (rng.below(4) as f64) / 4.0).collect();
            let mut labels: Vec<bool> = (0..6).map(|_| rng.bernoulli(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            assert_eq!(auc(&scores, &labels).unwrap(), all_pairs_auc(&scores, &labels));
        }
    }

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.535534).abs() < 1e-6);
        let a = rmse(&[1.0, -2.0, 0.5], &[0.0, 1.0, 2.0]).unwrap();
        let b = rmse(&[-3.0, 6.0, -1.5], &[0.0, -3.0, -6.0]).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
    }
}
