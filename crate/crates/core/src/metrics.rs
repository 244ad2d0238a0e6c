//! AUC, RMSE and range-normalised RMSE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictions, ground truth and the target's `(min, max)` over the full
/// dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch<'a> {
    pub predictions: &'a [f64],
    pub truths: &'a [f64],
    pub target_range: (f64, f64),
}

impl<'a> EvalBatch<'a> {
    pub fn new(predictions: &'a [f64], truths: &'a [f64], target_range: (f64, f64)) -> Result<Self> {
        if predictions.len() != truths.len() || predictions.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictions vs {} truths (need equal, non-zero lengths)",
                predictions.len(),
                truths.len()
            )));
        }
        if !(target_range.1 >= target_range.0) {
            return Err(Error::InvalidConfig(format!("invalid target range {target_range:?}")));
        }
        Ok(EvalBatch {
            predictions,
            truths,
            target_range,
        })
    }
}

/// Mann-Whitney AUC: probability that a random positive outscores a random
/// negative, ties counting one half. Truths are positive when `> 0.5`.
pub fn auc(batch: &EvalBatch<'_>) -> Result<f64> {
    let mut scored: Vec<(f64, bool)> = batch
        .predictions
        .iter()
        .zip(batch.truths)
        .map(|(&p, &y)| (p, y > 0.5))
        .collect();
    let n_pos = scored.iter().filter(|s| s.1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled so
    // that every partial sum is an exact integer.
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < scored.len() {
        let mut end = start;
        while end < scored.len() && scored[end].0 == scored[start].0 {
            end += 1;
        }
        let positives = scored[start..end].iter().filter(|s| s.1).count() as u128;
        // Average rank of the tie group is (start + 1 + end) / 2.
        doubled_rank_sum += positives * (start as u128 + 1 + end as u128);
        start = end;
    }
    let np = n_pos as u128;
    let doubled_u = doubled_rank_sum - np * (np + 1);
    Ok(doubled_u as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

/// `sqrt(mean((ŷ − y)²))`.
pub fn rmse(batch: &EvalBatch<'_>) -> f64 {
    let n = batch.predictions.len() as f64;
    let sse: f64 = batch
        .predictions
        .iter()
        .zip(batch.truths)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    (sse / n).sqrt()
}

/// RMSE divided by `Y_max − Y_min`.
pub fn nrmse(batch: &EvalBatch<'_>) -> Result<f64> {
    let (lo, hi) = batch.target_range;
    if hi == lo {
        return Err(Error::DegenerateRange(lo));
    }
    Ok(rmse(batch) / (hi - lo))
}

/// One evaluated model/target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub mode: String,
    pub target: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nrmse: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Evaluation results laid out as one row per model and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_seed: u64,
    pub test_fraction: f64,
    pub rows: Vec<EvalRow>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch<'a>(p: &'a [f64], y: &'a [f64]) -> EvalBatch<'a> {
        EvalBatch::new(p, y, (0.0, 1.0)).unwrap()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&batch(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(auc(&batch(&[0.1, 0.2, 0.8, 0.9], &[1.0, 1.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(auc(&batch(&[0.5; 6], &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0])).unwrap(), 0.5);
        // pairs: (0.35 vs 0.1) win, (0.35 vs 0.4) loss, (0.8 vs both) wins -> 3/4
        assert_eq!(auc(&batch(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0])).unwrap(), 0.75);
        assert!(matches!(auc(&batch(&[0.1, 0.2], &[1.0, 1.0])), Err(Error::SingleClass)));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&batch(&[1.0, 2.0], &[1.0, 2.0])), 0.0);
        assert_eq!(rmse(&batch(&[2.0, 4.0], &[1.0, 3.0])), 1.0);
    }

    #[test]
    fn nrmse_examples() {
        let p = [2.0, 2.0, 2.0, 2.0];
        let y = [0.0, 4.0, 0.0, 4.0];
        let b = EvalBatch::new(&p, &y, (0.0, 40.0)).unwrap();
        assert_eq!(rmse(&b), 2.0);
        assert_eq!(nrmse(&b).unwrap(), 0.05);
        let same = EvalBatch::new(&y, &y, (0.0, 4.0)).unwrap();
        assert_eq!(nrmse(&same).unwrap(), 0.0);
        let flat = EvalBatch::new(&y, &y, (3.0, 3.0)).unwrap();
        assert!(matches!(nrmse(&flat), Err(Error::DegenerateRange(_))));
    }

    #[test]
    fn batch_validation() {
        assert!(EvalBatch::new(&[], &[], (0.0, 1.0)).is_err());
        assert!(EvalBatch::new(&[1.0], &[1.0, 2.0], (0.0, 1.0)).is_err());
        assert!(EvalBatch::new(&[1.0], &[1.0], (2.0, 1.0)).is_err());
    }
}
