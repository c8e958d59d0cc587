//! ROC analysis, knee-point operating metrics, patient-grouped folds and
//! score ensembling.

mod folds;
mod roc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use folds::{group_kfold, FoldAssignment};
pub use roc::{auc, knee_point, roc_curve, write_roc_csv, KneePoint, RocCurve, RocPoint};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("ROC analysis needs at least one positive and one negative label")]
    SingleClass,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("scores contain NaN")]
    NonFiniteScore,
    #[error("need at least {k} distinct patients for {k} folds, found {groups}")]
    TooFewGroups { groups: usize, k: usize },
    #[error("fold index {fold} out of range for k = {k}")]
    InvalidFold { fold: usize, k: usize },
    #[error("patient '{patient_id}' appears in more than one fold")]
    Leakage { patient_id: String },
    #[error("invalid ensemble weights: {0}")]
    InvalidWeights(String),
}

/// Per-record weighted mean of several score lists.
pub fn ensemble_scores(score_lists: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>, EvalError> {
    if score_lists.len() != weights.len() {
        return Err(EvalError::LengthMismatch {
            expected: score_lists.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(EvalError::InvalidWeights("weights must be finite and >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(EvalError::InvalidWeights("weights sum to zero".into()));
    }
    let n = score_lists.first().map_or(0, Vec::len);
    if let Some(bad) = score_lists.iter().find(|l| l.len() != n) {
        return Err(EvalError::LengthMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    Ok((0..n)
        .map(|i| {
            score_lists
                .iter()
                .zip(weights)
                .map(|(l, w)| l[i] * w)
                .sum::<f64>()
                / total
        })
        .collect())
}

/// AUC and knee-point operating metrics for one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    /// `None` when the knee is the predict-nothing endpoint.
    pub knee_threshold: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Metrics {
    pub fn youden(&self) -> f64 {
        self.sensitivity + self.specificity - 1.0
    }
}

pub fn evaluate(labels: &[bool], scores: &[f64]) -> Result<Metrics, EvalError> {
    let curve = roc_curve(labels, scores)?;
    let knee = knee_point(&curve);
    Ok(Metrics {
        auc: auc(&curve),
        knee_threshold: knee.threshold.is_finite().then_some(knee.threshold),
        sensitivity: knee.sensitivity,
        specificity: knee.specificity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub records: usize,
    pub positives: usize,
    /// Absent when the fold holds a single class.
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

/// Per-lesion output: melanoma probability and the outlier score that
/// entered the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub lesion_id: String,
    pub label: Option<bool>,
    pub p: f64,
    pub outlier_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub overall: Metrics,
    pub folds: Vec<FoldMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<PredictionRow>,
}

pub fn fold_metrics(fold: usize, labels: &[bool], scores: &[f64]) -> Result<FoldMetrics, EvalError> {
    let metrics = match evaluate(labels, scores) {
        Ok(m) => Some(m),
        Err(EvalError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(FoldMetrics {
        fold,
        records: labels.len(),
        positives: labels.iter().filter(|&&y| y).count(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_examples() {
        assert_eq!(ensemble_scores(&[vec![0.3, 0.9]], &[1.0]).unwrap(), vec![0.3, 0.9]);
        let same = vec![0.1, 0.4, 0.7];
        assert_eq!(
            ensemble_scores(&[same.clone(), same.clone()], &[0.2, 5.0]).unwrap(),
            same
        );
        let mixed = ensemble_scores(&[vec![0.2, 0.8], vec![0.6, 0.4]], &[1.0, 3.0]).unwrap();
        assert!((mixed[0] - 0.5).abs() < 1e-15 && (mixed[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ensemble_errors() {
        assert!(matches!(
            ensemble_scores(&[vec![0.2, 0.8], vec![0.6]], &[1.0, 1.0]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(ensemble_scores(&[vec![0.2]], &[0.0]).is_err());
        assert!(ensemble_scores(&[vec![0.2]], &[-1.0]).is_err());
        assert!(ensemble_scores(&[vec![0.2]], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn report_json_shape() {
        let overall = evaluate(&[true, false, true, false], &[0.9, 0.1, 0.8, 0.3]).unwrap();
        let report = MetricsReport {
            overall,
            folds: vec![
                fold_metrics(0, &[true, false], &[0.9, 0.1]).unwrap(),
                fold_metrics(1, &[false, false], &[0.2, 0.1]).unwrap(),
            ],
            predictions: vec![],
        };
        let v: serde_json::Value = serde_json::to_value(&report).unwrap();
        for key in ["auc", "knee_threshold", "sensitivity", "specificity", "folds"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["auc"], 1.0);
        assert_eq!(v["folds"][0]["auc"], 1.0);
        assert!(v["folds"][1].get("auc").is_none());
        assert!(v.get("predictions").is_none());
        let back: MetricsReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, report);
    }
}
