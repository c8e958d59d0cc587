//! Grouped cross-validation: one model per fold, evaluated on its held-out
//! patients, with out-of-fold predictions pooled into a single report.

use crate::classifier::{predict, train, ClassifierError, OutlierScores, TrainConfig, TrainOutcome};
use crate::evaluation::{evaluate, fold_metrics, FoldAssignment, MetricsReport, PredictionRow};
use crate::store::Cohort;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub models: Vec<TrainOutcome>,
    /// Held-out predictions for labeled records, in record order.
    pub predictions: Vec<PredictionRow>,
    pub report: MetricsReport,
}

pub fn cross_validate(
    cohort: &Cohort,
    scores: &OutlierScores,
    cfg: &TrainConfig,
    folds: &FoldAssignment,
) -> Result<CrossValidation, ClassifierError> {
    folds.check(cohort)?;
    let mut models = Vec::with_capacity(folds.k);
    let mut held_out: Vec<Option<PredictionRow>> = vec![None; cohort.len()];
    let mut per_fold = Vec::with_capacity(folds.k);

    for fold in 0..folds.k {
        let outcome = train(cohort, scores, cfg, folds, fold)?;
        let preds = predict(&outcome.params, cohort, scores, cfg.weighting, cfg.injection)?;
        let (mut labels, mut probs) = (Vec::new(), Vec::new());
        for (i, pred) in preds.into_iter().enumerate() {
            if folds.folds[i] != fold || pred.label.is_none() {
                continue;
            }
            let fallback = scores
                .get(&pred.lesion_id)
                .is_some_and(|e| e.fallback);
            if cfg.exclude_fallback && fallback {
                continue;
            }
            labels.push(pred.label == Some(true));
            probs.push(pred.p);
            held_out[i] = Some(pred);
        }
        per_fold.push(fold_metrics(fold, &labels, &probs)?);
        models.push(outcome);
    }

    let predictions: Vec<PredictionRow> = held_out.into_iter().flatten().collect();
    let labels: Vec<bool> = predictions.iter().map(|p| p.label == Some(true)).collect();
    let probs: Vec<f64> = predictions.iter().map(|p| p.p).collect();
    let overall = evaluate(&labels, &probs)?;
    Ok(CrossValidation {
        models,
        report: MetricsReport {
            overall,
            folds: per_fold,
            predictions: Vec::new(),
        },
        predictions,
    })
}
