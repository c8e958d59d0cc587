use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::FocalParams;
use super::network::{accumulate_gradients, forward_with, trace_loss, Injection, ModelParams};
use super::optim::RAdam;
use super::ClassifierError;
use crate::evaluation::{FoldAssignment, PredictionRow};
use crate::outlier::{OutlierReport, ScoreRow};
use crate::store::Cohort;

/// Ablation arm: whether outlier scores reach the model at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    WithDucklings,
    /// Every lesion gets `o = 1`.
    WithoutDucklings,
}

impl std::str::FromStr for Weighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with-ducklings" | "with" => Ok(Weighting::WithDucklings),
            "without-ducklings" | "without" => Ok(Weighting::WithoutDucklings),
            other => Err(format!("unknown ablation arm '{other}'")),
        }
    }
}

/// Which networks receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub adapter: bool,
    pub head: bool,
    pub classifier: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Trainable {
            adapter: true,
            head: true,
            classifier: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Epochs without validation improvement before the learning rate is
    /// multiplied by `plateau_factor`. `None` keeps it fixed.
    pub plateau_patience: Option<usize>,
    pub plateau_factor: f64,
    /// Epochs without validation improvement before training stops.
    pub early_stop_patience: Option<usize>,
    pub seed: u64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub d_f: usize,
    pub d_h: usize,
    pub injection: Injection,
    pub weighting: Weighting,
    /// Drop lesions whose score came from the small-context fallback.
    pub exclude_fallback: bool,
    pub trainable: Trainable,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            epochs: 25,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            plateau_patience: Some(3),
            plateau_factor: 0.5,
            early_stop_patience: Some(7),
            seed: 0,
            batch_size: Some(64),
            d_f: 64,
            d_h: 32,
            injection: Injection::Features,
            weighting: Weighting::WithDucklings,
            exclude_fallback: false,
            trainable: Trainable::default(),
        }
    }
}

impl TrainConfig {
    pub fn focal(&self) -> FocalParams {
        FocalParams {
            gamma: self.focal_gamma,
            alpha: self.focal_alpha,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.focal_gamma.is_nan() || self.focal_gamma < 0.0 {
            return bad("focal_gamma must be >= 0");
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return bad("focal_alpha must lie in (0, 1]");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad("plateau_factor must lie in (0, 1]");
        }
        if self.plateau_patience == Some(0) || self.early_stop_patience == Some(0) {
            return bad("patience values must be positive");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        if self.d_f == 0 || self.d_h == 0 {
            return bad("hidden sizes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub score: f64,
    pub fallback: bool,
}

/// Precomputed outlier scores keyed by lesion id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutlierScores(HashMap<String, ScoreEntry>);

impl OutlierScores {
    pub fn from_rows(rows: &[ScoreRow]) -> Self {
        OutlierScores(
            rows.iter()
                .map(|r| {
                    (
                        r.lesion_id.clone(),
                        ScoreEntry {
                            score: r.outlier_score,
                            fallback: r.fallback,
                        },
                    )
                })
                .collect(),
        )
    }

    pub fn from_reports(reports: &[OutlierReport]) -> Self {
        let mut map = HashMap::new();
        for rep in reports {
            for (id, &score) in rep.lesion_ids.iter().zip(&rep.scores) {
                map.insert(
                    id.clone(),
                    ScoreEntry {
                        score,
                        fallback: rep.fallback,
                    },
                );
            }
        }
        OutlierScores(map)
    }

    pub fn get(&self, lesion_id: &str) -> Option<ScoreEntry> {
        self.0.get(lesion_id).copied()
    }

    fn lookup(&self, lesion_id: &str) -> Result<ScoreEntry, ClassifierError> {
        let entry = self
            .get(lesion_id)
            .ok_or_else(|| ClassifierError::MissingScore(lesion_id.to_string()))?;
        if !(0.0..=2.0).contains(&entry.score) {
            return Err(ClassifierError::InvalidScore {
                lesion_id: lesion_id.to_string(),
                score: entry.score,
            });
        }
        Ok(entry)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

pub fn write_history_csv<W: Write>(out: W, history: &[EpochRecord]) -> csv::Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    wtr.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
    for rec in history {
        wtr.serialize(rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the best monitored loss.
    pub params: ModelParams,
    pub optimizer: RAdam,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Everything needed to reproduce or reuse a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub seed: u64,
    pub params: ModelParams,
    pub optimizer: RAdam,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, outcome: &TrainOutcome) -> Self {
        Checkpoint {
            config: config.clone(),
            seed: config.seed,
            params: outcome.params.clone(),
            optimizer: outcome.optimizer.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json() + "\n")
    }

    pub fn load(path: &Path) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.params.validate()?;
        Ok(ckpt)
    }
}

struct Sample<'a> {
    x: &'a [f64],
    o: f64,
    y: bool,
}

fn samples<'a>(
    cohort: &'a Cohort,
    scores: &OutlierScores,
    cfg: &TrainConfig,
    indices: &[usize],
) -> Result<Vec<Sample<'a>>, ClassifierError> {
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let rec = &cohort.records()[i];
        let Some(y) = rec.label else { continue };
        let entry = scores.lookup(&rec.lesion_id)?;
        if cfg.exclude_fallback && entry.fallback {
            continue;
        }
        let o = match cfg.weighting {
            Weighting::WithDucklings => entry.score,
            Weighting::WithoutDucklings => 1.0,
        };
        out.push(Sample {
            x: rec.embedding.values(),
            o,
            y,
        });
    }
    Ok(out)
}

fn mean_loss(params: &ModelParams, data: &[Sample], cfg: &TrainConfig) -> Result<f64, ClassifierError> {
    let focal = cfg.focal();
    let mut total = 0.0;
    for s in data {
        let t = forward_with(params, s.x, s.o, cfg.injection)?;
        total += trace_loss(&t, s.y, focal);
    }
    Ok(total / data.len() as f64)
}

/// Trains on the records outside `val_fold` and monitors the records inside it.
pub fn train(
    cohort: &Cohort,
    scores: &OutlierScores,
    cfg: &TrainConfig,
    folds: &FoldAssignment,
    val_fold: usize,
) -> Result<TrainOutcome, ClassifierError> {
    folds.check(cohort)?;
    let (train_idx, val_idx) = folds.split(val_fold);
    train_split(cohort, scores, cfg, &train_idx, &val_idx)
}

/// Minimises the mean focal loss over the labeled records of `train_idx`.
///
/// Each epoch shuffles the training set, walks it in mini-batches and takes
/// one RAdam step per batch. The monitored loss is the validation loss, or
/// the training loss when `val_idx` holds no labeled records. The learning
/// rate decays on plateaus and training stops early once the monitored loss
/// has not improved for `early_stop_patience` epochs; the best parameters
/// seen are returned.
pub fn train_split(
    cohort: &Cohort,
    scores: &OutlierScores,
    cfg: &TrainConfig,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<TrainOutcome, ClassifierError> {
    cfg.validate()?;
    let train_set = samples(cohort, scores, cfg, train_idx)?;
    let val_set = samples(cohort, scores, cfg, val_idx)?;
    if train_set.is_empty() {
        return Err(ClassifierError::NoLabeledRecords);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(cohort.dim(), cfg.d_f, cfg.d_h, &mut rng);
    let mut opt = RAdam::new(&params.slices().map(<[f64]>::len));
    let focal = cfg.focal();
    let batch = cfg.batch_size.unwrap_or(train_set.len()).min(train_set.len());

    let mut lr = cfg.learning_rate;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams, RAdam)> = None;
    let mut since_best = 0;
    let mut since_decay = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grads = params.zeros_like();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grads.scale(0.0);
            for &i in chunk {
                let s = &train_set[i];
                let trace = forward_with(&params, s.x, s.o, cfg.injection)?;
                accumulate_gradients(&params, &trace, s.y, focal, &mut grads)?;
            }
            grads.scale(1.0 / chunk.len() as f64);
            let [aw, ab, hw, hb, cw, cb] = grads.slices_mut();
            let frozen = [
                (!cfg.trainable.adapter, [aw, ab]),
                (!cfg.trainable.head, [hw, hb]),
                (!cfg.trainable.classifier, [cw, cb]),
            ];
            for (is_frozen, group) in frozen {
                if is_frozen {
                    for g in group {
                        g.iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
            opt.step(&mut params.slices_mut(), &grads.slices(), lr);
        }
        if !params.slices().iter().all(|s| s.iter().all(|v| v.is_finite())) {
            return Err(ClassifierError::NonFinite);
        }

        let train_loss = mean_loss(&params, &train_set, cfg)?;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(mean_loss(&params, &val_set, cfg)?)
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });

        let monitored = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, ..)| monitored < *b) {
            best = Some((monitored, epoch, params.clone(), opt.clone()));
            since_best = 0;
            since_decay = 0;
            continue;
        }
        since_best += 1;
        since_decay += 1;
        if cfg.plateau_patience.is_some_and(|p| since_decay >= p) {
            lr *= cfg.plateau_factor;
            since_decay = 0;
        }
        if cfg.early_stop_patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }

    Ok(match best {
        Some((_, epoch, params, optimizer)) => TrainOutcome {
            params,
            optimizer,
            history,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            params,
            optimizer: opt,
            history,
            best_epoch: None,
        },
    })
}

/// Melanoma probability for every record of `cohort`, paired with the
/// outlier score that entered the model.
pub fn predict(
    params: &ModelParams,
    cohort: &Cohort,
    scores: &OutlierScores,
    weighting: Weighting,
    injection: Injection,
) -> Result<Vec<PredictionRow>, ClassifierError> {
    params.validate()?;
    if !cohort.is_empty() && cohort.dim() != params.input_dim() {
        return Err(ClassifierError::DimensionMismatch {
            expected: params.input_dim(),
            found: cohort.dim(),
        });
    }
    cohort
        .records()
        .iter()
        .map(|rec| {
            let entry = scores.lookup(&rec.lesion_id)?;
            let o = match weighting {
                Weighting::WithDucklings => entry.score,
                Weighting::WithoutDucklings => 1.0,
            };
            let t = forward_with(params, rec.embedding.values(), o, injection)?;
            Ok(PredictionRow {
                lesion_id: rec.lesion_id.clone(),
                label: rec.label,
                p: t.p,
                outlier_score: o,
            })
        })
        .collect()
}
