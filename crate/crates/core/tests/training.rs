use ipca_core::classifier::{predict, train_split, OutlierScores, TrainConfig, Weighting};
use ipca_core::evaluation::{auc, group_kfold, roc_curve};
use ipca_core::outlier::{score_cohort, ScoreConfig};
use ipca_core::pipeline::cross_validate;
use ipca_core::store::{group_contexts, Cohort, FeatureDomain, LesionRecord};
use ipca_core::synth::{generate_cohort, SynthConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Positives live near `e0`, negatives near `e1`.
fn separable_cohort(patients: usize, seed: u64) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for p in 0..patients {
        for l in 0..8 {
            let y = rng.random_bool(0.3);
            let mut v: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..0.2)).collect();
            v[usize::from(!y)] += 1.0;
            records.push(LesionRecord::new(
                format!("P{p}"),
                "torso",
                format!("P{p}_L{l}"),
                Some(y),
                v,
            ));
        }
    }
    Cohort::new(records, FeatureDomain::NonNegative).unwrap()
}

fn scores_for(cohort: &Cohort) -> OutlierScores {
    OutlierScores::from_reports(&score_cohort(cohort, &ScoreConfig::default()).unwrap())
}

#[test]
fn learns_a_separable_cohort() {
    let cohort = separable_cohort(60, 1);
    let scores = scores_for(&cohort);
    let cfg = TrainConfig {
        weighting: Weighting::WithoutDucklings,
        epochs: 40,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let folds = group_kfold(&cohort, 4, 0).unwrap();
    let (train_idx, val_idx) = folds.split(0);
    let out = train_split(&cohort, &scores, &cfg, &train_idx, &val_idx).unwrap();
    let preds = predict(&out.params, &cohort, &scores, cfg.weighting, cfg.injection).unwrap();
    let labels: Vec<bool> = val_idx.iter().map(|&i| preds[i].label.unwrap()).collect();
    let probs: Vec<f64> = val_idx.iter().map(|&i| preds[i].p).collect();
    let val_auc = auc(&roc_curve(&labels, &probs).unwrap());
    assert!(val_auc > 0.95, "validation AUC {val_auc}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let cohort = separable_cohort(20, 2);
    let scores = scores_for(&cohort);
    let cfg = TrainConfig {
        epochs: 5,
        d_f: 8,
        d_h: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let folds = group_kfold(&cohort, 4, 3).unwrap();
    let a = cross_validate(&cohort, &scores, &cfg, &folds).unwrap();
    let b = cross_validate(&cohort, &scores, &cfg, &folds).unwrap();
    assert_eq!(a, b);

    let other = TrainConfig { seed: 10, ..cfg };
    let c = cross_validate(&cohort, &scores, &other, &folds).unwrap();
    assert_ne!(a.models[0].params, c.models[0].params);
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let cohort = separable_cohort(4, 4);
    let scores = scores_for(&cohort);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let all: Vec<usize> = (0..cohort.len()).collect();
    let out = train_split(&cohort, &scores, &cfg, &all, &[]).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.best_epoch, None);
}

#[test]
fn generator_is_reproducible() {
    let cfg = SynthConfig {
        n_patients: 10,
        ..SynthConfig::default()
    };
    assert_eq!(generate_cohort(&cfg).unwrap(), generate_cohort(&cfg).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn planted_outliers_score_higher_than_their_neighbours(seed in any::<u64>()) {
        let cfg = SynthConfig { seed, n_patients: 30, ..SynthConfig::default() };
        let synth = generate_cohort(&cfg).unwrap();
        let reports = score_cohort(&synth.cohort, &ScoreConfig::default()).unwrap();
        let contexts = group_contexts(&synth.cohort);
        let mut offset = 0;
        for (ctx, rep) in contexts.iter().zip(&reports) {
            let planted = &synth.planted[offset..offset + ctx.len()];
            offset += ctx.len();
            let mean = |want: bool| {
                let v: Vec<f64> = rep.scores.iter().zip(planted)
                    .filter(|(_, &p)| p == want).map(|(s, _)| *s).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            if rep.fallback {
                continue;
            }
            if let (Some(out), Some(normal)) = (mean(true), mean(false)) {
                prop_assert!(out > normal, "{}: {} <= {}", ctx.patient_id, out, normal);
            }
        }
    }
}
