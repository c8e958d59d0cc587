//! Seeded synthetic cohorts with planted ugly ducklings.
//!
//! Each patient gets a nonnegative prototype vector drawn uniformly from
//! `[0, 1]^D`. Ordinary lesions are the prototype plus Gaussian noise
//! clamped at zero; planted outliers are built the same way around a fresh
//! random direction of their own. Labels equal the planted mask, flipped
//! with probability `label_flip_rate`.
//!
//! All randomness comes from one ChaCha8 stream seeded with `seed`
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`), consumed in patient order.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Cohort, FeatureDomain, LesionRecord};

const REGIONS: [&str; 4] = ["torso", "upper extremity", "lower extremity", "head/neck"];

#[derive(Debug, Error, PartialEq)]
#[error("invalid synthetic config: {0}")]
pub struct SynthError(String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    /// Inclusive range of lesions for patients with a full context.
    pub min_lesions: usize,
    pub max_lesions: usize,
    pub dim: usize,
    /// Per-lesion probability of being a planted outlier.
    pub outlier_rate: f64,
    /// Probability that a lesion's label disagrees with its planted status.
    pub label_flip_rate: f64,
    pub noise_scale: f64,
    /// Fraction of patients given between 1 and 5 lesions.
    pub fraction_small_context: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            n_patients: 200,
            min_lesions: 8,
            max_lesions: 24,
            dim: 16,
            outlier_rate: 0.08,
            label_flip_rate: 0.1,
            noise_scale: 0.05,
            fraction_small_context: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let rate = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SynthError(format!("{name} must lie in [0, 1]")))
            }
        };
        rate("outlier_rate", self.outlier_rate)?;
        rate("label_flip_rate", self.label_flip_rate)?;
        rate("fraction_small_context", self.fraction_small_context)?;
        if self.dim < 2 {
            return Err(SynthError("dim must be >= 2".into()));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(SynthError("noise_scale must be positive".into()));
        }
        if self.min_lesions < 6 || self.min_lesions > self.max_lesions {
            return Err(SynthError(
                "lesion range must satisfy 6 <= min_lesions <= max_lesions".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub cohort: Cohort,
    /// Planted-outlier indicator per record.
    pub planted: Vec<bool>,
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

fn jitter(rng: &mut ChaCha8Rng, center: &[f64], noise: &Normal<f64>) -> Vec<f64> {
    loop {
        let v: Vec<f64> = center
            .iter()
            .map(|c| (c + noise.sample(rng)).max(0.0))
            .collect();
        if v.iter().any(|&x| x > 0.0) {
            return v;
        }
    }
}

pub fn generate_cohort(cfg: &SynthConfig) -> Result<SynthCohort, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_scale).expect("validated noise scale");
    let mut records = Vec::new();
    let mut planted = Vec::new();

    for p in 0..cfg.n_patients {
        let patient_id = format!("P{p:04}");
        let region = REGIONS[rng.random_range(0..REGIONS.len())];
        let n = if rng.random::<f64>() < cfg.fraction_small_context {
            rng.random_range(1..=5)
        } else {
            rng.random_range(cfg.min_lesions..=cfg.max_lesions)
        };
        let prototype = random_direction(&mut rng, cfg.dim);
        for l in 0..n {
            let is_outlier = rng.random::<f64>() < cfg.outlier_rate;
            let center = if is_outlier {
                random_direction(&mut rng, cfg.dim)
            } else {
                prototype.clone()
            };
            let embedding = jitter(&mut rng, &center, &noise);
            let flip = rng.random::<f64>() < cfg.label_flip_rate;
            records.push(LesionRecord::new(
                &patient_id,
                region,
                format!("{patient_id}_L{l:02}"),
                Some(is_outlier != flip),
                embedding,
            ));
            planted.push(is_outlier);
        }
    }
    let cohort = Cohort::new(records, FeatureDomain::NonNegative)
        .expect("generator emits valid records");
    Ok(SynthCohort { cohort, planted })
}

/// Sidecar `lesion_id,planted_outlier` CSV.
pub fn write_planted_csv<W: Write>(mut out: W, synth: &SynthCohort) -> std::io::Result<()> {
    writeln!(out, "lesion_id,planted_outlier")?;
    for (rec, &planted) in synth.cohort.records().iter().zip(&synth.planted) {
        writeln!(out, "{},{}", rec.lesion_id, u8::from(planted))?;
    }
    Ok(())
}
