#![allow(dead_code)]

use ipca_core::store::{Cohort, FeatureDomain, LesionRecord};
use proptest::prelude::*;

/// Non-negative vector with at least one clearly positive entry.
pub fn nonneg_vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(0.0f64..10.0, dim), 0..dim).prop_map(|(mut v, i)| {
        v[i] += 0.5;
        v
    })
}

pub fn context_vectors(
    dim: std::ops::Range<usize>,
    n: std::ops::Range<usize>,
) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (dim, n).prop_flat_map(|(d, n)| prop::collection::vec(nonneg_vector(d), n))
}

/// Brute-force cosine distance straight from the definition.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)
}

pub fn oracle_scores(vectors: &[Vec<f64>]) -> Vec<f64> {
    let n = vectors.len();
    (0..n)
        .map(|i| {
            let total: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| cosine_distance(&vectors[i], &vectors[j]))
                .sum();
            total / (n - 1) as f64
        })
        .collect()
}

/// Quantile by linear interpolation at position `(n - 1) q`, computed from
/// an independently sorted copy.
pub fn oracle_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (v.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn oracle_flags(scores: &[f64], k: f64) -> Vec<bool> {
    let q1 = oracle_quantile(scores, 0.25);
    let q3 = oracle_quantile(scores, 0.75);
    let iqr = q3 - q1;
    scores
        .iter()
        .map(|&s| if iqr == 0.0 { s > q3 } else { s >= q3 + k * iqr })
        .collect()
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn pairwise_auc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if !yi {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Cohort of `patients` patients with `per_patient` lesions each, ids `P<i>`.
pub fn simple_cohort(patients: usize, per_patient: usize, dim: usize) -> Cohort {
    let mut records = Vec::new();
    for p in 0..patients {
        for l in 0..per_patient {
            let v: Vec<f64> = (0..dim).map(|d| 1.0 + ((p * 7 + l * 3 + d) % 5) as f64).collect();
            records.push(LesionRecord::new(
                format!("P{p}"),
                "torso",
                format!("P{p}_L{l}"),
                Some((p + l) % 3 == 0),
                v,
            ));
        }
    }
    Cohort::new(records, FeatureDomain::NonNegative).unwrap()
}
