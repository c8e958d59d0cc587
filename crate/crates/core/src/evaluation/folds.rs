//! Patient-grouped k-fold assignment.

use std::collections::HashMap;

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::store::Cohort;

/// Fold index for every cohort record, in record order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: Vec<usize>,
}

impl FoldAssignment {
    /// Record indices outside and inside `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.folds.len()).partition(|&i| self.folds[i] != fold)
    }

    /// Confirms that the assignment covers `cohort` and never splits a patient.
    pub fn check(&self, cohort: &Cohort) -> Result<(), EvalError> {
        if self.folds.len() != cohort.len() {
            return Err(EvalError::LengthMismatch {
                expected: cohort.len(),
                found: self.folds.len(),
            });
        }
        if let Some(&bad) = self.folds.iter().find(|&&f| f >= self.k) {
            return Err(EvalError::InvalidFold { fold: bad, k: self.k });
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (rec, &fold) in cohort.records().iter().zip(&self.folds) {
            let first = *seen.entry(rec.patient_id.as_str()).or_insert(fold);
            if first != fold {
                return Err(EvalError::Leakage {
                    patient_id: rec.patient_id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Number of distinct patients per fold.
    pub fn patients_per_fold(&self, cohort: &Cohort) -> Vec<usize> {
        let mut sets: Vec<IndexSet<&str>> = vec![IndexSet::new(); self.k];
        for (rec, &fold) in cohort.records().iter().zip(&self.folds) {
            sets[fold].insert(rec.patient_id.as_str());
        }
        sets.iter().map(|s| s.len()).collect()
    }
}

/// Shuffles distinct patient ids with a seeded ChaCha8 stream and deals them
/// round-robin into `k` folds.
pub fn group_kfold(cohort: &Cohort, k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    let mut patients: Vec<&str> = cohort
        .records()
        .iter()
        .map(|r| r.patient_id.as_str())
        .collect::<IndexSet<_>>()
        .into_iter()
        .collect();
    if k == 0 || patients.len() < k {
        return Err(EvalError::TooFewGroups {
            groups: patients.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let fold_of: HashMap<&str, usize> = patients
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i % k))
        .collect();
    let folds = cohort
        .records()
        .iter()
        .map(|r| fold_of[r.patient_id.as_str()])
        .collect();
    Ok(FoldAssignment { k, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{FeatureDomain, LesionRecord};

    fn cohort(lesions_per_patient: &[usize]) -> Cohort {
        let mut recs = Vec::new();
        for (p, &n) in lesions_per_patient.iter().enumerate() {
            for l in 0..n {
                recs.push(LesionRecord::new(
                    format!("p{p}"),
                    "torso",
                    format!("p{p}-{l}"),
                    Some(l % 2 == 0),
                    vec![1.0],
                ));
            }
        }
        Cohort::new(recs, FeatureDomain::NonNegative).unwrap()
    }

    #[test]
    fn one_patient_per_fold() {
        let c = cohort(&[2, 3, 1, 4, 2]);
        let f = group_kfold(&c, 5, 9).unwrap();
        assert_eq!(f.patients_per_fold(&c), vec![1; 5]);
        f.check(&c).unwrap();
    }

    #[test]
    fn seventeen_patients_in_five_folds() {
        let c = cohort(&[3; 17]);
        let f = group_kfold(&c, 5, 1).unwrap();
        let mut sizes = f.patients_per_fold(&c);
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 3, 4, 4]);
    }

    #[test]
    fn too_few_patients() {
        let c = cohort(&[2, 2, 2]);
        assert_eq!(
            group_kfold(&c, 5, 0),
            Err(EvalError::TooFewGroups { groups: 3, k: 5 })
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let c = cohort(&[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(group_kfold(&c, 3, 5).unwrap(), group_kfold(&c, 3, 5).unwrap());
    }

    #[test]
    fn check_detects_leakage() {
        let c = cohort(&[2, 2]);
        let bad = FoldAssignment {
            k: 2,
            folds: vec![0, 1, 1, 1],
        };
        assert_eq!(
            bad.check(&c),
            Err(EvalError::Leakage {
                patient_id: "p0".into()
            })
        );
    }
}
