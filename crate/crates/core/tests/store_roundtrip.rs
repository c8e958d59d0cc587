mod common;

use std::collections::BTreeMap;

use ipca_core::store::{
    group_contexts, load_cohort, save_cohort, Cohort, FeatureDomain, Format, LesionRecord,
};
use proptest::prelude::*;

fn record_strategy(dim: usize) -> impl Strategy<Value = LesionRecord> {
    (
        0usize..6,
        prop::sample::select(vec!["torso", "head/neck", "upper extremity"]),
        prop::option::of(any::<bool>()),
        prop::collection::vec(0.0f64..1e6, dim),
    )
        .prop_map(|(p, region, label, v)| LesionRecord::new(format!("P{p}"), region, "", label, v))
}

fn cohort_strategy() -> impl Strategy<Value = Cohort> {
    (1usize..8)
        .prop_flat_map(|dim| prop::collection::vec(record_strategy(dim), 1..40))
        .prop_map(|mut records| {
            for (i, r) in records.iter_mut().enumerate() {
                r.lesion_id = format!("{}_L{i}", r.patient_id);
            }
            Cohort::new(records, FeatureDomain::NonNegative).unwrap()
        })
}

proptest! {
    #[test]
    fn csv_and_jsonl_round_trip_exactly(cohort in cohort_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        for (name, format) in [("c.csv", Format::Csv), ("c.jsonl", Format::Jsonl)] {
            let path = dir.path().join(name);
            save_cohort(&cohort, &path, format).unwrap();
            let back = load_cohort(&path, format, FeatureDomain::NonNegative).unwrap();
            prop_assert_eq!(back.records(), cohort.records());
        }
    }

    #[test]
    fn grouping_matches_sorted_oracle(cohort in cohort_strategy()) {
        let contexts = group_contexts(&cohort);
        let mut oracle: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for r in cohort.records() {
            oracle
                .entry((r.patient_id.clone(), r.region.clone()))
                .or_default()
                .push(r.lesion_id.clone());
        }
        let mut got: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for c in &contexts {
            let ids = c.lesions.iter().map(|l| l.lesion_id.clone()).collect();
            prop_assert!(got.insert((c.patient_id.clone(), c.region.clone()), ids).is_none());
        }
        prop_assert_eq!(got, oracle);
    }
}

#[test]
fn rejects_negative_features_unless_signed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("neg.csv");
    std::fs::write(
        &path,
        "patient_id,region,lesion_id,label,f0,f1\nP1,torso,a,1,0.5,-0.1\n",
    )
    .unwrap();
    assert!(load_cohort(&path, Format::Csv, FeatureDomain::NonNegative).is_err());
    let signed = load_cohort(&path, Format::Csv, FeatureDomain::Signed).unwrap();
    assert_eq!(signed.records()[0].embedding.values(), &[0.5, -0.1]);
}

#[test]
fn reports_row_of_ragged_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(
        &path,
        "patient_id,region,lesion_id,label,f0,f1\nP1,torso,a,1,0.5,0.1\nP1,torso,b,0,0.5\n",
    )
    .unwrap();
    let err = load_cohort(&path, Format::Csv, FeatureDomain::NonNegative).unwrap_err();
    assert!(!err.is_io());
    assert!(err.to_string().contains("row 2"), "{err}");
}
