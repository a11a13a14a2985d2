use std::collections::BTreeSet;

use proptest::prelude::*;

use unlearn_forge::data::{
    load_csv_dataset, make_synthetic_gaussian, parse_csv_dataset, split_for_unlearning, split_from_manifest,
    SplitManifest, SplitSpec,
};
use unlearn_forge::Error;

fn parse(text: &str) -> unlearn_forge::Result<unlearn_forge::data::LabeledDataset> {
    parse_csv_dataset(text.as_bytes(), 3, "t")
}

#[test]
fn csv_rows_parse_in_order() {
    let d = parse("0, 1.5, -2\n2,3,4\n1,0,1e-3\n").unwrap();
    assert_eq!(d.labels, vec![0, 2, 1]);
    assert_eq!(d.dim(), 2);
    assert_eq!(d.features.row(0), &[1.5, -2.0]);
    assert_eq!(d.features.row(2), &[0.0, 1e-3]);
}

#[test]
fn csv_errors_name_the_row() {
    let cases = [
        ("0,1,2\n1,2\n", 2),
        ("0,1\n1,x\n", 2),
        ("5,1\n", 1),
        ("0,1\n-1,1\n", 2),
        ("0,1\n1,1\n2,NaN\n", 3),
        ("0\n", 1),
    ];
    for (text, want) in cases {
        match parse(text) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, want, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn missing_csv_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_csv_dataset(&dir.path().join("nope.csv"), 2),
        Err(Error::NotFound(_))
    ));
}

#[test]
fn class_wise_split_removes_classes_everywhere() {
    let train = make_synthetic_gaussian(6, 3, 10, 0.5, 1);
    let test = make_synthetic_gaussian(6, 3, 4, 0.5, 2);
    let s = split_for_unlearning(&train, &test, &SplitSpec::class_wise(vec![2], vec![4, 5], 0)).unwrap();
    assert_eq!(s.unlearned.len(), 10);
    assert!(s.unlearned.labels.iter().all(|&y| y == 2));
    assert_eq!(s.retained.len(), 30);
    assert!(s.retained.labels.iter().all(|&y| y < 4 && y != 2));
    assert_eq!(s.ood_pool.len(), 20);
    assert_eq!(s.train_full.len(), 40);
    assert_eq!(s.test.len(), 12);
    assert!(s.test.labels.iter().all(|&y| y != 2 && y < 4));
}

#[test]
fn bad_split_specs_are_rejected() {
    let train = make_synthetic_gaussian(4, 2, 5, 0.5, 1);
    let test = make_synthetic_gaussian(4, 2, 2, 0.5, 2);
    for spec in [
        SplitSpec::class_wise(vec![4], vec![], 0),
        SplitSpec::class_wise(vec![1], vec![1], 0),
        SplitSpec::class_wise(vec![], vec![2], 0),
        SplitSpec::sample_wise(0.0, 0),
        SplitSpec::sample_wise(1.0, 0),
    ] {
        assert!(matches!(
            split_for_unlearning(&train, &test, &spec),
            Err(Error::RejectedSpec(_))
        ));
    }
}

#[test]
fn manifest_round_trips_through_json() {
    let train = make_synthetic_gaussian(5, 4, 12, 0.5, 3);
    let test = make_synthetic_gaussian(5, 4, 3, 0.5, 4);
    let s = split_for_unlearning(&train, &test, &SplitSpec::sample_wise(0.2, 9)).unwrap();
    let json = serde_json::to_string(&s.manifest).unwrap();
    let m: SplitManifest = serde_json::from_str(&json).unwrap();
    let r = split_from_manifest(&train, &test, &m).unwrap();
    assert_eq!(r.unlearned, s.unlearned);
    assert_eq!(r.retained, s.retained);
    assert_eq!(r.test, s.test);

    let mut bad = m.clone();
    bad.test_idx.push(test.len());
    assert!(split_from_manifest(&train, &test, &bad).is_err());
}

#[test]
fn synthetic_data_is_seeded() {
    assert_eq!(make_synthetic_gaussian(3, 2, 4, 1.0, 5), make_synthetic_gaussian(3, 2, 4, 1.0, 5));
    assert_ne!(make_synthetic_gaussian(3, 2, 4, 1.0, 5), make_synthetic_gaussian(3, 2, 4, 1.0, 6));
}

proptest! {
    #[test]
    fn sample_wise_split_partitions_training_rows(frac in 0.01f64..0.99, seed in 0u64..1000, per in 2usize..12) {
        let train = make_synthetic_gaussian(4, 2, per, 1.0, 1);
        let test = make_synthetic_gaussian(4, 2, 2, 1.0, 2);
        let s = split_for_unlearning(&train, &test, &SplitSpec::sample_wise(frac, seed)).unwrap();
        let m = &s.manifest;
        let u: BTreeSet<_> = m.unlearned_idx.iter().collect();
        let r: BTreeSet<_> = m.retained_idx.iter().collect();
        prop_assert!(u.is_disjoint(&r));
        prop_assert_eq!(u.len() + r.len(), train.len());
        prop_assert_eq!(u.len(), (frac * train.len() as f64).ceil() as usize);
        prop_assert_eq!(s.test.len(), test.len());
    }
}
