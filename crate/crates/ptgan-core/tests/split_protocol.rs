//! Split protocol against the counting oracle, plus partition properties.

use proptest::prelude::*;
use ptgan_core::data::{apply_split, train_identity_count, DatasetManifest, PersonRecord, SplitRole};
use std::collections::HashSet;

fn manifest_with(n_ids: usize, cams: u32, per: usize) -> DatasetManifest {
    let mut records = Vec::new();
    for i in 0..n_ids {
        for c in 1..=cams {
            for k in 0..per {
                records.push(PersonRecord {
                    image_path: format!("x/{i:04}_c{c}s1_{k:06}_00.png"),
                    person_id: format!("{i:04}"),
                    camera_id: c,
                    split_role: SplitRole::Unassigned,
                    mask_path: None,
                });
            }
        }
    }
    DatasetManifest::new("m", "t", records)
}

/// Counting oracle: round half away from zero, ties to the train side.
fn oracle_train_count(n: usize, ratio: f64) -> usize {
    let exact = ratio * n as f64;
    let floor = exact.floor();
    if exact - floor >= 0.5 {
        floor as usize + 1
    } else {
        floor as usize
    }
}

#[test]
fn one_to_three_ratio_matches_counting_oracle_for_all_n() {
    let ratio = 0.25;
    for n in 4..=200usize {
        let m = manifest_with(n, 2, 2);
        let split = apply_split(&m, ratio, 0.34, 1234 + n as u64).unwrap();
        let train: HashSet<_> = split
            .records_with_role(SplitRole::Train)
            .map(|r| r.person_id.clone())
            .collect();
        let expected = oracle_train_count(n, ratio);
        assert_eq!(train.len(), expected, "n={n}");
        assert_eq!(train_identity_count(n, ratio), expected, "helper disagrees at n={n}");
        let test: HashSet<_> = split
            .records
            .iter()
            .filter(|r| matches!(r.split_role, SplitRole::Query | SplitRole::Gallery))
            .map(|r| r.person_id.clone())
            .collect();
        assert!(train.is_disjoint(&test), "n={n}: partitions overlap");
        assert_eq!(train.len() + test.len(), n, "n={n}: identities lost");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Train/test identity sets are always disjoint and every test image is
    /// exactly one of query or gallery.
    #[test]
    fn split_is_a_partition(
        n_ids in 4usize..40,
        cams in 1u32..4,
        per in 1usize..4,
        seed in 0u64..1_000_000,
        ratio_milli in 100usize..900,
        qf_milli in 100usize..900,
    ) {
        let m = manifest_with(n_ids, cams, per);
        let ratio = ratio_milli as f64 / 1000.0;
        let qf = qf_milli as f64 / 1000.0;
        let t = train_identity_count(n_ids, ratio);
        prop_assume!(t >= 1 && t < n_ids);
        let split = apply_split(&m, ratio, qf, seed).unwrap();
        let mut train = HashSet::new();
        let mut test = HashSet::new();
        for r in &split.records {
            match r.split_role {
                SplitRole::Train => {
                    train.insert(r.person_id.clone());
                }
                SplitRole::Query | SplitRole::Gallery => {
                    test.insert(r.person_id.clone());
                }
                SplitRole::Unassigned => prop_assert!(false, "unassigned record after split"),
            }
        }
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), n_ids);
        // Identity granularity: no identity has records in both partitions.
        for r in &split.records {
            if train.contains(&r.person_id) {
                prop_assert_eq!(r.split_role, SplitRole::Train);
            }
        }
    }
}
