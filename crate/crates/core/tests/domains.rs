mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use specens::specialization::{compute_fooling_matrix, derive_domains, split_row, Aggregator, DomainSet, FoolingMatrix};
use specens::{train, AttackConfig, ExpertiseDomain, MlpArchitecture, TrainConfig};

fn counts_strategy() -> impl Strategy<Value = (usize, Vec<Vec<u64>>)> {
    (2usize..=10).prop_flat_map(|k| (Just(k), prop::collection::vec(prop::collection::vec(0u64..50, k), k)))
}

fn to_matrix(k: usize, raw: &[Vec<u64>]) -> FoolingMatrix {
    // Force a non-empty row total and use it as the shared per-class count.
    let total = 10 * 50 * k as u64;
    let counts = raw
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            let s: u64 = row.iter().sum();
            row[i] += total - s;
            row
        })
        .collect();
    FoolingMatrix::from_counts(counts, total as usize).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn split_rows_cover_and_keep_own_class((k, raw) in counts_strategy()) {
        let fm = to_matrix(k, &raw);
        for i in 0..k {
            let row = fm.row(i);
            let (high, low) = split_row(row, i, Aggregator::MeanOffDiagonal).unwrap();
            prop_assert!(high.contains(i) && low.contains(i));
            let union: BTreeSet<usize> = high.classes().iter().chain(low.classes()).copied().collect();
            prop_assert_eq!(union.len(), k);
            let mu = (0..k).filter(|&j| j != i).map(|j| row[j]).sum::<f64>() / (k - 1) as f64;
            for j in (0..k).filter(|&j| j != i) {
                prop_assert_eq!(high.contains(j), row[j] > mu);
                prop_assert_eq!(low.contains(j), row[j] <= mu);
            }
        }
    }

    #[test]
    fn domain_sets_are_sound((k, raw) in counts_strategy()) {
        let fm = to_matrix(k, &raw);
        let ds = derive_domains(&fm, Aggregator::MeanOffDiagonal).unwrap();
        let d = ds.domains();
        prop_assert!(d.len() <= 2 * k + 1);
        for a in 0..d.len() {
            for b in a + 1..d.len() {
                prop_assert_ne!(&d[a], &d[b]);
            }
        }
        let full = ExpertiseDomain::full(k);
        prop_assert_eq!(d.iter().filter(|x| **x == full).count(), 1);
        prop_assert_eq!(d.last().unwrap(), &full);
        for c in 0..k {
            prop_assert!(d.iter().filter(|x| x.contains(c)).count() >= 2);
            let row = fm.row(c);
            let mu = (0..k).filter(|&j| j != c).map(|j| row[j]).sum::<f64>() / (k - 1) as f64;
            let top = (0..k).filter(|&j| j != c).fold(None, |b: Option<usize>, j| match b {
                Some(b) if row[b] >= row[j] => Some(b),
                _ => Some(j),
            }).unwrap();
            if row[top] > mu {
                let inter = d.iter().filter(|x| x.contains(c)).fold(full.classes().to_vec(), |acc, x| {
                    acc.into_iter().filter(|v| x.contains(*v)).collect()
                });
                prop_assert!(!inter.contains(&top), "class {} top fooler {} survives", c, top);
            }
        }
        prop_assert_eq!(DomainSet::from_text(&ds.to_text()).unwrap(), ds);
    }
}

#[test]
fn all_distinct_splits_give_the_full_construction() {
    // Row i is fooled mostly into i+1 and i+2, with distinct rates elsewhere.
    let k = 10;
    let counts: Vec<Vec<u64>> = (0..k)
        .map(|i| {
            let mut row = vec![0u64; k];
            row[(i + 1) % k] = 40;
            row[(i + 2) % k] = 30;
            for j in 0..k {
                if row[j] == 0 && j != i {
                    row[j] = 1;
                }
            }
            let s: u64 = row.iter().sum();
            row[i] = 100 - s;
            row
        })
        .collect();
    let ds = derive_domains(&FoolingMatrix::from_counts(counts, 100).unwrap(), Aggregator::MeanOffDiagonal).unwrap();
    assert_eq!(ds.len(), 21);
    let caps = specens::ensemble::capacities(ds.domains(), k);
    // Own class sits in both of its splits, each other row adds one, plus the generalist.
    assert!(caps.iter().all(|&c| c == k + 2), "{caps:?}");
}

#[test]
fn fooling_matrix_tallies_match_a_recount() {
    let data = blobs(3, 6, 120, 0.1, 17);
    let arch = MlpArchitecture::new(6, vec![16], 3).unwrap();
    let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let model = train(&data, &arch, &ExpertiseDomain::full(3), &cfg).unwrap();
    let (fm, advs) = compute_fooling_matrix(&model, &data, &AttackConfig::new(0.2, 1), 50, "naive").unwrap();
    assert_eq!(advs.len(), 150);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("adv.csv");
    specens::attacks::csv::write(&p, "h", &advs).unwrap();
    let mut recount = vec![vec![0u64; 3]; 3];
    for a in specens::attacks::csv::read(&p).unwrap() {
        recount[a.true_label][model.forward(&a.features).unwrap().argmax()] += 1;
    }
    assert_eq!(fm.counts(), &recount[..]);
    for (i, row) in fm.rates().iter().enumerate() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (j, &r) in row.iter().enumerate() {
            assert_eq!(r, recount[i][j] as f64 / 50.0);
        }
    }
    fm.save(dir.path(), "fm", "h").unwrap();
    assert_eq!(FoolingMatrix::load_counts(&dir.path().join("fm_counts.csv")).unwrap(), fm);
}

#[test]
fn tiny_perturbations_never_fool() {
    let data = blobs(3, 6, 60, 0.03, 4);
    let arch = MlpArchitecture::new(6, vec![16], 3).unwrap();
    let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let model = train(&data, &arch, &ExpertiseDomain::full(3), &cfg).unwrap();
    let (fm, _) = compute_fooling_matrix(&model, &data, &AttackConfig::new(1e-6, 1), 20, "naive").unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(fm.rates()[i][j], if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn insufficient_samples_name_the_class() {
    let data: Vec<_> = blobs(3, 4, 30, 0.05, 4).into_iter().filter(|s| s.label != 1 || s.features[0] > 2.0).collect();
    let arch = MlpArchitecture::new(4, vec![8], 3).unwrap();
    let model = specens::Classifier::zeros(arch, ExpertiseDomain::full(3)).unwrap();
    match compute_fooling_matrix(&model, &data, &AttackConfig::new(0.1, 1), 5, "m") {
        Err(specens::Error::InsufficientSamples { class, .. }) => assert_eq!(class, 1),
        other => panic!("unexpected {other:?}"),
    }
}
