use proptest::prelude::*;

use grasp::datagen;
use grasp::metrics::{self, FeatureSet, FeatureTag};
use grasp::partition;
use grasp::seed;
use grasp::training::{BatchConfig, BatchSampler, UtilizationLedger};

fn points(dim: usize, min: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec((-6i32..=6).prop_map(|v| v as f64 * 0.5), dim),
        min..=max,
    )
}

fn sets() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, usize)> {
    (1usize..=4).prop_flat_map(|d| (points(d, 12, 60), points(d, 1, 40), 1usize..=5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_stay_in_unit_interval((real, gen, k) in sets()) {
        let real = FeatureSet::new(real, FeatureTag::Real).unwrap();
        let gen = FeatureSet::new(gen, FeatureTag::Generated).unwrap();
        let c = metrics::coverage(&real, &gen, k).unwrap();
        let r = metrics::irs(&gen, &real).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!((0.0..=1.0).contains(&r) && r > 0.0);
    }

    #[test]
    fn duplicates_never_raise_metrics((real, gen, k) in sets(), copies in 1usize..4) {
        let real = FeatureSet::new(real, FeatureTag::Real).unwrap();
        let mut doubled = gen.clone();
        for _ in 0..copies {
            doubled.extend(gen.iter().cloned());
        }
        let gen = FeatureSet::new(gen, FeatureTag::Generated).unwrap();
        let doubled = FeatureSet::new(doubled, FeatureTag::Generated).unwrap();
        prop_assert_eq!(metrics::coverage(&real, &gen, k).unwrap(), metrics::coverage(&real, &doubled, k).unwrap());
        prop_assert_eq!(metrics::irs(&gen, &real).unwrap(), metrics::irs(&doubled, &real).unwrap());
    }

    #[test]
    fn coverage_grows_with_k((real, gen, _) in sets()) {
        let real = FeatureSet::new(real, FeatureTag::Real).unwrap();
        let gen = FeatureSet::new(gen, FeatureTag::Generated).unwrap();
        let mut last = 0.0;
        for k in 1..=10.min(real.len() - 1) {
            let c = metrics::coverage(&real, &gen, k).unwrap();
            prop_assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn superset_retrieves_everything(real in points(2, 1, 40)) {
        let reference = FeatureSet::new(real.clone(), FeatureTag::Real).unwrap();
        let mut unique = real.clone();
        unique.sort_by(|a, b| a.partial_cmp(b).unwrap());
        unique.dedup();
        // duplicates in the reference can only be retrieved once each
        let gen = FeatureSet::new(real, FeatureTag::Generated).unwrap();
        let expected = unique.len() as f64 / reference.len() as f64;
        prop_assert_eq!(metrics::irs(&gen, &reference).unwrap(), expected);
    }

    #[test]
    fn frechet_is_symmetric_and_zero_on_self((a, b, _) in sets()) {
        prop_assume!(a.len() >= 2 && b.len() >= 2);
        let a = FeatureSet::new(a, FeatureTag::Real).unwrap();
        let b = FeatureSet::new(b, FeatureTag::Generated).unwrap();
        prop_assert!(metrics::frechet_distance(&a, &a).unwrap() < 1e-8);
        let ab = metrics::frechet_distance(&a, &b).unwrap();
        let ba = metrics::frechet_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-10 * (1.0 + ab.abs()));
    }

    #[test]
    fn partitions_are_total(k in 1usize..8, s in 0u64..1000, n in 40usize..200) {
        let corpus = datagen::generate_corpus(&datagen::eight_class_spec(n, 2).unwrap(), 2, s).unwrap();
        let mut parts = vec![
            partition::random_partition(&corpus, k, s).unwrap(),
            partition::bisecting_kmeans_partition(&corpus, k, s, 20).unwrap(),
        ];
        if (3..=4).contains(&k) {
            parts.push(partition::label_tier_partition(&corpus, k).unwrap());
        } else {
            prop_assert!(partition::label_tier_partition(&corpus, k).is_err());
        }
        for p in &parts {
            prop_assert_eq!(p.assignments.len(), corpus.len());
            prop_assert!(p.assignments.iter().all(|&e| e < k));
            prop_assert_eq!(p.cluster_sizes().iter().sum::<usize>(), corpus.len());
        }
    }

    #[test]
    fn ledger_conserves_slots(b in 4usize..12, quota in 3usize..=4, s in 0u64..100) {
        let corpus = datagen::generate_corpus(&datagen::chest_xray_spec(400, 2).unwrap(), 2, s).unwrap();
        let p = partition::label_tier_partition(&corpus, 4).unwrap();
        let sampler = BatchSampler::new(&corpus, &p).unwrap();
        let cfg = BatchConfig { batch_size: b, resample: true, quota };
        let mut ledger = UtilizationLedger::new(4);
        let mut rng = seed::rng(s);
        for _ in 0..20 {
            let (batch, _) = sampler.assemble(&cfg, &ledger, &mut rng).unwrap();
            prop_assert_eq!(batch.samples.len(), b);
            ledger.record(&batch);
        }
        prop_assert_eq!(ledger.total, 20 * b as u64);
        prop_assert_eq!(ledger.per_expert_counts.iter().sum::<u64>(), ledger.total);
    }
}
