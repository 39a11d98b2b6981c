//! Hand-derived values the implementation must reproduce.

use grasp::datagen::{self, scale_counts};
use grasp::metrics::{self, FeatureSet, FeatureTag};
use grasp::partition::{self, conflict_of_groups, greedy_tiers, pairwise_conflict};

fn line(points: &[f64], tag: FeatureTag) -> FeatureSet {
    FeatureSet::new(points.iter().map(|&p| vec![p]).collect(), tag).unwrap()
}

#[test]
fn label_tiers_balance_chest_xray_counts() {
    let spec = datagen::chest_xray_spec(2000, 2).unwrap();
    let corpus = datagen::generate_corpus(&spec, 2, 0).unwrap();
    let p = partition::label_tier_partition(&corpus, 4).unwrap();
    let sizes = p.cluster_sizes();
    // healthy class alone on the last expert
    assert_eq!(sizes[3], spec[0].count);
    assert_eq!(&sizes[..3], &[261, 261, 261]);
    assert_eq!(sizes.iter().sum::<usize>(), 2000);
}

#[test]
fn greedy_tiers_fill_the_lightest_bin() {
    assert_eq!(greedy_tiers(&[7, 5, 4, 3, 1], 2), vec![0, 1, 1, 0, 1]);
    assert_eq!(greedy_tiers(&[3, 3, 3], 3), vec![0, 1, 2]);
}

#[test]
fn scaled_counts_sum_exactly() {
    assert_eq!(scale_counts(&[1, 1, 1], 10).unwrap(), vec![4, 3, 3]);
    let c = scale_counts(&datagen::EIGHT_CLASS_WEIGHTS, 2000).unwrap();
    assert_eq!(c, datagen::EIGHT_CLASS_WEIGHTS.to_vec());
}

#[test]
fn pairwise_conflict_hand_values() {
    assert_eq!(pairwise_conflict(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), 0.0);
    assert_eq!(pairwise_conflict(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
    assert_eq!(pairwise_conflict(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
    assert!(pairwise_conflict(&[0.0, 0.0], &[1.0, 0.0]).is_err());
}

#[test]
fn group_conflict_is_pair_weighted() {
    let v: Vec<Vec<f64>> = vec![
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![-1.0, 0.0],
        vec![1.0, 0.0],
    ];
    let views: Vec<&[f64]> = v.iter().map(Vec::as_slice).collect();
    let s = conflict_of_groups(&[vec![0, 1, 2], vec![3]], &views).unwrap();
    // pairs (0,1)=1, (0,2)=2, (1,2)=1; singleton contributes nothing
    assert!((s.per_cluster[0] - 4.0 / 3.0).abs() < 1e-15);
    assert_eq!(s.per_cluster[1], 0.0);
    assert_eq!(s.pair_count, 3);
    assert!((s.overall - 4.0 / 3.0).abs() < 1e-15);
}

#[test]
fn knn_radius_hand_values() {
    let real = line(&[0.0, 1.0, 3.0, 6.0], FeatureTag::Real);
    let radii: Vec<f64> = real
        .vectors
        .iter()
        .map(|x| metrics::knn_radius(x, &real, 1).unwrap())
        .collect();
    assert_eq!(radii, vec![1.0, 1.0, 2.0, 3.0]);
    // a query that is not a member excludes nothing
    assert_eq!(metrics::knn_radius(&[2.0], &real, 2).unwrap(), 1.0);
    assert_eq!(metrics::knn_radius(&[0.0], &real, 2).unwrap(), 3.0);
}

#[test]
fn coverage_and_irs_hand_values() {
    let real = line(&[0.0, 1.0, 3.0, 6.0], FeatureTag::Real);
    let gen = line(&[2.5, 5.0], FeatureTag::Generated);
    // covered: 3 (|2.5 - 3| <= 2) and 6 (|5 - 6| <= 3)
    assert_eq!(
        metrics::covered_mask(&real, &gen, 1).unwrap(),
        vec![false, false, true, true]
    );
    assert_eq!(metrics::coverage(&real, &gen, 1).unwrap(), 0.5);
    // nearest references are 3 and 6
    assert_eq!(metrics::irs(&gen, &real).unwrap(), 0.5);
    let test = line(&[2.0, 10.0], FeatureTag::Test);
    // test retrieval: both generated points land on 2
    assert_eq!(metrics::irs_adjusted(&gen, &real, &test).unwrap(), 1.0);
}

#[test]
fn coverage_ball_is_closed() {
    let real = line(&[0.0, 2.0], FeatureTag::Real);
    let gen = line(&[-2.0], FeatureTag::Generated);
    assert_eq!(metrics::coverage(&real, &gen, 1).unwrap(), 0.5);
}

#[test]
fn frechet_one_dimensional_closed_form() {
    // means 1 and 4; unbiased variances 1 and 4
    let a = line(&[0.0, 1.0, 2.0], FeatureTag::Real);
    let b = line(&[2.0, 4.0, 6.0], FeatureTag::Generated);
    let d = metrics::frechet_distance(&a, &b).unwrap();
    assert!((d - (9.0 + 1.0)).abs() < 1e-12, "{d}");
}

#[test]
fn brute_force_agrees_on_the_hand_example() {
    let real = line(&[0.0, 1.0, 3.0, 6.0], FeatureTag::Real);
    let gen = line(&[2.5, 5.0], FeatureTag::Generated);
    assert_eq!(
        metrics::brute::coverage(&real, &gen, 1).unwrap(),
        metrics::coverage(&real, &gen, 1).unwrap()
    );
    assert_eq!(
        metrics::brute::retrieved_ids(&gen, &real).unwrap(),
        metrics::retrieved_ids(&gen, &real).unwrap()
    );
}
