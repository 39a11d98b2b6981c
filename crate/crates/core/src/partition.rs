//! Static sample-to-expert partitions.
//!
//! A partition is a total map from sample ids to expert ids in `0..K`. The
//! quality of a partition is its within-cluster conflict: the mean of
//! `1 - cos(u_i, u_j)` over all unordered pairs that share a cluster, where
//! `u` is either the sample's embedding surrogate or a supplied gradient.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Corpus;
use crate::error::{GraspError, Result};
use crate::linalg;
use crate::seed;

/// Clusters above this size search their 2-means seed pair on a seeded subset.
const EXACT_INIT_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMethod {
    LabelTier,
    EmbeddingKMeans,
    Random,
    Single,
}

impl PartitionMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PartitionMethod::LabelTier => "label-tier",
            PartitionMethod::EmbeddingKMeans => "embedding-kmeans",
            PartitionMethod::Random => "random",
            PartitionMethod::Single => "single",
        }
    }
}

impl std::str::FromStr for PartitionMethod {
    type Err = GraspError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label-tier" | "label" => Ok(PartitionMethod::LabelTier),
            "embedding-kmeans" | "kmeans" | "embed" => Ok(PartitionMethod::EmbeddingKMeans),
            "random" => Ok(PartitionMethod::Random),
            "single" => Ok(PartitionMethod::Single),
            other => Err(GraspError::invalid(format!(
                "unknown partition method `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for PartitionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// `assignments[sample_id]` is the expert id.
    pub assignments: Vec<usize>,
    pub k: usize,
    pub method: PartitionMethod,
    /// Per-expert histogram of class ids.
    pub composition: Vec<BTreeMap<usize, usize>>,
}

impl Partition {
    /// Build a partition from raw assignments, validating totality and range.
    pub fn from_assignments(
        corpus: &Corpus,
        assignments: Vec<usize>,
        k: usize,
        method: PartitionMethod,
    ) -> Result<Self> {
        if k == 0 {
            return Err(GraspError::invalid("K must be at least 1"));
        }
        if assignments.len() != corpus.len() {
            return Err(GraspError::ShapeMismatch {
                expected: corpus.len(),
                got: assignments.len(),
                context: "partition assignments",
            });
        }
        if method == PartitionMethod::Single && k != 1 {
            return Err(GraspError::invalid("single partition requires K = 1"));
        }
        let mut composition = vec![BTreeMap::new(); k];
        for (sample, &expert) in corpus.samples.iter().zip(&assignments) {
            if expert >= k {
                return Err(GraspError::invalid(format!(
                    "sample {} assigned to expert {expert} >= K = {k}",
                    sample.sample_id
                )));
            }
            *composition[expert].entry(sample.class_id).or_insert(0) += 1;
        }
        Ok(Self {
            assignments,
            k,
            method,
            composition,
        })
    }

    pub fn expert_of(&self, sample_id: usize) -> Result<usize> {
        self.assignments
            .get(sample_id)
            .copied()
            .ok_or(GraspError::UnknownSample(sample_id))
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.composition.iter().map(|h| h.values().sum()).collect()
    }

    /// Member sample ids per expert, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (id, &e) in self.assignments.iter().enumerate() {
            out[e].push(id);
        }
        out
    }

    pub fn empty_experts(&self) -> Vec<usize> {
        self.cluster_sizes()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(e, _)| e)
            .collect()
    }

    /// Expert holding most samples of `class_id` (ties to the lowest id).
    /// Used to pick the adapter when sampling a class.
    pub fn expert_for_class(&self, class_id: usize) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for (e, hist) in self.composition.iter().enumerate() {
            let n = hist.get(&class_id).copied().unwrap_or(0);
            if n > 0 && best.map_or(true, |(_, bn)| n > bn) {
                best = Some((e, n));
            }
        }
        best.map(|(e, _)| e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictScore {
    /// Mean within-cluster conflict, 0 for clusters with fewer than 2 members.
    pub per_cluster: Vec<f64>,
    pub per_cluster_pairs: Vec<usize>,
    /// Pair-weighted mean of `per_cluster`.
    pub overall: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConflictFeatures {
    Embedding,
    SuppliedGradients,
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn pairwise_conflict(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return Err(GraspError::invalid("conflict of empty vectors"));
    }
    Ok((1.0 - linalg::cosine(u, v)?).clamp(0.0, 2.0))
}

pub fn partition_conflict(
    corpus: &Corpus,
    partition: &Partition,
    features: ConflictFeatures,
    gradients: Option<&BTreeMap<usize, Vec<f64>>>,
) -> Result<ConflictScore> {
    if partition.assignments.len() != corpus.len() {
        return Err(GraspError::ShapeMismatch {
            expected: corpus.len(),
            got: partition.assignments.len(),
            context: "partition vs corpus",
        });
    }
    let vectors: Vec<&[f64]> = match features {
        ConflictFeatures::Embedding => corpus
            .samples
            .iter()
            .map(|s| s.embedding.as_slice())
            .collect(),
        ConflictFeatures::SuppliedGradients => {
            let grads = gradients
                .ok_or_else(|| GraspError::invalid("gradient mode requires supplied gradients"))?;
            corpus
                .samples
                .iter()
                .map(|s| {
                    grads.get(&s.sample_id).map(Vec::as_slice).ok_or_else(|| {
                        GraspError::invalid(format!("missing gradient for sample {}", s.sample_id))
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    conflict_of_groups(&partition.members(), &vectors)
}

/// Exact within-group conflict; `groups` index into `vectors`.
///
/// Groups are scored in parallel; each group sums its pairs in ascending
/// `(i, j)` order, so the result does not depend on scheduling.
pub fn conflict_of_groups(groups: &[Vec<usize>], vectors: &[&[f64]]) -> Result<ConflictScore> {
    let units: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            linalg::normalized(v)
                .ok_or_else(|| GraspError::Degenerate("zero-norm vector: cosine undefined".into()))
        })
        .collect::<Result<_>>()?;
    if let Some(first) = units.first() {
        if let Some(bad) = units.iter().find(|u| u.len() != first.len()) {
            return Err(GraspError::ShapeMismatch {
                expected: first.len(),
                got: bad.len(),
                context: "conflict vectors",
            });
        }
    }
    let sums: Vec<(f64, usize)> = groups
        .par_iter()
        .map(|members| {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    sum += (1.0 - linalg::dot(&units[i], &units[j])).clamp(0.0, 2.0);
                    pairs += 1;
                }
            }
            (sum, pairs)
        })
        .collect();
    let total_sum: f64 = sums.iter().map(|(s, _)| s).sum();
    let pair_count: usize = sums.iter().map(|(_, p)| p).sum();
    Ok(ConflictScore {
        per_cluster: sums
            .iter()
            .map(|&(s, p)| if p == 0 { 0.0 } else { s / p as f64 })
            .collect(),
        per_cluster_pairs: sums.iter().map(|&(_, p)| p).collect(),
        overall: if pair_count == 0 {
            0.0
        } else {
            total_sum / pair_count as f64
        },
        pair_count,
    })
}

/// Healthy class to its own expert (`K - 1`) when `K = 4`; the remaining
/// classes, by descending count (ties to lower class id), each go to the
/// tier with the smallest running total (ties to the lower tier).
pub fn label_tier_partition(corpus: &Corpus, k: usize) -> Result<Partition> {
    if !(k == 3 || k == 4) {
        return Err(GraspError::invalid(format!(
            "label-tier partition supports K in {{3, 4}}, got {k}"
        )));
    }
    let healthy = if k == 4 {
        Some(corpus.healthy_class().ok_or_else(|| {
            GraspError::invalid("K = 4 label-tier partition needs a healthy class")
        })?)
    } else {
        None
    };
    let tiers = 3;
    let mut classes: Vec<(usize, usize)> = corpus
        .class_histogram()
        .into_iter()
        .filter(|(c, _)| Some(*c) != healthy)
        .collect();
    if classes.len() < tiers {
        return Err(GraspError::invalid(format!(
            "{} non-healthy classes cannot fill {tiers} tiers",
            classes.len()
        )));
    }
    classes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let tier_of = greedy_tiers(&classes.iter().map(|c| c.1).collect::<Vec<_>>(), tiers);
    let mut class_expert = BTreeMap::new();
    for ((class_id, _), tier) in classes.iter().zip(tier_of) {
        class_expert.insert(*class_id, tier);
    }
    if let Some(h) = healthy {
        class_expert.insert(h, k - 1);
    }
    let assignments = corpus
        .samples
        .iter()
        .map(|s| class_expert[&s.class_id])
        .collect();
    Partition::from_assignments(corpus, assignments, k, PartitionMethod::LabelTier)
}

/// Longest-processing-time assignment of `counts` (already sorted
/// descending) to `tiers` bins.
pub fn greedy_tiers(counts: &[usize], tiers: usize) -> Vec<usize> {
    let mut totals = vec![0usize; tiers];
    counts
        .iter()
        .map(|&c| {
            let tier = (0..tiers)
                .min_by_key(|&t| (totals[t], t))
                .expect("at least one tier");
            totals[tier] += c;
            tier
        })
        .collect()
}

pub fn random_partition(corpus: &Corpus, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 {
        return Err(GraspError::invalid("K must be at least 1"));
    }
    let mut rng = seed::child_rng(seed, "random-partition");
    let assignments = corpus.samples.iter().map(|_| rng.gen_range(0..k)).collect();
    Partition::from_assignments(corpus, assignments, k, PartitionMethod::Random)
}

pub fn single_partition(corpus: &Corpus) -> Result<Partition> {
    Partition::from_assignments(corpus, vec![0; corpus.len()], 1, PartitionMethod::Single)
}

/// Result of bisecting K-means: the partition and the within-cluster
/// objective after the initial state and after every split.
#[derive(Debug, Clone)]
pub struct Bisection {
    pub partition: Partition,
    pub objective_trace: Vec<f64>,
    /// Splits that fell back to peeling a single point off the target.
    pub peeled_splits: usize,
}

pub fn bisecting_kmeans_partition(
    corpus: &Corpus,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Partition> {
    bisecting_kmeans(corpus, k, seed, max_iters).map(|b| b.partition)
}

/// Cosine bisecting K-means on the embedding surrogates.
///
/// Repeatedly picks the cluster with the largest mean within-cluster
/// conflict (ties: larger, then lower first member) and splits it with
/// spherical 2-means seeded at its most conflicting pair. A split that
/// would raise the overall pair-weighted objective, or leave a side empty,
/// is replaced by peeling off the single member with the highest mean
/// conflict to the rest; that move never raises the objective, since its
/// cross-pair mean is at least the cluster mean, which is at least the
/// overall mean. Final expert ids are ordered by each cluster's lowest
/// sample id.
pub fn bisecting_kmeans(
    corpus: &Corpus,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Bisection> {
    if k == 0 {
        return Err(GraspError::invalid("K must be at least 1"));
    }
    if k > corpus.len() {
        return Err(GraspError::invalid(format!(
            "K = {k} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let units: Vec<Vec<f64>> = corpus
        .samples
        .iter()
        .map(|s| {
            linalg::normalized(&s.embedding).ok_or_else(|| {
                GraspError::Degenerate(format!("sample {} has a zero embedding", s.sample_id))
            })
        })
        .collect::<Result<_>>()?;
    let dim = units.first().map_or(0, Vec::len);

    let mut clusters: Vec<Cluster> = vec![Cluster::new((0..corpus.len()).collect(), &units, dim)];
    let mut trace = vec![objective(&clusters)];
    let mut peeled = 0;
    let mut rng = seed::child_rng(seed, "bisecting-kmeans");

    while clusters.len() < k {
        let target = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.members.len() >= 2)
            .max_by(|(_, a), (_, b)| {
                a.mean_conflict()
                    .total_cmp(&b.mean_conflict())
                    .then(a.members.len().cmp(&b.members.len()))
                    .then(b.members[0].cmp(&a.members[0]))
            })
            .map(|(i, _)| i)
            .expect("K <= N guarantees a splittable cluster");

        let before = objective(&clusters);
        let parent = clusters.swap_remove(target);
        let (left, right) = two_means(&parent.members, &units, max_iters, &mut rng);
        let mut accepted = false;
        if !left.is_empty() && !right.is_empty() {
            let a = Cluster::new(left, &units, dim);
            let b = Cluster::new(right, &units, dim);
            clusters.push(a);
            clusters.push(b);
            if objective(&clusters) <= before {
                accepted = true;
            } else {
                clusters.truncate(clusters.len() - 2);
            }
        }
        if !accepted {
            let (rest, point) = peel(&parent, &units);
            clusters.push(Cluster::new(rest, &units, dim));
            clusters.push(Cluster::new(vec![point], &units, dim));
            peeled += 1;
        }
        trace.push(objective(&clusters));
    }

    clusters.sort_by_key(|c| c.members[0]);
    let mut assignments = vec![0; corpus.len()];
    for (e, c) in clusters.iter().enumerate() {
        for &m in &c.members {
            assignments[m] = e;
        }
    }
    let partition =
        Partition::from_assignments(corpus, assignments, k, PartitionMethod::EmbeddingKMeans)?;
    Ok(Bisection {
        partition,
        objective_trace: trace,
        peeled_splits: peeled,
    })
}

/// Running sums of a cluster of unit vectors, enough to get its total
/// pairwise conflict in O(dim): `sum_{i<j} (1 - u_i.u_j) = P - (|s|^2 - sum |u_i|^2) / 2`.
struct Cluster {
    members: Vec<usize>,
    sum: Vec<f64>,
    sq_norms: f64,
}

impl Cluster {
    fn new(mut members: Vec<usize>, units: &[Vec<f64>], dim: usize) -> Self {
        members.sort_unstable();
        let mut sum = vec![0.0; dim];
        let mut sq_norms = 0.0;
        for &m in &members {
            linalg::axpy(1.0, &units[m], &mut sum);
            sq_norms += linalg::dot(&units[m], &units[m]);
        }
        Self {
            members,
            sum,
            sq_norms,
        }
    }

    fn pairs(&self) -> f64 {
        let n = self.members.len() as f64;
        n * (n - 1.0) / 2.0
    }

    fn conflict_sum(&self) -> f64 {
        let dots = (linalg::dot(&self.sum, &self.sum) - self.sq_norms) / 2.0;
        (self.pairs() - dots).max(0.0)
    }

    fn mean_conflict(&self) -> f64 {
        let p = self.pairs();
        if p == 0.0 {
            0.0
        } else {
            self.conflict_sum() / p
        }
    }
}

fn objective(clusters: &[Cluster]) -> f64 {
    let pairs: f64 = clusters.iter().map(Cluster::pairs).sum();
    if pairs == 0.0 {
        return 0.0;
    }
    clusters.iter().map(Cluster::conflict_sum).sum::<f64>() / pairs
}

fn most_conflicting_pair(candidates: &[usize], units: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (candidates[0], candidates[1]);
    let mut best_dot = f64::INFINITY;
    for (a, &i) in candidates.iter().enumerate() {
        for &j in &candidates[a + 1..] {
            let d = linalg::dot(&units[i], &units[j]);
            if d < best_dot {
                best_dot = d;
                best = (i, j);
            }
        }
    }
    best
}

fn two_means(
    members: &[usize],
    units: &[Vec<f64>],
    max_iters: usize,
    rng: &mut seed::Rng,
) -> (Vec<usize>, Vec<usize>) {
    let candidates: Vec<usize> = if members.len() > EXACT_INIT_LIMIT {
        let mut picked = rand::seq::index::sample(rng, members.len(), EXACT_INIT_LIMIT).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| members[i]).collect()
    } else {
        members.to_vec()
    };
    let (a, b) = most_conflicting_pair(&candidates, units);
    let mut centroids = [units[a].clone(), units[b].clone()];
    let mut side = vec![usize::MAX; members.len()];
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for (slot, &m) in side.iter_mut().zip(members) {
            let s = usize::from(
                linalg::dot(&units[m], &centroids[1]) > linalg::dot(&units[m], &centroids[0]),
            );
            if *slot != s {
                *slot = s;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mut mean = vec![0.0; centroid.len()];
            for (&s, &m) in side.iter().zip(members) {
                if s == c {
                    linalg::axpy(1.0, &units[m], &mut mean);
                }
            }
            if let Some(u) = linalg::normalized(&mean) {
                *centroid = u;
            }
        }
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (&s, &m) in side.iter().zip(members) {
        if s == 0 {
            left.push(m);
        } else {
            right.push(m);
        }
    }
    (left, right)
}

/// Split off the member with the largest mean conflict to the rest
/// (ties to the lowest sample id).
fn peel(cluster: &Cluster, units: &[Vec<f64>]) -> (Vec<usize>, usize) {
    let n = cluster.members.len() as f64;
    let mut best = cluster.members[0];
    let mut best_score = f64::NEG_INFINITY;
    for &m in &cluster.members {
        let self_dot = linalg::dot(&units[m], &units[m]);
        let others = linalg::dot(&units[m], &cluster.sum) - self_dot;
        let score = (n - 1.0) - others;
        if score > best_score {
            best_score = score;
            best = m;
        }
    }
    let rest = cluster
        .members
        .iter()
        .copied()
        .filter(|&m| m != best)
        .collect();
    (rest, best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{self, ClassSpec, EmbeddingOptions, SampleRecord};

    fn corpus_from_embeddings(embs: &[Vec<f64>], classes: &[usize]) -> Corpus {
        let samples = embs
            .iter()
            .zip(classes)
            .enumerate()
            .map(|(i, (e, &c))| SampleRecord {
                sample_id: i,
                x: vec![0.0],
                class_id: c,
                embedding: e.clone(),
                cluster_id: None,
            })
            .collect();
        let n_classes = classes.iter().max().map_or(0, |m| m + 1);
        Corpus {
            samples,
            classes: (0..n_classes)
                .map(|c| ClassSpec {
                    class_id: c,
                    name: None,
                    mean: vec![0.0],
                    scale: 1.0,
                    count: classes.iter().filter(|&&x| x == c).count(),
                    is_healthy: c == 0,
                })
                .collect(),
            dimension: 1,
            embedding: EmbeddingOptions::default(),
            seed: 0,
        }
    }

    #[test]
    fn pairwise_conflict_hand_values() {
        assert_eq!(pairwise_conflict(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(pairwise_conflict(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(pairwise_conflict(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            pairwise_conflict(&[0.0, 0.0], &[1.0, 0.0]),
            Err(GraspError::Degenerate(_))
        ));
    }

    #[test]
    fn identical_embeddings_have_zero_conflict() {
        let c = corpus_from_embeddings(&vec![vec![0.3, 0.4]; 6], &[0, 0, 1, 1, 2, 2]);
        let p = random_partition(&c, 2, 3).unwrap();
        let s = partition_conflict(&c, &p, ConflictFeatures::Embedding, None).unwrap();
        assert_eq!(s.overall, 0.0);
    }

    #[test]
    fn antipodal_construction() {
        let embs = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![-1.0, 0.0],
        ];
        let c = corpus_from_embeddings(&embs, &[0, 0, 1, 1]);
        let aligned =
            Partition::from_assignments(&c, vec![0, 0, 1, 1], 2, PartitionMethod::Random).unwrap();
        let crossed =
            Partition::from_assignments(&c, vec![0, 1, 0, 1], 2, PartitionMethod::Random).unwrap();
        let sa = partition_conflict(&c, &aligned, ConflictFeatures::Embedding, None).unwrap();
        let sc = partition_conflict(&c, &crossed, ConflictFeatures::Embedding, None).unwrap();
        assert_eq!(sa.overall, 0.0);
        assert_eq!(sc.overall, 2.0);
        assert_eq!(sc.pair_count, 2);
    }

    #[test]
    fn singleton_clusters_contribute_nothing() {
        let embs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let c = corpus_from_embeddings(&embs, &[0, 1, 2]);
        let p = Partition::from_assignments(&c, vec![0, 1, 2], 4, PartitionMethod::Random).unwrap();
        let s = partition_conflict(&c, &p, ConflictFeatures::Embedding, None).unwrap();
        assert_eq!(s.per_cluster, vec![0.0; 4]);
        assert_eq!(s.pair_count, 0);
        assert_eq!(s.overall, 0.0);
        assert_eq!(p.empty_experts(), vec![3]);
    }

    #[test]
    fn supplied_gradients_must_cover_every_sample() {
        let embs = vec![vec![1.0, 0.0]; 3];
        let c = corpus_from_embeddings(&embs, &[0, 0, 0]);
        let p = single_partition(&c).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert(0, vec![1.0]);
        grads.insert(1, vec![1.0]);
        assert!(
            partition_conflict(&c, &p, ConflictFeatures::SuppliedGradients, Some(&grads)).is_err()
        );
        grads.insert(2, vec![-1.0]);
        let s =
            partition_conflict(&c, &p, ConflictFeatures::SuppliedGradients, Some(&grads)).unwrap();
        // pairs: (0,1)=0, (0,2)=2, (1,2)=2
        assert!((s.overall - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn greedy_tiers_balance_three_classes() {
        assert_eq!(greedy_tiers(&[5, 3, 1], 3), vec![0, 1, 2]);
        assert_eq!(greedy_tiers(&[5, 3, 1, 1], 3), vec![0, 1, 2, 2]);
    }

    #[test]
    fn label_tier_forced_bijection_and_errors() {
        let embs = vec![vec![1.0]; 10];
        let classes = [0, 0, 0, 0, 1, 1, 1, 2, 2, 3];
        let c = corpus_from_embeddings(&embs, &classes);
        let p = label_tier_partition(&c, 4).unwrap();
        assert_eq!(p.assignments, vec![3, 3, 3, 3, 0, 0, 0, 1, 1, 2]);
        assert!(label_tier_partition(&c, 5).is_err());

        let mut no_healthy = c.clone();
        for cl in &mut no_healthy.classes {
            cl.is_healthy = false;
        }
        assert!(label_tier_partition(&no_healthy, 4).is_err());
        assert!(label_tier_partition(&no_healthy, 3).is_ok());

        let few = corpus_from_embeddings(&vec![vec![1.0]; 3], &[0, 1, 2]);
        assert!(label_tier_partition(&few, 4).is_err());
    }

    #[test]
    fn random_partition_is_seeded() {
        let c = datagen::generate_corpus(&datagen::chest_xray_spec(200, 2).unwrap(), 2, 0).unwrap();
        let a = random_partition(&c, 4, 1).unwrap();
        assert_eq!(a, random_partition(&c, 4, 1).unwrap());
        assert_ne!(
            a.assignments,
            random_partition(&c, 4, 2).unwrap().assignments
        );
        let one = random_partition(&c, 1, 9).unwrap();
        assert!(one.assignments.iter().all(|&e| e == 0));
        assert!(random_partition(&c, 0, 9).is_err());
    }

    #[test]
    fn bisecting_edge_cases() {
        let embs: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let a = i as f64 * 0.7;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let c = corpus_from_embeddings(&embs, &[0, 1, 2, 3]);
        let one = bisecting_kmeans_partition(&c, 1, 0, 20).unwrap();
        assert!(one.assignments.iter().all(|&e| e == 0));
        let four = bisecting_kmeans_partition(&c, 4, 0, 20).unwrap();
        let mut sorted = four.assignments.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert!(bisecting_kmeans_partition(&c, 5, 0, 20).is_err());
    }

    #[test]
    fn expert_for_class_picks_majority() {
        let embs = vec![vec![1.0]; 5];
        let c = corpus_from_embeddings(&embs, &[0, 0, 0, 1, 1]);
        let p = Partition::from_assignments(&c, vec![1, 1, 0, 0, 0], 2, PartitionMethod::Random)
            .unwrap();
        assert_eq!(p.expert_for_class(0), Some(1));
        assert_eq!(p.expert_for_class(1), Some(0));
        assert_eq!(p.expert_for_class(7), None);
    }
}
