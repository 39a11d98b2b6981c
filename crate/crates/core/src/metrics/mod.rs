//! Diversity and fidelity metrics on feature vectors.
//!
//! - Coverage: fraction of real points whose k-NN ball (radius taken within
//!   the real set, self excluded) contains at least one generated point.
//! - IRS: fraction of a reference set retrieved as some generated point's
//!   nearest neighbour; the adjusted score divides the test-set IRS by the
//!   train-set IRS so memorizing the training data is not rewarded.
//! - Fréchet distance between Gaussians fitted to two sets.
//!
//! Every kNN-based quantity has an accelerated (kd-tree) path and an
//! exhaustive path in [`brute`]; both compare squared distances computed by
//! the same routine, so they agree exactly.

pub mod brute;
mod frechet;
mod kdtree;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use frechet::{frechet_distance, frechet_distance_detailed, FrechetResult};
pub use kdtree::KdTree;

use crate::datagen::Corpus;
use crate::error::{GraspError, Result};
use crate::linalg;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureTag {
    Real,
    Generated,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub vectors: Vec<Vec<f64>>,
    pub ids: Vec<usize>,
    /// Class label of each vector.
    pub classes: Vec<usize>,
    pub tag: FeatureTag,
}

impl FeatureSet {
    pub fn new(vectors: Vec<Vec<f64>>, tag: FeatureTag) -> Result<Self> {
        let n = vectors.len();
        Self::labelled(vectors, vec![0; n], tag)
    }

    pub fn labelled(vectors: Vec<Vec<f64>>, classes: Vec<usize>, tag: FeatureTag) -> Result<Self> {
        if classes.len() != vectors.len() {
            return Err(GraspError::ShapeMismatch {
                expected: vectors.len(),
                got: classes.len(),
                context: "feature labels",
            });
        }
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
                return Err(GraspError::ShapeMismatch {
                    expected: first.len(),
                    got: bad.len(),
                    context: "feature dimension",
                });
            }
        }
        let ids = (0..vectors.len()).collect();
        Ok(Self {
            vectors,
            ids,
            classes,
            tag,
        })
    }

    pub fn from_corpus(corpus: &Corpus, tag: FeatureTag) -> Self {
        Self {
            vectors: corpus.samples.iter().map(|s| s.x.clone()).collect(),
            ids: corpus.samples.iter().map(|s| s.sample_id).collect(),
            classes: corpus.samples.iter().map(|s| s.class_id).collect(),
            tag,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn views(&self) -> Vec<&[f64]> {
        self.vectors.iter().map(Vec::as_slice).collect()
    }

    /// Members of one class, ids preserved.
    pub fn restrict(&self, class: usize) -> Self {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.classes[i] == class)
            .collect();
        Self {
            vectors: keep.iter().map(|&i| self.vectors[i].clone()).collect(),
            ids: keep.iter().map(|&i| self.ids[i]).collect(),
            classes: keep.iter().map(|&i| self.classes[i]).collect(),
            tag: self.tag,
        }
    }

    /// Fixed Gaussian random projection to `dim` features.
    pub fn project(&self, dim: usize, seed: u64) -> Self {
        let mut rng = crate::seed::child_rng(seed, "feature-projection");
        let m = linalg::Matrix::gaussian(dim, self.dim(), 1.0 / (dim as f64).sqrt(), &mut rng);
        Self {
            vectors: self.vectors.iter().map(|v| m.matvec(v)).collect(),
            ids: self.ids.clone(),
            classes: self.classes.clone(),
            tag: self.tag,
        }
    }
}

fn same_dim(a: &FeatureSet, b: &FeatureSet) -> Result<()> {
    if !a.is_empty() && !b.is_empty() && a.dim() != b.dim() {
        return Err(GraspError::ShapeMismatch {
            expected: a.dim(),
            got: b.dim(),
            context: "feature sets",
        });
    }
    Ok(())
}

/// Distance from `x` to its `k`-th nearest neighbour in `phi`, with one copy
/// of `x` itself (the lowest-index exact match) excluded.
pub fn knn_radius(x: &[f64], phi: &FeatureSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(GraspError::invalid("k must be at least 1"));
    }
    if !phi.is_empty() && phi.dim() != x.len() {
        return Err(GraspError::ShapeMismatch {
            expected: phi.dim(),
            got: x.len(),
            context: "knn query",
        });
    }
    let own = phi.vectors.iter().position(|v| v.as_slice() == x);
    let available = phi.len() - usize::from(own.is_some());
    if available < k {
        return Err(GraspError::invalid(format!(
            "need {k} neighbours but only {available} points are available"
        )));
    }
    let tree = KdTree::new(phi.views());
    let sq = tree
        .kth_sq_dist(x, k, own)
        .expect("enough points checked above");
    Ok(sq.sqrt())
}

/// Squared k-NN radius of every member of `phi` within `phi`.
pub fn knn_radii_sq(phi: &FeatureSet, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(GraspError::invalid("k must be at least 1"));
    }
    if phi.len() < k + 1 {
        return Err(GraspError::invalid(format!(
            "radius needs at least {} points, got {}",
            k + 1,
            phi.len()
        )));
    }
    let tree = KdTree::new(phi.views());
    Ok((0..phi.len())
        .into_par_iter()
        .map(|i| {
            tree.kth_sq_dist(&phi.vectors[i], k, Some(i))
                .expect("enough points")
        })
        .collect())
}

/// Per real point: whether its k-NN ball contains a generated point.
pub fn covered_mask(real: &FeatureSet, generated: &FeatureSet, k: usize) -> Result<Vec<bool>> {
    same_dim(real, generated)?;
    if generated.is_empty() {
        return Err(GraspError::invalid(
            "coverage needs at least one generated point",
        ));
    }
    let radii = knn_radii_sq(real, k)?;
    let tree = KdTree::new(generated.views());
    Ok(real
        .vectors
        .par_iter()
        .zip(radii.par_iter())
        .map(|(x, &r)| tree.any_within(x, r))
        .collect())
}

pub fn coverage(real: &FeatureSet, generated: &FeatureSet, k: usize) -> Result<f64> {
    let mask = covered_mask(real, generated, k)?;
    Ok(mask.iter().filter(|&&c| c).count() as f64 / mask.len() as f64)
}

/// Reference ids retrieved as nearest neighbour of some generated point.
pub fn retrieved_ids(generated: &FeatureSet, reference: &FeatureSet) -> Result<BTreeSet<usize>> {
    same_dim(generated, reference)?;
    if generated.is_empty() || reference.is_empty() {
        return Err(GraspError::invalid("retrieval needs non-empty sets"));
    }
    let tree = KdTree::new(reference.views());
    let hits: Vec<usize> = generated
        .vectors
        .par_iter()
        .map(|g| tree.nearest(g).expect("non-empty reference").0)
        .collect();
    Ok(hits.into_iter().map(|i| reference.ids[i]).collect())
}

pub fn irs(generated: &FeatureSet, reference: &FeatureSet) -> Result<f64> {
    let hits = retrieved_ids(generated, reference)?;
    Ok(hits.len() as f64 / reference.len() as f64)
}

pub fn irs_adjusted(generated: &FeatureSet, train: &FeatureSet, test: &FeatureSet) -> Result<f64> {
    let train_score = irs(generated, train)?;
    if train_score == 0.0 {
        return Err(GraspError::UndefinedMetric(
            "adjusted IRS with zero train score".into(),
        ));
    }
    Ok(irs(generated, test)? / train_score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub coverage: f64,
    pub irs_train: f64,
    pub irs_test: f64,
    /// Absent when the train score is zero.
    pub irs_adjusted: Option<f64>,
    /// Absent when either side has fewer than two points.
    pub frechet: Option<f64>,
    pub n_real: usize,
    pub n_generated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum ClassOutcome {
    Evaluated(MetricValues),
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub coverage: f64,
    pub irs_train: f64,
    pub irs_test: f64,
    pub irs_adjusted: Option<f64>,
    pub frechet: Option<f64>,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub all_labels: MetricValues,
    pub per_class: BTreeMap<usize, ClassOutcome>,
    pub macro_average: Option<MacroAverage>,
}

impl MetricReport {
    pub fn evaluated(&self) -> impl Iterator<Item = (usize, &MetricValues)> {
        self.per_class.iter().filter_map(|(c, o)| match o {
            ClassOutcome::Evaluated(v) => Some((*c, v)),
            ClassOutcome::Skipped { .. } => None,
        })
    }

    /// Median coverage over the given classes that were evaluated.
    pub fn class_coverage(&self, class: usize) -> Option<f64> {
        match self.per_class.get(&class)? {
            ClassOutcome::Evaluated(v) => Some(v.coverage),
            ClassOutcome::Skipped { .. } => None,
        }
    }
}

fn metric_values(
    generated: &FeatureSet,
    train: &FeatureSet,
    test: &FeatureSet,
    k: usize,
) -> Result<MetricValues> {
    let coverage = coverage(test, generated, k)?;
    let irs_train = irs(generated, train)?;
    let irs_test = irs(generated, test)?;
    let frechet = if generated.len() >= 2 && test.len() >= 2 {
        Some(frechet_distance(generated, test)?)
    } else {
        None
    };
    Ok(MetricValues {
        coverage,
        irs_train,
        irs_test,
        irs_adjusted: (irs_train > 0.0).then(|| irs_test / irs_train),
        frechet,
        n_real: test.len(),
        n_generated: generated.len(),
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregate and per-class metrics. Coverage and the Fréchet distance
/// compare generated points with the real test set; IRS retrieves against
/// train and test separately. Classes are taken from the test set; a class
/// with at most `k` test members, or without generated or train members,
/// is reported as skipped and left out of the macro average.
pub fn evaluate(
    generated: &FeatureSet,
    real_train: &FeatureSet,
    real_test: &FeatureSet,
    k: usize,
) -> Result<MetricReport> {
    let all_labels = metric_values(generated, real_train, real_test, k)?;
    let classes: BTreeSet<usize> = real_test.classes.iter().copied().collect();
    let mut per_class = BTreeMap::new();
    for &c in &classes {
        let test_c = real_test.restrict(c);
        let gen_c = generated.restrict(c);
        let train_c = real_train.restrict(c);
        let outcome = if test_c.len() < k + 1 {
            ClassOutcome::Skipped {
                reason: format!("{} real members, need at least {}", test_c.len(), k + 1),
            }
        } else if gen_c.is_empty() {
            ClassOutcome::Skipped {
                reason: "no generated members".into(),
            }
        } else if train_c.is_empty() {
            ClassOutcome::Skipped {
                reason: "no train members".into(),
            }
        } else {
            ClassOutcome::Evaluated(metric_values(&gen_c, &train_c, &test_c, k)?)
        };
        per_class.insert(c, outcome);
    }
    let evaluated: Vec<&MetricValues> = per_class
        .values()
        .filter_map(|o| match o {
            ClassOutcome::Evaluated(v) => Some(v),
            ClassOutcome::Skipped { .. } => None,
        })
        .collect();
    let macro_average = (!evaluated.is_empty()).then(|| MacroAverage {
        coverage: mean_of(evaluated.iter().map(|v| v.coverage)).expect("non-empty"),
        irs_train: mean_of(evaluated.iter().map(|v| v.irs_train)).expect("non-empty"),
        irs_test: mean_of(evaluated.iter().map(|v| v.irs_test)).expect("non-empty"),
        irs_adjusted: mean_of(evaluated.iter().filter_map(|v| v.irs_adjusted)),
        frechet: mean_of(evaluated.iter().filter_map(|v| v.frechet)),
        classes: evaluated.len(),
    });
    Ok(MetricReport {
        k,
        all_labels,
        per_class,
        macro_average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> FeatureSet {
        FeatureSet::new(points.iter().map(|&p| vec![p]).collect(), FeatureTag::Real).unwrap()
    }

    #[test]
    fn radius_hand_values() {
        let phi = line(&[0.0, 1.0, 3.0]);
        assert_eq!(knn_radius(&[0.0], &phi, 1).unwrap(), 1.0);
        assert_eq!(knn_radius(&[0.0], &phi, 2).unwrap(), 3.0);
        assert!(knn_radius(&[0.0], &phi, 3).is_err());
        // a query outside the set keeps every point
        assert_eq!(knn_radius(&[0.5], &phi, 3).unwrap(), 2.5);
        assert!(knn_radius(&[0.0], &phi, 0).is_err());
    }

    #[test]
    fn coverage_edge_cases() {
        let real = line(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let same = FeatureSet {
            tag: FeatureTag::Generated,
            ..real.clone()
        };
        assert_eq!(coverage(&real, &same, 2).unwrap(), 1.0);
        let far = line(&[100.0]);
        assert_eq!(coverage(&real, &far, 2).unwrap(), 0.0);
        assert!(coverage(&line(&[0.0, 1.0]), &far, 2).is_err());
        assert!(coverage(&real, &line(&[]), 2).is_err());
    }

    #[test]
    fn irs_edge_cases() {
        let reference = line(&(0..10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(irs(&reference, &reference).unwrap(), 1.0);
        assert_eq!(irs(&line(&[3.2]), &reference).unwrap(), 0.1);
        assert!(irs(&line(&[]), &reference).is_err());
        let gen = line(&[0.1, 5.0]);
        assert_eq!(irs_adjusted(&gen, &reference, &reference).unwrap(), 1.0);
    }

    #[test]
    fn irs_adjusted_tiny_sets_by_hand() {
        // train {0, 1, 2}, test {0.4, 5, 6}, generated {0.1, 1.1, 5.4}
        // train hits: 0, 1, 2? 5.4 -> 2 => {0,1,2} = 1.0
        // test hits: 0.1 -> 0.4, 1.1 -> 0.4, 5.4 -> 5 => {0.4, 5} = 2/3
        let train = line(&[0.0, 1.0, 2.0]);
        let test = line(&[0.4, 5.0, 6.0]);
        let gen = line(&[0.1, 1.1, 5.4]);
        assert_eq!(irs(&gen, &train).unwrap(), 1.0);
        assert!((irs(&gen, &test).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((irs_adjusted(&gen, &train, &test).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn memorization_is_not_rewarded() {
        // generated == train blob around 0; test blob far away around 100
        let train = line(&[0.0, 0.5, 1.0, 1.5, 2.0]);
        let test = line(&[100.0, 100.5, 101.0, 101.5, 102.0]);
        let gen = train.clone();
        // every generated point retrieves test point 100.0
        assert_eq!(irs(&gen, &train).unwrap(), 1.0);
        assert_eq!(irs(&gen, &test).unwrap(), 0.2);
        assert!(irs_adjusted(&gen, &train, &test).unwrap() < 1.0);
    }

    #[test]
    fn evaluate_skips_small_classes_and_macro_averages() {
        let mut vectors = Vec::new();
        let mut classes = Vec::new();
        for c in 0..3usize {
            let n = if c == 2 { 3 } else { 8 };
            for i in 0..n {
                vectors.push(vec![c as f64 * 10.0 + i as f64 * 0.3, (i % 3) as f64 * 0.2]);
                classes.push(c);
            }
        }
        let real =
            FeatureSet::labelled(vectors.clone(), classes.clone(), FeatureTag::Test).unwrap();
        let gen_vectors: Vec<Vec<f64>> = vectors.iter().map(|v| vec![v[0] + 0.05, v[1]]).collect();
        let gen = FeatureSet::labelled(gen_vectors, classes, FeatureTag::Generated).unwrap();
        let report = evaluate(&gen, &real, &real, 3).unwrap();
        assert!(matches!(report.per_class[&2], ClassOutcome::Skipped { .. }));
        let m = report.macro_average.as_ref().unwrap();
        assert_eq!(m.classes, 2);
        let c0 = report.class_coverage(0).unwrap();
        let c1 = report.class_coverage(1).unwrap();
        assert!((m.coverage - (c0 + c1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_matches_aggregate() {
        let real = line(&[0.0, 0.3, 0.9, 1.4, 2.2, 3.0, 3.1]);
        let gen = line(&[0.1, 1.0, 2.9]);
        let report = evaluate(&gen, &real, &real, 2).unwrap();
        match &report.per_class[&0] {
            ClassOutcome::Evaluated(v) => assert_eq!(v, &report.all_labels),
            other => panic!("unexpected {other:?}"),
        }
    }
}
