//! Exhaustive reference implementations of the kNN metrics.

use std::collections::BTreeSet;

use super::FeatureSet;
use crate::error::{GraspError, Result};
use crate::linalg::sq_dist;

fn kth_sq(x: &[f64], phi: &FeatureSet, k: usize, exclude: Option<usize>) -> Option<f64> {
    let mut d: Vec<f64> = phi
        .vectors
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, v)| sq_dist(v, x))
        .collect();
    if d.len() < k || k == 0 {
        return None;
    }
    d.sort_by(f64::total_cmp);
    Some(d[k - 1])
}

pub fn knn_radius(x: &[f64], phi: &FeatureSet, k: usize) -> Result<f64> {
    let own = phi.vectors.iter().position(|v| v.as_slice() == x);
    kth_sq(x, phi, k, own)
        .map(f64::sqrt)
        .ok_or_else(|| GraspError::invalid("not enough neighbours"))
}

pub fn coverage(real: &FeatureSet, generated: &FeatureSet, k: usize) -> Result<f64> {
    if generated.is_empty() || real.len() < k + 1 || k == 0 {
        return Err(GraspError::invalid("coverage preconditions not met"));
    }
    let covered = (0..real.len())
        .filter(|&i| {
            let r = kth_sq(&real.vectors[i], real, k, Some(i)).expect("checked");
            generated
                .vectors
                .iter()
                .any(|g| sq_dist(&real.vectors[i], g) <= r)
        })
        .count();
    Ok(covered as f64 / real.len() as f64)
}

pub fn retrieved_ids(generated: &FeatureSet, reference: &FeatureSet) -> Result<BTreeSet<usize>> {
    if generated.is_empty() || reference.is_empty() {
        return Err(GraspError::invalid("retrieval needs non-empty sets"));
    }
    Ok(generated
        .vectors
        .iter()
        .map(|g| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, r) in reference.vectors.iter().enumerate() {
                let d = sq_dist(g, r);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            reference.ids[best]
        })
        .collect())
}

pub fn irs(generated: &FeatureSet, reference: &FeatureSet) -> Result<f64> {
    Ok(retrieved_ids(generated, reference)?.len() as f64 / reference.len() as f64)
}
