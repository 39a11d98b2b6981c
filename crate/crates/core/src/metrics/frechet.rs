//! Fréchet distance between Gaussians fitted to two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::FeatureSet;
use crate::error::{GraspError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetResult {
    pub distance: f64,
    /// Diagonal jitter that had to be added to the covariances.
    pub regularization: f64,
}

fn moments(set: &FeatureSet) -> (DVector<f64>, DMatrix<f64>) {
    let d = set.dim();
    let n = set.len() as f64;
    let mut mean = DVector::zeros(d);
    for v in &set.vectors {
        mean += DVector::from_column_slice(v);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in &set.vectors {
        let c = DVector::from_column_slice(v) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    (mean, cov)
}

/// Eigenvalues at or below this are rounding noise of a singular matrix;
/// their square roots would otherwise leak ~1e-8 into the trace.
fn noise_floor(eigenvalues: &DVector<f64>) -> f64 {
    let largest = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    largest * eigenvalues.len() as f64 * f64::EPSILON * 16.0
}

fn psd_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, 1e-14, 10_000)?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let floor = noise_floor(&eig.eigenvalues);
    let roots = eig
        .eigenvalues
        .map(|v| if v > floor { v.sqrt() } else { 0.0 });
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    // tr sqrt(A B) = tr sqrt(sqrt(A) B sqrt(A)), the latter symmetric PSD
    let sa = psd_sqrt(a)?;
    let inner = &sa * b * &sa;
    let sym = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, 1e-14, 10_000)?;
    let floor = noise_floor(&eig.eigenvalues);
    let t: f64 = eig
        .eigenvalues
        .iter()
        .filter(|&&v| v > floor)
        .map(|v| v.sqrt())
        .sum();
    t.is_finite().then_some(t)
}

/// Squared Fréchet distance with the jitter used, if any. Retries with
/// growing diagonal jitter when an eigendecomposition fails.
pub fn frechet_distance_detailed(a: &FeatureSet, b: &FeatureSet) -> Result<FrechetResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(GraspError::invalid(
            "Fréchet distance needs two points per set",
        ));
    }
    if a.dim() != b.dim() {
        return Err(GraspError::ShapeMismatch {
            expected: a.dim(),
            got: b.dim(),
            context: "Fréchet feature dimension",
        });
    }
    let (ma, ca) = moments(a);
    let (mb, cb) = moments(b);
    let mean_term = (&ma - &mb).norm_squared();
    let d = a.dim();
    let mut jitter = 0.0;
    for _ in 0..8 {
        let eye = DMatrix::<f64>::identity(d, d) * jitter;
        let ra = &ca + &eye;
        let rb = &cb + &eye;
        if let Some(tr) = trace_sqrt_product(&ra, &rb) {
            let distance = (mean_term + ra.trace() + rb.trace() - 2.0 * tr).max(0.0);
            return Ok(FrechetResult {
                distance,
                regularization: jitter,
            });
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
    }
    Err(GraspError::Numerical(
        "Fréchet eigendecomposition did not converge".into(),
    ))
}

pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    frechet_distance_detailed(a, b).map(|r| r.distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::FeatureTag;

    #[test]
    fn identical_sets_have_zero_distance() {
        let v = vec![
            vec![0.0, 1.0],
            vec![2.0, 0.5],
            vec![1.0, 3.0],
            vec![-1.0, 0.0],
        ];
        let s = FeatureSet::new(v, FeatureTag::Real).unwrap();
        assert!(frechet_distance(&s, &s).unwrap() < 1e-9);
    }

    #[test]
    fn pure_translation_gives_squared_shift() {
        let v = vec![
            vec![0.0, 1.0],
            vec![2.0, 0.5],
            vec![1.0, 3.0],
            vec![-1.0, 0.0],
        ];
        let w: Vec<Vec<f64>> = v.iter().map(|p| vec![p[0] + 3.0, p[1] - 4.0]).collect();
        let a = FeatureSet::new(v, FeatureTag::Real).unwrap();
        let b = FeatureSet::new(w, FeatureTag::Generated).unwrap();
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 1e-8);
    }

    #[test]
    fn diagonal_case_closed_form() {
        // 1-d: (mu_a-mu_b)^2 + (sigma_a - sigma_b)^2
        let a = FeatureSet::new(vec![vec![-1.0], vec![1.0]], FeatureTag::Real).unwrap();
        let b = FeatureSet::new(vec![vec![-2.0], vec![2.0]], FeatureTag::Real).unwrap();
        // var_a = 2, var_b = 8 (unbiased)
        let expected = (2f64.sqrt() - 8f64.sqrt()).powi(2);
        assert!((frechet_distance(&a, &b).unwrap() - expected).abs() < 1e-12);
    }
}
