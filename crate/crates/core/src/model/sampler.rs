use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::backbone::ModelState;
use crate::error::{GraspError, Result};
use crate::seed;

/// How the velocity is formed at each Euler step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GuidanceMode {
    Conditional,
    Unconditional,
    /// `(1 - s) v_uncond + s v_cond`
    Guided(f64),
}

/// Euler integration from noise at `t = 0` to data at `t = 1`, returning
/// every intermediate state (`steps + 1` points).
pub fn cfg_trajectory(
    state: &ModelState,
    cond: &[f64],
    expert: Option<usize>,
    mode: GuidanceMode,
    steps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(GraspError::invalid("sampling needs at least one step"));
    }
    if let GuidanceMode::Guided(s) = mode {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(GraspError::invalid(format!("invalid guidance scale {s}")));
        }
    }
    let config = state.config();
    if cond.len() != config.cond_dim {
        return Err(GraspError::ShapeMismatch {
            expected: config.cond_dim,
            got: cond.len(),
            context: "condition",
        });
    }
    let null = vec![0.0; config.cond_dim];
    let mut rng = seed::child_rng(seed, "cfg-sample");
    let mut x: Vec<f64> = (0..config.data_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let dt = 1.0 / steps as f64;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(x.clone());
    for i in 0..steps {
        let t = i as f64 * dt;
        let v = match mode {
            GuidanceMode::Conditional => state.forward(&x, t, cond, expert)?,
            GuidanceMode::Unconditional => state.forward(&x, t, &null, expert)?,
            GuidanceMode::Guided(s) => {
                let vc = state.forward(&x, t, cond, expert)?;
                let vu = state.forward(&x, t, &null, expert)?;
                vu.iter()
                    .zip(&vc)
                    .map(|(u, c)| (1.0 - s) * u + s * c)
                    .collect()
            }
        };
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += dt * vi;
        }
        path.push(x.clone());
    }
    Ok(path)
}

/// One guided sample: `v = v_uncond + s (v_cond - v_uncond)` at each step.
pub fn cfg_sample(
    state: &ModelState,
    cond: &[f64],
    expert: Option<usize>,
    guidance: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut path = cfg_trajectory(
        state,
        cond,
        expert,
        GuidanceMode::Guided(guidance),
        steps,
        seed,
    )?;
    Ok(path.pop().expect("non-empty trajectory"))
}

/// `n` independent guided samples; sample `i` uses seed `indexed_seed(seed, "sample", i)`.
pub fn sample_many(
    state: &ModelState,
    cond: &[f64],
    expert: Option<usize>,
    guidance: f64,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            cfg_sample(
                state,
                cond,
                expert,
                guidance,
                steps,
                seed::indexed_seed(seed, "sample", i as u64),
            )
        })
        .collect()
}
