use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adapter::{AdapterParams, AdapterStack};
use super::backbone::{Backbone, ModelState};
use crate::error::{GraspError, Result};
use crate::seed;
use crate::training::TrainBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Adapters only; the backbone must be frozen.
    Grasp,
    /// Backbone and adapters; the backbone must be unfrozen.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Probability of replacing the condition with the null (zero) vector.
    pub cond_dropout: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { cond_dropout: 0.1 }
    }
}

/// One regression target on the linear path `x_t = (1 - t) x0 + t x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTarget {
    pub x_t: Vec<f64>,
    pub t: f64,
    pub cond: Vec<f64>,
    pub expert: usize,
    /// `x1 - x0`
    pub velocity: Vec<f64>,
}

/// Draw `t ~ U[0, 1]`, `x0 ~ N(0, I)` and the dropout coin for every batch
/// slot from a stream keyed by `(seed, slot)`.
pub fn flow_targets(batch: &TrainBatch, seed: u64, opts: &FlowOptions) -> Vec<FlowTarget> {
    batch
        .samples
        .iter()
        .zip(&batch.conds)
        .enumerate()
        .map(|(slot, ((sample, expert), cond))| {
            let mut rng = seed::rng(seed::indexed_seed(seed, "flow-target", slot as u64));
            let t: f64 = rng.gen_range(0.0..=1.0);
            let x0: Vec<f64> = sample
                .x
                .iter()
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let drop = rng.gen::<f64>() < opts.cond_dropout;
            let x_t = x0
                .iter()
                .zip(&sample.x)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            let velocity = sample.x.iter().zip(&x0).map(|(b, a)| b - a).collect();
            FlowTarget {
                x_t,
                t,
                cond: if drop {
                    vec![0.0; cond.len()]
                } else {
                    cond.clone()
                },
                expert: *expert,
                velocity,
            }
        })
        .collect()
}

/// Mean squared velocity error of an arbitrary predictor.
pub fn flow_loss_value<F>(targets: &[FlowTarget], mut predict: F) -> Result<f64>
where
    F: FnMut(&FlowTarget) -> Result<Vec<f64>>,
{
    if targets.is_empty() {
        return Err(GraspError::invalid("empty batch"));
    }
    let mut total = 0.0;
    for target in targets {
        let pred = predict(target)?;
        let d = target.velocity.len() as f64;
        total += pred
            .iter()
            .zip(&target.velocity)
            .map(|(p, v)| (p - v) * (p - v))
            .sum::<f64>()
            / d;
    }
    Ok(total / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// All zeros unless the loss ran in [`LossMode::Full`].
    pub backbone: Backbone,
    pub adapters: AdapterStack,
}

/// Flow-matching loss and its gradients.
///
/// In [`LossMode::Grasp`] only the adapters each sample is routed through
/// receive gradient; backbone gradients are never accumulated.
pub fn flow_matching_loss(
    state: &ModelState,
    batch: &TrainBatch,
    seed: u64,
    mode: LossMode,
    opts: &FlowOptions,
) -> Result<(f64, Gradients)> {
    match (mode, state.frozen) {
        (LossMode::Grasp, false) => {
            return Err(GraspError::ContractViolation(
                "adapter-only training requires a frozen backbone".into(),
            ))
        }
        (LossMode::Full, true) => {
            return Err(GraspError::ContractViolation(
                "full fine-tuning requires an unfrozen backbone".into(),
            ))
        }
        _ => {}
    }
    let targets = flow_targets(batch, seed, opts);
    if targets.is_empty() {
        return Err(GraspError::invalid("empty batch"));
    }
    let mut grads = Gradients {
        backbone: state.backbone.zeros_like(),
        adapters: state.adapters.zeros_like(),
    };
    let scale = 1.0 / targets.len() as f64;
    let mut loss = 0.0;
    for target in &targets {
        let adapters = state.routed_adapters(Some(target.expert))?;
        let cache = state.forward_cached(&target.x_t, target.t, &target.cond, &adapters)?;
        let d = target.velocity.len() as f64;
        let residual: Vec<f64> = cache
            .output
            .iter()
            .zip(&target.velocity)
            .map(|(p, v)| p - v)
            .collect();
        loss += residual.iter().map(|r| r * r).sum::<f64>() / d * scale;
        let grad_out: Vec<f64> = residual.iter().map(|r| 2.0 * r / d * scale).collect();

        let range = state.adapters.expert_indices(target.expert);
        let mut slots: Vec<Option<&mut AdapterParams>> =
            grads.adapters.params[range].iter_mut().map(Some).collect();
        let backbone_grad = match mode {
            LossMode::Full => Some(&mut grads.backbone),
            LossMode::Grasp => None,
        };
        state.backward(&cache, &grad_out, &adapters, backbone_grad, &mut slots);
    }
    Ok((loss, grads))
}
