//! Adapter fine-tuning: batch assembly with optional round-robin expert
//! resampling, plain SGD (or Adam) updates, expert utilization accounting
//! and gradient-conflict probes.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{Corpus, SampleRecord};
use crate::error::{GraspError, Result};
use crate::linalg::{self, Matrix};
use crate::model::{
    flow_matching_loss, AdapterParams, AdapterStack, Backbone, FlowOptions, LossMode, ModelState,
    Nonlinearity,
};
use crate::partition::{conflict_of_groups, ConflictScore, Partition};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    /// Each sample with the expert it is routed to.
    pub samples: Vec<(SampleRecord, usize)>,
    /// True for slots filled by the round-robin resampler.
    pub resampled: Vec<bool>,
    /// Conditioning vector (label embedding) per slot.
    pub conds: Vec<Vec<f64>>,
    pub batch_size: usize,
}

impl TrainBatch {
    pub fn experts(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(|(_, e)| *e)
    }

    pub fn resampled_count(&self) -> usize {
        self.resampled.iter().filter(|&&r| r).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub resample: bool,
    /// Slots per batch reserved for round-robin resampling.
    pub quota: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            resample: false,
            quota: 3,
        }
    }
}

/// Routed-sample counts per expert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilizationLedger {
    pub per_expert_counts: Vec<u64>,
    pub total: u64,
}

impl UtilizationLedger {
    pub fn new(k: usize) -> Self {
        Self {
            per_expert_counts: vec![0; k],
            total: 0,
        }
    }

    pub fn record(&mut self, batch: &TrainBatch) {
        for e in batch.experts() {
            self.per_expert_counts[e] += 1;
            self.total += 1;
        }
    }

    pub fn percentages(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.per_expert_counts.len()];
        }
        self.per_expert_counts
            .iter()
            .map(|&c| 100.0 * c as f64 / self.total as f64)
            .collect()
    }

    /// Max minus min utilization percentage over all experts.
    pub fn gap(&self) -> f64 {
        let p = self.percentages();
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = p.iter().copied().fold(f64::INFINITY, f64::min);
        if p.is_empty() {
            0.0
        } else {
            max - min
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictTrace {
    pub step: usize,
    pub per_cluster_conflict: Vec<f64>,
    pub within_cluster_conflict: f64,
    pub cross_cluster_conflict: f64,
}

/// Pre-indexed batch source for one (corpus, partition) pair.
pub struct BatchSampler<'a> {
    corpus: &'a Corpus,
    partition: &'a Partition,
    members: Vec<Vec<usize>>,
    conds: BTreeMap<usize, Vec<f64>>,
}

impl<'a> BatchSampler<'a> {
    pub fn new(corpus: &'a Corpus, partition: &'a Partition) -> Result<Self> {
        if partition.assignments.len() != corpus.len() {
            return Err(GraspError::ShapeMismatch {
                expected: corpus.len(),
                got: partition.assignments.len(),
                context: "partition vs corpus",
            });
        }
        if corpus.is_empty() {
            return Err(GraspError::invalid(
                "cannot draw batches from an empty corpus",
            ));
        }
        let mut conds = BTreeMap::new();
        for class in corpus.class_histogram().keys() {
            conds.insert(*class, corpus.condition(*class)?);
        }
        Ok(Self {
            corpus,
            partition,
            members: partition.members(),
            conds,
        })
    }

    fn push(&self, batch: &mut TrainBatch, index: usize, resampled: bool) {
        let sample = &self.corpus.samples[index];
        batch
            .samples
            .push((sample.clone(), self.partition.assignments[index]));
        batch.resampled.push(resampled);
        batch.conds.push(self.conds[&sample.class_id].clone());
    }

    /// Draw one batch. Warnings name experts skipped for having no samples.
    pub fn assemble(
        &self,
        config: &BatchConfig,
        ledger: &UtilizationLedger,
        rng: &mut seed::Rng,
    ) -> Result<(TrainBatch, Vec<String>)> {
        let b = config.batch_size;
        let k = self.partition.k;
        if b == 0 {
            return Err(GraspError::invalid("batch size must be positive"));
        }
        let mut warnings = Vec::new();
        let quota = if config.resample { config.quota } else { 0 };
        if config.resample {
            if b < k {
                return Err(GraspError::invalid(format!(
                    "resampling needs batch size >= K ({b} < {k})"
                )));
            }
            if quota > b {
                return Err(GraspError::invalid(format!(
                    "quota {quota} exceeds batch size {b}"
                )));
            }
            let non_empty = self.members.iter().filter(|m| !m.is_empty()).count();
            if quota < b && quota + 1 < non_empty {
                return Err(GraspError::invalid(format!(
                    "quota {quota} cannot guarantee {non_empty} experts per batch"
                )));
            }
        }
        let mut batch = TrainBatch {
            samples: Vec::with_capacity(b),
            resampled: Vec::with_capacity(b),
            conds: Vec::with_capacity(b),
            batch_size: b,
        };
        for _ in 0..b - quota {
            let i = rng.gen_range(0..self.corpus.len());
            self.push(&mut batch, i, false);
        }
        if quota > 0 {
            let mut present = vec![false; k];
            for e in batch.experts() {
                present[e] = true;
            }
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by_key(|&e| (present[e], ledger.per_expert_counts[e], e));
            for &e in &order {
                if self.members[e].is_empty() {
                    warnings.push(format!("expert {e} has an empty cluster; skipped"));
                }
            }
            order.retain(|&e| !self.members[e].is_empty());
            for slot in 0..quota {
                let e = order[slot % order.len()];
                let members = &self.members[e];
                let i = members[rng.gen_range(0..members.len())];
                self.push(&mut batch, i, true);
            }
        }
        Ok((batch, warnings))
    }
}

/// One-shot wrapper around [`BatchSampler::assemble`].
pub fn assemble_batch(
    corpus: &Corpus,
    partition: &Partition,
    config: &BatchConfig,
    ledger: &UtilizationLedger,
    rng: &mut seed::Rng,
) -> Result<(TrainBatch, Vec<String>)> {
    BatchSampler::new(corpus, partition)?.assemble(config, ledger, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd
    }
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning-rate multiplier over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero at the last step.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                if steps <= 1 {
                    1.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * step as f64 / (steps - 1) as f64).cos())
                }
            }
        }
    }
}

/// Update rule state over a fixed list of tensors.
struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, shapes: &[usize]) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (
                shapes.iter().map(|&n| vec![0.0; n]).collect(),
                shapes.iter().map(|&n| vec![0.0; n]).collect(),
            ),
        };
        Self {
            kind,
            lr,
            step: 0,
            m,
            v,
        }
    }

    fn apply(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr_factor: f64) {
        self.step += 1;
        let lr = self.lr * lr_factor;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    linalg::axpy(-lr, g, p);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (t, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    for (i, (pi, &gi)) in p.iter_mut().zip(g).enumerate() {
                        let m = &mut self.m[t][i];
                        let v = &mut self.v[t][i];
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                        *pi -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Settings of the shared probe adapter used to measure gradient conflict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub probe_size: usize,
    pub width: usize,
    /// `(t, x0)` draws averaged per sample; draw `j` is shared by all samples.
    pub draws: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            probe_size: 256,
            width: 16,
            draws: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: BatchConfig,
    pub lr: f64,
    #[serde(default)]
    pub schedule: LrSchedule,
    pub optimizer: Optimizer,
    pub flow: FlowOptions,
    /// Record a conflict trace every this many steps; 0 disables tracing.
    pub trace_interval: usize,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: BatchConfig::default(),
            lr: 0.05,
            schedule: LrSchedule::Constant,
            optimizer: Optimizer::Sgd,
            flow: FlowOptions::default(),
            trace_interval: 0,
            probe: ProbeConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub ledger: UtilizationLedger,
    pub traces: Vec<ConflictTrace>,
    pub losses: Vec<f64>,
    /// Distinct warnings raised by the batch sampler.
    pub warnings: Vec<String>,
    /// Every batch with resampling on covered each non-empty expert.
    pub coverage_guarantee_held: bool,
}

/// Adapter-only fine-tuning of a frozen model.
pub fn train(
    state: ModelState,
    corpus: &Corpus,
    partition: &Partition,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if !state.frozen {
        return Err(GraspError::ContractViolation(
            "adapter training requires a frozen backbone".into(),
        ));
    }
    if state.adapters.k != partition.k {
        return Err(GraspError::invalid(format!(
            "adapter stack has K = {} but partition has K = {}",
            state.adapters.k, partition.k
        )));
    }
    let mut state = state;
    let sampler = BatchSampler::new(corpus, partition)?;
    let mut ledger = UtilizationLedger::new(partition.k);
    let mut traces = Vec::new();
    let mut losses = Vec::with_capacity(config.steps);
    let mut warnings: Vec<String> = Vec::new();
    let mut guarantee = true;
    let non_empty: Vec<usize> = (0..partition.k)
        .filter(|&e| partition.cluster_sizes()[e] > 0)
        .collect();
    let shapes: Vec<usize> = state.adapters.tensors().iter().map(|t| t.len()).collect();
    let mut opt = OptimizerState::new(config.optimizer, config.lr, &shapes);
    let mut rng = seed::child_rng(config.seed, "batches");
    let probe_ids = if config.trace_interval > 0 {
        probe_subset(corpus.len(), config.probe.probe_size, config.seed)
    } else {
        Vec::new()
    };

    for step in 0..config.steps {
        if config.trace_interval > 0 && step % config.trace_interval == 0 {
            traces.push(conflict_trace(
                &state, corpus, partition, &probe_ids, config, step,
            )?);
        }
        let (batch, warn) = sampler.assemble(&config.batch, &ledger, &mut rng)?;
        for w in warn {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        if config.batch.resample && config.batch.batch_size >= partition.k {
            let mut seen = vec![false; partition.k];
            for e in batch.experts() {
                seen[e] = true;
            }
            guarantee &= non_empty.iter().all(|&e| seen[e]);
        }
        ledger.record(&batch);
        let (loss, grads) = flow_matching_loss(
            &state,
            &batch,
            seed::indexed_seed(config.seed, "flow", step as u64),
            LossMode::Grasp,
            &config.flow,
        )?;
        losses.push(loss);
        opt.apply(
            state.adapters.tensors_mut(),
            grads.adapters.tensors(),
            config.schedule.factor(step, config.steps),
        );
    }
    if config.trace_interval > 0 && config.steps > 0 && config.steps % config.trace_interval == 0 {
        traces.push(conflict_trace(
            &state,
            corpus,
            partition,
            &probe_ids,
            config,
            config.steps,
        )?);
    }
    Ok(TrainOutcome {
        state,
        ledger,
        traces,
        losses,
        warnings,
        coverage_guarantee_held: guarantee,
    })
}

/// Settings for training the backbone itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub flow: FlowOptions,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 32,
            lr: 3e-3,
            optimizer: Optimizer::adam(),
            flow: FlowOptions::default(),
            seed: 0,
        }
    }
}

/// Fit the backbone on a corpus with all parameters trainable and no
/// adapters, returning the trained backbone and per-step losses.
pub fn pretrain_backbone(
    backbone: Backbone,
    corpus: &Corpus,
    config: &PretrainConfig,
) -> Result<(Backbone, Vec<f64>)> {
    let hidden = backbone.config.hidden;
    let stack = AdapterStack::new(
        1,
        Default::default(),
        1,
        hidden,
        Nonlinearity::Gelu,
        crate::model::AdapterInit {
            w1_std: 0.0,
            seed: 0,
        },
    )?;
    let mut state = ModelState::new(backbone, stack)?;
    state.frozen = false;
    let single = crate::partition::single_partition(corpus)?;
    let sampler = BatchSampler::new(corpus, &single)?;
    let ledger = UtilizationLedger::new(1);
    let batch_cfg = BatchConfig {
        batch_size: config.batch_size,
        resample: false,
        quota: 0,
    };
    let shapes: Vec<usize> = state.backbone.params().iter().map(|t| t.len()).collect();
    let mut opt = OptimizerState::new(config.optimizer, config.lr, &shapes);
    let mut rng = seed::child_rng(config.seed, "pretrain-batches");
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (batch, _) = sampler.assemble(&batch_cfg, &ledger, &mut rng)?;
        let (loss, grads) = flow_matching_loss(
            &state,
            &batch,
            seed::indexed_seed(config.seed, "pretrain-flow", step as u64),
            LossMode::Full,
            &config.flow,
        )?;
        losses.push(loss);
        opt.apply(state.backbone.params_mut(), grads.backbone.params(), 1.0);
    }
    Ok((state.backbone, losses))
}

/// Sorted, seeded subset of `0..n` of size `min(size, n)`.
pub fn probe_subset(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut rng = seed::child_rng(seed, "probe-subset");
    let mut ids = rand::seq::index::sample(&mut rng, n, size).into_vec();
    ids.sort_unstable();
    ids
}

/// The shared probe adapter: on the last block, `W1 ~ N(0, 1/d)`, `W2 = 0`,
/// so it leaves every output unchanged while exposing a common gradient
/// space for all samples.
pub fn probe_adapter(state: &ModelState, width: usize, seed: u64) -> AdapterParams {
    let c = state.config();
    let mut rng = seed::child_rng(seed, "probe-adapter");
    let mut p = AdapterParams::zeros(c.hidden, width, usize::MAX, c.blocks - 1);
    p.w1 = Matrix::gaussian(width, c.hidden, 1.0 / (c.hidden as f64).sqrt(), &mut rng);
    p
}

/// Flattened per-sample loss gradient w.r.t. the probe adapter, averaged
/// over `draws` shared `(t, x0)` draws. `routing` selects the expert
/// adapters each sample passes through (none when `None`).
pub fn probe_gradients(
    state: &ModelState,
    corpus: &Corpus,
    ids: &[usize],
    routing: Option<&Partition>,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    use rand_distr::{Distribution, StandardNormal};

    let adapter = probe_adapter(state, probe.width, seed);
    let dim = corpus.dimension;
    let draws: Vec<(f64, Vec<f64>)> = (0..probe.draws.max(1))
        .map(|j| {
            let mut rng = seed::rng(seed::indexed_seed(seed, "probe-draw", j as u64));
            let t: f64 = rng.gen_range(0.0..=1.0);
            let x0: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            (t, x0)
        })
        .collect();
    let mut conds = BTreeMap::new();
    for &i in ids {
        let c = corpus.samples[i].class_id;
        if let std::collections::btree_map::Entry::Vacant(e) = conds.entry(c) {
            e.insert(corpus.condition(c)?);
        }
    }
    ids.par_iter()
        .map(|&i| {
            let sample = &corpus.samples[i];
            let expert = match routing {
                Some(p) => Some(p.expert_of(i)?),
                None => None,
            };
            let mut adapters = state.routed_adapters(expert)?;
            adapters.push(&adapter);
            let probe_slot = adapters.len() - 1;
            let mut grad =
                AdapterParams::zeros(adapter.hidden(), adapter.width(), 0, adapter.block);
            for (t, x0) in &draws {
                let x_t: Vec<f64> = x0
                    .iter()
                    .zip(&sample.x)
                    .map(|(a, b)| (1.0 - t) * a + t * b)
                    .collect();
                let cache = state.forward_cached(&x_t, *t, &conds[&sample.class_id], &adapters)?;
                let d = dim as f64;
                let g_out: Vec<f64> = cache
                    .output
                    .iter()
                    .zip(sample.x.iter().zip(x0))
                    .map(|(p, (x1, x0))| 2.0 * (p - (x1 - x0)) / d)
                    .collect();
                let mut slots: Vec<Option<&mut AdapterParams>> =
                    adapters.iter().map(|_| None).collect();
                slots[probe_slot] = Some(&mut grad);
                state.backward(&cache, &g_out, &adapters, None, &mut slots);
            }
            let mut flat = grad.w1.data;
            flat.extend_from_slice(&grad.w2.data);
            Ok(flat)
        })
        .collect()
}

fn groups_over(ids: &[usize], partition: &Partition) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); partition.k];
    for (pos, &i) in ids.iter().enumerate() {
        groups[partition.assignments[i]].push(pos);
    }
    groups
}

fn check_probe(grads: &[Vec<f64>]) -> Result<()> {
    if grads.iter().all(|g| g.iter().all(|&v| v == 0.0)) {
        return Err(GraspError::Degenerate(
            "all probe gradients are zero".into(),
        ));
    }
    Ok(())
}

fn conflict_trace(
    state: &ModelState,
    corpus: &Corpus,
    partition: &Partition,
    ids: &[usize],
    config: &TrainConfig,
    step: usize,
) -> Result<ConflictTrace> {
    let grads = probe_gradients(
        state,
        corpus,
        ids,
        Some(partition),
        &config.probe,
        seed::child_seed(config.seed, "probe"),
    )?;
    check_probe(&grads)?;
    let views: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    let within = conflict_of_groups(&groups_over(ids, partition), &views)?;
    let all = conflict_of_groups(&[(0..ids.len()).collect()], &views)?;
    let cross_pairs = all.pair_count - within.pair_count;
    let cross = if cross_pairs == 0 {
        0.0
    } else {
        ((all.overall * all.pair_count as f64 - within.overall * within.pair_count as f64)
            / cross_pairs as f64)
            .clamp(0.0, 2.0)
    };
    Ok(ConflictTrace {
        step,
        per_cluster_conflict: within.per_cluster,
        within_cluster_conflict: within.overall,
        cross_cluster_conflict: cross,
    })
}

/// Within-cluster gradient conflict of each partition, measured on one
/// shared probe subset with gradients of the shared probe adapter.
pub fn measure_conflict_reduction(
    state: &ModelState,
    corpus: &Corpus,
    partitions: &[Partition],
    probe: &ProbeConfig,
    seed: u64,
) -> Result<Vec<ConflictScore>> {
    for p in partitions {
        if p.assignments.len() != corpus.len() {
            return Err(GraspError::ShapeMismatch {
                expected: corpus.len(),
                got: p.assignments.len(),
                context: "partition vs corpus",
            });
        }
    }
    let ids = probe_subset(corpus.len(), probe.probe_size, seed);
    if ids.len() < 2 {
        return Err(GraspError::invalid("probe needs at least two samples"));
    }
    let grads = probe_gradients(
        state,
        corpus,
        &ids,
        None,
        probe,
        seed::child_seed(seed, "probe"),
    )?;
    check_probe(&grads)?;
    let views: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    partitions
        .iter()
        .map(|p| conflict_of_groups(&groups_over(&ids, p), &views))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen;
    use crate::partition;

    fn corpus() -> Corpus {
        datagen::generate_corpus(&datagen::eight_class_spec(400, 2).unwrap(), 2, 3).unwrap()
    }

    #[test]
    fn forced_one_per_expert() {
        let c = corpus();
        let p = partition::label_tier_partition(&c, 4).unwrap();
        let cfg = BatchConfig {
            batch_size: 4,
            resample: true,
            quota: 3,
        };
        let sampler = BatchSampler::new(&c, &p).unwrap();
        let ledger = UtilizationLedger::new(4);
        let mut rng = seed::rng(1);
        for _ in 0..200 {
            let (b, _) = sampler.assemble(&cfg, &ledger, &mut rng).unwrap();
            let mut experts: Vec<usize> = b.experts().collect();
            experts.sort_unstable();
            assert_eq!(experts, vec![0, 1, 2, 3]);
            assert_eq!(b.resampled_count(), 3);
        }
    }

    #[test]
    fn resample_errors() {
        let c = corpus();
        let p = partition::label_tier_partition(&c, 4).unwrap();
        let ledger = UtilizationLedger::new(4);
        let mut rng = seed::rng(1);
        let small = BatchConfig {
            batch_size: 3,
            resample: true,
            quota: 3,
        };
        assert!(assemble_batch(&c, &p, &small, &ledger, &mut rng).is_err());
        let thin = BatchConfig {
            batch_size: 8,
            resample: true,
            quota: 1,
        };
        assert!(assemble_batch(&c, &p, &thin, &ledger, &mut rng).is_err());
    }

    #[test]
    fn empty_clusters_are_skipped_with_warning() {
        let c = corpus();
        let mut assignments = vec![0; c.len()];
        for (i, a) in assignments.iter_mut().enumerate() {
            *a = i % 2;
        }
        let p = Partition::from_assignments(&c, assignments, 3, partition::PartitionMethod::Random)
            .unwrap();
        let cfg = BatchConfig {
            batch_size: 8,
            resample: true,
            quota: 3,
        };
        let (b, warnings) =
            assemble_batch(&c, &p, &cfg, &UtilizationLedger::new(3), &mut seed::rng(0)).unwrap();
        assert_eq!(b.samples.len(), 8);
        assert!(b.experts().all(|e| e < 2));
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("expert 2"));
    }

    #[test]
    fn ledger_percentages_and_gap() {
        let mut l = UtilizationLedger::new(3);
        l.per_expert_counts = vec![1, 1, 2];
        l.total = 4;
        assert_eq!(l.percentages(), vec![25.0, 25.0, 50.0]);
        assert_eq!(l.gap(), 25.0);
        assert_eq!(UtilizationLedger::new(2).gap(), 0.0);
    }

    #[test]
    fn probe_subset_is_sorted_and_seeded() {
        let a = probe_subset(100, 10, 4);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, probe_subset(100, 10, 4));
        assert_eq!(probe_subset(5, 10, 4), vec![0, 1, 2, 3, 4]);
    }
}
