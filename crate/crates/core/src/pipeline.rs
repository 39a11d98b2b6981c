//! Experiment configs, the staged pipeline and run comparison.
//!
//! Every run derives its randomness from one root seed: stage `name` uses
//! `child_seed(root, name)`. A config lists one or more root seeds; each is
//! run independently into `<out>/seed-<s>/`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{self, ClassSpec, Corpus, EmbeddingOptions};
use crate::error::{GraspError, Result};
use crate::io;
use crate::linalg;
use crate::metrics::{self, ClassOutcome, FeatureSet, FeatureTag, MetricReport};
use crate::model::{
    sample_many, AdapterInit, AdapterStack, Backbone, BackboneConfig, FlowOptions, ModelState,
    Nonlinearity, Placement,
};
use crate::partition::{self, Partition, PartitionMethod};
use crate::seed;
use crate::training::{
    self, BatchConfig, LrSchedule, Optimizer, PretrainConfig, ProbeConfig, TrainConfig,
    TrainOutcome, UtilizationLedger,
};

pub const CONFIG_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
/// Identifies the set of columns a manifest summary carries.
pub const METRIC_SCHEMA: &str = "grasp-metrics-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusPreset {
    /// Chest X-ray label ratios, 19 classes.
    ChestXray,
    /// One head class at 60% and three tail classes below 2%.
    EightClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<CorpusPreset>,
    /// TOML file with `dimension` and `[[classes]]`; replaces `preset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_path: Option<PathBuf>,
    pub size: usize,
    pub test_size: usize,
    pub dimension: usize,
    pub embedding_dim: usize,
    pub embedding_noise: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            preset: Some(CorpusPreset::EightClass),
            spec_path: None,
            size: 2000,
            test_size: 2000,
            dimension: 2,
            embedding_dim: datagen::DEFAULT_EMBEDDING_DIM,
            embedding_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub hidden: usize,
    pub blocks: usize,
    pub time_embed_dim: usize,
    pub ffn_width: usize,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    /// Distance by which each class mean is displaced in the source domain
    /// the backbone is pretrained on.
    pub source_shift: f64,
    /// Source domain has equal class counts.
    pub source_balanced: bool,
}

impl Default for BackboneSection {
    fn default() -> Self {
        Self {
            hidden: 32,
            blocks: 4,
            time_embed_dim: 8,
            ffn_width: 64,
            pretrain_steps: 3000,
            pretrain_batch: 32,
            pretrain_lr: 3e-3,
            source_shift: 1.5,
            source_balanced: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub method: PartitionMethod,
    pub k: usize,
    pub kmeans_iters: usize,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            method: PartitionMethod::LabelTier,
            k: 4,
            kmeans_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSection {
    /// Bottleneck width `d′`.
    pub width: usize,
    pub placement: Placement,
    pub nonlinearity: Nonlinearity,
    /// Std of `W1` entries as a multiple of `1/sqrt(d)`.
    pub w1_gain: f64,
}

impl Default for AdapterSection {
    fn default() -> Self {
        Self {
            width: 8,
            placement: Placement::LastQuarter,
            nonlinearity: Nonlinearity::Gelu,
            w1_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub optimizer: Optimizer,
    pub resample: bool,
    pub quota: usize,
    pub cond_dropout: f64,
    /// Conflict trace every this many steps; 0 disables.
    pub trace_interval: usize,
    pub probe: ProbeConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr: 3e-3,
            schedule: LrSchedule::Cosine,
            optimizer: Optimizer::adam(),
            resample: true,
            quota: 3,
            cond_dropout: 0.1,
            trace_interval: 0,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    /// Euler steps.
    pub steps: usize,
    pub guidance: f64,
    pub per_class: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            steps: 20,
            guidance: 5.0,
            per_class: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub k: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            k: metrics::DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub backbone: BackboneSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub adapter: AdapterSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            name: "grasp".into(),
            seeds: vec![0],
            corpus: CorpusConfig::default(),
            backbone: BackboneSection::default(),
            partition: PartitionSection::default(),
            adapter: AdapterSection::default(),
            training: TrainingSection::default(),
            sampling: SamplingSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// A config that runs end to end in seconds.
    pub fn smoke() -> Self {
        Self {
            name: "smoke".into(),
            corpus: CorpusConfig {
                size: 200,
                test_size: 200,
                ..CorpusConfig::default()
            },
            backbone: BackboneSection {
                hidden: 16,
                ffn_width: 32,
                pretrain_steps: 100,
                ..BackboneSection::default()
            },
            training: TrainingSection {
                steps: 50,
                ..TrainingSection::default()
            },
            sampling: SamplingSection {
                steps: 10,
                per_class: 13,
                ..SamplingSection::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| GraspError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GraspError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&io::read_text(path)?)?;
        // relative spec paths are resolved against the config's directory
        if let (Some(spec), Some(dir)) = (&cfg.corpus.spec_path, path.parent()) {
            if spec.is_relative() {
                cfg.corpus.spec_path = Some(dir.join(spec));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GraspError::Config(msg));
        if self.format_version != CONFIG_VERSION {
            return bad(format!(
                "unsupported config version {}",
                self.format_version
            ));
        }
        if self.seeds.is_empty() {
            return bad("`seeds` must list at least one seed".into());
        }
        match (&self.corpus.preset, &self.corpus.spec_path) {
            (None, None) => return bad("corpus needs `preset` or `spec_path`".into()),
            (Some(_), Some(_)) => {
                return bad("corpus takes `preset` or `spec_path`, not both".into())
            }
            _ => {}
        }
        if self.corpus.size == 0 || self.corpus.test_size == 0 {
            return bad("corpus sizes must be positive".into());
        }
        if self.sampling.steps == 0 || self.sampling.per_class == 0 {
            return bad("sampling steps and per_class must be positive".into());
        }
        if !(self.sampling.guidance >= 0.0) || !self.sampling.guidance.is_finite() {
            return bad(format!("invalid guidance scale {}", self.sampling.guidance));
        }
        if self.metrics.k == 0 {
            return bad("metrics k must be positive".into());
        }
        if !(0.0..1.0).contains(&self.training.cond_dropout) {
            return bad("cond_dropout must lie in [0, 1)".into());
        }
        if self.partition.k == 0 {
            return bad("partition k must be positive".into());
        }
        if self.partition.method == PartitionMethod::Single && self.partition.k != 1 {
            return bad("single partition requires k = 1".into());
        }
        if self.partition.method == PartitionMethod::LabelTier
            && !(3..=4).contains(&self.partition.k)
        {
            return bad(format!(
                "label-tier partition supports k in {{3, 4}}, got {}",
                self.partition.k
            ));
        }
        if self.training.steps == 0 || self.training.batch_size == 0 {
            return bad("training steps and batch_size must be positive".into());
        }
        if !(self.training.lr > 0.0) || !self.training.lr.is_finite() {
            return bad(format!("invalid learning rate {}", self.training.lr));
        }
        if self.adapter.width == 0 {
            return bad("adapter width must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; key order in the source file does
    /// not matter.
    pub fn hash(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&json).expect("value serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            data_dim: self.corpus.dimension,
            hidden: self.backbone.hidden,
            blocks: self.backbone.blocks,
            cond_dim: self.corpus.embedding_dim,
            time_embed_dim: self.backbone.time_embed_dim,
            ffn_width: self.backbone.ffn_width,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            steps: t.steps,
            batch: BatchConfig {
                batch_size: t.batch_size,
                resample: t.resample,
                quota: t.quota,
            },
            lr: t.lr,
            schedule: t.schedule,
            optimizer: t.optimizer,
            flow: FlowOptions {
                cond_dropout: t.cond_dropout,
            },
            trace_interval: t.trace_interval,
            probe: t.probe,
            seed,
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| GraspError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[derive(Debug, Deserialize)]
struct SpecFile {
    dimension: usize,
    classes: Vec<ClassSpec>,
}

/// Class spec of the target corpus.
pub fn class_spec(cfg: &CorpusConfig, total: usize) -> Result<Vec<ClassSpec>> {
    if let Some(path) = &cfg.spec_path {
        let spec: SpecFile =
            toml::from_str(&io::read_text(path)?).map_err(|e| GraspError::Config(e.to_string()))?;
        if spec.dimension != cfg.dimension {
            return Err(GraspError::Config(format!(
                "spec file has dimension {} but config says {}",
                spec.dimension, cfg.dimension
            )));
        }
        let weights: Vec<usize> = spec.classes.iter().map(|c| c.count).collect();
        let counts = datagen::scale_counts(&weights, total)?;
        return Ok(spec
            .classes
            .into_iter()
            .zip(counts)
            .map(|(c, count)| ClassSpec { count, ..c })
            .collect());
    }
    match cfg.preset {
        Some(CorpusPreset::ChestXray) => datagen::chest_xray_spec(total, cfg.dimension),
        Some(CorpusPreset::EightClass) | None => datagen::eight_class_spec(total, cfg.dimension),
    }
}

fn embedding_options(cfg: &ExperimentConfig, root: u64) -> EmbeddingOptions {
    EmbeddingOptions {
        dim: cfg.corpus.embedding_dim,
        noise_scale: cfg.corpus.embedding_noise,
        seed: seed::child_seed(root, "label-semantics"),
    }
}

/// Train and test corpora drawn from the same class spec.
pub fn stage_generate(cfg: &ExperimentConfig, root: u64) -> Result<(Corpus, Corpus)> {
    let emb = embedding_options(cfg, root);
    let train_spec = class_spec(&cfg.corpus, cfg.corpus.size)?;
    let test_spec = class_spec(&cfg.corpus, cfg.corpus.test_size)?;
    let train = datagen::generate_corpus_with(
        &train_spec,
        cfg.corpus.dimension,
        seed::child_seed(root, "corpus-train"),
        emb,
    )?;
    let test = datagen::generate_corpus_with(
        &test_spec,
        cfg.corpus.dimension,
        seed::child_seed(root, "corpus-test"),
        emb,
    )?;
    Ok((train, test))
}

/// The pretraining domain: same classes and label semantics, class means
/// displaced by `source_shift` in seeded random directions.
pub fn source_corpus(cfg: &ExperimentConfig, target: &Corpus, root: u64) -> Result<Corpus> {
    let n = target.len();
    let mut spec = target.classes.clone();
    if cfg.backbone.source_balanced {
        let counts = datagen::scale_counts(&vec![1; spec.len()], n)?;
        for (c, count) in spec.iter_mut().zip(counts) {
            c.count = count;
        }
    }
    for c in &mut spec {
        let mut rng = seed::rng(seed::indexed_seed(root, "source-shift", c.class_id as u64));
        let dir = loop {
            let g: Vec<f64> = (0..target.dimension)
                .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
                .collect();
            if let Some(u) = linalg::normalized(&g) {
                break u;
            }
        };
        linalg::axpy(cfg.backbone.source_shift, &dir, &mut c.mean);
    }
    datagen::generate_corpus_with(
        &spec,
        target.dimension,
        seed::child_seed(root, "corpus-source"),
        target.embedding,
    )
}

pub fn stage_pretrain(
    cfg: &ExperimentConfig,
    target: &Corpus,
    root: u64,
) -> Result<(Backbone, Vec<f64>)> {
    let backbone = Backbone::new(
        cfg.backbone_config(),
        seed::child_seed(root, "backbone-init"),
    )?;
    if cfg.backbone.pretrain_steps == 0 {
        return Ok((backbone, Vec::new()));
    }
    let source = source_corpus(cfg, target, root)?;
    training::pretrain_backbone(
        backbone,
        &source,
        &PretrainConfig {
            steps: cfg.backbone.pretrain_steps,
            batch_size: cfg.backbone.pretrain_batch,
            lr: cfg.backbone.pretrain_lr,
            optimizer: Optimizer::adam(),
            flow: FlowOptions {
                cond_dropout: cfg.training.cond_dropout,
            },
            seed: seed::child_seed(root, "pretrain"),
        },
    )
}

pub fn stage_partition(cfg: &ExperimentConfig, corpus: &Corpus, root: u64) -> Result<Partition> {
    let s = seed::child_seed(root, "partition");
    let k = cfg.partition.k;
    match cfg.partition.method {
        PartitionMethod::LabelTier => partition::label_tier_partition(corpus, k),
        PartitionMethod::EmbeddingKMeans => {
            partition::bisecting_kmeans_partition(corpus, k, s, cfg.partition.kmeans_iters)
        }
        PartitionMethod::Random => partition::random_partition(corpus, k, s),
        PartitionMethod::Single => partition::single_partition(corpus),
    }
}

/// Frozen backbone with freshly initialised zero-output adapters.
pub fn build_model(
    cfg: &ExperimentConfig,
    backbone: Backbone,
    k: usize,
    root: u64,
) -> Result<ModelState> {
    let hidden = backbone.config.hidden;
    let placement = cfg.adapter.placement.resolve(backbone.config.blocks)?;
    let stack = AdapterStack::new(
        k,
        placement,
        cfg.adapter.width,
        hidden,
        cfg.adapter.nonlinearity,
        AdapterInit {
            w1_std: cfg.adapter.w1_gain / (hidden as f64).sqrt(),
            seed: seed::child_seed(root, "adapter-init"),
        },
    )?;
    ModelState::new(backbone, stack)
}

pub fn stage_train(
    cfg: &ExperimentConfig,
    state: ModelState,
    corpus: &Corpus,
    partition: &Partition,
    root: u64,
) -> Result<TrainOutcome> {
    training::train(
        state,
        corpus,
        partition,
        &cfg.train_config(seed::child_seed(root, "train")),
    )
}

/// `per_class` guided samples for every class of `template`, each routed to
/// the expert holding most of that class's training samples.
pub fn stage_sample(
    cfg: &ExperimentConfig,
    state: &ModelState,
    template: &Corpus,
    partition: &Partition,
    root: u64,
) -> Result<Corpus> {
    let s = seed::child_seed(root, "sample");
    let mut out = Vec::new();
    for class in &template.classes {
        let c = class.class_id;
        let expert = partition.expert_for_class(c).ok_or_else(|| {
            GraspError::invalid(format!("class {c} has no training samples to route by"))
        })?;
        let cond = template.condition(c)?;
        let xs = sample_many(
            state,
            &cond,
            Some(expert),
            cfg.sampling.guidance,
            cfg.sampling.steps,
            cfg.sampling.per_class,
            seed::indexed_seed(s, "class", c as u64),
        )?;
        out.extend(xs.into_iter().map(|x| (c, x)));
    }
    Ok(io::generated_corpus(template, out, s))
}

pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    generated: &Corpus,
    train: &Corpus,
    test: &Corpus,
) -> Result<MetricReport> {
    metrics::evaluate(
        &FeatureSet::from_corpus(generated, FeatureTag::Generated),
        &FeatureSet::from_corpus(train, FeatureTag::Train),
        &FeatureSet::from_corpus(test, FeatureTag::Test),
        cfg.metrics.k,
    )
}

/// Per-class CSV rows of a metric report.
pub fn report_csv(report: &MetricReport) -> String {
    let mut out = String::from(
        "class,status,coverage,irs_train,irs_test,irs_adjusted,frechet,n_real,n_generated,reason\n",
    );
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut row = |label: &str, o: &ClassOutcome| match o {
        ClassOutcome::Evaluated(v) => {
            let _ = writeln!(
                out,
                "{label},evaluated,{:?},{:?},{:?},{},{},{},{},",
                v.coverage,
                v.irs_train,
                v.irs_test,
                opt(v.irs_adjusted),
                opt(v.frechet),
                v.n_real,
                v.n_generated
            );
        }
        ClassOutcome::Skipped { reason } => {
            let _ = writeln!(
                out,
                "{label},skipped,,,,,,,,\"{}\"",
                reason.replace('"', "'")
            );
        }
    };
    row("all", &ClassOutcome::Evaluated(report.all_labels.clone()));
    for (c, o) in &report.per_class {
        row(&c.to_string(), o);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub format_version: u32,
    pub per_expert_counts: Vec<u64>,
    pub total: u64,
    pub percentages: Vec<f64>,
    pub gap: f64,
    pub coverage_guarantee_held: bool,
    pub warnings: Vec<String>,
}

impl LedgerReport {
    pub fn new(outcome: &TrainOutcome) -> Self {
        Self::from_ledger(
            &outcome.ledger,
            outcome.coverage_guarantee_held,
            outcome.warnings.clone(),
        )
    }

    pub fn from_ledger(ledger: &UtilizationLedger, held: bool, warnings: Vec<String>) -> Self {
        Self {
            format_version: io::FORMAT_VERSION,
            per_expert_counts: ledger.per_expert_counts.clone(),
            total: ledger.total,
            percentages: ledger.percentages(),
            gap: ledger.gap(),
            coverage_guarantee_held: held,
            warnings,
        }
    }
}

pub fn trace_csv(outcome: &TrainOutcome) -> String {
    let k = outcome.state.adapters.k;
    let mut out = String::from("step,within_cluster,cross_cluster");
    for e in 0..k {
        let _ = write!(out, ",expert_{e}");
    }
    out.push('\n');
    for t in &outcome.traces {
        let _ = write!(
            out,
            "{},{:?},{:?}",
            t.step, t.within_cluster_conflict, t.cross_cluster_conflict
        );
        for v in &t.per_cluster_conflict {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn losses_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{i},{l:?}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_ms: u64,
}

/// Headline numbers of one seed, enough for comparison tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub coverage: f64,
    pub irs_adjusted: Option<f64>,
    pub frechet: Option<f64>,
    pub macro_coverage: Option<f64>,
    pub macro_irs_adjusted: Option<f64>,
    pub macro_frechet: Option<f64>,
    pub utilization_gap: f64,
}

impl RunSummary {
    pub fn new(report: &MetricReport, ledger: &UtilizationLedger) -> Self {
        let m = report.macro_average.as_ref();
        Self {
            coverage: report.all_labels.coverage,
            irs_adjusted: report.all_labels.irs_adjusted,
            frechet: report.all_labels.frechet,
            macro_coverage: m.map(|m| m.coverage),
            macro_irs_adjusted: m.and_then(|m| m.irs_adjusted),
            macro_frechet: m.and_then(|m| m.frechet),
            utilization_gap: ledger.gap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub name: String,
    pub config_hash: String,
    pub metric_schema: String,
    pub runs: Vec<SeedRun>,
}

impl RunManifest {
    pub fn stage(&self, seed: u64, stage: &str) -> Option<&StageRecord> {
        self.runs
            .iter()
            .find(|r| r.seed == seed)?
            .stages
            .iter()
            .find(|s| s.stage == stage)
    }
}

struct StageWriter<'a> {
    base: &'a Path,
    records: Vec<StageRecord>,
}

impl StageWriter<'_> {
    fn run<T>(
        &mut self,
        name: &str,
        body: impl FnOnce() -> Result<T>,
        write: impl FnOnce(&T) -> Result<Vec<PathBuf>>,
    ) -> Result<T> {
        let start = Instant::now();
        let value = body().map_err(|e| e.in_stage(name))?;
        let paths = write(&value).map_err(|e| e.in_stage(name))?;
        let mut artifacts = Vec::new();
        for p in paths {
            let rel = p
                .strip_prefix(self.base)
                .unwrap_or(&p)
                .to_string_lossy()
                .replace('\\', "/");
            artifacts.push(Artifact {
                path: rel,
                sha256: sha256_file(&p).map_err(|e| e.in_stage(name))?,
            });
        }
        self.records.push(StageRecord {
            stage: name.to_string(),
            artifacts,
            wall_clock_ms: start.elapsed().as_millis() as u64,
        });
        Ok(value)
    }
}

/// Outputs of one seed, kept in memory for callers that want more than files.
#[derive(Debug, Clone)]
pub struct SeedOutput {
    pub train: Corpus,
    pub test: Corpus,
    pub partition: Partition,
    pub outcome: TrainOutcome,
    pub generated: Corpus,
    pub report: MetricReport,
}

/// Run all stages for one root seed without touching the filesystem.
pub fn run_seed(cfg: &ExperimentConfig, root: u64) -> Result<SeedOutput> {
    let (train, test) = stage_generate(cfg, root).map_err(|e| e.in_stage("generate"))?;
    let (backbone, _) = stage_pretrain(cfg, &train, root).map_err(|e| e.in_stage("pretrain"))?;
    let partition = stage_partition(cfg, &train, root).map_err(|e| e.in_stage("partition"))?;
    let state = build_model(cfg, backbone, partition.k, root).map_err(|e| e.in_stage("train"))?;
    let outcome =
        stage_train(cfg, state, &train, &partition, root).map_err(|e| e.in_stage("train"))?;
    let generated = stage_sample(cfg, &outcome.state, &train, &partition, root)
        .map_err(|e| e.in_stage("sample"))?;
    let report =
        stage_evaluate(cfg, &generated, &train, &test).map_err(|e| e.in_stage("evaluate"))?;
    Ok(SeedOutput {
        train,
        test,
        partition,
        outcome,
        generated,
        report,
    })
}

/// generate → pretrain → partition → train → sample → evaluate for each
/// seed, writing artifacts under `out` and `out/manifest.json`. Artifacts of
/// completed stages stay on disk when a later stage fails.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    if let Some(spec) = &cfg.corpus.spec_path {
        if !spec.exists() {
            return Err(GraspError::Config(format!(
                "spec file {} does not exist",
                spec.display()
            )));
        }
    }
    io::write_text(&out.join("config.toml"), &cfg.to_toml_string()?)?;
    let mut runs = Vec::new();
    for &root in &cfg.seeds {
        let dir = out.join(format!("seed-{root}"));
        let mut w = StageWriter {
            base: out,
            records: Vec::new(),
        };
        let (train, test) = w.run(
            "generate",
            || stage_generate(cfg, root),
            |(train, test)| {
                let a = dir.join("corpus_train.txt");
                let b = dir.join("corpus_test.txt");
                io::write_corpus(&a, train)?;
                io::write_corpus(&b, test)?;
                Ok(vec![a, b])
            },
        )?;
        let (backbone, _) = w.run(
            "pretrain",
            || stage_pretrain(cfg, &train, root),
            |(bb, losses)| {
                let a = dir.join("backbone.json");
                let b = dir.join("pretrain_losses.csv");
                io::write_json(&a, bb)?;
                io::write_text(&b, &losses_csv(losses))?;
                Ok(vec![a, b])
            },
        )?;
        let partition = w.run(
            "partition",
            || stage_partition(cfg, &train, root),
            |p| {
                let a = dir.join("partition.txt");
                let b = dir.join("composition.json");
                io::write_partition(&a, p)?;
                io::write_json(&b, &io::CompositionReport::new(p))?;
                Ok(vec![a, b])
            },
        )?;
        let outcome = w.run(
            "train",
            || {
                let state = build_model(cfg, backbone, partition.k, root)?;
                stage_train(cfg, state, &train, &partition, root)
            },
            |o| {
                let a = dir.join("checkpoint.json");
                let b = dir.join("ledger.json");
                let c = dir.join("conflict_trace.csv");
                let d = dir.join("train_losses.csv");
                io::write_checkpoint(&a, &o.state)?;
                io::write_json(&b, &LedgerReport::new(o))?;
                io::write_text(&c, &trace_csv(o))?;
                io::write_text(&d, &losses_csv(&o.losses))?;
                Ok(vec![a, b, c, d])
            },
        )?;
        let generated = w.run(
            "sample",
            || stage_sample(cfg, &outcome.state, &train, &partition, root),
            |g| {
                let a = dir.join("generated.txt");
                io::write_corpus(&a, g)?;
                Ok(vec![a])
            },
        )?;
        let report = w.run(
            "evaluate",
            || stage_evaluate(cfg, &generated, &train, &test),
            |r| {
                let a = dir.join("metrics.json");
                let b = dir.join("metrics.csv");
                io::write_json(&a, r)?;
                io::write_text(&b, &report_csv(r))?;
                Ok(vec![a, b])
            },
        )?;
        runs.push(SeedRun {
            seed: root,
            stages: w.records,
            summary: RunSummary::new(&report, &outcome.ledger),
        });
    }
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        metric_schema: METRIC_SCHEMA.into(),
        runs,
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub const COMPARE_HEADER: &str =
    "run,seed,coverage,irs_adjusted,frechet,macro_coverage,macro_irs_adjusted,macro_frechet,utilization_gap";

/// One CSV row per (manifest, seed).
pub fn compare_runs(manifests: &[RunManifest]) -> Result<String> {
    if manifests.len() < 2 {
        return Err(GraspError::invalid(
            "comparison needs at least two manifests",
        ));
    }
    let schema = &manifests[0].metric_schema;
    if let Some(m) = manifests
        .iter()
        .find(|m| &m.metric_schema != schema || m.format_version != MANIFEST_VERSION)
    {
        return Err(GraspError::invalid(format!(
            "manifest `{}` has schema {} (version {}), expected {schema} (version {MANIFEST_VERSION})",
            m.name, m.metric_schema, m.format_version
        )));
    }
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for m in manifests {
        for r in &m.runs {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{},{},{:?},{},{},{},{},{},{:?}",
                m.name,
                r.seed,
                s.coverage,
                opt(s.irs_adjusted),
                opt(s.frechet),
                opt(s.macro_coverage),
                opt(s.macro_irs_adjusted),
                opt(s.macro_frechet),
                s.utilization_gap
            );
        }
    }
    Ok(out)
}

/// Named partitions of one corpus for conflict analysis.
pub fn named_partitions(
    corpus: &Corpus,
    k: usize,
    root: u64,
) -> Result<BTreeMap<String, Partition>> {
    let s = seed::child_seed(root, "partition");
    let mut out = BTreeMap::new();
    out.insert(
        "label-tier".to_string(),
        partition::label_tier_partition(corpus, k)?,
    );
    out.insert(
        "embedding-kmeans".to_string(),
        partition::bisecting_kmeans_partition(corpus, k, s, 50)?,
    );
    out.insert(
        "random".to_string(),
        partition::random_partition(corpus, k, s)?,
    );
    out.insert("single".to_string(), partition::single_partition(corpus)?);
    Ok(out)
}

pub fn conflict_table(names: &[String], scores: &[partition::ConflictScore]) -> String {
    let mut out = String::from("partition,within_cluster_conflict,pairs\n");
    for (n, s) in names.iter().zip(scores) {
        let _ = writeln!(out, "{n},{:?},{}", s.overall, s.pair_count);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_ignores_key_order_and_tracks_content() {
        let a = "format_version = 1\nname = \"x\"\nseeds = [1]\n[metrics]\nk = 5\n";
        let b = "seeds = [1]\nname = \"x\"\n[metrics]\nk = 5\n[sampling]\nsteps = 20\nguidance = 5.0\nper_class = 100\n";
        let b = format!("format_version = 1\n{b}");
        let ca = ExperimentConfig::from_toml_str(a).unwrap();
        let cb = ExperimentConfig::from_toml_str(&b).unwrap();
        assert_eq!(ca.hash(), cb.hash());
        let cc = ExperimentConfig::from_toml_str(&a.replace("k = 5", "k = 3")).unwrap();
        assert_ne!(ca.hash(), cc.hash());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(
            ExperimentConfig::from_toml_str("format_version = 1\nname = \"x\"\nseeds = []\n")
                .is_err()
        );
        assert!(
            ExperimentConfig::from_toml_str("format_version = 2\nname = \"x\"\nseeds = [0]\n")
                .is_err()
        );
        assert!(ExperimentConfig::from_toml_str(
            "format_version = 1\nname = \"x\"\nseeds = [0]\nbogus = 1\n"
        )
        .is_err());
    }

    #[test]
    fn compare_needs_two_manifests_with_one_schema() {
        let m = RunManifest {
            format_version: MANIFEST_VERSION,
            name: "a".into(),
            config_hash: String::new(),
            metric_schema: METRIC_SCHEMA.into(),
            runs: vec![],
        };
        assert!(compare_runs(&[m.clone()]).is_err());
        let mut other = m.clone();
        other.metric_schema = "other".into();
        assert!(compare_runs(&[m.clone(), other]).is_err());
        assert!(compare_runs(&[m.clone(), m]).is_ok());
    }
}
