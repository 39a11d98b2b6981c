//! Seeded synthetic long-tail corpora.
//!
//! Each class is an isotropic Gaussian in `D` dimensions. Classes also carry
//! a fixed random unit "label embedding" and every sample gets a jittered
//! copy of it as a stand-in for a frozen text-encoder embedding. Only the
//! similarity structure of those embeddings matters downstream.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GraspError, Result};
use crate::linalg;
use crate::seed;

pub const DEFAULT_EMBEDDING_DIM: usize = 16;
pub const DEFAULT_DIMENSION: usize = 2;
pub const DEFAULT_CORPUS_SIZE: usize = 2000;

/// MIMIC-CXR-LT train-split label counts. Only the ratios are used.
pub const CHEST_XRAY_COUNTS: [(&str, usize); 19] = [
    ("No Finding", 53260),
    ("Lung Opacity", 7927),
    ("Cardiomegaly", 5113),
    ("Atelectasis", 4539),
    ("Pleural Effusion", 3832),
    ("Support Devices", 3279),
    ("Edema", 2395),
    ("Pneumonia", 2195),
    ("Pneumothorax", 1172),
    ("Lung Lesion", 1036),
    ("Fracture", 791),
    ("Enlarged Cardiomediastinum", 638),
    ("Consolidation", 609),
    ("Pleural Other", 254),
    ("Calcification of the Aorta", 207),
    ("Tortuous Aorta", 175),
    ("Pneumoperitoneum", 32),
    ("Subcutaneous Emphysema", 27),
    ("Pneumomediastinum", 12),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mean: Vec<f64>,
    pub scale: f64,
    pub count: usize,
    #[serde(default)]
    pub is_healthy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub x: Vec<f64>,
    pub class_id: usize,
    pub embedding: Vec<f64>,
    pub cluster_id: Option<usize>,
}

/// How per-sample embedding surrogates are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingOptions {
    pub dim: usize,
    pub noise_scale: f64,
    /// Seed of the label semantics. Shared by corpora that must agree on
    /// class embeddings (train/test splits, generated sets).
    pub seed: u64,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBEDDING_DIM,
            noise_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub samples: Vec<SampleRecord>,
    pub classes: Vec<ClassSpec>,
    pub dimension: usize,
    pub embedding: EmbeddingOptions,
    pub seed: u64,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
            .iter()
            .map(|c| c.class_id + 1)
            .chain(self.samples.iter().map(|s| s.class_id + 1))
            .max()
            .unwrap_or(0)
    }

    pub fn healthy_class(&self) -> Option<usize> {
        self.classes
            .iter()
            .find(|c| c.is_healthy)
            .map(|c| c.class_id)
    }

    /// Empirical per-class sample counts.
    pub fn class_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for s in &self.samples {
            *hist.entry(s.class_id).or_insert(0) += 1;
        }
        hist
    }

    /// The label embedding used as the conditioning vector for `class_id`.
    pub fn condition(&self, class_id: usize) -> Result<Vec<f64>> {
        label_embedding_with_dim(
            class_id,
            self.num_classes(),
            self.embedding.seed,
            self.embedding.dim,
        )
    }

    /// Replace every sample's embedding with a text-embedding surrogate.
    pub fn reembed(&mut self, noise_scale: f64) -> Result<()> {
        let mut opts = self.embedding;
        opts.noise_scale = noise_scale;
        let n_classes = self.num_classes();
        for s in &mut self.samples {
            s.embedding = text_embedding_surrogate_with(s, n_classes, &opts)?;
        }
        self.embedding = opts;
        Ok(())
    }
}

pub fn validate_spec(spec: &[ClassSpec], dimension: usize) -> Result<()> {
    if spec.is_empty() {
        return Err(GraspError::invalid("corpus spec has no classes"));
    }
    if dimension == 0 {
        return Err(GraspError::invalid("dimension must be positive"));
    }
    let mut healthy = 0;
    let mut seen = std::collections::BTreeSet::new();
    for c in spec {
        if !seen.insert(c.class_id) {
            return Err(GraspError::invalid(format!(
                "duplicate class id {}",
                c.class_id
            )));
        }
        if c.count == 0 {
            return Err(GraspError::invalid(format!(
                "class {} has zero count",
                c.class_id
            )));
        }
        if !(c.scale > 0.0) || !c.scale.is_finite() {
            return Err(GraspError::invalid(format!(
                "class {} has non-positive scale {}",
                c.class_id, c.scale
            )));
        }
        if c.mean.len() != dimension {
            return Err(GraspError::ShapeMismatch {
                expected: dimension,
                got: c.mean.len(),
                context: "class mean",
            });
        }
        healthy += usize::from(c.is_healthy);
    }
    if healthy > 1 {
        return Err(GraspError::invalid("more than one healthy class"));
    }
    Ok(())
}

/// Draw a corpus with default embedding options (E = 16, noise 0.1, seed 0).
pub fn generate_corpus(spec: &[ClassSpec], dimension: usize, seed: u64) -> Result<Corpus> {
    generate_corpus_with(spec, dimension, seed, EmbeddingOptions::default())
}

/// Samples are laid out class by class in spec order, ids dense from 0.
pub fn generate_corpus_with(
    spec: &[ClassSpec],
    dimension: usize,
    seed: u64,
    embedding: EmbeddingOptions,
) -> Result<Corpus> {
    validate_spec(spec, dimension)?;
    if embedding.dim == 0 {
        return Err(GraspError::invalid("embedding dimension must be positive"));
    }
    if !(embedding.noise_scale >= 0.0) {
        return Err(GraspError::invalid("embedding noise must be non-negative"));
    }
    let num_classes = spec.iter().map(|c| c.class_id + 1).max().unwrap_or(0);
    let mut samples = Vec::with_capacity(spec.iter().map(|c| c.count).sum());
    for class in spec {
        let mut rng = seed::rng(seed::indexed_seed(
            seed,
            "corpus-class",
            class.class_id as u64,
        ));
        for _ in 0..class.count {
            let x = class
                .mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + class.scale * z
                })
                .collect();
            let mut record = SampleRecord {
                sample_id: samples.len(),
                x,
                class_id: class.class_id,
                embedding: Vec::new(),
                cluster_id: None,
            };
            record.embedding = text_embedding_surrogate_with(&record, num_classes, &embedding)?;
            samples.push(record);
        }
    }
    Ok(Corpus {
        samples,
        classes: spec.to_vec(),
        dimension,
        embedding,
        seed,
    })
}

/// Fixed random unit vector for a class (dimension 16).
pub fn label_embedding(class_id: usize, num_classes: usize, seed: u64) -> Result<Vec<f64>> {
    label_embedding_with_dim(class_id, num_classes, seed, DEFAULT_EMBEDDING_DIM)
}

pub fn label_embedding_with_dim(
    class_id: usize,
    num_classes: usize,
    seed: u64,
    dim: usize,
) -> Result<Vec<f64>> {
    if class_id >= num_classes {
        return Err(GraspError::invalid(format!(
            "class id {class_id} out of range for {num_classes} classes"
        )));
    }
    let mut rng = seed::rng(seed::indexed_seed(seed, "label-embedding", class_id as u64));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(unit) = linalg::normalized(&v) {
            return Ok(unit);
        }
    }
}

/// Label embedding plus per-sample Gaussian jitter, deterministic per
/// `(sample_id, seed)`. Uses the default embedding dimension.
pub fn text_embedding_surrogate(
    sample: &SampleRecord,
    num_classes: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    text_embedding_surrogate_with(
        sample,
        num_classes,
        &EmbeddingOptions {
            dim: DEFAULT_EMBEDDING_DIM,
            noise_scale,
            seed,
        },
    )
}

pub fn text_embedding_surrogate_with(
    sample: &SampleRecord,
    num_classes: usize,
    opts: &EmbeddingOptions,
) -> Result<Vec<f64>> {
    if !(opts.noise_scale >= 0.0) {
        return Err(GraspError::invalid(format!(
            "negative noise scale {}",
            opts.noise_scale
        )));
    }
    let mut v = label_embedding_with_dim(sample.class_id, num_classes, opts.seed, opts.dim)?;
    if opts.noise_scale > 0.0 {
        let mut rng = seed::rng(seed::indexed_seed(
            opts.seed,
            "text-embedding",
            sample.sample_id as u64,
        ));
        for vi in &mut v {
            let z: f64 = StandardNormal.sample(&mut rng);
            *vi += opts.noise_scale * z;
        }
    }
    Ok(v)
}

/// Scale `weights` to integer counts summing to `total`, each at least 1,
/// by largest remainder (ties to the lower index).
pub fn scale_counts(weights: &[usize], total: usize) -> Result<Vec<usize>> {
    if weights.is_empty() || total < weights.len() {
        return Err(GraspError::invalid(format!(
            "cannot scale {} classes to {total} samples",
            weights.len()
        )));
    }
    let sum: usize = weights.iter().sum();
    let raw: Vec<f64> = weights
        .iter()
        .map(|&w| total as f64 * w as f64 / sum as f64)
        .collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| (r.floor() as usize).max(1)).collect();
    let assigned: usize = counts.iter().sum();
    if assigned > total {
        // Minimum-one bumps overshot; take back from the largest classes.
        let mut excess = assigned - total;
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        for i in order.into_iter().cycle() {
            if excess == 0 {
                break;
            }
            if counts[i] > 1 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
        return Ok(counts);
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Means on a ring, with an optional first class at the origin.
fn ring_layout(n: usize, dimension: usize, radius: f64, center_first: bool) -> Vec<Vec<f64>> {
    let ring = if center_first { n - 1 } else { n };
    (0..n)
        .map(|i| {
            let mut m = vec![0.0; dimension];
            if center_first && i == 0 {
                return m;
            }
            let j = if center_first { i - 1 } else { i };
            let angle = 2.0 * std::f64::consts::PI * j as f64 / ring as f64;
            m[0] = radius * angle.cos();
            if dimension > 1 {
                m[1] = radius * angle.sin();
            }
            m
        })
        .collect()
}

/// Class spec with the chest X-ray training label ratios scaled to `total` samples.
/// The dominant "No Finding" analogue is class 0, healthy, at the origin;
/// the others sit on a ring of radius 4.
pub fn chest_xray_spec(total: usize, dimension: usize) -> Result<Vec<ClassSpec>> {
    if dimension == 0 {
        return Err(GraspError::invalid("dimension must be positive"));
    }
    let weights: Vec<usize> = CHEST_XRAY_COUNTS.iter().map(|(_, c)| *c).collect();
    let counts = scale_counts(&weights, total)?;
    let means = ring_layout(CHEST_XRAY_COUNTS.len(), dimension, 4.0, true);
    Ok(CHEST_XRAY_COUNTS
        .iter()
        .zip(counts)
        .zip(means)
        .enumerate()
        .map(|(i, (((name, _), count), mean))| ClassSpec {
            class_id: i,
            name: Some((*name).to_string()),
            mean,
            scale: if i == 0 { 0.6 } else { 0.35 },
            count,
            is_healthy: i == 0,
        })
        .collect())
}

/// Relative class weights of the eight-class long-tail toy: one head class
/// at 60% of the mass and three tail classes below 2% each.
pub const EIGHT_CLASS_WEIGHTS: [usize; 8] = [1200, 320, 200, 120, 60, 38, 34, 28];

pub fn eight_class_spec(total: usize, dimension: usize) -> Result<Vec<ClassSpec>> {
    if dimension == 0 {
        return Err(GraspError::invalid("dimension must be positive"));
    }
    let counts = scale_counts(&EIGHT_CLASS_WEIGHTS, total)?;
    let means = ring_layout(EIGHT_CLASS_WEIGHTS.len(), dimension, 3.0, true);
    Ok(counts
        .into_iter()
        .zip(means)
        .enumerate()
        .map(|(i, (count, mean))| ClassSpec {
            class_id: i,
            name: None,
            mean,
            scale: 0.4,
            count,
            is_healthy: i == 0,
        })
        .collect())
}
