//! Plain-text and JSON file formats.
//!
//! Corpus / feature file (`# grasp-corpus v1`):
//!
//! ```text
//! # grasp-corpus v1
//! #meta {"dimension":2,"embedding_dim":16,"embedding":{...},"seed":7}
//! #class {"class_id":0,"mean":[0.0,0.0],"scale":0.6,"count":1217,"is_healthy":true}
//! <sample_id> <class_id> <x_1> .. <x_D> <e_1> .. <e_E>
//! ```
//!
//! Fields are separated by single spaces; floats use the shortest text that
//! parses back to the same `f64`. Generated sets use the same layout with
//! `embedding_dim` 0. Blank lines and other `#` lines are ignored.
//!
//! Partition file (`# grasp-partition v1`): a `#meta` line with `k` and
//! `method`, then `<sample_id> <expert_id>` per line in sample order.
//!
//! Checkpoints and reports are JSON objects carrying `format_version`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::datagen::{ClassSpec, Corpus, EmbeddingOptions, SampleRecord};
use crate::error::{GraspError, Result};
use crate::metrics::{FeatureSet, FeatureTag};
use crate::model::ModelState;
use crate::partition::{Partition, PartitionMethod};

pub const CORPUS_HEADER: &str = "# grasp-corpus v1";
pub const PARTITION_HEADER: &str = "# grasp-partition v1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorpusMeta {
    dimension: usize,
    embedding_dim: usize,
    embedding: EmbeddingOptions,
    seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartitionMeta {
    k: usize,
    method: PartitionMethod,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GraspError::io(path, e))
}

/// Write a file, creating parent directories.
pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| GraspError::io(parent, e))?;
        }
    }
    fs::write(path, content).map_err(|e| GraspError::io(path, e))
}

fn push_floats(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, " {v:?}");
    }
}

pub fn corpus_to_string(corpus: &Corpus) -> Result<String> {
    let embedding_dim = corpus.samples.first().map_or(0, |s| s.embedding.len());
    let meta = CorpusMeta {
        dimension: corpus.dimension,
        embedding_dim,
        embedding: corpus.embedding,
        seed: corpus.seed,
    };
    let mut out = String::new();
    out.push_str(CORPUS_HEADER);
    out.push('\n');
    let _ = writeln!(out, "#meta {}", serde_json::to_string(&meta)?);
    for class in &corpus.classes {
        let _ = writeln!(out, "#class {}", serde_json::to_string(class)?);
    }
    for s in &corpus.samples {
        if s.x.len() != corpus.dimension || s.embedding.len() != embedding_dim {
            return Err(GraspError::invalid(format!(
                "sample {} does not match the corpus layout",
                s.sample_id
            )));
        }
        let _ = write!(out, "{} {}", s.sample_id, s.class_id);
        push_floats(&mut out, &s.x);
        push_floats(&mut out, &s.embedding);
        out.push('\n');
    }
    Ok(out)
}

pub fn corpus_from_str(text: &str, origin: &str) -> Result<Corpus> {
    let perr = |line: usize, msg: String| GraspError::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CORPUS_HEADER => {}
        _ => return Err(perr(1, format!("missing header `{CORPUS_HEADER}`"))),
    }
    let mut meta: Option<CorpusMeta> = None;
    let mut classes: Vec<ClassSpec> = Vec::new();
    let mut samples = Vec::new();
    for (i, raw) in lines {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#meta ") {
            meta = Some(serde_json::from_str(rest).map_err(|e| perr(lineno, e.to_string()))?);
            continue;
        }
        if let Some(rest) = line.strip_prefix("#class ") {
            classes.push(serde_json::from_str(rest).map_err(|e| perr(lineno, e.to_string()))?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let m = meta
            .as_ref()
            .ok_or_else(|| perr(lineno, "record before #meta line".into()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let expected = 2 + m.dimension + m.embedding_dim;
        if fields.len() != expected {
            return Err(perr(
                lineno,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        let sample_id: usize = fields[0]
            .parse()
            .map_err(|e| perr(lineno, format!("sample id: {e}")))?;
        let class_id: usize = fields[1]
            .parse()
            .map_err(|e| perr(lineno, format!("class id: {e}")))?;
        let floats = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| perr(lineno, format!("number: {e}")))?;
        if floats.iter().any(|v| !v.is_finite()) {
            return Err(perr(lineno, "non-finite value".into()));
        }
        if sample_id != samples.len() {
            return Err(perr(
                lineno,
                format!(
                    "sample ids must be dense and ordered; expected {}",
                    samples.len()
                ),
            ));
        }
        samples.push(SampleRecord {
            sample_id,
            x: floats[..m.dimension].to_vec(),
            class_id,
            embedding: floats[m.dimension..].to_vec(),
            cluster_id: None,
        });
    }
    let meta = meta.ok_or_else(|| perr(1, "missing #meta line".into()))?;
    Ok(Corpus {
        samples,
        classes,
        dimension: meta.dimension,
        embedding: meta.embedding,
        seed: meta.seed,
    })
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_text(path, &corpus_to_string(corpus)?)
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    corpus_from_str(&read_text(path)?, &path.display().to_string())
}

/// Feature vectors of a corpus-format file (the `x` columns).
pub fn read_features(path: &Path, tag: FeatureTag) -> Result<FeatureSet> {
    Ok(FeatureSet::from_corpus(&read_corpus(path)?, tag))
}

/// Generated vectors as a corpus-format file without embeddings.
pub fn generated_corpus(template: &Corpus, vectors: Vec<(usize, Vec<f64>)>, seed: u64) -> Corpus {
    Corpus {
        samples: vectors
            .into_iter()
            .enumerate()
            .map(|(i, (class_id, x))| SampleRecord {
                sample_id: i,
                x,
                class_id,
                embedding: Vec::new(),
                cluster_id: None,
            })
            .collect(),
        classes: template.classes.clone(),
        dimension: template.dimension,
        embedding: template.embedding,
        seed,
    }
}

pub fn partition_to_string(partition: &Partition) -> Result<String> {
    let meta = PartitionMeta {
        k: partition.k,
        method: partition.method,
    };
    let mut out = String::new();
    out.push_str(PARTITION_HEADER);
    out.push('\n');
    let _ = writeln!(out, "#meta {}", serde_json::to_string(&meta)?);
    for (id, e) in partition.assignments.iter().enumerate() {
        let _ = writeln!(out, "{id} {e}");
    }
    Ok(out)
}

/// Parse a partition file; composition is recomputed from `corpus`.
pub fn partition_from_str(text: &str, origin: &str, corpus: &Corpus) -> Result<Partition> {
    let perr = |line: usize, msg: String| GraspError::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == PARTITION_HEADER => {}
        _ => return Err(perr(1, format!("missing header `{PARTITION_HEADER}`"))),
    }
    let mut meta: Option<PartitionMeta> = None;
    let mut assignments = Vec::new();
    for (i, raw) in lines {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#meta ") {
            meta = Some(serde_json::from_str(rest).map_err(|e| perr(lineno, e.to_string()))?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(perr(lineno, "expected `<sample_id> <expert_id>`".into()));
        };
        let id: usize = a
            .parse()
            .map_err(|e| perr(lineno, format!("sample id: {e}")))?;
        let e: usize = b
            .parse()
            .map_err(|e| perr(lineno, format!("expert id: {e}")))?;
        if id != assignments.len() {
            return Err(perr(
                lineno,
                format!("expected sample id {}", assignments.len()),
            ));
        }
        assignments.push(e);
    }
    let meta = meta.ok_or_else(|| perr(1, "missing #meta line".into()))?;
    Partition::from_assignments(corpus, assignments, meta.k, meta.method)
}

pub fn write_partition(path: &Path, partition: &Partition) -> Result<()> {
    write_text(path, &partition_to_string(partition)?)
}

pub fn read_partition(path: &Path, corpus: &Corpus) -> Result<Partition> {
    partition_from_str(&read_text(path)?, &path.display().to_string(), corpus)
}

/// Per-expert class histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub format_version: u32,
    pub k: usize,
    pub method: PartitionMethod,
    pub cluster_sizes: Vec<usize>,
    /// `composition[e][class] = count`, classes keyed as strings in JSON.
    pub composition: Vec<std::collections::BTreeMap<usize, usize>>,
}

impl CompositionReport {
    pub fn new(partition: &Partition) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            k: partition.k,
            method: partition.method,
            cluster_sizes: partition.cluster_sizes(),
            composition: partition.composition.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub state: ModelState,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| GraspError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_checkpoint(path: &Path, state: &ModelState) -> Result<()> {
    write_json(
        path,
        &Checkpoint {
            format_version: FORMAT_VERSION,
            state: state.clone(),
        },
    )
}

pub fn read_checkpoint(path: &Path) -> Result<ModelState> {
    let ck: Checkpoint = read_json(path)?;
    if ck.format_version != FORMAT_VERSION {
        return Err(GraspError::Config(format!(
            "checkpoint format version {} is not supported",
            ck.format_version
        )));
    }
    ck.state.adapters.validate()?;
    Ok(ck.state)
}
