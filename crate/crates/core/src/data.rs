//! Dataset ingestion, synthetic generation with planted ground truth, and
//! train/test splitting.
//!
//! Directory layout: `brain.ncmx`, `features.ncmx`, `captions.jsonl`
//! (one `{id, feature_ref, tokens}` object per line, labeled samples only),
//! and `meta.json` holding seed, dims, and per-sample split labels.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{read_matrix, write_matrix, Matrix, MathError};
use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{path}: {reason} at line {line}")]
    Parse { path: String, line: usize, reason: String },
    #[error("dataset inconsistency: {0}")]
    Inconsistent(String),
    #[error("invalid spec: {0}")]
    Spec(String),
}

/// One voxel-response sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BrainRecord {
    pub id: u64,
    pub voxels: Vec<f64>,
}

pub type FeatureVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    Unlabeled,
}

/// Synthetic-data recipe. Features are drawn around per-cluster centers,
/// brain vectors are a planted linear image of the features plus Gaussian
/// noise, and each cluster owns one caption template.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Caption-free samples reserved for unsupervised pretraining.
    pub n_unlabeled: usize,
    pub brain_dim: usize,
    pub feature_dim: usize,
    /// Standard deviation of the additive noise on brain vectors.
    pub noise_std: f64,
    /// Number of feature clusters = caption templates.
    pub n_clusters: usize,
    /// Standard deviation of feature jitter around cluster centers.
    pub feature_jitter: f64,
    /// Optional AR(1) coefficient giving the noise temporal autocorrelation
    /// across sample index; `None` keeps samples i.i.d.
    pub ar1_rho: Option<f64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            n_train: 200,
            n_test: 60,
            n_unlabeled: 300,
            brain_dim: 640,
            feature_dim: 64,
            noise_std: 0.1,
            n_clusters: 40,
            feature_jitter: 0.05,
            ar1_rho: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.brain_dim == 0 || self.feature_dim == 0 {
            return Err(DataError::Spec("dims must be >= 1".into()));
        }
        if self.n_train == 0 {
            return Err(DataError::Spec("n_train must be >= 1".into()));
        }
        if self.n_clusters == 0 {
            return Err(DataError::Spec("n_clusters must be >= 1".into()));
        }
        if self.noise_std < 0.0 || self.feature_jitter < 0.0 {
            return Err(DataError::Spec("noise and jitter must be >= 0".into()));
        }
        if let Some(rho) = self.ar1_rho {
            if !(0.0..1.0).contains(&rho) {
                return Err(DataError::Spec(format!("ar1 rho {rho} must be in [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub seed: u64,
    pub brain_dim: usize,
    pub feature_dim: usize,
    pub split: Vec<Split>,
    /// Where the data came from: a synth seed or a source path.
    pub provenance: String,
}

/// Aligned (brain, feature, optional caption) triples with split labels.
/// Row i of `brain` and `features` and `captions[i]` describe sample id i.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub brain: Matrix,
    pub features: Matrix,
    pub captions: Vec<Option<Vec<String>>>,
    pub meta: DatasetMeta,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.brain.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn brain_record(&self, id: usize) -> BrainRecord {
        BrainRecord { id: id as u64, voxels: self.brain.row(id).to_vec() }
    }

    pub fn ids_with_split(&self, split: Split) -> Vec<usize> {
        self.meta
            .split
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    fn select_rows(m: &Matrix, ids: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(ids.len() * m.cols());
        for &i in ids {
            data.extend_from_slice(m.row(i));
        }
        Matrix::from_raw(ids.len(), m.cols(), data)
    }

    pub fn brain_rows(&self, ids: &[usize]) -> Matrix {
        Self::select_rows(&self.brain, ids)
    }

    pub fn feature_rows(&self, ids: &[usize]) -> Matrix {
        Self::select_rows(&self.features, ids)
    }

    /// Labeled (feature, caption-words) pairs for the given split.
    pub fn caption_pairs(&self, split: Split) -> Vec<(usize, Vec<f64>, Vec<String>)> {
        self.ids_with_split(split)
            .into_iter()
            .filter_map(|i| {
                self.captions[i]
                    .as_ref()
                    .map(|c| (i, self.features.row(i).to_vec(), c.clone()))
            })
            .collect()
    }

    fn validate(&self) -> Result<(), DataError> {
        let n = self.brain.rows();
        if self.features.rows() != n {
            return Err(DataError::Inconsistent(format!(
                "{} brain rows vs {} feature rows",
                n,
                self.features.rows()
            )));
        }
        if self.captions.len() != n || self.meta.split.len() != n {
            return Err(DataError::Inconsistent(format!(
                "{} rows vs {} captions vs {} split labels",
                n,
                self.captions.len(),
                self.meta.split.len()
            )));
        }
        if self.meta.brain_dim != self.brain.cols() || self.meta.feature_dim != self.features.cols() {
            return Err(DataError::Inconsistent("meta dims do not match matrices".into()));
        }
        Ok(())
    }
}

/// Everything the generator planted, for oracle checks: the dataset, the
/// feature-to-brain map, the per-sample cluster, and the template list.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: PairedDataset,
    pub planted_map: Matrix,
    pub cluster_of: Vec<usize>,
    pub templates: Vec<Vec<String>>,
}

const SUBJECTS: [&str; 8] = ["man", "woman", "dog", "cat", "bird", "horse", "child", "surfer"];
const VERBS: [&str; 5] = ["riding", "holding", "watching", "chasing", "touching"];
const OBJECTS: [&str; 8] = ["wave", "ball", "kite", "bench", "train", "umbrella", "frisbee", "board"];
const PLACES: [&str; 5] = ["beach", "park", "street", "field", "room"];

/// Deterministic finite template grammar: template k is a fixed sentence
/// built from small word lists.
pub fn caption_templates(n: usize) -> Vec<Vec<String>> {
    (0..n)
        .map(|k| {
            let s = SUBJECTS[k % SUBJECTS.len()];
            let v = VERBS[(k / SUBJECTS.len()) % VERBS.len()];
            let o = OBJECTS[(k * 3 + 1) % OBJECTS.len()];
            let p = PLACES[(k * 7 + 2) % PLACES.len()];
            format!("a {s} is {v} a {o} at the {p}")
                .split_whitespace()
                .map(str::to_string)
                .collect()
        })
        .collect()
}

/// Generates a dataset from the spec: cluster centers and the planted map are
/// drawn first, then per-sample features, brain vectors, and captions. Fully
/// deterministic per seed.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput, DataError> {
    spec.validate()?;
    let n = spec.n_train + spec.n_test + spec.n_unlabeled;
    let templates = caption_templates(spec.n_clusters);

    let mut centers_rng = rng::stream(spec.seed, "synth-centers");
    let centers = Matrix::from_raw(
        spec.n_clusters,
        spec.feature_dim,
        (0..spec.n_clusters * spec.feature_dim)
            .map(|_| centers_rng.sample::<f64, _>(StandardNormal))
            .collect(),
    );

    let mut map_rng = rng::stream(spec.seed, "synth-map");
    let map_scale = 1.0 / (spec.feature_dim as f64).sqrt();
    let planted_map = Matrix::from_raw(
        spec.feature_dim,
        spec.brain_dim,
        (0..spec.feature_dim * spec.brain_dim)
            .map(|_| map_rng.sample::<f64, _>(StandardNormal) * map_scale)
            .collect(),
    );

    let mut sample_rng = rng::stream(spec.seed, "synth-samples");
    let mut noise_rng = rng::stream(spec.seed, "synth-noise");

    let mut features = Vec::with_capacity(n * spec.feature_dim);
    let mut cluster_of = Vec::with_capacity(n);
    for _ in 0..n {
        let k = sample_rng.random_range(0..spec.n_clusters);
        cluster_of.push(k);
        for d in 0..spec.feature_dim {
            let jitter: f64 = sample_rng.sample(StandardNormal);
            features.push(centers.at(k, d) + spec.feature_jitter * jitter);
        }
    }
    let features = Matrix::from_raw(n, spec.feature_dim, features);

    let mut brain = features.matmul_unchecked(&planted_map);
    if spec.noise_std > 0.0 {
        let rho = spec.ar1_rho.unwrap_or(0.0);
        let innovation_scale = if rho > 0.0 { (1.0 - rho * rho).sqrt() } else { 1.0 };
        let mut prev = vec![0.0; spec.brain_dim];
        for i in 0..n {
            for d in 0..spec.brain_dim {
                let eps: f64 = noise_rng.sample(StandardNormal);
                let e = if rho > 0.0 { rho * prev[d] + innovation_scale * eps } else { eps };
                prev[d] = e;
                let v = brain.at(i, d) + spec.noise_std * e;
                brain.set(i, d, v);
            }
        }
    }

    let mut split = Vec::with_capacity(n);
    split.extend(std::iter::repeat_n(Split::Train, spec.n_train));
    split.extend(std::iter::repeat_n(Split::Test, spec.n_test));
    split.extend(std::iter::repeat_n(Split::Unlabeled, spec.n_unlabeled));

    let captions: Vec<Option<Vec<String>>> = (0..n)
        .map(|i| match split[i] {
            Split::Unlabeled => None,
            _ => Some(templates[cluster_of[i]].clone()),
        })
        .collect();

    let meta = DatasetMeta {
        format_version: 1,
        seed: spec.seed,
        brain_dim: spec.brain_dim,
        feature_dim: spec.feature_dim,
        split,
        provenance: format!("synth seed {}", spec.seed),
    };
    let dataset = PairedDataset { brain, features, captions, meta };
    dataset.validate()?;
    Ok(SynthOutput { dataset, planted_map, cluster_of, templates })
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptionLine {
    id: u64,
    feature_ref: u64,
    tokens: Vec<String>,
}

pub fn save_dataset(ds: &PairedDataset, dir: &Path) -> Result<(), DataError> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| DataError::Io(dir.display().to_string(), e))?;
    write_matrix(&ds.brain, &dir.join("brain.ncmx"))?;
    write_matrix(&ds.features, &dir.join("features.ncmx"))?;

    let cap_path = dir.join("captions.jsonl");
    let mut out = fs::File::create(&cap_path).map_err(|e| DataError::Io(cap_path.display().to_string(), e))?;
    for (i, caption) in ds.captions.iter().enumerate() {
        if let Some(tokens) = caption {
            let line = CaptionLine { id: i as u64, feature_ref: i as u64, tokens: tokens.clone() };
            let json = serde_json::to_string(&line)
                .map_err(|e| DataError::Inconsistent(format!("caption serialization: {e}")))?;
            writeln!(out, "{json}").map_err(|e| DataError::Io(cap_path.display().to_string(), e))?;
        }
    }

    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&ds.meta)
        .map_err(|e| DataError::Inconsistent(format!("meta serialization: {e}")))?;
    fs::write(&meta_path, json).map_err(|e| DataError::Io(meta_path.display().to_string(), e))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<PairedDataset, DataError> {
    let meta_path = dir.join("meta.json");
    let meta_text =
        fs::read_to_string(&meta_path).map_err(|e| DataError::Io(meta_path.display().to_string(), e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| DataError::Parse {
        path: meta_path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })?;

    let brain = read_matrix(&dir.join("brain.ncmx"))?;
    let features = read_matrix(&dir.join("features.ncmx"))?;

    let cap_path = dir.join("captions.jsonl");
    let file = fs::File::open(&cap_path).map_err(|e| DataError::Io(cap_path.display().to_string(), e))?;
    let mut captions: Vec<Option<Vec<String>>> = vec![None; brain.rows()];
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::Io(cap_path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CaptionLine = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: cap_path.display().to_string(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        if parsed.id as usize >= brain.rows() {
            return Err(DataError::Parse {
                path: cap_path.display().to_string(),
                line: lineno + 1,
                reason: format!("id {} out of range for {} samples", parsed.id, brain.rows()),
            });
        }
        if parsed.feature_ref as usize >= features.rows() {
            return Err(DataError::Parse {
                path: cap_path.display().to_string(),
                line: lineno + 1,
                reason: format!("feature_ref {} out of range", parsed.feature_ref),
            });
        }
        if !seen.insert(parsed.id) {
            return Err(DataError::Parse {
                path: cap_path.display().to_string(),
                line: lineno + 1,
                reason: format!("duplicate id {}", parsed.id),
            });
        }
        captions[parsed.id as usize] = Some(parsed.tokens);
    }

    let ds = PairedDataset { brain, features, captions, meta };
    ds.validate()?;
    Ok(ds)
}

/// Re-partitions the labeled samples into train/test with a seeded shuffle;
/// unlabeled samples keep their label. Disjoint and exhaustive.
pub fn split(ds: &PairedDataset, train_fraction: f64, seed: u64) -> Result<PairedDataset, DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::Spec(format!("train fraction {train_fraction} must be in (0, 1)")));
    }
    let mut labeled: Vec<usize> = ds
        .meta
        .split
        .iter()
        .enumerate()
        .filter(|(_, &s)| s != Split::Unlabeled)
        .map(|(i, _)| i)
        .collect();
    let mut r = rng::stream(seed, "split");
    for i in (1..labeled.len()).rev() {
        let j = r.random_range(0..=i);
        labeled.swap(i, j);
    }
    let n_train = ((labeled.len() as f64) * train_fraction).round() as usize;
    let n_train = n_train.clamp(1, labeled.len().saturating_sub(1).max(1));

    let mut new_split = ds.meta.split.clone();
    for (rank, &id) in labeled.iter().enumerate() {
        new_split[id] = if rank < n_train { Split::Train } else { Split::Test };
    }
    let mut out = ds.clone();
    out.meta.split = new_split;
    Ok(out)
}
