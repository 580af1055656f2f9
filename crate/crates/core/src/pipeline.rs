//! Composition of the two stages plus voxel selection and feature-space
//! retrieval: predict features from voxel responses, decode captions from
//! the predicted features, select voxel subsets by score threshold, and
//! scan a feature database for nearest neighbors under MSE.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::decoder::{generate_beam, generate_greedy, DecoderError, GenConfig, LanguageModel, TokenSequence};
use crate::math::{read_matrix, write_matrix, Matrix, MathError};
use crate::regressors::{RegressorError, RegressorModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid threshold: {0}")]
    Threshold(String),
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{path}: {reason} at line {line}")]
    Parse { path: String, line: usize, reason: String },
    #[error("empty database")]
    EmptyDatabase,
}

/// Boolean voxel selection derived from per-voxel scores at a threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMask {
    selected: Vec<bool>,
    threshold: f64,
}

impl VoxelMask {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&b| b).count()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sorted index list, one per line.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut out = String::new();
        for i in self.indices() {
            out.push_str(&i.to_string());
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| PipelineError::Io(path.display().to_string(), e))
    }

    /// Rebuilds a mask from an index-list file; the total voxel count is not
    /// stored in the file, so the caller supplies it.
    pub fn load(path: &Path, total: usize) -> Result<VoxelMask, PipelineError> {
        let text =
            fs::read_to_string(path).map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
        let mut selected = vec![false; total];
        let mut prev: Option<usize> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let idx: usize = line.parse().map_err(|_| PipelineError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: format!("bad index {line:?}"),
            })?;
            if idx >= total {
                return Err(PipelineError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    reason: format!("index {idx} out of range for {total} voxels"),
                });
            }
            if let Some(p) = prev {
                if idx <= p {
                    return Err(PipelineError::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        reason: "indices must be strictly increasing".into(),
                    });
                }
            }
            prev = Some(idx);
            selected[idx] = true;
        }
        Ok(VoxelMask { selected, threshold: f64::NAN })
    }
}

/// Selects voxels whose score is strictly greater than the threshold.
pub fn select_voxels(scores: &[f64], threshold: f64) -> Result<VoxelMask, PipelineError> {
    if threshold.is_nan() {
        return Err(PipelineError::Threshold("threshold is NaN".into()));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(PipelineError::Threshold(format!("non-finite score {bad}")));
    }
    let selected = scores.iter().map(|&s| s > threshold).collect();
    Ok(VoxelMask { selected, threshold })
}

/// Reduces a voxel vector to the selected entries, preserving index order.
/// Unselected entries are never read, so they may be arbitrary.
pub fn apply_mask(x: &[f64], mask: &VoxelMask) -> Result<Vec<f64>, PipelineError> {
    if x.len() != mask.len() {
        return Err(PipelineError::Dim(format!(
            "vector has {} entries, mask covers {}",
            x.len(),
            mask.len()
        )));
    }
    Ok(x.iter()
        .zip(&mask.selected)
        .filter(|(_, &keep)| keep)
        .map(|(&v, _)| v)
        .collect())
}

/// Parses a per-voxel score CSV with `index,score` rows (a non-numeric
/// header line is skipped). Indices must be the contiguous range 0..n.
pub fn read_scores_csv(path: &Path) -> Result<Vec<f64>, PipelineError> {
    let text =
        fs::read_to_string(path).map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
    let mut scores = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let idx_raw = parts.next().unwrap_or("").trim();
        let score_raw = parts.next().unwrap_or("").trim();
        let Ok(idx) = idx_raw.parse::<usize>() else {
            if lineno == 0 {
                continue; // header
            }
            return Err(PipelineError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: format!("bad index {idx_raw:?}"),
            });
        };
        let score: f64 = score_raw.parse().map_err(|_| PipelineError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            reason: format!("bad score {score_raw:?}"),
        })?;
        if idx != scores.len() {
            return Err(PipelineError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: format!("expected index {}, found {idx}", scores.len()),
            });
        }
        scores.push(score);
    }
    Ok(scores)
}

pub fn write_scores_csv(scores: &[f64], path: &Path) -> Result<(), PipelineError> {
    let mut out = String::from("index,score\n");
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    fs::write(path, out).map_err(|e| PipelineError::Io(path.display().to_string(), e))
}

/// Id-indexed feature collection; ids are row indices. On disk this is a
/// plain matrix file (header carries count and dim).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDatabase {
    vectors: Matrix,
    refs: Option<Vec<String>>,
}

impl FeatureDatabase {
    pub fn new(vectors: Matrix) -> FeatureDatabase {
        FeatureDatabase { vectors, refs: None }
    }

    pub fn with_refs(vectors: Matrix, refs: Vec<String>) -> Result<FeatureDatabase, PipelineError> {
        if refs.len() != vectors.rows() {
            return Err(PipelineError::Dim(format!(
                "{} refs for {} vectors",
                refs.len(),
                vectors.rows()
            )));
        }
        Ok(FeatureDatabase { vectors, refs: Some(refs) })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, id: u64) -> &[f64] {
        self.vectors.row(id as usize)
    }

    pub fn source_ref(&self, id: u64) -> Option<&str> {
        self.refs.as_ref().and_then(|r| r.get(id as usize)).map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        Ok(write_matrix(&self.vectors, path)?)
    }

    pub fn load(path: &Path) -> Result<FeatureDatabase, PipelineError> {
        Ok(FeatureDatabase::new(read_matrix(path)?))
    }
}

/// Exact brute-force k-nearest scan under mean squared distance, ascending,
/// ties broken by id.
pub fn retrieve_similar(
    query: &[f64],
    db: &FeatureDatabase,
    k: usize,
) -> Result<Vec<(u64, f64)>, PipelineError> {
    assert!(k >= 1, "k must be >= 1");
    if db.is_empty() {
        return Err(PipelineError::EmptyDatabase);
    }
    if query.len() != db.dim() {
        return Err(PipelineError::Dim(format!(
            "query dim {} vs database dim {}",
            query.len(),
            db.dim()
        )));
    }
    let mut scored: Vec<(u64, f64)> = (0..db.len())
        .map(|i| {
            let row = db.vectors.row(i);
            let mse = query
                .iter()
                .zip(row)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / query.len() as f64;
            (i as u64, mse)
        })
        .collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// The composed model: caption generation from voxel responses alone, by
/// running the regressor and handing its predicted feature to the decoder.
/// Exactly `generate(lm, predict(regressor, x))`.
pub fn decode_brain(
    regressor: &RegressorModel,
    lm: &LanguageModel,
    x: &[f64],
    gen: &GenConfig,
) -> Result<TokenSequence, PipelineError> {
    let feature = regressor.predict(x)?;
    if gen.beam_width <= 1 {
        Ok(generate_greedy(lm, &feature, gen.max_len)?)
    } else {
        let mut ranked = generate_beam(lm, &feature, gen.beam_width, gen.max_len)?;
        Ok(ranked.swap_remove(0).0)
    }
}

/// N-best decode through the composed model.
pub fn decode_brain_nbest(
    regressor: &RegressorModel,
    lm: &LanguageModel,
    x: &[f64],
    gen: &GenConfig,
) -> Result<Vec<(TokenSequence, f64)>, PipelineError> {
    let feature = regressor.predict(x)?;
    Ok(generate_beam(lm, &feature, gen.beam_width.max(1), gen.max_len)?)
}

/// Width-best beam outputs per feature, used as that sample's reference set
/// when no human captions exist.
pub fn make_pseudo_groundtruth(
    lm: &LanguageModel,
    features: &Matrix,
    width: usize,
    max_len: usize,
) -> Result<Vec<Vec<TokenSequence>>, PipelineError> {
    let mut out = Vec::with_capacity(features.rows());
    for i in 0..features.rows() {
        let ranked = generate_beam(lm, features.row(i), width, max_len)?;
        out.push(ranked.into_iter().map(|(seq, _)| seq).collect());
    }
    Ok(out)
}

/// JSONL caption record shared by decode output and eval input.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CaptionRecord {
    pub id: u64,
    pub captions: Vec<RankedCaption>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RankedCaption {
    pub rank: usize,
    pub log_prob: f64,
    pub tokens: Vec<String>,
}

pub fn write_caption_jsonl(records: &[CaptionRecord], path: &Path) -> Result<(), PipelineError> {
    let mut out = fs::File::create(path).map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| PipelineError::Parse { path: path.display().to_string(), line: 0, reason: e.to_string() })?;
        writeln!(out, "{line}").map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_caption_jsonl(path: &Path) -> Result<Vec<CaptionRecord>, PipelineError> {
    let text =
        fs::read_to_string(path).map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| PipelineError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::Vocabulary;
    use crate::regressors::{ridge_fit, RidgeModel};

    #[test]
    fn threshold_below_min_selects_all() {
        let mask = select_voxels(&[0.3, 0.1, 0.0], -1.0).unwrap();
        assert_eq!(mask.count(), 3);
    }

    #[test]
    fn strict_greater_comparison() {
        let mask = select_voxels(&[0.3, 0.1, 0.0], 0.15).unwrap();
        assert_eq!(mask.count(), 1);
        assert_eq!(mask.indices(), vec![0]);
        // Exactly-at-threshold scores are not selected.
        let at = select_voxels(&[0.15], 0.15).unwrap();
        assert_eq!(at.count(), 0);
    }

    #[test]
    fn nan_threshold_rejected() {
        assert!(select_voxels(&[0.1], f64::NAN).is_err());
    }

    #[test]
    fn monotone_in_threshold() {
        let scores: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let thresholds = [0.05, 0.1, 0.15, 0.2];
        let masks: Vec<VoxelMask> =
            thresholds.iter().map(|&t| select_voxels(&scores, t).unwrap()).collect();
        for w in masks.windows(2) {
            assert!(w[1].count() <= w[0].count());
            for (a, b) in w[0].selected().iter().zip(w[1].selected()) {
                assert!(!b || *a, "higher threshold selected a voxel the lower one dropped");
            }
        }
    }

    #[test]
    fn apply_mask_preserves_order_and_ignores_unselected() {
        let mask = select_voxels(&[1.0, -1.0, 1.0], 0.0).unwrap();
        let out = apply_mask(&[10.0, f64::NAN, 30.0], &mask).unwrap();
        assert_eq!(out, vec![10.0, 30.0]);
        let all = select_voxels(&[1.0, 1.0, 1.0], 0.0).unwrap();
        assert_eq!(apply_mask(&[1.0, 2.0, 3.0], &all).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(apply_mask(&[1.0], &mask).is_err());
    }

    #[test]
    fn mask_save_load_round_trip() {
        let mask = select_voxels(&[0.5, 0.0, 0.7, 0.1, 0.9], 0.2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.txt");
        mask.save(&path).unwrap();
        let back = VoxelMask::load(&path, 5).unwrap();
        assert_eq!(mask.selected(), back.selected());
    }

    #[test]
    fn scores_csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let scores = vec![0.05, -0.2, 0.31];
        write_scores_csv(&scores, &path).unwrap();
        let back = read_scores_csv(&path).unwrap();
        assert_eq!(scores, back);
    }

    #[test]
    fn retrieval_finds_self_first() {
        let db = FeatureDatabase::new(
            Matrix::from_vec(3, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]).unwrap(),
        );
        let hits = retrieve_similar(&[1.0, 1.0], &db, 1).unwrap();
        assert_eq!(hits[0].0, 1);
        assert_eq!(hits[0].1, 0.0);
    }

    #[test]
    fn retrieval_hand_computed_ordering() {
        let db = FeatureDatabase::new(
            Matrix::from_vec(3, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]).unwrap(),
        );
        let hits = retrieve_similar(&[0.9, 0.9], &db, 2).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].0, 1);
        assert_eq!(hits[1].0, 0);
        assert!(hits[0].1 <= hits[1].1);
        // Recomputing a returned distance from raw vectors matches.
        let d: f64 = db.vector(1).iter().zip([0.9, 0.9]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 2.0;
        assert!((hits[0].1 - d).abs() < 1e-15);
    }

    #[test]
    fn retrieval_ties_break_by_id() {
        let db = FeatureDatabase::new(
            Matrix::from_vec(3, 1, vec![1.0, -1.0, 2.0]).unwrap(),
        );
        // Distances 1, 1, 4: the tie between ids 0 and 1 resolves by id.
        let hits = retrieve_similar(&[0.0], &db, 3).unwrap();
        assert_eq!(hits[0].0, 0);
        assert_eq!(hits[1].0, 1);
        assert_eq!(hits[2].0, 2);
    }

    #[test]
    fn retrieval_validates_inputs() {
        let db = FeatureDatabase::new(Matrix::zeros(0, 2));
        assert!(matches!(retrieve_similar(&[0.0, 0.0], &db, 1), Err(PipelineError::EmptyDatabase)));
        let db = FeatureDatabase::new(Matrix::zeros(2, 2));
        assert!(matches!(retrieve_similar(&[0.0], &db, 1), Err(PipelineError::Dim(_))));
    }

    fn identity_regressor(dim: usize) -> RegressorModel {
        RegressorModel::Ridge(RidgeModel {
            weights: Matrix::identity(dim),
            bias: Matrix::zeros(1, dim),
            lambda: 0.0,
            input_norm: None,
        })
    }

    fn toy_lm(feature_dim: usize) -> LanguageModel {
        let caps: Vec<Vec<String>> = vec![vec!["a".into(), "b".into(), "a".into(), "b".into()]];
        let vocab = Vocabulary::build(caps.iter().map(Vec::as_slice), 1);
        LanguageModel::new(vocab, feature_dim, 4, 6, 42)
    }

    #[test]
    fn decode_brain_equals_direct_feature_decode() {
        let lm = toy_lm(3);
        let reg = identity_regressor(3);
        let x = vec![0.2, -0.4, 0.6];
        let gen = GenConfig { max_len: 5, beam_width: 1, allow_unk: false };
        let via_pipeline = decode_brain(&reg, &lm, &x, &gen).unwrap();
        let direct = generate_greedy(&lm, &x, 5).unwrap();
        assert_eq!(via_pipeline, direct);

        // Beam path composes identically too.
        let gen_beam = GenConfig { max_len: 5, beam_width: 3, allow_unk: false };
        let nbest = decode_brain_nbest(&reg, &lm, &x, &gen_beam).unwrap();
        let direct_beam = generate_beam(&lm, &x, 3, 5).unwrap();
        assert_eq!(nbest.len(), direct_beam.len());
        for (a, b) in nbest.iter().zip(&direct_beam) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.to_bits(), b.1.to_bits());
        }
    }

    #[test]
    fn masked_regressor_never_reads_unselected_voxels() {
        // Train on masked inputs, then poison the unselected entries of the
        // raw vector with NaN: the pipeline output must be unchanged.
        let scores = vec![0.9, 0.0, 0.8, 0.1, 0.7];
        let mask = select_voxels(&scores, 0.5).unwrap();
        let x_full = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let x_masked = apply_mask(&x_full, &mask).unwrap();

        let train_x = Matrix::from_vec(3, 3, vec![1.0, 3.0, 5.0, 0.5, 1.0, 2.0, -1.0, 0.0, 1.0]).unwrap();
        let train_y = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]).unwrap();
        let reg = RegressorModel::Ridge(ridge_fit(&train_x, &train_y, 0.1, true).unwrap());

        let clean = reg.predict(&x_masked).unwrap();
        let mut poisoned = x_full.clone();
        poisoned[1] = f64::NAN;
        poisoned[3] = f64::NAN;
        let masked_poisoned = apply_mask(&poisoned, &mask).unwrap();
        let dirty = reg.predict(&masked_poisoned).unwrap();
        assert_eq!(clean, dirty);
    }

    #[test]
    fn pseudo_groundtruth_width_one_is_greedy() {
        let lm = toy_lm(2);
        let features = Matrix::from_vec(2, 2, vec![0.1, 0.9, -0.3, 0.4]).unwrap();
        let refs = make_pseudo_groundtruth(&lm, &features, 1, 4).unwrap();
        for (i, set) in refs.iter().enumerate() {
            assert_eq!(set.len(), 1);
            let greedy = generate_greedy(&lm, features.row(i), 4).unwrap();
            assert_eq!(set[0], greedy);
        }
    }

    #[test]
    fn caption_jsonl_round_trip() {
        let records = vec![CaptionRecord {
            id: 3,
            captions: vec![RankedCaption { rank: 0, log_prob: -0.5, tokens: vec!["a".into(), "cat".into()] }],
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("caps.jsonl");
        write_caption_jsonl(&records, &path).unwrap();
        let back = read_caption_jsonl(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].id, 3);
        assert_eq!(back[0].captions[0].tokens, vec!["a", "cat"]);
    }
}
