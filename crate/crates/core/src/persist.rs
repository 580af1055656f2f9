//! Checkpoint serialization for every model kind and optimizer state.
//!
//! One container format: magic "NCCK", version u32, kind tag, architecture
//! descriptor, a JSON config record, named matrix entries (each an embedded
//! NCMX block), and a trailing CRC-64/XZ of everything before it. Saves are
//! atomic (write temp, then rename); loads parse fully before constructing
//! anything, so failures never leave a partial model.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::decoder::{LanguageModel, LmTrainState, LstmLayer, Vocabulary};
use crate::math::{matrix_from_bytes, matrix_to_bytes, Matrix, MathError};
use crate::optim::{AdamConfig, AdamState};
use crate::regressors::{
    Activation, AutoencoderStack, MlpLayer, MlpModel, RegressorModel, RidgeModel, Standardizer,
};

pub const NCCK_MAGIC: [u8; 4] = *b"NCCK";
pub const NCCK_VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{path}: bad magic, not a checkpoint file")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { path: String, found: u32, expected: u32 },
    #[error("{path}: checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    ChecksumMismatch { path: String, stored: u64, computed: u64 },
    #[error("checkpoint kind {found:?} does not match expected {expected:?}")]
    KindMismatch { found: String, expected: String },
    #[error("{path}: truncated at byte offset {offset}")]
    Truncated { path: String, offset: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// In-memory checkpoint: kind tag, architecture descriptor, free-form config
/// record, and named parameter matrices.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub arch: Vec<u64>,
    pub config: Value,
    pub entries: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn entry(&self, name: &str) -> Result<&Matrix, PersistError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| PersistError::Malformed(format!("missing entry {name:?}")))
    }

    pub fn has_entry(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn expect_kind(&self, expected: &str) -> Result<(), PersistError> {
        if self.kind != expected {
            return Err(PersistError::KindMismatch { found: self.kind.clone(), expected: expected.to_string() });
        }
        Ok(())
    }
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&NCCK_MAGIC);
    buf.extend_from_slice(&NCCK_VERSION.to_le_bytes());
    push_str(&mut buf, &ckpt.kind);
    buf.extend_from_slice(&(ckpt.arch.len() as u32).to_le_bytes());
    for d in &ckpt.arch {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    push_str(&mut buf, &ckpt.config.to_string());
    buf.extend_from_slice(&(ckpt.entries.len() as u32).to_le_bytes());
    for (name, m) in &ckpt.entries {
        push_str(&mut buf, name);
        buf.extend_from_slice(&matrix_to_bytes(m));
    }
    let crc = CRC64.checksum(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        if self.pos + n > self.bytes.len() {
            return Err(PersistError::Truncated { path: self.path.to_string(), offset: self.bytes.len() });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, PersistError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|e| PersistError::Malformed(format!("non-utf8 string: {e}")))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8], path: &str) -> Result<Checkpoint, PersistError> {
    if bytes.len() < 16 {
        return Err(PersistError::Truncated { path: path.to_string(), offset: bytes.len() });
    }
    if bytes[0..4] != NCCK_MAGIC {
        return Err(PersistError::BadMagic { path: path.to_string() });
    }
    let body_len = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = CRC64.checksum(&bytes[..body_len]);
    if stored != computed {
        return Err(PersistError::ChecksumMismatch { path: path.to_string(), stored, computed });
    }

    let mut r = Reader { bytes: &bytes[..body_len], pos: 4, path };
    let version = r.u32()?;
    if version != NCCK_VERSION {
        return Err(PersistError::VersionMismatch { path: path.to_string(), found: version, expected: NCCK_VERSION });
    }
    let kind = r.string()?;
    let arch_len = r.u32()? as usize;
    let mut arch = Vec::with_capacity(arch_len);
    for _ in 0..arch_len {
        arch.push(r.u64()?);
    }
    let config: Value = serde_json::from_str(&r.string()?)
        .map_err(|e| PersistError::Malformed(format!("config record: {e}")))?;
    let n_entries = r.u32()? as usize;
    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name = r.string()?;
        let (m, used) = matrix_from_bytes(&r.bytes[r.pos..], path, r.pos as u64)?;
        r.pos += used;
        entries.push((name, m));
    }
    if r.pos != body_len {
        return Err(PersistError::Malformed(format!("{} trailing bytes before checksum", body_len - r.pos)));
    }
    Ok(Checkpoint { kind, arch, config, entries })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), PersistError> {
    let bytes = checkpoint_to_bytes(ckpt);
    let io_err = |e| PersistError::Io(path.display().to_string(), e);
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(&bytes).map_err(io_err)?;
    tmp.persist(path).map_err(|e| PersistError::Io(path.display().to_string(), e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PersistError> {
    let bytes = fs::read(path).map_err(|e| PersistError::Io(path.display().to_string(), e))?;
    checkpoint_from_bytes(&bytes, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Model conversions
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct NormRecord {
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn norm_to_value(norm: &Option<Standardizer>) -> Value {
    match norm {
        Some(s) => serde_json::json!({ "mean": s.mean, "std": s.std }),
        None => Value::Null,
    }
}

fn norm_from_value(v: &Value) -> Result<Option<Standardizer>, PersistError> {
    if v.is_null() {
        return Ok(None);
    }
    let rec: NormRecord = serde_json::from_value(v.clone())
        .map_err(|e| PersistError::Malformed(format!("input-norm record: {e}")))?;
    Ok(Some(Standardizer { mean: rec.mean, std: rec.std }))
}

pub const KIND_RIDGE: &str = "ridge";
pub const KIND_LM: &str = "lm";
pub const KIND_AE: &str = "ae";

/// MLP kinds are derived from the architecture descriptor: three sizes is the
/// three-layer network, five the five-layer one.
pub fn mlp_kind(arch_len: usize) -> String {
    match arch_len {
        3 => "mlp3".to_string(),
        5 => "dnn5".to_string(),
        n => format!("mlp{n}"),
    }
}

pub fn ridge_to_checkpoint(model: &RidgeModel) -> Checkpoint {
    Checkpoint {
        kind: KIND_RIDGE.to_string(),
        arch: vec![model.input_dim() as u64, model.output_dim() as u64],
        config: serde_json::json!({
            "lambda": model.lambda,
            "input_norm": norm_to_value(&model.input_norm),
        }),
        entries: vec![
            ("weights".to_string(), model.weights.clone()),
            ("bias".to_string(), model.bias.clone()),
        ],
    }
}

pub fn ridge_from_checkpoint(ckpt: &Checkpoint) -> Result<RidgeModel, PersistError> {
    ckpt.expect_kind(KIND_RIDGE)?;
    let lambda = ckpt.config["lambda"]
        .as_f64()
        .ok_or_else(|| PersistError::Malformed("missing lambda".into()))?;
    Ok(RidgeModel {
        weights: ckpt.entry("weights")?.clone(),
        bias: ckpt.entry("bias")?.clone(),
        lambda,
        input_norm: norm_from_value(&ckpt.config["input_norm"])?,
    })
}

fn activation_to_str(a: Option<Activation>) -> &'static str {
    match a {
        Some(Activation::Relu) => "relu",
        Some(Activation::Sigmoid) => "sigmoid",
        None => "linear",
    }
}

fn activation_from_str(s: &str) -> Result<Option<Activation>, PersistError> {
    match s {
        "relu" => Ok(Some(Activation::Relu)),
        "sigmoid" => Ok(Some(Activation::Sigmoid)),
        "linear" => Ok(None),
        other => Err(PersistError::Malformed(format!("unknown activation {other:?}"))),
    }
}

pub fn mlp_to_checkpoint(model: &MlpModel) -> Checkpoint {
    let arch: Vec<u64> = model.arch().iter().map(|&d| d as u64).collect();
    let activations: Vec<&str> =
        model.layers.iter().map(|l| activation_to_str(l.activation)).collect();
    let mut entries = Vec::with_capacity(model.layers.len() * 2);
    for (i, layer) in model.layers.iter().enumerate() {
        entries.push((format!("layer.{i}.w"), layer.w.clone()));
        entries.push((format!("layer.{i}.b"), layer.b.clone()));
    }
    Checkpoint {
        kind: mlp_kind(arch.len()),
        arch,
        config: serde_json::json!({
            "activations": activations,
            "input_norm": norm_to_value(&model.input_norm),
        }),
        entries,
    }
}

pub fn mlp_from_checkpoint(ckpt: &Checkpoint) -> Result<MlpModel, PersistError> {
    if ckpt.kind != mlp_kind(ckpt.arch.len()) {
        return Err(PersistError::KindMismatch {
            found: ckpt.kind.clone(),
            expected: mlp_kind(ckpt.arch.len()),
        });
    }
    let acts = ckpt.config["activations"]
        .as_array()
        .ok_or_else(|| PersistError::Malformed("missing activations".into()))?;
    let n_layers = ckpt.arch.len().saturating_sub(1);
    if acts.len() != n_layers {
        return Err(PersistError::Malformed(format!(
            "{} activations for {} layers",
            acts.len(),
            n_layers
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let act = activation_from_str(acts[i].as_str().unwrap_or("?"))?;
        layers.push(MlpLayer {
            w: ckpt.entry(&format!("layer.{i}.w"))?.clone(),
            b: ckpt.entry(&format!("layer.{i}.b"))?.clone(),
            activation: act,
        });
    }
    Ok(MlpModel { layers, input_norm: norm_from_value(&ckpt.config["input_norm"])? })
}

pub fn ae_to_checkpoint(stack: &AutoencoderStack) -> Checkpoint {
    let mut arch = vec![stack.encoders[0].w.rows() as u64];
    arch.extend(stack.encoders.iter().map(|l| l.w.cols() as u64));
    let activations: Vec<&str> =
        stack.encoders.iter().map(|l| activation_to_str(l.activation)).collect();
    let mut entries = Vec::new();
    for (i, layer) in stack.encoders.iter().enumerate() {
        entries.push((format!("enc.{i}.w"), layer.w.clone()));
        entries.push((format!("enc.{i}.b"), layer.b.clone()));
    }
    Checkpoint {
        kind: KIND_AE.to_string(),
        arch,
        config: serde_json::json!({
            "activations": activations,
            "loss_curves": stack.loss_curves,
        }),
        entries,
    }
}

pub fn ae_from_checkpoint(ckpt: &Checkpoint) -> Result<AutoencoderStack, PersistError> {
    ckpt.expect_kind(KIND_AE)?;
    let acts = ckpt.config["activations"]
        .as_array()
        .ok_or_else(|| PersistError::Malformed("missing activations".into()))?;
    let n = ckpt.arch.len().saturating_sub(1);
    let mut encoders = Vec::with_capacity(n);
    for i in 0..n {
        encoders.push(MlpLayer {
            w: ckpt.entry(&format!("enc.{i}.w"))?.clone(),
            b: ckpt.entry(&format!("enc.{i}.b"))?.clone(),
            activation: activation_from_str(acts[i].as_str().unwrap_or("?"))?,
        });
    }
    let loss_curves: Vec<Vec<f64>> = serde_json::from_value(ckpt.config["loss_curves"].clone())
        .unwrap_or_default();
    Ok(AutoencoderStack { encoders, loss_curves })
}

/// `with_state` additionally embeds Adam moments and the epoch counter so
/// training can resume exactly.
pub fn lm_to_checkpoint(model: &LanguageModel, state: Option<(&[AdamState], usize)>) -> Checkpoint {
    let mut entries: Vec<(String, Matrix)> = model
        .named_params()
        .into_iter()
        .map(|(n, m)| (n, m.clone()))
        .collect();
    let mut config = serde_json::json!({
        "vocab": model.vocab.tokens(),
        "min_count": model.vocab.min_count(),
    });
    if let Some((opt, epochs_done)) = state {
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let mut ts = Vec::with_capacity(opt.len());
        let mut adam_cfg: Option<AdamConfig> = None;
        for (name, st) in names.iter().zip(opt) {
            entries.push((format!("adam.{name}.m"), st.m.clone()));
            entries.push((format!("adam.{name}.v"), st.v.clone()));
            ts.push(st.t);
            adam_cfg.get_or_insert(st.cfg);
        }
        config["opt"] = serde_json::json!({
            "t": ts,
            "epochs_done": epochs_done,
            "adam": adam_cfg,
        });
    }
    Checkpoint {
        kind: KIND_LM.to_string(),
        arch: vec![
            model.feature_dim() as u64,
            model.embed_dim() as u64,
            model.hidden_dim() as u64,
            model.vocab_size() as u64,
        ],
        config,
        entries,
    }
}

pub fn lm_from_checkpoint(ckpt: &Checkpoint) -> Result<LanguageModel, PersistError> {
    ckpt.expect_kind(KIND_LM)?;
    let tokens: Vec<String> = serde_json::from_value(ckpt.config["vocab"].clone())
        .map_err(|e| PersistError::Malformed(format!("vocab record: {e}")))?;
    let min_count = ckpt.config["min_count"].as_u64().unwrap_or(1) as usize;
    let vocab = Vocabulary::from_tokens(tokens, min_count)
        .map_err(|e| PersistError::Malformed(format!("vocab record: {e}")))?;

    let mut model = LanguageModel::new(vocab, 1, 1, 1, 0);
    model.embedding = ckpt.entry("embedding")?.clone();
    model.layers = (0..2)
        .map(|l| {
            Ok(LstmLayer {
                w_x: ckpt.entry(&format!("lstm{l}.w_x"))?.clone(),
                w_h: ckpt.entry(&format!("lstm{l}.w_h"))?.clone(),
                b: ckpt.entry(&format!("lstm{l}.b"))?.clone(),
            })
        })
        .collect::<Result<Vec<_>, PersistError>>()?;
    model.proj_w = ckpt.entry("proj_w")?.clone();
    model.proj_b = ckpt.entry("proj_b")?.clone();
    model.feat_w = ckpt.entry("feat_w")?.clone();
    model.feat_b = ckpt.entry("feat_b")?.clone();

    if model.vocab_size() != model.vocab.size() {
        return Err(PersistError::Malformed(format!(
            "embedding rows {} vs vocabulary size {}",
            model.vocab_size(),
            model.vocab.size()
        )));
    }
    Ok(model)
}

/// Restores a full training state; fails if the checkpoint lacks
/// optimizer entries.
pub fn lm_state_from_checkpoint(ckpt: &Checkpoint) -> Result<LmTrainState, PersistError> {
    let model = lm_from_checkpoint(ckpt)?;
    let opt_rec = &ckpt.config["opt"];
    if opt_rec.is_null() {
        return Err(PersistError::Malformed("checkpoint has no optimizer state".into()));
    }
    let ts: Vec<u64> = serde_json::from_value(opt_rec["t"].clone())
        .map_err(|e| PersistError::Malformed(format!("opt.t: {e}")))?;
    let epochs_done = opt_rec["epochs_done"]
        .as_u64()
        .ok_or_else(|| PersistError::Malformed("opt.epochs_done missing".into()))? as usize;
    let adam: AdamConfig = serde_json::from_value(opt_rec["adam"].clone())
        .map_err(|e| PersistError::Malformed(format!("opt.adam: {e}")))?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if ts.len() != names.len() {
        return Err(PersistError::Malformed("optimizer state count mismatch".into()));
    }
    let mut opt = Vec::with_capacity(names.len());
    for (name, t) in names.iter().zip(ts) {
        opt.push(AdamState {
            m: ckpt.entry(&format!("adam.{name}.m"))?.clone(),
            v: ckpt.entry(&format!("adam.{name}.v"))?.clone(),
            t,
            cfg: adam,
        });
    }
    Ok(LmTrainState::from_parts(model, opt, epochs_done))
}

/// Loads a checkpoint as whichever regressor kind it holds.
pub fn regressor_from_checkpoint(ckpt: &Checkpoint) -> Result<RegressorModel, PersistError> {
    match ckpt.kind.as_str() {
        KIND_RIDGE => Ok(RegressorModel::Ridge(ridge_from_checkpoint(ckpt)?)),
        k if k == mlp_kind(ckpt.arch.len()) => Ok(RegressorModel::Mlp(mlp_from_checkpoint(ckpt)?)),
        other => Err(PersistError::KindMismatch {
            found: other.to_string(),
            expected: "ridge or mlp".to_string(),
        }),
    }
}

/// Per-epoch metric rows for the training-log CSV (epoch, split, value).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub value: f64,
}

pub fn write_log_csv(rows: &[LogRow], path: &Path) -> Result<(), PersistError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| PersistError::Malformed(format!("csv open {}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| PersistError::Malformed(format!("csv write: {e}")))?;
    }
    w.flush().map_err(|e| PersistError::Io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_log_csv(path: &Path) -> Result<Vec<LogRow>, PersistError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| PersistError::Malformed(format!("csv open {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(|e| PersistError::Malformed(format!("csv read: {e}")))?);
    }
    Ok(rows)
}

/// Metric-report twins: JSON plus a CSV with one row per sample.
pub fn write_metric_report(report: &crate::eval::MetricReport, json_path: &Path, csv_path: &Path) -> Result<(), PersistError> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| PersistError::Malformed(format!("report serialization: {e}")))?;
    fs::write(json_path, json).map_err(|e| PersistError::Io(json_path.display().to_string(), e))?;
    let mut w = csv::Writer::from_path(csv_path)
        .map_err(|e| PersistError::Malformed(format!("csv open {}: {e}", csv_path.display())))?;
    w.write_record(["id", "score"])
        .map_err(|e| PersistError::Malformed(format!("csv write: {e}")))?;
    for s in &report.per_sample {
        w.write_record([s.id.to_string(), format!("{}", s.score)])
            .map_err(|e| PersistError::Malformed(format!("csv write: {e}")))?;
    }
    w.flush().map_err(|e| PersistError::Io(csv_path.display().to_string(), e))?;
    Ok(())
}

/// Deterministic JSON summaries (BTreeMap keys are ordered).
pub type Summary = BTreeMap<String, Value>;

pub fn write_summary(summary: &Summary, path: &Path) -> Result<(), PersistError> {
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| PersistError::Malformed(format!("summary serialization: {e}")))?;
    fs::write(path, json).map_err(|e| PersistError::Io(path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::LmTrainConfig;
    use crate::regressors::{ridge_fit, InitScheme, TrainOptions};
    use crate::rng;
    use rand::Rng;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed, "persist-test");
        Matrix::from_raw(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn ridge_round_trip_identical_predictions() {
        let x = rand_matrix(20, 6, 1);
        let y = rand_matrix(20, 3, 2);
        let mut model = ridge_fit(&x, &y, 0.4, true).unwrap();
        model.input_norm = Some(Standardizer::fit(&x));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ridge.ckpt");
        save_checkpoint(&ridge_to_checkpoint(&model), &path).unwrap();
        let back = ridge_from_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
        assert_eq!(model, back);
        for i in 0..20 {
            let a = model.predict(x.row(i)).unwrap();
            let b = back.predict(x.row(i)).unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn mlp_round_trip_bitwise() {
        let x = rand_matrix(10, 5, 3);
        let y = rand_matrix(10, 2, 4);
        let opts = TrainOptions { epochs: 3, batch_size: 5, seed: 9, init: InitScheme::ScaledNormal, ..TrainOptions::default() };
        let fit = crate::regressors::mlp_fit(&x, &y, &[5, 4, 2], &opts, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlp.ckpt");
        let ckpt = mlp_to_checkpoint(&fit.model);
        assert_eq!(ckpt.kind, "mlp3");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = mlp_from_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
        assert_eq!(fit.model, back);
    }

    #[test]
    fn ae_round_trip_bitwise() {
        let x = rand_matrix(30, 8, 5);
        let opts = TrainOptions { batch_size: 10, seed: 6, ..TrainOptions::default() };
        let stack = crate::regressors::ae_pretrain(&x, &[5, 3], 4, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.ckpt");
        save_checkpoint(&ae_to_checkpoint(&stack), &path).unwrap();
        let back = ae_from_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
        assert_eq!(stack.encoders, back.encoders);
        assert_eq!(stack.loss_curves, back.loss_curves);
    }

    #[test]
    fn lm_round_trip_with_optimizer_state() {
        let caps: Vec<Vec<String>> = vec![
            vec!["a".into(), "cat".into()],
            vec!["a".into(), "dog".into()],
        ];
        let vocab = Vocabulary::build(caps.iter().map(Vec::as_slice), 1);
        let pairs: Vec<(Vec<f64>, crate::decoder::TokenSequence)> = caps
            .iter()
            .enumerate()
            .map(|(i, c)| (vec![i as f64, 1.0], vocab.encode(c)))
            .collect();
        let cfg = LmTrainConfig { epochs: 3, batch_size: 2, seed: 4, embed_dim: 6, hidden_dim: 8, ..LmTrainConfig::default() };

        let mut state = LmTrainState::new(vocab, 2, &cfg);
        crate::decoder::lm_train_epochs(&mut state, &pairs, &cfg, 3).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.ckpt");
        save_checkpoint(&lm_to_checkpoint(&state.model, Some((&state.opt, state.epochs_done))), &path).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        let back = lm_state_from_checkpoint(&loaded).unwrap();
        assert_eq!(state.model, back.model);
        assert_eq!(state.epochs_done, back.epochs_done);
        for (a, b) in state.opt.iter().zip(&back.opt) {
            assert_eq!(a.m, b.m);
            assert_eq!(a.v, b.v);
            assert_eq!(a.t, b.t);
        }

        // Model-only load works too and predicts identically.
        let model_only = lm_from_checkpoint(&loaded).unwrap();
        assert_eq!(model_only, state.model);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let x = rand_matrix(5, 3, 7);
        let y = rand_matrix(5, 2, 8);
        let model = ridge_fit(&x, &y, 0.1, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ridge.ckpt");
        save_checkpoint(&ridge_to_checkpoint(&model), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(PersistError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn version_and_kind_mismatches_are_distinct_errors() {
        let x = rand_matrix(5, 3, 9);
        let y = rand_matrix(5, 2, 10);
        let model = ridge_fit(&x, &y, 0.1, false).unwrap();
        let ckpt = ridge_to_checkpoint(&model);

        // Kind mismatch.
        assert!(matches!(
            mlp_from_checkpoint(&ckpt),
            Err(PersistError::KindMismatch { .. })
        ));

        // Version mismatch: bump the version and re-checksum.
        let mut bytes = checkpoint_to_bytes(&ckpt);
        bytes[4] = 99;
        let body = bytes.len() - 8;
        let crc = CRC64.checksum(&bytes[..body]);
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            checkpoint_from_bytes(&bytes, "test"),
            Err(PersistError::VersionMismatch { found: 99, .. })
        ));

        // Bad magic.
        let mut bad = checkpoint_to_bytes(&ckpt);
        bad[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes(&bad, "test"),
            Err(PersistError::BadMagic { .. })
        ));
    }

    #[test]
    fn log_csv_round_trip() {
        let rows = vec![
            LogRow { epoch: 0, split: "train".into(), value: 1.5 },
            LogRow { epoch: 1, split: "train".into(), value: 0.75 },
            LogRow { epoch: 1, split: "val".into(), value: 0.9 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_log_csv(&rows, &path).unwrap();
        let back = read_log_csv(&path).unwrap();
        assert_eq!(rows.len(), back.len());
        assert_eq!(back[2].split, "val");
        assert_eq!(back[1].value, 0.75);
    }
}
