use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::vocab::{TokenSequence, Vocabulary};
use super::DecoderError;
use crate::math::{affine, Matrix, Tape, Var};
use crate::rng;

/// Gate slices within the fused `4H` LSTM pre-activation, in order:
/// input, forget, candidate, output.
const GATES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// input -> gates, `in_dim x 4H`
    pub w_x: Matrix,
    /// hidden -> gates, `H x 4H`
    pub w_h: Matrix,
    /// `1 x 4H`
    pub b: Matrix,
}

impl LstmLayer {
    pub fn hidden_dim(&self) -> usize {
        self.w_h.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.rows()
    }

    /// 4 x hidden x (input + hidden + 1)
    pub fn param_count(&self) -> usize {
        self.w_x.len() + self.w_h.len() + self.b.len()
    }
}

/// Feature-conditioned two-layer LSTM language model: embedding table, two
/// LSTM layers, a vocabulary softmax head, and a linear projection that
/// injects the image feature as the step-0 input.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub vocab: Vocabulary,
    /// `V x E`
    pub embedding: Matrix,
    pub layers: Vec<LstmLayer>,
    /// `H x V`
    pub proj_w: Matrix,
    /// `1 x V`
    pub proj_b: Matrix,
    /// `F x E`
    pub feat_w: Matrix,
    /// `1 x E`
    pub feat_b: Matrix,
}

/// Per-layer hidden and cell rows plus a timestep counter.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<Matrix>,
    pub c: Vec<Matrix>,
    pub step: usize,
}

impl LanguageModel {
    pub fn new(vocab: Vocabulary, feature_dim: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> LanguageModel {
        let v = vocab.size();
        let normal = |rows: usize, cols: usize, scale: f64, r: &mut rand_chacha::ChaCha8Rng| {
            Matrix::from_raw(
                rows,
                cols,
                (0..rows * cols)
                    .map(|_| {
                        let z: f64 = r.sample(StandardNormal);
                        z * scale
                    })
                    .collect(),
            )
        };
        let mut r = rng::stream(seed, "lm-init");
        let embedding = normal(v, embed_dim, 1.0 / (embed_dim as f64).sqrt(), &mut r);
        let mut layers = Vec::with_capacity(2);
        for l in 0..2 {
            let in_dim = if l == 0 { embed_dim } else { hidden_dim };
            layers.push(LstmLayer {
                w_x: normal(in_dim, GATES * hidden_dim, 1.0 / (in_dim as f64).sqrt(), &mut r),
                w_h: normal(hidden_dim, GATES * hidden_dim, 1.0 / (hidden_dim as f64).sqrt(), &mut r),
                b: Matrix::zeros(1, GATES * hidden_dim),
            });
        }
        let proj_w = normal(hidden_dim, v, 1.0 / (hidden_dim as f64).sqrt(), &mut r);
        let proj_b = Matrix::zeros(1, v);
        let feat_w = normal(feature_dim, embed_dim, 1.0 / (feature_dim as f64).sqrt(), &mut r);
        let feat_b = Matrix::zeros(1, embed_dim);
        LanguageModel { vocab, embedding, layers, proj_w, proj_b, feat_w, feat_b }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.feat_w.rows()
    }

    pub fn zero_state(&self) -> DecoderState {
        let h = self.layers.iter().map(|l| Matrix::zeros(1, l.hidden_dim())).collect();
        let c = self.layers.iter().map(|l| Matrix::zeros(1, l.hidden_dim())).collect();
        DecoderState { h, c, step: 0 }
    }

    /// Overrides the initial embedding rows for tokens present in a
    /// word2vec-format text file ("count dim" header, then "word v1 v2 ...").
    /// The file's dimensionality must match the model's embedding width.
    pub fn load_embeddings(&mut self, path: &Path) -> Result<usize, DecoderError> {
        let text =
            fs::read_to_string(path).map_err(|e| DecoderError::Io(path.display().to_string(), e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| DecoderError::Vocab("empty embedding file".into()))?;
        let mut parts = header.split_whitespace();
        let _count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DecoderError::Vocab("bad embedding header".into()))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DecoderError::Vocab("bad embedding header".into()))?;
        if dim != self.embed_dim() {
            return Err(DecoderError::Vocab(format!(
                "embedding file dimension {dim} does not match model embed_dim {}",
                self.embed_dim()
            )));
        }
        let mut loaded = 0;
        for line in lines {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let Some(id) = self.vocab.id(word) else { continue };
            let values: Vec<f64> = parts.map(|s| s.parse().unwrap_or(f64::NAN)).collect();
            if values.len() != dim || values.iter().any(|v| !v.is_finite()) {
                return Err(DecoderError::Vocab(format!("bad embedding row for {word:?}")));
            }
            let row = id as usize;
            self.embedding.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(&values);
            loaded += 1;
        }
        Ok(loaded)
    }

    /// Projects an image feature into embedding space; this is the step-0
    /// input that conditions generation.
    pub fn feature_input(&self, feature: &[f64]) -> Result<Matrix, DecoderError> {
        if feature.len() != self.feature_dim() {
            return Err(DecoderError::FeatureDim { got: feature.len(), expected: self.feature_dim() });
        }
        let row = Matrix::row_vector(feature.to_vec())?;
        Ok(affine(&row, &self.feat_w, &self.feat_b)?)
    }

    pub fn token_input(&self, token: u32) -> Result<Matrix, DecoderError> {
        if token as usize >= self.vocab_size() {
            return Err(DecoderError::InvalidToken { index: token, vocab: self.vocab_size() });
        }
        Ok(Matrix::from_vec(1, self.embed_dim(), self.embedding.row(token as usize).to_vec())?)
    }

    /// One step of the stacked LSTM: standard gate equations per layer, the
    /// second layer consuming the first layer's hidden state; logits are the
    /// projection of the top hidden state.
    pub fn lstm_step(&self, state: &DecoderState, input: &Matrix) -> Result<(DecoderState, Matrix), DecoderError> {
        if input.shape() != (1, self.embed_dim()) {
            return Err(DecoderError::FeatureDim { got: input.cols(), expected: self.embed_dim() });
        }
        let mut next = DecoderState { h: Vec::with_capacity(2), c: Vec::with_capacity(2), step: state.step + 1 };
        let mut x = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let hd = layer.hidden_dim();
            let z = x
                .matmul(&layer.w_x)?
                .add(&state.h[l].matmul(&layer.w_h)?)?
                .add_row(&layer.b)?;
            let gate = |s: usize| Matrix::from_raw(1, hd, z.data()[s * hd..(s + 1) * hd].to_vec());
            let i = gate(0).map(sigmoid);
            let f = gate(1).map(sigmoid);
            let g = gate(2).map(f64::tanh);
            let o = gate(3).map(sigmoid);
            let c = f.hadamard(&state.c[l])?.add(&i.hadamard(&g)?)?;
            let h = o.hadamard(&c.map(f64::tanh))?;
            x = h.clone();
            next.h.push(h);
            next.c.push(c);
        }
        let logits = affine(&x, &self.proj_w, &self.proj_b)?;
        Ok((next, logits))
    }

    /// Parameters in a fixed order shared by training, checkpointing, and
    /// gradient collection.
    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("lstm{l}.w_x"), &layer.w_x));
            out.push((format!("lstm{l}.w_h"), &layer.w_h));
            out.push((format!("lstm{l}.b"), &layer.b));
        }
        out.push(("proj_w".to_string(), &self.proj_w));
        out.push(("proj_b".to_string(), &self.proj_b));
        out.push(("feat_w".to_string(), &self.feat_w));
        out.push(("feat_b".to_string(), &self.feat_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embedding];
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.w_x);
            out.push(&mut layer.w_h);
            out.push(&mut layer.b);
        }
        out.push(&mut self.proj_w);
        out.push(&mut self.proj_b);
        out.push(&mut self.feat_w);
        out.push(&mut self.feat_b);
        out
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

// ---------------------------------------------------------------------------
// Taped twin of the forward pass, for training and gradient checks.
// ---------------------------------------------------------------------------

/// The model's parameters registered as tape variables, in `named_params`
/// order.
pub struct TapedLm {
    pub embedding: Var,
    pub layers: Vec<(Var, Var, Var)>,
    pub proj_w: Var,
    pub proj_b: Var,
    pub feat_w: Var,
    pub feat_b: Var,
}

impl TapedLm {
    pub fn register(tape: &mut Tape, model: &LanguageModel) -> TapedLm {
        let embedding = tape.leaf(model.embedding.clone());
        let layers = model
            .layers
            .iter()
            .map(|l| (tape.leaf(l.w_x.clone()), tape.leaf(l.w_h.clone()), tape.leaf(l.b.clone())))
            .collect();
        TapedLm {
            embedding,
            layers,
            proj_w: tape.leaf(model.proj_w.clone()),
            proj_b: tape.leaf(model.proj_b.clone()),
            feat_w: tape.leaf(model.feat_w.clone()),
            feat_b: tape.leaf(model.feat_b.clone()),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        for &(wx, wh, b) in &self.layers {
            out.extend([wx, wh, b]);
        }
        out.extend([self.proj_w, self.proj_b, self.feat_w, self.feat_b]);
        out
    }

    fn step(
        &self,
        tape: &mut Tape,
        hidden_dim: usize,
        state: &mut Vec<(Var, Var)>,
        input: Var,
    ) -> Result<Var, crate::math::MathError> {
        let mut x = input;
        for (l, &(w_x, w_h, b)) in self.layers.iter().enumerate() {
            let (h_prev, c_prev) = state[l];
            let zx = tape.matmul(x, w_x)?;
            let zh = tape.matmul(h_prev, w_h)?;
            let zsum = tape.add(zx, zh)?;
            let z = tape.add_row(zsum, b)?;
            let iz = tape.slice_cols(z, 0, hidden_dim)?;
            let fz = tape.slice_cols(z, hidden_dim, hidden_dim)?;
            let gz = tape.slice_cols(z, 2 * hidden_dim, hidden_dim)?;
            let oz = tape.slice_cols(z, 3 * hidden_dim, hidden_dim)?;
            let i = tape.sigmoid(iz);
            let f = tape.sigmoid(fz);
            let g = tape.tanh(gz);
            let o = tape.sigmoid(oz);
            let fc = tape.hadamard(f, c_prev)?;
            let ig = tape.hadamard(i, g)?;
            let c = tape.add(fc, ig)?;
            let ct = tape.tanh(c);
            let h = tape.hadamard(o, ct)?;
            state[l] = (h, c);
            x = h;
        }
        Ok(x)
    }

    /// Teacher-forced mean-per-token cross entropy over a batch of
    /// (feature, gold sequence) pairs: the projected feature is the step-0
    /// input, then gold tokens; each non-feature step is scored against the
    /// next gold token (words and EOS; BOS is conditioning only).
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        model: &LanguageModel,
        batch: &[(&[f64], &TokenSequence)],
    ) -> Result<Var, DecoderError> {
        let hidden = model.hidden_dim();
        let mut token_count = 0usize;
        let mut total: Option<Var> = None;

        for (feature, seq) in batch {
            let ids = seq.ids();
            if ids.len() < 2 {
                return Err(DecoderError::Vocab("sequence needs at least BOS and EOS".into()));
            }
            for &id in ids {
                if id as usize >= model.vocab_size() {
                    return Err(DecoderError::InvalidToken { index: id, vocab: model.vocab_size() });
                }
            }
            let mut state: Vec<(Var, Var)> = model
                .layers
                .iter()
                .map(|l| {
                    let h = tape.leaf(Matrix::zeros(1, l.hidden_dim()));
                    let c = tape.leaf(Matrix::zeros(1, l.hidden_dim()));
                    (h, c)
                })
                .collect();

            let feat_row = tape.leaf(Matrix::row_vector(feature.to_vec())?);
            let feat_in = tape.affine(feat_row, self.feat_w, self.feat_b)?;
            self.step(tape, hidden, &mut state, feat_in)?;

            // Inputs: BOS, w1..wn; targets: w1..wn, EOS.
            for t in 0..ids.len() - 1 {
                let input = tape.rows(self.embedding, &[ids[t]])?;
                let top = self.step(tape, hidden, &mut state, input)?;
                let logits = tape.affine(top, self.proj_w, self.proj_b)?;
                let nll = tape.softmax_xent(logits, &[ids[t + 1]])?;
                token_count += 1;
                total = Some(match total {
                    Some(acc) => tape.add(acc, nll)?,
                    None => nll,
                });
            }
        }
        let total = total.ok_or(DecoderError::EmptyInput)?;
        Ok(tape.scale(total, 1.0 / token_count as f64))
    }
}

/// exp of the mean per-token cross entropy over all gold tokens
/// (words and EOS) under teacher forcing.
pub fn perplexity(model: &LanguageModel, pairs: &[(Vec<f64>, TokenSequence)]) -> Result<f64, DecoderError> {
    if pairs.is_empty() {
        return Err(DecoderError::EmptyInput);
    }
    let mut nll_sum = 0.0;
    let mut tokens = 0usize;
    for (feature, seq) in pairs {
        let ids = seq.ids();
        for &id in ids {
            if id as usize >= model.vocab_size() {
                return Err(DecoderError::InvalidToken { index: id, vocab: model.vocab_size() });
            }
        }
        let mut state = model.zero_state();
        let feat_in = model.feature_input(feature)?;
        let (s, _) = model.lstm_step(&state, &feat_in)?;
        state = s;
        for t in 0..ids.len() - 1 {
            let input = model.token_input(ids[t])?;
            let (s, logits) = model.lstm_step(&state, &input)?;
            state = s;
            nll_sum += nll_of(&logits, ids[t + 1]);
            tokens += 1;
        }
    }
    Ok((nll_sum / tokens as f64).exp())
}

/// Negative log-likelihood of `target` under the softmax of a logit row.
pub(crate) fn nll_of(logits: &Matrix, target: u32) -> f64 {
    let row = logits.row(0);
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - row[target as usize]
}
