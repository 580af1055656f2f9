use serde::{Deserialize, Serialize};

use super::model::{perplexity, LanguageModel, TapedLm};
use super::vocab::{TokenSequence, Vocabulary};
use super::DecoderError;
use crate::math::{Matrix, MathError, Tape};
use crate::optim::{adam_step, clip_by_global_norm, AdamConfig, AdamState};
use crate::rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub adam: AdamConfig,
    pub clip_threshold: f64,
    /// Decoupled weight decay, added to gradients after clipping. Applied
    /// uniformly, embedding table included.
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            adam: AdamConfig::default(),
            clip_threshold: 1.0,
            l2: 0.005,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            embed_dim: 512,
            hidden_dim: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochPerplexity {
    pub epoch: usize,
    pub perplexity: f64,
}

/// Model plus optimizer state plus epoch counter; checkpointing this makes a
/// resumed run reproduce an uninterrupted one exactly.
pub struct LmTrainState {
    pub model: LanguageModel,
    pub opt: Vec<AdamState>,
    pub epochs_done: usize,
}

impl LmTrainState {
    pub fn new(vocab: Vocabulary, feature_dim: usize, cfg: &LmTrainConfig) -> LmTrainState {
        let model = LanguageModel::new(vocab, feature_dim, cfg.embed_dim, cfg.hidden_dim, cfg.seed);
        let opt = model
            .named_params()
            .iter()
            .map(|(_, m)| AdamState::new(m.rows(), m.cols(), cfg.adam))
            .collect();
        LmTrainState { model, opt, epochs_done: 0 }
    }

    pub fn from_parts(model: LanguageModel, opt: Vec<AdamState>, epochs_done: usize) -> LmTrainState {
        LmTrainState { model, opt, epochs_done }
    }
}

/// Runs `epochs` further teacher-forced training epochs, returning one
/// training-set perplexity entry per completed epoch.
pub fn lm_train_epochs(
    state: &mut LmTrainState,
    pairs: &[(Vec<f64>, TokenSequence)],
    cfg: &LmTrainConfig,
    epochs: usize,
) -> Result<Vec<EpochPerplexity>, DecoderError> {
    if pairs.is_empty() {
        return Err(DecoderError::EmptyInput);
    }
    for (feature, seq) in pairs {
        if feature.len() != state.model.feature_dim() {
            return Err(DecoderError::FeatureDim {
                got: feature.len(),
                expected: state.model.feature_dim(),
            });
        }
        for &id in seq.ids() {
            if id as usize >= state.model.vocab_size() {
                return Err(DecoderError::InvalidToken { index: id, vocab: state.model.vocab_size() });
            }
        }
    }

    let n = pairs.len();
    let batch = cfg.batch_size.max(1).min(n);
    let mut log = Vec::with_capacity(epochs);
    let base_epoch = state.epochs_done;

    for e in 1..=epochs {
        let epoch = base_epoch + e;
        // Order is re-derived from the epoch index alone so a resumed run
        // reproduces the batches of an uninterrupted one.
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng::stream_indexed(cfg.seed, "shuffle", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rand::Rng::random_range(&mut shuffle_rng, 0..=i);
            order.swap(i, j);
        }

        for chunk in order.chunks(batch) {
            let mut tape = Tape::new();
            let taped = TapedLm::register(&mut tape, &state.model);
            let batch_pairs: Vec<(&[f64], &TokenSequence)> =
                chunk.iter().map(|&i| (pairs[i].0.as_slice(), &pairs[i].1)).collect();
            let loss = taped.batch_loss(&mut tape, &state.model, &batch_pairs).map_err(|err| match err {
                DecoderError::Math(MathError::NonFiniteIn(_)) => DecoderError::Diverged { epoch },
                other => other,
            })?;
            if !tape.scalar(loss).is_finite() {
                return Err(DecoderError::Diverged { epoch });
            }
            tape.backward(loss)?;

            let vars = taped.vars();
            let mut grads: Vec<Matrix> = vars
                .iter()
                .map(|&v| {
                    tape.grad(v).cloned().unwrap_or_else(|| {
                        let (r, c) = tape.value(v).shape();
                        Matrix::zeros(r, c)
                    })
                })
                .collect();
            {
                let mut refs: Vec<&mut Matrix> = grads.iter_mut().collect();
                clip_by_global_norm(&mut refs, cfg.clip_threshold);
            }
            let mut params = state.model.params_mut();
            for ((param, grad), opt) in params.iter_mut().zip(grads.iter_mut()).zip(state.opt.iter_mut()) {
                if cfg.l2 > 0.0 {
                    for (g, &p) in grad.data_mut().iter_mut().zip(param.data()) {
                        *g += cfg.l2 * p;
                    }
                }
                adam_step(param, grad, opt)?;
            }
        }

        let ppl = perplexity(&state.model, pairs).map_err(|err| match err {
            DecoderError::Math(MathError::NonFiniteIn(_)) => DecoderError::Diverged { epoch },
            other => other,
        })?;
        if !ppl.is_finite() {
            return Err(DecoderError::Diverged { epoch });
        }
        log.push(EpochPerplexity { epoch, perplexity: ppl });
        state.epochs_done = epoch;
    }
    Ok(log)
}

/// Teacher-forced training from scratch. The returned log starts with an
/// epoch-0 entry holding the initialization perplexity.
pub fn train_lm(
    pairs: &[(Vec<f64>, TokenSequence)],
    vocab: Vocabulary,
    feature_dim: usize,
    cfg: &LmTrainConfig,
) -> Result<(LanguageModel, Vec<EpochPerplexity>), DecoderError> {
    let mut state = LmTrainState::new(vocab, feature_dim, cfg);
    let mut log = vec![EpochPerplexity { epoch: 0, perplexity: perplexity(&state.model, pairs)? }];
    log.extend(lm_train_epochs(&mut state, pairs, cfg, cfg.epochs)?);
    Ok((state.model, log))
}
