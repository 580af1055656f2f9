use super::model::{DecoderState, LanguageModel};
use super::vocab::{TokenSequence, BOS, EOS, UNK};
use super::DecoderError;
use crate::math::Matrix;

/// Generation settings. BOS is never emitted; UNK is masked out unless
/// `allow_unk` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    /// Maximum number of emitted words (sentinels excluded).
    pub max_len: usize,
    pub beam_width: usize,
    pub allow_unk: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_len: 20, beam_width: 1, allow_unk: false }
    }
}

/// Log-probabilities of the next token under the constrained distribution:
/// masked entries get -inf and the rest renormalize.
fn masked_log_softmax(logits: &Matrix, allow_unk: bool) -> Vec<f64> {
    let mut row: Vec<f64> = logits.row(0).to_vec();
    row[BOS as usize] = f64::NEG_INFINITY;
    if !allow_unk {
        row[UNK as usize] = f64::NEG_INFINITY;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().filter(|v| v.is_finite()).map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
    row
}

fn argmax(scores: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best as u32
}

/// Argmax decoding from BOS; stops when EOS is emitted or `max_len` words
/// have been produced. Deterministic; argmax ties break to the lower index.
pub fn generate_greedy(model: &LanguageModel, feature: &[f64], max_len: usize) -> Result<TokenSequence, DecoderError> {
    assert!(max_len >= 1, "max_len must be >= 1");
    let state = model.zero_state();
    let feat_in = model.feature_input(feature)?;
    let (mut state, _) = model.lstm_step(&state, &feat_in)?;

    let mut input = model.token_input(BOS)?;
    let mut words = Vec::new();
    for _ in 0..max_len {
        let (next, logits) = model.lstm_step(&state, &input)?;
        state = next;
        let scores = masked_log_softmax(&logits, false);
        let tok = argmax(&scores);
        if tok == EOS {
            return Ok(TokenSequence::from_words_unchecked(&words, true));
        }
        words.push(tok);
        input = model.token_input(tok)?;
    }
    Ok(TokenSequence::from_words_unchecked(&words, false))
}

struct Hypothesis {
    state: DecoderState,
    next_input: u32,
    words: Vec<u32>,
    log_prob: f64,
}

struct Completed {
    words: Vec<u32>,
    terminated: bool,
    log_prob: f64,
    emissions: usize,
}

impl Completed {
    fn normalized(&self) -> f64 {
        self.log_prob / self.emissions as f64
    }
}

/// Standard beam search over token sequences. Completed hypotheses (EOS
/// emitted, or cut off at `max_len` words) are ranked by length-normalized
/// log-probability; exactly `min(width, completed)` results come back, each
/// with its normalized score. Candidate ties break to the lower token index.
pub fn generate_beam(
    model: &LanguageModel,
    feature: &[f64],
    width: usize,
    max_len: usize,
) -> Result<Vec<(TokenSequence, f64)>, DecoderError> {
    assert!(width >= 1, "beam width must be >= 1");
    assert!(max_len >= 1, "max_len must be >= 1");

    let state = model.zero_state();
    let feat_in = model.feature_input(feature)?;
    let (state, _) = model.lstm_step(&state, &feat_in)?;

    let mut live = vec![Hypothesis { state, next_input: BOS, words: Vec::new(), log_prob: 0.0 }];
    let mut completed: Vec<Completed> = Vec::new();

    for step in 1..=max_len {
        if live.is_empty() {
            break;
        }
        // (score, hyp index, token); scores under the constrained softmax.
        let mut pool: Vec<(f64, usize, u32)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (hi, hyp) in live.iter().enumerate() {
            let input = model.token_input(hyp.next_input)?;
            let (next, logits) = model.lstm_step(&hyp.state, &input)?;
            let scores = masked_log_softmax(&logits, false);
            for (tok, &s) in scores.iter().enumerate() {
                if s.is_finite() {
                    pool.push((hyp.log_prob + s, hi, tok as u32));
                }
            }
            next_states.push(next);
        }
        pool.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        pool.truncate(width);

        let mut next_live = Vec::with_capacity(width);
        for (log_prob, hi, tok) in pool {
            let hyp = &live[hi];
            if tok == EOS {
                completed.push(Completed {
                    words: hyp.words.clone(),
                    terminated: true,
                    log_prob,
                    emissions: hyp.words.len() + 1,
                });
            } else {
                let mut words = hyp.words.clone();
                words.push(tok);
                if step == max_len {
                    completed.push(Completed { words, terminated: false, log_prob, emissions: max_len });
                } else {
                    next_live.push(Hypothesis {
                        state: next_states[hi].clone(),
                        next_input: tok,
                        words,
                        log_prob,
                    });
                }
            }
        }
        live = next_live;
    }

    completed.sort_by(|a, b| {
        b.normalized()
            .partial_cmp(&a.normalized())
            .unwrap()
            .then_with(|| a.words.cmp(&b.words))
    });
    completed.truncate(width);
    Ok(completed
        .into_iter()
        .map(|c| (TokenSequence::from_words_unchecked(&c.words, c.terminated), c.normalized()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::vocab::Vocabulary;
    use crate::math::Matrix;

    fn vocab_abc() -> Vocabulary {
        let caps: Vec<Vec<String>> =
            vec![vec!["a".into(), "a".into(), "b".into(), "b".into(), "c".into(), "c".into()]];
        Vocabulary::build(caps.iter().map(Vec::as_slice), 1)
    }

    fn zero_model(seed: u64) -> LanguageModel {
        let mut model = LanguageModel::new(vocab_abc(), 2, 3, 4, seed);
        for p in model.params_mut() {
            *p = Matrix::zeros(p.rows(), p.cols());
        }
        model
    }

    #[test]
    fn eos_favoring_model_yields_empty_caption() {
        let mut model = zero_model(0);
        model.proj_b.set(0, EOS as usize, 10.0);
        let seq = generate_greedy(&model, &[0.0, 0.0], 5).unwrap();
        assert_eq!(seq.word_count(), 0);
        assert!(seq.terminated());
    }

    #[test]
    fn greedy_matches_manual_argmax_trace() {
        // Bias-only model: same logits at every step, "a" highest, so it
        // repeats "a" until truncation at max_len.
        let mut model = zero_model(1);
        let a = model.vocab.id("a").unwrap() as usize;
        model.proj_b.set(0, a, 3.0);
        model.proj_b.set(0, EOS as usize, 1.0);
        let seq = generate_greedy(&model, &[0.0, 0.0], 3).unwrap();
        assert_eq!(seq.words(), &[a as u32, a as u32, a as u32]);
        assert!(!seq.terminated());
    }

    #[test]
    fn generated_sequences_respect_mask_and_length() {
        let model = LanguageModel::new(vocab_abc(), 2, 3, 4, 2);
        for max_len in 1..5 {
            let seq = generate_greedy(&model, &[0.3, -0.4], max_len).unwrap();
            assert!(seq.word_count() <= max_len);
            for &w in seq.words() {
                assert_ne!(w, BOS);
                assert_ne!(w, UNK);
            }
        }
    }

    #[test]
    fn beam_one_equals_greedy() {
        for seed in 0..20 {
            let model = LanguageModel::new(vocab_abc(), 2, 3, 4, 100 + seed);
            let feature = vec![0.5 * seed as f64 / 10.0, -0.3];
            let greedy = generate_greedy(&model, &feature, 4).unwrap();
            let beam = generate_beam(&model, &feature, 1, 4).unwrap();
            assert_eq!(beam.len(), 1);
            assert_eq!(beam[0].0, greedy, "seed {seed}");
        }
    }

    #[test]
    fn beam_results_are_rank_ordered() {
        let model = LanguageModel::new(vocab_abc(), 2, 3, 4, 7);
        let results = generate_beam(&model, &[0.2, 0.9], 4, 3).unwrap();
        assert!(!results.is_empty());
        for w in results.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let model = LanguageModel::new(vocab_abc(), 2, 3, 4, 11);
        let a = generate_beam(&model, &[0.1, 0.2], 3, 4).unwrap();
        let b = generate_beam(&model, &[0.1, 0.2], 3, 4).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1.to_bits(), y.1.to_bits());
        }
    }
}
