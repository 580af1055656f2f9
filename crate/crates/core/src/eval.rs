//! Caption quality metrics: BLEU-4 and a WordNet-free METEOR variant.
//!
//! Both metrics compare token identity, so they work over any hashable
//! token type (word strings or vocabulary indices) and are invariant under
//! consistent re-indexing.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("candidate ids do not match reference ids: {0}")]
    IdMismatch(String),
    #[error("sample {0} has no references")]
    NoReferences(String),
}

/// Additive smoothing applied to zero clipped n-gram counts.
pub const BLEU_SMOOTHING_EPS: f64 = 1e-9;
const MAX_NGRAM: usize = 4;

/// METEOR F-mean recall weight (alpha = 0.9 form: F = 10PR / (R + 9P)).
pub const METEOR_RECALL_WEIGHT: f64 = 9.0;
/// Fragmentation penalty: 0.5 * (chunks / matches)^3.
pub const METEOR_PENALTY_WEIGHT: f64 = 0.5;
pub const METEOR_PENALTY_POWER: f64 = 3.0;

fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for win in tokens.windows(n) {
            *counts.entry(win).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU counters: clipped matches and candidate totals per
/// n-gram order, plus candidate/effective-reference lengths.
#[derive(Debug, Default, Clone)]
pub struct BleuAccumulator {
    matched: [u64; MAX_NGRAM],
    total: [u64; MAX_NGRAM],
    candidate_len: u64,
    reference_len: u64,
}

impl BleuAccumulator {
    pub fn add<T: Eq + Hash + Clone>(&mut self, candidate: &[T], references: &[&[T]]) {
        assert!(!references.is_empty(), "references must be nonempty");
        for n in 1..=MAX_NGRAM {
            let cand = ngram_counts(candidate, n);
            let mut max_ref: HashMap<&[T], u64> = HashMap::new();
            for r in references {
                for (gram, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(gram).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (gram, c) in &cand {
                let clip = max_ref.get(gram).copied().unwrap_or(0);
                self.matched[n - 1] += (*c).min(clip);
                self.total[n - 1] += c;
            }
        }
        self.candidate_len += candidate.len() as u64;
        // Closest reference length; ties go to the shorter reference.
        let c = candidate.len() as i64;
        let closest = references
            .iter()
            .map(|r| r.len() as i64)
            .min_by_key(|&r| ((r - c).abs(), r))
            .unwrap();
        self.reference_len += closest as u64;
    }

    /// Geometric mean of clipped 1..4-gram precisions times the brevity
    /// penalty. Zero clipped counts (or absent n-grams) contribute the
    /// smoothing epsilon.
    pub fn score(&self) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_NGRAM {
            let p = if self.total[n] == 0 || self.matched[n] == 0 {
                BLEU_SMOOTHING_EPS / self.total[n].max(1) as f64
            } else {
                self.matched[n] as f64 / self.total[n] as f64
            };
            log_sum += p.ln() / MAX_NGRAM as f64;
        }
        let bp = if self.candidate_len > self.reference_len {
            1.0
        } else {
            (1.0 - self.reference_len as f64 / self.candidate_len as f64).exp()
        };
        (bp * log_sum.exp()).clamp(0.0, 1.0)
    }
}

/// Sentence-level BLEU-4: geometric mean of clipped 1..4-gram precisions
/// with brevity penalty; an empty candidate scores 0.
pub fn bleu4<T: Eq + Hash + Clone>(candidate: &[T], references: &[&[T]]) -> f64 {
    let mut acc = BleuAccumulator::default();
    acc.add(candidate, references);
    acc.score()
}

/// Exact-match unigram METEOR: harmonic F-mean weighted toward recall, times
/// one minus a fragmentation penalty; the best score over the references.
pub fn meteor_lite<T: Eq + Hash + Clone + Ord>(candidate: &[T], references: &[&[T]]) -> f64 {
    assert!(!references.is_empty(), "references must be nonempty");
    if candidate.is_empty() {
        return 0.0;
    }
    references
        .iter()
        .map(|r| meteor_single(candidate, r))
        .fold(0.0, f64::max)
}

fn meteor_single<T: Eq + Hash + Clone + Ord>(candidate: &[T], reference: &[T]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let matches = matched_count(candidate, reference);
    if matches == 0 {
        return 0.0;
    }
    let chunks = min_chunks(candidate, reference, matches);
    let p = matches as f64 / candidate.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f_mean = (1.0 + METEOR_RECALL_WEIGHT) * p * r / (r + METEOR_RECALL_WEIGHT * p);
    let penalty =
        METEOR_PENALTY_WEIGHT * (chunks as f64 / matches as f64).powf(METEOR_PENALTY_POWER);
    (f_mean * (1.0 - penalty)).clamp(0.0, 1.0)
}

/// Number of aligned unigrams: per word type, min of the two occurrence
/// counts. This is the size of every maximum matching.
fn matched_count<T: Eq + Hash + Clone>(candidate: &[T], reference: &[T]) -> usize {
    let mut cand: HashMap<&T, usize> = HashMap::new();
    for t in candidate {
        *cand.entry(t).or_insert(0) += 1;
    }
    let mut refc: HashMap<&T, usize> = HashMap::new();
    for t in reference {
        *refc.entry(t).or_insert(0) += 1;
    }
    cand.iter()
        .map(|(t, &c)| c.min(refc.get(t).copied().unwrap_or(0)))
        .sum()
}

/// Minimum number of contiguous chunks over all maximum alignments, found by
/// depth-first search over reference-position assignments with
/// branch-and-bound. Captions are short, and words that occur once on both
/// sides leave a single branch, so the search is tiny in practice; a node
/// budget caps adversarial inputs, falling back to the best bound found.
/// Any alignment has at most `matches` chunks, so the initial bound is
/// already a valid answer.
fn min_chunks<T: Eq + Hash + Clone>(candidate: &[T], reference: &[T], matches: usize) -> usize {
    struct Search {
        budget: usize,
        best: usize,
    }

    fn dfs<T: Eq + Hash + Clone>(
        cand: &[T],
        pos: usize,
        ref_avail: &mut [bool],
        reference: &[T],
        prev_ref: Option<usize>,
        chunks_so_far: usize,
        left: usize,
        search: &mut Search,
    ) {
        if chunks_so_far >= search.best {
            return; // completing from here cannot beat the bound
        }
        if left == 0 {
            search.best = chunks_so_far;
            return;
        }
        if pos >= cand.len() || cand.len() - pos < left || search.budget == 0 {
            return;
        }
        search.budget -= 1;

        for j in 0..reference.len() {
            if ref_avail[j] && reference[j] == cand[pos] {
                ref_avail[j] = false;
                let new_chunks = match prev_ref {
                    Some(p) if p + 1 == j => chunks_so_far,
                    _ => chunks_so_far + 1,
                };
                dfs(cand, pos + 1, ref_avail, reference, Some(j), new_chunks, left - 1, search);
                ref_avail[j] = true;
            }
        }
        // Leave this position unaligned; infeasible branches die on the
        // position-count bound above.
        dfs(cand, pos + 1, ref_avail, reference, prev_ref, chunks_so_far, left, search);
    }

    let mut ref_avail = vec![true; reference.len()];
    let mut search = Search { budget: 200_000, best: matches };
    dfs(candidate, 0, &mut ref_avail, reference, None, 0, matches, &mut search);
    search.best
}

/// Per-sample scores plus the corpus-level aggregate for one metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub corpus_score: f64,
    pub per_sample: Vec<SampleScore>,
    /// Metric parameters (n-gram order, weights) recorded with the scores.
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: u64,
    pub score: f64,
}

/// Scores aligned candidate/reference sets with both metrics. BLEU
/// aggregates n-gram counts corpus-wide; METEOR averages per-sample scores.
pub fn evaluate_run(
    candidates: &[(u64, Vec<String>)],
    references: &[(u64, Vec<Vec<String>>)],
) -> Result<(MetricReport, MetricReport), EvalError> {
    let ref_map: HashMap<u64, &Vec<Vec<String>>> =
        references.iter().map(|(id, refs)| (*id, refs)).collect();
    if candidates.len() != references.len() {
        return Err(EvalError::IdMismatch(format!(
            "{} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }

    let mut bleu_acc = BleuAccumulator::default();
    let mut bleu_samples = Vec::with_capacity(candidates.len());
    let mut meteor_samples = Vec::with_capacity(candidates.len());
    let mut meteor_sum = 0.0;

    for (id, cand) in candidates {
        let refs = ref_map
            .get(id)
            .ok_or_else(|| EvalError::IdMismatch(format!("candidate id {id} has no reference set")))?;
        if refs.is_empty() {
            return Err(EvalError::NoReferences(id.to_string()));
        }
        let ref_slices: Vec<&[String]> = refs.iter().map(Vec::as_slice).collect();
        bleu_acc.add(cand, &ref_slices);
        bleu_samples.push(SampleScore { id: *id, score: bleu4(cand, &ref_slices) });
        let m = meteor_lite(cand, &ref_slices);
        meteor_sum += m;
        meteor_samples.push(SampleScore { id: *id, score: m });
    }

    let bleu_params = BTreeMap::from([
        ("ngram_order".to_string(), MAX_NGRAM as f64),
        ("smoothing_eps".to_string(), BLEU_SMOOTHING_EPS),
    ]);
    let meteor_params = BTreeMap::from([
        ("recall_weight".to_string(), METEOR_RECALL_WEIGHT),
        ("penalty_weight".to_string(), METEOR_PENALTY_WEIGHT),
        ("penalty_power".to_string(), METEOR_PENALTY_POWER),
    ]);

    Ok((
        MetricReport {
            metric: "bleu4".to_string(),
            corpus_score: bleu_acc.score(),
            per_sample: bleu_samples,
            params: bleu_params,
        },
        MetricReport {
            metric: "meteor_lite".to_string(),
            corpus_score: if candidates.is_empty() { 0.0 } else { meteor_sum / candidates.len() as f64 },
            per_sample: meteor_samples,
            params: meteor_params,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_candidate_scores_one() {
        let c = toks("a man rides a wave");
        let refs = [c.clone()];
        let ref_slices: Vec<&[String]> = refs.iter().map(Vec::as_slice).collect();
        assert_eq!(bleu4(&c, &ref_slices), 1.0);
        let m = meteor_lite(&c, &ref_slices);
        assert!((m - (1.0 - 0.5 / 125.0)).abs() < 1e-12, "meteor {m}");
    }

    #[test]
    fn disjoint_sentences_score_near_zero() {
        let c = toks("x y z w");
        let r = toks("a b c d");
        let ref_slices: Vec<&[String]> = vec![&r];
        assert!(bleu4(&c, &ref_slices) < 1e-6);
        assert_eq!(meteor_lite(&c, &ref_slices), 0.0);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        let c: Vec<String> = vec![];
        let r = toks("a b c d");
        let ref_slices: Vec<&[String]> = vec![&r];
        assert_eq!(bleu4(&c, &ref_slices), 0.0);
        assert_eq!(meteor_lite(&c, &ref_slices), 0.0);
    }

    #[test]
    fn bleu_single_substitution_hand_computed() {
        // "a b c d e" vs "a b c d f": p1 = 4/5, p2 = 3/4, p3 = 2/3, p4 = 1/2,
        // lengths equal so BP = 1.
        let c = toks("a b c d e");
        let r = toks("a b c d f");
        let ref_slices: Vec<&[String]> = vec![&r];
        let expected = (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((bleu4(&c, &ref_slices) - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_clipping_limits_repeats() {
        // Candidate repeats "the" 4 times; reference has it twice.
        // p1 = 2/4; no higher-order matches.
        let c = toks("the the the the");
        let r = toks("the cat the mat");
        let ref_slices: Vec<&[String]> = vec![&r];
        let p1: f64 = 2.0 / 4.0;
        let p2 = BLEU_SMOOTHING_EPS / 3.0;
        let p3 = BLEU_SMOOTHING_EPS / 2.0;
        let p4 = BLEU_SMOOTHING_EPS / 1.0;
        let expected = (p1 * p2 * p3 * p4).powf(0.25);
        assert!((bleu4(&c, &ref_slices) - expected).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_hand_computed() {
        // Candidate 2 tokens, reference 4: BP = exp(1 - 4/2) = e^-1.
        let c = toks("a b");
        let r = toks("a b c d");
        let ref_slices: Vec<&[String]> = vec![&r];
        let p1: f64 = 1.0; // 2/2
        let p2: f64 = 1.0; // 1/1
        let p3 = BLEU_SMOOTHING_EPS; // no trigrams: total 0
        let p4 = BLEU_SMOOTHING_EPS;
        let expected = (-1.0f64).exp() * (p1 * p2 * p3 * p4).powf(0.25);
        assert!((bleu4(&c, &ref_slices) - expected).abs() < 1e-12);
    }

    #[test]
    fn meteor_two_match_one_chunk_hand_computed() {
        // "the cat sat" vs "the cat ran": 2 matches, 1 chunk.
        // P = R = 2/3, F = 10PR/(R+9P) = 2/3, penalty = 0.5*(1/2)^3.
        let c = toks("the cat sat");
        let r = toks("the cat ran");
        let ref_slices: Vec<&[String]> = vec![&r];
        let f: f64 = 2.0 / 3.0;
        let expected = f * (1.0 - 0.5 * 0.125);
        assert!((meteor_lite(&c, &ref_slices) - expected).abs() < 1e-12);
    }

    #[test]
    fn meteor_chunks_minimized_over_alignments() {
        // "a b a" vs "a b a": naive left-to-right alignment of the repeated
        // "a" could produce 2 chunks; the minimum is 1.
        let c = toks("a b a");
        let ref_slices_owned = toks("a b a");
        let ref_slices: Vec<&[String]> = vec![&ref_slices_owned];
        let expected = 1.0 * (1.0 - 0.5 * (1.0f64 / 3.0).powi(3));
        assert!((meteor_lite(&c, &ref_slices) - expected).abs() < 1e-12);
    }

    #[test]
    fn meteor_alignment_may_skip_an_earlier_occurrence() {
        // "a x a" vs "x a": skipping the first "a" aligns "x a" contiguously
        // for a single chunk; greedily matching the first "a" would give 2.
        let c = toks("a x a");
        let r = toks("x a");
        let refs: Vec<&[String]> = vec![&r];
        let p: f64 = 2.0 / 3.0;
        let rr: f64 = 1.0;
        let f = 10.0 * p * rr / (rr + 9.0 * p);
        let expected = f * (1.0 - 0.5 * 0.125);
        assert!((meteor_lite(&c, &refs) - expected).abs() < 1e-12);
    }

    #[test]
    fn meteor_takes_max_over_references() {
        let c = toks("a b c");
        let r1 = toks("x y z");
        let r2 = toks("a b c");
        let refs: Vec<&[String]> = vec![&r1, &r2];
        let best = meteor_lite(&c, &refs);
        let direct = meteor_lite(&c, &[r2.as_slice()]);
        assert_eq!(best, direct);
    }

    #[test]
    fn duplicate_reference_changes_nothing() {
        let c = toks("a cat sits on the mat");
        let r1 = toks("a cat sat on the mat");
        let r2 = toks("the cat is sitting there");
        let refs: Vec<&[String]> = vec![&r1, &r2];
        let refs_dup: Vec<&[String]> = vec![&r1, &r2, &r1];
        assert_eq!(bleu4(&c, &refs), bleu4(&c, &refs_dup));
        assert_eq!(meteor_lite(&c, &refs), meteor_lite(&c, &refs_dup));
    }

    #[test]
    fn reference_permutation_changes_nothing() {
        let c = toks("a cat sits on the mat");
        let r1 = toks("a cat sat on the mat");
        let r2 = toks("a dog sits on a rug");
        let fwd: Vec<&[String]> = vec![&r1, &r2];
        let rev: Vec<&[String]> = vec![&r2, &r1];
        assert_eq!(bleu4(&c, &fwd), bleu4(&c, &rev));
        assert_eq!(meteor_lite(&c, &fwd), meteor_lite(&c, &rev));
    }

    #[test]
    fn scores_work_on_token_indices_too() {
        let c: Vec<u32> = vec![5, 6, 7, 8];
        let r: Vec<u32> = vec![5, 6, 7, 9];
        let refs: Vec<&[u32]> = vec![&r];
        let cs: Vec<String> = c.iter().map(|t| format!("w{t}")).collect();
        let rs: Vec<String> = r.iter().map(|t| format!("w{t}")).collect();
        let refs_s: Vec<&[String]> = vec![&rs];
        assert_eq!(bleu4(&c, &refs), bleu4(&cs, &refs_s));
        assert_eq!(meteor_lite(&c, &refs), meteor_lite(&cs, &refs_s));
    }

    #[test]
    fn evaluate_run_aggregates_and_validates() {
        let candidates = vec![
            (0u64, toks("a cat on a mat")),
            (1u64, toks("a dog in a fog")),
        ];
        let references = vec![
            (0u64, vec![toks("a cat on a mat")]),
            (1u64, vec![toks("a dog in a fog"), toks("some dog somewhere")]),
        ];
        let (bleu, meteor) = evaluate_run(&candidates, &references).unwrap();
        assert_eq!(bleu.corpus_score, 1.0);
        assert_eq!(bleu.per_sample.len(), 2);
        // METEOR corpus score is the mean of per-sample scores.
        let mean = (meteor.per_sample[0].score + meteor.per_sample[1].score) / 2.0;
        assert!((meteor.corpus_score - mean).abs() < 1e-15);

        let bad_refs = vec![(0u64, vec![toks("a")]), (7u64, vec![toks("b")])];
        assert!(matches!(
            evaluate_run(&candidates, &bad_refs),
            Err(EvalError::IdMismatch(_))
        ));
    }
}
