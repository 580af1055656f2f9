use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::DecoderError;

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token <-> index bijection with reserved sentinels at indices 0..3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_count: usize,
}

impl Vocabulary {
    /// Retains corpus tokens appearing strictly more than `min_count` times,
    /// ordered by descending count then lexicographically, after the three
    /// reserved sentinels.
    pub fn build<'a, I>(corpus: I, min_count: usize) -> Vocabulary
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        assert!(min_count >= 1, "min_count must be >= 1");
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for caption in corpus {
            for w in caption {
                *counts.entry(w.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, c)| c > min_count && !is_reserved(w))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens = vec![BOS_TOKEN.to_string(), EOS_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(kept.into_iter().map(|(w, _)| w.to_string()));
        Vocabulary::from_tokens(tokens, min_count).expect("constructed tokens are valid")
    }

    /// Builds directly from an index-ordered token list; the reserved
    /// sentinels must occupy the first three slots.
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Vocabulary, DecoderError> {
        if tokens.len() < 3
            || tokens[0] != BOS_TOKEN
            || tokens[1] != EOS_TOKEN
            || tokens[2] != UNK_TOKEN
        {
            return Err(DecoderError::Vocab(
                "vocabulary must start with the reserved tokens <bos>, <eos>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(DecoderError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index, min_count })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Encodes caption words into a sentinel-framed token sequence; words
    /// outside the vocabulary map to UNK.
    pub fn encode(&self, words: &[String]) -> TokenSequence {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(BOS);
        ids.extend(words.iter().map(|w| self.id_or_unk(w)));
        ids.push(EOS);
        TokenSequence { ids }
    }

    /// Renders the interior words of a sequence (sentinels dropped).
    pub fn decode_words(&self, seq: &TokenSequence) -> Vec<String> {
        seq.words()
            .iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// One token per line, line number = index, reserved tokens first.
    pub fn save(&self, path: &Path) -> Result<(), DecoderError> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| DecoderError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary, DecoderError> {
        let text =
            fs::read_to_string(path).map_err(|e| DecoderError::Io(path.display().to_string(), e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Vocabulary::from_tokens(tokens, 1)
    }
}

fn is_reserved(w: &str) -> bool {
    w == BOS_TOKEN || w == EOS_TOKEN || w == UNK_TOKEN
}

/// A caption as vocabulary indices framed by sentinels: the sequence starts
/// with BOS and, unless generation was cut off at the length limit, ends
/// with EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<u32>) -> Result<TokenSequence, DecoderError> {
        if ids.first() != Some(&BOS) {
            return Err(DecoderError::Vocab("token sequence must start with BOS".into()));
        }
        for (i, &id) in ids.iter().enumerate() {
            if id == BOS && i != 0 {
                return Err(DecoderError::Vocab("BOS may only appear first".into()));
            }
            if id == EOS && i != ids.len() - 1 {
                return Err(DecoderError::Vocab("EOS may only appear last".into()));
            }
        }
        Ok(TokenSequence { ids })
    }

    pub(crate) fn from_words_unchecked(words: &[u32], terminated: bool) -> TokenSequence {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(words);
        if terminated {
            ids.push(EOS);
        }
        TokenSequence { ids }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// True when the sequence carries its EOS terminator.
    pub fn terminated(&self) -> bool {
        self.ids.last() == Some(&EOS)
    }

    /// Interior word indices, without BOS/EOS.
    pub fn words(&self) -> &[u32] {
        let end = if self.terminated() { self.ids.len() - 1 } else { self.ids.len() };
        &self.ids[1..end]
    }

    pub fn word_count(&self) -> usize {
        self.words().len()
    }
}
