//! Vocabulary, corpus filtering and fixed-length token sequences.

mod io;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schema::RecordPair;

pub use io::{read_pairs_jsonl, read_vocab, write_pairs_jsonl, write_vocab, TokenizedPair};

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
pub const RESERVED: [&str; 3] = ["<pad>", "<sos>", "<eos>"];
pub const DEFAULT_MIN_FREQ: u64 = 10;
pub const DEFAULT_MAX_LEN: usize = 18;

/// Lowercase, whitespace-split.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, u32>,
    min_freq: u64,
}

impl Vocabulary {
    /// `entries` are the non-reserved tokens in id order (ids start at 3).
    pub fn from_entries(entries: Vec<(String, u64)>, min_freq: u64) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut freqs = vec![0; RESERVED.len()];
        let mut index = HashMap::new();
        for (tok, freq) in entries {
            if RESERVED.contains(&tok.as_str()) || index.contains_key(&tok) {
                return Err(Error::Vocab(format!("duplicate or reserved token {tok:?}")));
            }
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!("invalid token {tok:?}")));
            }
            index.insert(tok.clone(), tokens.len() as u32);
            tokens.push(tok);
            freqs.push(freq);
        }
        Ok(Self {
            tokens,
            freqs,
            index,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_freq(&self) -> u64 {
        self.min_freq
    }

    /// Id of a non-reserved token.
    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn freq(&self, id: u32) -> Option<u64> {
        self.freqs.get(id as usize).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Non-reserved tokens with their frequencies, in id order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.tokens[RESERVED.len()..]
            .iter()
            .zip(&self.freqs[RESERVED.len()..])
            .map(|(t, &f)| (t.as_str(), f))
    }
}

/// Keeps tokens occurring at least `min_freq` times. Ids go by frequency
/// (descending), ties alphabetical.
pub fn build_vocab<'a, I>(corpus: I, min_freq: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut sentences = 0usize;
    for sentence in corpus {
        sentences += 1;
        for tok in tokenize(sentence) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if sentences == 0 {
        return Err(Error::Vocab(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(&t.as_str()))
        .collect();
    // BTreeMap order is alphabetical; a stable sort keeps it for ties.
    kept.sort_by(|a, b| b.1.cmp(&a.1));
    Vocabulary::from_entries(kept, min_freq)
}

#[derive(Clone, Debug, Default)]
pub struct FilterOutcome {
    pub pairs: Vec<RecordPair>,
    pub dropped_oov: usize,
    pub dropped_length: usize,
}

/// Drops pairs with an out-of-vocabulary token (counted first) or more
/// than `max_len` tokens.
pub fn filter_corpus(pairs: Vec<RecordPair>, vocab: &Vocabulary, max_len: usize) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for pair in pairs {
        let toks = tokenize(&pair.text);
        if toks.iter().any(|t| !vocab.contains(t)) {
            out.dropped_oov += 1;
        } else if toks.len() > max_len {
            out.dropped_length += 1;
        } else {
            out.pairs.push(pair);
        }
    }
    out
}

/// `[SOS, content.., EOS, PAD..]` of length `max_len + 2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
    content_len: usize,
}

impl TokenSequence {
    pub fn from_content(content: &[u32], max_len: usize) -> Result<Self> {
        if content.len() > max_len {
            return Err(Error::InvalidArgument(format!(
                "{} content tokens exceed max_len {max_len}",
                content.len()
            )));
        }
        if let Some(bad) = content.iter().find(|&&t| t == PAD || t == SOS || t == EOS) {
            return Err(Error::InvalidArgument(format!(
                "reserved id {bad} inside content"
            )));
        }
        let mut ids = Vec::with_capacity(max_len + 2);
        ids.push(SOS);
        ids.extend_from_slice(content);
        ids.push(EOS);
        ids.resize(max_len + 2, PAD);
        Ok(Self {
            ids,
            content_len: content.len(),
        })
    }

    /// Validates a stored id vector.
    pub fn from_ids(ids: Vec<u32>) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed token sequence {ids:?}"));
        if ids.len() < 2 || ids[0] != SOS {
            return Err(bad());
        }
        let eos = ids.iter().position(|&t| t == EOS).ok_or_else(bad)?;
        if ids[1..eos].iter().any(|&t| t == PAD || t == SOS)
            || ids[eos + 1..].iter().any(|&t| t != PAD)
        {
            return Err(bad());
        }
        Ok(Self {
            content_len: eos - 1,
            ids,
        })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn content(&self) -> &[u32] {
        &self.ids[1..=self.content_len]
    }

    pub fn content_len(&self) -> usize {
        self.content_len
    }

    pub fn max_len(&self) -> usize {
        self.ids.len() - 2
    }
}

pub fn encode_sentence(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    let content = tokenize(text)
        .iter()
        .map(|t| {
            vocab
                .id(t)
                .ok_or_else(|| Error::Vocab(format!("out-of-vocabulary token {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    TokenSequence::from_content(&content, max_len)
}

/// Space-joined content tokens.
pub fn decode_content(content: &[u32], vocab: &Vocabulary) -> Result<String> {
    let mut words = Vec::with_capacity(content.len());
    for &id in content {
        match vocab.token(id) {
            Some(t) if id > EOS => words.push(t),
            _ => return Err(Error::Vocab(format!("id {id} is not a content token"))),
        }
    }
    Ok(words.join(" "))
}

pub fn decode_tokens(seq: &TokenSequence, vocab: &Vocabulary) -> Result<String> {
    decode_content(seq.content(), vocab)
}

/// Seeded shuffle of `0..n` split at `train_frac`; returns (train, validation)
/// index lists, each sorted.
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * train_frac).round() as usize;
    let mut train = idx[..cut.min(n)].to_vec();
    let mut val = idx[cut.min(n)..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Seeded sample of up to `size` items of `from`, kept in their original order.
pub fn sample_subset(from: &[usize], size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> =
        rand::seq::index::sample(&mut rng, from.len(), size.min(from.len())).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| from[i]).collect()
}
