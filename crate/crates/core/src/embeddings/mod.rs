//! Word vectors: skipgram training, neighbour queries and name tooling.

mod discovery;
mod skipgram;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub use discovery::{
    name_discovery_session, read_candidates, read_name_list, write_candidates, write_name_list,
    CandidateBlock, Curator, DiscoverySession, InteractiveCurator, NameEntry, NameList, Provenance,
    ScriptedCurator,
};
pub use skipgram::{train_skipgram, SkipgramConfig, SkipgramModel};

/// A token → dense vector table.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f32>,
}

impl WordVectors {
    pub fn new(tokens: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != tokens.len() * dim {
            return Err(Error::shape(
                "word vectors",
                format!("{} values for {} × {dim}", data.len(), tokens.len()),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!(
                    "duplicate token {t:?} in word vectors"
                )));
            }
        }
        Ok(Self {
            tokens,
            index,
            dim,
            data,
        })
    }

    /// Content-token rows of a trained decoder's input embedding.
    pub fn from_decoder(
        model: &crate::seq2seq::Seq2Seq,
        vocab: &crate::text::Vocabulary,
    ) -> Result<Self> {
        let table = model.params().require("embedding.weight")?;
        if table.rows() != vocab.len() {
            return Err(Error::Vocab(format!(
                "decoder has {} embedding rows, vocabulary has {} tokens",
                table.rows(),
                vocab.len()
            )));
        }
        let start = crate::text::RESERVED.len();
        let tokens: Vec<String> = vocab.entries().map(|(t, _)| t.to_string()).collect();
        let data = table.data()[start * table.cols()..].to_vec();
        Self::new(tokens, table.cols(), data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vector(&self, token: &str) -> Option<&[f32]> {
        self.id(token).map(|i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine similarity of two rows (0 when either is the zero vector).
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        cosine32(self.row(a), self.row(b))
    }

    /// The `k` tokens most cosine-similar to `token`, excluding itself;
    /// ties go to the lower row index.
    pub fn nearest_neighbors(&self, token: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let q = self
            .id(token)
            .ok_or_else(|| Error::Vocab(format!("{token:?} has no embedding")))?;
        let qn = norm(self.row(q));
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| i != q)
            .map(|i| {
                let (v, n) = (self.row(i), norm(self.row(i)));
                let s = if qn == 0.0 || n == 0.0 {
                    0.0
                } else {
                    dot(self.row(q), v) / (qn * n)
                };
                (s, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(s, i)| (self.tokens[i].clone(), s))
            .collect())
    }

    /// word2vec text format: a `count dim` header, then `token v1 .. vdim`.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (i, t) in self.tokens.iter().enumerate() {
            write!(w, "{t}")?;
            for v in self.row(i) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let bad =
            |line: usize, msg: &str| Error::Vocab(format!("{}:{line}: {msg}", path.display()));
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file"))??;
        let mut it = header.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(count)), Some(Ok(dim))) = (it.next(), it.next()) else {
            return Err(bad(1, "expected `count dim` header"));
        };
        let mut tokens = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            tokens.push(parts.next().unwrap_or_default().to_string());
            let before = data.len();
            for p in parts {
                data.push(p.parse::<f32>().map_err(|_| bad(i + 2, "bad float"))?);
            }
            if data.len() - before != dim {
                return Err(bad(i + 2, "wrong number of components"));
            }
        }
        if tokens.len() != count {
            return Err(bad(0, "row count disagrees with header"));
        }
        Self::new(tokens, dim, data)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine32(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NameHits {
    /// Sentences containing at least one name.
    pub sentences: usize,
    /// Sentences containing each name.
    pub per_name: BTreeMap<String, usize>,
}

/// Whole-token, case-insensitive name scan.
pub fn count_name_hits<S: AsRef<str>>(sentences: &[S], names: &[String]) -> NameHits {
    let wanted: HashSet<String> = names.iter().map(|n| n.to_lowercase()).collect();
    let mut hits = NameHits {
        sentences: 0,
        per_name: wanted.iter().map(|n| (n.clone(), 0)).collect(),
    };
    for s in sentences {
        let found: HashSet<String> = s
            .as_ref()
            .split_whitespace()
            .map(str::to_lowercase)
            .filter(|t| wanted.contains(t))
            .collect();
        if !found.is_empty() {
            hits.sentences += 1;
        }
        for t in found {
            *hits.per_name.get_mut(&t).expect("name is tracked") += 1;
        }
    }
    hits
}

#[cfg(test)]
mod tests;
