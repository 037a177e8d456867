//! Text-quality metrics for aligned authentic/synthetic sentence pairs.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::embeddings::WordVectors;
use crate::error::{Error, Result};

pub const DEFAULT_N_MAX: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub ppv: f64,
    pub sens: f64,
    pub f1: f64,
}

fn harmonic(p: f64, s: f64) -> f64 {
    if p + s == 0.0 {
        0.0
    } else {
        2.0 * p * s / (p + s)
    }
}

/// Unique n-grams of orders `1..=n_eff`.
pub fn ngram_set<T: Hash + Eq>(tokens: &[T], n_eff: usize) -> HashSet<&[T]> {
    let mut set = HashSet::new();
    for n in 1..=n_eff.min(tokens.len()) {
        set.extend(tokens.windows(n));
    }
    set
}

/// Micro-averaged overlap of the unique 1..n_eff-grams, where
/// `n_eff = min(n_max, |ref|, |cand|)`.
pub fn ngram_overlap<T: Hash + Eq>(
    reference: &[T],
    candidate: &[T],
    n_max: usize,
) -> Result<Overlap> {
    if reference.is_empty() || candidate.is_empty() {
        return Err(Error::InvalidArgument(
            "overlap needs two non-empty sentences".into(),
        ));
    }
    let n_eff = n_max.min(reference.len()).min(candidate.len()).max(1);
    let r = ngram_set(reference, n_eff);
    let c = ngram_set(candidate, n_eff);
    let shared = r.intersection(&c).count() as f64;
    let ppv = shared / c.len() as f64;
    let sens = shared / r.len() as f64;
    Ok(Overlap {
        ppv,
        sens,
        f1: harmonic(ppv, sens),
    })
}

/// Document frequencies of reference n-grams, per order.
#[derive(Clone, Debug)]
pub struct IdfTable<T> {
    df: Vec<HashMap<Vec<T>, usize>>,
    docs: usize,
}

impl<T: Hash + Eq + Clone> IdfTable<T> {
    pub fn build<S: AsRef<[T]>>(references: &[S], n_max: usize) -> Self {
        let mut df = vec![HashMap::new(); n_max];
        for sentence in references {
            let toks = sentence.as_ref();
            for (n, table) in df.iter_mut().enumerate() {
                let uniq: HashSet<&[T]> = toks.windows(n + 1).collect();
                for g in uniq {
                    *table.entry(g.to_vec()).or_insert(0) += 1;
                }
            }
        }
        Self {
            df,
            docs: references.len(),
        }
    }

    pub fn n_max(&self) -> usize {
        self.df.len()
    }

    pub fn docs(&self) -> usize {
        self.docs
    }

    /// Stored document frequency (0 when absent).
    pub fn df(&self, gram: &[T]) -> usize {
        match gram.len() {
            0 => 0,
            n if n > self.df.len() => 0,
            n => self.df[n - 1].get(gram).copied().unwrap_or(0),
        }
    }

    /// `ln(docs / df)` with df floored at 1.
    pub fn idf(&self, gram: &[T]) -> f64 {
        (self.docs.max(1) as f64 / self.df(gram).max(1) as f64).ln()
    }
}

fn tfidf<'a, T: Hash + Eq + Clone>(
    tokens: &'a [T],
    n: usize,
    idf: &IdfTable<T>,
) -> HashMap<&'a [T], f64> {
    let total = (tokens.len() + 1 - n) as f64;
    let mut counts: HashMap<&[T], f64> = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_default() += 1.0;
    }
    counts
        .into_iter()
        .map(|(g, c)| (g, c / total * idf.idf(g)))
        .collect()
}

fn cosine_sparse<K: Hash + Eq>(a: &HashMap<K, f64>, b: &HashMap<K, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean over `n = 1..=n_eff` of the TF-IDF cosine similarity at order `n`.
/// An order where either vector is zero contributes 0.
pub fn cider_score<T: Hash + Eq + Clone>(
    reference: &[T],
    candidate: &[T],
    idf: &IdfTable<T>,
    n_max: usize,
) -> Result<f64> {
    if reference.is_empty() || candidate.is_empty() {
        return Err(Error::InvalidArgument(
            "CIDEr needs two non-empty sentences".into(),
        ));
    }
    let n_eff = n_max
        .min(idf.n_max())
        .min(reference.len())
        .min(candidate.len())
        .max(1);
    let mut total = 0.0;
    for n in 1..=n_eff {
        total += cosine_sparse(&tfidf(reference, n, idf), &tfidf(candidate, n, idf));
    }
    Ok(total / n_eff as f64)
}

/// Mean vector of the in-table tokens; `None` if no token is in the table.
pub fn sentence_embedding<S: AsRef<str>>(tokens: &[S], vectors: &WordVectors) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; vectors.dim()];
    let mut m = 0usize;
    for t in tokens {
        if let Some(v) = vectors.vector(t.as_ref()) {
            for (a, &x) in acc.iter_mut().zip(v) {
                *a += x as f64;
            }
            m += 1;
        }
    }
    if m == 0 {
        return None;
    }
    acc.iter_mut().for_each(|a| *a /= m as f64);
    Some(acc)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

/// Cosine similarity of the two mean sentence embeddings; `None` (pair
/// flagged) when either embedding is missing or zero.
pub fn embedding_similarity<S: AsRef<str>>(
    reference: &[S],
    candidate: &[S],
    vectors: &WordVectors,
) -> Option<f64> {
    cosine(
        &sentence_embedding(reference, vectors)?,
        &sentence_embedding(candidate, vectors)?,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scheme: String,
    pub ppv: f64,
    pub sens: f64,
    pub f1: f64,
    pub cider: f64,
    pub es: f64,
    pub pairs: usize,
    /// Pairs left out of the ES mean.
    pub es_flagged: usize,
}

/// Per-pair means over aligned sentence lists. A pair with an empty side
/// scores 0 on overlap and CIDEr (1 when both are empty).
pub fn corpus_report(
    scheme: &str,
    authentic: &[Vec<String>],
    synthetic: &[Vec<String>],
    vectors: &WordVectors,
    idf: &IdfTable<String>,
) -> Result<MetricReport> {
    if authentic.len() != synthetic.len() {
        return Err(Error::InvalidArgument(format!(
            "{} authentic vs {} synthetic sentences",
            authentic.len(),
            synthetic.len()
        )));
    }
    let (mut ppv, mut sens, mut f1, mut cider, mut es) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut es_n = 0usize;
    for (a, s) in authentic.iter().zip(synthetic) {
        if a.is_empty() || s.is_empty() {
            let both = (a.is_empty() && s.is_empty()) as u8 as f64;
            ppv += both;
            sens += both;
            f1 += both;
            cider += both;
        } else {
            let o = ngram_overlap(a, s, DEFAULT_N_MAX)?;
            ppv += o.ppv;
            sens += o.sens;
            f1 += o.f1;
            cider += cider_score(a, s, idf, DEFAULT_N_MAX)?;
        }
        if let Some(v) = embedding_similarity(a, s, vectors) {
            es += v;
            es_n += 1;
        }
    }
    let n = authentic.len().max(1) as f64;
    Ok(MetricReport {
        scheme: scheme.to_string(),
        ppv: ppv / n,
        sens: sens / n,
        f1: f1 / n,
        cider: cider / n,
        es: if es_n == 0 {
            f64::NAN
        } else {
            es / es_n as f64
        },
        pairs: authentic.len(),
        es_flagged: authentic.len() - es_n,
    })
}

/// Fixed-width table with columns ppv, sens, f1, CIDEr, ES.
pub fn format_table(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "scheme", "ppv", "sens", "f1", "CIDEr", "ES"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<14} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            r.scheme, r.ppv, r.sens, r.f1, r.cider, r.es
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Novelty {
    pub unique: usize,
    pub novel: usize,
}

/// Distinct generated sentences, and how many of those never occur in
/// the training corpus.
pub fn novelty_report<S: AsRef<str>>(generated: &[S], training: &[S]) -> Novelty {
    let gen: HashSet<&str> = generated.iter().map(AsRef::as_ref).collect();
    let train: HashSet<&str> = training.iter().map(AsRef::as_ref).collect();
    Novelty {
        unique: gen.len(),
        novel: gen.difference(&train).count(),
    }
}

#[cfg(test)]
mod tests;
