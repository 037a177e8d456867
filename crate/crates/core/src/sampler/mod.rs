//! Greedy, temperature and beam decoding over any [`Decoder`].

mod table;

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::EncodedRecord;
use crate::text::{TokenSequence, EOS, PAD, SOS};

pub use table::TableDecoder;

/// A batched next-token model. Row `r` of every state belongs to the `r`th
/// record passed to [`Decoder::start`] (or to the `r`th index passed to
/// [`Decoder::gather`]).
pub trait Decoder {
    type State;

    fn vocab_size(&self) -> usize;

    /// State after the record and SOS have been consumed.
    fn start(&self, records: &[EncodedRecord]) -> Result<Self::State>;

    /// Row-major `rows × vocab_size` next-token logits.
    fn logits(&self, state: &Self::State) -> Result<Vec<f32>>;

    fn advance(&self, state: &Self::State, tokens: &[u32]) -> Result<Self::State>;

    /// New state made of the given rows, in order (repeats allowed).
    fn gather(&self, state: &Self::State, rows: &[usize]) -> Self::State;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum Scheme {
    Greedy,
    Probabilistic { t: f64 },
    Beam { k: usize },
}

impl Scheme {
    /// Short label used in reports, e.g. `Beam (k=3)`.
    pub fn label(&self) -> String {
        match self {
            Scheme::Greedy => "Greedy".into(),
            Scheme::Probabilistic { t } => format!("Prob (t={t:?})"),
            Scheme::Beam { k } => format!("Beam (k={k})"),
        }
    }

    /// File-name friendly tag, e.g. `beam-k3`.
    pub fn tag(&self) -> String {
        match self {
            Scheme::Greedy => "greedy".into(),
            Scheme::Probabilistic { t } => format!("prob-t{t:?}"),
            Scheme::Beam { k } => format!("beam-k{k}"),
        }
    }

    /// The six schemes compared by default: beam 3/5/10, t 0.5/1.0, greedy.
    pub fn default_sweep() -> Vec<Scheme> {
        vec![
            Scheme::Beam { k: 3 },
            Scheme::Beam { k: 5 },
            Scheme::Beam { k: 10 },
            Scheme::Probabilistic { t: 0.5 },
            Scheme::Probabilistic { t: 1.0 },
            Scheme::Greedy,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Scheme::Probabilistic { t } if !(t > 0.0 && t.is_finite()) => Err(
                Error::InvalidArgument(format!("temperature must be positive, got {t}")),
            ),
            Scheme::Beam { k: 0 } => Err(Error::InvalidArgument(
                "beam width must be at least 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(flatten)]
    pub scheme: Scheme,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_len() -> usize {
    crate::text::DEFAULT_MAX_LEN
}

impl SamplerConfig {
    pub fn new(scheme: Scheme, seed: u64) -> Self {
        Self {
            scheme,
            max_len: default_max_len(),
            seed,
        }
    }
}

/// A decoded sentence. `log_prob` sums the model's log-probabilities of the
/// emitted tokens, EOS included when it was emitted; a sentence cut off at
/// `max_len` has `eos == false` and no EOS term.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub content: Vec<u32>,
    pub log_prob: f64,
    pub eos: bool,
}

impl Generated {
    pub fn sequence(&self, max_len: usize) -> Result<TokenSequence> {
        TokenSequence::from_content(&self.content, max_len)
    }
}

/// Tokens a decoder may emit: EOS and every content id.
fn emissible(tok: usize) -> bool {
    tok != PAD as usize && tok != SOS as usize
}

/// `log_softmax` of one logit row, in f64.
pub fn log_probs(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z as f64));
    let lse = max
        + row
            .iter()
            .map(|&z| (z as f64 - max).exp())
            .sum::<f64>()
            .ln();
    row.iter().map(|&z| z as f64 - lse).collect()
}

/// Highest-logit emissible token; ties go to the lower id.
pub fn argmax_token(row: &[f32]) -> u32 {
    let mut best = EOS as usize;
    for (i, &z) in row.iter().enumerate() {
        if emissible(i) && z > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Draws from `softmax(z / t)` restricted to emissible tokens.
pub fn sample_token<R: Rng>(row: &[f32], t: f64, rng: &mut R) -> u32 {
    let max = row
        .iter()
        .enumerate()
        .filter(|(i, _)| emissible(*i))
        .fold(f64::NEG_INFINITY, |m, (_, &z)| m.max(z as f64));
    let weights: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if emissible(i) {
                ((z as f64 - max) / t).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = EOS;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last = i as u32;
            if u < *w {
                return i as u32;
            }
            u -= w;
        }
    }
    last
}

/// Per-record generator seeded from `(seed, record_index)`.
pub fn record_rng(seed: u64, record_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(record_index);
    rng
}

/// Step-synchronous decoding of a batch. `choose(row, logits)` picks the
/// next token for batch row `row`.
fn step_decode<D, F>(
    dec: &D,
    records: &[EncodedRecord],
    max_len: usize,
    mut choose: F,
) -> Result<Vec<Generated>>
where
    D: Decoder,
    F: FnMut(usize, &[f32]) -> u32,
{
    let v = dec.vocab_size();
    let mut out: Vec<Generated> = (0..records.len())
        .map(|_| Generated {
            content: Vec::new(),
            log_prob: 0.0,
            eos: false,
        })
        .collect();
    if records.is_empty() {
        return Ok(out);
    }
    let mut state = dec.start(records)?;
    // Batch rows still decoding, as indices into `out`.
    let mut live: Vec<usize> = (0..records.len()).collect();
    if max_len == 0 {
        live.clear();
    }
    while !live.is_empty() {
        let logits = dec.logits(&state)?;
        let mut keep_rows = Vec::new();
        let mut next = Vec::new();
        for (r, &b) in live.iter().enumerate() {
            let row = &logits[r * v..(r + 1) * v];
            let tok = choose(b, row);
            let g = &mut out[b];
            g.log_prob += log_probs(row)[tok as usize];
            if tok == EOS {
                g.eos = true;
            } else {
                g.content.push(tok);
                if g.content.len() < max_len {
                    keep_rows.push(r);
                    next.push(tok);
                }
            }
        }
        if keep_rows.is_empty() {
            break;
        }
        if keep_rows.len() != live.len() {
            state = dec.gather(&state, &keep_rows);
            live = keep_rows.iter().map(|&r| live[r]).collect();
        }
        state = dec.advance(&state, &next)?;
    }
    Ok(out)
}

pub fn greedy_decode<D: Decoder>(
    dec: &D,
    records: &[EncodedRecord],
    max_len: usize,
) -> Result<Vec<Generated>> {
    step_decode(dec, records, max_len, |_, row| argmax_token(row))
}

/// `first_index` is the corpus index of `records[0]`; it selects the rng
/// streams so results do not depend on batching.
pub fn temperature_sample<D: Decoder>(
    dec: &D,
    records: &[EncodedRecord],
    t: f64,
    seed: u64,
    first_index: u64,
    max_len: usize,
) -> Result<Vec<Generated>> {
    Scheme::Probabilistic { t }.validate()?;
    let mut rngs: Vec<ChaCha8Rng> = (0..records.len())
        .map(|i| record_rng(seed, first_index + i as u64))
        .collect();
    step_decode(dec, records, max_len, |b, row| {
        sample_token(row, t, &mut rngs[b])
    })
}

struct Hyp {
    tokens: Vec<u32>,
    score: f64,
    eos: bool,
}

fn by_score(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Beam search for one record. Returns up to `k` hypotheses, best first.
pub fn beam_decode<D: Decoder>(
    dec: &D,
    record: &EncodedRecord,
    k: usize,
    max_len: usize,
) -> Result<Vec<Generated>> {
    Scheme::Beam { k }.validate()?;
    let v = dec.vocab_size();
    let mut state = dec.start(std::slice::from_ref(record))?;
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        eos: false,
    }];
    let mut done: Vec<Hyp> = Vec::new();
    if max_len == 0 {
        done = std::mem::take(&mut live);
    }

    while !live.is_empty() {
        let logits = dec.logits(&state)?;
        let mut cand: Vec<(f64, usize, u32)> = Vec::with_capacity(live.len() * v);
        for (r, h) in live.iter().enumerate() {
            let lp = log_probs(&logits[r * v..(r + 1) * v]);
            for (tok, l) in lp.iter().enumerate() {
                if emissible(tok) {
                    cand.push((h.score + l, r, tok as u32));
                }
            }
        }
        cand.sort_by(|a, b| by_score(a.0, b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cand.truncate(k);

        let mut next_live = Vec::new();
        let mut parents = Vec::new();
        let mut tokens = Vec::new();
        for (score, r, tok) in cand {
            let mut seq = live[r].tokens.clone();
            if tok == EOS {
                done.push(Hyp {
                    tokens: seq,
                    score,
                    eos: true,
                });
                continue;
            }
            seq.push(tok);
            let h = Hyp {
                tokens: seq,
                score,
                eos: false,
            };
            if h.tokens.len() == max_len {
                done.push(h);
            } else {
                next_live.push(h);
                parents.push(r);
                tokens.push(tok);
            }
        }
        live = next_live;
        // Extensions never raise a score, so once k finished hypotheses
        // beat every live one the ranking is settled.
        if done.len() >= k {
            done.sort_by(|a, b| by_score(a.score, b.score));
            let worst = done[k - 1].score;
            if live.iter().all(|h| h.score <= worst) {
                break;
            }
        }
        if live.is_empty() {
            break;
        }
        state = dec.gather(&state, &parents);
        state = dec.advance(&state, &tokens)?;
    }

    done.sort_by(|a, b| by_score(a.score, b.score));
    live.sort_by(|a, b| by_score(a.score, b.score));
    Ok(done
        .into_iter()
        .chain(live)
        .take(k)
        .map(|h| Generated {
            content: h.tokens,
            log_prob: h.score,
            eos: h.eos,
        })
        .collect())
}

/// Chunk size for batched greedy/temperature decoding.
const CHUNK: usize = 512;

/// One sentence per record (beam: the top hypothesis), in record order.
pub fn generate_corpus<D: Decoder>(
    dec: &D,
    records: &[EncodedRecord],
    config: &SamplerConfig,
) -> Result<Vec<Generated>> {
    config.scheme.validate()?;
    let mut out = Vec::with_capacity(records.len());
    match config.scheme {
        Scheme::Greedy => {
            for chunk in records.chunks(CHUNK) {
                out.extend(greedy_decode(dec, chunk, config.max_len)?);
            }
        }
        Scheme::Probabilistic { t } => {
            for (i, chunk) in records.chunks(CHUNK).enumerate() {
                out.extend(temperature_sample(
                    dec,
                    chunk,
                    t,
                    config.seed,
                    (i * CHUNK) as u64,
                    config.max_len,
                )?);
            }
        }
        Scheme::Beam { k } => {
            for record in records {
                let mut hyps = beam_decode(dec, record, k, config.max_len)?;
                out.push(hyps.swap_remove(0));
            }
        }
    }
    Ok(out)
}

/// One line of a generation output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub record_index: usize,
    pub scheme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub text: String,
    pub log_prob: f64,
}

impl GenerationRow {
    pub fn new(record_index: usize, scheme: &Scheme, text: String, log_prob: f64) -> Self {
        let (name, k, t) = match *scheme {
            Scheme::Greedy => ("greedy", None, None),
            Scheme::Probabilistic { t } => ("probabilistic", None, Some(t)),
            Scheme::Beam { k } => ("beam", Some(k), None),
        };
        Self {
            record_index,
            scheme: name.into(),
            k,
            t,
            text,
            log_prob,
        }
    }
}

pub fn write_generation_jsonl(path: &Path, rows: &[GenerationRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_generation_jsonl(path: &Path) -> Result<Vec<GenerationRow>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests;
