use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WordVectors;
use crate::error::{Error, Result};
use crate::nn::tensor::sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Starting rate; decays linearly towards zero over training.
    pub lr: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            min_count: 1,
            seed: 0,
        }
    }
}

impl SkipgramConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "skipgram dim, window and epochs must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "skipgram lr {} must be positive",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SkipgramModel {
    /// Input (word) vectors; these are the embeddings.
    pub vectors: WordVectors,
    pub counts: Vec<u64>,
    /// Mean negative-sampling loss per (centre, context) pair, per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Skip-gram with negative sampling. Negatives come from the unigram
/// distribution raised to 0.75; each centre word uses a window shrunk to a
/// uniform random size in `1..=window`, as in the reference implementation.
pub fn train_skipgram<S: AsRef<str>>(
    sentences: &[S],
    config: &SkipgramConfig,
) -> Result<SkipgramModel> {
    config.validate()?;
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for s in sentences {
        for t in s.as_ref().split_whitespace() {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= config.min_count)
        .collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1));
    if vocab.len() < 2 {
        return Err(Error::Vocab(
            "skipgram needs at least two distinct tokens".into(),
        ));
    }
    let index: std::collections::HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, &(t, _))| (t, i as u32))
        .collect();
    let corpus: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| {
            s.as_ref()
                .split_whitespace()
                .filter_map(|t| index.get(t).copied())
                .collect()
        })
        .collect();

    let (v, d) = (vocab.len(), config.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input: Vec<f32> = (0..v * d)
        .map(|_| (rng.gen::<f32>() - 0.5) / d as f32)
        .collect();
    let mut output = vec![0f32; v * d];
    let noise = WeightedIndex::new(vocab.iter().map(|&(_, c)| (c as f64).powf(0.75)))
        .map_err(|e| Error::Vocab(format!("noise distribution: {e}")))?;

    let total_words: usize = corpus.iter().map(Vec::len).sum();
    let budget = (total_words * config.epochs).max(1) as f64;
    let mut seen = 0usize;
    let mut grad_in = vec![0f32; d];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for _ in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let (mut loss, mut pairs) = (0.0f64, 0usize);
        for &si in &order {
            let sent = &corpus[si];
            for (pos, &centre) in sent.iter().enumerate() {
                let lr = (config.lr * (1.0 - seen as f64 / budget)).max(config.lr * 1e-4) as f32;
                seen += 1;
                let b = rng.gen_range(1..=config.window);
                let lo = pos.saturating_sub(b);
                let hi = (pos + b).min(sent.len() - 1);
                for (cpos, &context) in sent.iter().enumerate().take(hi + 1).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    // The context word's input vector predicts the centre word,
                    // mirroring the reference code's loop.
                    let wi = context as usize * d;
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    for n in 0..=config.negatives {
                        let (target, label) = if n == 0 {
                            (centre as usize, 1.0f32)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == centre as usize {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let wo = target * d;
                        let f: f32 = input[wi..wi + d]
                            .iter()
                            .zip(&output[wo..wo + d])
                            .map(|(a, b)| a * b)
                            .sum();
                        let p = sigmoid(f);
                        loss -= if label > 0.5 {
                            (p.max(1e-7) as f64).ln()
                        } else {
                            ((1.0 - p).max(1e-7) as f64).ln()
                        };
                        let g = (label - p) * lr;
                        for k in 0..d {
                            grad_in[k] += g * output[wo + k];
                            output[wo + k] += g * input[wi + k];
                        }
                    }
                    for k in 0..d {
                        input[wi + k] += grad_in[k];
                    }
                    pairs += 1;
                }
            }
        }
        let mean = loss / pairs.max(1) as f64;
        log::info!("skipgram epoch {} loss {:.4}", epoch_losses.len() + 1, mean);
        epoch_losses.push(mean);
    }

    let tokens = vocab.iter().map(|&(t, _)| t.to_string()).collect();
    Ok(SkipgramModel {
        vectors: WordVectors::new(tokens, d, input)?,
        counts: vocab.iter().map(|&(_, c)| c).collect(),
        epoch_losses,
    })
}
