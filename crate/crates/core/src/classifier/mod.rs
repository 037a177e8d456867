//! Bidirectional GRU diagnosis classifier and support-weighted metrics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    glorot_uniform, AdamConfig, AdamState, EarlyStopping, Grads, ParamStore, Scalar, StopReason,
    Tape, Tensor, Var, Verdict,
};
use crate::seq2seq::EpochStats;
use crate::text::PAD;

const DIRS: [&str; 2] = ["fwd", "bwd"];
const GATES: [char; 3] = ['z', 'r', 'n'];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiGruDims {
    pub vocab_size: usize,
    pub embed: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// A content-token sentence with its primary diagnosis code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labeled {
    pub content: Vec<u32>,
    pub label: usize,
}

pub fn param_names() -> Vec<String> {
    let mut names = vec!["embedding.weight".to_string()];
    for dir in DIRS {
        for g in GATES {
            names.push(format!("{dir}.w_{g}"));
            names.push(format!("{dir}.u_{g}"));
            names.push(format!("{dir}.b_{g}"));
        }
    }
    names.push("head.weight".into());
    names.push("head.bias".into());
    names
}

fn shapes(d: &BiGruDims) -> Vec<Vec<usize>> {
    let mut s = vec![vec![d.vocab_size, d.embed]];
    for _ in DIRS {
        for _ in GATES {
            s.extend([
                vec![d.embed, d.hidden],
                vec![d.hidden, d.hidden],
                vec![d.hidden],
            ]);
        }
    }
    s.extend([vec![2 * d.hidden, d.classes], vec![d.classes]]);
    s
}

pub fn init_params<T: Scalar>(dims: &BiGruDims, seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in param_names().into_iter().zip(shapes(dims)) {
        let t = if shape.len() == 2 {
            glorot_uniform(shape[0], shape[1], &mut rng)
        } else {
            Tensor::zeros(&shape)
        };
        store.insert(name, t).expect("names are unique");
    }
    store
}

pub fn zero_params<T: Scalar>(dims: &BiGruDims) -> ParamStore<T> {
    let mut store = ParamStore::new();
    for (name, shape) in param_names().into_iter().zip(shapes(dims)) {
        store
            .insert(name, Tensor::zeros(&shape))
            .expect("names are unique");
    }
    store
}

pub fn infer_dims<T: Scalar>(params: &ParamStore<T>) -> Result<BiGruDims> {
    let emb = params.require("embedding.weight")?;
    let head = params.require("head.weight")?;
    if emb.shape().len() != 2 || head.shape().len() != 2 || head.rows() % 2 != 0 {
        return Err(Error::Checkpoint(
            "not a BiGRU classifier checkpoint".into(),
        ));
    }
    let dims = BiGruDims {
        vocab_size: emb.rows(),
        embed: emb.cols(),
        hidden: head.rows() / 2,
        classes: head.cols(),
    };
    for (name, shape) in param_names().iter().zip(shapes(&dims)) {
        let t = params.require(name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
    }
    if params.len() != param_names().len() {
        return Err(Error::Checkpoint(
            "unexpected extra tensors in classifier checkpoint".into(),
        ));
    }
    Ok(dims)
}

struct Cell {
    w: [Var; 3],
    u: [Var; 3],
    b: [Var; 3],
}

fn cell<T: Scalar>(tape: &mut Tape<'_, T>, dir: &str) -> Result<Cell> {
    let mut get = |kind: &str, g: char| tape.param_named(&format!("{dir}.{kind}_{g}"));
    Ok(Cell {
        w: [get("w", 'z')?, get("w", 'r')?, get("w", 'n')?],
        u: [get("u", 'z')?, get("u", 'r')?, get("u", 'n')?],
        b: [get("b", 'z')?, get("b", 'r')?, get("b", 'n')?],
    })
}

/// z = σ(x W_z + h U_z + b_z), r = σ(x W_r + h U_r + b_r),
/// ñ = tanh(x W_n + (r ⊙ h) U_n + b_n), h' = z ⊙ h + (1 − z) ⊙ ñ.
fn gru_step<T: Scalar>(tape: &mut Tape<'_, T>, c: &Cell, x: Var, h: Var) -> Result<Var> {
    let gate = |tape: &mut Tape<'_, T>, g: usize, hin: Var| -> Result<Var> {
        let a = tape.matmul(x, c.w[g])?;
        let b = tape.matmul(hin, c.u[g])?;
        let s = tape.add(a, b)?;
        tape.add_bias(s, c.b[g])
    };
    let z = gate(tape, 0, h)?;
    let z = tape.sigmoid(z)?;
    let r = gate(tape, 1, h)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h)?;
    let n = gate(tape, 2, rh)?;
    let n = tape.tanh(n)?;
    // n + z ⊙ (h − n)
    let diff = tape.sub(h, n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}

/// Logits for a batch of sentences. Rows are right-padded; the forward
/// cell freezes once a row runs out of tokens and the backward cell stays
/// at zero until it reaches the row's last token.
pub fn forward_logits<T: Scalar>(tape: &mut Tape<'_, T>, batch: &[&[u32]]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let emb = tape.param_named("embedding.weight")?;
    let hidden = tape
        .param_named("head.weight")
        .map(|w| tape.value(w).rows() / 2)?;
    let steps = batch.iter().map(|s| s.len()).max().unwrap_or(0);
    let zero = tape.input(Tensor::zeros(&[batch.len(), hidden]))?;
    let mut finals = Vec::with_capacity(2);
    for (d, dir) in DIRS.iter().enumerate() {
        let c = cell(tape, dir)?;
        let mut h = zero;
        for i in 0..steps {
            let t = if d == 0 { i } else { steps - 1 - i };
            let ids: Vec<usize> = batch
                .iter()
                .map(|s| s.get(t).copied().unwrap_or(PAD) as usize)
                .collect();
            let live: Vec<bool> = batch.iter().map(|s| t < s.len()).collect();
            let x = tape.embedding(emb, &ids, Some(PAD as usize))?;
            let next = gru_step(tape, &c, x, h)?;
            h = if live.iter().all(|&l| l) {
                next
            } else {
                tape.select_rows(next, h, &live)?
            };
        }
        finals.push(h);
    }
    let both = tape.concat_cols(finals[0], finals[1])?;
    let w = tape.param_named("head.weight")?;
    let b = tape.param_named("head.bias")?;
    let z = tape.matmul(both, w)?;
    tape.add_bias(z, b)
}

fn check_batch(batch: &[&Labeled], classes: usize) -> Result<()> {
    for ex in batch {
        if ex.content.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot classify an empty sentence".into(),
            ));
        }
        if ex.label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {} outside {classes} classes",
                ex.label
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy of the batch.
pub fn classifier_loss<T: Scalar>(tape: &mut Tape<'_, T>, batch: &[&Labeled]) -> Result<Var> {
    let classes = tape.param_named("head.bias").map(|b| tape.value(b).len())?;
    check_batch(batch, classes)?;
    let content: Vec<&[u32]> = batch.iter().map(|e| e.content.as_slice()).collect();
    let logits = forward_logits(tape, &content)?;
    let targets: Vec<Option<usize>> = batch.iter().map(|e| Some(e.label)).collect();
    tape.cross_entropy(
        logits,
        &targets,
        T::one() / T::from_f64_lossy(batch.len() as f64),
    )
}

pub fn batch_loss<T: Scalar>(params: &ParamStore<T>, batch: &[&Labeled]) -> Result<(T, Grads<T>)> {
    let mut tape = Tape::new(params);
    let loss = classifier_loss(&mut tape, batch)?;
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), grads))
}

#[derive(Clone, Debug)]
pub struct BiGru {
    dims: BiGruDims,
    params: ParamStore<f32>,
}

impl BiGru {
    pub fn new(dims: BiGruDims, seed: u64) -> Self {
        Self {
            dims,
            params: init_params(&dims, seed),
        }
    }

    pub fn from_params(params: ParamStore<f32>) -> Result<Self> {
        Ok(Self {
            dims: infer_dims(&params)?,
            params,
        })
    }

    pub fn dims(&self) -> BiGruDims {
        self.dims
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    /// Class distributions. Empty sentences are rejected.
    pub fn predict_proba(&self, sentences: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        if sentences.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidArgument(
                "cannot classify an empty sentence".into(),
            ));
        }
        self.proba_unchecked(sentences)
    }

    /// An empty sentence leaves both final states at zero, so only the head
    /// bias decides; used where alignment matters more than rejecting it.
    fn proba_unchecked(&self, sentences: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(1024) {
            let mut tape = Tape::new(&self.params);
            let logits = forward_logits(&mut tape, chunk)?;
            let lv = tape.value(logits);
            for r in 0..lv.rows() {
                let row: Vec<f64> = lv.row(r).iter().map(|&x| x as f64).collect();
                out.push(
                    crate::nn::tensor::log_softmax(&row)
                        .into_iter()
                        .map(f64::exp)
                        .collect(),
                );
            }
        }
        Ok(out)
    }

    pub fn predict(&self, sentences: &[&[u32]]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(sentences)?
            .iter()
            .map(|p| argmax(p))
            .collect())
    }

    fn predict_lenient(&self, sentences: &[&[u32]]) -> Result<Vec<usize>> {
        Ok(self
            .proba_unchecked(sentences)?
            .iter()
            .map(|p| argmax(p))
            .collect())
    }

    /// Mean per-sentence cross-entropy.
    pub fn mean_loss(&self, data: &[Labeled]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in data.chunks(1024) {
            let refs: Vec<&Labeled> = chunk.iter().collect();
            let mut tape = Tape::new(&self.params);
            let loss = classifier_loss(&mut tape, &refs)?;
            total += tape.scalar(loss) as f64 * chunk.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }
}

fn argmax(p: &[f64]) -> usize {
    // First maximum wins.
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub embed: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            embed: 200,
            hidden: 100,
            lr: 0.001,
            batch_size: 128,
            patience: 2,
            max_epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierStats {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

/// Adam on mean cross-entropy with validation early stopping; returns the
/// best-validation parameters.
pub fn train_classifier(
    train: &[Labeled],
    val: &[Labeled],
    vocab_size: usize,
    classes: usize,
    config: &ClassifierConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(BiGru, ClassifierStats)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(
            "classifier training and validation splits must be non-empty".into(),
        ));
    }
    if config.batch_size == 0 || config.max_epochs == 0 || config.embed == 0 || config.hidden == 0 {
        return Err(Error::InvalidArgument(
            "classifier sizes and epochs must be positive".into(),
        ));
    }
    let dims = BiGruDims {
        vocab_size,
        embed: config.embed,
        hidden: config.hidden,
        classes,
    };
    let mut model = BiGru::new(dims, config.seed);
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut stopper = EarlyStopping::new(config.patience, config.max_epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.params().clone();
    let mut epochs = Vec::new();
    loop {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Labeled> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_loss(model.params(), &batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("classifier loss {loss}")));
            }
            adam.update(model.params_mut(), &grads)?;
            loss_sum += loss as f64;
            batches += 1;
        }
        let val_loss = model.mean_loss(val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!(
                "classifier validation loss {val_loss}"
            )));
        }
        let stats = EpochStats {
            epoch: epochs.len() + 1,
            train_loss: loss_sum / batches as f64,
            val_loss,
        };
        log::info!(
            "classifier epoch {} train {:.4} val {:.4}",
            stats.epoch,
            stats.train_loss,
            val_loss
        );
        on_epoch(&stats);
        epochs.push(stats);
        let verdict = stopper.observe(val_loss);
        if stopper.is_best_epoch() {
            best = model.params().clone();
        }
        if let Verdict::Stop(reason) = verdict {
            *model.params_mut() = best;
            return Ok((
                model,
                ClassifierStats {
                    epochs,
                    best_epoch: stopper.best_epoch(),
                    best_val_loss: stopper.best_loss().unwrap_or(f64::NAN),
                    stop_reason: reason,
                },
            ));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub sens: f64,
    pub ppv: f64,
    pub f1: f64,
    /// True-class support counts.
    pub support: BTreeMap<usize, usize>,
    pub pairs: usize,
}

/// One-vs-rest recall, precision and f1 per class, averaged with weights
/// proportional to true-class support. A class never predicted gets
/// precision 0.
pub fn weighted_metrics(predictions: &[usize], truth: &[usize]) -> Result<ClassificationReport> {
    if predictions.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut support: BTreeMap<usize, usize> = BTreeMap::new();
    let mut predicted: BTreeMap<usize, usize> = BTreeMap::new();
    let mut hits: BTreeMap<usize, usize> = BTreeMap::new();
    for (&p, &t) in predictions.iter().zip(truth) {
        *support.entry(t).or_default() += 1;
        *predicted.entry(p).or_default() += 1;
        if p == t {
            *hits.entry(t).or_default() += 1;
        }
    }
    let n = truth.len();
    let (mut sens, mut ppv, mut f1) = (0.0, 0.0, 0.0);
    for (&c, &s) in &support {
        let tp = hits.get(&c).copied().unwrap_or(0) as f64;
        let rec = tp / s as f64;
        let prec = match predicted.get(&c) {
            Some(&p) if p > 0 => tp / p as f64,
            _ => 0.0,
        };
        let f = if rec + prec == 0.0 {
            0.0
        } else {
            2.0 * rec * prec / (rec + prec)
        };
        let w = s as f64 / n as f64;
        sens += w * rec;
        ppv += w * prec;
        f1 += w * f;
    }
    Ok(ClassificationReport {
        sens,
        ppv,
        f1,
        support,
        pairs: n,
    })
}

/// Scores the classifier on authentic sentences and on synthetic sentences
/// for the same records. An empty synthetic sentence is still classified
/// (from the head bias alone) so the two sets stay aligned.
pub fn transfer_eval(
    model: &BiGru,
    authentic: &[Labeled],
    synthetic: &[Labeled],
) -> Result<(ClassificationReport, ClassificationReport)> {
    if authentic.len() != synthetic.len()
        || authentic
            .iter()
            .zip(synthetic)
            .any(|(a, s)| a.label != s.label)
    {
        return Err(Error::InvalidArgument(
            "authentic and synthetic sets are not aligned".into(),
        ));
    }
    let truth: Vec<usize> = authentic.iter().map(|e| e.label).collect();
    let a: Vec<&[u32]> = authentic.iter().map(|e| e.content.as_slice()).collect();
    let s: Vec<&[u32]> = synthetic.iter().map(|e| e.content.as_slice()).collect();
    let ra = weighted_metrics(&model.predict(&a)?, &truth)?;
    let rs = weighted_metrics(&model.predict_lenient(&s)?, &truth)?;
    Ok((ra, rs))
}

/// One row of the transfer table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub text: String,
    pub sens: f64,
    pub ppv: f64,
    pub f1: f64,
    pub pairs: usize,
}

impl TransferRow {
    pub fn new(text: &str, r: &ClassificationReport) -> Self {
        Self {
            text: text.to_string(),
            sens: r.sens,
            ppv: r.ppv,
            f1: r.f1,
            pairs: r.pairs,
        }
    }
}

pub fn format_transfer_table(rows: &[TransferRow]) -> String {
    let mut out = format!("{:<14} {:>7} {:>7} {:>7}\n", "text", "sens", "ppv", "f1");
    for r in rows {
        out.push_str(&format!(
            "{:<14} {:>7.4} {:>7.4} {:>7.4}\n",
            r.text, r.sens, r.ppv, r.f1
        ));
    }
    out
}
