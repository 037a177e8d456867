//! Record encoder + LSTM decoder language model.
//!
//! Row-vector convention throughout: a batch is a `B×n` matrix and weights
//! multiply from the right, so `encoder.weight` is `record_dim × d` and row
//! `j` is the embedding of record bit `j`.

mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::scalar::{gemm, Trans};
use crate::nn::tensor::sigmoid;
use crate::nn::{glorot_uniform, Grads, ParamStore, Scalar, Tape, Tensor, Var};
use crate::sampler::{log_probs, Decoder};
use crate::schema::EncodedRecord;
use crate::text::{TokenSequence, PAD, SOS};

pub use train::{
    pretrain_autoencoder, train, EpochStats, PretrainConfig, PretrainOutcome, TrainConfig,
    TrainStats,
};

const GATES: [char; 4] = ['i', 'f', 'o', 'c'];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqDims {
    pub record_dim: usize,
    pub vocab_size: usize,
    pub hidden: usize,
}

/// A training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub record: EncodedRecord,
    pub seq: TokenSequence,
}

/// Parameter names in store order.
pub fn param_names() -> Vec<String> {
    let mut names = vec![
        "encoder.weight".to_string(),
        "encoder.bias".into(),
        "embedding.weight".into(),
    ];
    for g in GATES {
        names.push(format!("lstm.w_{g}x"));
        names.push(format!("lstm.w_{g}m"));
        names.push(format!("lstm.b_{g}"));
    }
    names.push("output.weight".into());
    names.push("output.bias".into());
    names
}

fn shapes(dims: &Seq2SeqDims) -> Vec<Vec<usize>> {
    let (r, v, d) = (dims.record_dim, dims.vocab_size, dims.hidden);
    let mut s = vec![vec![r, d], vec![d], vec![v, d]];
    for _ in GATES {
        s.extend([vec![d, d], vec![d, d], vec![d]]);
    }
    s.extend([vec![d, v], vec![v]]);
    s
}

/// Glorot-uniform weights, zero biases.
pub fn init_params<T: Scalar>(dims: &Seq2SeqDims, seed: u64) -> ParamStore<T> {
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

pub fn zero_params<T: Scalar>(dims: &Seq2SeqDims) -> ParamStore<T> {
    let mut store = ParamStore::new();
    for (name, shape) in param_names().into_iter().zip(shapes(dims)) {
        store
            .insert(name, Tensor::zeros(&shape))
            .expect("names are unique");
    }
    store
}

/// Checks names and shapes and recovers the dimensions.
pub fn infer_dims<T: Scalar>(params: &ParamStore<T>) -> Result<Seq2SeqDims> {
    let enc = params.require("encoder.weight")?;
    let emb = params.require("embedding.weight")?;
    if enc.shape().len() != 2 || emb.shape().len() != 2 {
        return Err(Error::Checkpoint(
            "encoder/embedding weights must be matrices".into(),
        ));
    }
    let dims = Seq2SeqDims {
        record_dim: enc.rows(),
        vocab_size: emb.rows(),
        hidden: enc.cols(),
    };
    if params.len() != param_names().len() {
        return Err(Error::Checkpoint(format!(
            "expected {} seq2seq tensors, found {}",
            param_names().len(),
            params.len()
        )));
    }
    for (name, shape) in param_names().iter().zip(shapes(&dims)) {
        let t = params.require(name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(dims)
}

/// Dense `B×record_dim` 0/1 matrix.
pub fn dense_records<T: Scalar>(records: &[&EncodedRecord], dim: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); records.len() * dim];
    for (b, r) in records.iter().enumerate() {
        if r.dim() != dim {
            return Err(Error::shape(
                "encode",
                format!("record of length {} for dim {dim}", r.dim()),
            ));
        }
        for &j in r.active() {
            data[b * dim + j] = T::one();
        }
    }
    Tensor::new(vec![records.len(), dim], data)
}

struct LstmVars {
    wx: [Var; 4],
    wm: [Var; 4],
    b: [Var; 4],
}

fn lstm_vars<T: Scalar>(tape: &mut Tape<'_, T>) -> Result<LstmVars> {
    let mut get = |prefix: &str| -> Result<[Var; 4]> {
        let v: Vec<Var> = GATES
            .iter()
            .map(|g| tape.param_named(&format!("lstm.{}", prefix.replace('#', &g.to_string()))))
            .collect::<Result<_>>()?;
        Ok([v[0], v[1], v[2], v[3]])
    };
    Ok(LstmVars {
        wx: get("w_#x")?,
        wm: get("w_#m")?,
        b: get("b_#")?,
    })
}

fn lstm_tape<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &LstmVars,
    x: Var,
    m: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let mut pre = [x; 4];
    for g in 0..4 {
        let a = tape.matmul(x, p.wx[g])?;
        let b = tape.matmul(m, p.wm[g])?;
        let s = tape.add(a, b)?;
        pre[g] = tape.add_bias(s, p.b[g])?;
    }
    let i = tape.sigmoid(pre[0])?;
    let f = tape.sigmoid(pre[1])?;
    let o = tape.sigmoid(pre[2])?;
    let cand = tape.tanh(pre[3])?;
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, cand)?;
    let c_new = tape.add(keep, write)?;
    let squashed = tape.tanh(c_new)?;
    let m_new = tape.mul(o, squashed)?;
    Ok((m_new, c_new))
}

/// Records the teacher-forced loss of a batch on `tape`: the mean over the
/// batch of each sequence's summed negative log-likelihood. Also returns
/// the number of predicted (non-PAD) tokens.
pub fn record_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    batch: &[&Example],
    record_dim: usize,
) -> Result<(Var, usize)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = batch.len();
    let records: Vec<&EncodedRecord> = batch.iter().map(|e| &e.record).collect();
    let x_rec = tape.input(dense_records(&records, record_dim)?)?;
    let w_r = tape.param_named("encoder.weight")?;
    let b_r = tape.param_named("encoder.bias")?;
    let w_e = tape.param_named("embedding.weight")?;
    let w_p = tape.param_named("output.weight")?;
    let b_p = tape.param_named("output.bias")?;
    let lstm = lstm_vars(tape)?;
    let d = tape.value(w_r).cols();

    let enc = tape.matmul(x_rec, w_r)?;
    let enc = tape.add_bias(enc, b_r)?;
    let zero = tape.input(Tensor::zeros(&[n, d]))?;
    let (mut m, mut c) = lstm_tape(tape, &lstm, enc, zero, zero)?;

    let steps = batch.iter().map(|e| e.seq.content_len()).max().unwrap_or(0) + 1;
    let scale = T::one() / T::from_f64_lossy(n as f64);
    let mut total: Option<Var> = None;
    let mut predicted = 0;
    for s in 0..steps {
        let ids: Vec<usize> = batch.iter().map(|e| e.seq.ids()[s] as usize).collect();
        let targets: Vec<Option<usize>> = batch
            .iter()
            .map(|e| {
                let t = e.seq.ids()[s + 1];
                (t != PAD).then_some(t as usize)
            })
            .collect();
        predicted += targets.iter().flatten().count();
        let x = tape.embedding(w_e, &ids, Some(PAD as usize))?;
        (m, c) = lstm_tape(tape, &lstm, x, m, c)?;
        let logits = tape.matmul(m, w_p)?;
        let logits = tape.add_bias(logits, b_p)?;
        let ce = tape.cross_entropy(logits, &targets, scale)?;
        total = Some(match total {
            Some(t) => tape.add(t, ce)?,
            None => ce,
        });
    }
    Ok((total.expect("at least one step"), predicted))
}

/// Mean per-sequence negative log-likelihood and its gradient.
pub fn batch_loss<T: Scalar>(params: &ParamStore<T>, batch: &[&Example]) -> Result<(T, Grads<T>)> {
    let record_dim = params.require("encoder.weight")?.rows();
    let mut tape = Tape::new(params);
    let (loss, _) = record_loss(&mut tape, batch, record_dim)?;
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), grads))
}

/// Hidden and cell vectors of one decoder step; `t` counts inputs consumed
/// (the record is input −1).
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub m: Vec<f32>,
    pub c: Vec<f32>,
    pub t: i64,
}

/// Batched decoder state: `rows × d` hidden and cell matrices.
#[derive(Clone, Debug)]
pub struct LstmState {
    m: Vec<f32>,
    c: Vec<f32>,
    rows: usize,
}

/// Inference view of seq2seq parameters.
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    dims: Seq2SeqDims,
    params: ParamStore<f32>,
}

impl Seq2Seq {
    pub fn new(dims: Seq2SeqDims, seed: u64) -> Self {
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

    pub fn dims(&self) -> Seq2SeqDims {
        self.dims
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<f32> {
        self.params
    }

    fn p(&self, name: &str) -> &[f32] {
        self.params
            .get(name)
            .expect("validated parameter set")
            .data()
    }

    /// `x₋₁ = R·W_r + b_r`.
    pub fn encode(&self, record: &EncodedRecord) -> Result<Vec<f32>> {
        self.encode_batch(std::slice::from_ref(record))
    }

    fn encode_batch(&self, records: &[EncodedRecord]) -> Result<Vec<f32>> {
        let d = self.dims.hidden;
        let (w, b) = (self.p("encoder.weight"), self.p("encoder.bias"));
        let mut x = Vec::with_capacity(records.len() * d);
        for r in records {
            if r.dim() != self.dims.record_dim {
                return Err(Error::shape(
                    "encode",
                    format!(
                        "record of length {} for dim {}",
                        r.dim(),
                        self.dims.record_dim
                    ),
                ));
            }
            let mut row = b.to_vec();
            for &j in r.active() {
                for (acc, &wv) in row.iter_mut().zip(&w[j * d..(j + 1) * d]) {
                    *acc += wv;
                }
            }
            x.extend(row);
        }
        Ok(x)
    }

    fn step_batch(&self, x: &[f32], state: &LstmState) -> Result<LstmState> {
        let (n, d) = (state.rows, self.dims.hidden);
        let mut pre: [Vec<f32>; 4] = Default::default();
        for (g, gate) in GATES.iter().enumerate() {
            let bias = self.p(&format!("lstm.b_{gate}"));
            let mut buf: Vec<f32> = (0..n).flat_map(|_| bias.iter().copied()).collect();
            gemm(
                Trans::No,
                Trans::No,
                n,
                d,
                d,
                x,
                self.p(&format!("lstm.w_{gate}x")),
                1.0,
                &mut buf,
            );
            gemm(
                Trans::No,
                Trans::No,
                n,
                d,
                d,
                &state.m,
                self.p(&format!("lstm.w_{gate}m")),
                1.0,
                &mut buf,
            );
            pre[g] = buf;
        }
        let mut m = vec![0.0; n * d];
        let mut c = vec![0.0; n * d];
        for idx in 0..n * d {
            let i = sigmoid(pre[0][idx]);
            let f = sigmoid(pre[1][idx]);
            let o = sigmoid(pre[2][idx]);
            c[idx] = f * state.c[idx] + i * pre[3][idx].tanh();
            m[idx] = o * c[idx].tanh();
        }
        if !m.iter().chain(&c).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("lstm step".into()));
        }
        Ok(LstmState { m, c, rows: n })
    }

    fn embed(&self, tokens: &[u32]) -> Result<Vec<f32>> {
        let d = self.dims.hidden;
        let table = self.p("embedding.weight");
        let mut x = vec![0.0; tokens.len() * d];
        for (r, &t) in tokens.iter().enumerate() {
            if t as usize >= self.dims.vocab_size {
                return Err(Error::shape(
                    "embedding",
                    format!("token {t} outside vocabulary"),
                ));
            }
            if t != PAD {
                x[r * d..(r + 1) * d].copy_from_slice(&table[t as usize * d..(t as usize + 1) * d]);
            }
        }
        Ok(x)
    }

    /// One LSTM step on a single input vector.
    pub fn lstm_step(&self, x: &[f32], state: &DecoderState) -> Result<DecoderState> {
        let d = self.dims.hidden;
        if x.len() != d || state.m.len() != d || state.c.len() != d {
            return Err(Error::shape(
                "lstm_step",
                format!("input {} / state {} for d={d}", x.len(), state.m.len()),
            ));
        }
        let s = self.step_batch(
            x,
            &LstmState {
                m: state.m.clone(),
                c: state.c.clone(),
                rows: 1,
            },
        )?;
        Ok(DecoderState {
            m: s.m,
            c: s.c,
            t: state.t + 1,
        })
    }

    /// Zero state before the record is shown.
    pub fn initial_state(&self) -> DecoderState {
        DecoderState {
            m: vec![0.0; self.dims.hidden],
            c: vec![0.0; self.dims.hidden],
            t: -2,
        }
    }

    /// Next-token distribution `softmax(m·W_p + b_p)`.
    pub fn step_distribution(&self, state: &DecoderState) -> Vec<f32> {
        let logits = self.output_logits(&state.m, 1);
        let mut out = vec![0.0; logits.len()];
        crate::nn::tensor::softmax_into(&logits, &mut out);
        out
    }

    fn output_logits(&self, m: &[f32], rows: usize) -> Vec<f32> {
        let (d, v) = (self.dims.hidden, self.dims.vocab_size);
        let bias = self.p("output.bias");
        let mut out: Vec<f32> = (0..rows).flat_map(|_| bias.iter().copied()).collect();
        gemm(
            Trans::No,
            Trans::No,
            rows,
            d,
            v,
            m,
            self.p("output.weight"),
            1.0,
            &mut out,
        );
        out
    }

    /// Teacher-forced summed log-probability of targets `1..=content_len+1`.
    pub fn sequence_log_prob(&self, record: &EncodedRecord, seq: &TokenSequence) -> Result<f64> {
        let (sum, _) = self.teacher_forced_nll(&[Example {
            record: record.clone(),
            seq: seq.clone(),
        }])?;
        Ok(-sum)
    }

    /// Summed negative log-likelihood over `examples` and the number of
    /// predicted tokens, computed without a tape.
    pub fn teacher_forced_nll(&self, examples: &[Example]) -> Result<(f64, usize)> {
        let v = self.dims.vocab_size;
        let mut total = 0.0;
        let mut count = 0;
        for chunk in examples.chunks(1024) {
            let records: Vec<EncodedRecord> = chunk.iter().map(|e| e.record.clone()).collect();
            let mut state = self.start(&records)?;
            let steps = chunk.iter().map(|e| e.seq.content_len()).max().unwrap_or(0) + 1;
            for s in 0..steps {
                let logits = self.logits(&state)?;
                let mut next = Vec::with_capacity(chunk.len());
                for (r, e) in chunk.iter().enumerate() {
                    let ids = e.seq.ids();
                    let target = ids[s + 1];
                    if target != PAD {
                        total -= log_probs(&logits[r * v..(r + 1) * v])[target as usize];
                        count += 1;
                    }
                    next.push(target);
                }
                if s + 1 < steps {
                    state = self.advance(&state, &next)?;
                }
            }
        }
        Ok((total, count))
    }
}

impl Decoder for Seq2Seq {
    type State = LstmState;

    fn vocab_size(&self) -> usize {
        self.dims.vocab_size
    }

    fn start(&self, records: &[EncodedRecord]) -> Result<LstmState> {
        let n = records.len();
        let d = self.dims.hidden;
        let zero = LstmState {
            m: vec![0.0; n * d],
            c: vec![0.0; n * d],
            rows: n,
        };
        let after_record = self.step_batch(&self.encode_batch(records)?, &zero)?;
        self.advance(&after_record, &vec![SOS; n])
    }

    fn logits(&self, state: &LstmState) -> Result<Vec<f32>> {
        Ok(self.output_logits(&state.m, state.rows))
    }

    fn advance(&self, state: &LstmState, tokens: &[u32]) -> Result<LstmState> {
        if tokens.len() != state.rows {
            return Err(Error::shape(
                "advance",
                format!("{} tokens for {} rows", tokens.len(), state.rows),
            ));
        }
        self.step_batch(&self.embed(tokens)?, state)
    }

    fn gather(&self, state: &LstmState, rows: &[usize]) -> LstmState {
        let d = self.dims.hidden;
        let pick = |src: &[f32]| -> Vec<f32> {
            rows.iter()
                .flat_map(|&r| src[r * d..(r + 1) * d].iter().copied())
                .collect()
        };
        LstmState {
            m: pick(&state.m),
            c: pick(&state.c),
            rows: rows.len(),
        }
    }
}
