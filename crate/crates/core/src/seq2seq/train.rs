use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dense_records, record_loss, Example, Seq2Seq};
use crate::error::{Error, Result};
use crate::nn::{
    glorot_uniform, AdamConfig, AdamState, EarlyStopping, ParamStore, StopReason, Tape, Tensor,
    Verdict,
};
use crate::schema::EncodedRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 512,
            patience: 2,
            max_epochs: 50,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub(crate) fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

/// Per-token validation cross-entropy.
pub fn validation_loss(model: &Seq2Seq, val: &[Example]) -> Result<f64> {
    let (nll, tokens) = model.teacher_forced_nll(val)?;
    Ok(nll / tokens.max(1) as f64)
}

/// Teacher-forced training with Adam and validation early stopping. On
/// return `model` holds the parameters of the best validation epoch.
pub fn train(
    model: &mut Seq2Seq,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainStats> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation splits must be non-empty".into(),
        ));
    }
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::InvalidArgument(
            "batch_size and max_epochs must be positive".into(),
        ));
    }
    let record_dim = model.dims().record_dim;
    let mut adam = AdamState::new(model.params(), config.adam());
    let mut stopper = EarlyStopping::new(config.patience, config.max_epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.params().clone();
    let mut epochs = Vec::new();

    loop {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = {
                let mut tape = Tape::new(model.params());
                let (loss, _) = record_loss(&mut tape, &batch, record_dim).map_err(diverged)?;
                (tape.scalar(loss) as f64, tape.backward(loss)?)
            };
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("training loss {loss}")));
            }
            adam.update(model.params_mut(), &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        let val_loss = validation_loss(model, val).map_err(diverged)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!("validation loss {val_loss}")));
        }
        let stats = EpochStats {
            epoch: epochs.len() + 1,
            train_loss: loss_sum / batches as f64,
            val_loss,
        };
        log::info!(
            "epoch {} train {:.4} val {:.4}",
            stats.epoch,
            stats.train_loss,
            stats.val_loss
        );
        on_epoch(&stats);
        epochs.push(stats);
        let verdict = stopper.observe(val_loss);
        if stopper.is_best_epoch() {
            best = model.params().clone();
        }
        if let Verdict::Stop(reason) = verdict {
            *model.params_mut() = best;
            return Ok(TrainStats {
                epochs,
                best_epoch: stopper.best_epoch(),
                best_val_loss: stopper.best_loss().unwrap_or(f64::NAN),
                stop_reason: reason,
            });
        }
    }
}

fn diverged(e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged(what),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 256,
            lr: 0.001,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub encoder_weight: Tensor<f32>,
    pub encoder_bias: Tensor<f32>,
    /// Mean per-record reconstruction loss before training.
    pub initial_loss: f64,
    /// Mean per-record reconstruction loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl PretrainOutcome {
    pub fn install(&self, model: &mut Seq2Seq) -> Result<()> {
        model
            .params_mut()
            .replace("encoder.weight", self.encoder_weight.clone())?;
        model
            .params_mut()
            .replace("encoder.bias", self.encoder_bias.clone())
    }
}

fn reconstruction_loss(
    params: &ParamStore<f32>,
    records: &[&EncodedRecord],
    dim: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in records.chunks(1024) {
        let mut tape = Tape::new(params);
        let loss = autoencoder_loss(&mut tape, chunk, dim, 1.0)?;
        total += tape.scalar(loss) as f64;
    }
    Ok(total / records.len().max(1) as f64)
}

fn autoencoder_loss(
    tape: &mut Tape<'_, f32>,
    batch: &[&EncodedRecord],
    dim: usize,
    scale: f32,
) -> Result<crate::nn::Var> {
    let x = dense_records::<f32>(batch, dim)?;
    let xin = tape.input(x.clone())?;
    let w = tape.param_named("encoder.weight")?;
    let b = tape.param_named("encoder.bias")?;
    let wd = tape.param_named("decoder.weight")?;
    let bd = tape.param_named("decoder.bias")?;
    let h = tape.matmul(xin, w)?;
    let h = tape.add_bias(h, b)?;
    let z = tape.matmul(h, wd)?;
    let z = tape.add_bias(z, bd)?;
    tape.bce_with_logits(z, &x, scale)
}

/// Trains the record encoder as the first half of a linear autoencoder
/// with a sigmoid/binary-cross-entropy reconstruction head, starting from
/// the encoder weights currently in `model`. Only the encoder is returned.
pub fn pretrain_autoencoder(
    records: &[EncodedRecord],
    model: &Seq2Seq,
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    let dims = model.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamStore::new();
    params.insert(
        "encoder.weight",
        model.params().require("encoder.weight")?.clone(),
    )?;
    params.insert(
        "encoder.bias",
        model.params().require("encoder.bias")?.clone(),
    )?;
    params.insert(
        "decoder.weight",
        glorot_uniform(dims.hidden, dims.record_dim, &mut rng),
    )?;
    params.insert("decoder.bias", Tensor::zeros(&[dims.record_dim]))?;

    let refs: Vec<&EncodedRecord> = records.iter().collect();
    let initial_loss = if refs.is_empty() {
        0.0
    } else {
        reconstruction_loss(&params, &refs, dims.record_dim)?
    };
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut epoch_losses = Vec::new();
    for epoch in 0..config.epochs {
        if records.is_empty() {
            break;
        }
        order.shuffle(&mut rng);
        for idx in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&EncodedRecord> = idx.iter().map(|&i| &records[i]).collect();
            let grads = {
                let mut tape = Tape::new(&params);
                let loss =
                    autoencoder_loss(&mut tape, &batch, dims.record_dim, 1.0 / batch.len() as f32)
                        .map_err(diverged)?;
                tape.backward(loss)?
            };
            adam.update(&mut params, &grads)?;
        }
        let loss = reconstruction_loss(&params, &refs, dims.record_dim).map_err(diverged)?;
        log::info!("pretrain epoch {} reconstruction {:.4}", epoch + 1, loss);
        epoch_losses.push(loss);
    }
    Ok(PretrainOutcome {
        encoder_weight: params.require("encoder.weight")?.clone(),
        encoder_bias: params.require("encoder.bias")?.clone(),
        initial_loss,
        epoch_losses,
    })
}
