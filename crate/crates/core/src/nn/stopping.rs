use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    PatienceExhausted,
    MaxEpochs,
}

/// Validation-loss early stopping shared by every trainer.
///
/// Training stops once the loss has failed to improve on the best value
/// for `patience` consecutive epochs, or after `max_epochs`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    max_epochs: usize,
    best: Option<f64>,
    best_epoch: usize,
    epochs: usize,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop(StopReason),
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        Self {
            patience,
            max_epochs,
            best: None,
            best_epoch: 0,
            epochs: 0,
            since_best: 0,
        }
    }

    /// Records one epoch's validation loss. An improving epoch that is also
    /// the last allowed one reports `Stop(MaxEpochs)`; callers snapshot the
    /// parameters whenever [`EarlyStopping::is_best_epoch`] holds.
    pub fn observe(&mut self, loss: f64) -> Verdict {
        self.epochs += 1;
        let improved = self.best.is_none_or(|b| loss < b);
        if improved {
            self.best = Some(loss);
            self.best_epoch = self.epochs;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        if self.since_best >= self.patience && !improved {
            Verdict::Stop(StopReason::PatienceExhausted)
        } else if self.epochs >= self.max_epochs {
            Verdict::Stop(StopReason::MaxEpochs)
        } else if improved {
            Verdict::Improved
        } else {
            Verdict::Continue
        }
    }

    pub fn is_best_epoch(&self) -> bool {
        self.epochs > 0 && self.best_epoch == self.epochs
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }
}
