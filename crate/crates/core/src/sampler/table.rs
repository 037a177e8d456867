use super::Decoder;
use crate::error::{Error, Result};
use crate::schema::EncodedRecord;

type LogitFn = dyn Fn(&EncodedRecord, &[u32]) -> Vec<f32> + Send + Sync;

/// A decoder whose next-token logits are an explicit function of the record
/// and the content prefix. Handy for hand-built models with known answers.
pub struct TableDecoder {
    vocab_size: usize,
    logits: Box<LogitFn>,
}

impl TableDecoder {
    pub fn new<F>(vocab_size: usize, logits: F) -> Self
    where
        F: Fn(&EncodedRecord, &[u32]) -> Vec<f32> + Send + Sync + 'static,
    {
        Self {
            vocab_size,
            logits: Box::new(logits),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TableState {
    rows: Vec<(EncodedRecord, Vec<u32>)>,
}

impl Decoder for TableDecoder {
    type State = TableState;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn start(&self, records: &[EncodedRecord]) -> Result<TableState> {
        Ok(TableState {
            rows: records.iter().map(|r| (r.clone(), Vec::new())).collect(),
        })
    }

    fn logits(&self, state: &TableState) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(state.rows.len() * self.vocab_size);
        for (rec, prefix) in &state.rows {
            let row = (self.logits)(rec, prefix);
            if row.len() != self.vocab_size {
                return Err(Error::shape(
                    "table decoder",
                    format!("{} logits for vocab {}", row.len(), self.vocab_size),
                ));
            }
            out.extend(row);
        }
        Ok(out)
    }

    fn advance(&self, state: &TableState, tokens: &[u32]) -> Result<TableState> {
        if tokens.len() != state.rows.len() {
            return Err(Error::shape(
                "table decoder",
                "token count differs from batch rows",
            ));
        }
        let mut next = state.clone();
        for ((_, prefix), &t) in next.rows.iter_mut().zip(tokens) {
            prefix.push(t);
        }
        Ok(next)
    }

    fn gather(&self, state: &TableState, rows: &[usize]) -> TableState {
        TableState {
            rows: rows.iter().map(|&r| state.rows[r].clone()).collect(),
        }
    }
}
