use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{encode_sentence, TokenSequence, Vocabulary, RESERVED};
use crate::error::{Error, Result};
use crate::schema::{encode_record, EncodedRecord, FieldValue, RecordPair, RecordSchema};

/// One line of a tokenized-pair file.
///
/// `diagnosis` repeats the diagnosis codes in their original order, which
/// `record_bits` (sorted indices) cannot preserve; the first one is the
/// primary code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedPair {
    pub record_bits: Vec<usize>,
    pub token_ids: Vec<u32>,
    pub text: String,
    #[serde(default)]
    pub diagnosis: Vec<u32>,
}

impl TokenizedPair {
    pub fn from_pair(
        pair: &RecordPair,
        schema: &RecordSchema,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let enc = encode_record(&pair.record, schema)?;
        let seq = encode_sentence(&pair.text, vocab, max_len)?;
        let diagnosis = schema
            .diagnosis_index()
            .map(|i| pair.record.values[i].codes().to_vec())
            .unwrap_or_default();
        Ok(Self {
            record_bits: enc.active().to_vec(),
            token_ids: seq.ids().to_vec(),
            text: super::tokenize(&pair.text).join(" "),
            diagnosis,
        })
    }

    pub fn record(&self, schema: &RecordSchema) -> Result<EncodedRecord> {
        EncodedRecord::from_active(schema.total_dim(), self.record_bits.clone())
    }

    pub fn sequence(&self) -> Result<TokenSequence> {
        TokenSequence::from_ids(self.token_ids.clone())
    }

    /// Rebuilds the raw pair, restoring the diagnosis order.
    pub fn to_pair(&self, schema: &RecordSchema) -> Result<RecordPair> {
        let mut record = schema.decode(&self.record(schema)?)?;
        if let Some(i) = schema.diagnosis_index() {
            let mut stored = record.values[i].codes().to_vec();
            let mut ordered = self.diagnosis.clone();
            ordered.sort_unstable();
            stored.sort_unstable();
            if ordered != stored {
                return Err(Error::Record(format!(
                    "diagnosis list {:?} disagrees with record bits",
                    self.diagnosis
                )));
            }
            record.values[i] = FieldValue::Multi(self.diagnosis.clone());
        }
        Ok(RecordPair {
            record,
            text: self.text.clone(),
        })
    }

    pub fn primary_diagnosis(&self) -> Option<u32> {
        self.diagnosis.first().copied()
    }
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[TokenizedPair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<TokenizedPair>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Record(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// `token<TAB>freq` per line, reserved tokens first, after a `# min_freq`
/// header.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# min_freq {}", vocab.min_freq())?;
    for r in RESERVED {
        writeln!(w, "{r}\t0")?;
    }
    for (tok, freq) in vocab.entries() {
        writeln!(w, "{tok}\t{freq}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let bad = |n: usize, msg: &str| Error::Vocab(format!("{}:{n}: {msg}", path.display()));
    let mut min_freq = 1;
    let mut entries = Vec::new();
    let mut reserved_seen = 0;
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("min_freq") {
                min_freq = v.trim().parse().map_err(|_| bad(i + 1, "bad min_freq"))?;
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (tok, freq) = line
            .split_once('\t')
            .ok_or_else(|| bad(i + 1, "expected token<TAB>freq"))?;
        let freq: u64 = freq
            .trim()
            .parse()
            .map_err(|_| bad(i + 1, "bad frequency"))?;
        if reserved_seen < RESERVED.len() {
            if tok != RESERVED[reserved_seen] {
                return Err(bad(i + 1, "reserved tokens must come first"));
            }
            reserved_seen += 1;
            continue;
        }
        entries.push((tok.to_string(), freq));
    }
    if reserved_seen < RESERVED.len() {
        return Err(Error::Vocab(format!(
            "{}: missing reserved tokens",
            path.display()
        )));
    }
    Vocabulary::from_entries(entries, min_freq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::synth;
    use crate::text::{build_vocab, filter_corpus};

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let v = build_vocab(["b a a c c c"], 1).unwrap();
        write_vocab(&path, &v).unwrap();
        assert_eq!(read_vocab(&path).unwrap(), v);
    }

    #[test]
    fn pair_file_round_trip_keeps_diagnosis_order() {
        let schema = RecordSchema::default_ed();
        let cfg = synth::GeneratorConfig::default_toy().with_size(800);
        let pairs = synth::synth_corpus(&cfg, &schema, 2).unwrap();
        let v = build_vocab(pairs.iter().map(|p| p.text.as_str()), 1).unwrap();
        let kept = filter_corpus(pairs, &v, 18).pairs;
        let tok: Vec<TokenizedPair> = kept
            .iter()
            .map(|p| TokenizedPair::from_pair(p, &schema, &v, 18).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        write_pairs_jsonl(&path, &tok).unwrap();
        let back = read_pairs_jsonl(&path).unwrap();
        assert_eq!(back, tok);
        for (t, p) in back.iter().zip(&kept) {
            assert_eq!(t.to_pair(&schema).unwrap().record, p.record);
        }
    }
}
