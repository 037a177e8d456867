//! Discrete record schema and sparse binary record encoding.

mod csvio;
pub mod synth;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csvio::{ingest_csv, read_csv, write_csv, IngestReport, RejectedRow};

pub const DEFAULT_SCHEMA_TOML: &str = include_str!("../../configs/schema.toml");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub cardinality: usize,
    #[serde(default)]
    pub multi_valued: bool,
    #[serde(default = "default_true")]
    pub allow_missing: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
struct SchemaDocument {
    #[serde(rename = "variable")]
    variables: Vec<VariableSpec>,
}

/// Ordered variables with the bit offset of each variable's block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordSchema {
    variables: Vec<VariableSpec>,
    offsets: Vec<usize>,
    total_dim: usize,
}

impl RecordSchema {
    pub fn new(variables: Vec<VariableSpec>) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::Schema("schema lists no variables".into()));
        }
        let mut seen = HashSet::new();
        let mut offsets = Vec::with_capacity(variables.len());
        let mut total = 0;
        for v in &variables {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable name {}", v.name)));
            }
            if v.cardinality == 0 {
                return Err(Error::Schema(format!(
                    "variable {} has zero cardinality",
                    v.name
                )));
            }
            offsets.push(total);
            total += v.cardinality;
        }
        Ok(Self {
            variables,
            offsets,
            total_dim: total,
        })
    }

    /// Parses a TOML schema document (`[[variable]]` tables).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: SchemaDocument = toml::from_str(text)?;
        Self::new(doc.variables)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The nine-variable emergency-department schema.
    pub fn default_ed() -> Self {
        Self::from_toml_str(DEFAULT_SCHEMA_TOML).expect("bundled schema is valid")
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown variable {name}")))
    }

    /// Index of the first multi-valued variable (the diagnosis list).
    pub fn diagnosis_index(&self) -> Option<usize> {
        self.variables.iter().position(|v| v.multi_valued)
    }

    /// Inverse of [`encode_record`] on its image.
    pub fn decode(&self, record: &EncodedRecord) -> Result<RawRecord> {
        if record.dim != self.total_dim {
            return Err(Error::Record(format!(
                "record has {} bits, schema expects {}",
                record.dim, self.total_dim
            )));
        }
        let mut values: Vec<FieldValue> = self
            .variables
            .iter()
            .map(|v| {
                if v.multi_valued {
                    FieldValue::Multi(Vec::new())
                } else {
                    FieldValue::Single(None)
                }
            })
            .collect();
        for &bit in &record.active {
            let var = self.offsets.partition_point(|&o| o <= bit) - 1;
            let code = (bit - self.offsets[var]) as u32;
            match &mut values[var] {
                FieldValue::Multi(codes) => codes.push(code),
                FieldValue::Single(slot @ None) => *slot = Some(code),
                FieldValue::Single(Some(_)) => {
                    return Err(Error::Record(format!(
                        "variable {} has more than one bit set",
                        self.variables[var].name
                    )))
                }
            }
        }
        Ok(RawRecord { values })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldValue {
    Single(Option<u32>),
    /// Ordered, duplicate-free codes; the first entry is the primary one.
    Multi(Vec<u32>),
}

impl FieldValue {
    pub fn is_missing(&self) -> bool {
        match self {
            FieldValue::Single(v) => v.is_none(),
            FieldValue::Multi(v) => v.is_empty(),
        }
    }

    pub fn codes(&self) -> &[u32] {
        match self {
            FieldValue::Single(Some(c)) => std::slice::from_ref(c),
            FieldValue::Single(None) => &[],
            FieldValue::Multi(v) => v,
        }
    }
}

/// Coded values of one visit, one entry per schema variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawRecord {
    pub values: Vec<FieldValue>,
}

impl RawRecord {
    /// A record with every variable missing.
    pub fn empty(schema: &RecordSchema) -> Self {
        Self {
            values: schema
                .variables()
                .iter()
                .map(|v| {
                    if v.multi_valued {
                        FieldValue::Multi(Vec::new())
                    } else {
                        FieldValue::Single(None)
                    }
                })
                .collect(),
        }
    }

    pub fn single(&self, idx: usize) -> Option<u32> {
        match self.values.get(idx) {
            Some(FieldValue::Single(v)) => *v,
            _ => None,
        }
    }

    /// First-listed code of a multi-valued variable.
    pub fn primary(&self, idx: usize) -> Option<u32> {
        self.values
            .get(idx)
            .and_then(|v| v.codes().first().copied())
    }
}

/// A visit record paired with its free-text chief complaint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordPair {
    pub record: RawRecord,
    pub text: String,
}

/// Sparse binary vector: sorted indices of the set bits.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedRecord {
    dim: usize,
    active: Vec<usize>,
}

impl EncodedRecord {
    pub fn from_active(dim: usize, mut active: Vec<usize>) -> Result<Self> {
        active.sort_unstable();
        active.dedup();
        if active.last().is_some_and(|&b| b >= dim) {
            return Err(Error::Record(format!(
                "bit index outside record of {dim} bits"
            )));
        }
        Ok(Self { dim, active })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn to_dense(&self) -> Vec<bool> {
        let mut bits = vec![false; self.dim];
        for &b in &self.active {
            bits[b] = true;
        }
        bits
    }

    pub fn popcount(&self) -> usize {
        self.active.len()
    }
}

/// Sets bit `offset(var) + code` for every present value; missing
/// variables leave their block all-zero.
pub fn encode_record(raw: &RawRecord, schema: &RecordSchema) -> Result<EncodedRecord> {
    if raw.values.len() != schema.variables.len() {
        return Err(Error::Record(format!(
            "record has {} values, schema has {} variables",
            raw.values.len(),
            schema.variables.len()
        )));
    }
    let mut active = Vec::new();
    for ((spec, &offset), value) in schema
        .variables
        .iter()
        .zip(&schema.offsets)
        .zip(&raw.values)
    {
        match (spec.multi_valued, value) {
            (false, FieldValue::Multi(_)) => {
                return Err(Error::Record(format!("{} is single-valued", spec.name)))
            }
            (true, FieldValue::Single(_)) => {
                return Err(Error::Record(format!("{} is multi-valued", spec.name)))
            }
            _ => {}
        }
        if value.is_missing() && !spec.allow_missing {
            return Err(Error::Record(format!("{} may not be missing", spec.name)));
        }
        for &code in value.codes() {
            if code as usize >= spec.cardinality {
                return Err(Error::Record(format!(
                    "{} value {} outside [0, {})",
                    spec.name, code, spec.cardinality
                )));
            }
            active.push(offset + code as usize);
        }
    }
    EncodedRecord::from_active(schema.total_dim, active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(name: &str, cardinality: usize) -> VariableSpec {
        VariableSpec {
            name: name.into(),
            cardinality,
            multi_valued: false,
            allow_missing: true,
        }
    }

    #[test]
    fn default_schema_matches_table() {
        let s = RecordSchema::default_ed();
        let cards: Vec<_> = s.variables().iter().map(|v| v.cardinality).collect();
        assert_eq!(cards, [23, 6, 8, 44, 12, 8, 12, 2, 284]);
        assert_eq!(s.total_dim(), 399);
        let multi: Vec<_> = s.variables().iter().filter(|v| v.multi_valued).collect();
        assert_eq!(multi.len(), 1);
        assert_eq!(multi[0].name, "diagnosis");
    }

    #[test]
    fn prefix_sum_offsets() {
        let s = RecordSchema::new(vec![spec("a", 1)]).unwrap();
        assert_eq!((s.offsets(), s.total_dim()), (&[0][..], 1));
        let s = RecordSchema::new(vec![spec("a", 3), spec("b", 5)]).unwrap();
        assert_eq!((s.offsets(), s.total_dim()), (&[0, 3][..], 8));
    }

    #[test]
    fn schema_errors() {
        assert!(RecordSchema::new(vec![spec("a", 3), spec("a", 2)]).is_err());
        assert!(RecordSchema::new(vec![spec("a", 0)]).is_err());
    }

    #[test]
    fn age_bin_sets_single_bit() {
        let s = RecordSchema::default_ed();
        let mut raw = RawRecord::empty(&s);
        // 20-24 is the fifth 5-year bin.
        raw.values[0] = FieldValue::Single(Some(4));
        let enc = encode_record(&raw, &s).unwrap();
        assert_eq!(enc.active(), &[s.offsets()[0] + 4]);
    }

    #[test]
    fn missing_everything_is_all_zero() {
        let s = RecordSchema::default_ed();
        let enc = encode_record(&RawRecord::empty(&s), &s).unwrap();
        assert_eq!(enc.popcount(), 0);
        assert_eq!(enc.dim(), 399);
    }

    #[test]
    fn out_of_range_rejected() {
        let s = RecordSchema::default_ed();
        let mut raw = RawRecord::empty(&s);
        raw.values[1] = FieldValue::Single(Some(6));
        assert!(encode_record(&raw, &s).is_err());
        let mut raw = RawRecord::empty(&s);
        raw.values[8] = FieldValue::Multi(vec![284]);
        assert!(encode_record(&raw, &s).is_err());
    }

    #[test]
    fn disallowed_missing_rejected() {
        let mut a = spec("a", 2);
        a.allow_missing = false;
        let s = RecordSchema::new(vec![a]).unwrap();
        assert!(encode_record(&RawRecord::empty(&s), &s).is_err());
    }

    fn arb_full_record() -> impl Strategy<Value = RawRecord> {
        let s = RecordSchema::default_ed();
        let singles: Vec<_> = s.variables()[..8]
            .iter()
            .map(|v| (0..v.cardinality as u32).boxed())
            .collect();
        (singles, prop::collection::vec(0u32..284, 1..4)).prop_map(|(vals, mut dx)| {
            let mut seen = HashSet::new();
            dx.retain(|c| seen.insert(*c));
            let mut values: Vec<FieldValue> = vals
                .into_iter()
                .map(|v| FieldValue::Single(Some(v)))
                .collect();
            values.push(FieldValue::Multi(dx));
            RawRecord { values }
        })
    }

    proptest! {
        #[test]
        fn single_blocks_have_at_most_one_bit(raw in arb_full_record()) {
            let s = RecordSchema::default_ed();
            let enc = encode_record(&raw, &s).unwrap();
            for (i, v) in s.variables().iter().enumerate().filter(|(_, v)| !v.multi_valued) {
                let lo = s.offsets()[i];
                let n = enc.active().iter().filter(|&&b| b >= lo && b < lo + v.cardinality).count();
                prop_assert!(n <= 1);
            }
        }

        #[test]
        fn encoding_is_injective(a in arb_full_record(), b in arb_full_record()) {
            let s = RecordSchema::default_ed();
            let (ea, eb) = (encode_record(&a, &s).unwrap(), encode_record(&b, &s).unwrap());
            // Diagnosis order is not encoded; compare as sets.
            let norm = |r: &RawRecord| {
                let mut r = r.clone();
                if let FieldValue::Multi(v) = &mut r.values[8] { v.sort_unstable(); }
                r
            };
            prop_assert_eq!(norm(&a) == norm(&b), ea == eb);
        }

        #[test]
        fn decode_inverts_encode(raw in arb_full_record()) {
            let s = RecordSchema::default_ed();
            let enc = encode_record(&raw, &s).unwrap();
            let back = s.decode(&enc).unwrap();
            prop_assert_eq!(encode_record(&back, &s).unwrap(), enc);
        }
    }
}
