use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{FieldValue, RawRecord, RecordPair, RecordSchema};

pub const TEXT_COLUMN: &str = "chief_complaint";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based data row number (the header is not counted).
    pub row: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub pairs: Vec<RecordPair>,
    pub rejected: Vec<RejectedRow>,
}

/// Reads a record CSV. Rows that fail validation are skipped and reported;
/// a missing column aborts ingestion.
pub fn read_csv<R: Read>(reader: R, schema: &RecordSchema) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("CSV is missing required column {name}")))
    };
    let var_cols = schema
        .variables()
        .iter()
        .map(|v| column(&v.name))
        .collect::<Result<Vec<_>>>()?;
    let text_col = column(TEXT_COLUMN)?;

    let mut report = IngestReport::default();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                log::warn!("row {row_no}: {e}");
                report.rejected.push(RejectedRow {
                    row: row_no,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&row, schema, &var_cols, text_col) {
            Ok(pair) => report.pairs.push(pair),
            Err(message) => {
                log::warn!("row {row_no} rejected: {message}");
                report.rejected.push(RejectedRow {
                    row: row_no,
                    message,
                });
            }
        }
    }
    Ok(report)
}

fn parse_row(
    row: &csv::StringRecord,
    schema: &RecordSchema,
    var_cols: &[usize],
    text_col: usize,
) -> std::result::Result<RecordPair, String> {
    let mut values = Vec::with_capacity(var_cols.len());
    for (spec, &col) in schema.variables().iter().zip(var_cols) {
        let cell = row.get(col).unwrap_or("").trim();
        let parse = |s: &str| -> std::result::Result<u32, String> {
            let v: u32 = s
                .trim()
                .parse()
                .map_err(|_| format!("{}: cannot parse {:?} as an integer", spec.name, s))?;
            if v as usize >= spec.cardinality {
                return Err(format!(
                    "{}: value {} outside [0, {})",
                    spec.name, v, spec.cardinality
                ));
            }
            Ok(v)
        };
        let value = if spec.multi_valued {
            let mut codes = Vec::new();
            for part in cell.split(';').filter(|p| !p.trim().is_empty()) {
                let code = parse(part)?;
                if !codes.contains(&code) {
                    codes.push(code);
                }
            }
            FieldValue::Multi(codes)
        } else if cell.is_empty() {
            FieldValue::Single(None)
        } else {
            FieldValue::Single(Some(parse(cell)?))
        };
        if value.is_missing() && !spec.allow_missing {
            return Err(format!("{} may not be missing", spec.name));
        }
        values.push(value);
    }
    Ok(RecordPair {
        record: RawRecord { values },
        text: row.get(text_col).unwrap_or("").to_string(),
    })
}

pub fn ingest_csv(path: &Path, schema: &RecordSchema) -> Result<IngestReport> {
    read_csv(File::open(path)?, schema)
}

/// Writes pairs in the format [`read_csv`] accepts.
pub fn write_csv<W: Write>(writer: W, schema: &RecordSchema, pairs: &[RecordPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.variables().iter().map(|v| v.name.as_str()).collect();
    header.push(TEXT_COLUMN);
    w.write_record(&header)?;
    for pair in pairs {
        let mut cells: Vec<String> = pair
            .record
            .values
            .iter()
            .map(|v| match v {
                FieldValue::Single(Some(c)) => c.to_string(),
                FieldValue::Single(None) => String::new(),
                FieldValue::Multi(codes) => codes
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(";"),
            })
            .collect();
        cells.push(pair.text.clone());
        w.write_record(&cells)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::VariableSpec;
    use proptest::prelude::*;

    fn small_schema() -> RecordSchema {
        RecordSchema::new(vec![
            VariableSpec {
                name: "age".into(),
                cardinality: 23,
                multi_valued: false,
                allow_missing: true,
            },
            VariableSpec {
                name: "gender".into(),
                cardinality: 6,
                multi_valued: false,
                allow_missing: true,
            },
            VariableSpec {
                name: "diagnosis".into(),
                cardinality: 284,
                multi_valued: true,
                allow_missing: true,
            },
        ])
        .unwrap()
    }

    #[test]
    fn direct_field_mapping() {
        let data = "age,gender,diagnosis,chief_complaint\n4,1,,\"chest pain\"\n";
        let rep = read_csv(data.as_bytes(), &small_schema()).unwrap();
        assert!(rep.rejected.is_empty());
        let p = &rep.pairs[0];
        assert_eq!(p.record.values[0], FieldValue::Single(Some(4)));
        assert_eq!(p.record.values[1], FieldValue::Single(Some(1)));
        assert_eq!(p.record.values[2], FieldValue::Multi(vec![]));
        assert_eq!(p.text, "chest pain");
    }

    #[test]
    fn semicolon_separated_diagnoses() {
        let data = "chief_complaint,diagnosis,gender,age\nfever,12;98,,3\n";
        let rep = read_csv(data.as_bytes(), &small_schema()).unwrap();
        assert_eq!(
            rep.pairs[0].record.values[2],
            FieldValue::Multi(vec![12, 98])
        );
        assert_eq!(rep.pairs[0].record.values[1], FieldValue::Single(None));
    }

    #[test]
    fn bad_rows_are_skipped_with_row_numbers() {
        let data = "age,gender,diagnosis,chief_complaint\n1,1,5,ok\nx,1,5,bad int\n1,9,5,out of range\n2,0,,fine\n";
        let rep = read_csv(data.as_bytes(), &small_schema()).unwrap();
        assert_eq!(rep.pairs.len(), 2);
        let rows: Vec<_> = rep.rejected.iter().map(|r| r.row).collect();
        assert_eq!(rows, [2, 3]);
    }

    #[test]
    fn missing_column_is_fatal() {
        let data = "age,diagnosis,chief_complaint\n1,5,x\n";
        assert!(read_csv(data.as_bytes(), &small_schema()).is_err());
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(
            rows in prop::collection::vec(
                (prop::option::of(0u32..23), prop::option::of(0u32..6),
                 prop::collection::btree_set(0u32..284, 0..3), "[a-z ,\"]{0,20}"),
                0..12)
        ) {
            let schema = small_schema();
            let pairs: Vec<RecordPair> = rows.into_iter().map(|(a, g, dx, text)| RecordPair {
                record: RawRecord { values: vec![
                    FieldValue::Single(a), FieldValue::Single(g),
                    FieldValue::Multi(dx.into_iter().collect()),
                ]},
                text,
            }).collect();
            let mut buf = Vec::new();
            write_csv(&mut buf, &schema, &pairs).unwrap();
            let back = read_csv(buf.as_slice(), &schema).unwrap();
            prop_assert!(back.rejected.is_empty());
            prop_assert_eq!(back.pairs, pairs);
        }
    }
}
