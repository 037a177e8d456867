//! Word-by-demographic counts and crude ratio comparisons between
//! authentic and synthetic text.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{RawRecord, RecordPair, RecordSchema};
use crate::text::tokenize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    /// `None` is the missing-value bucket.
    pub category: Option<u32>,
    pub containing: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossTab {
    pub target: String,
    pub variable: String,
    /// One row per code in order, then the missing bucket.
    pub rows: Vec<CategoryCount>,
}

impl CrossTab {
    pub fn row(&self, category: u32) -> Option<&CategoryCount> {
        self.rows
            .get(category as usize)
            .filter(|r| r.category == Some(category))
    }

    pub fn missing(&self) -> &CategoryCount {
        self.rows.last().expect("missing bucket is always present")
    }
}

fn cross_tab(
    pairs: &[RecordPair],
    target: &str,
    variable: &str,
    schema: &RecordSchema,
    hit: impl Fn(&RecordPair) -> bool,
) -> Result<CrossTab> {
    let idx = schema.require(variable)?;
    let card = schema.variables()[idx].cardinality;
    let mut rows: Vec<CategoryCount> = (0..card as u32)
        .map(|c| CategoryCount {
            category: Some(c),
            containing: 0,
            total: 0,
        })
        .chain(std::iter::once(CategoryCount {
            category: None,
            containing: 0,
            total: 0,
        }))
        .collect();
    for p in pairs {
        let h = hit(p) as usize;
        let codes = p.record.values.get(idx).map(|v| v.codes()).unwrap_or(&[]);
        if codes.is_empty() {
            rows[card].total += 1;
            rows[card].containing += h;
        }
        for &c in codes {
            let row = rows
                .get_mut(c as usize)
                .filter(|_| (c as usize) < card)
                .ok_or_else(|| {
                    Error::Record(format!("{variable} code {c} outside cardinality {card}"))
                })?;
            row.total += 1;
            row.containing += h;
        }
    }
    Ok(CrossTab {
        target: target.to_string(),
        variable: variable.to_string(),
        rows,
    })
}

/// Per category of `variable`: sentences containing `word` as a whole
/// token (case-insensitive), and all sentences.
pub fn word_by_category(
    pairs: &[RecordPair],
    word: &str,
    variable: &str,
    schema: &RecordSchema,
) -> Result<CrossTab> {
    let word = word.to_lowercase();
    cross_tab(pairs, &word, variable, schema, |p| {
        tokenize(&p.text).contains(&word)
    })
}

/// As [`word_by_category`] with "record carries diagnosis `code`" in
/// place of word containment.
pub fn code_by_category(
    pairs: &[RecordPair],
    code: u32,
    variable: &str,
    schema: &RecordSchema,
) -> Result<CrossTab> {
    let dx = schema
        .diagnosis_index()
        .ok_or_else(|| Error::Schema("schema has no multi-valued diagnosis variable".into()))?;
    if code as usize >= schema.variables()[dx].cardinality {
        return Err(Error::InvalidArgument(format!(
            "diagnosis code {code} outside the schema"
        )));
    }
    let has = |r: &RawRecord| r.values.get(dx).is_some_and(|v| v.codes().contains(&code));
    cross_tab(pairs, &code.to_string(), variable, schema, |p| {
        has(&p.record)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    pub target: String,
    pub variable: String,
    pub group_a: Vec<u32>,
    pub group_b: Vec<u32>,
    pub a: usize,
    pub n_a: usize,
    pub b: usize,
    pub n_b: usize,
    /// `(a/n_A)/(b/n_B)`; `None` when a denominator is zero.
    pub risk_ratio: Option<f64>,
    /// `(a/(n_A−a))/(b/(n_B−b))`; `None` when a denominator is zero.
    pub odds_ratio: Option<f64>,
}

/// Crude risk and odds ratios from raw counts, no continuity correction.
pub fn ratios(a: usize, n_a: usize, b: usize, n_b: usize) -> (Option<f64>, Option<f64>) {
    let (af, naf, bf, nbf) = (a as f64, n_a as f64, b as f64, n_b as f64);
    let rr = (n_a > 0 && n_b > 0 && b > 0).then(|| (af / naf) / (bf / nbf));
    let or = (b > 0 && n_a > a).then(|| (af * (nbf - bf)) / (bf * (naf - af)));
    (rr, or)
}

/// Pools the categories of each group and compares them.
pub fn group_ratio(tab: &CrossTab, group_a: &[u32], group_b: &[u32]) -> Result<RatioResult> {
    let sa: BTreeSet<u32> = group_a.iter().copied().collect();
    let sb: BTreeSet<u32> = group_b.iter().copied().collect();
    if sa.is_empty() || sb.is_empty() {
        return Err(Error::InvalidArgument(
            "ratio groups must be non-empty".into(),
        ));
    }
    if !sa.is_disjoint(&sb) {
        return Err(Error::InvalidArgument("ratio groups overlap".into()));
    }
    let pool = |s: &BTreeSet<u32>| -> Result<(usize, usize)> {
        s.iter().try_fold((0, 0), |(c, t), &cat| {
            let row = tab.row(cat).ok_or_else(|| {
                Error::InvalidArgument(format!("{} has no category {cat}", tab.variable))
            })?;
            Ok((c + row.containing, t + row.total))
        })
    };
    let ((a, n_a), (b, n_b)) = (pool(&sa)?, pool(&sb)?);
    let (risk_ratio, odds_ratio) = ratios(a, n_a, b, n_b);
    Ok(RatioResult {
        target: tab.target.clone(),
        variable: tab.variable.clone(),
        group_a: sa.into_iter().collect(),
        group_b: sb.into_iter().collect(),
        a,
        n_a,
        b,
        n_b,
        risk_ratio,
        odds_ratio,
    })
}

pub fn diagnosis_ratio(
    pairs: &[RecordPair],
    code: u32,
    variable: &str,
    group_a: &[u32],
    group_b: &[u32],
    schema: &RecordSchema,
) -> Result<RatioResult> {
    group_ratio(
        &code_by_category(pairs, code, variable, schema)?,
        group_a,
        group_b,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Word,
    Code,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub kind: ProbeKind,
    pub target: String,
    pub variable: String,
    #[serde(rename = "groupA")]
    pub group_a: Vec<u32>,
    #[serde(rename = "groupB")]
    pub group_b: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Relative change in risk ratio strength, away from 1 on a log scale,
    /// below which an association counts as preserved.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default, rename = "probe")]
    pub probes: Vec<Probe>,
}

fn default_threshold() -> f64 {
    0.1
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            probes: Vec::new(),
        }
    }
}

impl ProbeConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        if !(cfg.threshold >= 0.0 && cfg.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "epi threshold {} must be non-negative",
                cfg.threshold
            )));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Amplified,
    Attenuated,
    Preserved,
    /// The synthetic association points the other way.
    Reversed,
    /// A ratio is undefined on one side.
    Undefined,
}

/// Compares association strength as distance of ln(RR) from 0.
pub fn compare(authentic: Option<f64>, synthetic: Option<f64>, threshold: f64) -> Verdict {
    let (Some(a), Some(s)) = (authentic, synthetic) else {
        return Verdict::Undefined;
    };
    if a == 0.0 || s == 0.0 {
        return if a == s {
            Verdict::Preserved
        } else {
            Verdict::Undefined
        };
    }
    let (la, ls) = (a.ln(), s.ln());
    if la * ls < 0.0 {
        return Verdict::Reversed;
    }
    let margin = (1.0 + threshold).ln();
    if ls.abs() > la.abs() + margin {
        Verdict::Amplified
    } else if ls.abs() < la.abs() - margin {
        Verdict::Attenuated
    } else {
        Verdict::Preserved
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpiRow {
    pub kind: ProbeKind,
    pub authentic: RatioResult,
    pub synthetic: RatioResult,
    pub verdict: Verdict,
}

fn probe_ratio(pairs: &[RecordPair], p: &Probe, schema: &RecordSchema) -> Result<RatioResult> {
    match p.kind {
        ProbeKind::Word => group_ratio(
            &word_by_category(pairs, &p.target, &p.variable, schema)?,
            &p.group_a,
            &p.group_b,
        ),
        ProbeKind::Code => {
            let code: u32 = p.target.parse().map_err(|_| {
                Error::Config(format!("code probe target {:?} is not a code", p.target))
            })?;
            diagnosis_ratio(pairs, code, &p.variable, &p.group_a, &p.group_b, schema)
        }
    }
}

/// Evaluates every probe on both corpora. The corpora must describe the
/// same records in the same order.
pub fn epi_report(
    authentic: &[RecordPair],
    synthetic: &[RecordPair],
    config: &ProbeConfig,
    schema: &RecordSchema,
) -> Result<Vec<EpiRow>> {
    if authentic.len() != synthetic.len()
        || authentic
            .iter()
            .zip(synthetic)
            .any(|(a, s)| a.record != s.record)
    {
        return Err(Error::InvalidArgument(
            "authentic and synthetic corpora are not aligned".into(),
        ));
    }
    config
        .probes
        .iter()
        .map(|p| {
            let a = probe_ratio(authentic, p, schema)?;
            let s = probe_ratio(synthetic, p, schema)?;
            let verdict = compare(a.risk_ratio, s.risk_ratio, config.threshold);
            Ok(EpiRow {
                kind: p.kind,
                authentic: a,
                synthetic: s,
                verdict,
            })
        })
        .collect()
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "undef".to_string(), |v| format!("{v:.2}"))
}

pub fn format_epi_table(rows: &[EpiRow]) -> String {
    let mut out = format!(
        "{:<5} {:<12} {:<10} {:>13} {:>13} {:>7} {:>7} {:>13} {:>13} {:>7} {:>7}  {}\n",
        "kind",
        "target",
        "variable",
        "auth a/nA",
        "auth b/nB",
        "RR",
        "OR",
        "syn a/nA",
        "syn b/nB",
        "RR",
        "OR",
        "verdict"
    );
    for r in rows {
        let (a, s) = (&r.authentic, &r.synthetic);
        out.push_str(&format!(
            "{:<5} {:<12} {:<10} {:>13} {:>13} {:>7} {:>7} {:>13} {:>13} {:>7} {:>7}  {:?}\n",
            format!("{:?}", r.kind).to_lowercase(),
            a.target,
            a.variable,
            format!("{}/{}", a.a, a.n_a),
            format!("{}/{}", a.b, a.n_b),
            fmt_ratio(a.risk_ratio),
            fmt_ratio(a.odds_ratio),
            format!("{}/{}", s.a, s.n_a),
            format!("{}/{}", s.b, s.n_b),
            fmt_ratio(s.risk_ratio),
            fmt_ratio(s.odds_ratio),
            r.verdict
        ));
    }
    out
}

#[cfg(test)]
mod tests;
