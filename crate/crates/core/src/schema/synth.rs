//! Template-driven synthetic corpus of visit records and chief complaints.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{FieldValue, RawRecord, RecordPair, RecordSchema};

pub const DEFAULT_GENERATOR_TOML: &str = include_str!("../../configs/generator.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosisTemplate {
    pub code: u32,
    pub weight: f64,
    pub phrases: Vec<String>,
    #[serde(default)]
    pub phrase_weights: Option<Vec<f64>>,
}

/// Forces the primary diagnosis to `code` with probability `p_in` for
/// records whose `variable` lies in `categories`, `p_out` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeRule {
    pub code: u32,
    pub variable: String,
    pub categories: Vec<u32>,
    pub p_in: f64,
    pub p_out: f64,
}

/// Appends `phrase` with probability `p_in` inside `categories` of
/// `variable` (or unconditionally when no variable is named), `p_out`
/// otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordRule {
    pub phrase: String,
    #[serde(default)]
    pub variable: Option<String>,
    #[serde(default)]
    pub categories: Vec<u32>,
    pub p_in: f64,
    pub p_out: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub rate: f64,
    pub phrases: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondaryConfig {
    pub rate: f64,
    pub min_code: u32,
    pub max_code: u32,
}

/// Sentinel name tokens planted in "`context` `name`" phrases. Each name is
/// placed in exactly `count` sentences, `count` drawn from
/// `[min_count, max_count]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NameConfig {
    pub tokens: Vec<String>,
    pub min_count: usize,
    pub max_count: usize,
    pub context: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub size: usize,
    /// Use only the first `n` diagnosis templates.
    #[serde(default)]
    pub template_limit: Option<usize>,
    #[serde(default)]
    pub weights: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub missing: BTreeMap<String, f64>,
    #[serde(default)]
    pub slots: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub secondary: SecondaryConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub typo_rate: f64,
    #[serde(default)]
    pub long_rate: f64,
    #[serde(default)]
    pub names: NameConfig,
    #[serde(default, rename = "code_rule")]
    pub code_rules: Vec<CodeRule>,
    #[serde(default, rename = "word_rule")]
    pub word_rules: Vec<WordRule>,
    #[serde(rename = "diagnosis")]
    pub diagnoses: Vec<DiagnosisTemplate>,
}

impl GeneratorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn default_toy() -> Self {
        Self::from_toml_str(DEFAULT_GENERATOR_TOML).expect("bundled generator config is valid")
    }

    pub fn with_size(mut self, size: usize) -> Self {
        self.size = size;
        self
    }
}

/// Names planted by the generator with their exact sentence counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlantedNames {
    pub counts: BTreeMap<String, usize>,
}

struct Prepared<'a> {
    var_dists: Vec<Option<WeightedIndex<f64>>>,
    missing: Vec<f64>,
    dx_var: usize,
    templates: Vec<&'a DiagnosisTemplate>,
    template_dist: WeightedIndex<f64>,
    phrase_dists: Vec<WeightedIndex<f64>>,
    code_rules: Vec<(usize, &'a CodeRule)>,
    word_rules: Vec<(Option<usize>, &'a WordRule)>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn prepare<'a>(cfg: &'a GeneratorConfig, schema: &RecordSchema) -> Result<Prepared<'a>> {
    let dx_var = schema
        .diagnosis_index()
        .ok_or_else(|| config_err("schema has no multi-valued diagnosis variable"))?;
    let dx_card = schema.variables()[dx_var].cardinality as u32;

    for name in cfg.weights.keys().chain(cfg.missing.keys()) {
        if schema.index_of(name).is_none() {
            return Err(config_err(format!(
                "generator references unknown variable {name}"
            )));
        }
    }
    let mut var_dists = Vec::new();
    let mut missing = Vec::new();
    for (i, spec) in schema.variables().iter().enumerate() {
        missing.push(cfg.missing.get(&spec.name).copied().unwrap_or(0.0));
        if i == dx_var {
            var_dists.push(None);
            continue;
        }
        let weights = match cfg.weights.get(&spec.name) {
            Some(w) if w.len() != spec.cardinality => {
                return Err(config_err(format!(
                    "weights for {} list {} values, variable has {}",
                    spec.name,
                    w.len(),
                    spec.cardinality
                )))
            }
            Some(w) => w.clone(),
            None => vec![1.0; spec.cardinality],
        };
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| config_err(format!("weights for {}: {e}", spec.name)))?;
        var_dists.push(Some(dist));
    }

    let limit = cfg.template_limit.unwrap_or(cfg.diagnoses.len());
    let templates: Vec<&DiagnosisTemplate> = cfg.diagnoses.iter().take(limit).collect();
    if templates.is_empty() {
        return Err(config_err("no diagnosis templates"));
    }
    let mut phrase_dists = Vec::new();
    for t in &templates {
        if t.code >= dx_card {
            return Err(config_err(format!(
                "diagnosis code {} outside [0, {dx_card})",
                t.code
            )));
        }
        if t.phrases.is_empty() {
            return Err(config_err(format!("diagnosis {} has no phrases", t.code)));
        }
        for p in &t.phrases {
            for slot in slot_names(p) {
                if !cfg.slots.contains_key(slot) {
                    return Err(config_err(format!("phrase {p:?} uses unknown slot {slot}")));
                }
            }
        }
        let w = match &t.phrase_weights {
            Some(w) if w.len() != t.phrases.len() => {
                return Err(config_err(format!(
                    "diagnosis {}: phrase_weights length mismatch",
                    t.code
                )))
            }
            Some(w) => w.clone(),
            None => vec![1.0; t.phrases.len()],
        };
        phrase_dists.push(
            WeightedIndex::new(&w).map_err(|e| config_err(format!("diagnosis {}: {e}", t.code)))?,
        );
    }
    let template_dist = WeightedIndex::new(templates.iter().map(|t| t.weight))
        .map_err(|e| config_err(format!("diagnosis weights: {e}")))?;

    let mut code_rules = Vec::new();
    for rule in &cfg.code_rules {
        let var = schema.index_of(&rule.variable).ok_or_else(|| {
            config_err(format!(
                "code rule references unknown variable {}",
                rule.variable
            ))
        })?;
        if !templates.iter().any(|t| t.code == rule.code) {
            return Err(config_err(format!(
                "code rule for {} has no phrase template",
                rule.code
            )));
        }
        code_rules.push((var, rule));
    }
    let mut word_rules = Vec::new();
    for rule in &cfg.word_rules {
        let var = match &rule.variable {
            Some(name) => Some(schema.index_of(name).ok_or_else(|| {
                config_err(format!("word rule references unknown variable {name}"))
            })?),
            None => None,
        };
        word_rules.push((var, rule));
    }
    if cfg.secondary.rate > 0.0
        && (cfg.secondary.min_code > cfg.secondary.max_code || cfg.secondary.max_code >= dx_card)
    {
        return Err(config_err("secondary code range is invalid"));
    }
    if !cfg.names.tokens.is_empty() && cfg.names.min_count > cfg.names.max_count {
        return Err(config_err("names: min_count exceeds max_count"));
    }

    Ok(Prepared {
        var_dists,
        missing,
        dx_var,
        templates,
        template_dist,
        phrase_dists,
        code_rules,
        word_rules,
    })
}

fn slot_names(phrase: &str) -> impl Iterator<Item = &str> {
    phrase
        .split('{')
        .skip(1)
        .filter_map(|s| s.split_once('}').map(|(name, _)| name))
}

fn fill_slots<R: Rng>(phrase: &str, slots: &BTreeMap<String, Vec<String>>, rng: &mut R) -> String {
    let mut out = String::with_capacity(phrase.len());
    let mut rest = phrase;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = rest[start..]
            .find('}')
            .map(|e| start + e)
            .unwrap_or(rest.len() - 1);
        let name = &rest[start + 1..end];
        let options = &slots[name];
        out.push_str(&options[rng.gen_range(0..options.len())]);
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    out
}

fn in_categories(record: &RawRecord, var: usize, categories: &[u32]) -> bool {
    record.values[var]
        .codes()
        .first()
        .is_some_and(|c| categories.contains(c))
}

/// Generates `cfg.size` record/sentence pairs, deterministically in `seed`.
pub fn synth_corpus(
    cfg: &GeneratorConfig,
    schema: &RecordSchema,
    seed: u64,
) -> Result<Vec<RecordPair>> {
    Ok(synth_corpus_with_names(cfg, schema, seed)?.0)
}

/// As [`synth_corpus`], also returning the planted name counts.
pub fn synth_corpus_with_names(
    cfg: &GeneratorConfig,
    schema: &RecordSchema,
    seed: u64,
) -> Result<(Vec<RecordPair>, PlantedNames)> {
    let prep = prepare(cfg, schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(cfg.size);

    for _ in 0..cfg.size {
        let mut values = Vec::with_capacity(schema.variables().len());
        for (i, dist) in prep.var_dists.iter().enumerate() {
            match dist {
                Some(d) => values.push(FieldValue::Single(Some(d.sample(&mut rng) as u32))),
                None => values.push(FieldValue::Multi(Vec::new())),
            }
            debug_assert!(i < schema.variables().len());
        }
        let mut record = RawRecord { values };

        let mut primary = None;
        for (var, rule) in &prep.code_rules {
            let p = if in_categories(&record, *var, &rule.categories) {
                rule.p_in
            } else {
                rule.p_out
            };
            if rng.gen::<f64>() < p {
                primary = Some(rule.code);
                break;
            }
        }
        let template_idx = match primary {
            Some(code) => prep
                .templates
                .iter()
                .position(|t| t.code == code)
                .expect("validated in prepare"),
            None => prep.template_dist.sample(&mut rng),
        };
        let template = prep.templates[template_idx];
        let phrase = &template.phrases[prep.phrase_dists[template_idx].sample(&mut rng)];
        let mut words: Vec<String> = fill_slots(phrase, &cfg.slots, &mut rng)
            .split_whitespace()
            .map(str::to_string)
            .collect();

        for (var, rule) in &prep.word_rules {
            let p = match var {
                Some(v) if in_categories(&record, *v, &rule.categories) => rule.p_in,
                Some(_) => rule.p_out,
                None => rule.p_in,
            };
            if rng.gen::<f64>() < p {
                words.extend(rule.phrase.split_whitespace().map(str::to_string));
            }
        }
        if !cfg.noise.phrases.is_empty() && rng.gen::<f64>() < cfg.noise.rate {
            let noise = &cfg.noise.phrases[rng.gen_range(0..cfg.noise.phrases.len())];
            words.extend(noise.split_whitespace().map(str::to_string));
        }
        if rng.gen::<f64>() < cfg.typo_rate {
            let candidates: Vec<usize> = (0..words.len())
                .filter(|&i| words[i].chars().count() >= 4)
                .collect();
            if !candidates.is_empty() {
                let w = candidates[rng.gen_range(0..candidates.len())];
                let chars: Vec<char> = words[w].chars().collect();
                let drop = rng.gen_range(1..chars.len());
                words[w] = chars
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != drop)
                    .map(|(_, c)| c)
                    .collect();
            }
        }
        if !cfg.noise.phrases.is_empty() && rng.gen::<f64>() < cfg.long_rate {
            while words.len() <= 20 {
                let noise = &cfg.noise.phrases[rng.gen_range(0..cfg.noise.phrases.len())];
                words.extend(noise.split_whitespace().map(str::to_string));
            }
        }

        let mut dx = Vec::new();
        if rng.gen::<f64>() >= prep.missing[prep.dx_var] {
            dx.push(template.code);
            if rng.gen::<f64>() < cfg.secondary.rate {
                let c = rng.gen_range(cfg.secondary.min_code..=cfg.secondary.max_code);
                if c != template.code {
                    dx.push(c);
                }
            }
        }
        record.values[prep.dx_var] = FieldValue::Multi(dx);
        for (i, rate) in prep.missing.iter().enumerate() {
            if i != prep.dx_var && *rate > 0.0 && rng.gen::<f64>() < *rate {
                record.values[i] = FieldValue::Single(None);
            }
        }
        pairs.push(RecordPair {
            record,
            text: words.join(" "),
        });
    }

    let mut planted = PlantedNames::default();
    if !pairs.is_empty() {
        let mut used = BTreeSet::new();
        for name in &cfg.names.tokens {
            let count = rng
                .gen_range(cfg.names.min_count..=cfg.names.max_count)
                .min(pairs.len());
            // One name per sentence keeps per-name counts exact.
            let available: Vec<usize> = (0..pairs.len()).filter(|i| !used.contains(i)).collect();
            let count = count.min(available.len());
            for k in sample(&mut rng, available.len(), count).into_vec() {
                let idx = available[k];
                used.insert(idx);
                let text = &mut pairs[idx].text;
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(&cfg.names.context);
                text.push(' ');
                text.push_str(name);
            }
            planted.counts.insert(name.clone(), count);
        }
    }
    Ok((pairs, planted))
}
