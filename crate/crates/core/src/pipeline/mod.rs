//! File-based workflow behind the command-line tool. Each method reads
//! artifacts from the work directory, runs one stage and writes its
//! outputs plus a `<command>.manifest.json` carrying the config
//! fingerprint and seed.

mod config;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    DataConfig, EmbeddingSettings, EsSource, ModelConfig, NamesConfig, PathsConfig, RunConfig,
    SamplerSettings, Stage, DEFAULT_RUN_TOML,
};

use crate::classifier::{self, BiGru, ClassifierStats, Labeled, TransferRow};
use crate::embeddings::{
    self, count_name_hits, name_discovery_session, read_candidates, read_name_list, train_skipgram,
    write_candidates, write_name_list, DiscoverySession, InteractiveCurator, NameHits, NameList,
    ScriptedCurator, WordVectors,
};
use crate::epi::{self, EpiRow};
use crate::error::{Error, Result};
use crate::metrics::{self, IdfTable, MetricReport, DEFAULT_N_MAX};
use crate::nn::{load_checkpoint, save_checkpoint, ParamStore};
use crate::sampler::{generate_corpus, SamplerConfig, Scheme};
use crate::schema::{self as csvio, synth, EncodedRecord, RecordPair, RecordSchema};
use crate::seq2seq::{self, EpochStats, Example, Seq2Seq, Seq2SeqDims, TrainStats};
use crate::text::{
    self as textio, build_vocab, decode_content, filter_corpus, sample_subset, split_indices,
    tokenize, TokenizedPair, Vocabulary, EOS,
};

pub const CORPUS: &str = "corpus.csv";
pub const PLANTED: &str = "planted_names.txt";
pub const VOCAB: &str = "vocab.txt";
pub const TRAIN: &str = "train.jsonl";
pub const VAL: &str = "val.jsonl";
pub const TEST: &str = "test.jsonl";
pub const ENCODER: &str = "encoder.ckpt";
pub const MODEL: &str = "model.ckpt";
pub const VECTORS: &str = "vectors.txt";
pub const CLASSIFIER: &str = "classifier.ckpt";
pub const NAMES: &str = "names.txt";
pub const CANDIDATES: &str = "candidates.tsv";

/// A JSON row tagged with the run that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub fingerprint: String,
    pub seed: u64,
    #[serde(flatten)]
    pub row: T,
}

#[derive(Serialize)]
struct Manifest<'a, S: Serialize> {
    command: &'a str,
    fingerprint: &'a str,
    seed: u64,
    outputs: Vec<String>,
    summary: &'a S,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub pairs: usize,
    pub planted: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub ingested: usize,
    pub rejected_rows: usize,
    pub vocab_size: usize,
    pub kept: usize,
    pub dropped_oov: usize,
    pub dropped_length: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Entropy (nats) of the training-set unigram distribution over
    /// predicted tokens (content and EOS).
    pub unigram_entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub scheme: String,
    pub file: String,
    pub sentences: usize,
    pub empty: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSummary {
    pub tokens: usize,
    pub dim: usize,
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamesSummary {
    pub names: Vec<String>,
    pub iteration: usize,
    /// Queries written to the candidates file and awaiting review.
    pub pending: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NameScan {
    pub scheme: String,
    pub names: usize,
    pub sentences: usize,
    pub authentic_hits: usize,
    pub synthetic_hits: usize,
    pub authentic_per_name: BTreeMap<String, usize>,
    pub synthetic_per_name: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoveltyRow {
    pub scheme: String,
    pub sentences: usize,
    pub unique: usize,
    pub novel: usize,
}

/// One line of `gen/<tag>.jsonl`. The scheme is carried by the file name
/// and the manifest, so schemes that decode identically (beam with k = 1
/// and greedy) produce identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLine {
    pub record_index: usize,
    pub text: String,
    pub log_prob: f64,
}

/// How `find-names` gets its curation decisions.
pub enum Curation {
    /// Write `candidates.tsv`, read it back marked on the next run.
    Files,
    /// Prompt on standard error, read from standard input.
    Interactive,
    /// Accept exactly the tokens on this list.
    Scripted(Vec<String>),
}

pub struct Pipeline {
    config: RunConfig,
    fingerprint: String,
    schema: RecordSchema,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let schema = match &config.paths.schema {
            Some(p) => RecordSchema::from_file(p)?,
            None => RecordSchema::default_ed(),
        };
        Ok(Self {
            fingerprint: config.fingerprint(),
            config,
            schema,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn schema(&self) -> &RecordSchema {
        &self.schema
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.paths.work_dir.join(name)
    }

    pub fn data_path(&self) -> PathBuf {
        self.config
            .paths
            .data
            .clone()
            .unwrap_or_else(|| self.path(CORPUS))
    }

    pub fn generation_path(&self, scheme: &Scheme) -> PathBuf {
        self.path(&format!("gen/{}.jsonl", scheme.tag()))
    }

    fn seed(&self, stage: Stage) -> u64 {
        self.config.stage_seed(stage)
    }

    fn stamp<T>(&self, row: T) -> Stamped<T> {
        Stamped {
            fingerprint: self.fingerprint.clone(),
            seed: self.config.seed,
            row,
        }
    }

    fn prepare_dir(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(())
    }

    fn write_jsonl<T: Serialize>(
        &self,
        path: &Path,
        rows: impl IntoIterator<Item = T>,
    ) -> Result<()> {
        self.prepare_dir(path)?;
        let mut w = BufWriter::new(File::create(path)?);
        for row in rows {
            serde_json::to_writer(&mut w, &self.stamp(row))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_text(&self, path: &Path, text: &str) -> Result<()> {
        self.prepare_dir(path)?;
        fs::write(path, text)?;
        Ok(())
    }

    fn manifest<S: Serialize>(
        &self,
        command: &str,
        outputs: &[PathBuf],
        summary: &S,
    ) -> Result<()> {
        let path = self.path(&format!("{command}.manifest.json"));
        let m = Manifest {
            command,
            fingerprint: &self.fingerprint,
            seed: self.config.seed,
            outputs: outputs
                .iter()
                .map(|p| {
                    p.strip_prefix(&self.config.paths.work_dir)
                        .unwrap_or(p)
                        .display()
                        .to_string()
                })
                .collect(),
            summary,
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        self.write_text(&path, &text)
    }

    fn require(&self, path: PathBuf, producer: &'static str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact { path, producer })
        }
    }

    fn vocab(&self) -> Result<Vocabulary> {
        textio::read_vocab(&self.require(self.path(VOCAB), "preprocess")?)
    }

    fn pairs(&self, name: &str) -> Result<Vec<TokenizedPair>> {
        textio::read_pairs_jsonl(&self.require(self.path(name), "preprocess")?)
    }

    fn examples(&self, pairs: &[TokenizedPair]) -> Result<Vec<Example>> {
        pairs
            .iter()
            .map(|p| {
                Ok(Example {
                    record: p.record(&self.schema)?,
                    seq: p.sequence()?,
                })
            })
            .collect()
    }

    fn dims(&self, vocab: &Vocabulary) -> Seq2SeqDims {
        Seq2SeqDims {
            record_dim: self.schema.total_dim(),
            vocab_size: vocab.len(),
            hidden: self.config.model.hidden,
        }
    }

    fn checkpoint_meta(&self, kind: &str) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("kind".to_string(), kind.to_string()),
            ("fingerprint".to_string(), self.fingerprint.clone()),
            ("seed".to_string(), self.config.seed.to_string()),
        ])
    }

    pub fn load_model(&self) -> Result<Seq2Seq> {
        let ck = load_checkpoint(&self.require(self.path(MODEL), "train")?)?;
        let model = Seq2Seq::from_params(ck.params)?;
        let vocab = self.vocab()?;
        if model.dims().vocab_size != vocab.len()
            || model.dims().record_dim != self.schema.total_dim()
        {
            return Err(Error::Checkpoint(
                "model checkpoint does not match the vocabulary or schema".into(),
            ));
        }
        Ok(model)
    }

    // ---- synth-data -------------------------------------------------

    pub fn synth_data(&self) -> Result<SynthSummary> {
        let mut gen = match &self.config.paths.generator {
            Some(p) => synth::GeneratorConfig::from_toml_str(&fs::read_to_string(p)?)?,
            None => synth::GeneratorConfig::default_toy(),
        };
        if let Some(size) = self.config.data.size {
            gen = gen.with_size(size);
        }
        let (pairs, planted) =
            synth::synth_corpus_with_names(&gen, &self.schema, self.seed(Stage::Synth))?;
        let corpus = self.path(CORPUS);
        self.prepare_dir(&corpus)?;
        csvio::write_csv(BufWriter::new(File::create(&corpus)?), &self.schema, &pairs)?;
        let names = self.path(PLANTED);
        let mut text = String::from("# sentinel names planted by synth-data\n");
        for name in planted.counts.keys() {
            text.push_str(name);
            text.push('\n');
        }
        self.write_text(&names, &text)?;
        let summary = SynthSummary {
            pairs: pairs.len(),
            planted: planted.counts,
        };
        self.manifest("synth-data", &[corpus, names], &summary)?;
        Ok(summary)
    }

    fn corpus(&self) -> Result<csvio::IngestReport> {
        let path = self.data_path();
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                producer: "synth-data",
            });
        }
        csvio::ingest_csv(&path, &self.schema)
    }

    // ---- preprocess -------------------------------------------------

    pub fn preprocess(&self) -> Result<PreprocessSummary> {
        let ingest = self.corpus()?;
        let d = &self.config.data;
        let vocab = build_vocab(ingest.pairs.iter().map(|p| p.text.as_str()), d.min_freq)?;
        let ingested = ingest.pairs.len();
        let outcome = filter_corpus(ingest.pairs, &vocab, d.max_len);
        let tokenized: Vec<TokenizedPair> = outcome
            .pairs
            .iter()
            .map(|p| TokenizedPair::from_pair(p, &self.schema, &vocab, d.max_len))
            .collect::<Result<_>>()?;
        if tokenized.len() < 2 {
            return Err(Error::InvalidArgument(
                "fewer than two pairs survive preprocessing".into(),
            ));
        }
        let (train_idx, val_idx) =
            split_indices(tokenized.len(), d.train_frac, self.seed(Stage::Split));
        let test_idx = sample_subset(&val_idx, d.test_size, self.seed(Stage::Split) ^ 1);
        let pick = |idx: &[usize]| {
            idx.iter()
                .map(|&i| tokenized[i].clone())
                .collect::<Vec<_>>()
        };
        let (train, val, test) = (pick(&train_idx), pick(&val_idx), pick(&test_idx));
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument(
                "train/validation split left a side empty".into(),
            ));
        }
        let paths = [
            self.path(VOCAB),
            self.path(TRAIN),
            self.path(VAL),
            self.path(TEST),
        ];
        self.prepare_dir(&paths[0])?;
        textio::write_vocab(&paths[0], &vocab)?;
        textio::write_pairs_jsonl(&paths[1], &train)?;
        textio::write_pairs_jsonl(&paths[2], &val)?;
        textio::write_pairs_jsonl(&paths[3], &test)?;
        let summary = PreprocessSummary {
            ingested,
            rejected_rows: ingest.rejected.len(),
            vocab_size: vocab.len(),
            kept: tokenized.len(),
            dropped_oov: outcome.dropped_oov,
            dropped_length: outcome.dropped_length,
            train: train.len(),
            val: val.len(),
            test: test.len(),
            unigram_entropy: unigram_entropy(train.iter().map(|p| p.token_ids.as_slice())),
        };
        self.manifest("preprocess", &paths, &summary)?;
        Ok(summary)
    }

    // ---- pretrain-encoder -------------------------------------------

    pub fn pretrain_encoder(&self) -> Result<PretrainSummary> {
        let vocab = self.vocab()?;
        let train = self.pairs(TRAIN)?;
        let records: Vec<EncodedRecord> = train
            .iter()
            .map(|p| p.record(&self.schema))
            .collect::<Result<_>>()?;
        let model = Seq2Seq::new(self.dims(&vocab), self.seed(Stage::Init));
        let cfg = seq2seq::PretrainConfig {
            seed: self.seed(Stage::Pretrain),
            ..self.config.pretrain.clone()
        };
        let out = seq2seq::pretrain_autoencoder(&records, &model, &cfg)?;
        let mut params = ParamStore::new();
        params.insert("encoder.weight", out.encoder_weight.clone())?;
        params.insert("encoder.bias", out.encoder_bias.clone())?;
        let path = self.path(ENCODER);
        self.prepare_dir(&path)?;
        save_checkpoint(&path, &params, &self.checkpoint_meta("encoder"))?;
        let summary = PretrainSummary {
            initial_loss: out.initial_loss,
            epoch_losses: out.epoch_losses,
        };
        self.manifest("pretrain-encoder", &[path], &summary)?;
        Ok(summary)
    }

    // ---- train ------------------------------------------------------

    pub fn train(&self, on_epoch: impl FnMut(&EpochStats)) -> Result<TrainStats> {
        let vocab = self.vocab()?;
        let train = self.examples(&self.pairs(TRAIN)?)?;
        let val = self.examples(&self.pairs(VAL)?)?;
        let mut model = Seq2Seq::new(self.dims(&vocab), self.seed(Stage::Init));
        if self.config.model.pretrained_encoder {
            let ck = load_checkpoint(&self.require(self.path(ENCODER), "pretrain-encoder")?)?;
            for name in ["encoder.weight", "encoder.bias"] {
                model
                    .params_mut()
                    .replace(name, ck.params.require(name)?.clone())?;
            }
        }
        let cfg = seq2seq::TrainConfig {
            seed: self.seed(Stage::Train),
            ..self.config.train.clone()
        };
        let stats = seq2seq::train(&mut model, &train, &val, &cfg, on_epoch)?;
        let (ckpt, log) = (self.path(MODEL), self.path("train_log.jsonl"));
        self.prepare_dir(&ckpt)?;
        save_checkpoint(&ckpt, model.params(), &self.checkpoint_meta("seq2seq"))?;
        self.write_jsonl(&log, stats.epochs.iter())?;
        self.manifest("train", &[ckpt, log], &stats)?;
        Ok(stats)
    }

    // ---- generate ---------------------------------------------------

    /// Decodes the test records with each scheme into `gen/<tag>.jsonl`.
    pub fn generate(&self, schemes: &[Scheme]) -> Result<Vec<GenerateSummary>> {
        let model = self.load_model()?;
        let vocab = self.vocab()?;
        let test = self.pairs(TEST)?;
        let records: Vec<EncodedRecord> = test
            .iter()
            .map(|p| p.record(&self.schema))
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        let mut files = Vec::new();
        for scheme in schemes {
            let cfg = SamplerConfig {
                scheme: *scheme,
                max_len: self.config.data.max_len,
                seed: self.seed(Stage::Sample),
            };
            let generated = generate_corpus(&model, &records, &cfg)?;
            let rows: Vec<GeneratedLine> = generated
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    Ok(GeneratedLine {
                        record_index: i,
                        text: decode_content(&g.content, &vocab)?,
                        log_prob: g.log_prob,
                    })
                })
                .collect::<Result<_>>()?;
            let path = self.generation_path(scheme);
            self.write_jsonl(&path, rows.iter())?;
            log::info!(
                "{}: {} sentences -> {}",
                scheme.label(),
                rows.len(),
                path.display()
            );
            out.push(GenerateSummary {
                scheme: scheme.label(),
                file: path
                    .strip_prefix(&self.config.paths.work_dir)
                    .unwrap_or(&path)
                    .display()
                    .to_string(),
                sentences: rows.len(),
                empty: generated.iter().filter(|g| g.content.is_empty()).count(),
            });
            files.push(path);
        }
        let name = match schemes {
            [one] => format!("generate-{}", one.tag()),
            _ => "generate".to_string(),
        };
        self.manifest(&name, &files, &out)?;
        Ok(out)
    }

    pub fn generated(&self, scheme: &Scheme) -> Result<Vec<GeneratedLine>> {
        let path = self.require(self.generation_path(scheme), "generate")?;
        let text = fs::read_to_string(&path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }

    fn generated_aligned(&self, scheme: &Scheme, expected: usize) -> Result<Vec<GeneratedLine>> {
        let rows = self.generated(scheme)?;
        if rows.len() != expected || rows.iter().enumerate().any(|(i, r)| r.record_index != i) {
            return Err(Error::InvalidArgument(format!(
                "{} does not match the current test set; rerun generate",
                self.generation_path(scheme).display()
            )));
        }
        Ok(rows)
    }

    // ---- train-embeddings -------------------------------------------

    /// Skipgram vectors over every ingested sentence, before any
    /// frequency or length filtering.
    pub fn train_embeddings(&self) -> Result<EmbeddingSummary> {
        let ingest = self.corpus()?;
        let texts: Vec<String> = ingest
            .pairs
            .iter()
            .map(|p| tokenize(&p.text).join(" "))
            .collect();
        let cfg = embeddings::SkipgramConfig {
            seed: self.seed(Stage::Skipgram),
            ..self.config.embeddings.skipgram.clone()
        };
        let model = train_skipgram(&texts, &cfg)?;
        let (vec_path, log) = (self.path(VECTORS), self.path("embeddings_log.jsonl"));
        self.prepare_dir(&vec_path)?;
        model.vectors.write_text(&vec_path)?;
        #[derive(Serialize)]
        struct Epoch {
            epoch: usize,
            loss: f64,
        }
        self.write_jsonl(
            &log,
            model
                .epoch_losses
                .iter()
                .enumerate()
                .map(|(i, &loss)| Epoch { epoch: i + 1, loss }),
        )?;
        let summary = EmbeddingSummary {
            tokens: model.vectors.len(),
            dim: model.vectors.dim(),
            epoch_losses: model.epoch_losses,
        };
        self.manifest("train-embeddings", &[vec_path, log], &summary)?;
        Ok(summary)
    }

    fn vectors(&self) -> Result<WordVectors> {
        let path = self.require(self.path(VECTORS), "train-embeddings")?;
        WordVectors::read_text(&path)
    }

    /// Vectors behind ES; skipgram vectors are trained first if absent.
    fn es_vectors(&self) -> Result<WordVectors> {
        match self.config.embeddings.es_source {
            EsSource::Decoder => WordVectors::from_decoder(&self.load_model()?, &self.vocab()?),
            EsSource::Skipgram => {
                if !self.path(VECTORS).exists() {
                    log::info!("no {VECTORS}; training skipgram vectors first");
                    self.train_embeddings()?;
                }
                self.vectors()
            }
        }
    }

    // ---- evaluate ---------------------------------------------------

    /// Scores each scheme's generations against the authentic test text.
    pub fn evaluate(&self) -> Result<Vec<MetricReport>> {
        let test = self.pairs(TEST)?;
        let reference: Vec<Vec<String>> = test.iter().map(|p| tokenize(&p.text)).collect();
        let mut candidates = Vec::new();
        for scheme in &self.config.sampler.schemes {
            let rows = self.generated_aligned(scheme, test.len())?;
            candidates.push((
                scheme.label(),
                rows.iter().map(|r| tokenize(&r.text)).collect::<Vec<_>>(),
            ));
        }
        self.score(reference, candidates, "evaluate")
    }

    /// Scores arbitrary aligned files. Each must be JSONL with a `text`
    /// field per line (pair files and generation files both qualify).
    pub fn evaluate_files(
        &self,
        reference: &Path,
        candidates: &[PathBuf],
    ) -> Result<Vec<MetricReport>> {
        let reference_text = read_texts(reference)?;
        let mut sets = Vec::new();
        for c in candidates {
            let label = c
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            sets.push((label, read_texts(c)?));
        }
        self.score(reference_text, sets, "evaluate")
    }

    fn score(
        &self,
        reference: Vec<Vec<String>>,
        candidates: Vec<(String, Vec<Vec<String>>)>,
        command: &str,
    ) -> Result<Vec<MetricReport>> {
        let vectors = self.es_vectors()?;
        let idf = IdfTable::build(&reference, DEFAULT_N_MAX);
        let reports: Vec<MetricReport> = candidates
            .iter()
            .map(|(label, cand)| metrics::corpus_report(label, &reference, cand, &vectors, &idf))
            .collect::<Result<_>>()?;
        let (txt, jsonl) = (self.path("report.txt"), self.path("report.jsonl"));
        self.write_text(&txt, &metrics::format_table(&reports))?;
        self.write_jsonl(&jsonl, reports.iter())?;
        self.manifest(command, &[txt, jsonl], &reports)?;
        Ok(reports)
    }

    // ---- classify-train / classify-eval -----------------------------

    fn labeled(&self, pairs: &[TokenizedPair]) -> Result<Vec<(usize, Labeled)>> {
        let mut out = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            if let Some(label) = p.primary_diagnosis() {
                out.push((
                    i,
                    Labeled {
                        content: p.sequence()?.content().to_vec(),
                        label: label as usize,
                    },
                ));
            }
        }
        Ok(out)
    }

    fn classes(&self) -> Result<usize> {
        let dx = self
            .schema
            .diagnosis_index()
            .ok_or_else(|| Error::Schema("schema has no multi-valued diagnosis variable".into()))?;
        Ok(self.schema.variables()[dx].cardinality)
    }

    /// Trains the BiGRU on authentic training text; records without a
    /// diagnosis are left out.
    pub fn classify_train(&self, on_epoch: impl FnMut(&EpochStats)) -> Result<ClassifierStats> {
        let vocab = self.vocab()?;
        let strip = |v: Vec<(usize, Labeled)>| v.into_iter().map(|(_, l)| l).collect::<Vec<_>>();
        let train = strip(self.labeled(&self.pairs(TRAIN)?)?);
        let val = strip(self.labeled(&self.pairs(VAL)?)?);
        let cfg = classifier::ClassifierConfig {
            seed: self.seed(Stage::Classifier),
            ..self.config.classifier.clone()
        };
        let (model, stats) = classifier::train_classifier(
            &train,
            &val,
            vocab.len(),
            self.classes()?,
            &cfg,
            on_epoch,
        )?;
        let (ckpt, log) = (self.path(CLASSIFIER), self.path("classifier_log.jsonl"));
        self.prepare_dir(&ckpt)?;
        save_checkpoint(&ckpt, model.params(), &self.checkpoint_meta("bigru"))?;
        self.write_jsonl(&log, stats.epochs.iter())?;
        self.manifest("classify-train", &[ckpt, log], &stats)?;
        Ok(stats)
    }

    /// Classifier scores on authentic test text and on each scheme's text
    /// for the same records.
    pub fn classify_eval(&self, schemes: &[Scheme]) -> Result<Vec<TransferRow>> {
        let ck = load_checkpoint(&self.require(self.path(CLASSIFIER), "classify-train")?)?;
        let model = BiGru::from_params(ck.params)?;
        let vocab = self.vocab()?;
        let test = self.pairs(TEST)?;
        let authentic = self.labeled(&test)?;
        let auth: Vec<Labeled> = authentic.iter().map(|(_, l)| l.clone()).collect();
        let mut rows = Vec::new();
        for scheme in schemes {
            let gen = self.generated_aligned(scheme, test.len())?;
            let syn: Vec<Labeled> = authentic
                .iter()
                .map(|(i, l)| {
                    Ok(Labeled {
                        content: encode_words(&gen[*i].text, &vocab)?,
                        label: l.label,
                    })
                })
                .collect::<Result<_>>()?;
            let (ra, rs) = classifier::transfer_eval(&model, &auth, &syn)?;
            if rows.is_empty() {
                rows.push(TransferRow::new("Original", &ra));
            }
            rows.push(TransferRow::new(&scheme.label(), &rs));
        }
        let (txt, jsonl) = (self.path("transfer.txt"), self.path("transfer.jsonl"));
        self.write_text(&txt, &classifier::format_transfer_table(&rows))?;
        self.write_jsonl(&jsonl, rows.iter())?;
        self.manifest("classify-eval", &[txt, jsonl], &rows)?;
        Ok(rows)
    }

    // ---- epi-report -------------------------------------------------

    pub fn epi_report(
        &self,
        scheme: &Scheme,
        probes: Option<&epi::ProbeConfig>,
    ) -> Result<Vec<EpiRow>> {
        let probes = probes.unwrap_or(&self.config.epi);
        let test = self.pairs(TEST)?;
        let gen = self.generated_aligned(scheme, test.len())?;
        let authentic: Vec<RecordPair> = test
            .iter()
            .map(|p| p.to_pair(&self.schema))
            .collect::<Result<_>>()?;
        let synthetic: Vec<RecordPair> = authentic
            .iter()
            .zip(&gen)
            .map(|(a, g)| RecordPair {
                record: a.record.clone(),
                text: g.text.clone(),
            })
            .collect();
        let rows = epi::epi_report(&authentic, &synthetic, probes, &self.schema)?;
        let (txt, jsonl) = (self.path("epi.txt"), self.path("epi.jsonl"));
        self.write_text(&txt, &epi::format_epi_table(&rows))?;
        self.write_jsonl(&jsonl, rows.iter())?;
        self.manifest("epi-report", &[txt, jsonl], &rows)?;
        Ok(rows)
    }

    // ---- find-names / scan-names ------------------------------------

    pub fn find_names(&self, curation: Curation) -> Result<NamesSummary> {
        let vectors = self.vectors()?;
        let names_path = self.path(NAMES);
        let list = if names_path.exists() {
            read_name_list(&names_path)?
        } else if self.config.names.seeds.is_empty() {
            return Err(Error::Config(format!(
                "no seed names: set names.seeds or create {}",
                names_path.display()
            )));
        } else {
            NameList::from_seeds(self.config.names.seeds.iter().cloned())
        };
        let k = self.config.names.k;
        let cand_path = self.path(CANDIDATES);
        let (session, pending) = match curation {
            Curation::Scripted(accept) => {
                let mut c = ScriptedCurator(|t: &str| accept.iter().any(|a| a == t));
                (name_discovery_session(list, &vectors, k, &mut c)?, 0)
            }
            Curation::Interactive => {
                let stdin = std::io::stdin();
                let mut c = InteractiveCurator {
                    input: stdin.lock(),
                    output: std::io::stderr(),
                };
                (name_discovery_session(list, &vectors, k, &mut c)?, 0)
            }
            Curation::Files => {
                let mut session = DiscoverySession::new(list, &vectors)?;
                if cand_path.exists() {
                    let blocks = read_candidates(&cand_path)?;
                    let added = session.apply(&blocks, &vectors)?;
                    log::info!("iteration {}: {added} names confirmed", session.iteration);
                    fs::remove_file(&cand_path)?;
                }
                let pending = if session.is_done() {
                    0
                } else {
                    let blocks = session.candidates(&vectors, k)?;
                    write_candidates(&cand_path, &blocks)?;
                    blocks.len()
                };
                (session, pending)
            }
        };
        self.prepare_dir(&names_path)?;
        write_name_list(&names_path, &session.list)?;
        let summary = NamesSummary {
            names: session.list.tokens(),
            iteration: session.iteration,
            pending,
        };
        let mut outputs = vec![names_path];
        if pending > 0 {
            outputs.push(cand_path);
        }
        self.manifest("find-names", &outputs, &summary)?;
        Ok(summary)
    }

    /// Sentences of the test set naming anyone on the list, in authentic
    /// text and in one scheme's text.
    pub fn scan_names(&self, scheme: &Scheme, names: Option<&Path>) -> Result<NameScan> {
        let path = match names {
            Some(p) => p.to_path_buf(),
            None => self.require(self.path(NAMES), "find-names")?,
        };
        let names = read_name_list(&path)?.tokens();
        let test = self.pairs(TEST)?;
        let gen = self.generated_aligned(scheme, test.len())?;
        let auth: Vec<&str> = test.iter().map(|p| p.text.as_str()).collect();
        let syn: Vec<&str> = gen.iter().map(|g| g.text.as_str()).collect();
        let (a, s): (NameHits, NameHits) = (
            count_name_hits(&auth, &names),
            count_name_hits(&syn, &names),
        );
        let scan = NameScan {
            scheme: scheme.label(),
            names: names.len(),
            sentences: test.len(),
            authentic_hits: a.sentences,
            synthetic_hits: s.sentences,
            authentic_per_name: a.per_name,
            synthetic_per_name: s.per_name,
        };
        let out = self.path("name_hits.jsonl");
        self.write_jsonl(&out, std::iter::once(&scan))?;
        self.manifest("scan-names", &[out], &scan)?;
        Ok(scan)
    }

    // ---- novelty ----------------------------------------------------

    pub fn novelty(&self, schemes: &[Scheme]) -> Result<Vec<NoveltyRow>> {
        let train = self.pairs(TRAIN)?;
        let seen: Vec<&str> = train.iter().map(|p| p.text.as_str()).collect();
        let mut rows = Vec::new();
        for scheme in schemes {
            let gen = self.generated(scheme)?;
            let texts: Vec<&str> = gen.iter().map(|g| g.text.as_str()).collect();
            let n = metrics::novelty_report(&texts, &seen);
            rows.push(NoveltyRow {
                scheme: scheme.label(),
                sentences: texts.len(),
                unique: n.unique,
                novel: n.novel,
            });
        }
        let out = self.path("novelty.jsonl");
        self.write_jsonl(&out, rows.iter())?;
        self.manifest("novelty", &[out], &rows)?;
        Ok(rows)
    }
}

/// Entropy in nats of the unigram distribution of predicted tokens
/// (content tokens and EOS) across padded id sequences.
pub fn unigram_entropy<'a>(seqs: impl IntoIterator<Item = &'a [u32]>) -> f64 {
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for ids in seqs {
        for &t in ids.iter().skip(1).filter(|&&t| t != textio::PAD) {
            *counts.entry(t).or_default() += 1;
            if t == EOS {
                break;
            }
        }
    }
    let total: u64 = counts.values().sum();
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

fn encode_words(text: &str, vocab: &Vocabulary) -> Result<Vec<u32>> {
    tokenize(text)
        .iter()
        .map(|t| {
            vocab.id(t).ok_or_else(|| {
                Error::Vocab(format!("generated token {t:?} is not in the vocabulary"))
            })
        })
        .collect()
}

/// The `text` field of every line of a JSONL file.
pub fn read_texts(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: serde_json::Value = serde_json::from_str(l)?;
            v.get("text")
                .and_then(|t| t.as_str())
                .map(tokenize)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("{}:{}: no text field", path.display(), i + 1))
                })
        })
        .collect()
}

#[cfg(test)]
mod tests;
