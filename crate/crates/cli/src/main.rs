use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use ccgen_core::epi::ProbeConfig;
use ccgen_core::pipeline::{Curation, Pipeline, RunConfig, DEFAULT_RUN_TOML};
use ccgen_core::sampler::Scheme;
use ccgen_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Synthetic chief-complaint generation from structured records.
///
/// Every command reads and writes artifacts under the configured work
/// directory. Summaries are printed to standard output as JSON (or as a
/// table for report commands); progress goes to standard error.
///
/// Exit status: 0 on success, 1 on invalid input or configuration
/// (including a missing upstream artifact), 2 on runtime failure.
#[derive(Parser)]
#[command(name = "ccgen", version)]
struct Cli {
    /// Run configuration (TOML). Defaults to the bundled configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the work directory.
    #[arg(long, global = true, value_name = "DIR")]
    work_dir: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the annotated default configuration.
    DefaultConfig,
    /// Write a synthetic record/complaint corpus to <work_dir>/corpus.csv.
    SynthData {
        /// Number of records (overrides data.size).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Build the vocabulary, filter sentences and split train/val/test.
    Preprocess,
    /// Pretrain the record encoder as an autoencoder.
    PretrainEncoder,
    /// Train the encoder-decoder with validation early stopping.
    Train {
        /// Start the encoder from random weights instead of pretraining.
        #[arg(long)]
        no_pretrained: bool,
    },
    /// Decode the test records; all configured schemes unless --scheme is given.
    Generate(SchemeArgs),
    /// Score generated text against authentic text.
    Evaluate {
        /// Reference JSONL (any file with a `text` field per line).
        #[arg(long, value_name = "FILE", requires = "candidate")]
        reference: Option<PathBuf>,
        /// Candidate JSONL aligned with the reference; repeatable.
        #[arg(long, value_name = "FILE", requires = "reference")]
        candidate: Vec<PathBuf>,
    },
    /// Train the diagnosis classifier on authentic text.
    ClassifyTrain,
    /// Classifier performance on authentic vs generated text.
    ClassifyEval(SchemeArgs),
    /// Risk and odds ratios of probe associations, authentic vs generated.
    EpiReport {
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Probe TOML (threshold plus [[probe]] tables); defaults to [epi] in the config.
        #[arg(long, value_name = "FILE")]
        probes: Option<PathBuf>,
    },
    /// Train skipgram word vectors on the full corpus.
    TrainEmbeddings,
    /// Grow a list of names from seed names by embedding neighbourhoods.
    ///
    /// Without flags, each run applies the marks in candidates.tsv and
    /// writes the next batch of candidates for review.
    FindNames {
        /// Review candidates at a prompt instead of through files.
        #[arg(long, conflicts_with = "script")]
        interactive: bool,
        /// Accept exactly the tokens listed in FILE (one per line) and run to completion.
        #[arg(long, value_name = "FILE")]
        script: Option<PathBuf>,
    },
    /// Count test sentences naming anyone on the name list.
    ScanNames {
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Name list; defaults to <work_dir>/names.txt.
        #[arg(long, value_name = "FILE")]
        names: Option<PathBuf>,
    },
    /// Distinct and never-seen-in-training generated sentences.
    Novelty(SchemeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeKind {
    Greedy,
    Probabilistic,
    Beam,
}

#[derive(Args)]
struct SchemeArgs {
    /// Decoding scheme.
    #[arg(long, value_enum)]
    scheme: Option<SchemeKind>,
    /// Beam width (with --scheme beam).
    #[arg(long)]
    k: Option<usize>,
    /// Sampling temperature (with --scheme probabilistic).
    #[arg(long)]
    t: Option<f64>,
}

impl SchemeArgs {
    fn resolve(&self) -> Result<Option<Scheme>, Error> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        let scheme = match (self.scheme, self.k, self.t) {
            (None, None, None) => return Ok(None),
            (None, _, _) => return bad("--k and --t need --scheme"),
            (Some(SchemeKind::Greedy), None, None) => Scheme::Greedy,
            (Some(SchemeKind::Beam), Some(k), None) => Scheme::Beam { k },
            (Some(SchemeKind::Probabilistic), None, Some(t)) => Scheme::Probabilistic { t },
            (Some(SchemeKind::Beam), None, _) => return bad("--scheme beam needs --k"),
            (Some(SchemeKind::Probabilistic), _, None) => {
                return bad("--scheme probabilistic needs --t")
            }
            _ => return bad("--k goes with beam, --t with probabilistic"),
        };
        scheme.validate()?;
        Ok(Some(scheme))
    }

    fn or_configured(&self, p: &Pipeline) -> Result<Vec<Scheme>, Error> {
        Ok(match self.resolve()? {
            Some(s) => vec![s],
            None => p.config().sampler.schemes.clone(),
        })
    }

    fn or_greedy(&self) -> Result<Scheme, Error> {
        Ok(self.resolve()?.unwrap_or(Scheme::Greedy))
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::from_toml_str(DEFAULT_RUN_TOML)?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.work_dir {
        cfg.paths.work_dir = dir.clone();
    }
    Ok(cfg)
}

fn existing(path: &Path) -> Result<&Path, Error> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::InvalidArgument(format!(
            "{} does not exist",
            path.display()
        )))
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::DefaultConfig = cli.command {
        print!("{DEFAULT_RUN_TOML}");
        return Ok(());
    }
    let mut cfg = load_config(&cli)?;
    if let Command::SynthData { size: Some(n) } = cli.command {
        cfg.data.size = Some(n);
    }
    if let Command::Train {
        no_pretrained: true,
    } = cli.command
    {
        cfg.model.pretrained_encoder = false;
    }
    let p = Pipeline::new(cfg)?;
    log::info!(
        "work dir {}, fingerprint {}",
        p.config().paths.work_dir.display(),
        &p.fingerprint()[..12]
    );
    let epoch_log = |e: &ccgen_core::seq2seq::EpochStats| {
        log::info!(
            "epoch {}: train {:.4}, val {:.4}",
            e.epoch,
            e.train_loss,
            e.val_loss
        )
    };
    match &cli.command {
        Command::DefaultConfig => unreachable!(),
        Command::SynthData { .. } => print_json(&p.synth_data()?)?,
        Command::Preprocess => print_json(&p.preprocess()?)?,
        Command::PretrainEncoder => print_json(&p.pretrain_encoder()?)?,
        Command::Train { .. } => print_json(&p.train(epoch_log)?)?,
        Command::Generate(s) => print_json(&p.generate(&s.or_configured(&p)?)?)?,
        Command::Evaluate {
            reference,
            candidate,
        } => {
            let reports = match reference {
                Some(r) => {
                    let cands = candidate
                        .iter()
                        .map(|c| existing(c).map(Path::to_path_buf))
                        .collect::<Result<Vec<_>, _>>()?;
                    p.evaluate_files(existing(r)?, &cands)?
                }
                None => p.evaluate()?,
            };
            print!("{}", ccgen_core::metrics::format_table(&reports));
        }
        Command::ClassifyTrain => print_json(&p.classify_train(epoch_log)?)?,
        Command::ClassifyEval(s) => {
            let rows = p.classify_eval(&s.or_configured(&p)?)?;
            print!("{}", ccgen_core::classifier::format_transfer_table(&rows));
        }
        Command::EpiReport { scheme, probes } => {
            let probes = match probes {
                Some(f) => Some(ProbeConfig::from_file(existing(f)?)?),
                None => None,
            };
            let rows = p.epi_report(&scheme.or_greedy()?, probes.as_ref())?;
            if rows.is_empty() {
                log::warn!("no probes configured");
            }
            print!("{}", ccgen_core::epi::format_epi_table(&rows));
        }
        Command::TrainEmbeddings => print_json(&p.train_embeddings()?)?,
        Command::FindNames {
            interactive,
            script,
        } => {
            let curation = if *interactive {
                Curation::Interactive
            } else if let Some(f) = script {
                let text = std::fs::read_to_string(existing(f)?)
                    .with_context(|| format!("reading {}", f.display()))?;
                Curation::Scripted(text.split_whitespace().map(str::to_lowercase).collect())
            } else {
                Curation::Files
            };
            let summary = p.find_names(curation)?;
            if summary.pending > 0 {
                eprintln!(
                    "{} candidate blocks written to {}; mark names with y in the third column and rerun find-names",
                    summary.pending,
                    p.path(ccgen_core::pipeline::CANDIDATES).display()
                );
            }
            print_json(&summary)?;
        }
        Command::ScanNames { scheme, names } => {
            let names = match names {
                Some(f) => Some(existing(f)?),
                None => None,
            };
            print_json(&p.scan_names(&scheme.or_greedy()?, names)?)?
        }
        Command::Novelty(s) => print_json(&p.novelty(&s.or_configured(&p)?)?)?,
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .any(|e| e.downcast_ref::<Error>().is_some_and(Error::is_validation));
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
