use std::path::Path;

use super::*;

fn tiny(work: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml_str(
        r#"
seed = 3
[data]
size = 1200
min_freq = 3
test_size = 120
[model]
hidden = 12
[pretrain]
epochs = 1
batch_size = 128
[train]
batch_size = 64
max_epochs = 2
[sampler]
schemes = [{ scheme = "greedy" }, { scheme = "beam", k = 1 }, { scheme = "beam", k = 3 }, { scheme = "probabilistic", t = 1.0 }]
[embeddings.skipgram]
dim = 8
epochs = 1
[classifier]
embed = 6
hidden = 6
batch_size = 64
max_epochs = 1
[names]
k = 5
"#,
    )
    .unwrap();
    cfg.paths.work_dir = work.to_path_buf();
    cfg
}

fn run_all(p: &Pipeline) {
    p.synth_data().unwrap();
    let pre = p.preprocess().unwrap();
    assert_eq!(pre.kept, pre.train + pre.val);
    assert!(pre.unigram_entropy > 0.0);
    p.pretrain_encoder().unwrap();
    let mut epochs = 0;
    p.train(|_| epochs += 1).unwrap();
    assert!(epochs >= 1);
    p.generate(&p.config().sampler.schemes).unwrap();
    let reports = p.evaluate().unwrap();
    assert_eq!(reports.len(), 4);
    p.classify_train(|_| {}).unwrap();
    let rows = p.classify_eval(&p.config().sampler.schemes).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0].text, "Original");
    p.epi_report(&Scheme::Greedy, None).unwrap();
    p.novelty(&p.config().sampler.schemes).unwrap();
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn full_run_is_reproducible_and_beam_one_matches_greedy() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = Pipeline::new(tiny(a.path())).unwrap();
    let pb = Pipeline::new(tiny(b.path())).unwrap();
    assert_eq!(pa.fingerprint(), pb.fingerprint());
    run_all(&pa);
    run_all(&pb);
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs between identical runs");
    }
    for name in [
        "corpus.csv",
        "vocab.txt",
        "model.ckpt",
        "gen/greedy.jsonl",
        "report.txt",
        "train.manifest.json",
    ] {
        assert!(fa.contains_key(name), "missing {name}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fa["train.manifest.json"]).unwrap();
    assert_eq!(manifest["fingerprint"], pa.fingerprint());

    assert_eq!(fa["gen/greedy.jsonl"], fa["gen/beam-k1.jsonl"]);
    let greedy = pa.generated(&Scheme::Greedy).unwrap();
    let beam1 = pa.generated(&Scheme::Beam { k: 1 }).unwrap();
    assert_eq!(greedy.len(), beam1.len());
    for (g, b) in greedy.iter().zip(&beam1) {
        assert_eq!(g.text, b.text);
        assert!(
            (g.log_prob - b.log_prob).abs() < 1e-6,
            "{} vs {}",
            g.log_prob,
            b.log_prob
        );
    }
}

#[test]
fn names_round_trip_through_candidate_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.data.size = Some(3000);
    let p = Pipeline::new(cfg.clone()).unwrap();
    let synth = p.synth_data().unwrap();
    p.train_embeddings().unwrap();
    assert!(matches!(
        p.find_names(Curation::Files),
        Err(Error::Config(_))
    ));

    let seed = synth.planted.keys().next().unwrap().clone();
    cfg.names.seeds = vec![seed.clone()];
    let p = Pipeline::new(cfg).unwrap();
    let first = p.find_names(Curation::Files).unwrap();
    assert_eq!(
        (first.names.clone(), first.iteration, first.pending),
        (vec![seed.clone()], 0, 1)
    );
    let blocks = read_candidates(&p.path(CANDIDATES)).unwrap();
    assert_eq!(blocks[0].query, seed);
    assert_eq!(blocks[0].neighbors.len(), 5);

    // Confirm the first proposed neighbour by marking it in the file.
    let text = fs::read_to_string(p.path(CANDIDATES)).unwrap();
    let pick = blocks[0].neighbors[0].0.clone();
    let marked: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with(&format!("{pick}\t")) {
                format!("{l}y")
            } else {
                l.to_string()
            }
        })
        .collect();
    fs::write(p.path(CANDIDATES), marked.join("\n") + "\n").unwrap();
    let second = p.find_names(Curation::Files).unwrap();
    assert_eq!(second.iteration, 1);
    assert!(second.names.contains(&pick));
    assert_eq!(second.pending, 1);
}

#[test]
fn stages_report_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(dir.path())).unwrap();
    match p.train(|_| {}) {
        Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "preprocess"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        p.preprocess(),
        Err(Error::MissingArtifact {
            producer: "synth-data",
            ..
        })
    ));
    p.synth_data().unwrap();
    p.preprocess().unwrap();
    assert!(matches!(
        p.train(|_| {}),
        Err(Error::MissingArtifact {
            producer: "pretrain-encoder",
            ..
        })
    ));
    assert!(matches!(
        p.generate(&[Scheme::Greedy]),
        Err(Error::MissingArtifact {
            producer: "train",
            ..
        })
    ));
    assert!(p.train(|_| {}).unwrap_err().is_validation());
}

#[test]
fn evaluating_a_file_against_itself_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(dir.path())).unwrap();
    p.synth_data().unwrap();
    p.preprocess().unwrap();
    let test = p.path(TEST);
    let reports = p
        .evaluate_files(&test, std::slice::from_ref(&test))
        .unwrap();
    let r = &reports[0];
    assert_eq!(r.scheme, "test");
    for v in [r.ppv, r.sens, r.f1, r.cider] {
        assert!((v - 1.0).abs() < 1e-12, "{r:?}");
    }
    assert!((r.es - 1.0).abs() < 1e-9, "{r:?}");
    assert!(p.path(VECTORS).exists());
}

#[test]
fn bundled_config_parses_to_the_defaults() {
    let cfg = RunConfig::from_toml_str(DEFAULT_RUN_TOML).unwrap();
    let def = RunConfig::default();
    assert_eq!(cfg.epi.probes.len(), 2);
    assert_eq!(
        RunConfig {
            epi: def.epi.clone(),
            ..cfg
        },
        def
    );
    assert!(RunConfig::from_toml_str("[train]\nlearning_rate = 0.1\n").is_err());
    assert!(RunConfig::from_toml_str("[data]\ntrain_frac = 1.5\n").is_err());
    assert!(
        RunConfig::from_toml_str("[sampler]\nschemes = [{ scheme = \"beam\", k = 0 }]\n").is_err()
    );
    let mut other = RunConfig::default();
    other.paths.work_dir = "elsewhere".into();
    assert_eq!(other.fingerprint(), def.fingerprint());
    other.seed = 1;
    assert_ne!(other.fingerprint(), def.fingerprint());
    assert_ne!(def.stage_seed(Stage::Train), def.stage_seed(Stage::Sample));
}

#[test]
fn unigram_entropy_of_hand_sequences() {
    // Targets: a, b, EOS and a, EOS -> {a: 2, b: 1, EOS: 2}.
    let seqs = [vec![1u32, 5, 6, 2, 0], vec![1, 5, 2, 0, 0]];
    let h = unigram_entropy(seqs.iter().map(|s| s.as_slice()));
    let want = -(2.0 * 0.4 * 0.4f64.ln() + 0.2 * 0.2f64.ln());
    assert!((h - want).abs() < 1e-12);
}
