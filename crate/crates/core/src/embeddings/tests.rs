use super::*;

fn table(rows: &[(&str, [f32; 2])]) -> WordVectors {
    WordVectors::new(
        rows.iter().map(|(t, _)| t.to_string()).collect(),
        2,
        rows.iter().flat_map(|(_, v)| v.iter().copied()).collect(),
    )
    .unwrap()
}

#[test]
fn neighbours_rank_by_cosine_and_skip_the_query() {
    let v = table(&[
        ("q", [1.0, 0.0]),
        ("near", [0.9, 0.1]),
        ("far", [-1.0, 0.0]),
        ("mid", [0.5, 0.5]),
    ]);
    let nn = v.nearest_neighbors("q", 10).unwrap();
    let names: Vec<&str> = nn.iter().map(|(t, _)| t.as_str()).collect();
    assert_eq!(names, ["near", "mid", "far"]);
    assert!((nn[2].1 + 1.0).abs() < 1e-9);
    assert_eq!(v.nearest_neighbors("q", 1).unwrap().len(), 1);
    assert!(v.nearest_neighbors("absent", 3).is_err());
}

#[test]
fn neighbour_ties_go_to_the_earlier_row() {
    let v = table(&[
        ("q", [1.0, 0.0]),
        ("b", [2.0, 0.0]),
        ("a", [3.0, 0.0]),
        ("c", [0.0, 1.0]),
    ]);
    let nn = v.nearest_neighbors("q", 2).unwrap();
    assert_eq!(nn[0].0, "b");
    assert_eq!(nn[1].0, "a");
}

#[test]
fn word2vec_text_round_trip() {
    let v = table(&[("x", [0.1, -2.5e-3]), ("y", [1.0 / 3.0, 7.0])]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.txt");
    v.write_text(&p).unwrap();
    assert_eq!(WordVectors::read_text(&p).unwrap(), v);
    std::fs::write(&p, "2 2\nx 1 2\n").unwrap();
    assert!(WordVectors::read_text(&p).is_err());
}

#[test]
fn name_hits_count_sentences() {
    let names = vec!["smith".to_string(), "okafor".to_string()];
    let hits = count_name_hits(
        &["seen by dr smith", "fall", "smith and okafor", "smithers"],
        &names,
    );
    assert_eq!(hits.sentences, 2);
    assert_eq!(hits.per_name["smith"], 2);
    assert_eq!(hits.per_name["okafor"], 1);
    let one = count_name_hits(&["seen by dr smith"], &names[..1]);
    assert_eq!((one.sentences, one.per_name["smith"]), (1, 1));
}

fn corpus() -> Vec<String> {
    // Two clusters with disjoint contexts: names follow "dr", symptoms
    // follow "pain in".
    let mut out = Vec::new();
    for i in 0..400 {
        let name = ["smith", "jones", "okafor", "lindqvist"][i % 4];
        let part = ["chest", "knee", "back", "head"][(i / 4) % 4];
        out.push(format!("seen by dr {name} today"));
        out.push(format!("pain in {part} area"));
    }
    out
}

#[test]
fn skipgram_is_deterministic_and_its_loss_falls() {
    let cfg = SkipgramConfig {
        dim: 16,
        epochs: 4,
        seed: 3,
        ..SkipgramConfig::default()
    };
    let a = train_skipgram(&corpus(), &cfg).unwrap();
    let b = train_skipgram(&corpus(), &cfg).unwrap();
    assert_eq!(a.vectors, b.vectors);
    assert_eq!(a.epoch_losses.len(), 4);
    assert!(
        a.epoch_losses[3] < a.epoch_losses[0],
        "{:?}",
        a.epoch_losses
    );
    assert_eq!(a.vectors.dim(), 16);
    assert_eq!(a.vectors.len(), 15);
}

#[test]
fn skipgram_groups_words_sharing_contexts() {
    let cfg = SkipgramConfig {
        dim: 16,
        epochs: 10,
        seed: 1,
        ..SkipgramConfig::default()
    };
    let m = train_skipgram(&corpus(), &cfg).unwrap();
    let nn = m.vectors.nearest_neighbors("smith", 3).unwrap();
    for (t, _) in &nn {
        assert!(
            ["jones", "okafor", "lindqvist"].contains(&t.as_str()),
            "{nn:?}"
        );
    }
}

#[test]
fn skipgram_rejects_degenerate_input() {
    assert!(train_skipgram(&["a a a"], &SkipgramConfig::default()).is_err());
    let bad = SkipgramConfig {
        lr: 0.0,
        ..SkipgramConfig::default()
    };
    assert!(train_skipgram(&corpus(), &bad).is_err());
}

fn name_space() -> WordVectors {
    table(&[
        ("smith", [1.0, 0.05]),
        ("jones", [1.0, 0.1]),
        ("okafor", [1.0, 0.15]),
        ("pain", [0.0, 1.0]),
        ("fall", [0.1, 1.0]),
    ])
}

#[test]
fn discovery_with_a_silent_curator_returns_the_seeds() {
    let v = name_space();
    let mut c = ScriptedCurator(|_: &str| false);
    let s = name_discovery_session(NameList::from_seeds(["smith"]), &v, 2, &mut c).unwrap();
    assert_eq!(s.list.tokens(), ["smith"]);
    assert_eq!(s.iteration, 1);
}

#[test]
fn discovery_follows_confirmed_names() {
    let v = name_space();
    let names = ["smith", "jones", "okafor"];
    let mut c = ScriptedCurator(|t: &str| names.contains(&t));
    let s = name_discovery_session(NameList::from_seeds(["smith"]), &v, 1, &mut c).unwrap();
    assert_eq!(s.list.tokens(), ["smith", "jones", "okafor"]);
    assert_eq!(
        s.list.entries[2].provenance,
        Provenance::Discovered {
            iteration: 2,
            via: "jones".into()
        }
    );
    assert!(s.is_done());
}

#[test]
fn discovery_rejects_unknown_seeds() {
    let mut c = ScriptedCurator(|_: &str| true);
    assert!(
        name_discovery_session(NameList::from_seeds(["nobody"]), &name_space(), 2, &mut c).is_err()
    );
}

#[test]
fn file_round_trip_matches_the_scripted_session() {
    let v = name_space();
    let names = ["smith", "jones", "okafor"];
    let dir = tempfile::tempdir().unwrap();
    let (lp, cp) = (dir.path().join("names.txt"), dir.path().join("cand.tsv"));
    write_name_list(&lp, &NameList::from_seeds(["smith"])).unwrap();
    loop {
        let mut session = DiscoverySession::new(read_name_list(&lp).unwrap(), &v).unwrap();
        if session.is_done() {
            break;
        }
        write_candidates(&cp, &session.candidates(&v, 1).unwrap()).unwrap();
        // The curator edits the mark column by hand.
        let text = std::fs::read_to_string(&cp).unwrap();
        let marked: String = text
            .lines()
            .map(|l| match l.split('\t').next() {
                Some(t) if !l.starts_with('#') && names.contains(&t) => format!("{l}y\n"),
                _ => format!("{l}\n"),
            })
            .collect();
        std::fs::write(&cp, marked).unwrap();
        session.apply(&read_candidates(&cp).unwrap(), &v).unwrap();
        write_name_list(&lp, &session.list).unwrap();
    }
    let mut c = ScriptedCurator(|t: &str| names.contains(&t));
    let direct = name_discovery_session(NameList::from_seeds(["smith"]), &v, 1, &mut c).unwrap();
    assert_eq!(read_name_list(&lp).unwrap(), direct.list);
}

#[test]
fn interactive_curator_parses_numbers_and_tokens() {
    let input = std::io::Cursor::new(b"1 okafor 9 zzz\n".to_vec());
    let mut c = InteractiveCurator {
        input,
        output: Vec::new(),
    };
    let nb = vec![
        ("jones".to_string(), 0.9),
        ("pain".to_string(), 0.1),
        ("okafor".to_string(), 0.8),
    ];
    assert_eq!(c.review("smith", &nb).unwrap(), [true, false, true]);
}
