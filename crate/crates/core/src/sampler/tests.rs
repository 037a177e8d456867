use super::*;
use proptest::prelude::*;
use rand::Rng;

fn rec() -> EncodedRecord {
    EncodedRecord::from_active(4, vec![1]).unwrap()
}

/// Logits seeded by the prefix, so every prefix has its own fixed table.
fn random_table(seed: u64, vocab: usize) -> TableDecoder {
    TableDecoder::new(vocab, move |_, prefix| {
        let key = prefix.iter().fold(seed.wrapping_mul(31) + 7, |h, &t| {
            h.wrapping_mul(1_000_003) ^ t as u64
        });
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        (0..vocab).map(|_| rng.gen_range(-3.0f32..3.0)).collect()
    })
}

fn score(dec: &TableDecoder, content: &[u32], with_eos: bool) -> f64 {
    let mut total = 0.0;
    let r = rec();
    let steps = content.len() + with_eos as usize;
    for i in 0..steps {
        let state = dec.start(std::slice::from_ref(&r)).unwrap();
        let state = content[..i]
            .iter()
            .fold(state, |s, &t| dec.advance(&s, &[t]).unwrap());
        let lp = log_probs(&dec.logits(&state).unwrap());
        let tok = if i < content.len() { content[i] } else { EOS };
        total += lp[tok as usize];
    }
    total
}

/// Every finished sentence over content ids `3..vocab`: EOS-terminated ones
/// shorter than `max_len` and capped ones of exactly `max_len`.
fn enumerate(dec: &TableDecoder, vocab: u32, max_len: usize) -> Vec<(Vec<u32>, f64)> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<u32>> = vec![vec![]];
    for len in 0..=max_len {
        for seq in &frontier {
            let eos = len < max_len;
            out.push((seq.clone(), score(dec, seq, eos)));
        }
        frontier = frontier
            .iter()
            .flat_map(|s| (3..vocab).map(move |t| [s.as_slice(), &[t]].concat()))
            .collect();
    }
    out.sort_by(|a, b| by_score(a.1, b.1));
    out
}

fn hand_built() -> TableDecoder {
    // ids: 0 pad, 1 sos, 2 eos, 3..5 content. PAD and SOS get sizeable logits
    // to show they are never emitted even when likely.
    TableDecoder::new(6, |_, prefix| match prefix {
        [] => vec![1.0, 1.0, -2.0, 3.0, 0.5, 0.2],
        [3] => vec![1.0, 1.0, -1.0, -1.0, 3.5, 0.0],
        [3, 4] => vec![1.0, 1.0, 4.0, 0.0, 0.1, 0.2],
        [_] => vec![1.0, 1.0, 1.0, 0.5, 0.5, 0.5],
        _ => vec![1.0, 1.0, 0.5, 0.4, 0.3, 0.2],
    })
}

#[test]
fn beam_top_matches_exhaustive_search_on_hand_built_model() {
    let dec = hand_built();
    let best = &enumerate(&dec, 6, 3)[0];
    assert_eq!(best.0, [3, 4]);
    for k in [1, 2, 5] {
        let top = &beam_decode(&dec, &rec(), k, 3).unwrap()[0];
        assert_eq!(top.content, best.0, "k={k}");
        assert!(top.eos);
        assert!((top.log_prob - best.1).abs() < 1e-12);
    }
}

#[test]
fn beam_k5_returns_five_distinct_sentences() {
    let dec = hand_built();
    let hyps = beam_decode(&dec, &rec(), 5, 3).unwrap();
    assert_eq!(hyps.len(), 5);
    for i in 0..5 {
        for j in i + 1..5 {
            assert_ne!(hyps[i].content, hyps[j].content);
        }
        assert!(hyps[i].log_prob <= 0.0);
        if i > 0 {
            assert!(hyps[i - 1].log_prob >= hyps[i].log_prob);
        }
    }
}

#[test]
fn eos_first_gives_empty_sentence() {
    let dec = TableDecoder::new(5, |_, _| vec![0.0, 0.0, 9.0, 1.0, 1.0]);
    let g = greedy_decode(&dec, &[rec(), rec()], 18).unwrap();
    assert!(g.iter().all(|g| g.content.is_empty() && g.eos));
}

#[test]
fn capped_sentences_stop_at_max_len() {
    let dec = TableDecoder::new(5, |_, _| vec![0.0, 0.0, -9.0, 1.0, 2.0]);
    let g = &greedy_decode(&dec, &[rec()], 4).unwrap()[0];
    assert_eq!(g.content, [4, 4, 4, 4]);
    assert!(!g.eos);
    let b = &beam_decode(&dec, &rec(), 3, 4).unwrap()[0];
    assert_eq!(b.content, g.content);
    assert!((b.log_prob - g.log_prob).abs() < 1e-12);
    assert!(g.sequence(4).is_ok());
}

#[test]
fn argmax_ties_break_low() {
    assert_eq!(argmax_token(&[9.0, 9.0, 1.0, 3.0, 3.0]), 3);
    assert_eq!(argmax_token(&[0.0, 0.0, 3.0, 3.0]), 2);
}

#[test]
fn deterministic_model_agrees_across_schemes() {
    let dec = TableDecoder::new(6, |_, prefix| {
        let want = [5u32, 3, 4, 2][prefix.len().min(3)] as usize;
        (0..6)
            .map(|i| if i == want { 60.0 } else { -60.0 })
            .collect()
    });
    let records = vec![rec(); 3];
    let greedy = greedy_decode(&dec, &records, 18).unwrap();
    let prob = temperature_sample(&dec, &records, 1.0, 5, 0, 18).unwrap();
    for i in 0..3 {
        assert_eq!(greedy[i].content, [5, 3, 4]);
        assert_eq!(prob[i].content, greedy[i].content);
        assert_eq!(
            beam_decode(&dec, &records[i], 4, 18).unwrap()[0].content,
            greedy[i].content
        );
    }
}

#[test]
fn cold_temperature_tracks_argmax() {
    let dec = random_table(17, 12);
    let (mut steps, mut agree) = (0, 0);
    let mut i = 0u64;
    while steps < 1000 {
        let mut rng = record_rng(3, i);
        let mut state = dec.start(&[rec()]).unwrap();
        for _ in 0..6 {
            let logits = dec.logits(&state).unwrap();
            let tok = sample_token(&logits, 0.001, &mut rng);
            steps += 1;
            agree += (tok == argmax_token(&logits)) as usize;
            if tok == EOS {
                break;
            }
            state = dec.advance(&state, &[tok]).unwrap();
        }
        i += 1;
    }
    assert!(agree as f64 >= 0.999 * steps as f64, "{agree}/{steps}");
}

#[test]
fn bad_sampler_settings_rejected() {
    let dec = hand_built();
    assert!(temperature_sample(&dec, &[rec()], 0.0, 1, 0, 18).is_err());
    assert!(temperature_sample(&dec, &[rec()], -1.0, 1, 0, 18).is_err());
    assert!(beam_decode(&dec, &rec(), 0, 18).is_err());
}

#[test]
fn corpus_generation_is_order_aligned_and_batch_independent() {
    let dec = random_table(4, 9);
    let records: Vec<EncodedRecord> = (0..1100)
        .map(|i| EncodedRecord::from_active(2000, vec![i]).unwrap())
        .collect();
    assert!(
        generate_corpus(&dec, &[], &SamplerConfig::new(Scheme::Greedy, 0))
            .unwrap()
            .is_empty()
    );
    let cfg = SamplerConfig::new(Scheme::Probabilistic { t: 1.0 }, 8);
    let all = generate_corpus(&dec, &records, &cfg).unwrap();
    assert_eq!(all, generate_corpus(&dec, &records, &cfg).unwrap());
    for i in [0usize, 511, 512, 1099] {
        let one = temperature_sample(&dec, &records[i..=i], 1.0, 8, i as u64, 18).unwrap();
        assert_eq!(one[0], all[i]);
    }
    for g in &all {
        assert!(g.content.len() <= 18);
        assert!(g.content.iter().all(|&t| t > EOS));
        assert!(g.log_prob <= 0.0);
    }
}

#[test]
fn generation_rows_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.jsonl");
    let rows = vec![
        GenerationRow::new(0, &Scheme::Beam { k: 3 }, "chest pain".into(), -1.5),
        GenerationRow::new(1, &Scheme::Probabilistic { t: 0.5 }, "".into(), -0.25),
        GenerationRow::new(2, &Scheme::Greedy, "fall".into(), -0.1),
    ];
    write_generation_jsonl(&path, &rows).unwrap();
    assert_eq!(read_generation_jsonl(&path).unwrap(), rows);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().next().unwrap().contains("\"k\":3"));
    assert!(!text.lines().nth(2).unwrap().contains("\"k\""));
}

#[test]
fn scheme_labels() {
    let labels: Vec<String> = Scheme::default_sweep().iter().map(Scheme::label).collect();
    assert_eq!(
        labels,
        [
            "Beam (k=3)",
            "Beam (k=5)",
            "Beam (k=10)",
            "Prob (t=0.5)",
            "Prob (t=1.0)",
            "Greedy"
        ]
    );
    let cfg: SamplerConfig = toml::from_str("scheme = \"beam\"\nk = 5\n").unwrap();
    assert_eq!(cfg.scheme, Scheme::Beam { k: 5 });
    assert_eq!(cfg.max_len, 18);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beam_one_is_greedy(seed in any::<u64>(), vocab in 4usize..10, max_len in 1usize..7) {
        let dec = random_table(seed, vocab);
        let g = &greedy_decode(&dec, &[rec()], max_len).unwrap()[0];
        let b = &beam_decode(&dec, &rec(), 1, max_len).unwrap()[0];
        prop_assert_eq!(&g.content, &b.content);
        prop_assert_eq!(g.eos, b.eos);
        prop_assert!((g.log_prob - b.log_prob).abs() < 1e-12);
    }

    #[test]
    fn wide_beam_is_exhaustive(seed in any::<u64>()) {
        let dec = random_table(seed, 6);
        let oracle = enumerate(&dec, 6, 3);
        let beam = beam_decode(&dec, &rec(), 64, 3).unwrap();
        prop_assert_eq!(beam.len(), oracle.len());
        for (b, (content, s)) in beam.iter().zip(&oracle) {
            prop_assert_eq!(&b.content, content);
            prop_assert!((b.log_prob - s).abs() < 1e-9);
        }
    }

    #[test]
    fn beam_scores_never_increase(seed in any::<u64>(), k in 1usize..6) {
        let dec = random_table(seed, 7);
        let hyps = beam_decode(&dec, &rec(), k, 5).unwrap();
        for h in &hyps {
            let mut prefix_score = 0.0;
            for i in 1..=h.content.len() {
                let s = score(&dec, &h.content[..i], false);
                prop_assert!(s <= prefix_score + 1e-12);
                prefix_score = s;
            }
        }
    }
}
