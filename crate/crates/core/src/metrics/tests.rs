use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Brute force: every (start, len) slice, deduplicated through sorting.
fn grams(t: &[u8], n_eff: usize) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = Vec::new();
    for n in 1..=n_eff {
        for i in 0..t.len().saturating_sub(n - 1) {
            out.push(t[i..i + n].to_vec());
        }
    }
    out.sort();
    out.dedup();
    out
}

#[test]
fn overlap_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let r: Vec<u8> = (0..rng.gen_range(1..=8))
            .map(|_| rng.gen_range(0..4))
            .collect();
        let c: Vec<u8> = (0..rng.gen_range(1..=8))
            .map(|_| rng.gen_range(0..4))
            .collect();
        let n_eff = 4.min(r.len()).min(c.len());
        let (gr, gc) = (grams(&r, n_eff), grams(&c, n_eff));
        let shared = gc.iter().filter(|g| gr.contains(g)).count() as f64;
        let (p, s) = (shared / gc.len() as f64, shared / gr.len() as f64);
        let o = ngram_overlap(&r, &c, 4).unwrap();
        assert!((o.ppv - p).abs() < 1e-12 && (o.sens - s).abs() < 1e-12);
        let f = if p + s == 0.0 {
            0.0
        } else {
            2.0 * p * s / (p + s)
        };
        assert!((o.f1 - f).abs() < 1e-12);
        // Swapping sides swaps precision and recall.
        let sw = ngram_overlap(&c, &r, 4).unwrap();
        assert!((sw.ppv - o.sens).abs() < 1e-12 && (sw.f1 - o.f1).abs() < 1e-12);
    }
}

#[test]
fn overlap_hand_cases() {
    let o = ngram_overlap(&toks("heat stroke"), &toks("hypertension"), 4).unwrap();
    assert_eq!((o.ppv, o.sens, o.f1), (0.0, 0.0, 0.0));
    // n_eff = 3: {a, b, c, ab, bc, abc} vs {a, b, d, ab, bd, abd}.
    let o = ngram_overlap(&toks("a b c"), &toks("a b d"), 4).unwrap();
    assert_eq!((o.ppv, o.sens, o.f1), (0.5, 0.5, 0.5));
    let o = ngram_overlap(&toks("x y"), &toks("x y"), 4).unwrap();
    assert_eq!(o.f1, 1.0);
    assert!(ngram_overlap::<String>(&[], &toks("a"), 4).is_err());
}

#[test]
fn cider_identical_and_disjoint() {
    let refs = vec![
        toks("chest pain"),
        toks("fall"),
        toks("abd pain vomiting"),
        toks("fever"),
    ];
    let idf = IdfTable::build(&refs, 4);
    assert!((cider_score(&refs[2], &refs[2], &idf, 4).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(
        cider_score(&toks("chest pain"), &toks("fever"), &idf, 4).unwrap(),
        0.0
    );
    let one = cider_score(&toks("fall"), &toks("fall"), &idf, 4).unwrap();
    assert!(one.is_finite() && (one - 1.0).abs() < 1e-12);
}

#[test]
fn cider_two_level_hand_case() {
    // docs: "a b", "a c"; df(a)=2 → idf 0; idf(b)=idf(c)=idf(ab)=ln 2.
    let refs = vec![toks("a b"), toks("a c")];
    let idf = IdfTable::build(&refs, 4);
    assert_eq!(idf.df(&toks("a")), 2);
    assert_eq!(idf.idf(&toks("a")), 0.0);
    assert!((idf.idf(&toks("zzz")) - 2f64.ln()).abs() < 1e-12);
    // ref "a b" vs cand "a b b": n_eff = 2.
    // unigrams: ref (a:0, b:½ln2), cand (a:0, b:⅔ln2) → cos 1.
    // bigrams: ref {ab: ln2}, cand {ab: ½ln2, bb: ½ln2} → cos 1/√2.
    let got = cider_score(&toks("a b"), &toks("a b b"), &idf, 4).unwrap();
    let want = (1.0 + 1.0 / 2f64.sqrt()) / 2.0;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

fn vectors() -> WordVectors {
    WordVectors::new(
        vec!["a".into(), "b".into(), "c".into(), "neg".into()],
        2,
        vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.0],
    )
    .unwrap()
}

#[test]
fn sentence_embedding_is_the_mean_of_known_tokens() {
    let v = vectors();
    assert_eq!(
        sentence_embedding(&toks("a a b"), &v).unwrap(),
        vec![2.0 / 3.0, 1.0 / 3.0]
    );
    assert_eq!(
        sentence_embedding(&toks("a unknown"), &v).unwrap(),
        vec![1.0, 0.0]
    );
    assert!(sentence_embedding(&toks("unknown"), &v).is_none());
}

#[test]
fn embedding_similarity_cases() {
    let v = vectors();
    let s = toks("a b c");
    assert!((embedding_similarity(&s, &s, &v).unwrap() - 1.0).abs() < 1e-12);
    assert!((embedding_similarity(&toks("a"), &toks("neg"), &v).unwrap() + 1.0).abs() < 1e-12);
    // a + neg averages to zero: the pair is flagged, not scored.
    assert!(embedding_similarity(&toks("a neg"), &toks("b"), &v).is_none());
    assert!(embedding_similarity(&toks("zzz"), &toks("b"), &v).is_none());
}

#[test]
fn corpus_report_means_and_flags() {
    let v = vectors();
    let auth = vec![toks("a b"), toks("a neg"), toks("c")];
    let synth = vec![toks("a b"), toks("b"), toks("a")];
    let idf = IdfTable::build(&auth, 4);
    let r = corpus_report("greedy", &auth, &synth, &v, &idf).unwrap();
    assert_eq!(r.pairs, 3);
    assert_eq!(r.es_flagged, 1);
    assert!((r.f1 - 1.0 / 3.0).abs() < 1e-12);
    let es_c_a = 1.0 / 2f64.sqrt();
    assert!((r.es - (1.0 + es_c_a) / 2.0).abs() < 1e-12);
    assert!(corpus_report("x", &auth, &synth[..2], &v, &idf).is_err());
    let same = corpus_report("id", &auth, &auth, &v, &idf).unwrap();
    assert_eq!((same.ppv, same.sens, same.f1), (1.0, 1.0, 1.0));
    assert!((same.cider - 1.0).abs() < 1e-12);
}

#[test]
fn empty_sides_score_zero_unless_both_empty() {
    let v = vectors();
    let auth = vec![toks("a"), vec![]];
    let synth = vec![vec![], vec![]];
    let idf = IdfTable::build(&auth, 4);
    let r = corpus_report("g", &auth, &synth, &v, &idf).unwrap();
    assert_eq!(r.f1, 0.5);
    assert_eq!(r.cider, 0.5);
    assert_eq!(r.es_flagged, 2);
    assert!(r.es.is_nan());
}

#[test]
fn novelty_counts() {
    let gen = ["fall", "fall", "chest pain", "odd new thing"];
    let train = ["fall", "chest pain", "fever"];
    assert_eq!(
        novelty_report(&gen, &train),
        Novelty {
            unique: 3,
            novel: 1
        }
    );
    let none: [&str; 0] = [];
    assert_eq!(
        novelty_report(&none, &train),
        Novelty {
            unique: 0,
            novel: 0
        }
    );
}

#[test]
fn table_has_a_row_per_scheme() {
    let r = MetricReport {
        scheme: "Greedy".into(),
        ppv: 0.5,
        sens: 0.25,
        f1: 1.0 / 3.0,
        cider: 0.1,
        es: 0.9,
        pairs: 1,
        es_flagged: 0,
    };
    let t = format_table(&[r.clone(), r]);
    assert_eq!(t.lines().count(), 3);
    assert!(t.contains("0.3333"));
}
