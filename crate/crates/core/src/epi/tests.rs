use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::schema::FieldValue;

fn schema() -> RecordSchema {
    RecordSchema::default_ed()
}

fn pair(s: &RecordSchema, age: Option<u32>, dx: &[u32], text: &str) -> RecordPair {
    let mut record = RawRecord::empty(s);
    record.values[s.require("age").unwrap()] = FieldValue::Single(age);
    record.values[s.diagnosis_index().unwrap()] = FieldValue::Multi(dx.to_vec());
    RecordPair {
        record,
        text: text.to_string(),
    }
}

const OLD: [u32; 7] = [16, 17, 18, 19, 20, 21, 22];

fn young() -> Vec<u32> {
    (0..16).collect()
}

#[test]
fn paper_count_arithmetic() {
    let (rr, or) = ratios(207, 2234, 48, 4009);
    assert!((rr.unwrap() - 7.74).abs() < 0.005, "{rr:?}");
    assert!((or.unwrap() - 8.43).abs() < 0.005, "{or:?}");
    let (rr, or) = ratios(229, 2234, 27, 4009);
    assert!((rr.unwrap() - 15.22).abs() < 0.005, "{rr:?}");
    assert!((or.unwrap() - 16.84).abs() < 0.005, "{or:?}");
    assert_eq!(ratios(10, 100, 20, 200), (Some(1.0), Some(1.0)));
    assert_eq!(ratios(0, 10, 0, 10), (None, None));
}

#[test]
fn swapping_groups_inverts_both_ratios() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let n_a = rng.gen_range(2..200);
        let n_b = rng.gen_range(2..200);
        let a = rng.gen_range(1..n_a);
        let b = rng.gen_range(1..n_b);
        let (rr, or) = ratios(a, n_a, b, n_b);
        let (rr2, or2) = ratios(b, n_b, a, n_a);
        assert!((rr.unwrap() * rr2.unwrap() - 1.0).abs() < 1e-12);
        assert!((or.unwrap() * or2.unwrap() - 1.0).abs() < 1e-12);
        // Odds exaggerate the risk ratio away from 1.
        if a as f64 / n_a as f64 >= b as f64 / n_b as f64 {
            assert!(or.unwrap() >= rr.unwrap() - 1e-12);
        }
        let (rr3, or3) = ratios(3 * a, 3 * n_a, 3 * b, 3 * n_b);
        assert!(
            (rr3.unwrap() - rr.unwrap()).abs() < 1e-12 && (or3.unwrap() - or.unwrap()).abs() < 1e-9
        );
    }
}

#[test]
fn cross_tab_matches_a_scan() {
    let s = schema();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let words = ["fall", "pain", "chest", "fallen"];
    let pairs: Vec<RecordPair> = (0..400)
        .map(|_| {
            let age = (rng.gen::<f64>() > 0.1).then(|| rng.gen_range(0..23));
            let text: Vec<&str> = (0..rng.gen_range(1..4))
                .map(|_| words[rng.gen_range(0..4)])
                .collect();
            pair(&s, age, &[], &text.join(" "))
        })
        .collect();
    let tab = word_by_category(&pairs, "FALL", "age", &s).unwrap();
    for bin in 0..23u32 {
        let of_bin: Vec<&RecordPair> = pairs
            .iter()
            .filter(|p| p.record.single(0) == Some(bin))
            .collect();
        let hits = of_bin
            .iter()
            .filter(|p| p.text.split(' ').any(|w| w == "fall"))
            .count();
        assert_eq!(tab.row(bin).unwrap().total, of_bin.len());
        assert_eq!(tab.row(bin).unwrap().containing, hits);
    }
    let missing = pairs
        .iter()
        .filter(|p| p.record.single(0).is_none())
        .count();
    assert_eq!(tab.missing().total, missing);
    assert_eq!(tab.rows.iter().map(|r| r.total).sum::<usize>(), pairs.len());
}

#[test]
fn planted_word_only_counts_in_its_bin() {
    let s = schema();
    let pairs: Vec<RecordPair> = (0..23)
        .map(|bin| {
            pair(
                &s,
                Some(bin),
                &[],
                if bin == 18 { "fall at home" } else { "cough" },
            )
        })
        .collect();
    let tab = word_by_category(&pairs, "fall", "age", &s).unwrap();
    for r in &tab.rows {
        assert_eq!(r.containing, (r.category == Some(18)) as usize);
    }
    let absent = word_by_category(&pairs, "preg", "age", &s).unwrap();
    assert!(absent.rows.iter().all(|r| r.containing == 0));
    assert!(word_by_category(&pairs, "fall", "shoe_size", &s).is_err());
}

#[test]
fn group_ratio_pools_categories() {
    let s = schema();
    let mut pairs = Vec::new();
    for i in 0..100 {
        pairs.push(pair(
            &s,
            Some(16 + (i % 7)),
            &[],
            if i < 20 { "fall" } else { "cough" },
        ));
        pairs.push(pair(
            &s,
            Some(i % 16),
            &[],
            if i < 5 { "fall" } else { "cough" },
        ));
    }
    let r = group_ratio(
        &word_by_category(&pairs, "fall", "age", &s).unwrap(),
        &OLD,
        &young(),
    )
    .unwrap();
    assert_eq!((r.a, r.n_a, r.b, r.n_b), (20, 100, 5, 100));
    assert!((r.risk_ratio.unwrap() - 4.0).abs() < 1e-12);
    assert!((r.odds_ratio.unwrap() - (20.0 * 95.0) / (5.0 * 80.0)).abs() < 1e-12);
    let tab = word_by_category(&pairs, "fall", "age", &s).unwrap();
    assert!(group_ratio(&tab, &[1, 2], &[2, 3]).is_err());
    assert!(group_ratio(&tab, &[], &[2]).is_err());
}

#[test]
fn diagnosis_ratio_on_absent_code_is_undefined() {
    let s = schema();
    let pairs = vec![
        pair(&s, Some(17), &[5], "x"),
        pair(&s, Some(3), &[6, 5], "y"),
    ];
    let r = diagnosis_ratio(&pairs, 200, "age", &OLD, &young(), &s).unwrap();
    assert_eq!((r.a, r.b), (0, 0));
    assert_eq!((r.risk_ratio, r.odds_ratio), (None, None));
    let r = diagnosis_ratio(&pairs, 5, "age", &OLD, &young(), &s).unwrap();
    assert_eq!((r.a, r.n_a, r.b, r.n_b), (1, 1, 1, 1));
    assert_eq!(r.risk_ratio, Some(1.0));
    assert!(diagnosis_ratio(&pairs, 9999, "age", &OLD, &young(), &s).is_err());
}

#[test]
fn verdicts() {
    assert_eq!(compare(Some(7.7), Some(15.2), 0.1), Verdict::Amplified);
    assert_eq!(compare(Some(7.7), Some(2.0), 0.1), Verdict::Attenuated);
    assert_eq!(compare(Some(7.7), Some(7.9), 0.1), Verdict::Preserved);
    assert_eq!(compare(Some(0.2), Some(0.05), 0.1), Verdict::Amplified);
    assert_eq!(compare(Some(2.0), Some(0.5), 0.1), Verdict::Reversed);
    assert_eq!(compare(None, Some(2.0), 0.1), Verdict::Undefined);
}

fn probes() -> ProbeConfig {
    ProbeConfig::from_toml_str(
        r#"
threshold = 0.1
[[probe]]
kind = "word"
target = "fall"
variable = "age"
groupA = [16, 17, 18, 19, 20, 21, 22]
groupB = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]
[[probe]]
kind = "code"
target = "5"
variable = "age"
groupA = [16, 17, 18, 19, 20, 21, 22]
groupB = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]
"#,
    )
    .unwrap()
}

#[test]
fn report_on_identical_corpora_is_preserved() {
    let s = schema();
    let pairs: Vec<RecordPair> = (0..60)
        .map(|i| {
            pair(
                &s,
                Some(i % 23),
                &[5 + (i % 2)],
                if i % 3 == 0 { "fall" } else { "cough" },
            )
        })
        .collect();
    let rows = epi_report(&pairs, &pairs, &probes(), &s).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r.authentic, r.synthetic);
        assert_eq!(r.verdict, Verdict::Preserved);
    }
    assert!(epi_report(&pairs, &pairs, &ProbeConfig::default(), &s)
        .unwrap()
        .is_empty());
    assert_eq!(format_epi_table(&rows).lines().count(), 3);
    assert!(epi_report(&pairs, &pairs[1..], &probes(), &s).is_err());
}

#[test]
fn report_flags_a_stronger_synthetic_association() {
    let s = schema();
    let mut auth = Vec::new();
    let mut syn = Vec::new();
    for i in 0..200 {
        let old = i % 2 == 0;
        let p = pair(&s, Some(if old { 18 } else { 4 }), &[], "x");
        let auth_fall = if old { i % 10 == 0 } else { i % 50 == 1 };
        let syn_fall = if old { i % 4 == 0 } else { i % 100 == 1 };
        auth.push(RecordPair {
            text: if auth_fall {
                "fall".into()
            } else {
                "cough".into()
            },
            ..p.clone()
        });
        syn.push(RecordPair {
            text: if syn_fall {
                "fall".into()
            } else {
                "cough".into()
            },
            ..p
        });
    }
    let cfg = ProbeConfig {
        probes: probes().probes[..1].to_vec(),
        ..probes()
    };
    let rows = epi_report(&auth, &syn, &cfg, &s).unwrap();
    assert_eq!(rows[0].verdict, Verdict::Amplified, "{rows:?}");
}

#[test]
fn probe_config_rejects_unknown_keys() {
    assert!(ProbeConfig::from_toml_str("[[probe]]\nkind = \"word\"\ntarget = \"x\"\nvariable = \"age\"\ngroupA = [1]\ngroupB = [2]\ncolour = 1\n").is_err());
    assert!(ProbeConfig::from_toml_str("threshold = -1\n").is_err());
}
