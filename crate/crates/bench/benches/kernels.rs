use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use ccgen_core::metrics::{cider_score, ngram_overlap, IdfTable, DEFAULT_N_MAX};
use ccgen_core::sampler::{beam_decode, greedy_decode, Decoder};
use ccgen_core::schema::{encode_record, synth, EncodedRecord, RecordSchema};
use ccgen_core::seq2seq::{Seq2Seq, Seq2SeqDims};

fn records(schema: &RecordSchema, n: usize) -> Vec<EncodedRecord> {
    let cfg = synth::GeneratorConfig::default_toy().with_size(n);
    synth::synth_corpus(&cfg, schema, 1)
        .unwrap()
        .iter()
        .map(|p| encode_record(&p.record, schema).unwrap())
        .collect()
}

fn model(schema: &RecordSchema) -> Seq2Seq {
    Seq2Seq::new(
        Seq2SeqDims {
            record_dim: schema.total_dim(),
            vocab_size: 600,
            hidden: 128,
        },
        7,
    )
}

fn decoder(c: &mut Criterion) {
    let schema = RecordSchema::default_ed();
    let m = model(&schema);
    let recs = records(&schema, 64);
    let state = m.start(&recs).unwrap();
    let tokens = vec![5u32; recs.len()];
    c.bench_function("lstm step, batch 64, h 128, V 600", |b| {
        b.iter(|| {
            let next = m.advance(black_box(&state), &tokens).unwrap();
            black_box(m.logits(&next).unwrap())
        })
    });
    c.bench_function("greedy decode, 64 records", |b| {
        b.iter(|| greedy_decode(&m, black_box(&recs), 18).unwrap())
    });
    c.bench_function("beam decode k=5, 1 record", |b| {
        b.iter_batched(
            || recs[0].clone(),
            |r| beam_decode(&m, &r, 5, 18).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn metrics(c: &mut Criterion) {
    let schema = RecordSchema::default_ed();
    let cfg = synth::GeneratorConfig::default_toy().with_size(2000);
    let sents: Vec<Vec<String>> = synth::synth_corpus(&cfg, &schema, 2)
        .unwrap()
        .iter()
        .map(|p| ccgen_core::text::tokenize(&p.text))
        .collect();
    let (refs, cands) = sents.split_at(1000);
    c.bench_function("idf table, 1000 sentences", |b| {
        b.iter(|| IdfTable::build(black_box(refs), DEFAULT_N_MAX))
    });
    let idf = IdfTable::build(refs, DEFAULT_N_MAX);
    c.bench_function("overlap + cider, 1000 pairs", |b| {
        b.iter(|| {
            let mut s = 0.0;
            for (r, h) in refs.iter().zip(cands) {
                if r.is_empty() || h.is_empty() {
                    continue;
                }
                s += ngram_overlap(r, h, DEFAULT_N_MAX).unwrap().f1;
                s += cider_score(r, h, &idf, DEFAULT_N_MAX).unwrap();
            }
            black_box(s)
        })
    });
}

criterion_group!(benches, decoder, metrics);
criterion_main!(benches);
