use criterion::{criterion_group, criterion_main, Criterion};
use dlens_core::evaluation::{generate_synthetic_corpus, separable_dataset, SyntheticSpec};
use dlens_core::explain::{discretize_features, explain_instance, ExplainerConfig, Instance};
use dlens_core::forest::{train_forest, ForestConfig};
use dlens_core::tokenizer::{build_token_features, corpus_vocabulary, token_dataset};
use std::hint::black_box;

fn forest(c: &mut Criterion) {
    let data = separable_dataset(1000, 1);
    c.bench_function("train_forest/1000x2", |b| {
        b.iter(|| train_forest(black_box(&data), &ForestConfig::with_seed(1)).unwrap())
    });
}

fn explain(c: &mut Criterion) {
    let data = separable_dataset(1000, 2);
    let model = train_forest(&data, &ForestConfig::with_seed(2)).unwrap();
    let scheme = discretize_features(&data).unwrap();
    let instance = data.records[0].features.clone();
    c.bench_function("explain_tabular/5000", |b| {
        b.iter(|| {
            explain_instance(
                &model,
                "row",
                Instance::Tabular {
                    values: black_box(&instance),
                    scheme: &scheme,
                },
                &ExplainerConfig::tabular(3),
            )
            .unwrap()
        })
    });

    let (corpus, _) = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
    let vocab = corpus_vocabulary(&corpus, 2);
    let token_model =
        train_forest(&token_dataset(&corpus, &vocab), &ForestConfig::with_seed(4)).unwrap();
    let (tokens, _) = build_token_features(&corpus.files[0]);
    c.bench_function("explain_tokens/5000", |b| {
        b.iter(|| {
            explain_instance(
                &token_model,
                "file",
                Instance::Tokens {
                    tokens: black_box(&tokens),
                    vocabulary: &vocab,
                },
                &ExplainerConfig::tokens(5),
            )
            .unwrap()
        })
    });
}

fn tokenize(c: &mut Criterion) {
    let (corpus, _) = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
    c.bench_function("tokenize/200 files", |b| {
        b.iter(|| {
            corpus
                .files
                .iter()
                .map(|f| build_token_features(black_box(f)).0.total())
                .sum::<usize>()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forest, explain, tokenize
}
criterion_main!(benches);
