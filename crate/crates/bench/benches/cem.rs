use std::hint::black_box;

use cemkit::alignment::{align_words, AlignOptions};
use cemkit::cem::loss::total_loss_graph;
use cemkit::cem::model::forward_graph;
use cemkit::cem::Variant;
use cemkit::metrics::{auc_pr, auc_roc, nce, TargetClass};
use cemkit::Graph;
use cemkit_bench::{model_and_examples, scored_samples, word_pair};
use criterion::{criterion_group, criterion_main, Criterion};

fn model(c: &mut Criterion) {
    let (model, examples) = model_and_examples(Variant::WUD, 8);
    let ex = &examples[0];
    c.bench_function("forward_wud", |b| {
        b.iter(|| model.forward_input(black_box(&ex.input)).unwrap())
    });
    c.bench_function("forward_backward_wud", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let vars =
                forward_graph(&mut g, &model.config, &model.params, black_box(&ex.input)).unwrap();
            let loss = total_loss_graph(&mut g, &model.config, &vars, &ex.labels).unwrap();
            g.backward(loss.total).unwrap();
            g.param_grads()
        })
    });
}

fn alignment(c: &mut Criterion) {
    for len in [10, 100] {
        let (hyp, reference) = word_pair(len);
        c.bench_function(&format!("align_words_{len}"), |b| {
            b.iter(|| {
                align_words(
                    black_box(&hyp),
                    black_box(&reference),
                    AlignOptions::default(),
                )
            })
        });
    }
}

fn metrics(c: &mut Criterion) {
    let samples = scored_samples(10_000);
    c.bench_function("auc_roc_10k", |b| {
        b.iter(|| auc_roc(black_box(&samples)).unwrap())
    });
    c.bench_function("auc_pr_10k", |b| {
        b.iter(|| auc_pr(black_box(&samples), TargetClass::Negative).unwrap())
    });
    c.bench_function("nce_10k", |b| b.iter(|| nce(black_box(&samples)).unwrap()));
}

criterion_group!(benches, model, alignment, metrics);
criterion_main!(benches);
