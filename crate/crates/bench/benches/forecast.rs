use agcd_core::evalkit::{acc, lat_rmse, Variant};
use agcd_core::fieldgrid::latitude_weights;
use agcd_core::mmnp::{build_context, run_pipeline, MmnpConfig, MockBackend, RuleEvaluator};
use agcd_core::numcore::Grads;
use agcd_bench::fixture;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn train_step(c: &mut Criterion) {
    for variant in [Variant::Baseline, Variant::Agcd] {
        let f = fixture(variant);
        let target = f.patches.clone();
        c.bench_function(&format!("forward_backward/{variant}"), |b| {
            b.iter(|| {
                let mut grads = Grads::new();
                f.model
                    .loss_and_grad(&f.params, black_box(&f.patches), &target, f.text.as_ref(), &mut grads)
                    .unwrap()
            })
        });
    }
}

fn text_embedding(c: &mut Criterion) {
    let f = fixture(Variant::Agcd);
    c.bench_function("embed_narrative", |b| b.iter(|| f.model.embed(black_box(agcd_bench::NARRATIVE))));
}

fn narration(c: &mut Criterion) {
    let f = fixture(Variant::Agcd);
    let spec = &f.data.dataset.spec;
    let state = &f.data.dataset.sequences[0].states[0];
    let cfg = MmnpConfig::default();
    let ctx = build_context(spec, state, &f.stats, None, &cfg).unwrap();
    let backend = MockBackend::with_defects(1.0, 0);
    c.bench_function("mmnp_pipeline/defect", |b| {
        b.iter(|| run_pipeline(&backend, &RuleEvaluator, black_box(&ctx), &cfg).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let f = fixture(Variant::Baseline);
    let spec = &f.data.dataset.spec;
    let w = latitude_weights(spec);
    let seq = &f.data.dataset.sequences[0].states;
    let (p, t) = (&seq[0].fields[0], &seq[1].fields[0]);
    let clim = p.scale(0.0);
    c.bench_function("lat_rmse", |b| b.iter(|| lat_rmse(black_box(p), t, &w).unwrap()));
    c.bench_function("acc", |b| b.iter(|| acc(black_box(p), t, &clim, &w).unwrap()));
}

criterion_group!(benches, train_step, text_embedding, narration, metrics);
criterion_main!(benches);
