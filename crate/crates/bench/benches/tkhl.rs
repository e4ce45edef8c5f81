use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tkhl_bench::Workload;
use tkhl_core::{
    cook_distances, default_anchors, default_landmarks, fit, fit_with, tkhl_test, FitOptions, NystromModel,
};

const SIZES: [usize; 3] = [200, 500, 1000];

fn bench_gram(c: &mut Criterion) {
    let mut g = c.benchmark_group("gram");
    for n in SIZES {
        let w = Workload::gaussian_groups(n, 10, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &w, |b, w| b.iter(|| black_box(w.gram())));
    }
    g.finish();
}

fn bench_fit(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    for n in SIZES {
        let w = Workload::gaussian_groups(n, 10, 2);
        let k = w.gram();
        g.bench_with_input(BenchmarkId::new("full", n), &n, |b, _| {
            b.iter(|| black_box(fit(k.clone(), w.design.clone()).unwrap()))
        });
        let opts = FitOptions { max_components: Some(10) };
        g.bench_with_input(BenchmarkId::new("partial_t10", n), &n, |b, _| {
            b.iter(|| black_box(fit_with(k.clone(), w.design.clone(), &opts).unwrap()))
        });
    }
    g.finish();
}

fn bench_test(c: &mut Criterion) {
    let mut g = c.benchmark_group("tkhl_test");
    for n in SIZES {
        let w = Workload::gaussian_groups(n, 10, 3);
        let model = fit(w.gram(), w.design.clone()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(tkhl_test(&model, &w.contrast, 10).unwrap()))
        });
    }
    g.finish();
}

fn bench_nystrom(c: &mut Criterion) {
    let mut g = c.benchmark_group("nystrom");
    g.sample_size(10);
    for n in SIZES {
        let w = Workload::gaussian_groups(n, 10, 4);
        let q = default_landmarks(n);
        let m = default_anchors(q, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let nm = NystromModel::fit(&w.data, &w.kernel, &w.design, w.landmarks(q, 7), m).unwrap();
                black_box(nm.test(&w.contrast, 10).unwrap())
            })
        });
    }
    g.finish();
}

fn bench_cook(c: &mut Criterion) {
    let mut g = c.benchmark_group("cook");
    g.sample_size(10);
    for n in [200, 500] {
        let w = Workload::gaussian_groups(n, 10, 5);
        let model = fit(w.gram(), w.design.clone()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(cook_distances(&model, &w.contrast, 5).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_gram, bench_fit, bench_test, bench_nystrom, bench_cook);
criterion_main!(benches);
