use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use explvar::data::{centered_gram, standardize};
use explvar::estimator::{estimate_r2_ls, iterate_lambda};
use explvar::simulation::{design_model, gen_design, gen_outcome, replicate_rng};
use explvar::variance::{mp_tau2_theoretical, var_robust};
use explvar::{Dataset, ScenarioConfig};

fn dataset(n: usize, p: usize) -> Dataset {
    let cfg = ScenarioConfig::new(n, p, 0.5, 1, 1);
    let model = design_model(&cfg).unwrap();
    let mut rng = replicate_rng(cfg.seed, 0);
    let x = gen_design(&cfg, &model, &mut rng);
    let (y, _) = gen_outcome(&x, &cfg, &model, &mut rng);
    standardize(&Dataset::new(y, x, None).unwrap()).unwrap()
}

fn gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("centered_gram");
    group.sample_size(10);
    for n in [100, 200, 400] {
        let d = dataset(n, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &d, |b, d| b.iter(|| centered_gram(d).unwrap()));
    }
    group.finish();
}

fn weighted(c: &mut Criterion) {
    let d = dataset(400, 400);
    let g = centered_gram(&d).unwrap();
    let y = d.standardized_outcome().unwrap();
    c.bench_function("iterate_lambda 400x400", |b| b.iter(|| iterate_lambda(&d, &g, 0.1, 5).unwrap()));
    let est = iterate_lambda(&d, &g, 0.1, 5).unwrap();
    c.bench_function("var_robust 400x400", |b| {
        b.iter(|| var_robust(&est, &g, &y, est.lambda_final).unwrap())
    });
}

fn least_squares(c: &mut Criterion) {
    let d = dataset(400, 200);
    let mut group = c.benchmark_group("least_squares");
    group.sample_size(10);
    group.bench_function("400x200", |b| b.iter(|| estimate_r2_ls(&d).unwrap()));
    group.finish();
}

fn mp(c: &mut Criterion) {
    c.bench_function("mp_tau2_theoretical xi=0.5", |b| b.iter(|| mp_tau2_theoretical(0.5, 1.0).unwrap()));
}

criterion_group!(benches, gram, weighted, least_squares, mp);
criterion_main!(benches);
