use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kshap_wor::bootstrap::bootstrap_table;
use kshap_wor::model::{fit_linear, generate_synthetic};
use kshap_wor::sampling::{build_pairing, draw_sample, plan_sample};
use kshap_wor::shapley::exact_shapley;
use kshap_wor::wallenius::wallenius_mean;
use kshap_wor::{BootstrapMethod, ContributionTable, SyntheticSpec, UrnSpec};

fn urn_for(p: usize, n_total: u64) -> UrnSpec {
    let plan = plan_sample(p, n_total).unwrap();
    let m = plan.strata().iter().map(|s| s.population).collect();
    let w = plan.strata().iter().map(|s| s.weight).collect();
    UrnSpec::new(m, w, plan.pair_draws()).unwrap()
}

fn wallenius(c: &mut Criterion) {
    let mut group = c.benchmark_group("wallenius_mean");
    for (p, n_total) in [(5usize, 16u64), (16, 402), (24, 2002)] {
        let urn = urn_for(p, n_total);
        group.bench_with_input(BenchmarkId::from_parameter(p), &urn, |b, urn| b.iter(|| wallenius_mean(black_box(urn))));
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("draw_sample");
    for (p, n_total) in [(5usize, 16u64), (16, 402)] {
        let plan = plan_sample(p, n_total).unwrap();
        let pairing = build_pairing(p).unwrap();
        let mut seed = 0u64;
        group.bench_function(BenchmarkId::from_parameter(p), |b| {
            b.iter(|| {
                seed += 1;
                draw_sample(&plan, &pairing, seed).unwrap()
            })
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let spec = SyntheticSpec {
        rho: 0.5,
        ..SyntheticSpec::new(16, 800)
    };
    let data = generate_synthetic(&spec, 1).unwrap();
    let oracle = fit_linear(&data).unwrap().into_conditional(&data).unwrap();
    let plan = plan_sample(16, 402).unwrap();
    let sample = draw_sample(&plan, &build_pairing(16).unwrap(), 3).unwrap();
    let masks: Vec<_> = sample.entries().iter().map(|e| e.mask).collect();
    let instances: Vec<&[f64]> = data.explain_rows().iter().take(20).map(Vec::as_slice).collect();
    let table = ContributionTable::new(&oracle, &masks, &instances);
    let mut group = c.benchmark_group("bootstrap_p16_b50");
    group.sample_size(20);
    for method in BootstrapMethod::ALL {
        group.bench_function(method.name(), |b| b.iter(|| bootstrap_table(&sample, &table, 50, method, 9).unwrap()));
    }
    group.finish();
}

fn exact(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_shapley");
    group.sample_size(20);
    for p in [5usize, 10, 14] {
        let data = generate_synthetic(&SyntheticSpec::new(p, 200), 2).unwrap();
        let oracle = fit_linear(&data).unwrap();
        let x = data.explain_rows()[0].clone();
        group.bench_with_input(BenchmarkId::from_parameter(p), &x, |b, x| b.iter(|| exact_shapley(&oracle, x).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, wallenius, sampling, bootstrap, exact);
criterion_main!(benches);
