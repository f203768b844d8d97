use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hicorr_bench::fixture;
use hicorr_core::inference::infer_all;
use hicorr_core::shrinkage::shrinkage_estimate;
use hicorr_core::{cross_products, estimate, MomentEngine, PairSet, QuadFormKey, VDenominator};

fn upsilon_keys(p: usize) -> Vec<QuadFormKey> {
    let mut keys = Vec::new();
    for l in 0..p {
        for k in (l + 1)..p {
            let set = [PairSet::Offdiag(l, k), PairSet::Diag(l), PairSet::Diag(k)];
            for a in 0..3 {
                for b in a..3 {
                    keys.push(QuadFormKey::new(set[a], set[b]));
                }
            }
        }
    }
    keys
}

/// Per-key cost should not grow with q once the group sums are cached.
fn quad_form_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("quad_form_batch");
    for q in [60, 240, 960] {
        let f = fixture(10, q, 5, 200);
        let cp = cross_products(&f.z);
        let keys = upsilon_keys(10);
        group.throughput(Throughput::Elements(keys.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(q), &keys, |b, keys| {
            b.iter(|| {
                let e = MomentEngine::new(&f.z, &cp, &f.sets, VDenominator::Mixed);
                black_box(e.quad_form_batch(keys))
            })
        });
    }
    group.finish();
}

fn estimate_and_infer(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate_infer");
    group.sample_size(10);
    for (p, q, n) in [(20, 150, 200), (50, 300, 30), (175, 1031, 227)] {
        let f = fixture(p, q, 5, n);
        group.bench_function(
            BenchmarkId::from_parameter(format!("p{p}_q{q}_n{n}")),
            |b| {
                b.iter(|| {
                    let (cp, cov) = estimate(&f.z, &f.sets).unwrap();
                    let e = MomentEngine::new(&f.z, &cp, &f.sets, VDenominator::Mixed);
                    black_box(infer_all(&e, &cov, 0.1).unwrap())
                })
            },
        );
    }
    group.finish();
}

fn shrinkage(c: &mut Criterion) {
    let f = fixture(50, 300, 5, 30);
    let (cp, cov) = estimate(&f.z, &f.sets).unwrap();
    c.bench_function("shrinkage_p50", |b| {
        b.iter(|| {
            let e = MomentEngine::new(&f.z, &cp, &f.sets, VDenominator::Mixed);
            black_box(shrinkage_estimate(&e, &cov, 1.0))
        })
    });
}

criterion_group!(benches, quad_form_scaling, estimate_and_infer, shrinkage);
criterion_main!(benches);
