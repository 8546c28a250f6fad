use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use vgfne_bench::{probe, reduced_grid};
use vgfne_core::seeker::{Seeker, SeekerConfig};
use vgfne_core::simulator::{simulate, NoiseModel};
use vgfne_core::sls_core::{game_operator, monotonicity_constants, reconstruct_policy, DEFAULT_HESSIAN_BUDGET};

fn grid(c: &mut Criterion) {
    let (spec, set) = reduced_grid();
    let v = probe(&spec);
    let phi = set.project(&v).expect("projection").phi_u;
    let policy = reconstruct_policy(&set.response(phi.clone())).expect("causal");

    c.bench_function("project", |b| b.iter(|| set.project(&v).unwrap()));
    c.bench_function("game_operator", |b| b.iter(|| game_operator(&spec, &phi)));
    c.bench_function("monotonicity_constants", |b| {
        b.iter(|| monotonicity_constants(&spec, DEFAULT_HESSIAN_BUDGET).unwrap())
    });
    c.bench_function("seeker_step", |b| {
        b.iter_batched(
            || Seeker::new(&set, SeekerConfig::default(), Some(phi.clone())).unwrap(),
            |mut s| s.step().unwrap(),
            BatchSize::LargeInput,
        )
    });
    c.bench_function("reconstruct_policy", |b| b.iter(|| reconstruct_policy(&set.response(phi.clone())).unwrap()));
    c.bench_function("simulate_1000", |b| {
        b.iter(|| simulate(&spec, &policy, NoiseModel::GaussianWhite { seed: 0 }, 1000, None).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = grid
}
criterion_main!(benches);
