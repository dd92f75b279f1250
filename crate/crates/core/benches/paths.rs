use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pergo::model::ou_gauss;
use pergo::simulate::{PathSimulator, SimulationPlan};
use pergo::{Execution, Signal};

fn euler_paths(c: &mut Criterion) {
    let model = ou_gauss(1.0, 1.0, Signal::sine(1.0, 1.0).unwrap(), None).unwrap();
    let mut group = c.benchmark_group("euler_final_states");
    group.sample_size(10);
    for &n in &[1_000usize, 10_000] {
        for exec in [Execution::Sequential, Execution::Parallel] {
            let plan = SimulationPlan::new(1e-3, 1, n, 7, vec![2.0]).execution(exec);
            let sim = PathSimulator::euler(&model, &plan).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), n), &n, |b, _| b.iter(|| sim.final_states()));
        }
    }
    group.finish();
}

criterion_group!(benches, euler_paths);
criterion_main!(benches);
