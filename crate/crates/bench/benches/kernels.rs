use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mgrid_bench::{benign_environment, warm_grid};
use mgrid_core::consensus::{enumerate_topologies, lambda2, leader_pinning, CommTopology};
use mgrid_core::defense::SurrogateGame;
use mgrid_core::neuralnet::{Architecture, Mlp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn plant(c: &mut Criterion) {
    let grid = warm_grid(0.05);
    c.bench_function("rk4_step_4dg", |b| {
        b.iter_batched_ref(|| grid.clone(), |g| g.step().unwrap(), BatchSize::SmallInput)
    });
    c.bench_function("decision_epoch_4dg", |b| {
        b.iter_batched_ref(benign_environment, |env| env.step(0).unwrap(), BatchSize::LargeInput)
    });
}

fn graphs(c: &mut Criterion) {
    c.bench_function("enumerate_trees_n6", |b| b.iter(|| enumerate_topologies(6).unwrap()));
    let t = CommTopology::complete(8, &leader_pinning(8, 1.0)).unwrap();
    c.bench_function("lambda2_n8", |b| b.iter(|| lambda2(&t.laplacian, &t.pinning).unwrap()));
}

fn learning(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mlp::new(Architecture::new(24, &[24, 24], 16), &mut rng).unwrap();
    let x = vec![0.5; 24];
    let g = vec![1.0; 16];
    c.bench_function("mlp_forward_backward", |b| {
        b.iter(|| {
            let trace = net.forward_trace(&x).unwrap();
            net.backward(&trace, &g).unwrap()
        })
    });
    let game = SurrogateGame::new(3).unwrap();
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    group.bench_function("surrogate_200_episodes", |b| b.iter(|| game.run(200, SurrogateGame::agent_config(0)).unwrap()));
    group.finish();
}

criterion_group!(benches, plant, graphs, learning);
criterion_main!(benches);
