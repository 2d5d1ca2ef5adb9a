use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use oodrecover_core::buffer::Batch;
use oodrecover_core::dsl::{parse_file, CompiledProgram};
use oodrecover_core::envs::{CartPole, Environment};
use oodrecover_core::net::{Matrix, Mlp};
use oodrecover_core::sac::{SacConfig, SacState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 256;

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mlp::new(&[5, 256, 256, 1], &mut rng);
    let x = Matrix::from_vec(N, 5, (0..N * 5).map(|_| rng.random_range(-1.0..1.0)).collect());
    let dy = Matrix::from_vec(N, 1, vec![1.0 / N as f64; N]);
    c.bench_function("mlp forward 256x[256,256]", |b| b.iter(|| black_box(net.forward_batch(&x))));
    c.bench_function("mlp forward+backward 256x[256,256]", |b| {
        b.iter(|| {
            let pass = net.forward_batch(&x);
            black_box(net.backward(&pass, &dy, true))
        })
    });
}

fn sac_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sac = SacState::new(4, 1, &SacConfig::default(), &mut rng);
    let mut u = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let batch = Batch {
        len: N,
        state_dim: 4,
        action_dim: 1,
        states: u(N * 4),
        actions: u(N),
        rewards: u(N),
        next_states: u(N * 4),
        eval_flags: vec![1; N],
        terminals: vec![false; N],
    };
    let mut step_rng = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("sac train step batch 256", |b| {
        b.iter(|| black_box(sac.train_step(&batch, 0.005, &mut step_rng, None).unwrap()))
    });
}

fn dsl_eval(c: &mut Criterion) {
    let env = CartPole::default();
    let spec = env.spec();
    let src = "# kind: reward\nlet height = (1 + cos_theta) / 2;\nreturn height - 0.01 * sq(force);\n";
    let prog = CompiledProgram::new(
        parse_file(src).unwrap(),
        spec.reward_view_schema.clone(),
        spec.action_schema.clone(),
    )
    .unwrap();
    let state = [0.1, -0.2, 2.5, 0.3];
    let view = env.reward_view_values(&state);
    c.bench_function("dsl reward eval", |b| b.iter(|| black_box(prog.evaluate(black_box(&view), &[0.4]))));
}

criterion_group!(benches, mlp, sac_step, dsl_eval);
criterion_main!(benches);
