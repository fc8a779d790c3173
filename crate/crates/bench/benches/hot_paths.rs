use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use cpgait_core::dynamics::{reset, step_dynamics, NUM_JOINTS};
use cpgait_core::env::{EnvConfig, LocomotionEnv};
use cpgait_core::policy::{Mlp, LOW_HIDDEN, LOW_OBS_DIM};
use cpgait_core::ppo::compute_gae;
use cpgait_core::RobotModel;

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sizes = [LOW_OBS_DIM, LOW_HIDDEN[0], LOW_HIDDEN[1], 5];
    let net = Mlp::new(&sizes, 0.01, &mut rng).unwrap();
    let x: Vec<f64> = (0..LOW_OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("mlp_forward_low", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    let cache = net.forward_cached(&x).unwrap();
    let up = [1.0; 5];
    c.bench_function("mlp_backward_low", |b| b.iter(|| net.backward(black_box(&cache), &up).unwrap()));
}

fn dynamics(c: &mut Criterion) {
    let model = RobotModel::default();
    let state = reset(&model, 0, 0.0);
    let torques = [0.5; NUM_JOINTS];
    c.bench_function("physics_substep", |b| {
        b.iter(|| step_dynamics(&model, black_box(&state), &torques, 0.0025).unwrap())
    });
}

fn env(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut env = LocomotionEnv::new(EnvConfig::default(), &mut rng).unwrap();
    c.bench_function("env_control_tick", |b| {
        b.iter(|| {
            if env.needs_high_action() {
                env.apply_high(0.0).unwrap();
            }
            let out = env.step(black_box(&[0.0; 5])).unwrap();
            if out.done() {
                env.reset(&mut rng).unwrap();
            }
        })
    });
}

fn gae(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 8192;
    let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dones: Vec<bool> = (0..n).map(|i| i % 400 == 399).collect();
    c.bench_function("gae_8192", |b| {
        b.iter(|| compute_gae(black_box(&rewards), &values, &dones, 0.0, 0.99, 0.95).unwrap())
    });
}

criterion_group!(benches, mlp, dynamics, env, gae);
criterion_main!(benches);
