use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symdqn_core::dqn::{td_loss, QNetConfig, QNetwork, TrainerConfig, Transition};
use symdqn_core::env::{Action, EnvConfig, GridState};
use symdqn_core::guidance::{reasoner_loss, ReasonerConfig};
use symdqn_core::perception::{recognizer_loss, split_patches, PatchMemory, RecognizerNet};
use symdqn_core::tensor::{Tape, Tensor};

fn batch(env: &EnvConfig, n: usize) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..n)
        .map(|i| {
            let (s, obs) = GridState::reset(env, i as u64).unwrap();
            let a = rng.gen_range(0..4);
            let step = s.step(env, Action::ALL[a]).unwrap();
            Transition {
                obs: Arc::new(obs),
                action: a,
                reward: step.reward,
                next_obs: Arc::new(step.observation),
                done: step.done,
            }
        })
        .collect()
}

fn q_network(c: &mut Criterion) {
    let env = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let online = QNetwork::new(&QNetConfig::default(), env.image_side(), &mut rng).unwrap();
    let target = online.clone();
    let cfg = TrainerConfig::default();
    let data = batch(&env, cfg.batch_size);
    let refs: Vec<&Transition> = data.iter().collect();
    c.bench_function("q_values_single", |b| b.iter(|| online.q_values(black_box(&data[0].obs)).unwrap()));
    c.bench_function("td_loss_forward_backward_b16", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let loss = td_loss(&mut tape, &online, &target, &refs, &cfg).unwrap();
            tape.backward(loss).unwrap().for_store(online.params())
        })
    });
}

fn symbolic(c: &mut Criterion) {
    let env = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = RecognizerNet::new(&mut rng);
    let mut mem = PatchMemory::new();
    for seed in 0..20 {
        mem.update(&split_patches(&GridState::reset(&env, seed).unwrap().1).unwrap());
    }
    c.bench_function("recognizer_loss_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let kb = recognizer_loss(&mut tape, &net, &mem).unwrap();
            tape.backward(kb.loss).unwrap().for_store(net.params())
        })
    });
    let cfg = ReasonerConfig::default();
    c.bench_function("reasoner_loss_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let q = tape.leaf(Tensor::vector(vec![0.3, -0.2, 0.9, 0.1]).unwrap(), true);
            let (loss, _) = reasoner_loss(&mut tape, q, &[1.0, -1.0, 0.0, 0.0], &cfg).unwrap();
            tape.backward(loss).unwrap()
        })
    });
}

fn environment(c: &mut Criterion) {
    let env = EnvConfig::default();
    c.bench_function("env_reset_and_step", |b| {
        let mut seed = 0;
        b.iter(|| {
            seed += 1;
            let (s, _) = GridState::reset(&env, seed).unwrap();
            s.step(&env, Action::Right).unwrap()
        })
    });
}

criterion_group!(benches, q_network, symbolic, environment);
criterion_main!(benches);
