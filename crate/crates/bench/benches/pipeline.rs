use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use posedrag::kinematics::forward_kinematics;
use posedrag::optimizer::{Mode, OptimizerConfig, Session};
use posedrag::temporal::{PredictorState, StepFeatures};
use posedrag_bench::fixture;

fn kinematics(c: &mut Criterion) {
    let f = fixture();
    let pose = &f.clip.frames[10];
    c.bench_function("forward_kinematics 22 joints", |b| b.iter(|| forward_kinematics(black_box(pose), &f.vae.skeleton).unwrap()));
}

fn autoencoder(c: &mut Criterion) {
    let f = fixture();
    let (mu, _) = f.vae.encode(&f.clip.frames[10]).unwrap();
    c.bench_function("encode", |b| b.iter(|| f.vae.encode(black_box(&f.clip.frames[10])).unwrap()));
    c.bench_function("decode", |b| b.iter(|| f.vae.decode(black_box(&mu)).unwrap()));
}

fn optimizer(c: &mut Criterion) {
    let f = fixture();
    let roots = f.clip.root_states().unwrap();
    for mode in [Mode::Realtime, Mode::Offline] {
        let config = OptimizerConfig::for_mode(mode);
        c.bench_function(&format!("optimize_frame {mode:?}"), |b| {
            b.iter_batched(
                || Session::from_vae(f.vae.clone(), None, config.clone(), &f.clip.frames[0], roots[0]).unwrap(),
                |mut s| s.optimize_frame(&f.sparse.frames[1]).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

fn temporal(c: &mut Criterion) {
    let f = fixture();
    let roots = f.clip.prev_root_states().unwrap();
    let l = f.vae.latent_dim();
    let mut state = PredictorState::default();
    for i in 0..16 {
        let feat = StepFeatures::from_frame(&vec![0.1; l], &f.clip.frames[i], &roots[i], &f.vae.skeleton, 60.0).unwrap();
        f.temporal.observe(&mut state, 0, feat);
    }
    c.bench_function("temporal refresh", |b| b.iter(|| f.temporal.refresh(&mut state.clone(), black_box(&vec![0.0; l])).unwrap()));
    f.temporal.refresh(&mut state, &vec![0.0; l]).unwrap();
    c.bench_function("temporal predict_next", |b| {
        b.iter_batched(|| state.clone(), |mut s| f.temporal.predict_next(&mut s).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, kinematics, autoencoder, optimizer, temporal);
criterion_main!(benches);
