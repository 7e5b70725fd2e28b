use std::sync::OnceLock;

use posedrag::autodiff::{Graph, ParamStore, Tensor};
use posedrag::motion::{synth_motion, MotionClip, MotionKind};
use posedrag::nn::MultiHeadAttention;
use posedrag::temporal::*;
use posedrag::vae::{train_vae, LatentLayout, PoseVae, VaeTrainConfig};
use posedrag::{Error, LimbGroup};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> TemporalConfig {
    TemporalConfig {
        n: 4,
        past: 6,
        future: 4,
        heads: 2,
        layers: 1,
        feature_dim: 16,
        ff_dim: 32,
    }
}

struct Fixture {
    vae: PoseVae,
    train: Vec<MotionClip>,
    test: Vec<MotionClip>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let kinds = [MotionKind::WalkCycle, MotionKind::ArmWave, MotionKind::Squat];
        let train: Vec<MotionClip> = (0..2)
            .flat_map(|s| kinds.iter().map(move |&k| synth_motion(k, 6.0, s).unwrap()))
            .collect();
        let test = kinds.iter().map(|&k| synth_motion(k, 4.0, 50).unwrap()).collect();
        let cfg = VaeTrainConfig {
            epochs: 3,
            lr: 1e-3,
            ..VaeTrainConfig::default()
        };
        let (vae, _) = train_vae(&train, &cfg).unwrap();
        Fixture { vae, train, test }
    })
}

fn features(rng: &mut impl Rng, l: usize) -> StepFeatures {
    StepFeatures {
        latent: (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        velocity: [rng.gen_range(-1.0..1.0), 0.0, rng.gen_range(0.0..1.5)],
        heights: [0.9, 1.6, 1.0, 1.0, 0.1, 0.1],
    }
}

fn brute_indices(i: u64, n: u64, wf: u64) -> (u64, u64) {
    let mut j = 0;
    while j * n < i {
        j += 1;
    }
    let mut p = 0;
    while p + wf <= j {
        p += wf;
    }
    (j, p)
}

#[test]
fn index_examples() {
    assert_eq!(indices(0, 4, 16), (0, 0));
    assert_eq!(indices(5, 4, 16), (2, 0));
    assert_eq!(indices(260, 4, 16), (65, 64));
}

#[test]
fn indices_match_counting_oracle() {
    for (n, wf) in [(4, 1), (4, 16), (4, 60), (1, 1), (3, 7)] {
        for i in 0..3000 {
            assert_eq!(indices(i, n, wf), brute_indices(i, n, wf), "i={i} n={n} wf={wf}");
        }
    }
}

proptest! {
    #[test]
    fn indices_bounds(i in 0u64..1_000_000, n in 1u64..10, wf in 1u64..70) {
        let (j, p) = indices(i, n, wf);
        prop_assert!(j * n >= i && (j == 0 || (j - 1) * n < i));
        prop_assert!(p % wf == 0 && p <= j && j - p < wf);
    }
}

fn stats(l: usize) -> (Vec<f64>, Vec<f64>) {
    ((0..l).map(|d| 0.01 * d as f64).collect(), vec![0.5; l])
}

#[test]
fn limb_noise_zero_probability_is_identity() {
    let layout = LatentLayout::standard(24);
    let (m, s) = stats(24);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z: Vec<f64> = (0..24).map(|d| d as f64).collect();
    for _ in 0..100 {
        assert_eq!(limb_noise(&z, &layout, &m, &s, 0.0, &mut rng).unwrap(), z);
    }
}

#[test]
fn limb_noise_full_probability_touches_only_limbs() {
    let layout = LatentLayout::standard(24);
    let (m, s) = stats(24);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = vec![0.0; 24];
    let out = limb_noise(&z, &layout, &m, &s, 1.0, &mut rng).unwrap();
    for g in [LimbGroup::Root, LimbGroup::SpineHead] {
        assert!(layout.range(g).all(|d| out[d] == 0.0));
    }
    for g in LimbGroup::LIMBS {
        assert!(layout.range(g).all(|d| out[d] != 0.0), "{g:?} untouched");
    }
}

#[test]
fn limb_noise_frequency_per_limb() {
    let layout = LatentLayout::standard(24);
    let (m, s) = stats(24);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = vec![0.0; 24];
    let draws = 100_000;
    let mut hits = [0usize; 4];
    for _ in 0..draws {
        let out = limb_noise(&z, &layout, &m, &s, 0.1, &mut rng).unwrap();
        for (h, g) in hits.iter_mut().zip(LimbGroup::LIMBS) {
            if layout.range(g).any(|d| out[d] != 0.0) {
                *h += 1;
            }
        }
    }
    for h in hits {
        let f = h as f64 / draws as f64;
        assert!((f - 0.1).abs() <= 0.005, "frequency {f}");
    }
}

#[test]
fn limb_noise_rejects_mismatched_stats() {
    let layout = LatentLayout::standard(24);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(limb_noise(&[0.0; 24], &layout, &[0.0; 23], &[1.0; 24], 0.1, &mut rng).is_err());
}

#[test]
fn attention_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "att", 16, 4, &mut rng);
    let mut g = Graph::new();
    let p = store.bind_constant(&mut g);
    let q = g.constant(Tensor::new(vec![2, 5, 16], (0..160).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap());
    let k = g.constant(Tensor::new(vec![2, 7, 16], (0..224).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap());
    let (_, att) = mha.forward(&mut g, &p, q, k, None).unwrap();
    let att = g.value(att);
    assert_eq!(att.shape, vec![8, 5, 7]);
    for row in att.data.chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn context_encoding_is_deterministic_and_order_sensitive() {
    let t = TemporalPredictor::new(tiny(), 24, "h", 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let hist: Vec<StepFeatures> = (0..6).map(|_| features(&mut rng, 24)).collect();
    let a = t.encode_context(&hist).unwrap();
    let b = t.encode_context(&hist).unwrap();
    assert_eq!(a, b);
    let mut swapped = hist.clone();
    swapped.swap(1, 4);
    assert!(t.encode_context(&swapped).unwrap().max_abs_diff(&a) > 1e-6);
}

#[test]
fn empty_history_is_a_cold_start() {
    let t = TemporalPredictor::new(tiny(), 24, "h", 0).unwrap();
    assert!(matches!(t.encode_context(&[]), Err(Error::ColdStart)));
    let mut state = PredictorState::default();
    assert!(matches!(t.predict_next(&mut state), Err(Error::ColdStart)));
    assert_eq!(t.advance(&mut state, 0, &[0.0; 24]).unwrap(), None);
}

#[test]
fn short_history_is_padded_with_earliest_entry() {
    let t = TemporalPredictor::new(tiny(), 24, "h", 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let hist: Vec<StepFeatures> = (0..2).map(|_| features(&mut rng, 24)).collect();
    let padded: Vec<StepFeatures> = std::iter::repeat(hist[0].clone()).take(4).chain(hist.iter().cloned()).collect();
    assert_eq!(t.encode_context(&hist).unwrap(), t.encode_context(&padded).unwrap());
}

#[test]
fn untrained_head_predicts_zero() {
    let t = TemporalPredictor::new(tiny(), 24, "h", 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut state = PredictorState::seeded(features(&mut rng, 24));
    let anchor: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
    t.refresh(&mut state, &anchor).unwrap();
    assert_eq!(t.predict_next(&mut state).unwrap(), vec![0.0; 24]);
}

#[test]
fn autoregression_stops_at_future_window() {
    let t = TemporalPredictor::new(tiny(), 24, "h", 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut state = PredictorState::seeded(features(&mut rng, 24));
    t.refresh(&mut state, &[0.1; 24]).unwrap();
    for k in 0..4 {
        t.predict_next(&mut state).unwrap();
        assert_eq!(state.pending.len(), k + 1);
    }
    assert!(matches!(t.predict_next(&mut state), Err(Error::RefreshRequired)));
    t.refresh(&mut state, &[0.1; 24]).unwrap();
    assert!(state.pending.is_empty());
}

#[test]
fn schedule_fires_on_the_grid() {
    for future in [1, 4] {
        let cfg = TemporalConfig { future, ..tiny() };
        let t = TemporalPredictor::new(cfg, 24, "h", 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = PredictorState::seeded(features(&mut rng, 24));
        let mut held = None;
        for i in 0..100u64 {
            let z_prev: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let before = state.anchor.clone();
            let out = t.advance(&mut state, i, &z_prev).unwrap();
            let (j, _) = indices(i, 4, future as u64);
            if i % 4 == 0 {
                assert_eq!(state.pending.len() as u64, j % future as u64 + 1, "i={i}");
                if j % future as u64 == 0 {
                    assert_eq!(state.anchor.as_deref(), Some(&z_prev[..]));
                } else {
                    assert_eq!(state.anchor, before);
                }
                held = out.clone();
            } else {
                assert_eq!(out, held);
                assert_eq!(state.anchor, before);
            }
            assert!(state.pending.len() <= future);
            t.observe(&mut state, i, features(&mut rng, 24));
            assert!(state.history.len() <= 6);
        }
    }
}

#[test]
fn prediction_ignores_frames_at_or_after_its_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut t = TemporalPredictor::new(tiny(), 24, "h", 12).unwrap();
    for p in t.params.iter_mut() {
        p.tensor.data.iter_mut().for_each(|x| *x = rng.gen_range(-0.3..0.3));
    }
    let run = |tail_seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut tail = ChaCha8Rng::seed_from_u64(tail_seed);
        let mut state = PredictorState::seeded(features(&mut rng, 24));
        let mut outs = Vec::new();
        for i in 0..40u64 {
            let z_prev: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
            outs.push(t.advance(&mut state, i, &z_prev).unwrap());
            let feat = if i < 20 { features(&mut rng, 24) } else { features(&mut tail, 24) };
            t.observe(&mut state, i, feat);
        }
        outs
    };
    let (a, b) = (run(100), run(200));
    assert_eq!(a[..=20], b[..=20]);
    assert_ne!(a[32..], b[32..]);
}

#[test]
fn checkpoint_round_trip_and_hash_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut t = TemporalPredictor::new(tiny(), 24, "abc", 14).unwrap();
    for p in t.params.iter_mut() {
        p.tensor.data.iter_mut().for_each(|x| *x = rng.gen_range(-0.3..0.3));
    }
    let c = t.to_checkpoint();
    let bytes = c.to_bytes().unwrap();
    let back = posedrag::autodiff::Checkpoint::from_bytes(&bytes).unwrap();
    let u = TemporalPredictor::from_checkpoint(&back, "abc").unwrap();
    let hist: Vec<StepFeatures> = (0..3).map(|_| features(&mut rng, 24)).collect();
    assert_eq!(t.encode_context(&hist).unwrap(), u.encode_context(&hist).unwrap());
    assert!(matches!(
        TemporalPredictor::from_checkpoint(&back, "other"),
        Err(Error::IncompatibleCheckpoint(_))
    ));
}

#[test]
fn config_validation() {
    assert!(TemporalConfig { n: 0, ..tiny() }.validate().is_err());
    assert!(TemporalConfig { future: 0, ..tiny() }.validate().is_err());
    assert!(TemporalConfig { feature_dim: 15, ..tiny() }.validate().is_err());
    assert!(TemporalConfig::default().validate().is_ok());
}

fn train_cfg(epochs: usize) -> TemporalTrainConfig {
    TemporalTrainConfig {
        model: tiny(),
        epochs,
        batch_size: 32,
        micro_batch: 32,
        stride: 2,
        seed: 3,
        ..TemporalTrainConfig::default()
    }
}

fn mean_step_delta(vae: &PoseVae, clips: &[MotionClip], n: usize) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for c in clips {
        let refs: Vec<_> = c.frames.iter().collect();
        let (mu, _) = vae.encode_batch(&refs).unwrap();
        for t in n..mu.len() {
            sum += mu[t].iter().zip(&mu[t - n]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += mu[t].len();
        }
    }
    sum / count as f64
}

#[test]
fn training_learns_and_beats_holding_the_last_step() {
    let f = fixture();
    let (t, log) = train_temporal(&f.vae, &f.train, &train_cfg(40)).unwrap();
    assert!(log[9].loss < log[0].loss, "{log:?}");
    let last = log.last().unwrap().loss;
    assert!(last < mean_step_delta(&f.vae, &f.train, 4), "{log:?}");
    let (model, hold) = evaluate_one_step(&t, &f.vae, &f.test).unwrap();
    assert!(model < hold, "model {model} hold {hold}");
    assert_eq!(t.vae_hash, f.vae.to_checkpoint().unwrap().hash().unwrap());
}

#[test]
fn training_is_deterministic() {
    let f = fixture();
    let (_, a) = train_temporal(&f.vae, &f.train, &train_cfg(2)).unwrap();
    let (_, b) = train_temporal(&f.vae, &f.train, &train_cfg(2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn short_clips_are_skipped() {
    let f = fixture();
    let short = f.train[0].slice(0, 30).unwrap();
    assert!(matches!(
        train_temporal(&f.vae, &[short], &train_cfg(1)),
        Err(Error::InsufficientData(_))
    ));
}
