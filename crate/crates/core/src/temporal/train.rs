use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, AdamWConfig, Graph, Tensor};
use crate::error::{Error, Result};
use crate::motion::{column_stats, MotionClip};
use crate::pose::Pose;
use crate::skeleton::LimbGroup;
use crate::vae::{LatentLayout, PoseVae};

use super::model::{TemporalConfig, TemporalPredictor};
use super::state::{StepFeatures, CONTEXT_EXTRA};

/// Adds per-dimension Gaussian noise `N(mean_d, std_d)` to each limb's
/// latent range independently with probability `prob`. Root and spine
/// ranges are left alone.
pub fn limb_noise(z: &[f64], layout: &LatentLayout, mean: &[f64], std: &[f64], prob: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let l = layout.dim();
    if z.len() != l || mean.len() != l || std.len() != l {
        return Err(Error::dim("limb noise", l, format!("{}/{}/{}", z.len(), mean.len(), std.len())));
    }
    let mut out = z.to_vec();
    for g in LimbGroup::LIMBS {
        if rng.gen::<f64>() < prob {
            for d in layout.range(g) {
                let n = Normal::new(mean[d], std[d].max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
                out[d] += n.sample(rng);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalTrainConfig {
    pub model: TemporalConfig,
    pub epochs: usize,
    /// Samples per optimizer step.
    pub batch_size: usize,
    /// Samples per graph; gradients are accumulated up to `batch_size`.
    pub micro_batch: usize,
    pub lr: f64,
    pub noise_prob: f64,
    /// Frames between consecutive training windows within a clip.
    pub stride: usize,
    pub seed: u64,
}

impl Default for TemporalTrainConfig {
    fn default() -> Self {
        TemporalTrainConfig {
            model: TemporalConfig::default(),
            epochs: 10,
            batch_size: 512,
            micro_batch: 32,
            lr: 1e-3,
            noise_prob: 0.1,
            stride: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalEpoch {
    pub epoch: usize,
    pub loss: f64,
}

/// Encoder latents and context features of one clip.
struct Sequence {
    latents: Vec<Vec<f64>>,
    features: Vec<StepFeatures>,
}

fn sequences(vae: &PoseVae, clips: &[MotionClip], min_len: usize) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    for (k, c) in clips.iter().enumerate() {
        if c.len() < min_len {
            log::warn!("skipping clip {k}: {} frames, need {min_len}", c.len());
            continue;
        }
        let refs: Vec<&Pose> = c.frames.iter().collect();
        let mut latents = Vec::with_capacity(c.len());
        for chunk in refs.chunks(256) {
            latents.extend(vae.encode_batch(chunk)?.0);
        }
        let prev = c.prev_root_states()?;
        let features = c
            .frames
            .iter()
            .zip(&prev)
            .zip(&latents)
            .map(|((f, r), z)| StepFeatures::from_frame(z, f, r, &c.skeleton, c.frame_rate))
            .collect::<Result<Vec<_>>>()?;
        out.push(Sequence { latents, features });
    }
    Ok(out)
}

/// Window starting at frame `base`: context rows at `base - n*W_p ..
/// base - n` (clamped to the first frame on the same grid), decoder inputs
/// `(z[base-1], z[base], .., z[base + n*(W_f-2)])` and targets
/// `z[base + n*m]` for `m < W_f`.
struct Window<'a> {
    seq: &'a Sequence,
    base: usize,
}

impl Window<'_> {
    fn context(&self, cfg: &TemporalConfig) -> Vec<&StepFeatures> {
        let (n, base) = (cfg.n, self.base);
        (0..cfg.past)
            .map(|m| {
                let back = n * (cfg.past - m);
                let t = if back > base { base % n } else { base - back };
                &self.seq.features[t]
            })
            .collect()
    }

    fn inputs(&self, cfg: &TemporalConfig) -> Vec<&Vec<f64>> {
        let (n, base) = (cfg.n, self.base);
        (0..cfg.future)
            .map(|m| {
                let t = if m == 0 { base - 1 } else { base + n * (m - 1) };
                &self.seq.latents[t]
            })
            .collect()
    }

    fn targets(&self, cfg: &TemporalConfig) -> Vec<&Vec<f64>> {
        (0..cfg.future).map(|m| &self.seq.latents[self.base + cfg.n * m]).collect()
    }
}

fn windows<'a>(seqs: &'a [Sequence], cfg: &TemporalConfig, stride: usize) -> Vec<Window<'a>> {
    let mut out = Vec::new();
    for s in seqs {
        let span = cfg.n * (cfg.future - 1);
        let mut base = cfg.n;
        while base + span < s.latents.len() {
            out.push(Window { seq: s, base });
            base += stride;
        }
    }
    out
}

struct Noise<'a> {
    layout: &'a LatentLayout,
    mean: Vec<f64>,
    std: Vec<f64>,
    prob: f64,
}

/// Builds the batch loss graph; returns the scalar loss value.
fn batch_graph(
    model: &TemporalPredictor,
    g: &mut Graph,
    p: &crate::autodiff::Bound,
    batch: &[&Window],
    noise: Option<(&Noise, &mut ChaCha8Rng)>,
) -> Result<crate::autodiff::Var> {
    let cfg = &model.config;
    let l = model.latent_dim;
    let b = batch.len();
    let (mut ctx, mut inp, mut tgt) = (Vec::new(), Vec::new(), Vec::new());
    let mut noise = noise;
    let mut perturb = |z: &[f64]| -> Result<Vec<f64>> {
        match noise.as_mut() {
            Some((n, rng)) => limb_noise(z, n.layout, &n.mean, &n.std, n.prob, *rng),
            None => Ok(z.to_vec()),
        }
    };
    for w in batch {
        for f in w.context(cfg) {
            ctx.extend(perturb(&f.latent)?);
            ctx.extend_from_slice(&f.velocity);
            ctx.extend_from_slice(&f.heights);
        }
        for z in w.inputs(cfg) {
            inp.extend(perturb(z)?);
        }
        for z in w.targets(cfg) {
            tgt.extend_from_slice(z);
        }
    }
    let ctx = g.constant(Tensor::new(vec![b, cfg.past, l + CONTEXT_EXTRA], ctx)?);
    let inp = g.constant(Tensor::new(vec![b, cfg.future, l], inp)?);
    let tgt = g.constant(Tensor::new(vec![b, cfg.future, l], tgt)?);
    let memory = model.encode_graph(g, p, ctx)?;
    let out = model.decode_graph(g, p, memory, inp)?;
    g.mse(out, tgt)
}

/// Trains a predictor on encoder latents of `clips` with teacher forcing.
/// Clips shorter than `n * (W_p + W_f)` frames are skipped.
pub fn train_temporal(vae: &PoseVae, clips: &[MotionClip], cfg: &TemporalTrainConfig) -> Result<(TemporalPredictor, Vec<TemporalEpoch>)> {
    cfg.model.validate()?;
    if cfg.batch_size == 0 || cfg.micro_batch == 0 || cfg.stride == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch sizes, stride and learning rate must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise_prob) {
        return Err(Error::Config(format!("noise probability {} outside [0, 1]", cfg.noise_prob)));
    }
    let hash = vae.to_checkpoint()?.hash()?;
    let mut model = TemporalPredictor::new(cfg.model.clone(), vae.latent_dim(), hash, cfg.seed)?;
    let m = &cfg.model;
    let seqs = sequences(vae, clips, m.n * (m.past + m.future))?;
    let wins = windows(&seqs, m, cfg.stride);
    if wins.is_empty() {
        return Err(Error::InsufficientData("no clip is long enough for one training window".into()));
    }
    let all: Vec<Vec<f64>> = seqs.iter().flat_map(|s| s.latents.iter().cloned()).collect();
    let (mean, std) = column_stats(&all)?;
    let noise = Noise {
        layout: &vae.layout,
        mean,
        std,
        prob: cfg.noise_prob,
    };
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        ..AdamWConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..wins.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Option<Tensor>> = vec![None; model.params.len()];
            for micro in batch.chunks(cfg.micro_batch) {
                let ws: Vec<&Window> = micro.iter().map(|&i| &wins[i]).collect();
                let mut g = Graph::new();
                let p = model.params.bind(&mut g);
                let loss = batch_graph(&model, &mut g, &p, &ws, Some((&noise, &mut rng)))?;
                let v = g.value(loss).item();
                if !v.is_finite() {
                    return Err(Error::Degenerate(format!("non-finite predictor loss in epoch {epoch}")));
                }
                total += v * micro.len() as f64;
                let share = micro.len() as f64 / batch.len() as f64;
                let mut grads = g.backward(loss)?;
                for (a, gr) in acc.iter_mut().zip(model.params.collect_grads(&p, &mut grads)) {
                    let Some(gr) = gr else { continue };
                    match a {
                        Some(a) => a.data.iter_mut().zip(&gr.data).for_each(|(x, y)| *x += share * y),
                        None => *a = Some(gr.map(|y| share * y)),
                    }
                }
            }
            opt.step(&mut model.params, &acc);
        }
        let loss = total / wins.len() as f64;
        log::info!("temporal epoch {epoch}: loss {loss:.6}");
        log.push(TemporalEpoch { epoch, loss });
    }
    Ok((model, log))
}

/// One-step errors on `clips` at the predictor's grid: mean squared error
/// of the first decoder output after a refresh, and of holding the latent
/// from the previous predictor step.
pub fn evaluate_one_step(model: &TemporalPredictor, vae: &PoseVae, clips: &[MotionClip]) -> Result<(f64, f64)> {
    let m = &model.config;
    let seqs = sequences(vae, clips, m.n * (m.past + m.future))?;
    let wins = windows(&seqs, m, m.n);
    if wins.is_empty() {
        return Err(Error::InsufficientData("no clip is long enough for one window".into()));
    }
    let one = TemporalConfig { future: 1, ..m.clone() };
    let (mut model_err, mut hold_err, mut count) = (0.0, 0.0, 0usize);
    let l = model.latent_dim;
    for chunk in wins.chunks(64) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let mut g = Graph::new();
        let p = model.params.bind_constant(&mut g);
        let mut ctx = Vec::new();
        let mut inp = Vec::new();
        for w in &refs {
            for f in w.context(m) {
                ctx.extend(f.to_vec());
            }
            inp.extend(w.inputs(&one).into_iter().flat_map(|z| z.iter().copied()));
        }
        let b = refs.len();
        let ctx = g.constant(Tensor::new(vec![b, m.past, l + CONTEXT_EXTRA], ctx)?);
        let inp = g.constant(Tensor::new(vec![b, 1, l], inp)?);
        let memory = model.encode_graph(&mut g, &p, ctx)?;
        let out = model.decode_graph(&mut g, &p, memory, inp)?;
        let out = g.value(out);
        for (k, w) in refs.iter().enumerate() {
            let target = &w.seq.latents[w.base];
            let held = &w.seq.latents[w.base - m.n];
            let pred = &out.data[k * l..(k + 1) * l];
            model_err += pred.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            hold_err += held.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += l;
        }
    }
    Ok((model_err / count as f64, hold_err / count as f64))
}
