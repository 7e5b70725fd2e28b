use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, AdamWConfig, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::kinematics::forward_kinematics;
use crate::motion::MotionClip;
use crate::pose::Pose;

use super::loss::{continuity_gradient, kld_graph};
use super::model::{canonical_vector, PoseVae, VaeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLossWeights {
    pub q: f64,
    pub fk: f64,
    pub kld: f64,
    pub c: f64,
}

impl Default for VaeLossWeights {
    fn default() -> Self {
        VaeLossWeights {
            q: 1.0,
            fk: 100.0,
            kld: 0.001,
            c: 1.0,
        }
    }
}

impl VaeLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("q", self.q), ("fk", self.fk), ("kld", self.kld), ("c", self.c)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("loss weight `{name}` must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub model: VaeConfig,
    pub weights: VaeLossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            model: VaeConfig::default(),
            weights: VaeLossWeights::default(),
            epochs: 50,
            batch_size: 64,
            lr: 1e-4,
            seed: 0,
        }
    }
}

/// Sample-weighted means of each loss component over one pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub q: f64,
    pub fk: f64,
    pub kld: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

/// Precomputed rows for consecutive-frame pairs.
pub(crate) struct PairSet {
    feats: Vec<f64>,
    x: Vec<f64>,
    next: Vec<f64>,
    fk: Vec<f64>,
    len: usize,
    f: usize,
    d: usize,
    k: usize,
}

impl PairSet {
    pub(crate) fn new(vae: &PoseVae, clips: &[MotionClip]) -> Result<Self> {
        let sk = &vae.skeleton;
        let (d, k) = (sk.pose_dim(), sk.joint_count() * 3);
        let mut set = PairSet {
            feats: Vec::new(),
            x: Vec::new(),
            next: Vec::new(),
            fk: Vec::new(),
            len: 0,
            f: sk.joint_count() * 8,
            d,
            k,
        };
        for c in clips {
            if c.len() < 2 {
                return Err(Error::InsufficientData(format!("clip with {} frame(s); need at least 2", c.len())));
            }
            if c.skeleton.hash() != sk.hash() {
                return Err(Error::InvalidSkeleton("clip skeleton differs from the model's".into()));
            }
            for w in c.frames.windows(2) {
                set.feats.extend(vae.feature_tensor(&[&w[0]])?.data);
                set.x.extend(canonical_vector(&w[0]));
                set.next.extend(canonical_vector(&w[1]));
                set.fk.extend(forward_kinematics(&w[0], sk)?.iter().flat_map(|v| v.to_array()));
                set.len += 1;
            }
        }
        if set.len == 0 {
            return Err(Error::InsufficientData("no training pairs".into()));
        }
        Ok(set)
    }

    fn gather(src: &[f64], width: usize, idx: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        Tensor::new(vec![idx.len(), width], data)
    }
}

struct BatchLoss {
    total: Var,
    parts: [f64; 5],
}

/// Builds the weighted loss for one batch. `noise` is `None` for evaluation,
/// which uses the posterior mean.
fn batch_loss(
    vae: &PoseVae,
    g: &mut Graph,
    enc: &crate::autodiff::Bound,
    dec: &crate::autodiff::Bound,
    set: &PairSet,
    idx: &[usize],
    w: &VaeLossWeights,
    noise: Option<Tensor>,
) -> Result<BatchLoss> {
    let feats = g.constant(PairSet::gather(&set.feats, set.f, idx)?);
    let (mu, logvar) = vae.encode_graph(g, enc, feats)?;
    let z = match noise {
        Some(eps) => {
            let eps = g.constant(eps);
            let half = g.scale(logvar, 0.5);
            let sd = g.exp(half);
            let spread = g.mul(sd, eps)?;
            g.add(mu, spread)?
        }
        None => mu,
    };
    let x_hat = vae.decode_graph(g, dec, z)?;
    let x = g.constant(PairSet::gather(&set.x, set.d, idx)?);
    let lq = g.mse(x_hat, x)?;
    let fk_hat = g.forward_kinematics(x_hat, &vae.skeleton)?;
    let fk = g.constant(PairSet::gather(&set.fk, set.k, idx)?);
    let lfk = g.mse(fk_hat, fk)?;
    let lkl = kld_graph(g, mu, logvar)?;
    let mut terms = vec![(w.q, lq), (w.fk, lfk), (w.kld, lkl)];
    let mut lc_value = 0.0;
    if w.c > 0.0 {
        let next = PairSet::gather(&set.next, set.d, idx)?;
        let grad = continuity_gradient(vae, g.value(z), &next)?;
        let grad = g.constant(grad);
        let z_step = g.sub(z, grad)?;
        let x_c = vae.decode_graph(g, dec, z_step)?;
        let next = g.constant(next);
        let lc = g.mse(x_c, next)?;
        lc_value = g.value(lc).item();
        terms.push((w.c, lc));
    }
    let mut total: Option<Var> = None;
    for (weight, term) in terms {
        let t = g.scale(term, weight);
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    let total = total.expect("at least one term");
    let parts = [
        g.value(total).item(),
        g.value(lq).item(),
        g.value(lfk).item(),
        g.value(lkl).item(),
        lc_value,
    ];
    Ok(BatchLoss { total, parts })
}

fn accumulate(log: &mut EpochLog, parts: [f64; 5], n: usize, total_n: usize) {
    let s = n as f64 / total_n as f64;
    log.total += parts[0] * s;
    log.q += parts[1] * s;
    log.fk += parts[2] * s;
    log.kld += parts[3] * s;
    log.c += parts[4] * s;
}

/// Trains a fresh model on consecutive-frame pairs of `clips`.
pub fn train_vae(clips: &[MotionClip], cfg: &VaeTrainConfig) -> Result<(PoseVae, TrainingLog)> {
    let first = clips.first().ok_or_else(|| Error::InsufficientData("no clips".into()))?;
    let mut vae = PoseVae::new(first.skeleton.clone(), cfg.model.clone(), cfg.seed)?;
    let poses: Vec<Pose> = clips.iter().flat_map(|c| c.frames.iter().cloned()).collect();
    vae.fit_standardization(&poses)?;
    let log = continue_training(&mut vae, clips, cfg)?;
    Ok((vae, log))
}

/// Runs `cfg.epochs` further epochs on an existing model, keeping its
/// standardization.
pub fn continue_training(vae: &mut PoseVae, clips: &[MotionClip], cfg: &VaeTrainConfig) -> Result<TrainingLog> {
    cfg.weights.validate()?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let set = PairSet::new(vae, clips)?;
    let adam = AdamWConfig {
        lr: cfg.lr,
        ..AdamWConfig::default()
    };
    let (mut opt_e, mut opt_d) = (AdamW::new(adam), AdamW::new(adam));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..set.len).collect();
    let l = vae.latent_dim();
    let mut log = TrainingLog::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut e = EpochLog {
            epoch,
            ..EpochLog::default()
        };
        for idx in order.chunks(cfg.batch_size) {
            let eps: Vec<f64> = (0..idx.len() * l).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut g = Graph::new();
            let enc = vae.encoder.bind(&mut g);
            let dec = vae.decoder.bind(&mut g);
            let b = batch_loss(vae, &mut g, &enc, &dec, &set, idx, &cfg.weights, Some(Tensor::new(vec![idx.len(), l], eps)?))?;
            if !b.parts[0].is_finite() {
                return Err(Error::Degenerate(format!("non-finite training loss in epoch {epoch}")));
            }
            let mut grads = g.backward(b.total)?;
            let ge = vae.encoder.collect_grads(&enc, &mut grads);
            let gd = vae.decoder.collect_grads(&dec, &mut grads);
            opt_e.step(&mut vae.encoder, &ge);
            opt_d.step(&mut vae.decoder, &gd);
            accumulate(&mut e, b.parts, idx.len(), set.len);
        }
        log::info!(
            "vae epoch {epoch}: total {:.6} q {:.6} fk {:.6} kld {:.4} c {:.6}",
            e.total, e.q, e.fk, e.kld, e.c
        );
        log.epochs.push(e);
    }
    vae.set_loss_weights(cfg.weights);
    Ok(log)
}

/// Loss components on `clips` using posterior means, without updating the
/// model. Batches are taken in clip order.
pub fn evaluate_losses(vae: &PoseVae, clips: &[MotionClip], weights: &VaeLossWeights, batch_size: usize) -> Result<EpochLog> {
    let set = PairSet::new(vae, clips)?;
    let order: Vec<usize> = (0..set.len).collect();
    let mut e = EpochLog::default();
    for idx in order.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let enc = vae.encoder.bind_constant(&mut g);
        let dec = vae.decoder.bind_constant(&mut g);
        let b = batch_loss(vae, &mut g, &enc, &dec, &set, idx, weights, None)?;
        accumulate(&mut e, b.parts, idx.len(), set.len);
    }
    Ok(e)
}

/// Mean root-frame joint position error (meters) of encode-mean/decode
/// round trips.
pub fn reconstruction_error(vae: &PoseVae, poses: &[Pose]) -> Result<f64> {
    if poses.is_empty() {
        return Err(Error::InsufficientData("no poses".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in poses.chunks(256) {
        let refs: Vec<&Pose> = chunk.iter().collect();
        let (mu, _) = vae.encode_batch(&refs)?;
        let decoded = vae.decode_batch(&mu)?;
        for (p, q) in chunk.iter().zip(&decoded) {
            let (a, b) = (forward_kinematics(p, &vae.skeleton)?, forward_kinematics(q, &vae.skeleton)?);
            sum += a.iter().zip(&b).map(|(u, v)| (*u - *v).norm()).sum::<f64>();
            count += a.len();
        }
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::relative_error;
    use crate::motion::{synth_motion, MotionKind};
    use rand::Rng;

    fn total(vae: &PoseVae, set: &PairSet, idx: &[usize], w: &VaeLossWeights, eps: &Tensor) -> f64 {
        let mut g = Graph::new();
        let enc = vae.encoder.bind_constant(&mut g);
        let dec = vae.decoder.bind_constant(&mut g);
        batch_loss(vae, &mut g, &enc, &dec, set, idx, w, Some(eps.clone())).unwrap().parts[0]
    }

    // The continuity term treats its inner gradient as a constant, so it
    // is excluded here: finite differences would see the second-order part.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let clip = synth_motion(MotionKind::WalkCycle, 0.2, 1).unwrap();
        let cfg = VaeConfig { latent_dim: 6, hidden: [16, 12] };
        let mut vae = PoseVae::new(clip.skeleton.clone(), cfg, 3).unwrap();
        vae.fit_standardization(&clip.frames).unwrap();
        // Nonzero heads so every parameter influences the loss.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in vae.encoder.iter_mut() {
            p.tensor.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        let set = PairSet::new(&vae, &[clip]).unwrap();
        let idx = [0, 3, 5];
        let eps = Tensor::new(vec![3, 6], (0..18).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let w = VaeLossWeights { c: 0.0, ..VaeLossWeights::default() };

        let mut g = Graph::new();
        let enc = vae.encoder.bind(&mut g);
        let dec = vae.decoder.bind(&mut g);
        let b = batch_loss(&vae, &mut g, &enc, &dec, &set, &idx, &w, Some(eps.clone())).unwrap();
        let mut grads = g.backward(b.total).unwrap();
        let ge = vae.encoder.collect_grads(&enc, &mut grads);
        let gd = vae.decoder.collect_grads(&dec, &mut grads);

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for probe in 0..50 {
            let on_encoder = probe % 2 == 0;
            let (store_len, grads) = if on_encoder { (vae.encoder.len(), &ge) } else { (vae.decoder.len(), &gd) };
            let pi = rng.gen_range(0..store_len);
            let ci = rng.gen_range(0..grads[pi].as_ref().unwrap().len());
            let analytic = grads[pi].as_ref().unwrap().data[ci];
            let mut eval = |delta: f64| {
                let mut m = vae.clone();
                let store = if on_encoder { &mut m.encoder } else { &mut m.decoder };
                store.get_mut(crate::autodiff::ParamId(pi)).tensor.data[ci] += delta;
                total(&m, &set, &idx, &w, &eps)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(relative_error(analytic, numeric, 1e-6));
        }
        assert!(worst <= 1e-3, "{worst}");
    }
}
