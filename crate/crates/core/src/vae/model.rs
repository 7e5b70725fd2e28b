use std::collections::BTreeMap;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Bound, Checkpoint, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::kinematics::dual_quaternion_features;
use crate::motion::TARGET_FRAME_RATE;
use crate::nn::Linear;
use crate::pose::Pose;
use crate::skeleton::{LimbGroup, Skeleton};

use super::train::VaeLossWeights;

/// Smallest standard deviation used when standardizing encoder features.
const FEATURE_STD_FLOOR: f64 = 1e-2;
/// Smallest standard deviation used when de-standardizing decoder output.
const POSE_STD_FLOOR: f64 = 1e-3;

/// Maps latent dimensions to body parts. Ranges are contiguous and
/// partition `[0, L)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub ranges: BTreeMap<LimbGroup, Range<usize>>,
}

impl LatentLayout {
    /// Splits `dim` into six contiguous blocks in [`LimbGroup::ALL`] order,
    /// earlier groups taking the remainder.
    pub fn standard(dim: usize) -> Self {
        let n = LimbGroup::ALL.len();
        let (base, extra) = (dim / n, dim % n);
        let mut start = 0;
        let ranges = LimbGroup::ALL
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let len = base + usize::from(i < extra);
                let r = start..start + len;
                start += len;
                (*g, r)
            })
            .collect();
        LatentLayout { ranges }
    }

    pub fn dim(&self) -> usize {
        self.ranges.values().map(|r| r.end).max().unwrap_or(0)
    }

    pub fn range(&self, g: LimbGroup) -> Range<usize> {
        self.ranges.get(&g).cloned().unwrap_or(0..0)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let mut covered = vec![false; dim];
        for (g, r) in &self.ranges {
            for i in r.clone() {
                if i >= dim || covered[i] {
                    return Err(Error::Config(format!("latent layout range for {g:?} overlaps or exceeds {dim}")));
                }
                covered[i] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::Config("latent layout leaves dimensions unassigned".into()));
        }
        Ok(())
    }
}

/// Decoder view used by the pose optimizer and the continuity loss.
pub trait PoseDecoder {
    fn latent_dim(&self) -> usize;
    fn skeleton(&self) -> &Skeleton;
    /// Decodes `z` of shape `[B, L]` into pose vectors `[B, J*4+3]` with all
    /// decoder parameters held constant.
    fn decode_frozen(&self, g: &mut Graph, z: Var) -> Result<Var>;
}

/// `D(z) = z` over a skeleton whose pose dimension equals the latent size.
/// Useful for checking optimizer and continuity arithmetic in closed form.
#[derive(Debug, Clone)]
pub struct IdentityDecoder {
    pub skeleton: Skeleton,
}

impl PoseDecoder for IdentityDecoder {
    fn latent_dim(&self) -> usize {
        self.skeleton.pose_dim()
    }

    fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    fn decode_frozen(&self, _g: &mut Graph, z: Var) -> Result<Var> {
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: [usize; 2],
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 24,
            hidden: [256, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    fn fit(rows: &[Vec<f64>], floor: f64) -> Result<Self> {
        let (mean, std) = crate::motion::column_stats(rows)?;
        Ok(Standardizer {
            mean,
            std: std.into_iter().map(|s| s.max(floor)).collect(),
        })
    }
}

/// Encoder and decoder networks with their input and output standardization.
#[derive(Debug, Clone)]
pub struct PoseVae {
    pub config: VaeConfig,
    pub layout: LatentLayout,
    pub skeleton: Skeleton,
    pub encoder: ParamStore,
    pub decoder: ParamStore,
    enc_hidden: [Linear; 2],
    enc_mu: Linear,
    enc_logvar: Linear,
    dec_layers: [Linear; 3],
    features: Standardizer,
    output: Standardizer,
    loss_weights: Option<VaeLossWeights>,
}

impl PoseVae {
    /// Fresh network: Glorot hidden layers, zero-initialized mean and
    /// log-variance heads, identity standardization.
    pub fn new(skeleton: Skeleton, config: VaeConfig, seed: u64) -> Result<Self> {
        if config.latent_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::Config("latent and hidden sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = skeleton.joint_count() * 8;
        let d = skeleton.pose_dim();
        let [h1, h2] = config.hidden;
        let l = config.latent_dim;
        let mut encoder = ParamStore::new();
        let enc_hidden = [
            Linear::new(&mut encoder, "encoder.fc1", f, h1, &mut rng),
            Linear::new(&mut encoder, "encoder.fc2", h1, h2, &mut rng),
        ];
        let enc_mu = Linear::zeros(&mut encoder, "encoder.mu", h2, l);
        let enc_logvar = Linear::zeros(&mut encoder, "encoder.logvar", h2, l);
        let mut decoder = ParamStore::new();
        let dec_layers = [
            Linear::new(&mut decoder, "decoder.fc1", l, h2, &mut rng),
            Linear::new(&mut decoder, "decoder.fc2", h2, h1, &mut rng),
            Linear::new(&mut decoder, "decoder.out", h1, d, &mut rng),
        ];
        Ok(PoseVae {
            layout: LatentLayout::standard(l),
            config,
            encoder,
            decoder,
            enc_hidden,
            enc_mu,
            enc_logvar,
            dec_layers,
            features: Standardizer::identity(f),
            output: Standardizer::identity(d),
            skeleton,
            loss_weights: None,
        })
    }

    /// Fits feature and output standardization to training poses.
    pub fn fit_standardization(&mut self, poses: &[Pose]) -> Result<()> {
        let feats = poses
            .iter()
            .map(|p| dual_quaternion_features(p, &self.skeleton))
            .collect::<Result<Vec<_>>>()?;
        let vectors: Vec<Vec<f64>> = poses.iter().map(|p| canonical_vector(p)).collect();
        self.features = Standardizer::fit(&feats, FEATURE_STD_FLOOR)?;
        self.output = Standardizer::fit(&vectors, POSE_STD_FLOOR)?;
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub(crate) fn set_loss_weights(&mut self, w: VaeLossWeights) {
        self.loss_weights = Some(w);
    }

    /// Standardized encoder input rows for a batch of poses.
    pub(crate) fn feature_tensor(&self, poses: &[&Pose]) -> Result<Tensor> {
        let f = self.features.mean.len();
        let mut data = Vec::with_capacity(poses.len() * f);
        for p in poses {
            p.validate(&self.skeleton)?;
            let x = dual_quaternion_features(p, &self.skeleton)?;
            data.extend(x.iter().zip(&self.features.mean).zip(&self.features.std).map(|((v, m), s)| (v - m) / s));
        }
        Tensor::new(vec![poses.len(), f], data)
    }

    /// Encoder forward pass on standardized features `[B, J*8]`, returning
    /// `(mu, logvar)`.
    pub(crate) fn encode_graph(&self, g: &mut Graph, p: &Bound, feats: Var) -> Result<(Var, Var)> {
        let mut h = feats;
        for layer in &self.enc_hidden {
            h = layer.forward(g, p, h)?;
            h = g.elu(h);
        }
        Ok((self.enc_mu.forward(g, p, h)?, self.enc_logvar.forward(g, p, h)?))
    }

    /// Decoder forward pass with parameters bound in `p`.
    pub(crate) fn decode_graph(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        let mut h = z;
        for layer in &self.dec_layers[..2] {
            h = layer.forward(g, p, h)?;
            h = g.elu(h);
        }
        let y = self.dec_layers[2].forward(g, p, h)?;
        let d = self.output.mean.len();
        let std = g.constant(Tensor::new(vec![d], self.output.std.clone())?);
        let mean = g.constant(Tensor::new(vec![d], self.output.mean.clone())?);
        let y = g.mul(y, std)?;
        let y = g.add(y, mean)?;
        let q = d - 3;
        let quats = g.slice(y, 1, 0, q)?;
        let quats = g.quat_normalize(quats)?;
        let quats = g.sign_canonical(quats)?;
        let disp = g.slice(y, 1, q, d)?;
        g.concat(&[quats, disp], 1)
    }

    /// Mean and standard deviation of the approximate posterior for each pose.
    pub fn encode_batch(&self, poses: &[&Pose]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let p = self.encoder.bind_constant(&mut g);
        let x = g.constant(self.feature_tensor(poses)?);
        let (mu, lv) = self.encode_graph(&mut g, &p, x)?;
        let l = self.latent_dim();
        let mus = g.value(mu).data.chunks(l).map(<[f64]>::to_vec).collect();
        let sigmas = g
            .value(lv)
            .data
            .chunks(l)
            .map(|r| r.iter().map(|v| (0.5 * v).exp()).collect())
            .collect();
        Ok((mus, sigmas))
    }

    pub fn encode(&self, p: &Pose) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut m, mut s) = self.encode_batch(&[p])?;
        Ok((m.remove(0), s.remove(0)))
    }

    pub fn decode_batch(&self, zs: &[Vec<f64>]) -> Result<Vec<Pose>> {
        let l = self.latent_dim();
        let mut data = Vec::with_capacity(zs.len() * l);
        for z in zs {
            if z.len() != l {
                return Err(Error::dim("latent", l, z.len()));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidLatent("non-finite latent value".into()));
            }
            data.extend_from_slice(z);
        }
        let mut g = Graph::new();
        let z = g.constant(Tensor::new(vec![zs.len(), l], data)?);
        let x = self.decode_frozen(&mut g, z)?;
        let j = self.skeleton.joint_count();
        g.value(x).data.chunks(self.skeleton.pose_dim()).map(|r| Pose::from_vector(r, j)).collect()
    }

    pub fn decode(&self, z: &[f64]) -> Result<Pose> {
        Ok(self.decode_batch(&[z.to_vec()])?.remove(0))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = self.encoder.to_map();
        tensors.extend(self.decoder.to_map());
        let f = self.features.mean.len();
        let d = self.output.mean.len();
        tensors.insert("norm.feature_mean".into(), Tensor::new(vec![f], self.features.mean.clone())?);
        tensors.insert("norm.feature_std".into(), Tensor::new(vec![f], self.features.std.clone())?);
        tensors.insert("norm.output_mean".into(), Tensor::new(vec![d], self.output.mean.clone())?);
        tensors.insert("norm.output_std".into(), Tensor::new(vec![d], self.output.std.clone())?);
        let metadata = json!({
            "kind": "pose_vae",
            "joints": self.skeleton.joint_count(),
            "latent_dim": self.config.latent_dim,
            "hidden": self.config.hidden,
            "limb_layout": self.layout,
            "skeleton_hash": self.skeleton.hash(),
            "skeleton": self.skeleton,
            "loss_weights": self.loss_weights,
            "frame_rate": TARGET_FRAME_RATE,
        });
        Ok(Checkpoint::new(metadata, tensors))
    }

    /// Rebuilds a model from a checkpoint. When `expected` is given its hash
    /// must match the stored skeleton.
    pub fn from_checkpoint(c: &Checkpoint, expected: Option<&Skeleton>) -> Result<Self> {
        let meta = &c.metadata;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("pose_vae") {
            return Err(Error::IncompatibleCheckpoint("not a pose autoencoder checkpoint".into()));
        }
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("metadata lacks `{k}`")))
        };
        let skeleton: Skeleton = serde_json::from_value(field("skeleton")?)?;
        let hash: String = serde_json::from_value(field("skeleton_hash")?)?;
        if skeleton.hash() != hash {
            return Err(Error::IncompatibleCheckpoint("stored skeleton does not match its hash".into()));
        }
        if let Some(sk) = expected {
            if sk.hash() != hash {
                return Err(Error::IncompatibleCheckpoint("checkpoint was trained on a different skeleton".into()));
            }
        }
        let config = VaeConfig {
            latent_dim: serde_json::from_value(field("latent_dim")?)?,
            hidden: serde_json::from_value(field("hidden")?)?,
        };
        let layout: LatentLayout = serde_json::from_value(field("limb_layout")?)?;
        layout.validate(config.latent_dim).map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        let mut vae = PoseVae::new(skeleton, config, 0)?;
        vae.layout = layout;
        vae.loss_weights = serde_json::from_value(field("loss_weights")?)?;
        vae.encoder.load_map(&c.tensors)?;
        vae.decoder.load_map(&c.tensors)?;
        let get = |name: &str, len: usize| -> Result<Vec<f64>> {
            let t = c
                .tensors
                .get(name)
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing tensor `{name}`")))?;
            if t.data.len() != len {
                return Err(Error::IncompatibleCheckpoint(format!("tensor `{name}` has the wrong size")));
            }
            Ok(t.data.clone())
        };
        let (f, d) = (vae.features.mean.len(), vae.output.mean.len());
        vae.features = Standardizer {
            mean: get("norm.feature_mean", f)?,
            std: get("norm.feature_std", f)?,
        };
        vae.output = Standardizer {
            mean: get("norm.output_mean", d)?,
            std: get("norm.output_std", d)?,
        };
        Ok(vae)
    }
}

impl PoseDecoder for PoseVae {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    fn decode_frozen(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let p = self.decoder.bind_constant(g);
        self.decode_graph(g, &p, z)
    }
}

/// Pose vector with every quaternion sign-canonicalized.
pub(crate) fn canonical_vector(p: &Pose) -> Vec<f64> {
    let mut v = Vec::with_capacity(p.joint_rotations.len() * 4 + 3);
    for q in &p.joint_rotations {
        v.extend_from_slice(&q.canonical().to_array());
    }
    v.extend_from_slice(&p.root_displacement.to_array());
    v
}
