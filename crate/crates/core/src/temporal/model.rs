use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Bound, Checkpoint, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{causal_mask, sinusoidal_positions, DecoderLayer, EncoderLayer, Linear};

use super::state::{PredictorState, StepFeatures, CONTEXT_EXTRA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    /// Frames per predictor step.
    pub n: usize,
    /// Past window in predictor steps.
    pub past: usize,
    /// Future window: predictions between encoder refreshes.
    pub future: usize,
    pub heads: usize,
    pub layers: usize,
    pub feature_dim: usize,
    pub ff_dim: usize,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        TemporalConfig {
            n: 4,
            past: 16,
            future: 16,
            heads: 4,
            layers: 3,
            feature_dim: 48,
            ff_dim: 2048,
        }
    }
}

impl TemporalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.past == 0 || self.future == 0 {
            return Err(Error::Config("n, past and future windows must be at least 1".into()));
        }
        if self.heads == 0 || self.feature_dim % self.heads != 0 || self.layers == 0 || self.ff_dim == 0 {
            return Err(Error::Config(format!(
                "feature dim {} must split across {} heads; layers and ff dim must be positive",
                self.feature_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Encoder-decoder transformer over latent sequences.
#[derive(Debug, Clone)]
pub struct TemporalPredictor {
    pub config: TemporalConfig,
    pub latent_dim: usize,
    /// Hash of the autoencoder checkpoint whose latents this model predicts.
    pub vae_hash: String,
    pub params: ParamStore,
    ctx_in: Linear,
    encoder: Vec<EncoderLayer>,
    dec_in: Linear,
    decoder: Vec<DecoderLayer>,
    head: Linear,
}

impl TemporalPredictor {
    /// Fresh model with a zero-initialized output head.
    pub fn new(config: TemporalConfig, latent_dim: usize, vae_hash: impl Into<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.feature_dim;
        let ctx_in = Linear::new(&mut params, "context_in", latent_dim + CONTEXT_EXTRA, d, &mut rng);
        let encoder = (0..config.layers)
            .map(|i| EncoderLayer::new(&mut params, &format!("encoder.{i}"), d, config.heads, config.ff_dim, &mut rng))
            .collect();
        let dec_in = Linear::new(&mut params, "decoder_in", latent_dim, d, &mut rng);
        let decoder = (0..config.layers)
            .map(|i| DecoderLayer::new(&mut params, &format!("decoder.{i}"), d, config.heads, config.ff_dim, &mut rng))
            .collect();
        let head = Linear::zeros(&mut params, "head", d, latent_dim);
        Ok(TemporalPredictor {
            config,
            latent_dim,
            vae_hash: vae_hash.into(),
            params,
            ctx_in,
            encoder,
            dec_in,
            decoder,
            head,
        })
    }

    /// `[B, W_p, L+9]` context rows to `[B, W_p, d]` memory.
    pub(crate) fn encode_graph(&self, g: &mut Graph, p: &Bound, ctx: Var) -> Result<Var> {
        let t = g.shape(ctx)[1];
        let x = self.ctx_in.forward(g, p, ctx)?;
        let pos = g.constant(sinusoidal_positions(t, self.config.feature_dim));
        let mut x = g.add(x, pos)?;
        for layer in &self.encoder {
            x = layer.forward(g, p, x)?;
        }
        Ok(x)
    }

    /// `[B, T, L]` decoder inputs to `[B, T, L]` predictions under a causal mask.
    pub(crate) fn decode_graph(&self, g: &mut Graph, p: &Bound, memory: Var, inputs: Var) -> Result<Var> {
        let t = g.shape(inputs)[1];
        let y = self.dec_in.forward(g, p, inputs)?;
        let pos = g.constant(sinusoidal_positions(t, self.config.feature_dim));
        let mut y = g.add(y, pos)?;
        let mask = g.constant(causal_mask(t));
        for layer in &self.decoder {
            y = layer.forward(g, p, y, memory, mask)?;
        }
        self.head.forward(g, p, y)
    }

    /// Context tensor `[1, W_p, L+9]` from the most recent history, padded
    /// at the front by repeating the earliest entry.
    pub(crate) fn context_tensor(&self, history: &[StepFeatures]) -> Result<Tensor> {
        let first = history.first().ok_or(Error::ColdStart)?;
        let w = self.config.past;
        let width = self.latent_dim + CONTEXT_EXTRA;
        let mut data = Vec::with_capacity(w * width);
        let start = history.len().saturating_sub(w);
        for _ in 0..w.saturating_sub(history.len()) {
            data.extend(first.to_vec());
        }
        for f in &history[start..] {
            if f.latent.len() != self.latent_dim {
                return Err(Error::dim("history latent", self.latent_dim, f.latent.len()));
            }
            data.extend(f.to_vec());
        }
        Tensor::new(vec![1, w, width], data)
    }

    /// Encoder memory `[1, W_p, d]` for a history of past steps.
    pub fn encode_context(&self, history: &[StepFeatures]) -> Result<Tensor> {
        let ctx = self.context_tensor(history)?;
        let mut g = Graph::new();
        let p = self.params.bind_constant(&mut g);
        let c = g.constant(ctx);
        let m = self.encode_graph(&mut g, &p, c)?;
        Ok(g.value(m).clone())
    }

    /// Rebuilds encoder memory and anchor, clearing pending predictions.
    pub fn refresh(&self, state: &mut PredictorState, anchor: &[f64]) -> Result<()> {
        if anchor.len() != self.latent_dim {
            return Err(Error::dim("anchor latent", self.latent_dim, anchor.len()));
        }
        let history: Vec<StepFeatures> = state.history.iter().cloned().collect();
        state.memory = Some(self.encode_context(&history)?);
        state.anchor = Some(anchor.to_vec());
        state.pending.clear();
        Ok(())
    }

    /// One autoregressive step over `(anchor, pending...)`; the result is
    /// appended to `pending`.
    pub fn predict_next(&self, state: &mut PredictorState) -> Result<Vec<f64>> {
        let (Some(memory), Some(anchor)) = (&state.memory, &state.anchor) else {
            return Err(Error::ColdStart);
        };
        if state.pending.len() >= self.config.future {
            return Err(Error::RefreshRequired);
        }
        let t = state.pending.len() + 1;
        let mut data = anchor.clone();
        for z in &state.pending {
            data.extend_from_slice(z);
        }
        let mut g = Graph::new();
        let p = self.params.bind_constant(&mut g);
        let mem = g.constant(memory.clone());
        let inputs = g.constant(Tensor::new(vec![1, t, self.latent_dim], data)?);
        let out = self.decode_graph(&mut g, &p, mem, inputs)?;
        let v = g.value(out);
        let z = v.data[(t - 1) * self.latent_dim..].to_vec();
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidLatent("predictor produced a non-finite latent".into()));
        }
        state.pending.push(z.clone());
        Ok(z)
    }

    /// Scheduling for frame `i`, called before the frame is optimized with
    /// the previous frame's latent `z_prev`. Fires the decoder when
    /// `i % n == 0` (refreshing first when `j % W_f == 0`) and returns the
    /// temporal target in effect, or `None` while the history is empty.
    pub fn advance(&self, state: &mut PredictorState, i: u64, z_prev: &[f64]) -> Result<Option<Vec<f64>>> {
        let n = self.config.n as u64;
        if i % n == 0 {
            if state.history.is_empty() {
                state.current = None;
                return Ok(None);
            }
            let (j, _) = super::indices(i, n, self.config.future as u64);
            if j % self.config.future as u64 == 0 || state.memory.is_none() {
                self.refresh(state, z_prev)?;
            }
            state.current = Some(self.predict_next(state)?);
        }
        Ok(state.current.clone())
    }

    /// Records the committed frame `i`; only frames on the predictor grid
    /// enter the history, which keeps the last `W_p` entries.
    pub fn observe(&self, state: &mut PredictorState, i: u64, features: StepFeatures) {
        if i % self.config.n as u64 == 0 {
            state.push_history(features, self.config.past);
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let metadata = json!({
            "kind": "temporal_predictor",
            "config": self.config,
            "latent_dim": self.latent_dim,
            "vae_hash": self.vae_hash,
        });
        Checkpoint::new(metadata, self.params.to_map())
    }

    /// Loads a predictor, refusing one trained against a different
    /// autoencoder checkpoint.
    pub fn from_checkpoint(c: &Checkpoint, vae_hash: &str) -> Result<Self> {
        let meta = &c.metadata;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("temporal_predictor") {
            return Err(Error::IncompatibleCheckpoint("not a temporal predictor checkpoint".into()));
        }
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("metadata lacks `{k}`")))
        };
        let stored: String = serde_json::from_value(field("vae_hash")?)?;
        if stored != vae_hash {
            return Err(Error::IncompatibleCheckpoint(format!(
                "predictor was trained against autoencoder {stored}, not {vae_hash}"
            )));
        }
        let config: TemporalConfig = serde_json::from_value(field("config")?)?;
        let latent_dim: usize = serde_json::from_value(field("latent_dim")?)?;
        let mut t = TemporalPredictor::new(config, latent_dim, stored, 0)
            .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        t.params.load_map(&c.tensors)?;
        Ok(t)
    }
}
