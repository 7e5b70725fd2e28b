//! Layers built from autodiff primitives.

use rand::Rng;

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Glorot-uniform weight, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Linear { w, b, fan_in, fan_out }
    }

    /// All-zero weight and bias: the layer outputs zeros until trained.
    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.w))?;
        g.add(y, p.var(self.b))
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, LAYER_NORM_EPS);
        let s = g.mul(n, p.var(self.gain))?;
        g.add(s, p.var(self.bias))
    }
}

/// Multi-head scaled dot-product attention on `[B, T, d]` sequences.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "feature dim must split evenly across heads");
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            heads,
            dim,
        }
    }

    /// `[B, T, d] -> [B*H, T, d/H]`.
    fn split(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, t) = (s[0], s[1]);
        let dh = self.dim / self.heads;
        let r = g.reshape(x, &[b, t, self.heads, dh])?;
        let r = g.permute(r, &[0, 2, 1, 3])?;
        g.reshape(r, &[b * self.heads, t, dh])
    }

    fn merge(&self, g: &mut Graph, x: Var, b: usize) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (t, dh) = (s[1], s[2]);
        let r = g.reshape(x, &[b, self.heads, t, dh])?;
        let r = g.permute(r, &[0, 2, 1, 3])?;
        g.reshape(r, &[b, t, self.dim])
    }

    /// Returns the attended output and the `[B*H, Tq, Tk]` attention weights.
    /// `mask` is an additive `[Tq, Tk]` constant.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        query: Var,
        memory: Var,
        mask: Option<Var>,
    ) -> Result<(Var, Var)> {
        let b = g.shape(query)[0];
        let q = self.q.forward(g, p, query)?;
        let k = self.k.forward(g, p, memory)?;
        let v = self.v.forward(g, p, memory)?;
        let (q, k, v) = (self.split(g, q)?, self.split(g, k)?, self.split(g, v)?);
        let scores = g.batch_matmul(q, k, true)?;
        let dh = (self.dim / self.heads) as f64;
        let mut scores = g.scale(scores, 1.0 / dh.sqrt());
        if let Some(m) = mask {
            scores = g.add(scores, m)?;
        }
        let att = g.softmax(scores);
        let ctx = g.batch_matmul(att, v, false)?;
        let ctx = self.merge(g, ctx, b)?;
        Ok((self.out.forward(g, p, ctx)?, att))
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.relu(h);
        self.down.forward(g, p, h)
    }
}

/// Post-norm encoder layer: `x = LN(x + SA(x)); x = LN(x + FF(x))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ff: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ff: usize, rng: &mut impl Rng) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, ff, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (a, _) = self.attn.forward(g, p, x, x, None)?;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, p, x)?;
        let f = self.ff.forward(g, p, x)?;
        let x = g.add(x, f)?;
        self.norm2.forward(g, p, x)
    }
}

/// Post-norm decoder layer with causal self-attention and cross-attention.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ff: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ff: usize, rng: &mut impl Rng) -> Self {
        DecoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads, rng),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, ff, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, memory: Var, mask: Var) -> Result<Var> {
        let (a, _) = self.self_attn.forward(g, p, x, x, Some(mask))?;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, p, x)?;
        let (c, _) = self.cross_attn.forward(g, p, x, memory, None)?;
        let x = g.add(x, c)?;
        let x = self.norm2.forward(g, p, x)?;
        let f = self.ff.forward(g, p, x)?;
        let x = g.add(x, f)?;
        self.norm3.forward(g, p, x)
    }
}

/// Fixed sinusoidal position table `[len, dim]`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * rate;
            data[pos * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor {
        shape: vec![len, dim],
        data,
    }
}

/// Additive `[t, t]` mask hiding future positions.
pub fn causal_mask(t: usize) -> Tensor {
    let mut data = vec![0.0; t * t];
    for r in 0..t {
        for c in r + 1..t {
            data[r * t + c] = -1e9;
        }
    }
    Tensor {
        shape: vec![t, t],
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_rows_sum_to_one_and_mask_hides_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 2, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let data = (0..2 * 5 * 8).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let x = g.constant(Tensor::new(vec![2, 5, 8], data).unwrap());
        let m = g.constant(causal_mask(5));
        let (out, att) = mha.forward(&mut g, &p, x, x, Some(m)).unwrap();
        assert_eq!(g.shape(out), &[2, 5, 8]);
        let a = g.value(att);
        for r in 0..a.len() / 5 {
            let row = a.row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let t = r % 5;
            assert!(row[t + 1..].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn positions_are_distinct() {
        let pe = sinusoidal_positions(16, 48);
        assert_eq!(pe.row(0)[0], 0.0);
        assert_eq!(pe.row(0)[1], 1.0);
        assert_ne!(pe.row(1), pe.row(2));
    }
}
