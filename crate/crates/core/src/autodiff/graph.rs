use std::sync::Arc;

use super::kernels::{gemm, qmul, qmul_vjp, qrotate, qrotate_vjp};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::skeleton::Skeleton;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Unary {
    Square,
    Sqrt,
    Exp,
    Log,
    Tanh,
    Relu,
    Elu,
}

/// Skeleton tables captured by the FK node.
#[derive(Debug)]
pub(crate) struct FkTables {
    parents: Vec<usize>,
    offsets: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Permute { input: Var, axes: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Unary(Var, Unary),
    Softmax(Var),
    LayerNorm { input: Var, inv_std: Vec<f64> },
    QuatNormalize(Var),
    SignCanonical { input: Var, signs: Vec<f64> },
    QuatMul(Var, Var),
    QuatRotate(Var, Var),
    QuatAngleSq(Var),
    Mse(Var, Var),
    Fk { input: Var, tables: Arc<FkTables> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, which is
/// a topological order by construction.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by leaf handle.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn suffix_broadcast(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Pairing rule for blockwise quaternion ops: equal block counts or one side
/// holding a single block.
fn block_pairs(na: usize, nb: usize, what: &str) -> Result<usize> {
    if na == nb || nb == 1 || na == 1 {
        Ok(na.max(nb))
    } else {
        Err(Error::dim(what.to_string(), na, nb))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !suffix_broadcast(&ta.shape, &tb.shape) {
            return Err(Error::dim(
                format!("{name} operand"),
                format!("suffix of {:?}", ta.shape),
                format!("{:?}", tb.shape),
            ));
        }
        let nb = tb.len().max(1);
        let data = ta
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| f(*x, tb.data[i % nb]))
            .collect();
        let out = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(out, op, &[a, b]))
    }

    /// Elementwise sum; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Affine(a, s), &[a])
    }

    /// `a + c` for a constant `c`.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::Affine(a, 1.0), &[a])
    }

    /// `a[..., K] x b[K, N] -> [..., N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.shape.len() != 2 || ta.shape.is_empty() || ta.last_dim() != tb.shape[0] {
            return Err(Error::dim(
                "matmul",
                format!("[..., K] x [K, N] with lhs {:?}", ta.shape),
                format!("{:?}", tb.shape),
            ));
        }
        let (k, n) = (tb.shape[0], tb.shape[1]);
        let m = ta.len() / k.max(1);
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, &ta.data, false, &tb.data, false, &mut data, false);
        let mut shape = ta.shape.clone();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor { shape, data }, Op::MatMul(a, b), &[a, b]))
    }

    /// `[G, M, K] x [G, K, N]`, or `[G, N, K]` read transposed.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ok = ta.shape.len() == 3 && tb.shape.len() == 3 && ta.shape[0] == tb.shape[0];
        let (kb, n) = if ok {
            if transpose_b {
                (tb.shape[2], tb.shape[1])
            } else {
                (tb.shape[1], tb.shape[2])
            }
        } else {
            (0, 0)
        };
        if !ok || ta.shape[2] != kb {
            return Err(Error::dim(
                "batch_matmul",
                format!("batched operand compatible with {:?}", ta.shape),
                format!("{:?}", tb.shape),
            ));
        }
        let (g, m, k) = (ta.shape[0], ta.shape[1], ta.shape[2]);
        let mut data = vec![0.0; g * m * n];
        for i in 0..g {
            gemm(
                m,
                k,
                n,
                &ta.data[i * m * k..(i + 1) * m * k],
                false,
                &tb.data[i * k * n..(i + 1) * k * n],
                transpose_b,
                &mut data[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let out = Tensor {
            shape: vec![g, m, n],
            data,
        };
        Ok(self.push(out, Op::BatchMatMul { a, b, transpose_b }, &[a, b]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*inputs.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?)
            .shape
            .clone();
        if axis >= first.len() {
            return Err(Error::dim("concat axis", format!("< {}", first.len()), axis));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let same_rank = s.len() == first.len();
            if !same_rank || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(Error::dim("concat operand", format!("{first:?}"), format!("{s:?}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.shape.len() || start > end || end > t.shape[axis] {
            return Err(Error::dim(
                "slice",
                format!("range within axis {axis} of {:?}", t.shape),
                format!("{start}..{end}"),
            ));
        }
        let (outer, d, inner) = axis_split(&t.shape, axis);
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * d * inner;
            data.extend_from_slice(&t.data[base + start * inner..base + end * inner]);
        }
        let mut shape = t.shape.clone();
        shape[axis] = end - start;
        Ok(self.push(
            Tensor { shape, data },
            Op::Slice {
                input: a,
                axis,
                start,
            },
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let rank = t.shape.len();
        let mut seen = vec![false; rank];
        for &ax in axes {
            if ax >= rank || seen[ax] {
                return Err(Error::dim("permute axes", format!("permutation of 0..{rank}"), format!("{axes:?}")));
            }
            seen[ax] = true;
        }
        if axes.len() != rank {
            return Err(Error::dim("permute axes", rank, axes.len()));
        }
        let out = permute_tensor(t, axes);
        Ok(self.push(
            out,
            Op::Permute {
                input: a,
                axes: axes.to_vec(),
            },
            &[a],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    fn unary(&mut self, a: Var, u: Unary) -> Result<Var> {
        let t = self.value(a);
        if matches!(u, Unary::Sqrt | Unary::Log) {
            if let Some(bad) = t.data.iter().find(|x| !(**x > 0.0)) {
                let op = if u == Unary::Sqrt { "sqrt" } else { "log" };
                return Err(Error::Domain {
                    op,
                    detail: format!("argument {bad} is not positive"),
                });
            }
        }
        let f = |x: f64| match u {
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        };
        let out = t.map(f);
        Ok(self.push(out, Op::Unary(a, u), &[a]))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square).expect("square is total")
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sqrt)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh).expect("tanh is total")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu).expect("relu is total")
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Elu).expect("elu is total")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let mut data = t.data.clone();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let out = Tensor {
            shape: t.shape.clone(),
            data,
        };
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Zero-mean, unit-variance normalization over the last axis (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let mut data = t.data.clone();
        let mut inv_std = Vec::with_capacity(t.len() / c.max(1));
        for row in data.chunks_mut(c) {
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mu) * inv;
            }
            inv_std.push(inv);
        }
        let out = Tensor {
            shape: t.shape.clone(),
            data,
        };
        self.push(out, Op::LayerNorm { input: a, inv_std }, &[a])
    }

    fn quat_blocks(&self, a: Var, what: &str) -> Result<()> {
        let t = self.value(a);
        if t.shape.is_empty() || t.last_dim() % 4 != 0 {
            return Err(Error::dim(
                format!("{what} last axis (multiple of 4)"),
                "4k",
                t.last_dim(),
            ));
        }
        Ok(())
    }

    /// Divides every 4-block of the last axis by its norm.
    pub fn quat_normalize(&mut self, a: Var) -> Result<Var> {
        self.quat_blocks(a, "quat_normalize")?;
        let t = self.value(a);
        let mut data = t.data.clone();
        for q in data.chunks_mut(4) {
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if !(n >= crate::math::DEGENERATE_NORM) {
                return Err(Error::Degenerate(format!("quaternion block with norm {n:e}")));
            }
            q.iter_mut().for_each(|x| *x /= n);
        }
        let out = Tensor {
            shape: t.shape.clone(),
            data,
        };
        Ok(self.push(out, Op::QuatNormalize(a), &[a]))
    }

    /// Flips each 4-block to its canonical sign; the sign is held constant
    /// for differentiation.
    pub fn sign_canonical(&mut self, a: Var) -> Result<Var> {
        self.quat_blocks(a, "sign_canonical")?;
        let t = self.value(a);
        let mut data = t.data.clone();
        let mut signs = Vec::with_capacity(t.len() / 4);
        for q in data.chunks_mut(4) {
            let lead = q.iter().copied().find(|c| *c != 0.0).unwrap_or(0.0);
            let s = if lead < 0.0 { -1.0 } else { 1.0 };
            q.iter_mut().for_each(|x| *x *= s);
            signs.push(s);
        }
        let out = Tensor {
            shape: t.shape.clone(),
            data,
        };
        Ok(self.push(out, Op::SignCanonical { input: a, signs }, &[a]))
    }

    /// Blockwise Hamilton product of `[..., 4]` tensors. Either side may be a
    /// single quaternion that is applied to every block of the other.
    pub fn quat_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() % 4 != 0 || tb.len() % 4 != 0 || ta.last_dim() != 4 || tb.last_dim() != 4 {
            return Err(Error::dim("quat_mul operands", "[..., 4]", format!("{:?} and {:?}", ta.shape, tb.shape)));
        }
        let (na, nb) = (ta.len() / 4, tb.len() / 4);
        let n = block_pairs(na, nb, "quat_mul blocks")?;
        let mut data = Vec::with_capacity(n * 4);
        for i in 0..n {
            let qa = &ta.data[(i % na) * 4..(i % na) * 4 + 4];
            let qb = &tb.data[(i % nb) * 4..(i % nb) * 4 + 4];
            data.extend_from_slice(&qmul(qa, qb));
        }
        let shape = if na >= nb { ta.shape.clone() } else { tb.shape.clone() };
        Ok(self.push(Tensor { shape, data }, Op::QuatMul(a, b), &[a, b]))
    }

    /// Rotates `[..., 3]` vectors by `[..., 4]` quaternions blockwise.
    pub fn quat_rotate(&mut self, q: Var, v: Var) -> Result<Var> {
        let (tq, tv) = (self.value(q), self.value(v));
        if tq.last_dim() != 4 || tv.last_dim() != 3 || tq.shape.is_empty() || tv.shape.is_empty() {
            return Err(Error::dim("quat_rotate operands", "[..., 4] and [..., 3]", format!("{:?} and {:?}", tq.shape, tv.shape)));
        }
        let (nq, nv) = (tq.len() / 4, tv.len() / 3);
        let n = block_pairs(nq, nv, "quat_rotate blocks")?;
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            let qq = &tq.data[(i % nq) * 4..(i % nq) * 4 + 4];
            let vv = &tv.data[(i % nv) * 3..(i % nv) * 3 + 3];
            data.extend_from_slice(&qrotate(qq, [vv[0], vv[1], vv[2]]));
        }
        let shape = if nv >= nq {
            tv.shape.clone()
        } else {
            let mut s = tq.shape.clone();
            *s.last_mut().unwrap() = 3;
            s
        };
        Ok(self.push(Tensor { shape, data }, Op::QuatRotate(q, v), &[q, v]))
    }

    /// Squared geodesic angle (radians²) of each `[..., 4]` block from the
    /// identity; the result drops the last axis.
    pub fn quat_angle_sq(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.last_dim() != 4 || t.shape.is_empty() {
            return Err(Error::dim("quat_angle_sq operand", "[..., 4]", format!("{:?}", t.shape)));
        }
        let data = t
            .data
            .chunks(4)
            .map(|q| {
                let r = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
                let th = 2.0 * r.atan2(q[0].abs());
                th * th
            })
            .collect();
        let shape = t.shape[..t.shape.len() - 1].to_vec();
        Ok(self.push(Tensor { shape, data }, Op::QuatAngleSq(a), &[a]))
    }

    /// Mean squared difference of equally shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(Error::dim("mse operands", format!("{:?}", ta.shape), format!("{:?}", tb.shape)));
        }
        let n = ta.len().max(1) as f64;
        let s = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), &[a, b]))
    }

    /// Forward kinematics over a batch of pose vectors `[B, J*4+3]` giving
    /// root-frame positions `[B, J*3]`. Quaternions are expected unit-norm;
    /// the displacement entries are ignored.
    pub fn forward_kinematics(&mut self, x: Var, sk: &Skeleton) -> Result<Var> {
        let t = self.value(x);
        let j = sk.joint_count();
        if t.shape.len() != 2 || t.shape[1] != sk.pose_dim() {
            return Err(Error::dim("fk input", format!("[B, {}]", sk.pose_dim()), format!("{:?}", t.shape)));
        }
        let tables = Arc::new(FkTables {
            parents: sk
                .parents()
                .iter()
                .map(|p| p.unwrap_or(usize::MAX))
                .collect(),
            offsets: sk.offsets().iter().map(|o| o.to_array()).collect(),
        });
        let b = t.shape[0];
        let mut data = vec![0.0; b * j * 3];
        let mut rs = vec![[0.0; 3]; j];
        for (row, out) in t.data.chunks(j * 4 + 3).zip(data.chunks_mut(j * 3)) {
            fk_root_space(row, &tables, &mut rs);
            let delta = &row[0..4];
            for (k, p) in rs.iter().enumerate() {
                out[k * 3..k * 3 + 3].copy_from_slice(&qrotate(delta, *p));
            }
        }
        let out = Tensor {
            shape: vec![b, j * 3],
            data,
        };
        Ok(self.push(out, Op::Fk { input: x, tables }, &[x]))
    }

    /// Reverse pass from a one-element `loss`. Every leaf created with
    /// [`Graph::variable`] receives a gradient, zero when unreachable.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(&self.value(loss).shape, 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if matches!(n.op, Op::Leaf) && n.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(&n.value.shape));
            } else if !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Root-space positions (identity at the root) for one pose row.
fn fk_root_space(row: &[f64], tables: &FkTables, rs: &mut [[f64; 3]]) {
    rs[0] = [0.0; 3];
    for k in 1..rs.len() {
        let p = tables.parents[k];
        let off = tables.offsets[k];
        let r = if p == 0 {
            off
        } else {
            qrotate(&row[p * 4..p * 4 + 4], off)
        };
        rs[k] = [rs[p][0] + r[0], rs[p][1] + r[1], rs[p][2] + r[2]];
    }
}

pub(crate) fn permute_tensor(t: &Tensor, axes: &[usize]) -> Tensor {
    let rank = t.shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * t.shape[i + 1];
    }
    let shape: Vec<usize> = axes.iter().map(|a| t.shape[*a]).collect();
    let strides: Vec<usize> = axes.iter().map(|a| in_strides[*a]).collect();
    let mut data = Vec::with_capacity(t.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..t.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        data.push(t.data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor { shape, data }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Sums a gradient of `a`'s shape down to the broadcast operand's shape.
fn reduce_to(g: &[f64], n: usize, shape: &[usize]) -> Tensor {
    let mut out = vec![0.0; n];
    let n = n.max(1);
    for (i, v) in g.iter().enumerate() {
        out[i % n] += v;
    }
    Tensor {
        shape: shape.to_vec(),
        data: out,
    }
}

impl Graph {
    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                if rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if rg(*b) {
                    let tb = val(*b);
                    let mut r = reduce_to(&g.data, tb.len(), &tb.shape);
                    if matches!(node.op, Op::Sub(..)) {
                        r.data.iter_mut().for_each(|x| *x = -*x);
                    }
                    accumulate(grads, *b, r);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let nb = tb.len().max(1);
                if rg(*a) {
                    let d = g.data.iter().enumerate().map(|(k, x)| x * tb.data[k % nb]).collect();
                    accumulate(grads, *a, Tensor { shape: ta.shape.clone(), data: d });
                }
                if rg(*b) {
                    let prod: Vec<f64> = g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, reduce_to(&prod, tb.len(), &tb.shape));
                }
            }
            Op::Affine(a, s) => {
                accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (k, n) = (tb.shape[0], tb.shape[1]);
                let m = ta.len() / k.max(1);
                if rg(*a) {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, &g.data, false, &tb.data, true, &mut d, false);
                    accumulate(grads, *a, Tensor { shape: ta.shape.clone(), data: d });
                }
                if rg(*b) {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, &ta.data, true, &g.data, false, &mut d, false);
                    accumulate(grads, *b, Tensor { shape: tb.shape.clone(), data: d });
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (ta, tb) = (val(*a), val(*b));
                let (bs, m, k) = (ta.shape[0], ta.shape[1], ta.shape[2]);
                let n = g.shape[2];
                if rg(*a) {
                    let mut d = vec![0.0; bs * m * k];
                    for s in 0..bs {
                        gemm(
                            m,
                            n,
                            k,
                            &g.data[s * m * n..(s + 1) * m * n],
                            false,
                            &tb.data[s * k * n..(s + 1) * k * n],
                            !transpose_b,
                            &mut d[s * m * k..(s + 1) * m * k],
                            false,
                        );
                    }
                    accumulate(grads, *a, Tensor { shape: ta.shape.clone(), data: d });
                }
                if rg(*b) {
                    let mut d = vec![0.0; bs * k * n];
                    for s in 0..bs {
                        let ga = &g.data[s * m * n..(s + 1) * m * n];
                        let aa = &ta.data[s * m * k..(s + 1) * m * k];
                        let out = &mut d[s * k * n..(s + 1) * k * n];
                        if *transpose_b {
                            // dB[n, k] = g^T a
                            gemm(n, m, k, ga, true, aa, false, out, false);
                        } else {
                            gemm(k, m, n, aa, true, ga, false, out, false);
                        }
                    }
                    accumulate(grads, *b, Tensor { shape: tb.shape.clone(), data: d });
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_split(&g.shape, *axis);
                let total = g.shape[*axis];
                let mut offset = 0;
                for v in inputs {
                    let t = val(*v);
                    let w = t.shape[*axis] * inner;
                    if rg(*v) {
                        let mut d = Vec::with_capacity(t.len());
                        for o in 0..outer {
                            let base = o * total * inner + offset;
                            d.extend_from_slice(&g.data[base..base + w]);
                        }
                        accumulate(grads, *v, Tensor { shape: t.shape.clone(), data: d });
                    }
                    offset += w;
                }
            }
            Op::Slice { input, axis, start } => {
                let t = val(*input);
                let (outer, dim, inner) = axis_split(&t.shape, *axis);
                let w = g.shape[*axis] * inner;
                let mut d = vec![0.0; t.len()];
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    d[base..base + w].copy_from_slice(&g.data[o * w..(o + 1) * w]);
                }
                accumulate(grads, *input, Tensor { shape: t.shape.clone(), data: d });
            }
            Op::Reshape(a) => {
                let mut d = g.clone();
                d.shape = val(*a).shape.clone();
                accumulate(grads, *a, d);
            }
            Op::Permute { input, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (k, a) in axes.iter().enumerate() {
                    inverse[*a] = k;
                }
                accumulate(grads, *input, permute_tensor(g, &inverse));
            }
            Op::Sum(a) => {
                accumulate(grads, *a, Tensor::full(&val(*a).shape, g.item()));
            }
            Op::Mean(a) => {
                let t = val(*a);
                accumulate(grads, *a, Tensor::full(&t.shape, g.item() / t.len().max(1) as f64));
            }
            Op::Unary(a, u) => {
                let (x, y) = (val(*a), &node.value);
                let data = g
                    .data
                    .iter()
                    .zip(x.data.iter().zip(&y.data))
                    .map(|(g, (x, y))| {
                        g * match u {
                            Unary::Square => 2.0 * x,
                            Unary::Sqrt => 0.5 / y,
                            Unary::Exp => *y,
                            Unary::Log => 1.0 / x,
                            Unary::Tanh => 1.0 - y * y,
                            Unary::Relu => {
                                if *x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Elu => {
                                if *x > 0.0 {
                                    1.0
                                } else {
                                    y + 1.0
                                }
                            }
                        }
                    })
                    .collect();
                accumulate(grads, *a, Tensor { shape: x.shape.clone(), data });
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let c = y.last_dim();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(y.data.chunks(c)).zip(g.data.chunks(c)) {
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        dr[k] = yr[k] * (gr[k] - s);
                    }
                }
                accumulate(grads, *a, Tensor { shape: y.shape.clone(), data: d });
            }
            Op::LayerNorm { input, inv_std } => {
                let y = &node.value;
                let c = y.last_dim();
                let mut d = vec![0.0; y.len()];
                for (r, ((dr, yr), gr)) in d
                    .chunks_mut(c)
                    .zip(y.data.chunks(c))
                    .zip(g.data.chunks(c))
                    .enumerate()
                {
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for k in 0..c {
                        dr[k] = inv_std[r] * (gr[k] - mg - yr[k] * mgy);
                    }
                }
                accumulate(grads, *input, Tensor { shape: y.shape.clone(), data: d });
            }
            Op::QuatNormalize(a) => {
                let (x, y) = (val(*a), &node.value);
                let mut d = vec![0.0; x.len()];
                for ((dq, xq), (yq, gq)) in d
                    .chunks_mut(4)
                    .zip(x.data.chunks(4))
                    .zip(y.data.chunks(4).zip(g.data.chunks(4)))
                {
                    let n = xq.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yg: f64 = yq.iter().zip(gq).map(|(a, b)| a * b).sum();
                    for k in 0..4 {
                        dq[k] = (gq[k] - yq[k] * yg) / n;
                    }
                }
                accumulate(grads, *a, Tensor { shape: x.shape.clone(), data: d });
            }
            Op::SignCanonical { input, signs } => {
                let mut d = g.clone();
                for (q, s) in d.data.chunks_mut(4).zip(signs) {
                    q.iter_mut().for_each(|x| *x *= s);
                }
                accumulate(grads, *input, d);
            }
            Op::QuatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (na, nb) = (ta.len() / 4, tb.len() / 4);
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                for (k, gq) in g.data.chunks(4).enumerate() {
                    let (ia, ib) = ((k % na) * 4, (k % nb) * 4);
                    let (ga, gb) = qmul_vjp(&ta.data[ia..ia + 4], &tb.data[ib..ib + 4], gq);
                    for c in 0..4 {
                        da[ia + c] += ga[c];
                        db[ib + c] += gb[c];
                    }
                }
                if rg(*a) {
                    accumulate(grads, *a, Tensor { shape: ta.shape.clone(), data: da });
                }
                if rg(*b) {
                    accumulate(grads, *b, Tensor { shape: tb.shape.clone(), data: db });
                }
            }
            Op::QuatRotate(q, v) => {
                let (tq, tv) = (val(*q), val(*v));
                let (nq, nv) = (tq.len() / 4, tv.len() / 3);
                let mut dq = vec![0.0; tq.len()];
                let mut dv = vec![0.0; tv.len()];
                for (k, gv) in g.data.chunks(3).enumerate() {
                    let (iq, iv) = ((k % nq) * 4, (k % nv) * 3);
                    let vv = [tv.data[iv], tv.data[iv + 1], tv.data[iv + 2]];
                    let (a, b) = qrotate_vjp(&tq.data[iq..iq + 4], vv, [gv[0], gv[1], gv[2]]);
                    for c in 0..4 {
                        dq[iq + c] += a[c];
                    }
                    for c in 0..3 {
                        dv[iv + c] += b[c];
                    }
                }
                if rg(*q) {
                    accumulate(grads, *q, Tensor { shape: tq.shape.clone(), data: dq });
                }
                if rg(*v) {
                    accumulate(grads, *v, Tensor { shape: tv.shape.clone(), data: dv });
                }
            }
            Op::QuatAngleSq(a) => {
                let x = val(*a);
                let mut d = vec![0.0; x.len()];
                for ((dq, q), gk) in d.chunks_mut(4).zip(x.data.chunks(4)).zip(&g.data) {
                    let aw = q[0].abs();
                    let sw = if q[0] < 0.0 { -1.0 } else { 1.0 };
                    let r = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
                    let den = aw * aw + r * r;
                    if den == 0.0 {
                        continue;
                    }
                    let th = 2.0 * r.atan2(aw);
                    dq[0] = gk * 2.0 * th * (-2.0 * r / den) * sw;
                    // theta / r stays finite as r -> 0
                    let th_over_r = if r > 1e-12 { th / r } else { 2.0 / aw };
                    let c = gk * 4.0 * aw / den * th_over_r;
                    for k in 1..4 {
                        dq[k] = c * q[k];
                    }
                }
                accumulate(grads, *a, Tensor { shape: x.shape.clone(), data: d });
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let s = 2.0 * g.item() / ta.len().max(1) as f64;
                let diff: Vec<f64> = ta.data.iter().zip(&tb.data).map(|(x, y)| s * (x - y)).collect();
                if rg(*b) {
                    let neg = diff.iter().map(|x| -x).collect();
                    accumulate(grads, *b, Tensor { shape: tb.shape.clone(), data: neg });
                }
                if rg(*a) {
                    accumulate(grads, *a, Tensor { shape: ta.shape.clone(), data: diff });
                }
            }
            Op::Fk { input, tables } => {
                let x = val(*input);
                let j = tables.parents.len();
                let mut d = vec![0.0; x.len()];
                let mut rs = vec![[0.0; 3]; j];
                let mut sub = vec![[0.0; 3]; j];
                for ((row, drow), grow) in x
                    .data
                    .chunks(j * 4 + 3)
                    .zip(d.chunks_mut(j * 4 + 3))
                    .zip(g.data.chunks(j * 3))
                {
                    fk_root_space(row, tables, &mut rs);
                    let delta = &row[0..4];
                    for k in 0..j {
                        let gk = [grow[k * 3], grow[k * 3 + 1], grow[k * 3 + 2]];
                        let (dd, dp) = qrotate_vjp(delta, rs[k], gk);
                        for c in 0..4 {
                            drow[c] += dd[c];
                        }
                        sub[k] = dp;
                    }
                    for k in (1..j).rev() {
                        let p = tables.parents[k];
                        if p != 0 {
                            let (dq, _) = qrotate_vjp(&row[p * 4..p * 4 + 4], tables.offsets[k], sub[k]);
                            for c in 0..4 {
                                drow[p * 4 + c] += dq[c];
                            }
                        }
                        for c in 0..3 {
                            sub[p][c] += sub[k][c];
                        }
                    }
                }
                accumulate(grads, *input, Tensor { shape: x.shape.clone(), data: d });
            }
        }
    }
}
