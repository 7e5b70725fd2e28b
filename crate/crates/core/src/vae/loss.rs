use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::kinematics::forward_kinematics;
use crate::pose::Pose;
use crate::skeleton::Skeleton;

use super::model::{canonical_vector, PoseDecoder};

/// Mean squared difference of the sign-canonicalized `J*4+3` vectors.
pub fn loss_q(x: &Pose, x_hat: &Pose) -> Result<f64> {
    let (a, b) = (canonical_vector(x), canonical_vector(x_hat));
    if a.len() != b.len() {
        return Err(Error::dim("pose vector", a.len(), b.len()));
    }
    Ok(a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64)
}

/// Mean squared difference of root-frame FK positions over `J*3` coordinates.
pub fn loss_fk(x: &Pose, x_hat: &Pose, sk: &Skeleton) -> Result<f64> {
    let (a, b) = (forward_kinematics(x, sk)?, forward_kinematics(x_hat, sk)?);
    Ok(a.iter().zip(&b).map(|(u, v)| (*u - *v).norm_squared()).sum::<f64>() / (3 * a.len()) as f64)
}

/// KL divergence from `N(mu, diag(sigma^2))` to the standard normal.
pub fn kld(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::dim("kld sigma", mu.len(), sigma.len()));
    }
    let mut s = 0.0;
    for (m, sd) in mu.iter().zip(sigma) {
        if !(*sd > 0.0) {
            return Err(Error::Domain {
                op: "kld",
                detail: format!("sigma must be positive, got {sd}"),
            });
        }
        let v = sd * sd;
        s += m * m + v - 1.0 - v.ln();
    }
    Ok(0.5 * s)
}

/// Reparameterized sample `mu + sigma * noise`.
pub fn sample_latent(mu: &[f64], sigma: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() || mu.len() != noise.len() {
        return Err(Error::dim("latent sample inputs", mu.len(), format!("{} and {}", sigma.len(), noise.len())));
    }
    Ok(mu.iter().zip(sigma).zip(noise).map(|((m, s), e)| m + s * e).collect())
}

/// Per-row gradient of `MSE(D(z_b), x_next_b)` with respect to `z` for a
/// batch `[B, L]`, with the decoder held constant.
pub(crate) fn continuity_gradient(dec: &dyn PoseDecoder, z: &Tensor, x_next: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let zv = g.variable(z.clone());
    let x_hat = dec.decode_frozen(&mut g, zv)?;
    let target = g.constant(x_next.clone());
    let mse = g.mse(x_hat, target)?;
    // The batch mean divides by B; scale back so each row sees its own MSE.
    let loss = g.scale(mse, z.shape[0] as f64);
    let mut grads = g.backward(loss)?;
    Ok(grads.take(zv).expect("latent is a variable"))
}

/// Continuity loss for one latent: take one gradient step on
/// `MSE(D(z), x_next)` and measure how well the stepped latent decodes to
/// `x_next`.
pub fn continuity_loss(dec: &dyn PoseDecoder, z: &[f64], x_next: &Pose) -> Result<f64> {
    let l = dec.latent_dim();
    if z.len() != l {
        return Err(Error::dim("latent", l, z.len()));
    }
    let zt = Tensor::new(vec![1, l], z.to_vec())?;
    let target = canonical_vector(x_next);
    let d = dec.skeleton().pose_dim();
    if target.len() != d {
        return Err(Error::dim("pose vector", d, target.len()));
    }
    let xt = Tensor::new(vec![1, d], target)?;
    let grad = continuity_gradient(dec, &zt, &xt)?;
    let stepped: Vec<f64> = zt.data.iter().zip(&grad.data).map(|(a, b)| a - b).collect();
    let mut g = Graph::new();
    let zs = g.constant(Tensor::new(vec![1, l], stepped)?);
    let x = dec.decode_frozen(&mut g, zs)?;
    let t = g.constant(xt);
    let m = g.mse(x, t)?;
    Ok(g.value(m).item())
}

/// `0.5 * sum(mu^2 + exp(lv) - 1 - lv) / B` for `[B, L]` inputs.
pub(crate) fn kld_graph(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    let b = g.shape(mu)[0] as f64;
    let m2 = g.square(mu);
    let v = g.exp(logvar);
    let s = g.add(m2, v)?;
    let s = g.sub(s, logvar)?;
    let s = g.shift(s, -1.0);
    let total = g.sum(s);
    Ok(g.scale(total, 0.5 / b))
}
