use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::pose::{Dof, Pose, RootState, SparseInput};
use crate::skeleton::{SensorRole, Skeleton};
use crate::vae::PoseDecoder;

use super::constraint::{Constraint, ConstraintKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualUnit {
    Meters,
    Degrees,
}

/// Raw error of one constraint before weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub id: String,
    pub kind: String,
    pub unit: ResidualUnit,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    /// Number of scalar components the weighted sum is averaged over.
    pub components: usize,
    pub residuals: Vec<Residual>,
}

/// World placement of the root taken directly from a valid hip sensor
/// instead of the decoded increment and displacement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RootAnchor {
    pub position: Option<Vec3>,
    pub rotation: Option<Quat>,
}

impl RootAnchor {
    pub fn from_sparse(input: &SparseInput) -> Result<RootAnchor> {
        let Some(s) = input.get(SensorRole::Hip).filter(|s| s.valid) else {
            return Ok(RootAnchor::default());
        };
        let rotation = match s.dof {
            Dof::PosRot => Some(s.rotation.normalize()?),
            Dof::PosOnly => None,
        };
        Ok(RootAnchor {
            position: Some(s.position),
            rotation,
        })
    }

    /// Root placement after `prev` for a decoded pose, honoring the anchor.
    pub fn place(&self, prev: &RootState, pose: &Pose, translation_free: bool) -> Result<RootState> {
        let rot = match self.rotation {
            Some(r) => r,
            None => (prev.world_rotation * pose.root_increment()).normalize()?,
        };
        let pos = match self.position {
            Some(p) => p,
            None if translation_free => prev.world_position + prev.world_rotation.rotate(pose.root_displacement),
            None => prev.world_position,
        };
        Ok(RootState::new(rot, pos))
    }
}

/// Whether root translation follows the decoded displacement: only when a
/// position constraint acts on the root or a ground-projection constraint
/// is present.
pub(crate) fn translation_free(constraints: &[&Constraint], sk: &Skeleton) -> Result<bool> {
    for c in constraints.iter().filter(|c| c.weight > 0.0) {
        match &c.kind {
            ConstraintKind::EndEffectorPosition { joint, .. } if sk.resolve(joint)? == 0 => return Ok(true),
            ConstraintKind::GroundProjectionDistance { .. } => return Ok(true),
            _ => {}
        }
    }
    Ok(false)
}

pub(crate) struct LossGraph {
    /// `None` when no constraint has positive weight.
    pub loss: Option<Var>,
    pub components: usize,
    pub residuals: Vec<Residual>,
}

/// World-space joint quantities of a `[1, J*4+3]` pose vector.
struct Frame {
    world: Var,
    quats: Var,
    /// World rotation of the root.
    root_rot: Var,
}

fn quat_const(g: &mut Graph, q: Quat) -> Result<Var> {
    Ok(g.constant(Tensor::new(vec![1, 4], q.to_array().to_vec())?))
}

impl Frame {
    fn new(g: &mut Graph, x: Var, sk: &Skeleton, prev: &RootState, anchor: &RootAnchor, free: bool) -> Result<Frame> {
        let j = sk.joint_count();
        let fk = g.forward_kinematics(x, sk)?;
        let fk = g.reshape(fk, &[j, 3])?;
        let q = g.slice(x, 1, 0, 4 * j)?;
        let quats = g.reshape(q, &[j, 4])?;
        let delta = g.slice(quats, 0, 0, 1)?;
        let prev_rot = quat_const(g, prev.world_rotation)?;
        // FK output already carries the decoded increment; an anchored
        // rotation replaces it, so it is undone first.
        let (root_rot, carry) = match anchor.rotation {
            Some(r) => {
                let conj = g.constant(Tensor::new(vec![4], vec![1.0, -1.0, -1.0, -1.0])?);
                let inv = g.mul(delta, conj)?;
                let r = quat_const(g, r)?;
                (r, g.quat_mul(r, inv)?)
            }
            None => (g.quat_mul(prev_rot, delta)?, prev_rot),
        };
        let rotated = g.quat_rotate(carry, fk)?;
        let world = match anchor.position {
            Some(p) => {
                let p = g.constant(Tensor::new(vec![3], p.to_array().to_vec())?);
                g.add(rotated, p)?
            }
            None => {
                let mut offset = rotated;
                if free {
                    let disp = g.slice(x, 1, 4 * j, 4 * j + 3)?;
                    let disp = g.quat_rotate(prev_rot, disp)?;
                    let disp = g.reshape(disp, &[3])?;
                    offset = g.add(offset, disp)?;
                }
                let origin = g.constant(Tensor::new(vec![3], prev.world_position.to_array().to_vec())?);
                g.add(offset, origin)?
            }
        };
        Ok(Frame { world, quats, root_rot })
    }

    fn position(&self, g: &mut Graph, j: usize) -> Result<Var> {
        g.slice(self.world, 0, j, j + 1)
    }

    fn rotation(&self, g: &mut Graph, j: usize) -> Result<Var> {
        if j == 0 {
            return Ok(self.root_rot);
        }
        let q = g.slice(self.quats, 0, j, j + 1)?;
        g.quat_mul(self.root_rot, q)
    }
}

fn vec_const(g: &mut Graph, v: Vec3) -> Result<Var> {
    Ok(g.constant(Tensor::new(vec![1, 3], v.to_array().to_vec())?))
}

fn sq_norm(g: &mut Graph, v: Var) -> Var {
    let s = g.square(v);
    g.sum(s)
}

/// Weighted constraint loss over the pose vector `x` (`[1, J*4+3]`).
pub(crate) fn build_loss(
    g: &mut Graph,
    x: Var,
    constraints: &[&Constraint],
    sk: &Skeleton,
    prev: &RootState,
    anchor: &RootAnchor,
    rotation_weight: f64,
) -> Result<LossGraph> {
    let active: Vec<&Constraint> = constraints.iter().copied().filter(|c| c.weight > 0.0).collect();
    let free = translation_free(&active, sk)?;
    let frame = Frame::new(g, x, sk, prev, anchor, free)?;
    let mut total: Option<Var> = None;
    let mut components = 0usize;
    let mut residuals = Vec::with_capacity(active.len());
    for c in active {
        let (term, count, unit, value) = match &c.kind {
            ConstraintKind::EndEffectorPosition { joint, target } => {
                let p = frame.position(g, sk.resolve(joint)?)?;
                let t = vec_const(g, *target)?;
                let d = g.sub(p, t)?;
                let term = sq_norm(g, d);
                let r = g.value(term).item().sqrt();
                (term, 3, ResidualUnit::Meters, r)
            }
            ConstraintKind::EndEffectorRotation { joint, target } => {
                let r = frame.rotation(g, sk.resolve(joint)?)?;
                let t = target.normalize()?.conjugate();
                let t = g.constant(Tensor::new(vec![1, 4], t.to_array().to_vec())?);
                let e = g.quat_mul(t, r)?;
                let a = g.quat_angle_sq(e)?;
                let a = g.sum(a);
                let deg = g.value(a).item().sqrt().to_degrees();
                (g.scale(a, rotation_weight), 1, ResidualUnit::Degrees, deg)
            }
            ConstraintKind::LookAt { joint, target, axis } => {
                let j = sk.resolve(joint)?;
                let p = frame.position(g, j)?;
                let here = g.value(p).data.clone();
                let dir = (*target - Vec3::new(here[0], here[1], here[2])).normalize()?;
                let r = frame.rotation(g, j)?;
                let a = vec_const(g, axis.normalize()?)?;
                let f = g.quat_rotate(r, a)?;
                let fv = g.value(f).data.clone();
                let cos = (Vec3::new(fv[0], fv[1], fv[2]).dot(dir)).clamp(-1.0, 1.0);
                let d = vec_const(g, dir)?;
                let diff = g.sub(f, d)?;
                let term = sq_norm(g, diff);
                (g.scale(term, rotation_weight), 1, ResidualUnit::Degrees, cos.acos().to_degrees())
            }
            ConstraintKind::FloorProximity { joints, height } => {
                let mut sum: Option<Var> = None;
                let mut worst: f64 = 0.0;
                for name in joints {
                    let p = frame.position(g, sk.resolve(name)?)?;
                    let y = g.slice(p, 1, 1, 2)?;
                    let y = g.shift(y, -height);
                    worst = worst.max(g.value(y).item().abs());
                    let s = sq_norm(g, y);
                    sum = Some(match sum {
                        Some(acc) => g.add(acc, s)?,
                        None => s,
                    });
                }
                let term = sum.ok_or_else(|| Error::Config(format!("constraint `{}` names no joints", c.id)))?;
                (term, joints.len(), ResidualUnit::Meters, worst)
            }
            ConstraintKind::GroundProjectionDistance { a, b, distance } => {
                let pa = frame.position(g, sk.resolve(a)?)?;
                let pb = frame.position(g, sk.resolve(b)?)?;
                let d = g.sub(pb, pa)?;
                let dx = g.slice(d, 1, 0, 1)?;
                let dz = g.slice(d, 1, 2, 3)?;
                let h = g.concat(&[dx, dz], 1)?;
                let (term, r) = distance_term(g, h, *distance)?;
                (term, 1, ResidualUnit::Meters, r)
            }
            ConstraintKind::JointDistance { a, b, distance } => {
                let pa = frame.position(g, sk.resolve(a)?)?;
                let pb = frame.position(g, sk.resolve(b)?)?;
                let d = g.sub(pb, pa)?;
                let (term, r) = distance_term(g, d, *distance)?;
                (term, 1, ResidualUnit::Meters, r)
            }
        };
        let w = g.scale(term, c.weight);
        total = Some(match total {
            Some(acc) => g.add(acc, w)?,
            None => w,
        });
        components += count;
        residuals.push(Residual {
            id: c.id.clone(),
            kind: c.kind.name().into(),
            unit,
            value,
        });
    }
    let loss = total.map(|t| g.scale(t, 1.0 / components as f64));
    Ok(LossGraph {
        loss,
        components,
        residuals,
    })
}

/// `(|v| - d)^2` with a smoothed norm, and the raw `||v| - d|`.
fn distance_term(g: &mut Graph, v: Var, d: f64) -> Result<(Var, f64)> {
    let s = sq_norm(g, v);
    let s = g.shift(s, 1e-12);
    let n = g.sqrt(s)?;
    let e = g.shift(n, -d);
    let r = g.value(e).item().abs();
    Ok((g.square(e), r))
}

/// `L_PO` and per-constraint residuals for a decoded pose placed after `prev`.
pub fn assemble_loss(constraints: &[&Constraint], pose: &Pose, prev: &RootState, sk: &Skeleton, rotation_weight: f64) -> Result<LossReport> {
    pose.validate(sk)?;
    for c in constraints {
        c.validate(sk)?;
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, sk.pose_dim()], pose.to_vector())?);
    let lg = build_loss(&mut g, x, constraints, sk, prev, &RootAnchor::default(), rotation_weight)?;
    Ok(LossReport {
        loss: lg.loss.map_or(0.0, |l| g.value(l).item()),
        components: lg.components,
        residuals: lg.residuals,
    })
}

/// `MSE(z, z_t)` and its gradient `2 (z - z_t) / L`.
pub fn temporal_term(z: &[f64], z_t: &[f64]) -> Result<(f64, Vec<f64>)> {
    if z.len() != z_t.len() || z.is_empty() {
        return Err(Error::dim("temporal target", z.len(), z_t.len()));
    }
    let l = z.len() as f64;
    let value = z.iter().zip(z_t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / l;
    let grad = z.iter().zip(z_t).map(|(a, b)| 2.0 * (a - b) / l).collect();
    Ok((value, grad))
}

/// `L_PO` of the decoded latent `z` and its gradient with respect to `z`.
pub fn latent_loss(
    decoder: &dyn PoseDecoder,
    z: &[f64],
    constraints: &[&Constraint],
    prev: &RootState,
    anchor: &RootAnchor,
    rotation_weight: f64,
) -> Result<(LossReport, Vec<f64>)> {
    let sk = decoder.skeleton();
    for c in constraints {
        c.validate(sk)?;
    }
    let l = decoder.latent_dim();
    if z.len() != l {
        return Err(Error::dim("latent", l, z.len()));
    }
    let mut g = Graph::new();
    let zv = g.variable(Tensor::new(vec![1, l], z.to_vec())?);
    let x = decoder.decode_frozen(&mut g, zv)?;
    let lg = build_loss(&mut g, x, constraints, sk, prev, anchor, rotation_weight)?;
    let (loss, grad) = match lg.loss {
        Some(v) => {
            let grads = g.backward(v)?;
            let grad = grads.get(zv).map_or_else(|| vec![0.0; l], |t| t.data.clone());
            (g.value(v).item(), grad)
        }
        None => (0.0, vec![0.0; l]),
    };
    let report = LossReport {
        loss,
        components: lg.components,
        residuals: lg.residuals,
    };
    Ok((report, grad))
}
