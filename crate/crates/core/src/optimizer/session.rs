use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::kinematics::{compose_root, global_joints};
use crate::math::{Quat, Vec3};
use crate::pose::{Pose, RootState, SparseInput};
use crate::skeleton::SensorRole;
use crate::temporal::{PredictorState, StepFeatures, TemporalPredictor};
use crate::vae::{PoseDecoder, PoseVae};

use super::constraint::{Constraint, ConstraintSet};
use super::loss::{build_loss, translation_free, Residual, ResidualUnit, RootAnchor};
use super::OptimizerConfig;

/// Latents with mean square above this are flagged as out of distribution.
const LATENT_OOD: f64 = 4.0;
/// An iteration raising the objective past this factor is rejected.
const OVERSHOOT: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Diagnostics {
    pub non_finite_gradient: bool,
    pub latent_out_of_distribution: bool,
    /// No temporal target was available for this frame.
    pub cold_predictor: bool,
}

/// One evaluated step of the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub loss: f64,
    pub objective: f64,
    pub step_scale: f64,
    pub accepted: bool,
}

/// Iteration trace of one optimized frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: u64,
    pub iterations: usize,
    /// `L_PO` of the warm start.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub trace: Vec<IterationRecord>,
    pub residuals: Vec<Residual>,
    pub converged: bool,
    pub diagnostics: Diagnostics,
    pub wall_time_ms: f64,
}

struct Eval {
    loss: f64,
    objective: f64,
    grad: Vec<f64>,
    x: Vec<f64>,
    residuals: Vec<Residual>,
}

/// Streaming reconstruction state for one character.
pub struct Session {
    decoder: Arc<dyn PoseDecoder + Send + Sync>,
    predictor: Option<Arc<TemporalPredictor>>,
    config: OptimizerConfig,
    z: Vec<f64>,
    root: RootState,
    predictor_state: PredictorState,
    constraints: ConstraintSet,
    frame: u64,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("frame", &self.frame)
            .field("root", &self.root)
            .field("constraints", &self.constraints)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Starts from latent `z_seed`, which encodes `seed_pose`; `root` is the
    /// world placement after the seed pose.
    pub fn new(
        decoder: Arc<dyn PoseDecoder + Send + Sync>,
        predictor: Option<Arc<TemporalPredictor>>,
        config: OptimizerConfig,
        z_seed: Vec<f64>,
        seed_pose: &Pose,
        root: RootState,
    ) -> Result<Self> {
        config.validate()?;
        let l = decoder.latent_dim();
        if z_seed.len() != l {
            return Err(Error::dim("seed latent", l, z_seed.len()));
        }
        if z_seed.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidLatent("seed latent is not finite".into()));
        }
        let mut predictor_state = PredictorState::default();
        if let Some(t) = &predictor {
            if t.latent_dim != l {
                return Err(Error::dim("predictor latent", l, t.latent_dim));
            }
            let sk = decoder.skeleton();
            let delta = seed_pose.root_increment();
            let before_rot = (root.world_rotation * delta.conjugate()).normalize()?;
            let before = RootState::new(before_rot, root.world_position - before_rot.rotate(seed_pose.root_displacement));
            let f = StepFeatures::from_frame(&z_seed, seed_pose, &before, sk, config.frame_rate)?;
            predictor_state = PredictorState::seeded(f);
        }
        Ok(Session {
            decoder,
            predictor,
            config,
            z: z_seed,
            root,
            predictor_state,
            constraints: ConstraintSet::new(),
            frame: 0,
        })
    }

    /// Seeds with the autoencoder's posterior mean of `seed_pose`.
    pub fn from_vae(
        vae: Arc<PoseVae>,
        predictor: Option<Arc<TemporalPredictor>>,
        config: OptimizerConfig,
        seed_pose: &Pose,
        root: RootState,
    ) -> Result<Self> {
        let (mu, _) = vae.encode(seed_pose)?;
        Session::new(vae, predictor, config, mu, seed_pose, root)
    }

    pub fn latent(&self) -> &[f64] {
        &self.z
    }

    pub fn root(&self) -> RootState {
        self.root
    }

    /// Index of the next frame to optimize.
    pub fn frame_index(&self) -> u64 {
        self.frame
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: OptimizerConfig) -> Result<()> {
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn predictor_state(&self) -> &PredictorState {
        &self.predictor_state
    }

    /// Applies constraint edits; they take effect from the next frame.
    pub fn edit_constraints(&mut self, add: Vec<Constraint>, remove: &[String]) -> Result<()> {
        self.constraints.edit(add, remove, self.decoder.skeleton())
    }

    fn evaluate(
        &self,
        z: &[f64],
        z_t: Option<&[f64]>,
        constraints: &[&Constraint],
        root: &RootState,
        anchor: &RootAnchor,
        lambda_t: f64,
    ) -> Result<Eval> {
        let l = z.len();
        let mut g = Graph::new();
        let zv = g.variable(Tensor::new(vec![1, l], z.to_vec())?);
        let x = self.decoder.decode_frozen(&mut g, zv)?;
        let sk = self.decoder.skeleton();
        let lg = build_loss(&mut g, x, constraints, sk, root, anchor, self.config.rotation_weight)?;
        let mut objective = lg.loss.map(|v| g.scale(v, self.config.lambda_po));
        if let (Some(t), true) = (z_t, lambda_t > 0.0) {
            let tv = g.constant(Tensor::new(vec![1, l], t.to_vec())?);
            let m = g.mse(zv, tv)?;
            let m = g.scale(m, lambda_t);
            objective = Some(match objective {
                Some(o) => g.add(o, m)?,
                None => m,
            });
        }
        let loss = lg.loss.map_or(0.0, |v| g.value(v).item());
        let x_val = g.value(x).data.clone();
        let (objective, grad) = match objective {
            Some(o) => {
                let grads = g.backward(o)?;
                let grad = grads.get(zv).map_or_else(|| vec![0.0; l], |t| t.data.clone());
                (g.value(o).item(), grad)
            }
            None => (0.0, vec![0.0; l]),
        };
        Ok(Eval {
            loss,
            objective,
            grad,
            x: x_val,
            residuals: lg.residuals,
        })
    }

    /// Previous root rotated about the hip so the warm start's sensor layout
    /// best matches the targets. Decoded increments are small, so without a
    /// hip rotation the root could otherwise not recover from drift.
    fn orientation_fit(&self, input: &SparseInput, anchor: &RootAnchor) -> Result<RootState> {
        let targets: Vec<(SensorRole, Vec3)> = input
            .signals
            .iter()
            .filter(|s| s.valid && s.role != SensorRole::Hip)
            .map(|s| (s.role, s.position))
            .collect();
        if anchor.rotation.is_some() || targets.len() < 2 {
            return Ok(self.root);
        }
        let sk = self.decoder.skeleton();
        let mut g = Graph::new();
        let zv = g.constant(Tensor::new(vec![1, self.z.len()], self.z.clone())?);
        let x = self.decoder.decode_frozen(&mut g, zv)?;
        let pose = Pose::from_vector(&g.value(x).data, sk.joint_count())?.normalized()?;
        let joints = global_joints(&pose, sk, &self.root)?;
        let hip = joints[0].0;
        let centre = anchor.position.unwrap_or(hip);
        let pairs = targets
            .into_iter()
            .map(|(role, t)| Ok((joints[sk.role_index(role)?].0 - hip, t - centre)))
            .collect::<Result<Vec<_>>>()?;
        let Some(turn) = best_rotation(&pairs) else {
            return Ok(self.root);
        };
        Ok(RootState::new((turn * self.root.world_rotation).normalize()?, self.root.world_position))
    }

    fn satisfied(&self, residuals: &[Residual]) -> bool {
        residuals.iter().all(|r| match r.unit {
            ResidualUnit::Meters => r.value <= self.config.eps_position,
            ResidualUnit::Degrees => r.value <= self.config.eps_rotation_deg,
        })
    }

    /// Runs the inner loop for the next frame, commits the latent and root
    /// placement, and returns the decoded pose with its iteration trace.
    pub fn optimize_frame(&mut self, input: &SparseInput) -> Result<(Pose, FrameReport)> {
        let started = Instant::now();
        let sk = self.decoder.skeleton().clone();
        input.validate(&sk)?;
        let i = self.frame;
        let z_t = match &self.predictor {
            Some(t) => t.advance(&mut self.predictor_state, i, &self.z)?,
            None => None,
        };
        let mut diagnostics = Diagnostics {
            cold_predictor: z_t.is_none(),
            ..Diagnostics::default()
        };
        let lambda_t = if z_t.is_some() { self.config.lambda_t } else { 0.0 };
        let anchor = RootAnchor::from_sparse(input)?;
        let sensors = ConstraintSet::from_sparse(input, self.config.sensor_weight);
        let all: Vec<&Constraint> = sensors.iter().chain(self.constraints.iter()).collect();
        let active = all.iter().any(|c| c.weight > 0.0);
        let follow_target = !active && lambda_t > 0.0;

        let base = self.orientation_fit(input, &anchor)?;
        let mut z = self.z.clone();
        let mut cur = self.evaluate(&z, z_t.as_deref(), &all, &base, &anchor, lambda_t)?;
        let initial_loss = cur.loss;
        let mut trace = Vec::new();
        let mut scale = 1.0;
        let mut iterations = 0;
        let finite = |e: &Eval| e.objective.is_finite() && e.grad.iter().all(|v| v.is_finite());
        if !finite(&cur) {
            diagnostics.non_finite_gradient = true;
        } else {
            while iterations < self.config.max_iterations {
                if !follow_target && self.satisfied(&cur.residuals) {
                    break;
                }
                if !active && lambda_t == 0.0 {
                    break;
                }
                let cand: Vec<f64> = z.iter().zip(&cur.grad).map(|(a, g)| a - scale * g).collect();
                iterations += 1;
                let next = match self.evaluate(&cand, z_t.as_deref(), &all, &base, &anchor, lambda_t) {
                    Ok(e) if finite(&e) => e,
                    Ok(_) | Err(Error::InvalidLatent(_)) | Err(Error::Degenerate(_)) | Err(Error::InvalidPose(_)) => {
                        diagnostics.non_finite_gradient = true;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                let accepted = next.objective <= OVERSHOOT * cur.objective;
                trace.push(IterationRecord {
                    loss: next.loss,
                    objective: next.objective,
                    step_scale: scale,
                    accepted,
                });
                if accepted {
                    z = cand;
                    cur = next;
                } else {
                    scale *= 0.5;
                }
            }
        }
        let converged = self.satisfied(&cur.residuals);

        let mut pose = Pose::from_vector(&cur.x, sk.joint_count())?.normalized()?;
        let prev = self.root;
        let placed = anchor.place(&base, &pose, translation_free(&all, &sk)?)?;
        let back = prev.world_rotation.conjugate();
        pose.joint_rotations[0] = (back * placed.world_rotation).normalize()?;
        pose.root_displacement = back.rotate(placed.world_position - prev.world_position);
        self.root = compose_root(&prev, &pose)?;
        if let Some(t) = &self.predictor {
            let f = StepFeatures::from_frame(&z, &pose, &prev, &sk, self.config.frame_rate)?;
            t.observe(&mut self.predictor_state, i, f);
        }
        let l = z.len() as f64;
        diagnostics.latent_out_of_distribution = z.iter().map(|v| v * v).sum::<f64>() / l > LATENT_OOD;
        self.z = z;
        self.frame += 1;
        let report = FrameReport {
            frame: i,
            iterations,
            initial_loss,
            final_loss: cur.loss,
            trace,
            residuals: cur.residuals,
            converged,
            diagnostics,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        Ok((pose, report))
    }
}

/// Rotation taking each `a` closest to its `b` in the least-squares sense,
/// as the dominant eigenvector of Horn's 4x4 matrix. `None` when the pairs do not determine a rotation.
fn best_rotation(pairs: &[(Vec3, Vec3)]) -> Option<Quat> {
    let mut m = [[0.0; 3]; 3];
    for (a, b) in pairs {
        let (a, b) = (a.to_array(), b.to_array());
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += a[i] * b[j];
            }
        }
    }
    let [[xx, xy, xz], [yx, yy, yz], [zx, zy, zz]] = m;
    let n = [
        [xx + yy + zz, yz - zy, zx - xz, xy - yx],
        [yz - zy, xx - yy - zz, xy + yx, zx + xz],
        [zx - xz, xy + yx, -xx + yy - zz, yz + zy],
        [xy - yx, zx + xz, yz + zy, -xx - yy + zz],
    ];
    // Shift so every eigenvalue is non-negative and the largest dominates,
    // then square repeatedly; any column of the power is the eigenvector.
    let shift: f64 = pairs.iter().map(|(a, b)| a.norm() * b.norm()).sum();
    if !(shift > 1e-12) || !shift.is_finite() {
        return None;
    }
    let mut p = n;
    for (i, row) in p.iter_mut().enumerate() {
        row[i] += shift;
    }
    for _ in 0..40 {
        let mut sq = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                sq[i][j] = (0..4).map(|k| p[i][k] * p[k][j]).sum();
            }
        }
        let scale = sq.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        if !(scale > 0.0) {
            return None;
        }
        p = sq.map(|row| row.map(|v| v / scale));
    }
    let col = |j: usize| [p[0][j], p[1][j], p[2][j], p[3][j]];
    let q = (0..4)
        .map(col)
        .max_by(|a, b| {
            let na: f64 = a.iter().map(|v| v * v).sum();
            let nb: f64 = b.iter().map(|v| v * v).sum();
            na.total_cmp(&nb)
        })
        .expect("four columns");
    Quat::new(q[0], q[1], q[2], q[3]).normalize().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_rotation_recovers_a_known_rotation() {
        let r = Quat::from_axis_angle(Vec3::new(0.3, 1.0, -0.2), 1.1);
        let pts = [Vec3::new(0.1, 0.6, 0.0), Vec3::new(0.4, 0.2, 0.1), Vec3::new(-0.3, -0.8, 0.2)];
        let pairs: Vec<(Vec3, Vec3)> = pts.iter().map(|p| (*p, r.rotate(*p))).collect();
        let q = best_rotation(&pairs).unwrap();
        assert!(q.angle_to(r) < 1e-9, "{}", q.angle_to(r));
        assert!(best_rotation(&[]).is_none());
    }
}
