use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::rotation_angle_error;
use crate::math::Vec3;
use crate::motion::MotionClip;
use crate::pose::Dof;
use crate::skeleton::SensorRole;

use super::FaultSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation; zero for an empty sample.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Stat::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub pos_cm: f64,
    pub rot_deg: f64,
    pub vel_cm_s: f64,
    pub ee_cm: f64,
}

/// Sensor setup a report was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDescriptor {
    pub name: String,
    pub roles: Vec<SensorRole>,
    pub dof: Dof,
    #[serde(default)]
    pub fault: Option<FaultSchedule>,
}

impl ScenarioDescriptor {
    pub fn new(name: impl Into<String>, roles: Vec<SensorRole>, dof: Dof) -> Self {
        ScenarioDescriptor {
            name: name.into(),
            roles,
            dof,
            fault: None,
        }
    }
}

/// Frames flagged by the optimizer during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiagnosticCounts {
    pub non_finite_gradient: usize,
    pub latent_out_of_distribution: usize,
    pub cold_predictor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: ScenarioDescriptor,
    pub pos_cm: Stat,
    pub rot_deg: Stat,
    pub vel_cm_s: Stat,
    pub ee_cm: Stat,
    /// Mean optimizer iterations per frame; 0 when not produced by a run.
    pub mean_iters: f64,
    pub diagnostics: DiagnosticCounts,
    pub frames: Vec<FrameMetrics>,
}

impl MetricsReport {
    /// Summary statistics over a set of per-frame metrics.
    pub fn from_frames(scenario: ScenarioDescriptor, frames: Vec<FrameMetrics>) -> MetricsReport {
        MetricsReport {
            scenario,
            pos_cm: Stat::of(frames.iter().map(|f| f.pos_cm)),
            rot_deg: Stat::of(frames.iter().map(|f| f.rot_deg)),
            vel_cm_s: Stat::of(frames.iter().map(|f| f.vel_cm_s)),
            ee_cm: Stat::of(frames.iter().map(|f| f.ee_cm)),
            mean_iters: 0.0,
            diagnostics: DiagnosticCounts::default(),
            frames,
        }
    }
}

fn velocities(pos: &[Vec<Vec3>], rate: f64) -> Vec<Vec<Vec3>> {
    let n = pos.len();
    (0..n)
        .map(|t| {
            let (a, b, dt) = match (t, n) {
                (_, 1) => (0, 0, 1.0),
                (0, _) => (0, 1, 1.0),
                (t, n) if t == n - 1 => (t - 1, t, 1.0),
                (t, _) => (t - 1, t + 1, 2.0),
            };
            pos[a].iter().zip(&pos[b]).map(|(p, q)| (*q - *p) * (rate / dt)).collect()
        })
        .collect()
}

/// Per-frame errors of `pred` against `gt`. Each predicted frame is first
/// translated so its root coincides with the ground truth root. Velocity is
/// the magnitude of the velocity-vector difference (central differences,
/// one-sided at the ends). End-effector error covers the given roles except
/// the hip.
pub fn compute_metrics(pred: &MotionClip, gt: &MotionClip, roles: &[SensorRole]) -> Result<Vec<FrameMetrics>> {
    if pred.len() != gt.len() {
        return Err(Error::dim("predicted clip frames", gt.len(), pred.len()));
    }
    if pred.skeleton.hash() != gt.skeleton.hash() {
        return Err(Error::InvalidSkeleton("predicted and ground truth skeletons differ".into()));
    }
    let sk = &gt.skeleton;
    let ee: Vec<usize> = roles
        .iter()
        .filter(|r| **r != SensorRole::Hip)
        .map(|r| sk.role_index(*r))
        .collect::<Result<_>>()?;
    let g = gt.global_positions()?;
    let p: Vec<Vec<Vec3>> = pred
        .global_positions()?
        .into_iter()
        .zip(&g)
        .map(|(f, gf)| {
            let shift = gf[0] - f[0];
            f.into_iter().map(|x| x + shift).collect()
        })
        .collect();
    let vp = velocities(&p, gt.frame_rate);
    let vg = velocities(&g, gt.frame_rate);
    let j = sk.joint_count() as f64;
    let mean_dist = |a: &[Vec3], b: &[Vec3]| a.iter().zip(b).map(|(x, y)| x.distance(*y)).sum::<f64>() / j;
    let out = (0..gt.len())
        .map(|t| {
            let rot = pred.frames[t]
                .joint_rotations
                .iter()
                .zip(&gt.frames[t].joint_rotations)
                .map(|(a, b)| rotation_angle_error(*a, *b))
                .sum::<f64>()
                / j;
            let ee_cm = if ee.is_empty() {
                0.0
            } else {
                100.0 * ee.iter().map(|&k| p[t][k].distance(g[t][k])).sum::<f64>() / ee.len() as f64
            };
            FrameMetrics {
                pos_cm: 100.0 * mean_dist(&p[t], &g[t]),
                rot_deg: rot,
                vel_cm_s: 100.0 * mean_dist(&vp[t], &vg[t]),
                ee_cm,
            }
        })
        .collect();
    Ok(out)
}
