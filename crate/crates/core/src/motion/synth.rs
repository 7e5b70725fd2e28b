use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MotionClip, TARGET_FRAME_RATE};
use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::pose::RootState;
use crate::skeleton::Skeleton;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    WalkCycle,
    ArmWave,
    Squat,
    PushupLike,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [
        MotionKind::WalkCycle,
        MotionKind::ArmWave,
        MotionKind::Squat,
        MotionKind::PushupLike,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MotionKind::WalkCycle => "walk_cycle",
            MotionKind::ArmWave => "arm_wave",
            MotionKind::Squat => "squat",
            MotionKind::PushupLike => "pushup_like",
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown motion kind `{s}`")))
    }
}

// Joint indices of the standard skeleton.
const L_HIP: usize = 1;
const R_HIP: usize = 2;
const SPINE1: usize = 3;
const L_KNEE: usize = 4;
const R_KNEE: usize = 5;
const SPINE2: usize = 6;
const L_ANKLE: usize = 7;
const R_ANKLE: usize = 8;
const NECK: usize = 12;
const HEAD: usize = 15;
const L_SHOULDER: usize = 16;
const R_SHOULDER: usize = 17;
const L_ELBOW: usize = 18;
const R_ELBOW: usize = 19;

fn deg(d: f64) -> f64 {
    d.to_radians()
}

/// Per-clip random style shared by all kinds: small constant posture offsets
/// on the spine and head.
struct Style {
    spine: f64,
    neck: f64,
    head_yaw: f64,
}

impl Style {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Style {
            spine: deg(rng.gen_range(-6.0..6.0)),
            neck: deg(rng.gen_range(-8.0..8.0)),
            head_yaw: deg(rng.gen_range(-15.0..15.0)),
        }
    }

    fn apply(&self, l: &mut [Quat]) {
        l[SPINE2] = Quat::rot_x(self.spine) * l[SPINE2];
        l[NECK] = Quat::rot_x(self.neck) * l[NECK];
        l[HEAD] = Quat::rot_y(self.head_yaw) * l[HEAD];
    }
}

/// Root-space joint positions (root at origin, identity root rotation) for
/// parent-local rotations.
fn body_positions(sk: &Skeleton, local: &[Quat]) -> Vec<Vec3> {
    let n = sk.joint_count();
    let mut rot = vec![Quat::IDENTITY; n];
    let mut pos = vec![Vec3::ZERO; n];
    for j in 1..n {
        let p = sk.parent(j).unwrap();
        pos[j] = pos[p] + rot[p].rotate(sk.joints()[j].offset);
        rot[j] = rot[p] * local[j];
    }
    pos
}

/// Generates `duration` seconds of procedural motion on the standard
/// skeleton at 60 Hz. The result depends only on `kind`, `duration` and
/// `seed`.
pub fn synth_motion(kind: MotionKind, duration: f64, seed: u64) -> Result<MotionClip> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::Config(format!("duration must be positive, got {duration}")));
    }
    let frames = ((duration * TARGET_FRAME_RATE).round() as usize).max(1);
    let sk = Skeleton::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let style = Style::sample(&mut rng);
    let heading = Quat::rot_y(rng.gen_range(0.0..TAU));
    let start = Vec3::new(rng.gen_range(-1.0..1.0), 0.0, rng.gen_range(-1.0..1.0));
    let n = sk.joint_count();
    let dt = 1.0 / TARGET_FRAME_RATE;

    let mut locals = Vec::with_capacity(frames);
    let mut roots = Vec::with_capacity(frames);
    match kind {
        MotionKind::WalkCycle => {
            let speed = rng.gen_range(1.0..1.5);
            // Stride frequency scales with speed; one cycle is two steps.
            let freq = speed / 1.4 * rng.gen_range(0.85..1.0);
            let swing = deg(rng.gen_range(18.0..28.0));
            let knee = deg(rng.gen_range(35.0..55.0));
            let arm = deg(rng.gen_range(10.0..25.0));
            let phase0 = rng.gen_range(0.0..TAU);
            for t in 0..frames {
                let phi = phase0 + TAU * freq * t as f64 * dt;
                let mut l = vec![Quat::IDENTITY; n];
                let (s, c) = phi.sin_cos();
                l[L_HIP] = Quat::rot_x(-swing * s);
                l[R_HIP] = Quat::rot_x(swing * s);
                l[L_KNEE] = Quat::rot_x(deg(5.0) + knee * (0.5 + 0.5 * c).powi(2));
                l[R_KNEE] = Quat::rot_x(deg(5.0) + knee * (0.5 - 0.5 * c).powi(2));
                l[L_ANKLE] = Quat::rot_x(-0.3 * swing * s);
                l[R_ANKLE] = Quat::rot_x(0.3 * swing * s);
                l[L_SHOULDER] = Quat::rot_x(arm * s) * Quat::rot_z(deg(-75.0));
                l[R_SHOULDER] = Quat::rot_x(-arm * s) * Quat::rot_z(deg(75.0));
                l[L_ELBOW] = Quat::rot_y(deg(-15.0));
                l[R_ELBOW] = Quat::rot_y(deg(15.0));
                l[SPINE1] = Quat::rot_y(deg(4.0) * s);
                style.apply(&mut l);
                let bob = 0.015 * (2.0 * phi).cos();
                let pos = start + heading.rotate(Vec3::new(0.0, bob, speed * t as f64 * dt));
                roots.push(RootState::new(heading, pos));
                locals.push(l);
            }
            // Lift the whole clip so the lowest ankle touches y = 0.
            let mut lowest = f64::INFINITY;
            for (r, l) in roots.iter().zip(&locals) {
                let p = body_positions(&sk, l);
                for a in [L_ANKLE, R_ANKLE] {
                    lowest = lowest.min(r.apply(p[a]).y);
                }
            }
            for r in &mut roots {
                r.world_position.y -= lowest;
            }
        }
        MotionKind::ArmWave => {
            let freq = rng.gen_range(0.6..1.4);
            let both = rng.gen_bool(0.5);
            let left = rng.gen_bool(0.5);
            let raise = deg(rng.gen_range(100.0..150.0));
            let amp = deg(rng.gen_range(20.0..40.0));
            let sway = deg(rng.gen_range(2.0..6.0));
            for t in 0..frames {
                let phi = TAU * freq * t as f64 * dt;
                let mut l = vec![Quat::IDENTITY; n];
                let wave = amp * phi.sin();
                let (wave_l, wave_r) = (left || both, !left || both);
                l[L_SHOULDER] = if wave_l {
                    Quat::rot_z(raise - deg(75.0))
                } else {
                    Quat::rot_z(deg(-75.0))
                };
                l[R_SHOULDER] = if wave_r {
                    Quat::rot_z(-(raise - deg(75.0)))
                } else {
                    Quat::rot_z(deg(75.0))
                };
                if wave_l {
                    l[L_ELBOW] = Quat::rot_z(deg(20.0) + wave);
                }
                if wave_r {
                    l[R_ELBOW] = Quat::rot_z(-deg(20.0) + wave);
                }
                l[SPINE1] = Quat::rot_z(sway * (0.5 * phi).sin());
                style.apply(&mut l);
                let p = body_positions(&sk, &l);
                let height = -p[L_ANKLE].y.min(p[R_ANKLE].y);
                roots.push(RootState::new(heading, start + Vec3::new(0.0, height, 0.0)));
                locals.push(l);
            }
        }
        MotionKind::Squat => {
            let freq = rng.gen_range(0.25..0.5);
            let depth = deg(rng.gen_range(50.0..85.0));
            let lean = rng.gen_range(0.3..0.6);
            let arms_forward = rng.gen_bool(0.5);
            for t in 0..frames {
                let phi = TAU * freq * t as f64 * dt;
                let a = depth * 0.5 * (1.0 - phi.cos());
                let mut l = vec![Quat::IDENTITY; n];
                l[L_HIP] = Quat::rot_x(-a);
                l[R_HIP] = Quat::rot_x(-a);
                l[L_KNEE] = Quat::rot_x(2.0 * a);
                l[R_KNEE] = Quat::rot_x(2.0 * a);
                l[L_ANKLE] = Quat::rot_x(-a);
                l[R_ANKLE] = Quat::rot_x(-a);
                l[SPINE1] = Quat::rot_x(lean * a);
                if arms_forward {
                    let lift = 0.5 + 0.5 * (1.0 - phi.cos()) * 0.5;
                    l[L_SHOULDER] = Quat::rot_y(-deg(90.0) * lift) * Quat::rot_z(deg(-75.0) * (1.0 - lift));
                    l[R_SHOULDER] = Quat::rot_y(deg(90.0) * lift) * Quat::rot_z(deg(75.0) * (1.0 - lift));
                } else {
                    l[L_SHOULDER] = Quat::rot_z(deg(-70.0));
                    l[R_SHOULDER] = Quat::rot_z(deg(70.0));
                }
                style.apply(&mut l);
                let p = body_positions(&sk, &l);
                let height = -p[L_ANKLE].y.min(p[R_ANKLE].y);
                roots.push(RootState::new(heading, start + Vec3::new(0.0, height, 0.0)));
                locals.push(l);
            }
        }
        MotionKind::PushupLike => {
            let freq = rng.gen_range(0.3..0.6);
            let flex = deg(rng.gen_range(50.0..80.0));
            let prone = heading * Quat::rot_x(PI / 2.0);
            for t in 0..frames {
                let phi = TAU * freq * t as f64 * dt;
                let b = 0.5 * (1.0 - phi.cos());
                let mut l = vec![Quat::IDENTITY; n];
                // Arms point along the facing direction, which is world down
                // once the body is prone; elbows bend as the chest lowers.
                l[L_SHOULDER] = Quat::rot_x(0.5 * flex * b) * Quat::rot_y(-deg(90.0));
                l[R_SHOULDER] = Quat::rot_x(0.5 * flex * b) * Quat::rot_y(deg(90.0));
                l[L_ELBOW] = Quat::rot_y(-2.0 * flex * b);
                l[R_ELBOW] = Quat::rot_y(2.0 * flex * b);
                l[L_ANKLE] = Quat::rot_x(deg(60.0));
                l[R_ANKLE] = Quat::rot_x(deg(60.0));
                style.apply(&mut l);
                let p = body_positions(&sk, &l);
                let lowest = p.iter().map(|v| prone.rotate(*v).y).fold(f64::INFINITY, f64::min);
                roots.push(RootState::new(prone, start + Vec3::new(0.0, -lowest, 0.0)));
                locals.push(l);
            }
        }
    }
    MotionClip::from_global(sk, TARGET_FRAME_RATE, &roots, &locals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_follows_duration() {
        assert_eq!(synth_motion(MotionKind::WalkCycle, 10.0, 1).unwrap().len(), 600);
        assert!(synth_motion(MotionKind::Squat, 0.0, 1).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MotionKind::ALL {
            assert_eq!(k.as_str().parse::<MotionKind>().unwrap(), k);
        }
        assert!("dance".parse::<MotionKind>().is_err());
    }
}
