//! Motion clips, BVH interchange, synthetic motion and dataset plumbing.

mod bvh;
mod dataset;
mod sparse;
mod synth;

pub use bvh::{parse_bvh, write_bvh};
pub(crate) use dataset::column_stats;
pub use dataset::{consecutive_pairs, load_manifest, DatasetStats, Manifest, ManifestEntry, Split};
pub use sparse::{default_roles, make_sparse, SparseSequence};
pub use synth::{synth_motion, MotionKind};

use crate::error::{Error, Result};
use crate::kinematics::{compose_root, global_joints};
use crate::math::{Quat, Vec3};
use crate::pose::{Pose, RootState};
use crate::skeleton::Skeleton;

/// Frame rate every clip is resampled to.
pub const TARGET_FRAME_RATE: f64 = 60.0;

/// A skeleton plus a pose sequence. `origin` is the global root placement at
/// frame 0, whose own increment is the identity with zero displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub skeleton: Skeleton,
    pub frames: Vec<Pose>,
    pub frame_rate: f64,
    pub origin: RootState,
}

impl MotionClip {
    /// Builds a clip from per-frame global root placements and parent-local
    /// joint rotations (index 0 ignored).
    pub fn from_global(
        skeleton: Skeleton,
        frame_rate: f64,
        roots: &[RootState],
        locals: &[Vec<Quat>],
    ) -> Result<MotionClip> {
        if roots.is_empty() || roots.len() != locals.len() {
            return Err(Error::InsufficientData(format!(
                "clip needs matching, non-empty root and rotation tracks ({} vs {})",
                roots.len(),
                locals.len()
            )));
        }
        let j = skeleton.joint_count();
        let mut frames = Vec::with_capacity(roots.len());
        for (t, (root, local)) in roots.iter().zip(locals).enumerate() {
            if local.len() != j {
                return Err(Error::dim("local rotations", j, local.len()));
            }
            let mut rs = vec![Quat::IDENTITY; j];
            for k in 1..j {
                let p = skeleton.parent(k).unwrap();
                rs[k] = (rs[p] * local[k]).normalize()?.canonical();
            }
            let (delta, disp) = if t == 0 {
                (Quat::IDENTITY, Vec3::ZERO)
            } else {
                let prev = &roots[t - 1];
                let inv = prev.world_rotation.conjugate();
                (
                    (inv * root.world_rotation).normalize()?.canonical(),
                    inv.rotate(root.world_position - prev.world_position),
                )
            };
            rs[0] = delta;
            frames.push(Pose {
                joint_rotations: rs,
                root_displacement: disp,
            });
        }
        Ok(MotionClip {
            skeleton,
            frames,
            frame_rate,
            origin: roots[0],
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.frames.len().saturating_sub(1)) as f64 / self.frame_rate
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InsufficientData("clip has no frames".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config(format!("frame rate must be positive, got {}", self.frame_rate)));
        }
        for f in &self.frames {
            f.validate(&self.skeleton)?;
        }
        Ok(())
    }

    /// Root state after composing each frame, starting from `origin`.
    pub fn root_states(&self) -> Result<Vec<RootState>> {
        let mut out = Vec::with_capacity(self.frames.len());
        let mut state = self.origin;
        for (t, f) in self.frames.iter().enumerate() {
            if t > 0 {
                state = compose_root(&state, f)?;
            }
            out.push(state);
        }
        Ok(out)
    }

    /// Root state in effect before each frame is composed.
    pub fn prev_root_states(&self) -> Result<Vec<RootState>> {
        let after = self.root_states()?;
        let mut out = Vec::with_capacity(after.len());
        out.push(self.origin);
        out.extend_from_slice(&after[..after.len().saturating_sub(1)]);
        // Frame 0 is the identity increment, so composing it onto the origin
        // leaves the origin unchanged.
        Ok(out)
    }

    /// Global joint positions for every frame.
    pub fn global_positions(&self) -> Result<Vec<Vec<Vec3>>> {
        self.frames
            .iter()
            .zip(self.prev_root_states()?)
            .map(|(f, prev)| Ok(global_joints(f, &self.skeleton, &prev)?.into_iter().map(|(p, _)| p).collect()))
            .collect()
    }

    /// Parent-local joint rotations of frame `t`; entry 0 is the root's
    /// global rotation.
    pub fn local_rotations(&self, t: usize, root_rotation: Quat) -> Vec<Quat> {
        let f = &self.frames[t];
        let mut out = vec![root_rotation; f.joint_rotations.len()];
        for k in 1..out.len() {
            let p = self.skeleton.parent(k).unwrap();
            let parent_rs = if p == 0 { Quat::IDENTITY } else { f.joint_rotations[p] };
            out[k] = parent_rs.conjugate() * f.joint_rotations[k];
        }
        out
    }

    /// Sub-clip of frames `start..end`; the new origin is the root state at
    /// `start`.
    pub fn slice(&self, start: usize, end: usize) -> Result<MotionClip> {
        if start >= end || end > self.frames.len() {
            return Err(Error::Config(format!("invalid frame range {start}..{end} of {}", self.frames.len())));
        }
        let roots = self.root_states()?;
        let mut frames = self.frames[start..end].to_vec();
        frames[0].joint_rotations[0] = Quat::IDENTITY;
        frames[0].root_displacement = Vec3::ZERO;
        Ok(MotionClip {
            skeleton: self.skeleton.clone(),
            frames,
            frame_rate: self.frame_rate,
            origin: roots[start],
        })
    }
}

impl MotionClip {
    /// Reorders joints to match `target` by name, keeping this clip's
    /// offsets and taking limb groups and sensor roles from `target`.
    /// Used after parsing a BVH whose depth-first joint order differs from
    /// the skeleton a model was trained on.
    pub fn conform_to(&self, target: &Skeleton) -> Result<MotionClip> {
        let n = target.joint_count();
        if self.skeleton.joint_count() != n {
            return Err(Error::dim("skeleton joints", n, self.skeleton.joint_count()));
        }
        let map = target
            .joints()
            .iter()
            .map(|j| {
                self.skeleton
                    .joint_index(&j.name)
                    .ok_or_else(|| Error::InvalidSkeleton(format!("joint `{}` not found in clip", j.name)))
            })
            .collect::<Result<Vec<usize>>>()?;
        let src = self.skeleton.joints();
        for (t, &s) in map.iter().enumerate() {
            let want = target.parent(t).map(|p| map[p]);
            if src[s].parent != want {
                return Err(Error::InvalidSkeleton(format!("joint `{}` has a different parent", src[s].name)));
            }
        }
        let joints = target
            .joints()
            .iter()
            .zip(&map)
            .map(|(j, &s)| crate::skeleton::Joint {
                name: j.name.clone(),
                parent: j.parent,
                offset: src[s].offset,
            })
            .collect();
        let skeleton = Skeleton::new(joints, target.limb_groups().clone(), target.end_effectors().clone())?;
        let frames = self
            .frames
            .iter()
            .map(|f| Pose {
                joint_rotations: map.iter().map(|&s| f.joint_rotations[s]).collect(),
                root_displacement: f.root_displacement,
            })
            .collect();
        Ok(MotionClip {
            skeleton,
            frames,
            frame_rate: self.frame_rate,
            origin: self.origin,
        })
    }
}
