//! Forward kinematics over root-space rotations.
//!
//! Joint rotations are expressed in the root's frame, so a joint's children
//! are placed by rotating their offsets with that joint's own root-space
//! rotation; no composition along the chain is needed. The root's entry is
//! its per-frame increment: FK places the root at the origin and applies the
//! increment to the whole body, which keeps the result independent of the
//! motion history.

use crate::error::{Error, Result};
use crate::math::{DualQuat, Quat, Vec3};
use crate::pose::{Pose, RootState, UNIT_TOLERANCE};
use crate::skeleton::{SensorRole, Skeleton};

fn checked_rotations(p: &Pose, sk: &Skeleton) -> Result<Vec<Quat>> {
    if p.joint_rotations.len() != sk.joint_count() {
        return Err(Error::dim(
            "pose joints",
            sk.joint_count(),
            p.joint_rotations.len(),
        ));
    }
    p.joint_rotations
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let n = q.norm();
            if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
                Err(Error::InvalidPose(format!("joint {i} quaternion has norm {n}")))
            } else {
                Ok(q.scale(1.0 / n))
            }
        })
        .collect()
}

/// Joint positions with the root at the origin and an identity root rotation.
fn root_space_positions(rotations: &[Quat], sk: &Skeleton) -> Vec<Vec3> {
    let mut out = vec![Vec3::ZERO; rotations.len()];
    for (j, joint) in sk.joints().iter().enumerate().skip(1) {
        let p = joint.parent.expect("non-root joints have parents");
        let parent_rot = if p == 0 { Quat::IDENTITY } else { rotations[p] };
        out[j] = out[p] + parent_rot.rotate(joint.offset);
    }
    out
}

/// Root-frame joint positions: root at the origin, increment applied.
pub fn forward_kinematics(p: &Pose, sk: &Skeleton) -> Result<Vec<Vec3>> {
    let rotations = checked_rotations(p, sk)?;
    let delta = rotations[0];
    Ok(root_space_positions(&rotations, sk)
        .into_iter()
        .map(|v| delta.rotate(v))
        .collect())
}

/// Per-joint dual quaternions. Non-root joints pair their root-space rotation
/// with their FK position; the root pairs its increment with its displacement.
pub fn to_dual_quaternions(p: &Pose, sk: &Skeleton) -> Result<Vec<DualQuat>> {
    let positions = forward_kinematics(p, sk)?;
    let rotations = checked_rotations(p, sk)?;
    Ok(rotations
        .iter()
        .zip(&positions)
        .enumerate()
        .map(|(j, (q, t))| {
            let t = if j == 0 { p.root_displacement } else { *t };
            DualQuat::from_rotation_translation(*q, t)
        })
        .collect())
}

/// Flattened `J * 8` encoder input.
pub fn dual_quaternion_features(p: &Pose, sk: &Skeleton) -> Result<Vec<f64>> {
    Ok(to_dual_quaternions(p, sk)?
        .iter()
        .flat_map(|dq| dq.to_array())
        .collect())
}

/// Advances the root by one frame's increment and displacement.
pub fn compose_root(prev: &RootState, p: &Pose) -> Result<RootState> {
    let delta = p.root_increment();
    Ok(RootState {
        world_rotation: (prev.world_rotation * delta).normalize()?,
        world_position: prev.world_position + prev.world_rotation.rotate(p.root_displacement),
    })
}

/// Global positions and rotations of every joint for the frame that follows
/// `prev`.
pub fn global_joints(p: &Pose, sk: &Skeleton, prev: &RootState) -> Result<Vec<(Vec3, Quat)>> {
    let rotations = checked_rotations(p, sk)?;
    let world = compose_root(prev, p)?;
    let local = root_space_positions(&rotations, sk);
    Ok(local
        .iter()
        .zip(&rotations)
        .enumerate()
        .map(|(j, (pos, q))| {
            let rot = if j == 0 { world.world_rotation } else { world.world_rotation * *q };
            (world.apply(*pos), rot)
        })
        .collect())
}

/// Global position and rotation of the joints tracked by `roles`. `prev` is
/// the root state before this frame; the pose's own increment and
/// displacement are composed onto it.
pub fn sparse_fk(
    p: &Pose,
    sk: &Skeleton,
    roles: &[SensorRole],
    prev: &RootState,
) -> Result<Vec<(Vec3, Quat)>> {
    let indices = roles
        .iter()
        .map(|r| sk.role_index(*r))
        .collect::<Result<Vec<_>>>()?;
    let all = global_joints(p, sk, prev)?;
    Ok(indices.into_iter().map(|j| all[j]).collect())
}

/// Angle of `R0 * R1^T` in degrees, in `[0, 180]`.
pub fn rotation_angle_error(r0: Quat, r1: Quat) -> f64 {
    r0.angle_to(r1).to_degrees()
}
