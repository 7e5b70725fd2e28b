use serde::{Deserialize, Serialize};

use super::MotionClip;
use crate::error::{Error, Result};
use crate::kinematics::global_joints;
use crate::math::Quat;
use crate::pose::{Dof, RootState, SparseInput, SparseSignal};
use crate::skeleton::SensorRole;

/// Sparse tracking input extracted from a clip, with the root state before
/// each frame kept alongside for reconstruction and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSequence {
    pub roles: Vec<SensorRole>,
    pub dof: Dof,
    pub frames: Vec<SparseInput>,
    pub prev_roots: Vec<RootState>,
}

impl SparseSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Default sensor placement for a given signal count.
pub fn default_roles(count: usize) -> Result<Vec<SensorRole>> {
    use SensorRole::*;
    Ok(match count {
        6 => vec![Hip, Head, LeftHand, RightHand, LeftFoot, RightFoot],
        5 => vec![Hip, Head, LeftHand, RightHand, RightFoot],
        4 => vec![Hip, Head, LeftHand, RightHand],
        3 => vec![Head, LeftHand, RightHand],
        _ => return Err(Error::Config(format!("no default placement for {count} sensors"))),
    })
}

/// Global sensor readings for every frame of `clip`. With [`Dof::PosOnly`]
/// rotations are replaced by the identity and carry no information.
pub fn make_sparse(clip: &MotionClip, roles: &[SensorRole], dof: Dof) -> Result<SparseSequence> {
    let indices = roles
        .iter()
        .map(|r| clip.skeleton.role_index(*r))
        .collect::<Result<Vec<_>>>()?;
    let prev_roots = clip.prev_root_states()?;
    let frames = clip
        .frames
        .iter()
        .zip(&prev_roots)
        .map(|(f, prev)| {
            let all = global_joints(f, &clip.skeleton, prev)?;
            Ok(SparseInput {
                signals: roles
                    .iter()
                    .zip(&indices)
                    .map(|(role, &j)| SparseSignal {
                        role: *role,
                        position: all[j].0,
                        rotation: match dof {
                            Dof::PosRot => all[j].1.canonical(),
                            Dof::PosOnly => Quat::IDENTITY,
                        },
                        dof,
                        valid: true,
                    })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseSequence {
        roles: roles.to_vec(),
        dof,
        frames,
        prev_roots,
    })
}
