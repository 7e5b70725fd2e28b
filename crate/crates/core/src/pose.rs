//! Pose, root state and sparse tracking input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::skeleton::{SensorRole, Skeleton};

/// Quaternion norm deviation tolerated before a pose is rejected.
pub const UNIT_TOLERANCE: f64 = 1e-3;

/// One frame: root-space joint rotations (index 0 holds the root's rotational
/// increment) plus the root displacement relative to the previous frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joint_rotations: Vec<Quat>,
    pub root_displacement: Vec3,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Pose {
            joint_rotations: vec![Quat::IDENTITY; joints],
            root_displacement: Vec3::ZERO,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_rotations.len()
    }

    /// Flat `J * 4 + 3` layout: quaternions `[w, x, y, z]` then displacement.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.joint_rotations.len() * 4 + 3);
        for q in &self.joint_rotations {
            v.extend_from_slice(&q.to_array());
        }
        v.extend_from_slice(&self.root_displacement.to_array());
        v
    }

    pub fn from_vector(v: &[f64], joints: usize) -> Result<Self> {
        if v.len() != joints * 4 + 3 {
            return Err(Error::dim("pose vector", joints * 4 + 3, v.len()));
        }
        let joint_rotations = v[..joints * 4]
            .chunks_exact(4)
            .map(|c| Quat::new(c[0], c[1], c[2], c[3]))
            .collect();
        let d = &v[joints * 4..];
        Ok(Pose {
            joint_rotations,
            root_displacement: Vec3::new(d[0], d[1], d[2]),
        })
    }

    /// Checks size against the skeleton and unit norms within [`UNIT_TOLERANCE`].
    pub fn validate(&self, sk: &Skeleton) -> Result<()> {
        if self.joint_rotations.len() != sk.joint_count() {
            return Err(Error::dim(
                "pose joints",
                sk.joint_count(),
                self.joint_rotations.len(),
            ));
        }
        for (i, q) in self.joint_rotations.iter().enumerate() {
            if !q.is_finite() || (q.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::InvalidPose(format!(
                    "joint {i} quaternion has norm {}",
                    q.norm()
                )));
            }
        }
        if !self.root_displacement.is_finite() {
            return Err(Error::InvalidPose("non-finite root displacement".into()));
        }
        Ok(())
    }

    /// Renormalized and sign-canonicalized copy.
    pub fn normalized(&self) -> Result<Pose> {
        Ok(Pose {
            joint_rotations: self
                .joint_rotations
                .iter()
                .map(|q| q.normalize().map(Quat::canonical))
                .collect::<Result<_>>()?,
            root_displacement: self.root_displacement,
        })
    }

    pub fn root_increment(&self) -> Quat {
        self.joint_rotations[0]
    }

    pub fn is_finite(&self) -> bool {
        self.joint_rotations.iter().all(|q| q.is_finite()) && self.root_displacement.is_finite()
    }
}

/// Accumulated global placement of the root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootState {
    pub world_rotation: Quat,
    pub world_position: Vec3,
}

impl Default for RootState {
    fn default() -> Self {
        RootState::IDENTITY
    }
}

impl RootState {
    pub const IDENTITY: RootState = RootState {
        world_rotation: Quat::IDENTITY,
        world_position: Vec3::ZERO,
    };

    pub fn new(world_rotation: Quat, world_position: Vec3) -> Self {
        RootState {
            world_rotation,
            world_position,
        }
    }

    /// Maps a root-space point into the world.
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.world_position + self.world_rotation.rotate(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dof {
    PosOnly,
    PosRot,
}

impl Dof {
    /// `3` → position only, `6` → position and rotation.
    pub fn from_count(n: u32) -> Result<Dof> {
        match n {
            3 => Ok(Dof::PosOnly),
            6 => Ok(Dof::PosRot),
            _ => Err(Error::Config(format!("dof must be 3 or 6, got {n}"))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Dof::PosOnly => 3,
            Dof::PosRot => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSignal {
    pub role: SensorRole,
    pub position: Vec3,
    pub rotation: Quat,
    pub dof: Dof,
    pub valid: bool,
}

/// Global positions and rotations of the tracked subset for one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseInput {
    pub signals: Vec<SparseSignal>,
}

impl SparseInput {
    pub fn validate(&self, sk: &Skeleton) -> Result<()> {
        if self.signals.len() > sk.joint_count() {
            return Err(Error::dim(
                "sparse signals",
                format!("at most {}", sk.joint_count()),
                self.signals.len(),
            ));
        }
        for (i, s) in self.signals.iter().enumerate() {
            if self.signals[..i].iter().any(|o| o.role == s.role) {
                return Err(Error::Config(format!("duplicate sensor role `{}`", s.role)));
            }
            sk.role_index(s.role)?;
        }
        Ok(())
    }

    pub fn get(&self, role: SensorRole) -> Option<&SparseSignal> {
        self.signals.iter().find(|s| s.role == role)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_round_trip() {
        let mut p = Pose::identity(3);
        p.joint_rotations[1] = Quat::rot_y(0.4);
        p.root_displacement = Vec3::new(0.1, 0.0, -0.2);
        let v = p.to_vector();
        assert_eq!(v.len(), 15);
        assert_eq!(Pose::from_vector(&v, 3).unwrap(), p);
        assert!(Pose::from_vector(&v[1..], 3).is_err());
    }

    #[test]
    fn validate_rejects_non_unit() {
        let sk = Skeleton::standard();
        let mut p = Pose::identity(22);
        p.validate(&sk).unwrap();
        p.joint_rotations[3] = Quat::new(1.01, 0.0, 0.0, 0.0);
        assert!(matches!(p.validate(&sk), Err(Error::InvalidPose(_))));
        assert!(Pose::identity(5).validate(&sk).is_err());
    }

    #[test]
    fn sparse_roles_unique() {
        let sk = Skeleton::standard();
        let sig = SparseSignal {
            role: SensorRole::Head,
            position: Vec3::ZERO,
            rotation: Quat::IDENTITY,
            dof: Dof::PosRot,
            valid: true,
        };
        let input = SparseInput {
            signals: vec![sig.clone(), sig],
        };
        assert!(input.validate(&sk).is_err());
    }
}
