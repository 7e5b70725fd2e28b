use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::pose::{Dof, SparseInput};
use crate::skeleton::Skeleton;

fn head() -> String {
    "head".into()
}

fn hip() -> String {
    "hip".into()
}

fn forward() -> Vec3 {
    Vec3::Z
}

/// Target payload of a constraint. Joints are named by sensor role
/// (`hip`, `left_hand`, ...) or by skeleton joint name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// World position of a joint.
    EndEffectorPosition { joint: String, target: Vec3 },
    /// World rotation of a joint.
    EndEffectorRotation { joint: String, target: Quat },
    /// Points the joint's local `axis` at a world point.
    LookAt {
        #[serde(default = "head")]
        joint: String,
        target: Vec3,
        #[serde(default = "forward")]
        axis: Vec3,
    },
    /// Keeps joints at the given world height.
    FloorProximity {
        joints: Vec<String>,
        #[serde(default)]
        height: f64,
    },
    /// Horizontal distance between the ground projections of two joints.
    GroundProjectionDistance {
        #[serde(default = "hip")]
        a: String,
        #[serde(default = "head")]
        b: String,
        #[serde(default)]
        distance: f64,
    },
    /// Euclidean distance between two joints.
    JointDistance { a: String, b: String, distance: f64 },
}

impl ConstraintKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintKind::EndEffectorPosition { .. } => "end_effector_position",
            ConstraintKind::EndEffectorRotation { .. } => "end_effector_rotation",
            ConstraintKind::LookAt { .. } => "look_at",
            ConstraintKind::FloorProximity { .. } => "floor_proximity",
            ConstraintKind::GroundProjectionDistance { .. } => "ground_projection_distance",
            ConstraintKind::JointDistance { .. } => "joint_distance",
        }
    }

    /// Joints this constraint reads, in payload order.
    pub fn joints(&self) -> Vec<&str> {
        match self {
            ConstraintKind::EndEffectorPosition { joint, .. }
            | ConstraintKind::EndEffectorRotation { joint, .. }
            | ConstraintKind::LookAt { joint, .. } => vec![joint],
            ConstraintKind::FloorProximity { joints, .. } => joints.iter().map(String::as_str).collect(),
            ConstraintKind::GroundProjectionDistance { a, b, .. } | ConstraintKind::JointDistance { a, b, .. } => vec![a, b],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(flatten)]
    pub kind: ConstraintKind,
}

fn one() -> f64 {
    1.0
}

impl Constraint {
    pub fn new(id: impl Into<String>, weight: f64, kind: ConstraintKind) -> Self {
        Constraint {
            id: id.into(),
            weight,
            kind,
        }
    }

    pub fn validate(&self, sk: &Skeleton) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("constraint id must not be empty".into()));
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::Config(format!("constraint `{}` has invalid weight {}", self.id, self.weight)));
        }
        for j in self.kind.joints() {
            sk.resolve(j)?;
        }
        let finite = match &self.kind {
            ConstraintKind::EndEffectorPosition { target, .. } => target.is_finite(),
            ConstraintKind::EndEffectorRotation { target, .. } => target.is_finite() && target.norm() > 0.0,
            ConstraintKind::LookAt { target, axis, .. } => target.is_finite() && axis.is_finite() && axis.norm() > 0.0,
            ConstraintKind::FloorProximity { joints, height } => !joints.is_empty() && height.is_finite(),
            ConstraintKind::GroundProjectionDistance { distance, .. } | ConstraintKind::JointDistance { distance, .. } => {
                distance.is_finite() && *distance >= 0.0
            }
        };
        if !finite {
            return Err(Error::Config(format!("constraint `{}` has an invalid target", self.id)));
        }
        Ok(())
    }
}

/// Ordered set of uniquely named constraints.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintSet {
    items: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        ConstraintSet::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.items.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Constraint> {
        self.items.iter().find(|c| c.id == id)
    }

    pub fn add(&mut self, c: Constraint) -> Result<()> {
        if self.get(&c.id).is_some() {
            return Err(Error::DuplicateConstraint(c.id));
        }
        self.items.push(c);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Result<Constraint> {
        let k = self
            .items
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::Config(format!("no constraint with id `{id}`")))?;
        Ok(self.items.remove(k))
    }

    /// Removes `remove` then adds `add`, all or nothing.
    pub fn edit(&mut self, add: Vec<Constraint>, remove: &[String], sk: &Skeleton) -> Result<()> {
        let mut next = self.clone();
        for id in remove {
            next.remove(id)?;
        }
        for c in add {
            c.validate(sk)?;
            next.add(c)?;
        }
        *self = next;
        Ok(())
    }

    /// Position (and, for 6-DoF, rotation) constraints for the valid
    /// signals of one frame. Invalid signals contribute nothing.
    pub fn from_sparse(input: &SparseInput, weight: f64) -> ConstraintSet {
        let mut items = Vec::new();
        for s in input.signals.iter().filter(|s| s.valid) {
            let role = s.role.as_str();
            items.push(Constraint::new(
                format!("sensor.{role}.position"),
                weight,
                ConstraintKind::EndEffectorPosition {
                    joint: role.into(),
                    target: s.position,
                },
            ));
            if s.dof == Dof::PosRot {
                items.push(Constraint::new(
                    format!("sensor.{role}.rotation"),
                    weight,
                    ConstraintKind::EndEffectorRotation {
                        joint: role.into(),
                        target: s.rotation,
                    },
                ));
            }
        }
        ConstraintSet { items }
    }
}
