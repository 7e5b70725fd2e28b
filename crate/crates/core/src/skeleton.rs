//! Joint hierarchy, limb grouping and sensor-role mapping.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimbGroup {
    Root,
    SpineHead,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

impl LimbGroup {
    pub const ALL: [LimbGroup; 6] = [
        LimbGroup::Root,
        LimbGroup::SpineHead,
        LimbGroup::LeftArm,
        LimbGroup::RightArm,
        LimbGroup::LeftLeg,
        LimbGroup::RightLeg,
    ];

    /// The four limbs perturbed by latent limb noise.
    pub const LIMBS: [LimbGroup; 4] = [
        LimbGroup::LeftArm,
        LimbGroup::RightArm,
        LimbGroup::LeftLeg,
        LimbGroup::RightLeg,
    ];
}

/// Body location a tracking signal is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorRole {
    Hip,
    Head,
    LeftHand,
    RightHand,
    LeftFoot,
    RightFoot,
}

impl SensorRole {
    pub const ALL: [SensorRole; 6] = [
        SensorRole::Hip,
        SensorRole::Head,
        SensorRole::LeftHand,
        SensorRole::RightHand,
        SensorRole::LeftFoot,
        SensorRole::RightFoot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SensorRole::Hip => "hip",
            SensorRole::Head => "head",
            SensorRole::LeftHand => "left_hand",
            SensorRole::RightHand => "right_hand",
            SensorRole::LeftFoot => "left_foot",
            SensorRole::RightFoot => "right_foot",
        }
    }

    /// Parses a comma separated role list. Accepts the group aliases
    /// `hands` and `feet` plus the short forms `lhand`, `rfoot`, etc.
    pub fn parse_list(s: &str) -> Result<Vec<SensorRole>> {
        let mut out = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let expanded: Vec<SensorRole> = match item.to_ascii_lowercase().as_str() {
                "hands" => vec![SensorRole::LeftHand, SensorRole::RightHand],
                "feet" => vec![SensorRole::LeftFoot, SensorRole::RightFoot],
                other => vec![other.parse()?],
            };
            for r in expanded {
                if out.contains(&r) {
                    return Err(Error::Config(format!("role `{r}` listed twice")));
                }
                out.push(r);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("empty role list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for SensorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensorRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "hip" | "hips" | "root" | "pelvis" => SensorRole::Hip,
            "head" => SensorRole::Head,
            "left_hand" | "lhand" | "lefthand" => SensorRole::LeftHand,
            "right_hand" | "rhand" | "righthand" => SensorRole::RightHand,
            "left_foot" | "lfoot" | "leftfoot" => SensorRole::LeftFoot,
            "right_foot" | "rfoot" | "rightfoot" => SensorRole::RightFoot,
            _ => return Err(Error::MissingRole(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    joints: Vec<Joint>,
    limb_groups: BTreeMap<LimbGroup, Vec<usize>>,
    end_effectors: BTreeMap<SensorRole, usize>,
}

impl Skeleton {
    pub fn new(
        joints: Vec<Joint>,
        limb_groups: BTreeMap<LimbGroup, Vec<usize>>,
        end_effectors: BTreeMap<SensorRole, usize>,
    ) -> Result<Self> {
        let sk = Skeleton {
            joints,
            limb_groups,
            end_effectors,
        };
        sk.validate()?;
        Ok(sk)
    }

    fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if n == 0 {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 || self.joints[0].parent.is_some() {
            return Err(Error::InvalidSkeleton(
                "exactly one root is required and it must come first".into(),
            ));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint `{}` has parent {p} not preceding index {i}",
                        j.name
                    )));
                }
            }
            if !j.offset.is_finite() {
                return Err(Error::InvalidSkeleton(format!(
                    "joint `{}` has a non-finite offset",
                    j.name
                )));
            }
        }
        let mut owner = vec![None; n];
        for (group, members) in &self.limb_groups {
            for &m in members {
                if m >= n {
                    return Err(Error::InvalidSkeleton(format!(
                        "limb group {group:?} references joint {m} of {n}"
                    )));
                }
                if let Some(prev) = owner[m].replace(*group) {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {m} is in both {prev:?} and {group:?}"
                    )));
                }
            }
        }
        if let Some(i) = owner.iter().position(Option::is_none) {
            return Err(Error::InvalidSkeleton(format!(
                "joint `{}` belongs to no limb group",
                self.joints[i].name
            )));
        }
        for (role, &j) in &self.end_effectors {
            if j >= n {
                return Err(Error::InvalidSkeleton(format!(
                    "role {role} mapped to joint {j} of {n}"
                )));
            }
        }
        Ok(())
    }

    /// Builds a skeleton from joints alone, deriving limb groups and
    /// end-effector roles from joint names. Joints whose names give no hint
    /// inherit their parent's group.
    pub fn from_joints(joints: Vec<Joint>) -> Result<Self> {
        let n = joints.len();
        let mut group: Vec<Option<LimbGroup>> = vec![None; n];
        let mut end_effectors = BTreeMap::new();
        for (i, j) in joints.iter().enumerate() {
            let name = j.name.to_ascii_lowercase();
            // "l_knee", "LeftKnee" and "LKnee" styles.
            let camel = |c: char| {
                j.name.starts_with(c) && j.name.chars().nth(1).is_some_and(|c| c.is_ascii_uppercase())
            };
            let left = name.starts_with("l_") || name.starts_with("left") || camel('L');
            let right = name.starts_with("r_") || name.starts_with("right") || camel('R');
            let arm = ["collar", "clavicle", "shoulder", "arm", "elbow", "wrist", "hand"]
                .iter()
                .any(|k| name.contains(k));
            let leg = ["hip", "thigh", "upleg", "knee", "leg", "ankle", "foot", "toe"]
                .iter()
                .any(|k| name.contains(k));
            group[i] = if i == 0 {
                Some(LimbGroup::Root)
            } else if arm && left {
                Some(LimbGroup::LeftArm)
            } else if arm && right {
                Some(LimbGroup::RightArm)
            } else if leg && left {
                Some(LimbGroup::LeftLeg)
            } else if leg && right {
                Some(LimbGroup::RightLeg)
            } else if ["spine", "chest", "neck", "head"].iter().any(|k| name.contains(k)) {
                Some(LimbGroup::SpineHead)
            } else {
                None
            };
            if i == 0 {
                end_effectors.insert(SensorRole::Hip, 0);
            }
            if name.contains("head") && !name.contains("end") {
                end_effectors.entry(SensorRole::Head).or_insert(i);
            }
            let hand = name.contains("wrist") || name.contains("hand");
            let foot = name.contains("ankle") || (name.contains("foot") && !name.contains("toe"));
            let mut set = |role: SensorRole| {
                // Prefer the joint closest to the root (wrist over hand, ankle over foot).
                end_effectors.entry(role).or_insert(i);
            };
            match (hand, foot, left, right) {
                (true, _, true, _) => set(SensorRole::LeftHand),
                (true, _, _, true) => set(SensorRole::RightHand),
                (_, true, true, _) => set(SensorRole::LeftFoot),
                (_, true, _, true) => set(SensorRole::RightFoot),
                _ => {}
            }
        }
        for i in 1..n {
            if group[i].is_none() {
                let p = joints[i].parent.ok_or_else(|| {
                    Error::InvalidSkeleton(format!("joint `{}` has no parent", joints[i].name))
                })?;
                group[i] = match group[p] {
                    Some(LimbGroup::Root) | None => Some(LimbGroup::SpineHead),
                    g => g,
                };
            }
        }
        let mut limb_groups: BTreeMap<LimbGroup, Vec<usize>> = BTreeMap::new();
        for (i, g) in group.into_iter().enumerate() {
            limb_groups.entry(g.unwrap_or(LimbGroup::SpineHead)).or_default().push(i);
        }
        Skeleton::new(joints, limb_groups, end_effectors)
    }

    /// The 22-joint humanoid used by the synthetic motion generator.
    /// Y is up, the character faces +Z and its left side is +X.
    pub fn standard() -> Self {
        const JOINTS: [(&str, Option<usize>, [f64; 3]); 22] = [
            ("pelvis", None, [0.0, 0.0, 0.0]),
            ("l_hip", Some(0), [0.09, -0.06, 0.0]),
            ("r_hip", Some(0), [-0.09, -0.06, 0.0]),
            ("spine1", Some(0), [0.0, 0.11, -0.01]),
            ("l_knee", Some(1), [0.0, -0.40, 0.0]),
            ("r_knee", Some(2), [0.0, -0.40, 0.0]),
            ("spine2", Some(3), [0.0, 0.13, 0.0]),
            ("l_ankle", Some(4), [0.0, -0.40, -0.02]),
            ("r_ankle", Some(5), [0.0, -0.40, -0.02]),
            ("spine3", Some(6), [0.0, 0.06, 0.02]),
            ("l_foot", Some(7), [0.0, -0.06, 0.12]),
            ("r_foot", Some(8), [0.0, -0.06, 0.12]),
            ("neck", Some(9), [0.0, 0.21, -0.02]),
            ("l_collar", Some(9), [0.07, 0.12, 0.0]),
            ("r_collar", Some(9), [-0.07, 0.12, 0.0]),
            ("head", Some(12), [0.0, 0.10, 0.03]),
            ("l_shoulder", Some(13), [0.11, 0.03, 0.0]),
            ("r_shoulder", Some(14), [-0.11, 0.03, 0.0]),
            ("l_elbow", Some(16), [0.26, 0.0, 0.0]),
            ("r_elbow", Some(17), [-0.26, 0.0, 0.0]),
            ("l_wrist", Some(18), [0.25, 0.0, 0.0]),
            ("r_wrist", Some(19), [-0.25, 0.0, 0.0]),
        ];
        let joints = JOINTS
            .iter()
            .map(|(name, parent, o)| Joint {
                name: name.to_string(),
                parent: *parent,
                offset: Vec3::from(*o),
            })
            .collect();
        let limb_groups = BTreeMap::from([
            (LimbGroup::Root, vec![0]),
            (LimbGroup::SpineHead, vec![3, 6, 9, 12, 15]),
            (LimbGroup::LeftArm, vec![13, 16, 18, 20]),
            (LimbGroup::RightArm, vec![14, 17, 19, 21]),
            (LimbGroup::LeftLeg, vec![1, 4, 7, 10]),
            (LimbGroup::RightLeg, vec![2, 5, 8, 11]),
        ]);
        let end_effectors = BTreeMap::from([
            (SensorRole::Hip, 0),
            (SensorRole::Head, 15),
            (SensorRole::LeftHand, 20),
            (SensorRole::RightHand, 21),
            (SensorRole::LeftFoot, 7),
            (SensorRole::RightFoot, 8),
        ]);
        Skeleton::new(joints, limb_groups, end_effectors).expect("standard skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Length of the flat pose vector, `J * 4 + 3`.
    pub fn pose_dim(&self) -> usize {
        self.joints.len() * 4 + 3
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.joints.iter().map(|j| j.parent).collect()
    }

    pub fn offsets(&self) -> Vec<Vec3> {
        self.joints.iter().map(|j| j.offset).collect()
    }

    pub fn limb_groups(&self) -> &BTreeMap<LimbGroup, Vec<usize>> {
        &self.limb_groups
    }

    pub fn end_effectors(&self) -> &BTreeMap<SensorRole, usize> {
        &self.end_effectors
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn role_index(&self, role: SensorRole) -> Result<usize> {
        self.end_effectors
            .get(&role)
            .copied()
            .ok_or_else(|| Error::MissingRole(role.to_string()))
    }

    /// Resolves a sensor-role name or, failing that, a joint name.
    pub fn resolve(&self, name: &str) -> Result<usize> {
        if let Ok(role) = name.parse::<SensorRole>() {
            if let Some(&j) = self.end_effectors.get(&role) {
                return Ok(j);
            }
        }
        self.joint_index(name)
            .ok_or_else(|| Error::Config(format!("`{name}` is neither a mapped role nor a joint")))
    }

    /// Direct children of every joint.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut c = vec![Vec::new(); self.joints.len()];
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                c[p].push(i);
            }
        }
        c
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("skeleton serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Sorted indices of `j` and all its descendants.
    pub fn subtree(&self, j: usize) -> Vec<usize> {
        let mut inside = vec![false; self.joints.len()];
        inside[j] = true;
        for i in j + 1..self.joints.len() {
            if let Some(p) = self.joints[i].parent {
                inside[i] = inside[p];
            }
        }
        inside
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}
