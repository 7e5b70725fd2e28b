use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::optimizer::{Constraint, Diagnostics, FrameReport, Mode, OptimizerConfig, Residual};
use crate::pose::{Pose, RootState, SparseSignal};
use crate::skeleton::{SensorRole, Skeleton};

pub const PROTOCOL_VERSION: &str = "posedrag/1";

/// One line on the wire: a sequence number plus a typed payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    #[serde(flatten)]
    pub message: Message,
}

impl Envelope {
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn parse(line: &str) -> Result<Envelope> {
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed message: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootPayload {
    pub pos: Vec3,
    pub quat: Quat,
}

impl From<RootState> for RootPayload {
    fn from(r: RootState) -> Self {
        RootPayload {
            pos: r.world_position,
            quat: r.world_rotation,
        }
    }
}

impl From<&RootPayload> for RootState {
    fn from(r: &RootPayload) -> Self {
        RootState::new(r.quat, r.pos)
    }
}

/// A reconstructed frame. `root` is the global root placement after the
/// frame; `joints` are the root-space rotations with the root increment at
/// index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub frame: u64,
    pub root: RootPayload,
    pub joints: Vec<Quat>,
    pub iterations: usize,
    pub lpo: f64,
}

impl PoseFrame {
    pub fn new(pose: &Pose, root: RootState, report: &FrameReport) -> Self {
        PoseFrame {
            frame: report.frame,
            root: root.into(),
            joints: pose.joint_rotations.clone(),
            iterations: report.iterations,
            lpo: report.final_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointInfo {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
}

/// Partial optimizer settings carried by an edit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_po: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_position: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_rotation_deg: Option<f64>,
}

impl ConfigPatch {
    pub fn apply(&self, c: &OptimizerConfig) -> OptimizerConfig {
        let mut c = c.clone();
        if let Some(m) = self.mode {
            c.max_iterations = m.max_iterations();
        }
        if let Some(v) = self.lambda_po {
            c.lambda_po = v;
        }
        if let Some(v) = self.lambda_t {
            c.lambda_t = v;
        }
        if let Some(v) = self.max_iterations {
            c.max_iterations = v;
        }
        if let Some(v) = self.eps_position {
            c.eps_position = v;
        }
        if let Some(v) = self.eps_rotation_deg {
            c.eps_rotation_deg = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        protocol: String,
        /// Autoencoder checkpoint hash the client expects, if any.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vae_hash: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<Mode>,
        /// Initial global root placement; defaults to the rest pose standing
        /// on the ground at the origin.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        root: Option<RootPayload>,
    },
    Skeleton {
        joints: Vec<JointInfo>,
        roles: BTreeMap<SensorRole, usize>,
    },
    SparseFrame {
        signals: Vec<SparseSignal>,
    },
    ConstraintEdit {
        #[serde(default)]
        add: Vec<Constraint>,
        /// Constraint ids; `sensor.<role>.*` ids switch that sensor off.
        #[serde(default)]
        remove: Vec<String>,
        #[serde(default)]
        enable_sensors: Vec<SensorRole>,
        #[serde(default)]
        disable_sensors: Vec<SensorRole>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<ConfigPatch>,
    },
    PoseFrame(PoseFrame),
    Residuals {
        frame: u64,
        residuals: Vec<Residual>,
        converged: bool,
        diagnostics: Diagnostics,
        /// Messages waiting behind this one.
        queue: usize,
    },
    Error {
        message: String,
    },
    Bye {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

impl Message {
    pub fn skeleton(sk: &Skeleton) -> Message {
        Message::Skeleton {
            joints: sk
                .joints()
                .iter()
                .map(|j| JointInfo {
                    name: j.name.clone(),
                    parent: j.parent,
                    offset: j.offset,
                })
                .collect(),
            roles: sk.end_effectors().clone(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Skeleton { .. } => "skeleton",
            Message::SparseFrame { .. } => "sparse_frame",
            Message::ConstraintEdit { .. } => "constraint_edit",
            Message::PoseFrame(_) => "pose_frame",
            Message::Residuals { .. } => "residuals",
            Message::Error { .. } => "error",
            Message::Bye { .. } => "bye",
        }
    }
}
