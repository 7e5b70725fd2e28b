use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::kinematics::global_joints;
use crate::pose::{Pose, RootState};
use crate::skeleton::{SensorRole, Skeleton};

/// Displacement (3) plus six heights.
pub(crate) const CONTEXT_EXTRA: usize = 9;

/// Encoder input for one past predictor step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFeatures {
    pub latent: Vec<f64>,
    /// Root displacement times the frame rate (root-frame velocity).
    pub velocity: [f64; 3],
    /// Heights above the ground plane `y = 0` of the hip, head, hands and
    /// feet, in [`SensorRole::ALL`] order.
    pub heights: [f64; 6],
}

impl StepFeatures {
    pub fn from_frame(latent: &[f64], pose: &Pose, prev: &RootState, sk: &Skeleton, frame_rate: f64) -> Result<Self> {
        let joints = global_joints(pose, sk, prev)?;
        let mut heights = [0.0; 6];
        for (h, role) in heights.iter_mut().zip(SensorRole::ALL) {
            *h = joints[sk.role_index(role)?].0.y;
        }
        let d = pose.root_displacement * frame_rate;
        Ok(StepFeatures {
            latent: latent.to_vec(),
            velocity: d.to_array(),
            heights,
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.latent.len() + CONTEXT_EXTRA);
        v.extend_from_slice(&self.latent);
        v.extend_from_slice(&self.velocity);
        v.extend_from_slice(&self.heights);
        v
    }
}

/// Per-session predictor memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictorState {
    pub history: VecDeque<StepFeatures>,
    pub memory: Option<Tensor>,
    pub anchor: Option<Vec<f64>>,
    /// Predictions made since the last refresh, oldest first.
    pub pending: Vec<Vec<f64>>,
    /// Target handed to the optimizer until the next predictor step.
    pub current: Option<Vec<f64>>,
}

impl PredictorState {
    /// Empty state whose history starts with `seed` (the initial pose).
    pub fn seeded(seed: StepFeatures) -> Self {
        let mut s = PredictorState::default();
        s.history.push_back(seed);
        s
    }

    pub(crate) fn push_history(&mut self, f: StepFeatures, keep: usize) {
        self.history.push_back(f);
        while self.history.len() > keep {
            self.history.pop_front();
        }
    }
}
