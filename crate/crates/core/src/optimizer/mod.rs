//! Per-frame latent-space gradient descent against sparse sensors and
//! user constraints, guided by the temporal predictor.

mod constraint;
mod loss;
mod session;

pub use constraint::{Constraint, ConstraintKind, ConstraintSet};
pub use loss::{assemble_loss, latent_loss, temporal_term, LossReport, Residual, ResidualUnit, RootAnchor};
pub use session::{Diagnostics, FrameReport, IterationRecord, Session};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Realtime,
    Offline,
    Ablation,
}

impl Mode {
    pub fn max_iterations(self) -> usize {
        match self {
            Mode::Realtime => 1,
            Mode::Offline => 10,
            Mode::Ablation => 100,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "realtime" => Ok(Mode::Realtime),
            "offline" => Ok(Mode::Offline),
            "ablation" => Ok(Mode::Ablation),
            _ => Err(Error::Config(format!("unknown mode `{s}` (realtime, offline, ablation)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lambda_po: f64,
    pub lambda_t: f64,
    pub max_iterations: usize,
    /// Stop once every positional residual is at most this many meters...
    pub eps_position: f64,
    /// ...and every angular residual at most this many degrees.
    pub eps_rotation_deg: f64,
    /// Weight of squared-angle terms relative to squared-meter terms.
    pub rotation_weight: f64,
    /// Weight of constraints generated from sparse sensors.
    pub sensor_weight: f64,
    pub frame_rate: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lambda_po: 200.0,
            lambda_t: 0.1,
            max_iterations: Mode::Offline.max_iterations(),
            eps_position: 0.01,
            eps_rotation_deg: 5.0,
            rotation_weight: 0.01,
            sensor_weight: 1.0,
            frame_rate: crate::motion::TARGET_FRAME_RATE,
        }
    }
}

impl OptimizerConfig {
    pub fn for_mode(mode: Mode) -> Self {
        OptimizerConfig {
            max_iterations: mode.max_iterations(),
            ..OptimizerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_po", self.lambda_po),
            ("lambda_t", self.lambda_t),
            ("eps_position", self.eps_position),
            ("eps_rotation_deg", self.eps_rotation_deg),
            ("rotation_weight", self.rotation_weight),
            ("sensor_weight", self.sensor_weight),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("`{name}` must be a nonnegative number, got {v}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        Ok(())
    }
}
