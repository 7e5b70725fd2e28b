//! Interactive pose reconstruction from sparse trackers and drag constraints.

pub mod autodiff;
pub mod eval;
mod error;
pub mod kinematics;
pub mod math;
pub mod motion;
pub mod nn;
pub mod optimizer;
pub mod pose;
pub mod service;
pub mod skeleton;
pub mod temporal;
pub mod vae;

pub use error::{Error, Result};
pub use math::{DualQuat, Quat, Vec3};
pub use pose::{Dof, Pose, RootState, SparseInput, SparseSignal};
pub use skeleton::{Joint, LimbGroup, SensorRole, Skeleton};
