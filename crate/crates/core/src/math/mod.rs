//! Vector, quaternion and dual-quaternion algebra.

mod dual_quat;
mod quat;
mod vec3;

pub use dual_quat::DualQuat;
pub use quat::{from_euler, to_euler_zyx, Axis, Quat, DEGENERATE_NORM};
pub use vec3::Vec3;
