use serde::{Deserialize, Serialize};

use super::{Quat, Vec3};
use crate::error::Result;

/// Rigid transform as a unit rotation `real` and a translation-carrying
/// `dual` part with `dual = 0.5 * (0, t) * real`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualQuat {
    pub real: Quat,
    pub dual: Quat,
}

impl DualQuat {
    pub fn from_rotation_translation(rotation: Quat, translation: Vec3) -> Self {
        let dual = (Quat::pure(translation) * rotation).scale(0.5);
        DualQuat {
            real: rotation,
            dual,
        }
    }

    /// Recovers the translation as the vector part of `2 * dual * conj(real)`.
    pub fn translation(&self) -> Vec3 {
        (self.dual * self.real.conjugate()).scale(2.0).vector()
    }

    /// Scales both parts so that `|real| = 1`.
    pub fn normalize(&self) -> Result<DualQuat> {
        let n = self.real.norm();
        let real = self.real.normalize()?;
        Ok(DualQuat {
            real,
            dual: self.dual.scale(1.0 / n),
        })
    }

    /// `<real, dual>`, zero for a valid rigid transform.
    pub fn orthogonality(&self) -> f64 {
        self.real.dot(self.dual)
    }

    pub fn to_array(&self) -> [f64; 8] {
        let r = self.real.to_array();
        let d = self.dual.to_array();
        [r[0], r[1], r[2], r[3], d[0], d[1], d[2], d[3]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_translation() {
        let dq = DualQuat::from_rotation_translation(Quat::IDENTITY, Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(dq.dual.to_array(), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(dq.translation(), Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn rotated_translation_is_recovered_and_orthogonal() {
        let r = Quat::new(0.4, -0.3, 0.8, 0.1).normalize().unwrap();
        let t = Vec3::new(0.3, -1.2, 0.75);
        let dq = DualQuat::from_rotation_translation(r, t);
        assert!((dq.translation() - t).norm() < 1e-12);
        assert!(dq.orthogonality().abs() < 1e-12);
    }
}
