//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use posedrag::motion::{default_roles, make_sparse, synth_motion, MotionClip, MotionKind, SparseSequence};
use posedrag::temporal::{TemporalConfig, TemporalPredictor};
use posedrag::vae::{PoseVae, VaeConfig};
use posedrag::{Dof, Skeleton};

pub struct Fixture {
    pub clip: MotionClip,
    pub sparse: SparseSequence,
    pub vae: Arc<PoseVae>,
    pub temporal: Arc<TemporalPredictor>,
}

/// Untrained models at their default sizes with standardization fitted on a
/// walk clip; timing does not depend on the weights.
pub fn fixture() -> Fixture {
    let clip = synth_motion(MotionKind::WalkCycle, 2.0, 1).unwrap();
    let sparse = make_sparse(&clip, &default_roles(6).unwrap(), Dof::PosRot).unwrap();
    let mut vae = PoseVae::new(Skeleton::standard(), VaeConfig::default(), 1).unwrap();
    vae.fit_standardization(&clip.frames).unwrap();
    let hash = vae.to_checkpoint().unwrap().hash().unwrap();
    let temporal = TemporalPredictor::new(TemporalConfig::default(), vae.latent_dim(), hash, 1).unwrap();
    Fixture {
        clip,
        sparse,
        vae: Arc::new(vae),
        temporal: Arc::new(temporal),
    }
}
