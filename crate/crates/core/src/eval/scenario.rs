use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{default_roles, make_sparse, MotionClip};
use crate::optimizer::{FrameReport, OptimizerConfig, Session};
use crate::pose::Dof;
use crate::temporal::TemporalPredictor;
use crate::vae::PoseVae;

use super::metrics::{compute_metrics, DiagnosticCounts, MetricsReport, ScenarioDescriptor};
use super::FaultSchedule;

/// A trained autoencoder with an optional temporal predictor.
#[derive(Debug, Clone)]
pub struct Models {
    pub vae: Arc<PoseVae>,
    pub temporal: Option<Arc<TemporalPredictor>>,
}

impl Models {
    pub fn new(vae: Arc<PoseVae>, temporal: Option<Arc<TemporalPredictor>>) -> Self {
        Models { vae, temporal }
    }

    /// Fails when the predictor was trained against a different autoencoder.
    pub fn check(&self) -> Result<()> {
        if let Some(t) = &self.temporal {
            let hash = self.vae.to_checkpoint()?.hash()?;
            if t.vae_hash != hash {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "temporal predictor was trained against autoencoder {}, loaded {}",
                    t.vae_hash, hash
                )));
            }
        }
        Ok(())
    }

    pub fn without_temporal(&self) -> Models {
        Models::new(self.vae.clone(), None)
    }
}

/// Reconstruction of one clip.
#[derive(Debug, Clone)]
pub struct ClipRun {
    pub predicted: MotionClip,
    pub traces: Vec<FrameReport>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: MetricsReport,
    pub clips: Vec<ClipRun>,
}

/// Reconstructs `clip` from its own sparse signals. The first frame seeds
/// the session; every later frame is optimized. `valid` masks sensors per
/// frame when given.
pub fn reconstruct_clip(
    models: &Models,
    clip: &MotionClip,
    scenario: &ScenarioDescriptor,
    valid: Option<&[Vec<bool>]>,
    config: &OptimizerConfig,
) -> Result<ClipRun> {
    if clip.skeleton.hash() != models.vae.skeleton.hash() {
        return Err(Error::IncompatibleCheckpoint("clip skeleton differs from the model skeleton".into()));
    }
    let mut sparse = make_sparse(clip, &scenario.roles, scenario.dof)?;
    if let Some(mask) = valid {
        for (frame, m) in sparse.frames.iter_mut().zip(mask) {
            for (s, ok) in frame.signals.iter_mut().zip(m) {
                s.valid = *ok;
            }
        }
    }
    let mut session = Session::from_vae(
        models.vae.clone(),
        models.temporal.clone(),
        config.clone(),
        &clip.frames[0],
        clip.origin,
    )?;
    let mut frames = vec![clip.frames[0].clone()];
    let mut traces = Vec::with_capacity(clip.len());
    for input in &sparse.frames[1..] {
        let (pose, report) = session.optimize_frame(input)?;
        frames.push(pose);
        traces.push(report);
    }
    let predicted = MotionClip {
        skeleton: clip.skeleton.clone(),
        frames,
        frame_rate: clip.frame_rate,
        origin: clip.origin,
    };
    Ok(ClipRun { predicted, traces })
}

/// Runs one scenario over every clip and aggregates per-frame metrics.
/// Deterministic for a fixed fault seed.
pub fn run_scenario(
    models: &Models,
    clips: &[MotionClip],
    scenario: &ScenarioDescriptor,
    config: &OptimizerConfig,
) -> Result<ScenarioRun> {
    models.check()?;
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::InsufficientData("scenario needs at least one clip".into()));
    }
    let mut frames = Vec::new();
    let mut runs = Vec::with_capacity(clips.len());
    let mut diagnostics = DiagnosticCounts::default();
    let mut iterations = 0usize;
    let mut optimized = 0usize;
    for (k, clip) in clips.iter().enumerate() {
        let mask = match &scenario.fault {
            Some(f) => {
                let f = FaultSchedule {
                    seed: f.seed.wrapping_add(k as u64),
                    ..*f
                };
                Some(f.mask(clip.len(), scenario.roles.len())?.valid)
            }
            None => None,
        };
        let run = reconstruct_clip(models, clip, scenario, mask.as_deref(), config)?;
        for t in &run.traces {
            iterations += t.iterations;
            optimized += 1;
            diagnostics.non_finite_gradient += t.diagnostics.non_finite_gradient as usize;
            diagnostics.latent_out_of_distribution += t.diagnostics.latent_out_of_distribution as usize;
            diagnostics.cold_predictor += t.diagnostics.cold_predictor as usize;
        }
        frames.extend(compute_metrics(&run.predicted, clip, &scenario.roles)?);
        runs.push(run);
    }
    let mut report = MetricsReport::from_frames(scenario.clone(), frames);
    report.mean_iters = if optimized == 0 { 0.0 } else { iterations as f64 / optimized as f64 };
    report.diagnostics = diagnostics;
    Ok(ScenarioRun { report, clips: runs })
}

/// Sensor counts 3 to 6, position-only input, and faulty sensors at 1% and
/// 0.5% with reconnection after 100 frames.
pub fn standard_scenarios(seed: u64) -> Vec<ScenarioDescriptor> {
    let mut out = Vec::new();
    for n in [6, 5, 4, 3] {
        let roles = default_roles(n).expect("default placement");
        let name = roles.iter().map(|r| r.as_str()).collect::<Vec<_>>().join("+");
        out.push(ScenarioDescriptor::new(format!("{n} {name}"), roles, Dof::PosRot));
    }
    let six = default_roles(6).expect("default placement");
    out.push(ScenarioDescriptor::new("6 position only", six.clone(), Dof::PosOnly));
    for (p, label) in [(0.01, "1%"), (0.005, "0.5%")] {
        let mut s = ScenarioDescriptor::new(format!("6 faulty {label}"), six.clone(), Dof::PosRot);
        s.fault = Some(FaultSchedule::new(p, seed));
        out.push(s);
    }
    out
}

/// Model variant of an ablation study.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub models: Models,
}

/// Runs every variant on the same clips and sensors; each row's scenario
/// name is the variant name.
pub fn run_ablation(
    variants: &[Variant],
    clips: &[MotionClip],
    scenario: &ScenarioDescriptor,
    config: &OptimizerConfig,
) -> Result<ReportTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let s = ScenarioDescriptor {
            name: v.name.clone(),
            ..scenario.clone()
        };
        rows.push(run_scenario(&v.models, clips, &s, config)?.report);
    }
    Ok(ReportTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<MetricsReport>,
}

impl ReportTable {
    pub const CSV_HEADER: &'static str =
        "scenario,sensors,dof,pos_mean,pos_std,rot_mean,rot_std,vel_mean,vel_std,ee_mean,ee_std,mean_iters";

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<ReportTable> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let name = r.scenario.name.replace(['"', ','], " ");
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                name,
                r.scenario.roles.len(),
                r.scenario.dof.count(),
                r.pos_cm.mean,
                r.pos_cm.std,
                r.rot_deg.mean,
                r.rot_deg.std,
                r.vel_cm_s.mean,
                r.vel_cm_s.std,
                r.ee_cm.mean,
                r.ee_cm.std,
                r.mean_iters
            );
        }
        out
    }
}
