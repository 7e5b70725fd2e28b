use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{parse_bvh, MotionClip};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::pose::Pose;
use crate::skeleton::{SensorRole, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
}

/// JSON list of BVH clips with split tags. Relative paths are resolved
/// against the manifest's directory by [`load_manifest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<Vec<SensorRole>>,
    pub clips: Vec<ManifestEntry>,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let mut m: Manifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for c in &mut m.clips {
        if c.path.is_relative() {
            c.path = base.join(&c.path);
        }
    }
    Ok(m)
}

impl Manifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    /// Parses every clip of `split`, conformed to `skeleton`'s joint order.
    pub fn load_clips(&self, split: Split, skeleton: &Skeleton) -> Result<Vec<MotionClip>> {
        self.entries(split)
            .map(|e| {
                let text = fs::read_to_string(&e.path)?;
                parse_bvh(&text)?.conform_to(skeleton)
            })
            .collect()
    }
}

/// `(x_t, x_t+1)` pairs of consecutive frames. Pairs never span two clips.
pub fn consecutive_pairs(clips: &[MotionClip]) -> Vec<(Pose, Pose)> {
    clips
        .iter()
        .flat_map(|c| c.frames.windows(2).map(|w| (w[0].clone(), w[1].clone())))
        .collect()
}

/// Corpus summary: counts, global bounding box and per-dimension latent
/// statistics once latents are attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub clip_count: usize,
    pub frame_count: usize,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    pub latent_mean: Vec<f64>,
    pub latent_std: Vec<f64>,
}

impl DatasetStats {
    pub fn from_clips(clips: &[MotionClip]) -> Result<Self> {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        let mut frames = 0;
        for c in clips {
            for f in c.global_positions()? {
                frames += 1;
                for p in f {
                    lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
                    hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
                }
            }
        }
        if frames == 0 {
            return Err(Error::InsufficientData("no frames".into()));
        }
        Ok(DatasetStats {
            clip_count: clips.len(),
            frame_count: frames,
            bbox_min: lo,
            bbox_max: hi,
            latent_mean: Vec::new(),
            latent_std: Vec::new(),
        })
    }

    /// Attaches population mean and standard deviation of latent rows.
    pub fn with_latents(mut self, rows: &[Vec<f64>]) -> Result<Self> {
        let (mean, std) = column_stats(rows)?;
        self.latent_mean = mean;
        self.latent_std = std;
        Ok(self)
    }
}

/// Per-column population mean and standard deviation.
pub(crate) fn column_stats(rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InsufficientData("no rows for statistics".into()))?;
    let d = first.len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        if r.len() != d {
            return Err(Error::dim("statistics row", d, r.len()));
        }
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    Ok((mean, var.into_iter().map(|s| (s / n).sqrt()).collect()))
}
