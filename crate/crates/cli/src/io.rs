use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use posedrag::autodiff::Checkpoint;
use posedrag::eval::Models;
use posedrag::motion::{load_manifest, parse_bvh, MotionClip, Split};
use posedrag::service::{Envelope, Message};
use posedrag::temporal::TemporalPredictor;
use posedrag::vae::PoseVae;
use posedrag::{Skeleton, SparseInput};

/// `standard` or a BVH file whose hierarchy defines the skeleton.
pub fn skeleton(spec: &str) -> Result<Skeleton> {
    if spec == "standard" {
        return Ok(Skeleton::standard());
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading skeleton {spec}"))?;
    Ok(parse_bvh(&text)?.skeleton)
}

fn bvh(path: &Path, sk: &Skeleton) -> Result<MotionClip> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let clip = parse_bvh(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(clip.conform_to(sk)?)
}

/// Clips from a manifest (the given split), a single BVH file, or every
/// BVH file in a directory.
pub fn clips(data: &Path, split: Split, sk: &Skeleton) -> Result<Vec<MotionClip>> {
    let clips = if data.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(data)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "bvh"))
            .collect();
        files.sort();
        files.iter().map(|f| bvh(f, sk)).collect::<Result<Vec<_>>>()?
    } else if data.extension().is_some_and(|e| e == "json") {
        load_manifest(data)?.load_clips(split, sk)?
    } else {
        vec![bvh(data, sk)?]
    };
    if clips.is_empty() {
        bail!("no clips found in {} for split {split}", data.display());
    }
    Ok(clips)
}

/// `sparse_frame` payloads of a recorded JSON-lines stream; other message
/// types are skipped.
pub fn sparse_stream(path: &Path) -> Result<Vec<SparseInput>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let env = Envelope::parse(line).with_context(|| format!("{}:{}", path.display(), k + 1))?;
        if let Message::SparseFrame { signals } = env.message {
            out.push(SparseInput { signals });
        }
    }
    Ok(out)
}

pub fn load_vae(path: &Path, sk: Option<&Skeleton>) -> Result<PoseVae> {
    let c = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(PoseVae::from_checkpoint(&c, sk)?)
}

/// Autoencoder plus optional predictor; `future` overrides the predictor's
/// future window.
pub fn load_models(vae: &Path, temporal: Option<&Path>, sk: Option<&Skeleton>, future: Option<usize>) -> Result<Models> {
    let vae = load_vae(vae, sk)?;
    let temporal = match temporal {
        Some(p) => {
            let hash = vae.to_checkpoint()?.hash()?;
            let c = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            let mut t = TemporalPredictor::from_checkpoint(&c, &hash)?;
            if let Some(wf) = future {
                t.config.future = wf;
                t.config.validate()?;
            }
            Some(Arc::new(t))
        }
        None => None,
    };
    Ok(Models::new(Arc::new(vae), temporal))
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
