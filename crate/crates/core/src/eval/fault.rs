use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random sensor dropouts: each frame, with `probability`, one connected
/// sensor disconnects and stays invalid for `reconnect_after` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSchedule {
    pub probability: f64,
    pub reconnect_after: usize,
    pub seed: u64,
}

/// Validity of every sensor at every frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultMask {
    pub valid: Vec<Vec<bool>>,
    /// Number of disconnect events.
    pub events: usize,
}

impl FaultSchedule {
    pub const RECONNECT_AFTER: usize = 100;

    pub fn new(probability: f64, seed: u64) -> Self {
        FaultSchedule {
            probability,
            reconnect_after: Self::RECONNECT_AFTER,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!("fault probability must be in [0, 1], got {}", self.probability)));
        }
        if self.reconnect_after == 0 {
            return Err(Error::Config("reconnect_after must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mask(&self, frames: usize, sensors: usize) -> Result<FaultMask> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut until: Vec<Option<usize>> = vec![None; sensors];
        let mut valid = Vec::with_capacity(frames);
        let mut events = 0;
        for t in 0..frames {
            for u in until.iter_mut() {
                if *u == Some(t) {
                    *u = None;
                }
            }
            if rng.gen_bool(self.probability) {
                let connected: Vec<usize> = (0..sensors).filter(|&s| until[s].is_none()).collect();
                if !connected.is_empty() {
                    let s = connected[rng.gen_range(0..connected.len())];
                    until[s] = Some(t + self.reconnect_after);
                    events += 1;
                }
            }
            valid.push(until.iter().map(Option::is_none).collect());
        }
        Ok(FaultMask { valid, events })
    }
}
