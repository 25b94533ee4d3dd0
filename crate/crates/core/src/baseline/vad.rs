use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Half-open frame interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeechSegment {
    pub start: usize,
    pub end: usize,
}

impl SpeechSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadConfig {
    /// Frames whose L2 norm exceeds this are speech.
    pub threshold: f64,
    /// Non-speech runs shorter than this between speech are filled.
    pub min_gap: usize,
    /// Speech runs shorter than this (after filling) are dropped.
    pub min_speech: usize,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            threshold: 2.0,
            min_gap: 3,
            min_speech: 2,
        }
    }
}

pub fn frame_energy(frame: &[f32]) -> f64 {
    frame.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// `detect_speech`: thresholded energy, short gaps filled, short runs dropped.
pub fn detect_speech(frames: &Matrix<f32>, config: &VadConfig) -> Vec<SpeechSegment> {
    let mut runs: Vec<SpeechSegment> = Vec::new();
    for t in 0..frames.rows() {
        if frame_energy(frames.row(t)) > config.threshold {
            match runs.last_mut() {
                Some(r) if r.end == t => r.end = t + 1,
                _ => runs.push(SpeechSegment { start: t, end: t + 1 }),
            }
        }
    }
    let mut filled: Vec<SpeechSegment> = Vec::with_capacity(runs.len());
    for r in runs {
        match filled.last_mut() {
            Some(last) if r.start - last.end < config.min_gap => last.end = r.end,
            _ => filled.push(r),
        }
    }
    filled.retain(|r| r.len() >= config.min_speech.max(1));
    filled
}

/// Energy at the given percentile (0–100) of the frames marked speech.
pub fn speech_energy_percentile<'a>(
    items: impl IntoIterator<Item = (&'a Matrix<f32>, Vec<bool>)>,
    percentile: f64,
) -> Result<f64> {
    let mut energies = Vec::new();
    for (frames, mask) in items {
        for (t, &m) in mask.iter().enumerate() {
            if m {
                energies.push(frame_energy(frames.row(t)));
            }
        }
    }
    if energies.is_empty() {
        return Err(Error::usage("no speech frames to calibrate the detector"));
    }
    energies.sort_by(f64::total_cmp);
    let idx = ((percentile / 100.0) * (energies.len() - 1) as f64).round() as usize;
    Ok(energies[idx.min(energies.len() - 1)])
}
