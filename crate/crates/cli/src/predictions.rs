//! `predictions.jsonl`: one record per frame, clips in order, frames
//! 1-based and contiguous.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use strokepose::metrics::Predictions;
use strokepose::{DecodedPose, Keypoint, Pose, NUM_JOINTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub frame_index: usize,
    /// `[x, y]` pixel coordinates in joint index order.
    pub joints: Vec<[f64; 2]>,
    /// Heatmap peak value per joint.
    pub confidence: Vec<f32>,
}

impl PredictionRecord {
    pub fn new(clip_id: &str, frame_index: usize, d: &DecodedPose) -> Self {
        Self {
            clip_id: clip_id.to_string(),
            frame_index,
            joints: d.pose.joints.iter().map(|k| [k.x, k.y]).collect(),
            confidence: d.peak_confidence.to_vec(),
        }
    }
}

pub fn to_jsonl(records: &[PredictionRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "{}", serde_json::to_string(r).expect("record serializes"));
    }
    s
}

pub fn read(path: &Path) -> Result<Predictions> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Predictions::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: String| crate::invalid!("{}:{}: {m}", path.display(), n + 1);
        let r: PredictionRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if r.joints.len() != NUM_JOINTS {
            return Err(bad(format!("expected {NUM_JOINTS} joints, got {}", r.joints.len())));
        }
        let poses = out.entry(r.clip_id.clone()).or_default();
        if r.frame_index != poses.len() + 1 {
            return Err(bad(format!(
                "clip {} frame {} out of order (expected {})",
                r.clip_id,
                r.frame_index,
                poses.len() + 1
            )));
        }
        let joints: [Keypoint; NUM_JOINTS] = std::array::from_fn(|j| Keypoint::new(r.joints[j][0], r.joints[j][1], true));
        poses.push(Pose::new(joints).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}
