//! PCK@α: a joint counts as correct when its predicted location lies within
//! α times the ground-truth torso diameter (left hip to right shoulder) of
//! the annotated location, inclusive.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::types::{JointId, Pose, StyleLabel, VideoClip, NUM_JOINTS, NUM_STYLES};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckConfig {
    pub alpha: f64,
}

impl Default for PckConfig {
    fn default() -> Self {
        Self { alpha: 0.2 }
    }
}

impl PckConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("PCK alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

/// Predicted poses per clip id, one per frame in frame order.
pub type Predictions = BTreeMap<String, Vec<Pose>>;

pub fn torso_diameter(gt: &Pose) -> f64 {
    gt.joint(JointId::LeftHip).distance(gt.joint(JointId::RightShoulder))
}

/// Per-joint correctness. Fails when the ground-truth torso has zero length.
pub fn pck(pred: &Pose, gt: &Pose, cfg: &PckConfig) -> Result<[bool; NUM_JOINTS]> {
    let torso = torso_diameter(gt);
    if torso <= 0.0 || !torso.is_finite() {
        return Err(Error::Invalid("ground-truth torso diameter is zero".into()));
    }
    Ok(correct_within(pred, gt, cfg.alpha * torso))
}

fn correct_within(pred: &Pose, gt: &Pose, threshold: f64) -> [bool; NUM_JOINTS] {
    std::array::from_fn(|j| pred.joints[j].distance(&gt.joints[j]) <= threshold)
}

/// A frame reference: clip id and 1-based frame index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub clip_id: String,
    pub frame: usize,
}

/// Correct / evaluated joint counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
    }

    fn merge(&mut self, other: Tally) {
        self.correct += other.correct;
        self.total += other.total;
    }

    /// Percentage, or `None` when nothing was evaluated.
    pub fn percent(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    pub alpha: f64,
    /// Over all evaluated joints of all frames.
    pub overall: f64,
    pub per_joint: Vec<Option<f64>>,
    /// Indexed by `StyleLabel::index`; `None` for styles without frames.
    pub per_style: Vec<Option<f64>>,
    pub per_style_per_joint: Vec<Vec<Option<f64>>>,
    /// `[style][joint]` tallies behind every percentage above.
    pub counts: Vec<Vec<Tally>>,
    /// Joints annotated as not visible.
    pub occluded: Tally,
    pub visible: Tally,
    /// Frames skipped because their torso diameter is zero.
    pub excluded: Vec<FrameRef>,
}

impl PckReport {
    fn from_counts(alpha: f64, counts: Vec<Vec<Tally>>, occluded: Tally, visible: Tally, excluded: Vec<FrameRef>) -> Self {
        let mut all = Tally::default();
        let mut per_joint = vec![Tally::default(); NUM_JOINTS];
        let mut per_style = [Tally::default(); NUM_STYLES];
        for (s, row) in counts.iter().enumerate() {
            for (j, t) in row.iter().enumerate() {
                all.merge(*t);
                per_joint[j].merge(*t);
                per_style[s].merge(*t);
            }
        }
        Self {
            alpha,
            overall: all.percent().unwrap_or(0.0),
            per_joint: per_joint.iter().map(Tally::percent).collect(),
            per_style: per_style.iter().map(Tally::percent).collect(),
            per_style_per_joint: counts
                .iter()
                .map(|row| row.iter().map(Tally::percent).collect())
                .collect(),
            counts,
            occluded,
            visible,
            excluded,
        }
    }

    /// Score over the frames of the given styles only.
    pub fn score_over_styles(&self, styles: &[StyleLabel]) -> Option<f64> {
        let mut t = Tally::default();
        for s in styles {
            for c in &self.counts[s.index()] {
                t.merge(*c);
            }
        }
        t.percent()
    }

    pub fn style_score(&self, style: StyleLabel) -> Option<f64> {
        self.per_style[style.index()]
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("serializing PCK report", e))
    }
}

fn check_coverage(predictions: &Predictions, clips: &[VideoClip]) -> Result<()> {
    let mut missing = Vec::new();
    for clip in clips {
        let have = predictions.get(clip.clip_id()).map_or(0, Vec::len);
        if have > clip.len() {
            return Err(Error::Invalid(format!(
                "{} predictions for clip {} which has {} frames",
                have,
                clip.clip_id(),
                clip.len()
            )));
        }
        missing.extend((have + 1..=clip.len()).map(|t| (clip.clip_id().to_string(), t)));
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingPredictions(missing))
    }
}

/// Aggregates PCK over every frame of `clips`.
pub fn evaluate(predictions: &Predictions, clips: &[VideoClip], cfg: &PckConfig) -> Result<PckReport> {
    check_coverage(predictions, clips)?;
    let mut counts = vec![vec![Tally::default(); NUM_JOINTS]; NUM_STYLES];
    let (mut occluded, mut visible) = (Tally::default(), Tally::default());
    let mut excluded = Vec::new();
    for clip in clips {
        let preds = &predictions[clip.clip_id()];
        let row = &mut counts[clip.style().index()];
        for (t, (pred, gt)) in preds.iter().zip(clip.annotations()).enumerate() {
            let Ok(ok) = pck(pred, gt, cfg) else {
                excluded.push(FrameRef {
                    clip_id: clip.clip_id().to_string(),
                    frame: t + 1,
                });
                continue;
            };
            for j in 0..NUM_JOINTS {
                row[j].add(ok[j]);
                if gt.joints[j].visible {
                    visible.add(ok[j]);
                } else {
                    occluded.add(ok[j]);
                }
            }
        }
    }
    Ok(PckReport::from_counts(cfg.alpha, counts, occluded, visible, excluded))
}

/// Overall PCK at each α of an ascending list (α = 0 allowed).
pub fn pck_curve(predictions: &Predictions, clips: &[VideoClip], alphas: &[f64]) -> Result<Vec<(f64, f64)>> {
    if alphas.windows(2).any(|w| w[0] > w[1]) || alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(Error::Invalid("alphas must be finite, non-negative and ascending".into()));
    }
    check_coverage(predictions, clips)?;
    let frames: Vec<(&Pose, &Pose, f64)> = clips
        .iter()
        .flat_map(|clip| predictions[clip.clip_id()].iter().zip(clip.annotations()))
        .map(|(p, gt)| (p, gt, torso_diameter(gt)))
        .filter(|(_, _, torso)| *torso > 0.0 && torso.is_finite())
        .collect();
    let total = frames.len() * NUM_JOINTS;
    Ok(alphas
        .iter()
        .map(|&a| {
            // same comparison as `pck`: distance ≤ α · torso
            let hits: usize = frames
                .iter()
                .map(|(p, gt, torso)| correct_within(p, gt, a * torso).iter().filter(|&&b| b).count())
                .sum();
            let score = if total == 0 { 0.0 } else { 100.0 * hits as f64 / total as f64 };
            (a, score)
        })
        .collect())
}

/// `alpha,score` CSV with a header row.
pub fn curve_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("alpha,score\n");
    for (a, v) in curve {
        let _ = writeln!(s, "{a},{v}");
    }
    s
}

/// Evenly spaced α values from 0 to `max` inclusive.
pub fn alpha_grid(max: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| max * i as f64 / steps as f64).collect()
}

/// Plain-text score table: one row per model variant, one column per
/// style plus the combined score.
pub fn format_table(rows: &[(String, PckReport)]) -> String {
    let mut header = vec!["Model".to_string()];
    header.extend(StyleLabel::ALL.iter().map(|s| s.column_name().to_string()));
    header.push("Combined".into());
    let mut cells = vec![header];
    for (name, r) in rows {
        let mut row = vec![name.clone()];
        row.extend(
            r.per_style
                .iter()
                .map(|v| v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))),
        );
        row.push(format!("{:.1}", r.overall));
        cells.push(row);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Keypoint;

    fn pose_with(torso: f64) -> Pose {
        let mut joints = [Keypoint::new(50.0, 50.0, true); NUM_JOINTS];
        joints[JointId::RightShoulder.index()] = Keypoint::new(50.0, 50.0 - torso, true);
        Pose::new(joints).unwrap()
    }

    #[test]
    fn exact_prediction_is_all_correct() {
        let gt = pose_with(100.0);
        assert_eq!(pck(&gt, &gt, &PckConfig::default()).unwrap(), [true; NUM_JOINTS]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let gt = pose_with(100.0);
        let mut pred = gt.clone();
        pred.joints[JointId::LeftWrist.index()].x += 20.0;
        assert!(pck(&pred, &gt, &PckConfig::default()).unwrap()[JointId::LeftWrist.index()]);
        pred.joints[JointId::LeftWrist.index()].x += 0.001;
        assert!(!pck(&pred, &gt, &PckConfig::default()).unwrap()[JointId::LeftWrist.index()]);
    }

    #[test]
    fn zero_torso_is_flagged() {
        let gt = pose_with(0.0);
        assert!(pck(&gt, &gt, &PckConfig::default()).is_err());
        assert!(PckConfig::new(0.0).is_err());
    }

    #[test]
    fn table_has_fixed_columns() {
        let r = PckReport::from_counts(
            0.2,
            vec![vec![Tally { correct: 1, total: 2 }; NUM_JOINTS]; NUM_STYLES],
            Tally::default(),
            Tally::default(),
            vec![],
        );
        let t = format_table(&[("baseline".into(), r)]);
        let header: Vec<&str> = t.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(
            header,
            [
                "Model",
                "Backstroke-analog",
                "Breaststroke-analog",
                "Butterfly-analog",
                "Freestyle-analog",
                "Combined"
            ]
        );
        assert!(t.lines().nth(2).unwrap().ends_with("50.0"));
    }
}
