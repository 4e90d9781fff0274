//! Domain types shared across the crate.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use strokepose_nn::Tensor;

use crate::conditioning::ConditioningMode;
use crate::{Error, Result};

pub const NUM_JOINTS: usize = 14;
pub const NUM_STYLES: usize = 4;

/// Bones of the stick-figure skeleton as joint pairs.
pub const SKELETON: [(JointId, JointId); 13] = [
    (JointId::Head, JointId::Neck),
    (JointId::Neck, JointId::LeftShoulder),
    (JointId::Neck, JointId::RightShoulder),
    (JointId::LeftShoulder, JointId::LeftElbow),
    (JointId::LeftElbow, JointId::LeftWrist),
    (JointId::RightShoulder, JointId::RightElbow),
    (JointId::RightElbow, JointId::RightWrist),
    (JointId::Neck, JointId::LeftHip),
    (JointId::LeftHip, JointId::RightHip),
    (JointId::LeftHip, JointId::LeftKnee),
    (JointId::LeftKnee, JointId::LeftAnkle),
    (JointId::RightHip, JointId::RightKnee),
    (JointId::RightKnee, JointId::RightAnkle),
];

/// The 14 joints of the person-centric body model, in index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointId {
    Head,
    Neck,
    LeftShoulder,
    RightShoulder,
    LeftElbow,
    RightElbow,
    LeftWrist,
    RightWrist,
    LeftHip,
    RightHip,
    LeftKnee,
    RightKnee,
    LeftAnkle,
    RightAnkle,
}

impl JointId {
    pub const ALL: [JointId; NUM_JOINTS] = [
        JointId::Head,
        JointId::Neck,
        JointId::LeftShoulder,
        JointId::RightShoulder,
        JointId::LeftElbow,
        JointId::RightElbow,
        JointId::LeftWrist,
        JointId::RightWrist,
        JointId::LeftHip,
        JointId::RightHip,
        JointId::LeftKnee,
        JointId::RightKnee,
        JointId::LeftAnkle,
        JointId::RightAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Left/right counterpart; head and neck map to themselves.
    pub fn mirror(self) -> Self {
        use JointId::*;
        match self {
            Head => Head,
            Neck => Neck,
            LeftShoulder => RightShoulder,
            RightShoulder => LeftShoulder,
            LeftElbow => RightElbow,
            RightElbow => LeftElbow,
            LeftWrist => RightWrist,
            RightWrist => LeftWrist,
            LeftHip => RightHip,
            RightHip => LeftHip,
            LeftKnee => RightKnee,
            RightKnee => LeftKnee,
            LeftAnkle => RightAnkle,
            RightAnkle => LeftAnkle,
        }
    }

    pub fn is_left(self) -> bool {
        use JointId::*;
        matches!(
            self,
            LeftShoulder | LeftElbow | LeftWrist | LeftHip | LeftKnee | LeftAnkle
        )
    }

    pub fn is_right(self) -> bool {
        self.mirror().is_left()
    }

    pub fn name(self) -> &'static str {
        use JointId::*;
        match self {
            Head => "head",
            Neck => "neck",
            LeftShoulder => "left_shoulder",
            RightShoulder => "right_shoulder",
            LeftElbow => "left_elbow",
            RightElbow => "right_elbow",
            LeftWrist => "left_wrist",
            RightWrist => "right_wrist",
            LeftHip => "left_hip",
            RightHip => "right_hip",
            LeftKnee => "left_knee",
            RightKnee => "right_knee",
            LeftAnkle => "left_ankle",
            RightAnkle => "right_ankle",
        }
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One annotated joint. Coordinates are continuous image pixels with the
/// origin at the centre of the top-left pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, visible: bool) -> Self {
        Self { x, y, visible }
    }

    pub fn distance(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Full-body pose. Occluded joints keep their coordinates with
/// `visible == false`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joints: [Keypoint; NUM_JOINTS],
}

impl Pose {
    pub fn new(joints: [Keypoint; NUM_JOINTS]) -> Result<Self> {
        if let Some(j) = joints.iter().position(|k| !k.x.is_finite() || !k.y.is_finite()) {
            return Err(Error::Invalid(format!(
                "joint {} has non-finite coordinates",
                JointId::ALL[j]
            )));
        }
        Ok(Self { joints })
    }

    pub fn joint(&self, j: JointId) -> &Keypoint {
        &self.joints[j.index()]
    }

    pub fn joint_mut(&mut self, j: JointId) -> &mut Keypoint {
        &mut self.joints[j.index()]
    }

    /// Reflects about the vertical image axis and swaps left/right labels.
    pub fn mirror(&self, image_width: u32) -> Pose {
        let max_x = image_width as f64 - 1.0;
        let mut joints = self.joints;
        for j in JointId::ALL {
            let src = self.joints[j.mirror().index()];
            joints[j.index()] = Keypoint::new(max_x - src.x, src.y, src.visible);
        }
        Pose { joints }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Pose {
        let mut p = self.clone();
        for k in &mut p.joints {
            k.x += dx;
            k.y += dy;
        }
        p
    }

    pub fn scaled(&self, s: f64) -> Pose {
        let mut p = self.clone();
        for k in &mut p.joints {
            k.x *= s;
            k.y *= s;
        }
        p
    }
}

/// Free-function form of [`Pose::mirror`].
pub fn mirror_pose(pose: &Pose, image_width: u32) -> Pose {
    pose.mirror(image_width)
}

/// Activity class. Enum order is the class-label channel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleLabel {
    Backstroke,
    Breaststroke,
    Butterfly,
    Freestyle,
}

impl StyleLabel {
    pub const ALL: [StyleLabel; NUM_STYLES] = [
        StyleLabel::Backstroke,
        StyleLabel::Breaststroke,
        StyleLabel::Butterfly,
        StyleLabel::Freestyle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Left and right limbs move in phase and share annotations.
    pub fn symmetric(self) -> bool {
        matches!(self, StyleLabel::Breaststroke | StyleLabel::Butterfly)
    }

    pub fn one_hot(self) -> [f32; NUM_STYLES] {
        let mut v = [0.0; NUM_STYLES];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            StyleLabel::Backstroke => "backstroke",
            StyleLabel::Breaststroke => "breaststroke",
            StyleLabel::Butterfly => "butterfly",
            StyleLabel::Freestyle => "freestyle",
        }
    }

    /// Column heading used in report tables.
    pub fn column_name(self) -> &'static str {
        match self {
            StyleLabel::Backstroke => "Backstroke-analog",
            StyleLabel::Breaststroke => "Breaststroke-analog",
            StyleLabel::Butterfly => "Butterfly-analog",
            StyleLabel::Freestyle => "Freestyle-analog",
        }
    }
}

impl fmt::Display for StyleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StyleLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StyleLabel::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown style `{s}`")))
    }
}

/// `J` confidence maps on the heatmap grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    data: Tensor,
    grid_stride: u32,
}

impl HeatmapStack {
    pub fn new(data: Tensor, grid_stride: u32) -> Result<Self> {
        let (j, _, _) = data.dims3()?;
        if j != NUM_JOINTS {
            return Err(Error::Shape(format!(
                "heatmap stack needs {NUM_JOINTS} maps, got {j}"
            )));
        }
        if !data.all_finite() {
            return Err(Error::Invalid("heatmap contains non-finite values".into()));
        }
        if grid_stride == 0 {
            return Err(Error::Invalid("grid stride must be positive".into()));
        }
        Ok(Self { data, grid_stride })
    }

    pub fn zeros(height: usize, width: usize, grid_stride: u32) -> Self {
        Self {
            data: Tensor::zeros(&[NUM_JOINTS, height, width]),
            grid_stride,
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn grid_stride(&self) -> u32 {
        self.grid_stride
    }

    /// `(height, width)` of each map.
    pub fn map_size(&self) -> (usize, usize) {
        let s = self.data.shape();
        (s[1], s[2])
    }

    pub fn map(&self, j: JointId) -> &[f32] {
        self.data.channel(j.index())
    }
}

/// Ordered frames of one athlete performing one style.
#[derive(Clone, Debug)]
pub struct VideoClip {
    clip_id: String,
    style: StyleLabel,
    frames: Vec<RgbImage>,
    annotations: Vec<Pose>,
}

impl VideoClip {
    pub fn new(
        clip_id: impl Into<String>,
        style: StyleLabel,
        frames: Vec<RgbImage>,
        annotations: Vec<Pose>,
    ) -> Result<Self> {
        let clip_id = clip_id.into();
        if frames.is_empty() {
            return Err(Error::Dataset(format!("clip `{clip_id}` has no frames")));
        }
        if frames.len() != annotations.len() {
            return Err(Error::Dataset(format!(
                "clip `{clip_id}`: {} frames but {} annotations",
                frames.len(),
                annotations.len()
            )));
        }
        let (w, h) = frames[0].dimensions();
        if frames.iter().any(|f| f.dimensions() != (w, h)) {
            return Err(Error::Dataset(format!(
                "clip `{clip_id}`: frames differ in size"
            )));
        }
        Ok(Self {
            clip_id,
            style,
            frames,
            annotations,
        })
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn style(&self) -> StyleLabel {
        self.style
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn annotations(&self) -> &[Pose] {
        &self.annotations
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame at 1-based index `t`.
    pub fn frame(&self, t: usize) -> Option<&RgbImage> {
        t.checked_sub(1).and_then(|i| self.frames.get(i))
    }

    /// Annotation at 1-based index `t`.
    pub fn annotation(&self, t: usize) -> Option<&Pose> {
        t.checked_sub(1).and_then(|i| self.annotations.get(i))
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }
}

/// Temporal window of a refinement input: span `k = 4l+1` frames sampled
/// every other frame, giving `k' = 2l+1` stacked estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub l: usize,
}

impl SequenceSpec {
    pub fn new(l: usize) -> Self {
        Self { l }
    }

    pub fn k(&self) -> usize {
        4 * self.l + 1
    }

    pub fn k_prime(&self) -> usize {
        2 * self.l + 1
    }
}

/// Architecture and target-rendering settings for the estimator and the
/// temporal refiner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_stages: usize,
    pub num_joints: usize,
    pub input_size: u32,
    pub heatmap_size: u32,
    /// Target Gaussian standard deviation in heatmap cells.
    pub gaussian_sigma: f64,
    pub conditioning_mode: ConditioningMode,
    /// Estimator stages (1-based, each ≥ 2) that receive class label maps.
    pub conditioned_stages: Vec<usize>,
    pub seq_spec: SequenceSpec,
    /// Channels of the convolutions before the first pooling step.
    pub stem_channels: usize,
    /// Channels of the shared image features reused by every stage.
    pub feature_channels: usize,
    /// Hidden channels inside each stage.
    pub stage_channels: usize,
    pub stage_kernel: usize,
    /// Convolution layers per stage, including the final 1×1 output layer.
    pub stage_convs: usize,
    pub branch_channels: usize,
    pub branch_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_stages: 3,
            num_joints: NUM_JOINTS,
            input_size: 368,
            heatmap_size: 46,
            gaussian_sigma: 1.0,
            conditioning_mode: ConditioningMode::None,
            conditioned_stages: vec![2, 3],
            seq_spec: SequenceSpec::new(0),
            stem_channels: 32,
            feature_channels: 32,
            stage_channels: 64,
            stage_kernel: 7,
            stage_convs: 5,
            branch_channels: 32,
            branch_kernel: 7,
        }
    }
}

impl ModelConfig {
    /// Reduced-width preset for 40×40 inputs on a 20×20 heatmap grid.
    pub fn desk() -> Self {
        Self {
            input_size: 40,
            heatmap_size: 20,
            stem_channels: 16,
            feature_channels: 32,
            stage_channels: 24,
            stage_kernel: 5,
            stage_convs: 3,
            branch_channels: 16,
            branch_kernel: 7,
            ..Self::default()
        }
    }

    /// Input-image pixels per heatmap cell.
    pub fn grid_stride(&self) -> u32 {
        self.input_size / self.heatmap_size.max(1)
    }

    pub fn with_conditioning(mut self, mode: ConditioningMode) -> Self {
        self.conditioning_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_stages < 1 {
            return bad("num_stages must be at least 1".into());
        }
        if self.num_joints != NUM_JOINTS {
            return bad(format!("num_joints is fixed at {NUM_JOINTS}"));
        }
        if self.heatmap_size == 0 || !self.input_size.is_multiple_of(self.heatmap_size) {
            return bad(format!(
                "input_size {} is not divisible by heatmap_size {}",
                self.input_size, self.heatmap_size
            ));
        }
        if !self.grid_stride().is_power_of_two() {
            return bad(format!(
                "grid stride {} must be a power of two",
                self.grid_stride()
            ));
        }
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return bad("gaussian_sigma must be positive".into());
        }
        if self.stage_kernel.is_multiple_of(2) || self.branch_kernel.is_multiple_of(2) {
            return bad("kernel sizes must be odd".into());
        }
        if self.stage_convs < 1 {
            return bad("stage_convs must be at least 1".into());
        }
        for &s in &self.conditioned_stages {
            if s < 2 {
                return bad(format!(
                    "stage {s} cannot be conditioned: stage 1 only sees local image content"
                ));
            }
            if s > self.num_stages {
                return bad(format!(
                    "conditioned stage {s} exceeds num_stages {}",
                    self.num_stages
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn joint_indices_are_stable() {
        for (i, j) in JointId::ALL.iter().enumerate() {
            assert_eq!(j.index(), i);
            assert_eq!(JointId::from_index(i), Some(*j));
        }
        assert_eq!(JointId::ALL.len(), 14);
        assert_eq!(JointId::RightAnkle.index(), 13);
    }

    #[test]
    fn mirror_map_is_total_and_involutive() {
        for j in JointId::ALL {
            assert_eq!(j.mirror().mirror(), j);
            if matches!(j, JointId::Head | JointId::Neck) {
                assert_eq!(j.mirror(), j);
            } else {
                assert_ne!(j.mirror(), j);
                assert_ne!(j.is_left(), j.mirror().is_left());
            }
        }
    }

    fn pose_with(j: JointId, x: f64, y: f64) -> Pose {
        let mut joints = [Keypoint::new(50.0, 50.0, true); NUM_JOINTS];
        joints[j.index()] = Keypoint::new(x, y, true);
        Pose::new(joints).unwrap()
    }

    #[test]
    fn mirror_head_stays_head() {
        let p = pose_with(JointId::Head, 10.0, 5.0).mirror(100);
        assert_eq!(p.joint(JointId::Head), &Keypoint::new(89.0, 5.0, true));
    }

    #[test]
    fn mirror_left_wrist_becomes_right_wrist() {
        let p = pose_with(JointId::LeftWrist, 10.0, 5.0);
        let m = mirror_pose(&p, 100);
        assert_eq!(m.joint(JointId::RightWrist), &Keypoint::new(89.0, 5.0, true));
        assert_eq!(m.joint(JointId::LeftWrist), &Keypoint::new(49.0, 50.0, true));
    }

    #[test]
    fn pose_rejects_non_finite() {
        let mut joints = [Keypoint::new(1.0, 1.0, true); NUM_JOINTS];
        joints[3].x = f64::NAN;
        assert!(Pose::new(joints).is_err());
    }

    #[test]
    fn one_hot_has_single_one() {
        for s in StyleLabel::ALL {
            let v = s.one_hot();
            assert_eq!(v.iter().sum::<f32>(), 1.0);
            assert_eq!(v[s.index()], 1.0);
        }
        assert!(StyleLabel::Butterfly.symmetric());
        assert!(StyleLabel::Breaststroke.symmetric());
        assert!(!StyleLabel::Freestyle.symmetric());
        assert!(!StyleLabel::Backstroke.symmetric());
        assert_eq!("freestyle".parse::<StyleLabel>().unwrap(), StyleLabel::Freestyle);
        assert!("crawl".parse::<StyleLabel>().is_err());
    }

    #[test]
    fn sequence_spec_derivations() {
        for l in 0..=10 {
            let s = SequenceSpec::new(l);
            assert_eq!(s.k(), 4 * l + 1);
            assert_eq!(s.k_prime(), 2 * l + 1);
        }
        assert_eq!(SequenceSpec::new(7).k(), 29);
    }

    #[test]
    fn model_config_validation() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        assert_eq!(ModelConfig::default().grid_stride(), 8);
        let c = ModelConfig {
            heatmap_size: 45,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            conditioned_stages: vec![1],
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.input_size = 60;
        assert!(c.validate().is_err(), "stride 3 is not reachable by pooling");
    }

    #[test]
    fn clip_requires_matching_counts() {
        let frames = vec![RgbImage::new(4, 4); 3];
        let pose = pose_with(JointId::Head, 1.0, 1.0);
        assert!(VideoClip::new("c", StyleLabel::Freestyle, frames.clone(), vec![pose.clone(); 2]).is_err());
        assert!(VideoClip::new("c", StyleLabel::Freestyle, vec![], vec![]).is_err());
        let clip = VideoClip::new("c", StyleLabel::Freestyle, frames, vec![pose; 3]).unwrap();
        assert!(clip.frame(0).is_none());
        assert!(clip.frame(3).is_some());
        assert!(clip.frame(4).is_none());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        prop::collection::vec((0.0f64..200.0, 0.0f64..200.0, any::<bool>()), NUM_JOINTS).prop_map(|v| {
            let mut joints = [Keypoint::new(0.0, 0.0, true); NUM_JOINTS];
            for (k, (x, y, vis)) in joints.iter_mut().zip(v) {
                *k = Keypoint::new(x, y, vis);
            }
            Pose::new(joints).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mirror_is_an_involution(p in arb_pose(), w in 1u32..400) {
            let back = p.mirror(w).mirror(w);
            for (a, b) in back.joints.iter().zip(&p.joints) {
                prop_assert!((a.x - b.x).abs() < 1e-9);
                prop_assert_eq!(a.y, b.y);
                prop_assert_eq!(a.visible, b.visible);
            }
        }
    }
}
