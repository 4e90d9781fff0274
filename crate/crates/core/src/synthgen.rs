//! Synthetic swimmer clips.
//!
//! Each clip shows a side-view stick figure swimming right to left against a
//! textured water background. The camera sees the body's left side; the
//! right-side limbs are drawn first, thinner and darker, and a right limb
//! lying exactly behind its left counterpart is not drawn at all.
//!
//! Styles come in two pairs that share the exact same left-side motion:
//!
//! | pair | left-side motion | symmetric | anti-symmetric |
//! |------|------------------|-----------|----------------|
//! | A    | forward arm circle with bent-arm pull, flutter kick | butterfly | freestyle |
//! | B    | backward straight-arm circle, frog-like kick        | breaststroke | backstroke |
//!
//! In symmetric styles the right side is annotated with the left side's
//! coordinates and is hidden behind it. In anti-symmetric styles the right
//! limbs run half a cycle behind and body roll moves the right shoulder and
//! hip. Occlusion removes the right-side limbs for
//! short spans of frames, so an occluded anti-symmetric frame looks exactly
//! like its symmetric partner; the style label or a neighbouring visible
//! frame resolves the ambiguity.

use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::types::{JointId, Keypoint, Pose, StyleLabel, VideoClip, NUM_JOINTS};
use crate::{Error, Result};

/// Styles sharing single-frame appearance under occlusion: (symmetric,
/// anti-symmetric).
pub const AMBIGUOUS_PAIRS: [(StyleLabel, StyleLabel); 2] = [
    (StyleLabel::Butterfly, StyleLabel::Freestyle),
    (StyleLabel::Breaststroke, StyleLabel::Backstroke),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_clips_per_style: usize,
    pub test_clips_per_style: usize,
    pub frames_per_clip: usize,
    pub image_size: u32,
    /// Frames per stroke cycle.
    pub period: usize,
    /// Target fraction of frames whose right-side limbs are not drawn.
    pub occlusion_rate: f64,
    /// Standard deviation of per-pixel noise as a fraction of full range.
    pub noise_level: f64,
    pub styles: Vec<StyleLabel>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_clips_per_style: 5,
            test_clips_per_style: 1,
            frames_per_clip: 150,
            image_size: 40,
            period: 24,
            occlusion_rate: 0.6,
            noise_level: 0.03,
            styles: StyleLabel::ALL.to_vec(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period < 4 {
            return Err(Error::Config(format!("period must be at least 4, got {}", self.period)));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return Err(Error::Config(format!(
                "occlusion_rate must lie in [0, 1], got {}",
                self.occlusion_rate
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config(format!("noise_level must be ≥ 0, got {}", self.noise_level)));
        }
        if self.image_size < 24 {
            return Err(Error::Config(format!("image_size must be at least 24, got {}", self.image_size)));
        }
        if self.frames_per_clip == 0 {
            return Err(Error::Config("frames_per_clip must be positive".into()));
        }
        if self.train_clips_per_style + self.test_clips_per_style == 0 {
            return Err(Error::Config("no clips requested".into()));
        }
        if self.styles.is_empty() {
            return Err(Error::Config("style set is empty".into()));
        }
        for (i, s) in self.styles.iter().enumerate() {
            if self.styles[..i].contains(s) {
                return Err(Error::Config(format!("style {s} listed twice")));
            }
        }
        Ok(())
    }
}

/// Whether a generated clip belongs to the training or the test split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

pub fn clip_id(style: StyleLabel, split: Split, index: usize) -> String {
    let split = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    format!("{}-{split}-{index:02}", style.name().to_lowercase())
}

/// Generates every clip of `cfg`, styles in config order, training clips
/// before test clips within a style.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<VideoClip>> {
    Ok(generate_with_split(cfg)?.into_iter().map(|(c, _)| c).collect())
}

/// Like [`generate`], also reporting each clip's split.
pub fn generate_with_split(cfg: &SynthConfig) -> Result<Vec<(VideoClip, Split)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &style in &cfg.styles {
        let jobs = (0..cfg.train_clips_per_style)
            .map(|i| (Split::Train, i))
            .chain((0..cfg.test_clips_per_style).map(|i| (Split::Test, i)));
        for (split, i) in jobs {
            let seed = derive_seed(cfg.seed, style, split, i);
            let clip = generate_clip(cfg, style, clip_id(style, split, i), seed)?;
            out.push((clip, split));
        }
    }
    Ok(out)
}

/// Test clip id per style, suitable for a clip-level holdout.
pub fn test_holdout(cfg: &SynthConfig) -> Vec<(StyleLabel, String)> {
    cfg.styles
        .iter()
        .flat_map(|&s| (0..cfg.test_clips_per_style).map(move |i| (s, clip_id(s, Split::Test, i))))
        .collect()
}

fn derive_seed(seed: u64, style: StyleLabel, split: Split, index: usize) -> u64 {
    // splitmix64 over the clip coordinates
    let mut z = seed
        ^ ((style.index() as u64) << 48)
        ^ ((split as u64) << 40)
        ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Limb lengths and offsets in units of the torso length.
mod body {
    pub const HEAD: (f64, f64) = (-0.40, -0.08);
    pub const SHOULDER: (f64, f64) = (0.08, 0.04);
    pub const HIP: (f64, f64) = (0.98, 0.04);
    pub const UPPER_ARM: f64 = 0.50;
    pub const FOREARM: f64 = 0.45;
    pub const THIGH: f64 = 0.55;
    pub const SHIN: f64 = 0.50;
    pub const BOB: f64 = 0.04;
    pub const ROLL_SHOULDER: f64 = 0.30;
    pub const ROLL_HIP: f64 = 0.25;
}

fn dir(angle: f64) -> (f64, f64) {
    (angle.cos(), angle.sin())
}

/// Limb angles (image coordinates, y down; angle π points forward) of one
/// side at stroke phase `phi`: (upper arm, forearm, thigh, shin).
fn limb_angles(style: StyleLabel, phi: f64) -> [f64; 4] {
    let pair_a = matches!(style, StyleLabel::Butterfly | StyleLabel::Freestyle);
    if pair_a {
        let upper = PI - phi;
        let fore = upper - 0.7 * phi.sin().max(0.0);
        let thigh = 0.3 * phi.sin();
        let shin = thigh + 0.2 * (1.0 + (phi - 0.8).sin());
        [upper, fore, thigh, shin]
    } else {
        let upper = PI + phi;
        let fore = upper - 0.1;
        let bend = 0.5 * (1.0 - phi.cos());
        let thigh = 0.45 * bend;
        let shin = thigh - 1.3 * bend;
        [upper, fore, thigh, shin]
    }
}

/// Ground-truth pose in body units (neck at the origin before bobbing).
fn body_pose(style: StyleLabel, phi: f64) -> [(f64, f64); NUM_JOINTS] {
    let bob = body::BOB * phi.sin();
    let neck = (0.0, bob);
    let add = |p: (f64, f64), q: (f64, f64)| (p.0 + q.0, p.1 + q.1);
    let shoulder = add(neck, body::SHOULDER);
    let hip = add(neck, body::HIP);
    // body roll displaces the far shoulder and hip in anti-symmetric styles
    let (r_shoulder, r_hip) = if style.symmetric() {
        (shoulder, hip)
    } else {
        (
            add(shoulder, (0.0, body::ROLL_SHOULDER * phi.sin())),
            add(hip, (0.0, body::ROLL_HIP * phi.sin())),
        )
    };
    let side = |phi: f64, shoulder: (f64, f64), hip: (f64, f64)| {
        let [ua, fa, ta, sa] = limb_angles(style, phi);
        let (du, df, dt, ds) = (dir(ua), dir(fa), dir(ta), dir(sa));
        let elbow = (shoulder.0 + body::UPPER_ARM * du.0, shoulder.1 + body::UPPER_ARM * du.1);
        let wrist = (elbow.0 + body::FOREARM * df.0, elbow.1 + body::FOREARM * df.1);
        let knee = (hip.0 + body::THIGH * dt.0, hip.1 + body::THIGH * dt.1);
        let ankle = (knee.0 + body::SHIN * ds.0, knee.1 + body::SHIN * ds.1);
        (elbow, wrist, knee, ankle)
    };
    let left = side(phi, shoulder, hip);
    let right = if style.symmetric() {
        left
    } else {
        side(phi + PI, r_shoulder, r_hip)
    };
    let mut p = [(0.0, 0.0); NUM_JOINTS];
    p[JointId::Head.index()] = add(neck, body::HEAD);
    p[JointId::Neck.index()] = neck;
    p[JointId::LeftShoulder.index()] = shoulder;
    p[JointId::RightShoulder.index()] = r_shoulder;
    p[JointId::LeftHip.index()] = hip;
    p[JointId::RightHip.index()] = r_hip;
    p[JointId::LeftElbow.index()] = left.0;
    p[JointId::LeftWrist.index()] = left.1;
    p[JointId::LeftKnee.index()] = left.2;
    p[JointId::LeftAnkle.index()] = left.3;
    p[JointId::RightElbow.index()] = right.0;
    p[JointId::RightWrist.index()] = right.1;
    p[JointId::RightKnee.index()] = right.2;
    p[JointId::RightAnkle.index()] = right.3;
    p
}

/// Per-clip placement: pixel = origin + scale · body coordinate.
struct Placement {
    scale: f64,
    origin: (f64, f64),
}

impl Placement {
    fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        (self.origin.0 + self.scale * p.0, self.origin.1 + self.scale * p.1)
    }
}

const MARGIN: f64 = 1.5;

fn place(style: StyleLabel, phase0: f64, period: usize, size: u32, rng: &mut ChaCha8Rng) -> Placement {
    // bounding box over one cycle, which by periodicity covers the clip
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for t in 0..period {
        for (x, y) in body_pose(style, phase_at(phase0, period, t)) {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    let room = size as f64 - 1.0 - 2.0 * MARGIN;
    let fit = room / (x1 - x0).max(y1 - y0);
    let scale = (size as f64 * rng.gen_range(0.27..0.31)).min(fit);
    let slack_x = room - scale * (x1 - x0);
    let slack_y = room - scale * (y1 - y0);
    let ox = MARGIN + rng.gen_range(0.0..=1.0) * slack_x - scale * x0;
    let oy = MARGIN + rng.gen_range(0.0..=1.0) * slack_y - scale * y0;
    Placement {
        scale,
        origin: (ox, oy),
    }
}

fn phase_at(phase0: f64, period: usize, frame0: usize) -> f64 {
    // reduce the frame index first so frame t and t + period match bitwise
    phase0 + 2.0 * PI * (frame0 % period) as f64 / period as f64
}

/// Occlusion mask with spans of 1–3 frames whose long-run density is
/// approximately `rate`.
fn occlusion_mask(frames: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = vec![false; frames];
    if rate <= 0.0 {
        return mask;
    }
    const MEAN_LEN: f64 = 2.0;
    let gap = if rate <= 2.0 / 3.0 { 1 } else { 0 };
    // density = MEAN_LEN / (MEAN_LEN + gap + (1 − q) / q)
    let q = (1.0 / (1.0 + MEAN_LEN / rate - MEAN_LEN - gap as f64)).clamp(0.0, 1.0);
    let mut t = 0;
    while t < frames {
        if rng.gen_bool(q) {
            let len = rng.gen_range(1..=3);
            for m in mask.iter_mut().skip(t).take(len) {
                *m = true;
            }
            t += len + gap;
        } else {
            t += 1;
        }
    }
    mask
}

const WATER: [f64; 3] = [28.0, 86.0, 140.0];
const WATER_VAR: [f64; 3] = [40.0, 55.0, 60.0];
const FAR_SIDE: [f64; 3] = [150.0, 105.0, 85.0];
const TORSO: [f64; 3] = [215.0, 165.0, 135.0];
const NEAR_SIDE: [f64; 3] = [240.0, 200.0, 170.0];

/// Two-octave smooth value noise in [0, 1].
fn background(size: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = size as usize;
    let mut field = vec![0.0; n * n];
    for (cells, amp) in [(3usize, 0.65), (7usize, 0.35)] {
        let g: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen::<f64>()).collect();
        let smooth = |u: f64| u * u * (3.0 - 2.0 * u);
        for y in 0..n {
            let fy = y as f64 / n as f64 * cells as f64;
            let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
            for x in 0..n {
                let fx = x as f64 / n as f64 * cells as f64;
                let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
                let at = |i: usize, j: usize| g[j * (cells + 1) + i];
                let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
                let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
                field[y * n + x] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    field
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let u = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + u * dx, a.1 + u * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Anti-aliased thick segment blended into a float canvas.
fn draw_segment(canvas: &mut [[f64; 3]], size: usize, a: (f64, f64), b: (f64, f64), width: f64, color: [f64; 3]) {
    let r = width / 2.0 + 1.0;
    let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
    let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + r).ceil() as usize).min(size - 1);
    let y1 = ((a.1.max(b.1) + r).ceil() as usize).min(size - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = segment_distance((x as f64, y as f64), a, b);
            let cover = (width / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                let px = &mut canvas[y * size + x];
                for c in 0..3 {
                    px[c] += cover * (color[c] - px[c]);
                }
            }
        }
    }
}

const NEAR_LIMBS: [(JointId, JointId); 4] = [
    (JointId::LeftShoulder, JointId::LeftElbow),
    (JointId::LeftElbow, JointId::LeftWrist),
    (JointId::LeftHip, JointId::LeftKnee),
    (JointId::LeftKnee, JointId::LeftAnkle),
];

const FAR_LIMBS: [(JointId, JointId); 6] = [
    (JointId::Neck, JointId::RightShoulder),
    (JointId::LeftHip, JointId::RightHip),
    (JointId::RightShoulder, JointId::RightElbow),
    (JointId::RightElbow, JointId::RightWrist),
    (JointId::RightHip, JointId::RightKnee),
    (JointId::RightKnee, JointId::RightAnkle),
];

fn render_frame(
    pose: &Pose,
    scale: f64,
    size: u32,
    background: &[f64],
    draw_far_side: bool,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> RgbImage {
    let n = size as usize;
    let mut canvas: Vec<[f64; 3]> = background
        .iter()
        .map(|&v| [0, 1, 2].map(|c| WATER[c] + WATER_VAR[c] * v))
        .collect();
    let at = |j: JointId| {
        let k = pose.joint(j);
        (k.x, k.y)
    };
    let limbs = |canvas: &mut Vec<[f64; 3]>, segments: &[(JointId, JointId)], width: f64, color: [f64; 3]| {
        for &(a, b) in segments {
            // a far segment lying exactly on its near twin is hidden
            let (ta, tb) = (a.mirror(), b.mirror());
            if (a.is_right() || b.is_right()) && at(a) == at(ta) && at(b) == at(tb) {
                continue;
            }
            draw_segment(canvas, n, at(a), at(b), width, color);
        }
    };
    if draw_far_side {
        limbs(&mut canvas, &FAR_LIMBS, 0.13 * scale, FAR_SIDE);
    }
    draw_segment(&mut canvas, n, at(JointId::Neck), at(JointId::LeftHip), 0.30 * scale, TORSO);
    draw_segment(&mut canvas, n, at(JointId::Neck), at(JointId::LeftShoulder), 0.22 * scale, TORSO);
    draw_segment(&mut canvas, n, at(JointId::Head), at(JointId::Head), 0.34 * scale, TORSO);
    draw_segment(&mut canvas, n, at(JointId::Head), at(JointId::Neck), 0.12 * scale, TORSO);
    limbs(&mut canvas, &NEAR_LIMBS, 0.16 * scale, NEAR_SIDE);
    let mut img = RgbImage::new(size, size);
    for (i, px) in img.pixels_mut().enumerate() {
        let v = canvas[i];
        *px = Rgb([0, 1, 2].map(|c| (v[c] + noise.sample(rng)).round().clamp(0.0, 255.0) as u8));
    }
    img
}

fn generate_clip(cfg: &SynthConfig, style: StyleLabel, id: String, seed: u64) -> Result<VideoClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase0 = rng.gen_range(0.0..2.0 * PI);
    let placement = place(style, phase0, cfg.period, cfg.image_size, &mut rng);
    let mask = occlusion_mask(cfg.frames_per_clip, cfg.occlusion_rate, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_level * 255.0).expect("validated noise level");
    let mut frames = Vec::with_capacity(cfg.frames_per_clip);
    let mut poses = Vec::with_capacity(cfg.frames_per_clip);
    for (t, &occluded) in mask.iter().enumerate() {
        let body = body_pose(style, phase_at(phase0, cfg.period, t));
        let mut joints = [Keypoint::new(0.0, 0.0, true); NUM_JOINTS];
        for j in JointId::ALL {
            let (x, y) = placement.apply(body[j.index()]);
            joints[j.index()] = Keypoint::new(x, y, !(occluded && j.is_right()));
        }
        let pose = Pose::new(joints)?;
        // moving water: a fresh texture every frame
        let bg = background(cfg.image_size, &mut rng);
        frames.push(render_frame(
            &pose,
            placement.scale,
            cfg.image_size,
            &bg,
            !occluded,
            &noise,
            &mut rng,
        ));
        poses.push(pose);
    }
    VideoClip::new(id, style, frames, poses)
}
