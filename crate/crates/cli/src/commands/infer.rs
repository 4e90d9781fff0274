use std::path::{Path, PathBuf};

use anyhow::Result;
use image::{imageops, Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_line_segment_mut};
use strokepose::synthgen::Split;
use strokepose::{JointId, Pose, VideoClip, SKELETON};

use super::{check_compatible, create_dir, load_checkpoint, load_dataset, write_file};
use crate::predictions::{to_jsonl, PredictionRecord};

const LEFT: Rgb<u8> = Rgb([255, 150, 0]);
const RIGHT: Rgb<u8> = Rgb([40, 160, 255]);
const CENTER: Rgb<u8> = Rgb([240, 240, 240]);

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Clip to process; repeatable [default: every test clip].
    #[arg(long = "clip")]
    clips: Vec<String>,
    /// Also write one skeleton overlay PNG per frame.
    #[arg(long)]
    overlays: bool,
    /// Upscaling factor of overlay images.
    #[arg(long, default_value_t = 8)]
    overlay_scale: u32,
    /// Output directory [default: <out-root>/infer].
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args, root: &Path) -> Result<()> {
    if args.overlay_scale == 0 {
        return Err(crate::invalid!("--overlay-scale must be positive"));
    }
    let ds = load_dataset(&args.dataset)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    check_compatible(&ck, &args.checkpoint, &ds)?;
    let clips: Vec<&VideoClip> = if args.clips.is_empty() {
        let test: Vec<&str> = ds
            .manifest
            .split
            .iter()
            .filter(|(_, s)| **s == Split::Test)
            .map(|(id, _)| id.as_str())
            .collect();
        ds.clips.iter().filter(|c| test.contains(&c.clip_id())).collect()
    } else {
        args.clips
            .iter()
            .map(|id| ds.clip(id).ok_or_else(|| crate::invalid!("dataset has no clip {id}")))
            .collect::<Result<_>>()?
    };
    let predictor = ck.predictor()?;
    let out = args.out.unwrap_or_else(|| root.join("infer"));
    create_dir(&out)?;
    let mut records = Vec::new();
    for clip in clips {
        let decoded = predictor.predict_clip(clip)?;
        if args.overlays {
            let dir = out.join("overlays").join(clip.clip_id());
            create_dir(&dir)?;
            for (t, (frame, d)) in clip.frames().iter().zip(&decoded).enumerate() {
                let path = dir.join(format!("frame_{:05}.png", t + 1));
                overlay(frame, &d.pose, args.overlay_scale)
                    .save(&path)
                    .map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))?;
            }
        }
        records.extend(
            decoded
                .iter()
                .enumerate()
                .map(|(t, d)| PredictionRecord::new(clip.clip_id(), t + 1, d)),
        );
        eprintln!("{}: {} frames", clip.clip_id(), clip.len());
    }
    write_file(&out.join("predictions.jsonl"), to_jsonl(&records))?;
    println!("wrote {} predictions to {}", records.len(), out.display());
    Ok(())
}

fn bone_color(a: JointId, b: JointId) -> Rgb<u8> {
    if a.is_right() || b.is_right() {
        if a.is_left() || b.is_left() {
            CENTER
        } else {
            RIGHT
        }
    } else if a.is_left() || b.is_left() {
        LEFT
    } else {
        CENTER
    }
}

/// The frame upscaled by `scale` with the skeleton drawn over it; left-side
/// bones and joints are drawn in a distinct colour.
pub fn overlay(frame: &RgbImage, pose: &Pose, scale: u32) -> RgbImage {
    let mut img = imageops::resize(
        frame,
        frame.width() * scale,
        frame.height() * scale,
        imageops::FilterType::Nearest,
    );
    let s = scale as f32;
    // pixel centres map to the middle of each upscaled block
    let at = |j: JointId| {
        let k = pose.joint(j);
        ((k.x as f32 + 0.5) * s, (k.y as f32 + 0.5) * s)
    };
    for (a, b) in SKELETON {
        draw_line_segment_mut(&mut img, at(a), at(b), bone_color(a, b));
    }
    let r = (scale as i32 / 3).max(1);
    for j in JointId::ALL {
        let (x, y) = at(j);
        let color = if j.is_left() { LEFT } else if j.is_right() { RIGHT } else { CENTER };
        draw_filled_circle_mut(&mut img, (x.round() as i32, y.round() as i32), r, color);
    }
    img
}
