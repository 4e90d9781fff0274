//! On-disk dataset layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/<clip_id>/annotations.jsonl
//! <root>/<clip_id>/frame_00001.png ...
//! ```
//!
//! `manifest.json` lists every clip with its style, frame count, frame file
//! pattern (`{frame}` is replaced by the zero-padded 1-based index) and
//! annotation path, plus the clip-level train/test split. Each annotation
//! line is `{"frame_index": t, "joints": [[x, y, visible], ...]}` with the
//! 14 joints in fixed order and coordinates in pixels, origin at the centre
//! of the top-left pixel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::synthgen::{Split, SynthConfig};
use crate::types::{Keypoint, Pose, StyleLabel, VideoClip, NUM_JOINTS};
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const FRAME_PATTERN: &str = "frame_{frame}.png";
const FRAME_DIGITS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    pub style: StyleLabel,
    pub frame_count: usize,
    /// Relative to the dataset root.
    pub frame_pattern: String,
    pub annotations: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub image_size: [u32; 2],
    pub clips: Vec<ClipEntry>,
    pub split: BTreeMap<String, Split>,
    /// Generator settings when the dataset is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &self.clips {
            if !seen.insert(c.clip_id.as_str()) {
                return Err(Error::Dataset(format!("duplicate clip_id {}", c.clip_id)));
            }
            if !self.split.contains_key(&c.clip_id) {
                return Err(Error::Dataset(format!("clip {} has no split assignment", c.clip_id)));
            }
            if !c.frame_pattern.contains("{frame}") {
                return Err(Error::Dataset(format!(
                    "clip {}: frame pattern {:?} lacks {{frame}}",
                    c.clip_id, c.frame_pattern
                )));
            }
        }
        if let Some(id) = self.split.keys().find(|id| !seen.contains(id.as_str())) {
            return Err(Error::Dataset(format!("split names unknown clip {id}")));
        }
        Ok(())
    }

    /// Frames per style and split: `(style, train, test)` for every style.
    pub fn frame_counts(&self) -> Vec<(StyleLabel, usize, usize)> {
        StyleLabel::ALL
            .iter()
            .map(|&s| {
                let count = |split: Split| {
                    self.clips
                        .iter()
                        .filter(|c| c.style == s && self.split[&c.clip_id] == split)
                        .map(|c| c.frame_count)
                        .sum()
                };
                (s, count(Split::Train), count(Split::Test))
            })
            .collect()
    }

    /// Per-style train/test frame counts as a plain-text table.
    pub fn summary_table(&self) -> String {
        let mut out = format!("{:<20} {:>8} {:>8}\n", "Style", "Train", "Test");
        let (mut tr, mut te) = (0, 0);
        for (s, train, test) in self.frame_counts() {
            let _ = writeln!(out, "{:<20} {train:>8} {test:>8}", s.column_name());
            tr += train;
            te += test;
        }
        let _ = writeln!(out, "{:<20} {tr:>8} {te:>8}", "Total");
        out
    }
}

pub fn frame_file(pattern: &str, t: usize) -> String {
    pattern.replace("{frame}", &format!("{t:0FRAME_DIGITS$}"))
}

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    frame_index: usize,
    joints: Vec<(f64, f64, bool)>,
}

/// Loaded clips plus their manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub clips: Vec<VideoClip>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<VideoClip> {
        self.clips
            .iter()
            .filter(|c| self.manifest.split[c.clip_id()] == split)
            .cloned()
            .collect()
    }

    pub fn clip(&self, id: &str) -> Option<&VideoClip> {
        self.clips.iter().find(|c| c.clip_id() == id)
    }
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes clips under `root` (created if needed) and returns the manifest.
pub fn write_dataset(root: &Path, clips: &[(VideoClip, Split)], synth: Option<&SynthConfig>) -> Result<DatasetManifest> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Dataset("refusing to write an empty dataset".into()))?;
    let (w, h) = first.0.image_size();
    let mut manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        image_size: [w, h],
        clips: Vec::with_capacity(clips.len()),
        split: BTreeMap::new(),
        synth: synth.cloned(),
    };
    for (clip, split) in clips {
        if clip.image_size() != (w, h) {
            return Err(Error::Dataset(format!(
                "clip {} has image size {:?}, expected {:?}",
                clip.clip_id(),
                clip.image_size(),
                (w, h)
            )));
        }
        let dir = root.join(clip.clip_id());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let pattern = format!("{}/{FRAME_PATTERN}", clip.clip_id());
        for (i, frame) in clip.frames().iter().enumerate() {
            let path = root.join(frame_file(&pattern, i + 1));
            frame.save(&path).map_err(|e| Error::Image { path, source: e })?;
        }
        let ann = format!("{}/annotations.jsonl", clip.clip_id());
        write_annotations(&root.join(&ann), clip.annotations())?;
        manifest.clips.push(ClipEntry {
            clip_id: clip.clip_id().to_string(),
            style: clip.style(),
            frame_count: clip.len(),
            frame_pattern: pattern,
            annotations: ann,
        });
        manifest.split.insert(clip.clip_id().to_string(), *split);
    }
    manifest.validate()?;
    write_json_file(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_annotations(path: &Path, poses: &[Pose]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, pose) in poses.iter().enumerate() {
        let rec = AnnotationRecord {
            frame_index: i + 1,
            joints: pose.joints.iter().map(|k| (k.x, k.y, k.visible)).collect(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::json(path.display().to_string(), e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an annotation file; records must be in frame order starting at 1.
pub fn read_annotations(path: &Path) -> Result<Vec<Pose>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut poses = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("{} line {}", path.display(), n + 1);
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| Error::json(ctx(), e))?;
        if rec.frame_index != poses.len() + 1 {
            return Err(Error::Dataset(format!(
                "{}: expected frame_index {}, found {}",
                ctx(),
                poses.len() + 1,
                rec.frame_index
            )));
        }
        if rec.joints.len() != NUM_JOINTS {
            return Err(Error::Dataset(format!(
                "{}: {} joints, expected {NUM_JOINTS}",
                ctx(),
                rec.joints.len()
            )));
        }
        let joints: [Keypoint; NUM_JOINTS] = std::array::from_fn(|j| {
            let (x, y, v) = rec.joints[j];
            Keypoint::new(x, y, v)
        });
        poses.push(Pose::new(joints).map_err(|e| Error::Dataset(format!("{}: {e}", ctx())))?);
    }
    Ok(poses)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    m.validate()?;
    Ok(m)
}

fn load_frame(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(img.to_rgb8())
}

/// Loads a dataset from its manifest path or its root directory.
pub fn load(path: &Path) -> Result<Dataset> {
    let (root, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let manifest = read_manifest(&manifest_path)?;
    let mut clips = Vec::with_capacity(manifest.clips.len());
    for entry in &manifest.clips {
        let poses = read_annotations(&root.join(&entry.annotations))?;
        if poses.len() != entry.frame_count {
            return Err(Error::Dataset(format!(
                "clip {}: {} annotation records for {} frames",
                entry.clip_id,
                poses.len(),
                entry.frame_count
            )));
        }
        let frames = (1..=entry.frame_count)
            .map(|t| load_frame(&root.join(frame_file(&entry.frame_pattern, t))))
            .collect::<Result<Vec<_>>>()?;
        let clip = VideoClip::new(entry.clip_id.clone(), entry.style, frames, poses)
            .map_err(|e| Error::Dataset(format!("clip {}: {e}", entry.clip_id)))?;
        if clip.image_size() != (manifest.image_size[0], manifest.image_size[1]) {
            return Err(Error::Dataset(format!(
                "clip {}: frames are {:?}, manifest says {:?}",
                entry.clip_id,
                clip.image_size(),
                manifest.image_size
            )));
        }
        clips.push(clip);
    }
    Ok(Dataset { root, manifest, clips })
}

/// Holds out the named clip of each style; everything else is training data.
pub fn split_by_clip(
    clips: &[VideoClip],
    holdout: &BTreeMap<StyleLabel, String>,
) -> Result<(Vec<VideoClip>, Vec<VideoClip>)> {
    for (style, id) in holdout {
        match clips.iter().find(|c| c.clip_id() == id) {
            None => return Err(Error::Dataset(format!("holdout clip {id} does not exist"))),
            Some(c) if c.style() != *style => {
                return Err(Error::Dataset(format!(
                    "holdout clip {id} is {}, not {style}",
                    c.style()
                )))
            }
            Some(_) => {}
        }
    }
    let held: BTreeSet<&str> = holdout.values().map(String::as_str).collect();
    let (test, train) = clips.iter().cloned().partition(|c| held.contains(c.clip_id()));
    Ok((train, test))
}
