use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use strokepose::dataio::{self, MANIFEST_FILE};
use strokepose::synthgen::generate_with_split;
use strokepose::StyleLabel;

use crate::config::{set, RunConfig};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Run configuration file; its `synth` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: <out-root>/data].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing dataset in the output directory.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_clips: Option<usize>,
    #[arg(long)]
    test_clips: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    image_size: Option<u32>,
    /// Stroke cycle length in frames.
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    occlusion_rate: Option<f64>,
    #[arg(long)]
    noise_level: Option<f64>,
    /// Comma-separated style names.
    #[arg(long, value_delimiter = ',')]
    styles: Option<Vec<StyleLabel>>,
}

pub fn run(args: Args, root: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?.synth;
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.train_clips_per_style, args.train_clips);
    set(&mut cfg.test_clips_per_style, args.test_clips);
    set(&mut cfg.frames_per_clip, args.frames);
    set(&mut cfg.image_size, args.image_size);
    set(&mut cfg.period, args.period);
    set(&mut cfg.occlusion_rate, args.occlusion_rate);
    set(&mut cfg.noise_level, args.noise_level);
    set(&mut cfg.styles, args.styles);
    cfg.validate()?;

    let out = args.out.unwrap_or_else(|| root.join("data"));
    if out.join(MANIFEST_FILE).exists() {
        if !args.force {
            return Err(crate::invalid!(
                "{} already holds a dataset; pass --force to replace it",
                out.display()
            ));
        }
        fs::remove_dir_all(&out).with_context(|| format!("removing {}", out.display()))?;
    }
    let clips = generate_with_split(&cfg)?;
    let manifest = dataio::write_dataset(&out, &clips, Some(&cfg))?;
    print!("{}", manifest.summary_table());
    println!("wrote {} clips to {}", manifest.clips.len(), out.display());
    println!("digest {}", dataset_digest(&out, &manifest)?);
    Ok(())
}

/// SHA-256 over the manifest and every file it references, in manifest order.
pub fn dataset_digest(root: &Path, manifest: &dataio::DatasetManifest) -> Result<String> {
    let mut h = Sha256::new();
    let mut add = |rel: &str| -> Result<()> {
        let path = root.join(rel);
        h.update(rel.as_bytes());
        h.update(fs::read(&path).with_context(|| format!("reading {}", path.display()))?);
        Ok(())
    };
    add(MANIFEST_FILE)?;
    for clip in &manifest.clips {
        add(&clip.annotations)?;
        for t in 1..=clip.frame_count {
            add(&dataio::frame_file(&clip.frame_pattern, t))?;
        }
    }
    Ok(format!("{:x}", h.finalize()))
}
