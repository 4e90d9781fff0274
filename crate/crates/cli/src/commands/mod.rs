pub mod eval;
pub mod infer;
pub mod plot;
pub mod synth;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};
use strokepose::checkpoint::Checkpoint;
use strokepose::dataio::Dataset;

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(crate::invalid!("dataset {} does not exist", path.display()));
    }
    Ok(strokepose::dataio::load(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(crate::invalid!("checkpoint {} does not exist", path.display()));
    }
    Ok(Checkpoint::load(path)?)
}

/// Refuses datasets whose frame size differs from the one the checkpoint
/// was trained on.
pub fn check_compatible(ck: &Checkpoint, ck_path: &Path, ds: &Dataset) -> Result<()> {
    let trained: Option<[u32; 2]> = ck
        .run_config
        .get("dataset_image_size")
        .and_then(|v| serde_json::from_value(v.clone()).ok());
    match trained {
        Some(size) if size != ds.manifest.image_size => Err(crate::invalid!(
            "checkpoint {} was trained on {}x{} frames but dataset {} has {}x{}",
            ck_path.display(),
            size[0],
            size[1],
            ds.root.display(),
            ds.manifest.image_size[0],
            ds.manifest.image_size[1]
        )),
        _ => Ok(()),
    }
}

/// Prints a progress line roughly ten times over `total` steps.
pub fn progress(label: &str, iteration: usize, total: usize, loss: f64) {
    let every = (total / 10).max(1);
    if iteration.is_multiple_of(every) || iteration == total {
        eprintln!("{label} {iteration}/{total} loss {loss:.6}");
    }
}
