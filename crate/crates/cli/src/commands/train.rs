use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use strokepose::checkpoint::{Checkpoint, CheckpointKind};
use strokepose::posenet::{train_estimator, PoseNet};
use strokepose::synthgen::Split;
use strokepose::temporal::{estimate_clip, refiner_config, train_phase1, train_phase2, ClipEstimates, TemporalRefiner};
use strokepose::train::{loss_log_csv, LossRecord};
use strokepose::VideoClip;

use super::{create_dir, load_checkpoint, load_dataset, progress, write_file};
use crate::config::{set, Mode, ModelFlags, RunConfig, TrainFlags};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory [default: <out-root>/<mode>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Estimator checkpoint (temporal-phase1).
    #[arg(long)]
    estimator: Option<PathBuf>,
    /// Phase-1 checkpoint (temporal-phase2).
    #[arg(long)]
    phase1: Option<PathBuf>,
    /// Temporal window half-width `l`; the window spans 4l+1 frames.
    #[arg(long)]
    seq_l: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    model: ModelFlags,
}

pub fn run(args: Args, root: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    set(&mut cfg.mode, args.mode);
    set(&mut cfg.dataset, args.dataset.map(Some));
    set(&mut cfg.out_dir, args.out.map(Some));
    set(&mut cfg.estimator, args.estimator.map(Some));
    set(&mut cfg.phase1, args.phase1.map(Some));
    set(&mut cfg.seq_l, args.seq_l);
    args.train.apply(&mut cfg.train);
    args.model.apply(&mut cfg.model);
    cfg.train.validate()?;

    let dataset = cfg
        .dataset
        .clone()
        .ok_or_else(|| crate::invalid!("no dataset given (--dataset)"))?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| root.join(cfg.mode.name()));
    cfg.out_dir = Some(out.clone());
    let ds = load_dataset(&dataset)?;
    let clips = ds.split(Split::Train);
    if clips.is_empty() {
        return Err(crate::invalid!("dataset {} has no training clips", dataset.display()));
    }
    cfg.dataset_image_size = Some(ds.manifest.image_size);

    let (ck, log) = match cfg.mode {
        Mode::Baseline | Mode::ConditionedOnce | Mode::ConditionedRepeated => train_estimator_mode(&mut cfg, &clips)?,
        Mode::TemporalPhase1 => train_phase1_mode(&mut cfg, &clips)?,
        Mode::TemporalPhase2 => train_phase2_mode(&mut cfg, &clips)?,
    };
    create_dir(&out)?;
    ck.save(&out.join(CHECKPOINT_FILE))?;
    write_file(&out.join("loss.csv"), log)?;
    write_file(&out.join("run_config.json"), serde_json::to_string_pretty(&ck.run_config)?)?;
    println!("wrote {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn train_estimator_mode(cfg: &mut RunConfig, clips: &[VideoClip]) -> Result<(Checkpoint, String)> {
    cfg.model.conditioning_mode = cfg.mode.conditioning().expect("estimator mode");
    cfg.model.validate()?;
    let mut net = PoseNet::new(cfg.model.clone(), cfg.train.seed)?;
    let total = cfg.train.iterations;
    let records = train_estimator(&mut net, clips, &cfg.train, |r| {
        progress(cfg.mode.name(), r.iteration, total, r.loss)
    })?;
    Ok((Checkpoint::from_estimator(&net, cfg.to_json()), loss_log_csv(&records)))
}

fn estimates(net: &PoseNet, clips: &[VideoClip]) -> Result<Vec<ClipEstimates>> {
    Ok(clips.iter().map(|c| estimate_clip(net, c, true)).collect::<strokepose::Result<_>>()?)
}

fn train_phase1_mode(cfg: &mut RunConfig, clips: &[VideoClip]) -> Result<(Checkpoint, String)> {
    let path = cfg
        .estimator
        .clone()
        .ok_or_else(|| crate::invalid!("temporal-phase1 needs an estimator checkpoint (--estimator)"))?;
    let est_ck = load_checkpoint(&path)?;
    if est_ck.kind != CheckpointKind::Estimator {
        return Err(crate::invalid!("{} is not an estimator checkpoint", path.display()));
    }
    let net = est_ck.estimator()?;
    cfg.model = refiner_config(net.config(), cfg.seq_l);
    let mut refiner = TemporalRefiner::new(cfg.model.clone(), cfg.train.seed)?;
    let data = estimates(&net, clips)?;
    let total = cfg.train.iterations;
    let logs = train_phase1(&mut refiner, &data, &cfg.train, |b, r| {
        progress(&format!("phase1 {}", b.prefix().trim_end_matches('.')), r.iteration, total, r.loss)
    })?;
    let mut csv = String::from("branch,iteration,loss\n");
    for (branch, log) in &logs {
        for LossRecord { iteration, loss } in log {
            let _ = writeln!(csv, "{},{iteration},{loss}", branch.prefix().trim_end_matches('.'));
        }
    }
    let ck = Checkpoint::from_temporal(&net, &refiner, CheckpointKind::TemporalPhase1, cfg.to_json())?;
    Ok((ck, csv))
}

fn train_phase2_mode(cfg: &mut RunConfig, clips: &[VideoClip]) -> Result<(Checkpoint, String)> {
    let path = cfg
        .phase1
        .clone()
        .ok_or_else(|| crate::invalid!("temporal-phase2 needs a phase-1 checkpoint (--phase1)"))?;
    let ck = load_checkpoint(&path)?;
    if ck.kind != CheckpointKind::TemporalPhase1 {
        return Err(crate::invalid!("{} is not a temporal-phase1 checkpoint", path.display()));
    }
    let net = ck.estimator()?;
    let mut refiner = ck.refiner()?;
    cfg.model = refiner.config().clone();
    cfg.seq_l = refiner.spec().l;
    let data = estimates(&net, clips)?;
    let total = cfg.train.iterations;
    let records = train_phase2(&mut refiner, &data, &cfg.train, |r| progress("phase2", r.iteration, total, r.loss))?;
    eprintln!("pooling weights mean |w| (past, present, future): {:?}", refiner.pooling_weights().mean_abs());
    let ck = Checkpoint::from_temporal(&net, &refiner, CheckpointKind::TemporalPhase2, cfg.to_json())?;
    Ok((ck, loss_log_csv(&records)))
}
