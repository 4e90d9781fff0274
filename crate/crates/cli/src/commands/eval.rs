use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use strokepose::checkpoint::CheckpointKind;
use strokepose::metrics::{alpha_grid, curve_csv, evaluate, format_table, pck_curve, PckConfig, PckReport, Predictions};
use strokepose::synthgen::Split;
use strokepose::{ConditioningMode, VideoClip};

use super::{check_compatible, create_dir, load_checkpoint, load_dataset, write_file};
use crate::config::RunConfig;
use crate::predictions;

pub const REPORT_FILE: &str = "report.json";

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Model variant as `[NAME=]PATH`: a checkpoint, or a `.jsonl`
    /// predictions file. Repeat to compare variants.
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    /// Run configuration file; its `dataset` is used when --dataset is absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    /// Upper end of the PCK curve.
    #[arg(long, default_value_t = 0.2)]
    alpha_max: f64,
    #[arg(long, default_value_t = 20)]
    alpha_steps: usize,
    /// Output directory [default: <out-root>/eval].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub source: PathBuf,
    pub kind: Option<CheckpointKind>,
    pub conditioning_mode: Option<ConditioningMode>,
    /// Temporal window half-width for refiner checkpoints.
    pub seq_l: Option<usize>,
    pub report: PckReport,
    /// `(alpha, overall score)` pairs.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: PathBuf,
    pub split: Split,
    pub alpha: f64,
    pub variants: Vec<Variant>,
}

fn parse_model(spec: &str) -> (Option<String>, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !name.contains('/') => (Some(name.to_string()), PathBuf::from(path)),
        _ => (None, PathBuf::from(spec)),
    }
}

pub fn run(args: Args, root: &Path) -> Result<()> {
    let cfg = PckConfig::new(args.alpha)?;
    if !(args.alpha_max >= 0.0) || args.alpha_steps == 0 {
        return Err(crate::invalid!("--alpha-max must be non-negative and --alpha-steps positive"));
    }
    let dataset = match args.dataset {
        Some(d) => d,
        None => RunConfig::load(args.config.as_deref())?
            .dataset
            .ok_or_else(|| crate::invalid!("no dataset given (--dataset)"))?,
    };
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let ds = load_dataset(&dataset)?;
    let clips = ds.split(split);
    if clips.is_empty() {
        return Err(crate::invalid!("dataset {} has no {split:?} clips", dataset.display()));
    }
    let alphas = alpha_grid(args.alpha_max, args.alpha_steps);

    let mut variants = Vec::new();
    for spec in &args.models {
        let (name, source) = parse_model(spec);
        let (preds, kind, mode, seq_l, default_name) = if source.extension().is_some_and(|e| e == "jsonl") {
            let stem = source.file_stem().map(|s| s.to_string_lossy().into_owned());
            (predictions::read(&source)?, None, None, None, stem.unwrap_or_default())
        } else {
            let ck = load_checkpoint(&source)?;
            check_compatible(&ck, &source, &ds)?;
            let predictor = ck.predictor()?;
            let preds = predict(&predictor, &clips)?;
            let l = ck.kind.is_temporal().then_some(ck.model.seq_spec.l);
            let base = match ck.model.conditioning_mode {
                ConditioningMode::None => "baseline".to_string(),
                m => format!("conditioned-{}", m.name()),
            };
            let default_name = match l {
                Some(l) => format!("{base} temporal k={}", 4 * l + 1),
                None => base,
            };
            (preds, Some(ck.kind), Some(ck.model.conditioning_mode), l, default_name)
        };
        let report = evaluate(&preds, &clips, &cfg)?;
        let curve = pck_curve(&preds, &clips, &alphas)?;
        variants.push(Variant {
            name: name.unwrap_or(default_name),
            source,
            kind,
            conditioning_mode: mode,
            seq_l,
            report,
            curve,
        });
    }

    let out = args.out.unwrap_or_else(|| root.join("eval"));
    create_dir(&out)?;
    let report = EvalReport {
        dataset,
        split,
        alpha: args.alpha,
        variants,
    };
    write_file(&out.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    let text = report_text(&report);
    write_file(&out.join("report.txt"), &text)?;
    if let [v] = report.variants.as_slice() {
        write_file(&out.join("pck_curve.csv"), curve_csv(&v.curve))?;
    } else {
        for v in &report.variants {
            write_file(&out.join(format!("pck_curve_{}.csv", slug(&v.name))), curve_csv(&v.curve))?;
        }
    }
    print!("{text}");
    Ok(())
}

pub fn predict(predictor: &strokepose::predict::Predictor, clips: &[VideoClip]) -> Result<Predictions> {
    let mut preds = Predictions::new();
    for clip in clips {
        let poses = predictor.predict_clip(clip)?.into_iter().map(|d| d.pose).collect();
        preds.insert(clip.clip_id().to_string(), poses);
    }
    Ok(preds)
}

fn report_text(report: &EvalReport) -> String {
    let rows: Vec<(String, PckReport)> = report.variants.iter().map(|v| (v.name.clone(), v.report.clone())).collect();
    let mut s = format!("PCK@{} on the {:?} split of {}\n\n", report.alpha, report.split, report.dataset.display());
    s.push_str(&format_table(&rows));
    s.push('\n');
    let pct = |p: Option<f64>| p.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
    for v in &report.variants {
        let r = &v.report;
        s.push_str(&format!(
            "{}: occluded joints {} ({}), visible joints {} ({})",
            v.name,
            pct(r.occluded.percent()),
            r.occluded.total,
            pct(r.visible.percent()),
            r.visible.total
        ));
        if !r.excluded.is_empty() {
            s.push_str(&format!(", {} frame(s) excluded for zero torso size", r.excluded.len()));
        }
        s.push('\n');
    }
    s
}

pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.split('_').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("_")
}
