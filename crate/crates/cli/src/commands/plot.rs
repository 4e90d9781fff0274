//! Charts drawn only from stored `report.json` files.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use plotters::coord::types::RangedCoordf64;
use plotters::prelude::*;
use strokepose::StyleLabel;

use super::create_dir;
use super::eval::{EvalReport, Variant, REPORT_FILE};

const SIZE: (u32, u32) = (800, 500);

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Evaluation report; repeatable [default: <out-root>/eval/report.json].
    #[arg(long = "report")]
    reports: Vec<PathBuf>,
    /// Output directory [default: <out-root>/plots].
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args, root: &Path) -> Result<()> {
    let paths = if args.reports.is_empty() {
        vec![root.join("eval").join(REPORT_FILE)]
    } else {
        args.reports
    };
    let mut variants = Vec::new();
    for p in &paths {
        if !p.exists() {
            return Err(crate::invalid!("report {} does not exist", p.display()));
        }
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: EvalReport = serde_json::from_str(&text).map_err(|e| crate::invalid!("{}: {e}", p.display()))?;
        variants.extend(r.variants);
    }
    if variants.is_empty() {
        return Err(crate::invalid!("the reports hold no model variants"));
    }
    let out = args.out.unwrap_or_else(|| root.join("plots"));
    create_dir(&out)?;
    let mut written = vec![out.join("per_style.svg"), out.join("pck_vs_alpha.svg")];
    per_style(&variants, &written[0])?;
    pck_vs_alpha(&variants, &written[1])?;
    if variants.iter().any(|v| v.seq_l.is_some()) {
        written.push(out.join("pck_vs_k.svg"));
        pck_vs_k(&variants, &written[2])?;
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn color(i: usize) -> RGBColor {
    let (r, g, b) = Palette99::pick(i).rgb();
    RGBColor(r, g, b)
}

/// Grouped bars: one group per style plus the combined score.
fn per_style(variants: &[Variant], path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let groups: Vec<String> = StyleLabel::ALL
        .iter()
        .map(|s| s.column_name().to_string())
        .chain(["Combined".to_string()])
        .collect();
    let n = groups.len();
    let mut chart = ChartBuilder::on(&root)
        .caption("PCK per style", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..n as f64, 0f64..100f64)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 && i < n {
                groups[i].clone()
            } else {
                String::new()
            }
        })
        .y_desc("PCK (%)")
        .draw()?;
    let width = 0.8 / variants.len() as f64;
    for (vi, v) in variants.iter().enumerate() {
        let c = color(vi);
        let scores: Vec<f64> = v
            .report
            .per_style
            .iter()
            .map(|s| s.unwrap_or(0.0))
            .chain([v.report.overall])
            .collect();
        chart
            .draw_series(scores.iter().enumerate().map(|(g, &s)| {
                let x0 = g as f64 + 0.1 + vi as f64 * width;
                Rectangle::new([(x0, 0.0), (x0 + width, s)], c.filled())
            }))?
            .label(v.name.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], c.filled()));
    }
    legend(&mut chart)?;
    root.present()?;
    Ok(())
}

fn pck_vs_alpha(variants: &[Variant], path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let max_alpha = variants
        .iter()
        .flat_map(|v| v.curve.iter().map(|(a, _)| *a))
        .fold(0.0, f64::max)
        .max(1e-6);
    let mut chart = ChartBuilder::on(&root)
        .caption("PCK over the normalized distance threshold", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..max_alpha, 0f64..100f64)?;
    chart.configure_mesh().x_desc("alpha").y_desc("PCK (%)").draw()?;
    for (vi, v) in variants.iter().enumerate() {
        let c = color(vi);
        chart
            .draw_series(LineSeries::new(v.curve.iter().copied(), c.stroke_width(2)))?
            .label(v.name.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 15, y)], c.stroke_width(2)));
    }
    legend(&mut chart)?;
    root.present()?;
    Ok(())
}

/// Combined score of each refiner against its window span `k = 4l+1`,
/// one line per conditioning mode.
fn pck_vs_k(variants: &[Variant], path: &Path) -> Result<()> {
    let mut lines: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for v in variants {
        let Some(l) = v.seq_l else { continue };
        let mode = v.conditioning_mode.map_or("unknown", |m| m.name()).to_string();
        let point = ((4 * l + 1) as f64, v.report.overall);
        match lines.iter_mut().find(|(m, _)| *m == mode) {
            Some((_, pts)) => pts.push(point),
            None => lines.push((mode, vec![point])),
        }
    }
    for (_, pts) in &mut lines {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let max_k = lines.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).fold(1.0, f64::max);
    let (lo, hi) = lines
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.1))
        .fold((100.0f64, 0.0f64), |(lo, hi), s| (lo.min(s), hi.max(s)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("PCK over the temporal window span", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..max_k + 2.0, (lo - 2.0).max(0.0)..(hi + 2.0).min(100.0))?;
    chart.configure_mesh().x_desc("k (frames)").y_desc("PCK (%)").draw()?;
    for (i, (mode, pts)) in lines.iter().enumerate() {
        let c = color(i);
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), c.stroke_width(2)))?
            .label(mode.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 15, y)], c.stroke_width(2)));
        chart.draw_series(pts.iter().map(|&p| Circle::new(p, 4, c.filled())))?;
    }
    legend(&mut chart)?;
    root.present()?;
    Ok(())
}

fn legend<'a>(chart: &mut ChartContext<'a, SVGBackend<'a>, Cartesian2d<RangedCoordf64, RangedCoordf64>>) -> Result<()> {
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    Ok(())
}
