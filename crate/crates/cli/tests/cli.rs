use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use strokepose::dataio::load;
use strokepose::synthgen::Split;

fn run(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strokepose"))
        .args(args)
        .env("STROKEPOSE_OUT", root)
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = run(root, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_dataset(root: &Path) -> String {
    let data = root.join("data");
    let data = data.to_str().unwrap();
    ok(root, &["synth", "--out", data, "--frames", "12", "--train-clips", "1", "--test-clips", "1"]);
    data.to_string()
}

fn digest(stdout: &str) -> String {
    stdout.lines().find_map(|l| l.strip_prefix("digest ")).unwrap().to_string()
}

fn loss_column(csv: &str) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
}

#[test]
fn synth_writes_the_default_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["synth"]);
    let ds = load(&dir.path().join("data")).unwrap();
    assert_eq!(ds.clips.len(), 24);
    assert!(stdout.contains("digest "));
}

#[test]
fn synth_is_reproducible_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synth", "--frames", "6", "--seed", "3"];
    let first = digest(&ok(dir.path(), &args));
    assert_eq!(run(dir.path(), &args).status.code(), Some(1));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(digest(&ok(dir.path(), &forced)), first);
}

#[test]
fn invalid_synth_settings_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["synth", "--occlusion-rate", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert_eq!(run(dir.path(), &["train", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn baseline_training_reduces_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    ok(dir.path(), &["train", "--dataset", &data, "--iterations", "200"]);
    let run_dir = dir.path().join("baseline");
    let loss = loss_column(&fs::read_to_string(run_dir.join("loss.csv")).unwrap());
    assert_eq!(loss.len(), 200);
    assert!(loss.iter().all(|l| l.is_finite()));
    let head = loss[..10].iter().sum::<f64>();
    let tail = loss[190..].iter().sum::<f64>();
    assert!(tail < head, "loss did not fall: {head} -> {tail}");
    assert!(run_dir.join("checkpoint.bin").is_file());
}

#[test]
fn temporal_phases_require_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let p2 = run(dir.path(), &["train", "--mode", "temporal-phase2", "--dataset", &data]);
    assert_eq!(p2.status.code(), Some(1));
    let p1 = run(dir.path(), &["train", "--mode", "temporal-phase1", "--dataset", &data]);
    assert_eq!(p1.status.code(), Some(1));
    let missing = run(
        dir.path(),
        &["train", "--mode", "temporal-phase1", "--dataset", &data, "--estimator", "nowhere.bin"],
    );
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn repeated_conditioning_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    ok(dir.path(), &["train", "--mode", "conditioned-repeated", "--dataset", &data, "--iterations", "2"]);
    let text = fs::read_to_string(dir.path().join("conditioned-repeated/run_config.json")).unwrap();
    let cfg: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg["model"]["conditioning_mode"], "repeated");
    assert_eq!(cfg["train"]["iterations"], 2);
}

#[test]
fn exact_predictions_score_100() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let ds = load(Path::new(&data)).unwrap();
    let mut lines = String::new();
    for clip in ds.split(Split::Test) {
        for (t, pose) in clip.annotations().iter().enumerate() {
            let record = serde_json::json!({
                "clip_id": clip.clip_id(),
                "frame_index": t + 1,
                "joints": pose.joints.iter().map(|k| [k.x, k.y]).collect::<Vec<_>>(),
                "confidence": vec![1.0; pose.joints.len()],
            });
            lines.push_str(&format!("{record}\n"));
        }
    }
    let preds = dir.path().join("oracle.jsonl");
    fs::write(&preds, lines).unwrap();
    let out = dir.path().join("eval");
    ok(
        dir.path(),
        &["eval", "--dataset", &data, "--model", preds.to_str().unwrap(), "--out", out.to_str().unwrap()],
    );
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let r = &report["variants"][0]["report"];
    assert_eq!(report["variants"][0]["name"], "oracle");
    assert_eq!(r["overall"], 100.0);
    for style in r["per_style"].as_array().unwrap() {
        assert_eq!(style, 100.0);
    }
    for joint in r["per_joint"].as_array().unwrap() {
        assert_eq!(joint, 100.0);
    }
    let table = fs::read_to_string(out.join("report.txt")).unwrap();
    let header = table.lines().find(|l| l.starts_with("Model")).unwrap();
    let columns: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(columns, ["Model", "Backstroke-analog", "Breaststroke-analog", "Butterfly-analog", "Freestyle-analog", "Combined"]);
    let row = table.lines().find(|l| l.starts_with("oracle")).unwrap();
    assert_eq!(row.split_whitespace().skip(1).collect::<Vec<_>>(), ["100.0"; 5]);
    let curve = fs::read_to_string(out.join("pck_curve.csv")).unwrap();
    let scores = loss_column(&curve);
    assert_eq!(scores.len(), 21);
    assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*scores.last().unwrap(), 100.0);

    // a truncated prediction file is a validation error
    let short: String = fs::read_to_string(&preds).unwrap().lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&preds, short).unwrap();
    let bad = run(dir.path(), &["eval", "--dataset", &data, "--model", preds.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn wide_temporal_window_predicts_every_frame() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let est = dir.path().join("est");
    let est_s = est.to_str().unwrap();
    ok(dir.path(), &["train", "--dataset", &data, "--iterations", "2", "--out", est_s]);
    let p1 = dir.path().join("p1");
    ok(
        dir.path(),
        &[
            "train",
            "--mode",
            "temporal-phase1",
            "--dataset",
            &data,
            "--estimator",
            est.join("checkpoint.bin").to_str().unwrap(),
            "--seq-l",
            "7",
            "--iterations",
            "1",
            "--batch-size",
            "2",
            "--out",
            p1.to_str().unwrap(),
        ],
    );
    let out = dir.path().join("infer");
    ok(
        dir.path(),
        &[
            "infer",
            "--checkpoint",
            p1.join("checkpoint.bin").to_str().unwrap(),
            "--dataset",
            &data,
            "--overlays",
            "--overlay-scale",
            "2",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    let text = fs::read_to_string(out.join("predictions.jsonl")).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4 * 12);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["frame_index"], i % 12 + 1);
        assert_eq!(r["joints"].as_array().unwrap().len(), 14);
    }
    for clip in fs::read_dir(out.join("overlays")).unwrap() {
        let frames = fs::read_dir(clip.unwrap().path()).unwrap().count();
        assert_eq!(frames, 12);
    }
    let image = image::open(out.join("overlays/backstroke-test-00/frame_00001.png")).unwrap();
    assert_eq!((image.width(), image.height()), (80, 80));
}

#[test]
fn plot_writes_svg_figures() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    ok(dir.path(), &["train", "--dataset", &data, "--iterations", "2"]);
    let ck = dir.path().join("baseline/checkpoint.bin");
    ok(dir.path(), &["eval", "--dataset", &data, "--model", ck.to_str().unwrap()]);
    ok(dir.path(), &["plot"]);
    for name in ["per_style.svg", "pck_vs_alpha.svg"] {
        let svg = fs::read_to_string(dir.path().join("plots").join(name)).unwrap();
        assert!(svg.starts_with("<svg"), "{name}");
    }
    assert!(!dir.path().join("plots/pck_vs_k.svg").exists());
}
