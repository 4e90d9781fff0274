use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strokepose::posenet::{train_estimator, PoseNet};
use strokepose::synthgen::{generate_with_split, Split, SynthConfig};
use strokepose::temporal::{
    assemble_sequence, estimate_clip, refiner_config, train_phase1, train_phase2, Branch, ClipEstimates,
    TemporalRefiner,
};
use strokepose::train::TrainConfig;
use strokepose::{ConditioningMode, HeatmapStack, ModelConfig, StyleLabel, NUM_JOINTS};
use strokepose_nn::{Graph, Tensor};

fn tiny() -> ModelConfig {
    ModelConfig {
        input_size: 16,
        heatmap_size: 8,
        stem_channels: 3,
        feature_channels: 4,
        stage_channels: 4,
        stage_kernel: 3,
        stage_convs: 2,
        branch_channels: 3,
        branch_kernel: 3,
        conditioning_mode: ConditioningMode::Repeated,
        ..ModelConfig::default()
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn random_clip(rng: &mut ChaCha8Rng, cfg: &ModelConfig, frames: usize) -> ClipEstimates {
    let hm = cfg.heatmap_size as usize;
    let stack = |rng: &mut ChaCha8Rng| HeatmapStack::new(random(rng, &[NUM_JOINTS, hm, hm]), cfg.grid_stride()).unwrap();
    ClipEstimates {
        style: StyleLabel::Breaststroke,
        features: (0..frames).map(|_| random(rng, &[cfg.feature_channels, hm, hm])).collect(),
        estimates: (0..frames).map(|_| stack(rng)).collect(),
        targets: (0..frames).map(|_| stack(rng)).collect(),
    }
}

fn frame_inputs(g: &Graph<'_>, node: strokepose_nn::NodeId) -> Vec<String> {
    g.input_labels_reaching(node)
        .into_iter()
        .filter(|l| !l.starts_with("style:"))
        .collect()
}

#[test]
fn branches_see_only_their_own_frames() {
    let cfg = refiner_config(&tiny(), 2);
    let refiner = TemporalRefiner::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clip = random_clip(&mut rng, &cfg, 12);
    let seq = assemble_sequence(&clip.estimates, 6, cfg.seq_spec).unwrap();
    let mut g = Graph::new(refiner.store());
    let n = refiner.build(&mut g, &clip.features[5], &seq, Some(clip.style)).unwrap();
    assert_eq!(frame_inputs(&g, n.past), ["t-2", "t-4"]);
    assert_eq!(frame_inputs(&g, n.future), ["t+2", "t+4"]);
    assert_eq!(frame_inputs(&g, n.present), ["features", "t+0"]);
    assert_eq!(frame_inputs(&g, n.pooled).len(), 6);
}

#[test]
fn single_frame_window_has_empty_outer_branches() {
    let cfg = refiner_config(&tiny(), 0);
    let refiner = TemporalRefiner::new(cfg.clone(), 1).unwrap();
    assert!(refiner.store().iter().all(|(name, _)| !name.starts_with("past.") && !name.starts_with("future.")));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clip = random_clip(&mut rng, &cfg, 3);
    let seq = assemble_sequence(&clip.estimates, 1, cfg.seq_spec).unwrap();
    let (b, _) = refiner.forward(&clip.features[0], &seq, Some(clip.style)).unwrap();
    assert!(b.past.tensor().data().iter().all(|&v| v == 0.0));
    assert!(b.future.tensor().data().iter().all(|&v| v == 0.0));
}

#[test]
fn phase2_changes_only_pooling_parameters() {
    let cfg = refiner_config(&tiny(), 1);
    let mut refiner = TemporalRefiner::new(cfg.clone(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let clips: Vec<_> = (0..2).map(|_| random_clip(&mut rng, &cfg, 6)).collect();
    let train = TrainConfig {
        iterations: 5,
        batch_size: 2,
        ..TrainConfig::default()
    };
    train_phase1(&mut refiner, &clips, &train, |_, _| {}).unwrap();
    let before = refiner.store().clone();
    let p2 = TrainConfig {
        learning_rate: 1e-2,
        ..train
    };
    train_phase2(&mut refiner, &clips, &p2, |_| {}).unwrap();
    for ((name, a), (_, b)) in before.iter().zip(refiner.store().iter()) {
        if name.starts_with("pool.") {
            assert_ne!(a, b, "{name} did not change");
        } else {
            assert_eq!(a, b, "{name} changed during phase 2");
        }
    }
}

#[test]
fn phase1_loss_falls_during_the_first_epoch() {
    let synth = SynthConfig {
        train_clips_per_style: 1,
        test_clips_per_style: 1,
        frames_per_clip: 48,
        ..SynthConfig::default()
    };
    let train: Vec<_> = generate_with_split(&synth)
        .unwrap()
        .into_iter()
        .filter(|(_, s)| *s == Split::Train)
        .map(|(c, _)| c)
        .collect();
    let mut net = PoseNet::new(ModelConfig::desk(), 6).unwrap();
    let est_cfg = TrainConfig {
        iterations: 40,
        ..TrainConfig::default()
    };
    train_estimator(&mut net, &train, &est_cfg, |_| {}).unwrap();
    let data: Vec<_> = train.iter().map(|c| estimate_clip(&net, c, true).unwrap()).collect();
    let mut refiner = TemporalRefiner::new(refiner_config(net.config(), 0), 7).unwrap();
    // 4 clips × 48 frames = 24 batches of 8
    let cfg = TrainConfig {
        iterations: 24,
        ..TrainConfig::default()
    };
    let logs = train_phase1(&mut refiner, &data, &cfg, |_, _| {}).unwrap();
    assert_eq!(logs.len(), 1);
    let (branch, log) = &logs[0];
    assert_eq!(*branch, Branch::Present);
    let mean = |r: &[strokepose::train::LossRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    assert!(log.iter().all(|r| r.loss.is_finite()));
    assert!(mean(&log[18..]) < mean(&log[..6]), "{:?}", log);
}
