use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strokepose::posenet::{loss, PoseNet};
use strokepose::{render_target, ConditioningMode, Keypoint, ModelConfig, Pose, StyleLabel, NUM_JOINTS};
use strokepose_nn::Graph;

fn noise_image(size: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(size, size, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

fn random_pose(size: u32, seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = size as f64 - 1.0;
    Pose::new(std::array::from_fn(|_| {
        Keypoint::new(rng.gen_range(0.0..max), rng.gen_range(0.0..max), true)
    }))
    .unwrap()
}

#[test]
fn full_size_input_gives_one_stack_per_stage() {
    let net = PoseNet::new(ModelConfig::default(), 1).unwrap();
    let out = net.forward(&noise_image(368, 2), None).unwrap();
    assert_eq!(out.per_stage.len(), 3);
    for stack in &out.per_stage {
        assert_eq!(stack.tensor().shape(), [NUM_JOINTS, 46, 46]);
        assert!(stack.tensor().all_finite());
    }
}

#[test]
fn inference_is_bitwise_deterministic() {
    let net = PoseNet::new(ModelConfig::desk().with_conditioning(ConditioningMode::Repeated), 3).unwrap();
    let img = noise_image(40, 4);
    let a = net.forward(&img, Some(StyleLabel::Butterfly)).unwrap();
    let b = net.forward(&img.clone(), Some(StyleLabel::Butterfly)).unwrap();
    for (x, y) in a.per_stage.iter().zip(&b.per_stage) {
        let bits = |s: &strokepose::HeatmapStack| s.tensor().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x), bits(y));
    }
}

#[test]
fn every_trainable_parameter_gets_a_finite_gradient() {
    for mode in [ConditioningMode::None, ConditioningMode::Once, ConditioningMode::Repeated] {
        let net = PoseNet::new(ModelConfig::desk().with_conditioning(mode), 5).unwrap();
        let target = render_target(&random_pose(40, 6), net.config());
        let mut g = Graph::new(net.store());
        let x = g.input(net.image_tensor(&noise_image(40, 7)));
        let nodes = net.build(&mut g, x, Some(StyleLabel::Freestyle)).unwrap();
        let l = PoseNet::stage_loss(&mut g, &nodes, &target).unwrap();
        let grads = g.backward(l).unwrap();
        for id in net.store().ids() {
            let name = net.store().name(id);
            let grad = grads.get(id).unwrap_or_else(|| panic!("{mode:?}: no gradient for {name}"));
            assert!(grad.all_finite(), "{mode:?}: non-finite gradient for {name}");
            assert!(grad.sq_norm() > 0.0, "{mode:?}: zero gradient for {name}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn loss_is_non_negative(img_seed in 0u64..1000, pose_seed in 0u64..1000) {
        let net = PoseNet::new(ModelConfig::desk(), 9).unwrap();
        let out = net.forward(&noise_image(40, img_seed), None).unwrap();
        let target = render_target(&random_pose(40, pose_seed), net.config());
        prop_assert!(loss(&out, &target).unwrap() >= 0.0);
    }
}
