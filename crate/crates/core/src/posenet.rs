//! Stage-wise fully-convolutional pose estimator.
//!
//! A shared trunk turns the image into features on the heatmap grid.
//! Stage 1 maps those features to `J` heatmaps; every later stage consumes
//! the features concatenated with the previous stage's heatmaps (and, when
//! conditioned, the class label maps) and emits refined heatmaps. Every
//! stage is supervised against the same target.

use image::imageops::FilterType;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strokepose_nn::init::conv_params;
use strokepose_nn::{Graph, NodeId, ParamId, ParamStore, Tensor};

use crate::conditioning::{inject_node, ConditioningMode, LabelInputs};
use crate::heatmap::render_target;
use crate::train::{train_loop, LossRecord, TrainConfig, Trainable};
use crate::types::{HeatmapStack, ModelConfig, Pose, StyleLabel, VideoClip, NUM_JOINTS, NUM_STYLES};
use crate::{Error, Result};

const TRUNK_KERNEL: usize = 3;
/// Initial weight scale of layers that emit heatmaps.
const OUTPUT_GAIN: f32 = 0.1;

/// A convolution plus its wiring flags.
#[derive(Clone, Debug)]
pub(crate) struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub relu: bool,
    pub takes_labels: bool,
    pub in_channels: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        relu: bool,
        takes_labels: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let in_channels = cin + if takes_labels { NUM_STYLES } else { 0 };
        let gain = if relu { 1.0 } else { OUTPUT_GAIN };
        let (weight, bias) = conv_params(store, name, in_channels, cout, k, gain, rng)?;
        Ok(Self {
            weight,
            bias,
            relu,
            takes_labels,
            in_channels,
        })
    }

    /// Applies the layer. `labels` must be present when the layer takes them.
    pub fn apply(
        &self,
        g: &mut Graph<'_>,
        input: NodeId,
        labels: Option<&mut LabelInputs>,
        stage: usize,
    ) -> Result<NodeId> {
        let x = if self.takes_labels {
            let labels = labels.ok_or_else(|| {
                Error::Config("conditioned layer evaluated without a style label".into())
            })?;
            let maps = labels.node_for(g, input)?;
            inject_node(g, input, maps, stage)?
        } else {
            input
        };
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.conv2d(x, w, b)?;
        Ok(if self.relu { g.relu(y) } else { y })
    }
}

/// Runs a sequence of layers.
pub(crate) fn apply_layers(
    layers: &[ConvLayer],
    g: &mut Graph<'_>,
    mut x: NodeId,
    mut labels: Option<&mut LabelInputs>,
    stage: usize,
) -> Result<NodeId> {
    for layer in layers {
        x = layer.apply(g, x, labels.as_deref_mut(), stage)?;
    }
    Ok(x)
}

/// Builds the convolutions of one stage-like block: `n` layers, the first
/// `n−1` with `kernel`×`kernel` filters and ReLU, the last a linear 1×1
/// producing `cout` maps.
#[allow(clippy::too_many_arguments)]
pub(crate) fn stage_block(
    store: &mut ParamStore,
    prefix: &str,
    cin: usize,
    hidden: usize,
    cout: usize,
    kernel: usize,
    n: usize,
    mode: ConditioningMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ConvLayer>> {
    let mut layers = Vec::with_capacity(n);
    let mut c = cin;
    for i in 0..n {
        let last = i + 1 == n;
        let (k, out) = if last { (1, cout) } else { (kernel, hidden) };
        layers.push(ConvLayer::new(
            store,
            &format!("{prefix}.conv{i}"),
            c,
            out,
            k,
            !last,
            mode.layer_receives_labels(i),
            rng,
        )?);
        c = out;
    }
    Ok(layers)
}

/// Graph nodes produced by [`PoseNet::build`].
#[derive(Clone, Debug)]
pub struct StageNodes {
    pub stages: Vec<NodeId>,
    pub features: NodeId,
}

/// Per-stage heatmaps and the shared image features of one forward pass.
#[derive(Clone, Debug)]
pub struct StageOutput {
    pub per_stage: Vec<HeatmapStack>,
    pub shared_features: Tensor,
}

impl StageOutput {
    pub fn final_stage(&self) -> &HeatmapStack {
        self.per_stage.last().expect("at least one stage")
    }
}

#[derive(Clone, Debug)]
pub struct PoseNet {
    config: ModelConfig,
    store: ParamStore,
    trunk: Vec<(ConvLayer, bool)>,
    stages: Vec<Vec<ConvLayer>>,
}

impl PoseNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let pools = config.grid_stride().trailing_zeros() as usize;
        let mut trunk = Vec::new();
        let mut c = 3;
        for p in 0..pools {
            let layer = ConvLayer::new(
                &mut store,
                &format!("trunk.pool{p}"),
                c,
                config.stem_channels,
                TRUNK_KERNEL,
                true,
                false,
                &mut rng,
            )?;
            trunk.push((layer, true));
            c = config.stem_channels;
        }
        for i in 0..2 {
            let layer = ConvLayer::new(
                &mut store,
                &format!("trunk.feat{i}"),
                c,
                config.feature_channels,
                TRUNK_KERNEL,
                true,
                false,
                &mut rng,
            )?;
            trunk.push((layer, false));
            c = config.feature_channels;
        }
        let mut stages = Vec::with_capacity(config.num_stages);
        for s in 1..=config.num_stages {
            let (cin, mode) = if s == 1 {
                (config.feature_channels, ConditioningMode::None)
            } else {
                let mode = if config.conditioned_stages.contains(&s) {
                    config.conditioning_mode
                } else {
                    ConditioningMode::None
                };
                (config.feature_channels + NUM_JOINTS, mode)
            };
            stages.push(stage_block(
                &mut store,
                &format!("stage{s}"),
                cin,
                config.stage_channels,
                NUM_JOINTS,
                config.stage_kernel,
                config.stage_convs,
                mode,
                &mut rng,
            )?);
        }
        Ok(Self {
            config,
            store,
            trunk,
            stages,
        })
    }

    /// Rebuilds the architecture for `config` and loads parameters by name.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        let loaded = net.store.load_from(params)?;
        if loaded != net.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint provides {loaded} of {} estimator parameters",
                net.store.len()
            )));
        }
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Input channel count of every convolution in `stage` (1-based).
    pub fn stage_layer_inputs(&self, stage: usize) -> Vec<usize> {
        self.stages[stage - 1].iter().map(|l| l.in_channels).collect()
    }

    /// Number of convolutions of `stage` (1-based) that receive label maps.
    pub fn labeled_layers(&self, stage: usize) -> usize {
        self.stages[stage - 1].iter().filter(|l| l.takes_labels).count()
    }

    /// Resizes (if needed) and normalizes an RGB frame to `[3, S, S]` with
    /// values in `[-0.5, 0.5]`.
    pub fn image_tensor(&self, image: &RgbImage) -> Tensor {
        image_to_tensor(image, self.config.input_size)
    }

    fn check_style(&self, style: Option<StyleLabel>) -> Result<Option<StyleLabel>> {
        if !self.config.conditioning_mode.is_enabled() {
            return Ok(None);
        }
        style.map(Some).ok_or_else(|| {
            Error::Config(format!(
                "conditioning mode `{}` requires a style label",
                self.config.conditioning_mode.name()
            ))
        })
    }

    /// Adds the full forward pass to `g`, which must be built over
    /// [`Self::store`].
    pub fn build(&self, g: &mut Graph<'_>, image: NodeId, style: Option<StyleLabel>) -> Result<StageNodes> {
        let style = self.check_style(style)?;
        let shape = g.value(image).shape().to_vec();
        let s = self.config.input_size as usize;
        if shape != [3, s, s] {
            return Err(Error::Shape(format!("expected image [3, {s}, {s}], got {shape:?}")));
        }
        let mut x = image;
        for (layer, pool) in &self.trunk {
            x = layer.apply(g, x, None, 1)?;
            if *pool {
                x = g.max_pool2(x)?;
            }
        }
        let features = x;
        let mut labels = style.map(LabelInputs::new);
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut prev = apply_layers(&self.stages[0], g, features, None, 1)?;
        stages.push(prev);
        for (i, layers) in self.stages.iter().enumerate().skip(1) {
            let input = g.concat(&[features, prev])?;
            prev = apply_layers(layers, g, input, labels.as_mut(), i + 1)?;
            stages.push(prev);
        }
        Ok(StageNodes { stages, features })
    }

    /// Inference on one frame.
    pub fn forward(&self, image: &RgbImage, style: Option<StyleLabel>) -> Result<StageOutput> {
        self.forward_tensor(self.image_tensor(image), style)
    }

    pub fn forward_tensor(&self, image: Tensor, style: Option<StyleLabel>) -> Result<StageOutput> {
        let mut g = Graph::new(&self.store);
        let x = g.input(image);
        let nodes = self.build(&mut g, x, style)?;
        let stride = self.config.grid_stride();
        let per_stage = nodes
            .stages
            .iter()
            .map(|&n| HeatmapStack::new(g.value(n).clone(), stride))
            .collect::<Result<Vec<_>>>()?;
        Ok(StageOutput {
            per_stage,
            shared_features: g.value(nodes.features).clone(),
        })
    }

    /// Sum over stages of the per-stage MSE, as a graph node.
    pub fn stage_loss(g: &mut Graph<'_>, nodes: &StageNodes, target: &HeatmapStack) -> Result<NodeId> {
        let losses = nodes
            .stages
            .iter()
            .map(|&n| g.mse(n, target.tensor()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(g.sum(&losses)?)
    }
}

impl Trainable for PoseNet {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

/// Trains the estimator on every frame of `clips` with intermediate
/// supervision at each stage. Each sample is shifted by a random offset of
/// up to `cfg.max_shift` pixels per axis.
pub fn train_estimator(
    net: &mut PoseNet,
    clips: &[VideoClip],
    cfg: &TrainConfig,
    on_record: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    let samples: Vec<(Tensor, &Pose, StyleLabel)> = clips
        .iter()
        .flat_map(|c| c.frames().iter().zip(c.annotations()).map(move |(f, p)| (f, p, c.style())))
        .map(|(f, p, s)| (net.image_tensor(f), p, s))
        .collect();
    let sizes: Vec<u32> = clips.iter().flat_map(|c| std::iter::repeat_n(c.image_size().0, c.len())).collect();
    let input = net.config().input_size;
    let max = cfg.max_shift as i32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x53_4849_4654);
    train_loop(
        net,
        cfg,
        samples.len(),
        |net, g, i| {
            let (img, pose, style) = &samples[i];
            let (dx, dy) = (rng.gen_range(-max..=max), rng.gen_range(-max..=max));
            let target = render_target(&rescale_pose(pose, sizes[i], input).translated(dx as f64, dy as f64), net.config());
            let x = g.input(shift_image(img, dx, dy));
            let nodes = net.build(g, x, Some(*style))?;
            PoseNet::stage_loss(g, &nodes, &target)
        },
        on_record,
    )
}

/// Maps pixel coordinates between square images of different sizes,
/// keeping pixel centres aligned the way resizing does.
pub fn rescale_pose(pose: &Pose, from: u32, to: u32) -> Pose {
    if from == to {
        return pose.clone();
    }
    let s = to as f64 / from as f64;
    pose.translated(0.5, 0.5).scaled(s).translated(-0.5, -0.5)
}

/// Translates a `[C, H, W]` image by whole pixels, replicating the border.
pub fn shift_image(img: &Tensor, dx: i32, dy: i32) -> Tensor {
    if dx == 0 && dy == 0 {
        return img.clone();
    }
    let (c, h, w) = img.dims3().expect("image tensor");
    let mut out = Tensor::zeros(img.shape());
    for ch in 0..c {
        let src = img.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..h {
            let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as usize;
            for x in 0..w {
                let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as usize;
                dst[y * w + x] = src[sy * w + sx];
            }
        }
    }
    out
}

/// Sum over stages of the mean squared error against `target`.
pub fn loss(outputs: &StageOutput, target: &HeatmapStack) -> Result<f64> {
    let mut total = 0.0;
    for stack in &outputs.per_stage {
        let (a, b) = (stack.tensor(), target.tensor());
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "stage output {:?} vs target {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let se: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| ((*x - *y) as f64).powi(2))
            .sum();
        total += se / a.numel() as f64;
    }
    Ok(total)
}

pub fn image_to_tensor(image: &RgbImage, size: u32) -> Tensor {
    let resized;
    let img = if image.dimensions() == (size, size) {
        image
    } else {
        resized = image::imageops::resize(image, size, size, FilterType::Triangle);
        &resized
    };
    let n = (size * size) as usize;
    let mut data = vec![0.0f32; 3 * n];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f32 / 255.0 - 0.5;
        }
    }
    Tensor::from_vec(&[3, size as usize, size as usize], data).expect("3·S·S values")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: ConditioningMode) -> ModelConfig {
        ModelConfig {
            input_size: 16,
            heatmap_size: 8,
            stem_channels: 4,
            feature_channels: 6,
            stage_channels: 5,
            stage_kernel: 3,
            stage_convs: 5,
            conditioning_mode: mode,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn once_conditions_first_layer_only() {
        let net = PoseNet::new(tiny(ConditioningMode::Once), 1).unwrap();
        assert_eq!(net.labeled_layers(1), 0);
        for s in 2..=3 {
            assert_eq!(net.labeled_layers(s), 1);
            let inputs = net.stage_layer_inputs(s);
            assert_eq!(inputs[0], 6 + NUM_JOINTS + 4);
            assert!(inputs[1..].iter().all(|&c| c == 5));
        }
    }

    #[test]
    fn repeated_conditions_every_layer() {
        let net = PoseNet::new(tiny(ConditioningMode::Repeated), 1).unwrap();
        assert_eq!(net.labeled_layers(1), 0);
        for s in 2..=3 {
            assert_eq!(net.labeled_layers(s), 5);
            assert!(net.stage_layer_inputs(s)[1..].iter().all(|&c| c == 9));
        }
    }

    #[test]
    fn conditioned_stage_set_is_respected() {
        let mut c = tiny(ConditioningMode::Once);
        c.conditioned_stages = vec![3];
        let net = PoseNet::new(c, 1).unwrap();
        assert_eq!(net.labeled_layers(2), 0);
        assert_eq!(net.labeled_layers(3), 1);
    }

    #[test]
    fn missing_style_is_a_config_error() {
        let net = PoseNet::new(tiny(ConditioningMode::Repeated), 1).unwrap();
        let img = RgbImage::new(16, 16);
        assert!(matches!(net.forward(&img, None), Err(Error::Config(_))));
        assert!(net.forward(&img, Some(StyleLabel::Butterfly)).is_ok());
    }

    #[test]
    fn unconditioned_ignores_style() {
        let net = PoseNet::new(tiny(ConditioningMode::None), 3).unwrap();
        let img = RgbImage::from_fn(16, 16, |x, y| image::Rgb([(x * 9) as u8, (y * 13) as u8, 77]));
        let a = net.forward(&img, None).unwrap();
        let b = net.forward(&img, Some(StyleLabel::Freestyle)).unwrap();
        assert_eq!(a.final_stage(), b.final_stage());
    }

    #[test]
    fn loss_closed_forms() {
        let net = PoseNet::new(tiny(ConditioningMode::None), 3).unwrap();
        let out = net.forward(&RgbImage::new(16, 16), None).unwrap();
        let target = out.per_stage[0].clone();
        let exact = StageOutput {
            per_stage: vec![target.clone(); 3],
            shared_features: out.shared_features.clone(),
        };
        assert_eq!(loss(&exact, &target).unwrap(), 0.0);
        let mut shifted = exact.clone();
        let mut t = target.tensor().clone();
        for v in t.data_mut() {
            *v += 0.5;
        }
        shifted.per_stage[1] = HeatmapStack::new(t, target.grid_stride()).unwrap();
        let l = loss(&shifted, &target).unwrap();
        assert!((l - 0.25).abs() < 1e-6, "{l}");
        assert!(loss(&out, &target).unwrap() >= 0.0);
        let wrong = HeatmapStack::zeros(4, 4, 2);
        assert!(loss(&out, &wrong).is_err());
    }
}
