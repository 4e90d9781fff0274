//! Temporal refinement over strided sequences of single-frame estimates.
//!
//! For frame `t` and half-length `l` the input is the estimates at
//! `t−2l, t−2l+2, …, t+2l` (every other frame, indices clamped to the clip).
//! Three branches each predict the heatmaps of frame `t`:
//!
//! - past: the `l` earlier estimates, concatenated channel-wise in time order
//! - present: the estimator's shared image features plus the estimate at `t`
//! - future: the `l` later estimates
//!
//! A pooling layer merges them per joint: `h*_j = Σ_b w_{j,b} · h^b_j + b_j`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use strokepose_nn::{Graph, NodeId, ParamId, ParamStore, Tensor};

use crate::conditioning::LabelInputs;
use crate::posenet::{apply_layers, stage_block, ConvLayer, PoseNet};
use crate::train::{train_loop, LossRecord, TrainConfig, Trainable};
use crate::types::{HeatmapStack, ModelConfig, SequenceSpec, StyleLabel, NUM_JOINTS};
use crate::{Error, Result};

/// Frame indices (1-based) of the sequence centred on `t` in a clip of
/// `frames` frames.
pub fn sequence_indices(t: usize, frames: usize, spec: SequenceSpec) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(Error::Invalid("cannot assemble a sequence from an empty clip".into()));
    }
    if t < 1 || t > frames {
        return Err(Error::Invalid(format!("frame {t} outside clip of {frames} frames")));
    }
    let l = spec.l as i64;
    Ok((-l..=l)
        .map(|i| (t as i64 + 2 * i).clamp(1, frames as i64) as usize)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub center_t: usize,
    /// Source frame of each stack, after clamping.
    pub indices: Vec<usize>,
    pub stacks: Vec<HeatmapStack>,
    pub spec: SequenceSpec,
}

impl PoseSequence {
    pub fn past(&self) -> &[HeatmapStack] {
        &self.stacks[..self.spec.l]
    }

    pub fn present(&self) -> &HeatmapStack {
        &self.stacks[self.spec.l]
    }

    pub fn future(&self) -> &[HeatmapStack] {
        &self.stacks[self.spec.l + 1..]
    }
}

/// Gathers the stacks around frame `t` (1-based) from per-frame estimates.
pub fn assemble_sequence(estimates: &[HeatmapStack], t: usize, spec: SequenceSpec) -> Result<PoseSequence> {
    let indices = sequence_indices(t, estimates.len(), spec)?;
    Ok(PoseSequence {
        center_t: t,
        stacks: indices.iter().map(|&i| estimates[i - 1].clone()).collect(),
        indices,
        spec,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchOutputs {
    pub past: HeatmapStack,
    pub present: HeatmapStack,
    pub future: HeatmapStack,
}

/// Per-joint pooling weights in branch order (past, present, future).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalPoolingWeights {
    pub weights: Vec<[f32; 3]>,
    pub bias: Vec<f32>,
}

impl Default for TemporalPoolingWeights {
    fn default() -> Self {
        Self {
            weights: vec![[1.0 / 3.0; 3]; NUM_JOINTS],
            bias: vec![0.0; NUM_JOINTS],
        }
    }
}

impl TemporalPoolingWeights {
    pub fn uniform(w: [f32; 3], bias: f32) -> Self {
        Self {
            weights: vec![w; NUM_JOINTS],
            bias: vec![bias; NUM_JOINTS],
        }
    }

    /// Mean |w| of each branch over joints.
    pub fn mean_abs(&self) -> [f64; 3] {
        std::array::from_fn(|b| {
            self.weights.iter().map(|w| w[b].abs() as f64).sum::<f64>() / self.weights.len() as f64
        })
    }

    fn tensors(&self) -> (Tensor, Tensor) {
        let w = self.weights.iter().flatten().copied().collect();
        (
            Tensor::from_vec(&[self.weights.len(), 3], w).expect("J×3 weights"),
            Tensor::from_vec(&[self.bias.len()], self.bias.clone()).expect("J biases"),
        )
    }
}

/// Applies the pooling layer to fixed branch outputs.
pub fn pool(branches: &BranchOutputs, weights: &TemporalPoolingWeights) -> Result<HeatmapStack> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (w, b) = weights.tensors();
    let (w, b) = (g.input(w), g.input(b));
    let ins = [&branches.past, &branches.present, &branches.future].map(|s| g.input(s.tensor().clone()));
    let out = g.joint_mix(&ins, w, b)?;
    HeatmapStack::new(g.value(out).clone(), branches.present.grid_stride())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Past,
    Present,
    Future,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Past, Branch::Present, Branch::Future];

    pub fn prefix(self) -> &'static str {
        match self {
            Branch::Past => "past.",
            Branch::Present => "present.",
            Branch::Future => "future.",
        }
    }
}

pub const POOL_PREFIX: &str = "pool.";

/// Outer branch: conv → relu → pool → conv → relu → conv → relu →
/// upsample → conv.
#[derive(Clone, Debug)]
struct OuterBranch {
    layers: Vec<ConvLayer>,
}

impl OuterBranch {
    fn new(store: &mut ParamStore, prefix: &str, cin: usize, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (c, k) = (config.branch_channels, config.branch_kernel);
        let mode = config.conditioning_mode;
        let dims = [(cin, c, true), (c, c, true), (c, c, true), (c, NUM_JOINTS, false)];
        let layers = dims
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, relu))| {
                ConvLayer::new(store, &format!("{prefix}conv{i}"), ci, co, k, relu, mode.layer_receives_labels(i), rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    fn apply(&self, g: &mut Graph<'_>, x: NodeId, mut labels: Option<&mut LabelInputs>, stage: usize) -> Result<NodeId> {
        let mut x = self.layers[0].apply(g, x, labels.as_deref_mut(), stage)?;
        x = g.max_pool2(x)?;
        x = self.layers[1].apply(g, x, labels.as_deref_mut(), stage)?;
        x = self.layers[2].apply(g, x, labels.as_deref_mut(), stage)?;
        x = g.upsample2(x)?;
        self.layers[3].apply(g, x, labels, stage)
    }
}

/// Graph nodes of one refinement pass.
#[derive(Clone, Debug)]
pub struct RefinerNodes {
    pub past: NodeId,
    pub present: NodeId,
    pub future: NodeId,
    pub pooled: NodeId,
}

#[derive(Clone, Debug)]
pub struct TemporalRefiner {
    config: ModelConfig,
    store: ParamStore,
    past: Option<OuterBranch>,
    present: Vec<ConvLayer>,
    future: Option<OuterBranch>,
    pool_weight: ParamId,
    pool_bias: ParamId,
}

impl Trainable for TemporalRefiner {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl TemporalRefiner {
    /// Builds the refiner for `config.seq_spec`, conditioned as
    /// `config.conditioning_mode` says.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let l = config.seq_spec.l;
        if l > 0 && !config.heatmap_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "outer branches need an even heatmap size, got {}",
                config.heatmap_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (past, future) = if l > 0 {
            (
                Some(OuterBranch::new(&mut store, Branch::Past.prefix(), l * NUM_JOINTS, &config, &mut rng)?),
                Some(OuterBranch::new(&mut store, Branch::Future.prefix(), l * NUM_JOINTS, &config, &mut rng)?),
            )
        } else {
            (None, None)
        };
        let present = stage_block(
            &mut store,
            "present",
            config.feature_channels + NUM_JOINTS,
            config.stage_channels,
            NUM_JOINTS,
            config.stage_kernel,
            config.stage_convs,
            config.conditioning_mode,
            &mut rng,
        )?;
        let pw = TemporalPoolingWeights::default();
        let (w, b) = pw.tensors();
        let pool_weight = store.insert(format!("{POOL_PREFIX}weight"), w)?;
        let pool_bias = store.insert(format!("{POOL_PREFIX}bias"), b)?;
        Ok(Self {
            config,
            store,
            past,
            present,
            future,
            pool_weight,
            pool_bias,
        })
    }

    /// Rebuilds the architecture for `config` and loads parameters by name.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut r = Self::new(config, 0)?;
        let loaded = r.store.load_from(params)?;
        if loaded != r.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint provides {loaded} of {} refiner parameters",
                r.store.len()
            )));
        }
        Ok(r)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn spec(&self) -> SequenceSpec {
        self.config.seq_spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn pooling_weights(&self) -> TemporalPoolingWeights {
        let w = self.store.value(self.pool_weight).data();
        TemporalPoolingWeights {
            weights: w.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            bias: self.store.value(self.pool_bias).data().to_vec(),
        }
    }

    pub fn set_pooling_weights(&mut self, p: &TemporalPoolingWeights) -> Result<()> {
        if p.weights.len() != NUM_JOINTS || p.bias.len() != NUM_JOINTS {
            return Err(Error::Shape(format!("pooling weights need {NUM_JOINTS} joints")));
        }
        let (w, b) = p.tensors();
        *self.store.value_mut(self.pool_weight) = w;
        *self.store.value_mut(self.pool_bias) = b;
        Ok(())
    }

    pub fn pool_param_ids(&self) -> (ParamId, ParamId) {
        (self.pool_weight, self.pool_bias)
    }

    /// Makes only parameters whose names start with `prefix` trainable.
    pub fn train_only(&mut self, prefix: &str) {
        self.store.freeze_all();
        self.store.set_trainable_prefix(prefix, true);
    }

    fn stage_index(&self) -> usize {
        self.config.num_stages + 1
    }

    fn check(&self, features: &Tensor, seq: &PoseSequence, style: Option<StyleLabel>) -> Result<Option<StyleLabel>> {
        if seq.spec != self.spec() || seq.stacks.len() != self.spec().k_prime() {
            return Err(Error::Invalid(format!(
                "sequence with l={} and {} stacks does not match refiner l={}",
                seq.spec.l,
                seq.stacks.len(),
                self.spec().l
            )));
        }
        let (c, h, w) = features.dims3()?;
        let n = self.config.heatmap_size as usize;
        if (c, h, w) != (self.config.feature_channels, n, n) {
            return Err(Error::Shape(format!("features {:?} do not match the estimator config", features.shape())));
        }
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

    fn stack_input(g: &mut Graph<'_>, seq: &PoseSequence, slots: std::ops::Range<usize>) -> Result<Option<NodeId>> {
        if slots.is_empty() {
            return Ok(None);
        }
        let l = seq.spec.l as i64;
        let nodes: Vec<NodeId> = slots
            .map(|i| {
                let offset = 2 * (i as i64 - l);
                g.labeled_input(seq.stacks[i].tensor().clone(), format!("t{offset:+}"))
            })
            .collect();
        Ok(Some(g.concat(&nodes)?))
    }

    /// Adds one branch to `g`. Outer branches without input (l = 0)
    /// produce zeros.
    pub fn build_branch(
        &self,
        g: &mut Graph<'_>,
        branch: Branch,
        features: &Tensor,
        seq: &PoseSequence,
        labels: Option<&mut LabelInputs>,
    ) -> Result<NodeId> {
        let l = seq.spec.l;
        let stage = self.stage_index();
        let zeros = |g: &mut Graph<'_>| g.input(Tensor::zeros(seq.present().tensor().shape()));
        match branch {
            Branch::Present => {
                let f = g.labeled_input(features.clone(), "features");
                let h = g.labeled_input(seq.present().tensor().clone(), "t+0");
                let x = g.concat(&[f, h])?;
                apply_layers(&self.present, g, x, labels, stage)
            }
            Branch::Past | Branch::Future => {
                let (net, slots) = if branch == Branch::Past {
                    (&self.past, 0..l)
                } else {
                    (&self.future, l + 1..2 * l + 1)
                };
                match (net, Self::stack_input(g, seq, slots)?) {
                    (Some(net), Some(x)) => net.apply(g, x, labels, stage),
                    _ => Ok(zeros(g)),
                }
            }
        }
    }

    /// Adds the full refinement pass (three branches and pooling) to `g`.
    pub fn build(
        &self,
        g: &mut Graph<'_>,
        features: &Tensor,
        seq: &PoseSequence,
        style: Option<StyleLabel>,
    ) -> Result<RefinerNodes> {
        let style = self.check(features, seq, style)?;
        let mut labels = style.map(LabelInputs::new);
        let past = self.build_branch(g, Branch::Past, features, seq, labels.as_mut())?;
        let present = self.build_branch(g, Branch::Present, features, seq, labels.as_mut())?;
        let future = self.build_branch(g, Branch::Future, features, seq, labels.as_mut())?;
        let (w, b) = (g.param(self.pool_weight), g.param(self.pool_bias));
        let pooled = g.joint_mix(&[past, present, future], w, b)?;
        Ok(RefinerNodes {
            past,
            present,
            future,
            pooled,
        })
    }

    /// Branch predictions and pooled heatmaps from precomputed estimator
    /// features of frame `t`.
    pub fn forward(
        &self,
        features: &Tensor,
        seq: &PoseSequence,
        style: Option<StyleLabel>,
    ) -> Result<(BranchOutputs, HeatmapStack)> {
        let mut g = Graph::new(&self.store);
        let n = self.build(&mut g, features, seq, style)?;
        let stride = self.config.grid_stride();
        let stack = |id| HeatmapStack::new(g.value(id).clone(), stride);
        Ok((
            BranchOutputs {
                past: stack(n.past)?,
                present: stack(n.present)?,
                future: stack(n.future)?,
            },
            stack(n.pooled)?,
        ))
    }

    /// Refines frame `image` (the frame at `seq.center_t`) with `estimator`
    /// providing the shared image features.
    pub fn refine(
        &self,
        estimator: &PoseNet,
        image: &image::RgbImage,
        seq: &PoseSequence,
        style: Option<StyleLabel>,
    ) -> Result<(BranchOutputs, HeatmapStack)> {
        let out = estimator.forward(image, style)?;
        self.forward(&out.shared_features, seq, style)
    }
}

/// Frozen-estimator outputs of one clip, the refiner's training input.
#[derive(Clone, Debug)]
pub struct ClipEstimates {
    pub style: StyleLabel,
    pub features: Vec<Tensor>,
    pub estimates: Vec<HeatmapStack>,
    pub targets: Vec<HeatmapStack>,
}

impl ClipEstimates {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}

fn sample_index(clips: &[ClipEstimates]) -> Vec<(usize, usize)> {
    clips
        .iter()
        .enumerate()
        .flat_map(|(c, clip)| (1..=clip.len()).map(move |t| (c, t)))
        .collect()
}

/// Trains each branch separately against the frame-`t` target, with its
/// own optimizer; the pooling layer is not involved. Returns one loss log
/// per branch.
pub fn train_phase1(
    refiner: &mut TemporalRefiner,
    clips: &[ClipEstimates],
    cfg: &TrainConfig,
    mut on_record: impl FnMut(Branch, &LossRecord),
) -> Result<Vec<(Branch, Vec<LossRecord>)>> {
    let samples = sample_index(clips);
    let spec = refiner.spec();
    let branches: Vec<Branch> = if spec.l == 0 {
        vec![Branch::Present]
    } else {
        Branch::ALL.to_vec()
    };
    let mut logs = Vec::new();
    for (bi, branch) in branches.into_iter().enumerate() {
        refiner.train_only(branch.prefix());
        let bcfg = TrainConfig {
            seed: cfg.seed.wrapping_add(bi as u64),
            ..cfg.clone()
        };
        let log = train_loop(
            refiner,
            &bcfg,
            samples.len(),
            |r, g, i| {
                let (c, t) = samples[i];
                let clip = &clips[c];
                let seq = assemble_sequence(&clip.estimates, t, spec)?;
                let style = r.check(&clip.features[t - 1], &seq, Some(clip.style))?;
                let mut labels = style.map(LabelInputs::new);
                let out = r.build_branch(g, branch, &clip.features[t - 1], &seq, labels.as_mut())?;
                Ok(g.mse(out, clip.targets[t - 1].tensor())?)
            },
            |rec| on_record(branch, rec),
        )?;
        logs.push((branch, log));
    }
    refiner.store.freeze_all();
    Ok(logs)
}

/// Trains only the pooling weights with every branch frozen. Branch outputs
/// are computed once up front.
pub fn train_phase2(
    refiner: &mut TemporalRefiner,
    clips: &[ClipEstimates],
    cfg: &TrainConfig,
    on_record: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    let samples = sample_index(clips);
    let cached: Vec<BranchOutputs> = samples
        .iter()
        .map(|&(c, t)| {
            let clip = &clips[c];
            let seq = assemble_sequence(&clip.estimates, t, refiner.spec())?;
            Ok(refiner.forward(&clip.features[t - 1], &seq, Some(clip.style))?.0)
        })
        .collect::<Result<_>>()?;
    refiner.train_only(POOL_PREFIX);
    let (pw, pb) = refiner.pool_param_ids();
    let log = train_loop(
        refiner,
        cfg,
        samples.len(),
        |_, g, i| {
            let (c, t) = samples[i];
            let b = &cached[i];
            let ins = [&b.past, &b.present, &b.future].map(|s| g.input(s.tensor().clone()));
            let (w, bias) = (g.param(pw), g.param(pb));
            let out = g.joint_mix(&ins, w, bias)?;
            Ok(g.mse(out, clips[c].targets[t - 1].tensor())?)
        },
        on_record,
    )?;
    refiner.store.freeze_all();
    Ok(log)
}

/// Runs the frozen estimator over a clip's frames.
pub fn estimate_clip(
    estimator: &PoseNet,
    clip: &crate::types::VideoClip,
    with_targets: bool,
) -> Result<ClipEstimates> {
    let style = Some(clip.style());
    let mut features = Vec::with_capacity(clip.len());
    let mut estimates = Vec::with_capacity(clip.len());
    let mut targets = Vec::new();
    for (frame, pose) in clip.frames().iter().zip(clip.annotations()) {
        let out = estimator.forward(frame, style)?;
        estimates.push(out.final_stage().clone());
        features.push(out.shared_features);
        if with_targets {
            let input = estimator.config().input_size;
            let pose = crate::posenet::rescale_pose(pose, clip.image_size().0, input);
            targets.push(crate::heatmap::render_target(&pose, estimator.config()));
        }
    }
    Ok(ClipEstimates {
        style: clip.style(),
        features,
        estimates,
        targets,
    })
}

/// Mode-compatible refiner config: the estimator's config with `l` set.
pub fn refiner_config(estimator: &ModelConfig, l: usize) -> ModelConfig {
    ModelConfig {
        seq_spec: SequenceSpec::new(l),
        ..estimator.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_examples() {
        assert_eq!(sequence_indices(10, 100, SequenceSpec::new(1)).unwrap(), [8, 10, 12]);
        let idx = sequence_indices(50, 100, SequenceSpec::new(7)).unwrap();
        assert_eq!(idx, (36..=64).step_by(2).collect::<Vec<_>>());
        assert_eq!(SequenceSpec::new(7).k(), 29);
        assert_eq!(sequence_indices(1, 100, SequenceSpec::new(1)).unwrap(), [1, 1, 3]);
        assert!(sequence_indices(1, 0, SequenceSpec::new(1)).is_err());
        assert!(sequence_indices(0, 5, SequenceSpec::new(1)).is_err());
    }

    fn const_stack(v: f32) -> HeatmapStack {
        HeatmapStack::new(Tensor::full(&[NUM_JOINTS, 4, 4], v), 2).unwrap()
    }

    fn outputs(a: f32, b: f32, c: f32) -> BranchOutputs {
        BranchOutputs {
            past: const_stack(a),
            present: const_stack(b),
            future: const_stack(c),
        }
    }

    #[test]
    fn degenerate_pooling_selects_a_branch() {
        let o = outputs(0.25, 0.5, 0.75);
        let h = pool(&o, &TemporalPoolingWeights::uniform([1.0, 0.0, 0.0], 0.0)).unwrap();
        assert_eq!(h, o.past);
    }

    #[test]
    fn equal_branches_average_to_themselves() {
        let o = outputs(0.6, 0.6, 0.6);
        let h = pool(&o, &TemporalPoolingWeights::default()).unwrap();
        assert!(h.tensor().max_abs_diff(o.past.tensor()).unwrap() < 1e-6);
    }

    #[test]
    fn reported_weight_average_on_unit_maps() {
        let o = outputs(1.0, 1.0, 1.0);
        let h = pool(&o, &TemporalPoolingWeights::uniform([0.289, 0.300, 0.306], 0.0)).unwrap();
        assert!(h.tensor().data().iter().all(|v| (v - 0.895).abs() < 1e-6));
    }

    #[test]
    fn pooling_is_linear_without_bias() {
        let (a, b, c) = (0.3f32, -0.7f32, 1.1f32);
        let w = TemporalPoolingWeights::uniform([0.2, 0.5, -0.4], 0.0);
        let base = pool(&outputs(a, b, c), &w).unwrap();
        let scaled = pool(&outputs(2.5 * a, 2.5 * b, 2.5 * c), &w).unwrap();
        for (x, y) in base.tensor().data().iter().zip(scaled.tensor().data()) {
            assert!((2.5 * x - y).abs() < 1e-6);
        }
    }
}
