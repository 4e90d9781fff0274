//! Class label maps: a categorical activity label encoded as one spatially
//! constant input channel per class, one-hot across channels.
//!
//! Concatenated to a convolution's input, the constant channels shift every
//! interior activation of each filter by the sum of that filter's weights on
//! the active class channel, i.e. they act as a class-dependent bias.

use serde::{Deserialize, Serialize};
use strokepose_nn::{Graph, NodeId, Tensor};

use crate::types::{StyleLabel, NUM_STYLES};
use crate::{Error, Result};

/// Where class label maps enter the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Style is not used.
    #[default]
    None,
    /// Only the first convolution of each conditioned stage receives the maps.
    Once,
    /// Every convolution of each conditioned stage receives the maps.
    Repeated,
}

impl ConditioningMode {
    pub fn is_enabled(self) -> bool {
        self != ConditioningMode::None
    }

    /// Whether convolution `layer` (0-based within its stage) takes the
    /// label channels.
    pub fn layer_receives_labels(self, layer: usize) -> bool {
        match self {
            ConditioningMode::None => false,
            ConditioningMode::Once => layer == 0,
            ConditioningMode::Repeated => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConditioningMode::None => "none",
            ConditioningMode::Once => "once",
            ConditioningMode::Repeated => "repeated",
        }
    }
}

/// `[NUM_STYLES, H, W]` tensor with the style's channel all ones.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassLabelMaps {
    data: Tensor,
    style: StyleLabel,
}

impl ClassLabelMaps {
    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn style(&self) -> StyleLabel {
        self.style
    }

    pub fn size(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }
}

pub fn make_label_maps(style: StyleLabel, h: usize, w: usize) -> Result<ClassLabelMaps> {
    if h == 0 || w == 0 {
        return Err(Error::Invalid(format!("label maps need a positive size, got {h}×{w}")));
    }
    let mut data = Tensor::zeros(&[NUM_STYLES, h, w]);
    data.channel_mut(style.index()).fill(1.0);
    Ok(ClassLabelMaps { data, style })
}

fn check_stage(stage: usize) -> Result<()> {
    if stage < 2 {
        return Err(Error::Config(format!(
            "class label maps cannot be injected at stage {stage}; only stages ≥ 2 are conditioned"
        )));
    }
    Ok(())
}

/// Channel-concatenates label maps onto a `[C, H, W]` feature tensor.
pub fn inject(features: &Tensor, maps: &ClassLabelMaps, stage: usize) -> Result<Tensor> {
    check_stage(stage)?;
    let (c, h, w) = features.dims3()?;
    if maps.size() != (h, w) {
        return Err(Error::Shape(format!(
            "label maps {:?} do not match features {h}×{w}",
            maps.size()
        )));
    }
    let mut data = Vec::with_capacity((c + NUM_STYLES) * h * w);
    data.extend_from_slice(features.data());
    data.extend_from_slice(maps.tensor().data());
    Ok(Tensor::from_vec(&[c + NUM_STYLES, h, w], data)?)
}

/// Graph form of [`inject`]: appends label channels to `features`.
pub fn inject_node(g: &mut Graph<'_>, features: NodeId, labels: NodeId, stage: usize) -> Result<NodeId> {
    check_stage(stage)?;
    Ok(g.concat(&[features, labels])?)
}

/// Label maps for each spatial size a network needs, created once per
/// sample and shared by every conditioned layer of that size.
#[derive(Clone, Debug)]
pub struct LabelInputs {
    style: StyleLabel,
    nodes: Vec<((usize, usize), NodeId)>,
}

impl LabelInputs {
    pub fn new(style: StyleLabel) -> Self {
        Self {
            style,
            nodes: Vec::new(),
        }
    }

    pub fn style(&self) -> StyleLabel {
        self.style
    }

    /// Label-map node matching the spatial size of `like`.
    pub fn node_for(&mut self, g: &mut Graph<'_>, like: NodeId) -> Result<NodeId> {
        let s = g.value(like).shape();
        let size = (s[1], s[2]);
        if let Some((_, n)) = self.nodes.iter().find(|(sz, _)| *sz == size) {
            return Ok(*n);
        }
        let maps = make_label_maps(self.style, size.0, size.1)?;
        let n = g.labeled_input(maps.data, format!("style:{}", self.style));
        self.nodes.push((size, n));
        Ok(n)
    }
}
