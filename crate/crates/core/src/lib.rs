//! Activity-conditioned pose estimation for videos of cyclic motion.
//!
//! The pipeline has four parts:
//!
//! - [`posenet`]: a stage-wise fully-convolutional estimator that regresses
//!   one confidence map per joint and refines it over several stages, each
//!   supervised against the same Gaussian target ([`heatmap`]).
//! - [`conditioning`]: one-hot, spatially constant class label maps fed as
//!   extra input channels to refinement stages.
//! - [`temporal`]: a post-processing network over strided sequences of
//!   single-frame estimates with past / present / future branches merged by
//!   a learned per-joint pooling layer.
//! - [`metrics`]: PCK@α with torso-diameter normalization.
//!
//! [`synthgen`] renders synthetic swimmer clips and [`dataio`] reads and
//! writes the on-disk dataset format.

pub mod checkpoint;
pub mod conditioning;
pub mod dataio;
pub mod heatmap;
pub mod metrics;
pub mod posenet;
pub mod predict;
pub mod synthgen;
pub mod temporal;
pub mod train;
pub mod types;

pub use conditioning::{ClassLabelMaps, ConditioningMode};
pub use heatmap::{decode_pose, render_target, DecodedPose};
pub use types::{
    mirror_pose, HeatmapStack, JointId, Keypoint, ModelConfig, Pose, SequenceSpec, StyleLabel,
    VideoClip, NUM_JOINTS, NUM_STYLES, SKELETON,
};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("missing predictions for {} frame(s): {}", .0.len(), format_frames(.0))]
    MissingPredictions(Vec<(String, usize)>),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] strokepose_nn::NnError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: std::path::PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Invalid(_)
                | Error::Dataset(_)
                | Error::MissingPredictions(_)
                | Error::Checkpoint(_)
        )
    }

    pub(crate) fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

fn format_frames(frames: &[(String, usize)]) -> String {
    const SHOWN: usize = 10;
    let mut s = frames
        .iter()
        .take(SHOWN)
        .map(|(c, t)| format!("{c}#{t}"))
        .collect::<Vec<_>>()
        .join(", ");
    if frames.len() > SHOWN {
        s.push_str(&format!(", … ({} more)", frames.len() - SHOWN));
    }
    s
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
