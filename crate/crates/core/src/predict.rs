//! Per-clip inference with an estimator alone or followed by a refiner.

use crate::heatmap::{decode_pose, DecodedPose};
use crate::posenet::{rescale_pose, PoseNet};
use crate::temporal::{assemble_sequence, estimate_clip, TemporalRefiner};
use crate::types::{ModelConfig, VideoClip};
use crate::Result;

pub enum Predictor {
    Estimator(PoseNet),
    Temporal {
        estimator: PoseNet,
        refiner: TemporalRefiner,
    },
}

impl Predictor {
    pub fn config(&self) -> &ModelConfig {
        match self {
            Predictor::Estimator(net) => net.config(),
            Predictor::Temporal { refiner, .. } => refiner.config(),
        }
    }

    /// One decoded pose per frame, in the clip's pixel coordinates.
    pub fn predict_clip(&self, clip: &VideoClip) -> Result<Vec<DecodedPose>> {
        match self {
            Predictor::Estimator(net) => predict_clip(net, None, clip),
            Predictor::Temporal { estimator, refiner } => predict_clip(estimator, Some(refiner), clip),
        }
    }
}

/// Runs `estimator` over every frame of `clip`, then `refiner` over the
/// resulting estimates when given. Poses are in the clip's pixel coordinates.
pub fn predict_clip(
    estimator: &PoseNet,
    refiner: Option<&TemporalRefiner>,
    clip: &VideoClip,
) -> Result<Vec<DecodedPose>> {
    let est = estimate_clip(estimator, clip, false)?;
    let heatmaps = match refiner {
        None => est.estimates,
        Some(r) => (1..=clip.len())
            .map(|t| {
                let seq = assemble_sequence(&est.estimates, t, r.spec())?;
                Ok(r.forward(&est.features[t - 1], &seq, Some(clip.style()))?.1)
            })
            .collect::<Result<_>>()?,
    };
    let input = estimator.config().input_size;
    let size = clip.image_size().0;
    Ok(heatmaps
        .iter()
        .map(|h| {
            let d = decode_pose(h);
            DecodedPose {
                pose: rescale_pose(&d.pose, input, size),
                ..d
            }
        })
        .collect())
}
