//! Pose ↔ confidence-map conversion.
//!
//! Cell `c` of a grid with stride `s` covers input pixels `c·s ..= c·s+s−1`,
//! so its centre sits at pixel coordinate `c·s + (s−1)/2`. Targets are
//! unnormalized Gaussians (peak 1) around each joint in continuous cell
//! coordinates; decoding takes the per-map argmax and returns the centre of
//! the winning cell.

use strokepose_nn::Tensor;

use crate::types::{HeatmapStack, JointId, Keypoint, ModelConfig, Pose, NUM_JOINTS};
use crate::Result;

/// Decoded joint locations and the map value at each.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedPose {
    pub pose: Pose,
    pub peak_confidence: [f32; NUM_JOINTS],
}

/// Continuous cell coordinate of pixel coordinate `p`.
pub fn pixel_to_cell(p: f64, stride: u32) -> f64 {
    let s = stride as f64;
    (p - (s - 1.0) / 2.0) / s
}

/// Pixel coordinate of continuous cell coordinate `c`.
pub fn cell_to_pixel(c: f64, stride: u32) -> f64 {
    let s = stride as f64;
    c * s + (s - 1.0) / 2.0
}

/// Renders the Gaussian training target for `pose`. Joints outside the
/// image are clamped onto the grid border.
pub fn render_target(pose: &Pose, config: &ModelConfig) -> HeatmapStack {
    let n = config.heatmap_size as usize;
    let stride = config.grid_stride();
    let inv_two_var = 1.0 / (2.0 * config.gaussian_sigma * config.gaussian_sigma);
    let mut t = Tensor::zeros(&[NUM_JOINTS, n, n]);
    let max_c = (n - 1) as f64;
    for j in JointId::ALL {
        let k = pose.joint(j);
        let cx = pixel_to_cell(k.x, stride).clamp(0.0, max_c);
        let cy = pixel_to_cell(k.y, stride).clamp(0.0, max_c);
        // separable: exp(-(dx²+dy²)/2σ²) = gx · gy
        let gx: Vec<f64> = (0..n)
            .map(|c| (-(c as f64 - cx).powi(2) * inv_two_var).exp())
            .collect();
        let gy: Vec<f64> = (0..n)
            .map(|r| (-(r as f64 - cy).powi(2) * inv_two_var).exp())
            .collect();
        let map = t.channel_mut(j.index());
        for r in 0..n {
            for c in 0..n {
                map[r * n + c] = (gy[r] * gx[c]) as f32;
            }
        }
    }
    HeatmapStack::new(t, stride).expect("rendered target is finite with J maps")
}

/// Per-joint argmax decoding. Ties go to the lowest row-major cell index.
/// Decoded joints are marked visible.
pub fn decode_pose(heatmaps: &HeatmapStack) -> DecodedPose {
    let (_, w) = heatmaps.map_size();
    let stride = heatmaps.grid_stride();
    let mut joints = [Keypoint::new(0.0, 0.0, true); NUM_JOINTS];
    let mut peak = [0.0f32; NUM_JOINTS];
    for j in JointId::ALL {
        let map = heatmaps.map(j);
        let (best, value) = argmax_first(map);
        let (r, c) = (best / w, best % w);
        joints[j.index()] = Keypoint::new(
            cell_to_pixel(c as f64, stride),
            cell_to_pixel(r as f64, stride),
            true,
        );
        peak[j.index()] = value;
    }
    DecodedPose {
        pose: Pose { joints },
        peak_confidence: peak,
    }
}

fn argmax_first(values: &[f32]) -> (usize, f32) {
    let mut best = 0;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    (best, best_v)
}

/// Rebuilds a stack with the same stride from a raw tensor.
pub fn stack_like(data: Tensor, like: &HeatmapStack) -> Result<HeatmapStack> {
    HeatmapStack::new(data, like.grid_stride())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ModelConfig {
        ModelConfig::default()
    }

    fn uniform_pose(x: f64, y: f64) -> Pose {
        Pose::new([Keypoint::new(x, y, true); NUM_JOINTS]).unwrap()
    }

    #[test]
    fn peak_is_one_at_cell_centre() {
        let c = cfg();
        // cell (10, 20) centre in pixels
        let px = cell_to_pixel(20.0, c.grid_stride());
        let py = cell_to_pixel(10.0, c.grid_stride());
        let h = render_target(&uniform_pose(px, py), &c);
        let n = c.heatmap_size as usize;
        assert_eq!(h.map(JointId::Head)[10 * n + 20], 1.0);
    }

    #[test]
    fn one_sigma_away_is_exp_minus_half() {
        let mut c = cfg();
        c.gaussian_sigma = 2.0;
        let s = c.grid_stride();
        let h = render_target(&uniform_pose(cell_to_pixel(20.0, s), cell_to_pixel(10.0, s)), &c);
        let n = c.heatmap_size as usize;
        let v = h.map(JointId::Neck)[10 * n + 22] as f64;
        assert!((v - (-0.5f64).exp()).abs() < 1e-6, "{v}");
        let v = h.map(JointId::Neck)[12 * n + 20] as f64;
        assert!((v - 0.60653066).abs() < 1e-6, "{v}");
    }

    fn one_hot_stack(cells: &[(usize, usize, f32)], n: usize, stride: u32) -> HeatmapStack {
        let mut t = Tensor::zeros(&[NUM_JOINTS, n, n]);
        for j in 0..NUM_JOINTS {
            for &(r, c, v) in cells {
                t.channel_mut(j)[r * n + c] = v;
            }
        }
        HeatmapStack::new(t, stride).unwrap()
    }

    #[test]
    fn decode_single_peak() {
        let h = one_hot_stack(&[(20, 10, 0.9)], 46, 8);
        let d = decode_pose(&h);
        let k = d.pose.joint(JointId::LeftKnee);
        assert_eq!((k.x, k.y), (10.0 * 8.0 + 3.5, 20.0 * 8.0 + 3.5));
        assert_eq!(d.peak_confidence[0], 0.9);
    }

    #[test]
    fn decode_picks_strict_maximum() {
        let h = one_hot_stack(&[(5, 5, 0.7), (12, 30, 0.9)], 46, 8);
        let k = decode_pose(&h).pose.joints[0];
        assert_eq!((k.x, k.y), (30.0 * 8.0 + 3.5, 12.0 * 8.0 + 3.5));
    }

    #[test]
    fn decode_constant_map_takes_first_cell() {
        let t = Tensor::full(&[NUM_JOINTS, 46, 46], 0.25);
        let d = decode_pose(&HeatmapStack::new(t, 8).unwrap());
        for k in d.pose.joints {
            assert_eq!((k.x, k.y), (3.5, 3.5));
        }
    }

    #[test]
    fn out_of_bounds_joints_are_clamped() {
        let c = cfg();
        let h = render_target(&uniform_pose(-50.0, 1000.0), &c);
        let d = decode_pose(&h);
        let n = c.heatmap_size as f64;
        assert_eq!(d.pose.joints[0].x, cell_to_pixel(0.0, 8));
        assert_eq!(d.pose.joints[0].y, cell_to_pixel(n - 1.0, 8));
    }

    proptest! {
        #[test]
        fn target_values_in_unit_interval(x in 0.0f64..368.0, y in 0.0f64..368.0) {
            let h = render_target(&uniform_pose(x, y), &cfg());
            prop_assert!(h.tensor().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn decode_invariant_under_monotone_rescaling(seed in 0u64..1000, a in 0.1f32..5.0, b in -3.0f32..3.0) {
            let c = cfg();
            let mut rng_state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let mut next = || {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (rng_state >> 11) as f64 / (1u64 << 53) as f64 * 360.0
            };
            let mut joints = [Keypoint::new(0.0, 0.0, true); NUM_JOINTS];
            for k in &mut joints { *k = Keypoint::new(next(), next(), true); }
            let h = render_target(&Pose::new(joints).unwrap(), &c);
            let mut t = h.tensor().clone();
            for v in t.data_mut() { *v = a * v.powi(3) + b; }
            let rescaled = HeatmapStack::new(t, h.grid_stride()).unwrap();
            prop_assert_eq!(decode_pose(&h).pose, decode_pose(&rescaled).pose);
        }
    }
}
