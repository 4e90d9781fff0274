use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::params::{ParamId, ParamStore};
use crate::{Result, Tensor};

/// He-normal weights `[cout, cin, k, k]` and zero bias, registered as
/// `{name}.weight` / `{name}.bias`.
pub fn conv_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    gain: f32,
    rng: &mut R,
) -> Result<(ParamId, ParamId)> {
    let fan_in = (cin * k * k).max(1) as f32;
    let std = gain * (2.0 / fan_in).sqrt();
    let w = normal_tensor(&[cout, cin, k, k], std, rng);
    let wid = store.insert(format!("{name}.weight"), w)?;
    let bid = store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
    Ok((wid, bid))
}

pub fn normal_tensor<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0f32, std).expect("finite std");
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
