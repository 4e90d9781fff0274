//! Central finite differences over parameter entries. Uses only forward
//! evaluations, so it is independent of the backward pass it checks.

use crate::params::{ParamId, ParamStore};
use crate::Result;

/// Numerical derivative of `loss` with respect to entry `index` of `param`,
/// via `(f(θ+ε) − f(θ−ε)) / 2ε`. The store is restored afterwards.
pub fn central_difference<F>(
    store: &mut ParamStore,
    param: ParamId,
    index: usize,
    eps: f32,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let orig = store.value(param).data()[index];
    store.value_mut(param).data_mut()[index] = orig + eps;
    let plus = loss(store);
    store.value_mut(param).data_mut()[index] = orig - eps;
    let minus = loss(store);
    store.value_mut(param).data_mut()[index] = orig;
    let (plus, minus) = (plus?, minus?);
    // the perturbation actually applied, after f32 rounding
    let h = ((orig + eps) as f64) - ((orig - eps) as f64);
    Ok((plus - minus) / h)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
