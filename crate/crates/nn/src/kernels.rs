//! Raw CPU kernels on `[C, H, W]` planes. Stride is always 1 for
//! convolutions, and spatial size is preserved with zero padding `k / 2`.

/// `c[m×n] = alpha · a[m×k] · b[k×n] + beta · c`, with explicit row/column
/// strides so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover every (row, col) index
    // reachable with the given strides; lengths are checked in debug builds.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `input[c, h, w]` into `cols[c·k·k, h·w]`.
pub(crate) fn im2col(input: &[f32], c: usize, h: usize, w: usize, k: usize, cols: &mut [f32]) {
    let pad = k / 2;
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * k * k * hw);
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_range(w, kx, pad);
                for y in 0..h {
                    let out = &mut dst[y * w..(y + 1) * w];
                    let iy = y as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize || x0 >= x1 {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    out[..x0].fill(0.0);
                    out[x1..].fill(0.0);
                    let shift = kx as isize - pad as isize;
                    let s0 = (x0 as isize + shift) as usize;
                    out[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back and accumulates into `out`.
pub(crate) fn col2im(cols: &[f32], c: usize, h: usize, w: usize, k: usize, out: &mut [f32]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_range(w, kx, pad);
                if x0 >= x1 {
                    continue;
                }
                let shift = kx as isize - pad as isize;
                for y in 0..h {
                    let iy = y as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let s0 = (x0 as isize + shift) as usize;
                    for (d, s) in dst[s0..s0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&src[y * w + x0..y * w + x1])
                    {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Output columns `x` for which `x + kx - pad` is a valid input column.
fn valid_range(w: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx);
    let hi = (w + pad).saturating_sub(kx).min(w);
    (lo, hi.max(lo))
}

/// Direct (quadruple loop) convolution. Slow; used as an oracle in tests.
#[cfg(test)]
pub(crate) fn conv_direct(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    bias: &[f32],
    cout: usize,
    k: usize,
) -> Vec<f32> {
    let pad = k as isize / 2;
    let mut out = vec![0.0f32; cout * h * w];
    for co in 0..cout {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[co] as f64;
                for ci in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = y as isize + ky as isize - pad;
                            let ix = x as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let wv = weight[((co * c + ci) * k + ky) * k + kx] as f64;
                            acc += wv * input[(ci * h + iy as usize) * w + ix as usize] as f64;
                        }
                    }
                }
                out[(co * h + y) * w + x] = acc as f32;
            }
        }
    }
    out
}
