//! Numeric kernels behind the tape ops.
//!
//! Every kernel is single threaded, iterates with contiguous inner loops so
//! the compiler can autovectorize, and accumulates reductions in f64. There
//! is no data-dependent reordering anywhere, so results are bit-identical
//! across runs and machines with the same float semantics.

use super::{NnError, Result};

/// `c[m,n] += a[m,k] . b[k,n]` with row strides `ldc` and `lda`; `b` is
/// contiguous `[k,n]`. Four-row blocking keeps each `b` row in registers.
pub fn gemm_nn_acc(
    c: &mut [f32],
    ldc: usize,
    a: &[f32],
    lda: usize,
    b: &[f32],
    m: usize,
    k: usize,
    n: usize,
) {
    let mut i = 0;
    while i + 4 <= m {
        let (a0, a1, a2, a3) = (i * lda, (i + 1) * lda, (i + 2) * lda, (i + 3) * lda);
        for kk in 0..k {
            let (v0, v1, v2, v3) = (a[a0 + kk], a[a1 + kk], a[a2 + kk], a[a3 + kk]);
            let brow = &b[kk * n..kk * n + n];
            let (c01, c23) = c[i * ldc..].split_at_mut(2 * ldc);
            let (c0, c1) = c01.split_at_mut(ldc);
            let (c2, c3) = c23.split_at_mut(ldc);
            for j in 0..n {
                c0[j] += v0 * brow[j];
                c1[j] += v1 * brow[j];
                c2[j] += v2 * brow[j];
                c3[j] += v3 * brow[j];
            }
        }
        i += 4;
    }
    while i < m {
        for kk in 0..k {
            let v = a[i * lda + kk];
            let brow = &b[kk * n..kk * n + n];
            let crow = &mut c[i * ldc..i * ldc + n];
            for j in 0..n {
                crow[j] += v * brow[j];
            }
        }
        i += 1;
    }
}

/// `c[m,n] += a[m,d] . b[n,d]^T`, all contiguous. Dot-product form.
pub fn gemm_nt_acc(c: &mut [f32], a: &[f32], b: &[f32], m: usize, d: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * d..i * d + d];
        let crow = &mut c[i * n..i * n + n];
        for j in 0..n {
            let brow = &b[j * d..j * d + d];
            let mut acc = 0.0f32;
            for t in 0..d {
                acc += arow[t] * brow[t];
            }
            crow[j] += acc;
        }
    }
}

/// `c[m,n] += a[r,m]^T . b[r,n]` with row stride `lda` on `a`; `b` and `c`
/// contiguous. Outer-product form.
pub fn gemm_tn_acc(
    c: &mut [f32],
    a: &[f32],
    lda: usize,
    b: &[f32],
    r: usize,
    m: usize,
    n: usize,
) {
    for rr in 0..r {
        let arow = &a[rr * lda..rr * lda + m];
        let brow = &b[rr * n..rr * n + n];
        for i in 0..m {
            let v = arow[i];
            let crow = &mut c[i * n..i * n + n];
            for j in 0..n {
                crow[j] += v * brow[j];
            }
        }
    }
}

/// Geometry of one conv2d application. Inputs are NHWC, kernels are
/// `[kh, kw, cin, cout]`, padding is symmetric zero padding.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

pub fn conv_geom(xshape: &[usize], kshape: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    if xshape.len() != 4 || kshape.len() != 4 {
        return Err(NnError::shapes("conv2d", xshape, kshape));
    }
    let (n, h, w, cin) = (xshape[0], xshape[1], xshape[2], xshape[3]);
    let (kh, kw, kcin, cout) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if kcin != cin {
        return Err(NnError::shapes("conv2d", xshape, kshape));
    }
    if stride == 0 {
        return Err(NnError::invalid("conv2d", "stride must be >= 1"));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(NnError::invalid(
            "conv2d",
            format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + 2 * pad, w + 2 * pad),
        ));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    Ok(ConvGeom { n, h, w, cin, kh, kw, cout, stride, pad, ho, wo })
}

// Valid output-x range for a kernel column offset: lo..=hi such that the
// sampled input column ox*stride + off - pad stays inside [0, limit).
fn ox_span(stride: usize, off: usize, pad: usize, limit: usize, count: usize) -> Option<(usize, usize)> {
    let lo = if pad > off { (pad - off + stride - 1) / stride } else { 0 };
    if off > limit - 1 + pad {
        return None;
    }
    let hi = ((limit - 1 + pad - off) / stride).min(count - 1);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// Direct conv2d as a sum of shifted GEMMs. `out` must be zeroed.
pub fn conv2d_fwd(out: &mut [f32], x: &[f32], k: &[f32], g: &ConvGeom) {
    let (s, p) = (g.stride, g.pad);
    for nn in 0..g.n {
        let xb = &x[nn * g.h * g.w * g.cin..];
        let ob = &mut out[nn * g.ho * g.wo * g.cout..];
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let ks = &k[(dy * g.kw + dx) * g.cin * g.cout..][..g.cin * g.cout];
                let Some((xlo, xhi)) = ox_span(s, dx, p, g.w, g.wo) else { continue };
                let m = xhi - xlo + 1;
                for oy in 0..g.ho {
                    let iy = (oy * s + dy) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let ix0 = xlo * s + dx - p;
                    let arow = &xb[(iy as usize * g.w + ix0) * g.cin..];
                    let crow = &mut ob[(oy * g.wo + xlo) * g.cout..];
                    gemm_nn_acc(crow, g.cout, arow, s * g.cin, ks, m, g.cin, g.cout);
                }
            }
        }
    }
}

/// Input gradient of conv2d; accumulates into zeroed `dx`.
pub fn conv2d_dx(dx: &mut [f32], dout: &[f32], k: &[f32], g: &ConvGeom) {
    let (s, p) = (g.stride, g.pad);
    let mut kt = vec![0.0f32; g.cout * g.cin];
    for dy in 0..g.kh {
        for dx_off in 0..g.kw {
            let ks = &k[(dy * g.kw + dx_off) * g.cin * g.cout..][..g.cin * g.cout];
            for ci in 0..g.cin {
                for co in 0..g.cout {
                    kt[co * g.cin + ci] = ks[ci * g.cout + co];
                }
            }
            let Some((xlo, xhi)) = ox_span(s, dx_off, p, g.w, g.wo) else { continue };
            let m = xhi - xlo + 1;
            for nn in 0..g.n {
                let dxb = &mut dx[nn * g.h * g.w * g.cin..];
                let dob = &dout[nn * g.ho * g.wo * g.cout..];
                for oy in 0..g.ho {
                    let iy = (oy * s + dy) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let ix0 = xlo * s + dx_off - p;
                    let arow = &dob[(oy * g.wo + xlo) * g.cout..];
                    let crow = &mut dxb[(iy as usize * g.w + ix0) * g.cin..];
                    gemm_nn_acc(crow, s * g.cin, arow, g.cout, &kt, m, g.cout, g.cin);
                }
            }
        }
    }
}

/// Kernel gradient of conv2d; accumulates into zeroed `dk`.
pub fn conv2d_dk(dk: &mut [f32], x: &[f32], dout: &[f32], g: &ConvGeom) {
    let (s, p) = (g.stride, g.pad);
    for dy in 0..g.kh {
        for dx_off in 0..g.kw {
            let dks = &mut dk[(dy * g.kw + dx_off) * g.cin * g.cout..][..g.cin * g.cout];
            let Some((xlo, xhi)) = ox_span(s, dx_off, p, g.w, g.wo) else { continue };
            let m = xhi - xlo + 1;
            for nn in 0..g.n {
                let xb = &x[nn * g.h * g.w * g.cin..];
                let dob = &dout[nn * g.ho * g.wo * g.cout..];
                for oy in 0..g.ho {
                    let iy = (oy * s + dy) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let ix0 = xlo * s + dx_off - p;
                    let arow = &xb[(iy as usize * g.w + ix0) * g.cin..];
                    let brow = &dob[(oy * g.wo + xlo) * g.cout..];
                    gemm_tn_acc(dks, arow, s * g.cin, brow, m, g.cin, g.cout);
                }
            }
        }
    }
}

/// Source taps and lerp fraction for one output coordinate under half-pixel
/// alignment, clamped at the edges. At equal sizes this is the identity with
/// fraction exactly zero.
pub fn lin_weights(osize: usize, isize_: usize) -> Vec<(usize, usize, f32)> {
    let scale = isize_ as f64 / osize as f64;
    (0..osize)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let clamped = src.max(0.0).min(isize_ as f64 - 1.0);
            let i0 = clamped.floor() as usize;
            let i1 = (i0 + 1).min(isize_ - 1);
            (i0, i1, (clamped - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize of NHWC data. Lerp form `a + w*(b - a)` keeps constant
/// inputs exactly constant and equal sizes exactly identical.
pub fn bilinear_fwd(out: &mut [f32], x: &[f32], n: usize, h: usize, w: usize, c: usize, oh: usize, ow: usize) {
    let ys = lin_weights(oh, h);
    let xs = lin_weights(ow, w);
    for nn in 0..n {
        let xb = &x[nn * h * w * c..];
        let ob = &mut out[nn * oh * ow * c..];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            let r0 = &xb[y0 * w * c..y0 * w * c + w * c];
            let r1 = &xb[y1 * w * c..y1 * w * c + w * c];
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let orow = &mut ob[(oy * ow + ox) * c..(oy * ow + ox) * c + c];
                for cc in 0..c {
                    let a = r0[x0 * c + cc];
                    let b = r0[x1 * c + cc];
                    let e = r1[x0 * c + cc];
                    let f = r1[x1 * c + cc];
                    let top = a + wx * (b - a);
                    let bot = e + wx * (f - e);
                    orow[cc] = top + wy * (bot - top);
                }
            }
        }
    }
}

/// Gradient of bilinear resize; scatters into zeroed `dx`.
pub fn bilinear_bwd(dx: &mut [f32], dout: &[f32], n: usize, h: usize, w: usize, c: usize, oh: usize, ow: usize) {
    let ys = lin_weights(oh, h);
    let xs = lin_weights(ow, w);
    for nn in 0..n {
        let dxb = &mut dx[nn * h * w * c..];
        let dob = &dout[nn * oh * ow * c..];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let g = &dob[(oy * ow + ox) * c..(oy * ow + ox) * c + c];
                let (w00, w01) = ((1.0 - wy) * (1.0 - wx), (1.0 - wy) * wx);
                let (w10, w11) = (wy * (1.0 - wx), wy * wx);
                for cc in 0..c {
                    dxb[(y0 * w + x0) * c + cc] += w00 * g[cc];
                    dxb[(y0 * w + x1) * c + cc] += w01 * g[cc];
                    dxb[(y1 * w + x0) * c + cc] += w10 * g[cc];
                    dxb[(y1 * w + x1) * c + cc] += w11 * g[cc];
                }
            }
        }
    }
}

/// Nearest-neighbor 2x upsample of NHWC data.
pub fn upsample2_fwd(out: &mut [f32], x: &[f32], n: usize, h: usize, w: usize, c: usize) {
    for nn in 0..n {
        for y in 0..2 * h {
            for x_ in 0..2 * w {
                let src = ((nn * h + y / 2) * w + x_ / 2) * c;
                let dst = ((nn * 2 * h + y) * 2 * w + x_) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
}

pub fn upsample2_bwd(dx: &mut [f32], dout: &[f32], n: usize, h: usize, w: usize, c: usize) {
    for nn in 0..n {
        for y in 0..2 * h {
            for x_ in 0..2 * w {
                let src = ((nn * h + y / 2) * w + x_ / 2) * c;
                let dst = ((nn * 2 * h + y) * 2 * w + x_) * c;
                for cc in 0..c {
                    dx[src + cc] += dout[dst + cc];
                }
            }
        }
    }
}

/// Row softmax with optional per-row valid lengths. Entries at and beyond a
/// row's length get probability zero and take no part in the max or the sum.
pub fn softmax_rows(out: &mut [f32], x: &[f32], rows: usize, cols: usize, lens: Option<&[u32]>) {
    for r in 0..rows {
        let l = lens.map_or(cols, |ls| ls[r] as usize);
        debug_assert!(l >= 1 && l <= cols);
        let xr = &x[r * cols..r * cols + cols];
        let or = &mut out[r * cols..r * cols + cols];
        let mut mx = f32::NEG_INFINITY;
        for &v in &xr[..l] {
            mx = mx.max(v);
        }
        let mut sum = 0.0f64;
        for i in 0..l {
            let e = (xr[i] - mx).exp();
            or[i] = e;
            sum += e as f64;
        }
        let inv = (1.0 / sum) as f32;
        for v in &mut or[..l] {
            *v *= inv;
        }
        for v in &mut or[l..] {
            *v = 0.0;
        }
    }
}

/// Softmax gradient from the saved output `y`.
pub fn softmax_rows_bwd(dx: &mut [f32], y: &[f32], dy: &[f32], rows: usize, cols: usize, lens: Option<&[u32]>) {
    for r in 0..rows {
        let l = lens.map_or(cols, |ls| ls[r] as usize);
        let yr = &y[r * cols..r * cols + cols];
        let dyr = &dy[r * cols..r * cols + cols];
        let dxr = &mut dx[r * cols..r * cols + cols];
        let mut dot = 0.0f64;
        for i in 0..l {
            dot += (yr[i] * dyr[i]) as f64;
        }
        let dot = dot as f32;
        for i in 0..l {
            dxr[i] = yr[i] * (dyr[i] - dot);
        }
        for v in &mut dxr[l..] {
            *v = 0.0;
        }
    }
}

/// GroupNorm over NHWC data viewed as `[n, hw, c]` with channel-contiguous
/// groups. Statistics are per (sample, group) and accumulate in f64.
pub fn group_norm_fwd(
    out: &mut [f32],
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    n: usize,
    hw: usize,
    c: usize,
    groups: usize,
    eps: f32,
) {
    let cg = c / groups;
    for nn in 0..n {
        for g in 0..groups {
            let c0 = g * cg;
            let (mean, rstd) = group_stats(x, nn, hw, c, c0, cg, eps);
            for p in 0..hw {
                let base = (nn * hw + p) * c + c0;
                for i in 0..cg {
                    let xh = (x[base + i] - mean) * rstd;
                    out[base + i] = xh * gamma[c0 + i] + beta[c0 + i];
                }
            }
        }
    }
}

fn group_stats(x: &[f32], nn: usize, hw: usize, c: usize, c0: usize, cg: usize, eps: f32) -> (f32, f32) {
    let m = (hw * cg) as f64;
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for p in 0..hw {
        let base = (nn * hw + p) * c + c0;
        for i in 0..cg {
            let v = x[base + i] as f64;
            sum += v;
            sumsq += v * v;
        }
    }
    let mean = sum / m;
    let var = (sumsq / m - mean * mean).max(0.0);
    (mean as f32, (1.0 / (var + eps as f64).sqrt()) as f32)
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_bwd(
    dx: &mut [f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
    x: &[f32],
    dy: &[f32],
    gamma: &[f32],
    n: usize,
    hw: usize,
    c: usize,
    groups: usize,
    eps: f32,
) {
    let cg = c / groups;
    for nn in 0..n {
        for g in 0..groups {
            let c0 = g * cg;
            let (mean, rstd) = group_stats(x, nn, hw, c, c0, cg, eps);
            let m = (hw * cg) as f64;
            let mut s1 = 0.0f64;
            let mut s2 = 0.0f64;
            for p in 0..hw {
                let base = (nn * hw + p) * c + c0;
                for i in 0..cg {
                    let xh = (x[base + i] - mean) * rstd;
                    let dyg = dy[base + i] * gamma[c0 + i];
                    s1 += dyg as f64;
                    s2 += (dyg * xh) as f64;
                    dgamma[c0 + i] += dy[base + i] * xh;
                    dbeta[c0 + i] += dy[base + i];
                }
            }
            let (s1, s2) = ((s1 / m) as f32, (s2 / m) as f32);
            for p in 0..hw {
                let base = (nn * hw + p) * c + c0;
                for i in 0..cg {
                    let xh = (x[base + i] - mean) * rstd;
                    let dyg = dy[base + i] * gamma[c0 + i];
                    dx[base + i] += rstd * (dyg - s1 - xh * s2);
                }
            }
        }
    }
}

/// LayerNorm over the last dimension of `[rows, c]` data.
pub fn layer_norm_fwd(out: &mut [f32], x: &[f32], gamma: &[f32], beta: &[f32], rows: usize, c: usize, eps: f32) {
    group_norm_fwd(out, x, gamma, beta, rows, 1, c, 1, eps)
}

pub fn layer_norm_bwd(
    dx: &mut [f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
    x: &[f32],
    dy: &[f32],
    gamma: &[f32],
    rows: usize,
    c: usize,
    eps: f32,
) {
    group_norm_bwd(dx, dgamma, dbeta, x, dy, gamma, rows, 1, c, 1, eps)
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu_val_grad(x: f32) -> (f32, f32) {
    let s = sigmoid(x);
    (x * s, s * (1.0 + x * (1.0 - s)))
}

// Tanh-form GELU, the common approximation.
pub fn gelu_val_grad(x: f32) -> (f32, f32) {
    const C0: f32 = 0.797_884_56;
    const C1: f32 = 0.044_715;
    let u = C0 * (x + C1 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    let val = 0.5 * x * (1.0 + t);
    let grad = 0.5 * (1.0 + t) + 0.5 * x * sech2 * C0 * (1.0 + 3.0 * C1 * x * x);
    (val, grad)
}

pub fn mean_all_f64(x: &[f32]) -> f64 {
    x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    // Nested-loop oracle used to pin the shifted-GEMM conv path.
    pub fn conv2d_oracle(x: &[f32], k: &[f32], g: &ConvGeom) -> Vec<f32> {
        let mut out = vec![0.0f32; g.n * g.ho * g.wo * g.cout];
        for nn in 0..g.n {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    for co in 0..g.cout {
                        let mut acc = 0.0f32;
                        for dy in 0..g.kh {
                            for dx in 0..g.kw {
                                let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                                let ix = (ox * g.stride + dx) as isize - g.pad as isize;
                                if iy < 0 || iy >= g.h as isize || ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                for ci in 0..g.cin {
                                    let xv = x[((nn * g.h + iy as usize) * g.w + ix as usize) * g.cin + ci];
                                    let kv = k[((dy * g.kw + dx) * g.cin + ci) * g.cout + co];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out[((nn * g.ho + oy) * g.wo + ox) * g.cout + co] = acc;
                    }
                }
            }
        }
        out
    }

    fn randv(n: usize, seed: u64) -> Vec<f32> {
        use rand::Rng;
        let mut rng = crate::util::rng::stream(seed, "kernel-test");
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        for &(h, w, cin, cout, kh, s, p) in &[
            (8usize, 8usize, 3usize, 5usize, 3usize, 1usize, 1usize),
            (8, 8, 4, 6, 3, 2, 1),
            (5, 7, 2, 3, 1, 1, 0),
            (4, 4, 3, 2, 3, 1, 0),
            (1, 1, 4, 4, 3, 2, 1),
        ] {
            let g = conv_geom(&[2, h, w, cin], &[kh, kh, cin, cout], s, p).unwrap();
            let x = randv(2 * h * w * cin, 1);
            let k = randv(kh * kh * cin * cout, 2);
            let mut out = vec![0.0; 2 * g.ho * g.wo * cout];
            conv2d_fwd(&mut out, &x, &k, &g);
            let want = conv2d_oracle(&x, &k, &g);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let g = conv_geom(&[1, 4, 4, 3], &[1, 1, 3, 3], 1, 0).unwrap();
        let x = randv(4 * 4 * 3, 3);
        // 1x1 kernel holding the identity matrix over channels.
        let mut k = vec![0.0f32; 9];
        for i in 0..3 {
            k[i * 3 + i] = 1.0;
        }
        let mut out = vec![0.0; x.len()];
        conv2d_fwd(&mut out, &x, &k, &g);
        assert_eq!(out, x);
    }

    #[test]
    fn conv_zero_input_gives_zero() {
        let g = conv_geom(&[1, 6, 6, 2], &[3, 3, 2, 4], 1, 1).unwrap();
        let k = randv(3 * 3 * 2 * 4, 4);
        let mut out = vec![0.0; 6 * 6 * 4];
        conv2d_fwd(&mut out, &vec![0.0; 6 * 6 * 2], &k, &g);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_shapes() {
        let err = conv_geom(&[1, 4, 4, 3], &[3, 3, 2, 8], 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 4, 4, 3]") && msg.contains("[3, 3, 2, 8]"), "{msg}");
    }

    #[test]
    fn conv_output_size_formula() {
        let g = conv_geom(&[1, 8, 8, 1], &[3, 3, 1, 1], 2, 1).unwrap();
        assert_eq!((g.ho, g.wo), (4, 4));
        let g = conv_geom(&[1, 1, 1, 1], &[3, 3, 1, 1], 2, 1).unwrap();
        assert_eq!((g.ho, g.wo), (1, 1));
    }

    #[test]
    fn gemm_forms_agree_with_naive() {
        let (m, k, n) = (5, 7, 9);
        let a = randv(m * k, 10);
        let b = randv(k * n, 11);
        let mut c = vec![0.0; m * n];
        gemm_nn_acc(&mut c, n, &a, k, &b, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let want: f32 = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-4);
            }
        }
        // NT: c2 = a . bt^T where bt is b transposed, must equal c.
        let mut bt = vec![0.0; n * k];
        for t in 0..k {
            for j in 0..n {
                bt[j * k + t] = b[t * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm_nt_acc(&mut c2, &a, &bt, m, k, n);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-4);
        }
        // TN: c3 = at^T . b where at is a transposed, must equal c.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for t in 0..k {
                at[t * m + i] = a[i * k + t];
            }
        }
        let mut c3 = vec![0.0; m * n];
        gemm_tn_acc(&mut c3, &at, m, &b, k, m, n);
        for (x, y) in c.iter().zip(&c3) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn bilinear_identity_at_equal_size_is_exact() {
        let x = randv(2 * 5 * 7 * 3, 20);
        let mut out = vec![0.0; x.len()];
        bilinear_fwd(&mut out, &x, 2, 5, 7, 3, 5, 7);
        assert_eq!(out, x);
    }

    #[test]
    fn bilinear_preserves_constants_exactly() {
        let x = vec![7.0f32; 4 * 4];
        let mut out = vec![0.0; 8 * 8];
        bilinear_fwd(&mut out, &x, 1, 4, 4, 1, 8, 8);
        assert!(out.iter().all(|&v| v == 7.0));
        let mut down = vec![0.0; 3 * 5];
        bilinear_fwd(&mut down, &x, 1, 4, 4, 1, 3, 5);
        assert!(down.iter().all(|&v| v == 7.0));
    }

    #[test]
    fn bilinear_from_single_pixel_broadcasts() {
        let x = vec![3.5f32];
        let mut out = vec![0.0; 6 * 6];
        bilinear_fwd(&mut out, &x, 1, 1, 1, 1, 6, 6);
        assert!(out.iter().all(|&v| v == 3.5));
    }

    // Closed-form check of the half-pixel sampling on a known ramp.
    #[test]
    fn bilinear_matches_closed_form_on_2x2() {
        let x = vec![0.0f32, 1.0, 2.0, 3.0];
        let mut out = vec![0.0; 16];
        bilinear_fwd(&mut out, &x, 1, 2, 2, 1, 4, 4);
        let coords = lin_weights(4, 2);
        for (oy, &(y0, y1, wy)) in coords.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in coords.iter().enumerate() {
                let top = x[y0 * 2 + x0] + wx * (x[y0 * 2 + x1] - x[y0 * 2 + x0]);
                let bot = x[y1 * 2 + x0] + wx * (x[y1 * 2 + x1] - x[y1 * 2 + x0]);
                let want = top + wy * (bot - top);
                assert!((out[oy * 4 + ox] - want).abs() < 1e-6);
            }
        }
        // Centers of the 2x2 interior reproduce source values.
        assert_eq!(out[0], 0.0);
        assert_eq!(out[15], 3.0);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_respect_lens() {
        let x = randv(4 * 6, 30);
        let lens = [6u32, 1, 3, 6];
        let mut y = vec![0.0; x.len()];
        softmax_rows(&mut y, &x, 4, 6, Some(&lens));
        for r in 0..4 {
            let l = lens[r] as usize;
            let sum: f32 = y[r * 6..r * 6 + 6].iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
            assert!(y[r * 6 + l..r * 6 + 6].iter().all(|&v| v == 0.0));
        }
        // A length-1 row puts everything on its only entry.
        assert_eq!(y[6], 1.0);
    }
}
