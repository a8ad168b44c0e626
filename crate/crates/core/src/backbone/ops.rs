//! Forward and input-gradient kernels for the backbone graphs.
//!
//! Convolutions run as im2col + GEMM over bands of output rows; bands are
//! independent, so the forward pass parallelizes across them while keeping
//! each output element's accumulation order fixed. Weights are frozen
//! (inference only), so the backward pass propagates gradients to the input
//! alone: `dIn = col2im(W^T x dOut)`.

use super::tensor::{Scalar, Tensor};

/// Convolution weights in `[out_c][in_c][kh][kw]` layout.
#[derive(Debug, Clone)]
pub struct ConvKernel<F> {
    pub out_c: usize,
    pub in_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: Vec<F>,
    pub bias: Option<Vec<F>>,
}

pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

#[derive(Debug, Clone, Copy)]
struct Band {
    r0: usize,
    r1: usize,
}

// Rows per band sized so an im2col buffer stays around 1M elements, while
// still leaving at least two bands per worker for load balance.
fn bands(oh: usize, ow: usize, k: usize) -> Vec<Band> {
    let workers = num_workers();
    let by_mem = (1usize << 20) / (k * ow).max(1);
    let by_par = oh.div_ceil(2 * workers);
    let rows = by_mem.min(by_par).clamp(1, oh);
    (0..oh)
        .step_by(rows)
        .map(|r0| Band {
            r0,
            r1: (r0 + rows).min(oh),
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn num_workers() -> usize {
    rayon::current_num_threads().max(1)
}

#[cfg(not(feature = "parallel"))]
fn num_workers() -> usize {
    1
}

#[cfg(feature = "parallel")]
fn for_each_band<T: Send>(bs: Vec<Band>, f: impl Fn(Band) -> T + Send + Sync) -> Vec<T> {
    use rayon::prelude::*;
    bs.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn for_each_band<T: Send>(bs: Vec<Band>, f: impl Fn(Band) -> T + Send + Sync) -> Vec<T> {
    bs.into_iter().map(f).collect()
}

// Fills `cols` (K x n_band, K = in_c*kh*kw) for output rows [r0, r1).
#[allow(clippy::too_many_arguments)]
fn im2col_band<F: Scalar>(
    input: &Tensor<F>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ow: usize,
    band: Band,
    cols: &mut [F],
) {
    let (in_c, ih, iw) = input.shape();
    let n_band = (band.r1 - band.r0) * ow;
    debug_assert_eq!(cols.len(), in_c * kh * kw * n_band);
    let src = input.data();
    for ic in 0..in_c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ic * kh + ky) * kw + kx) * n_band;
                for oy in band.r0..band.r1 {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut cols[row + (oy - band.r0) * ow..row + (oy - band.r0 + 1) * ow];
                    if iy < 0 || iy >= ih as isize {
                        dst.fill(F::ZERO);
                        continue;
                    }
                    let in_row = &src[(ic * ih + iy as usize) * iw..(ic * ih + iy as usize + 1) * iw];
                    if stride == 1 {
                        // ix = ox - pad + kx; the valid ox range is contiguous.
                        let shift = kx as isize - pad as isize;
                        let ox_lo = (-shift).max(0) as usize;
                        let ox_hi = ((iw as isize - shift).min(ow as isize)).max(0) as usize;
                        dst[..ox_lo.min(ow)].fill(F::ZERO);
                        if ox_hi > ox_lo {
                            dst[ox_lo..ox_hi].copy_from_slice(
                                &in_row[(ox_lo as isize + shift) as usize
                                    ..(ox_hi as isize + shift) as usize],
                            );
                        }
                        dst[ox_hi.max(ox_lo)..].fill(F::ZERO);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            *d = if ix < 0 || ix >= iw as isize {
                                F::ZERO
                            } else {
                                in_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

struct SendPtr<F>(*mut F);
unsafe impl<F> Send for SendPtr<F> {}
unsafe impl<F> Sync for SendPtr<F> {}

impl<F> SendPtr<F> {
    fn get(&self) -> *mut F {
        self.0
    }
}

pub fn conv2d<F: Scalar>(
    input: &Tensor<F>,
    kernel: &ConvKernel<F>,
    stride: usize,
    pad: usize,
) -> Tensor<F> {
    let (in_c, ih, iw) = input.shape();
    assert_eq!(in_c, kernel.in_c, "input channels do not match the kernel");
    let oh = conv_out_size(ih, kernel.kh, stride, pad);
    let ow = conv_out_size(iw, kernel.kw, stride, pad);
    let k = kernel.in_c * kernel.kh * kernel.kw;
    let mut out: Tensor<F> = Tensor::zeros(kernel.out_c, oh, ow);
    let plane = oh * ow;
    let out_ptr = SendPtr(out.data_mut().as_mut_ptr());

    for_each_band(bands(oh, ow, k), move |band| {
        let n_band = (band.r1 - band.r0) * ow;
        let mut cols = vec![F::ZERO; k * n_band];
        im2col_band(input, kernel.kh, kernel.kw, stride, pad, ow, band, &mut cols);
        // out[oc, band rows] = W[oc, :] . cols; bands write disjoint columns
        // of each output plane.
        unsafe {
            F::gemm(
                kernel.out_c,
                k,
                n_band,
                F::ONE,
                kernel.weight.as_ptr(),
                k as isize,
                1,
                cols.as_ptr(),
                n_band as isize,
                1,
                F::ZERO,
                out_ptr.get().add(band.r0 * ow),
                plane as isize,
                1,
            );
        }
    });

    if let Some(bias) = &kernel.bias {
        for (oc, b) in bias.iter().enumerate() {
            for v in &mut out.data_mut()[oc * plane..(oc + 1) * plane] {
                *v += *b;
            }
        }
    }
    out
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_backward_input<F: Scalar>(
    grad_out: &Tensor<F>,
    kernel: &ConvKernel<F>,
    stride: usize,
    pad: usize,
    in_shape: (usize, usize, usize),
) -> Tensor<F> {
    let (in_c, ih, iw) = in_shape;
    let (out_c, oh, ow) = grad_out.shape();
    assert_eq!(out_c, kernel.out_c);
    assert_eq!(in_c, kernel.in_c);
    let k = kernel.in_c * kernel.kh * kernel.kw;
    let plane = oh * ow;

    // Per-band dcols = W^T x dOut in parallel, then an ordered sequential
    // scatter so overlapping input rows accumulate deterministically.
    let band_list = bands(oh, ow, k);
    let dcols_bands: Vec<(Band, Vec<F>)> = for_each_band(band_list, |band| {
        let n_band = (band.r1 - band.r0) * ow;
        let mut dcols = vec![F::ZERO; k * n_band];
        unsafe {
            F::gemm(
                k,
                kernel.out_c,
                n_band,
                F::ONE,
                kernel.weight.as_ptr(),
                1,
                k as isize,
                grad_out.data().as_ptr().add(band.r0 * ow),
                plane as isize,
                1,
                F::ZERO,
                dcols.as_mut_ptr(),
                n_band as isize,
                1,
            );
        }
        (band, dcols)
    });

    let mut din = Tensor::zeros(in_c, ih, iw);
    let dst = din.data_mut();
    for (band, dcols) in dcols_bands {
        let n_band = (band.r1 - band.r0) * ow;
        for ic in 0..in_c {
            for ky in 0..kernel.kh {
                for kx in 0..kernel.kw {
                    let row = ((ic * kernel.kh + ky) * kernel.kw + kx) * n_band;
                    for oy in band.r0..band.r1 {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let src = &dcols[row + (oy - band.r0) * ow..row + (oy - band.r0 + 1) * ow];
                        let base = (ic * ih + iy as usize) * iw;
                        if stride == 1 {
                            let shift = kx as isize - pad as isize;
                            let ox_lo = (-shift).max(0) as usize;
                            let ox_hi = ((iw as isize - shift).min(ow as isize)).max(0) as usize;
                            for ox in ox_lo..ox_hi.max(ox_lo) {
                                dst[base + (ox as isize + shift) as usize] += src[ox];
                            }
                        } else {
                            for (ox, &g) in src.iter().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < iw as isize {
                                    dst[base + ix as usize] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    din
}

pub fn relu<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    let (c, h, w) = input.shape();
    let data = input.data().iter().map(|&v| v.maximum(F::ZERO)).collect();
    Tensor::from_vec(c, h, w, data)
}

/// dL/dx given dL/dy and the relu *output* (zero where the unit was clamped).
pub fn relu_backward<F: Scalar>(grad_out: &Tensor<F>, output: &Tensor<F>) -> Tensor<F> {
    let (c, h, w) = grad_out.shape();
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > F::ZERO { g } else { F::ZERO })
        .collect();
    Tensor::from_vec(c, h, w, data)
}

/// Evaluation-mode batchnorm folded to `y = x*scale + shift`, fused with relu.
pub fn affine_relu<F: Scalar>(input: &Tensor<F>, scale: &[F], shift: &[F]) -> Tensor<F> {
    let (c, h, w) = input.shape();
    assert_eq!(scale.len(), c);
    let plane = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let (s, b) = (scale[ch], shift[ch]);
        let src = &input.data()[ch * plane..(ch + 1) * plane];
        let dst = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
        for (d, &x) in dst.iter_mut().zip(src) {
            *d = (x * s + b).maximum(F::ZERO);
        }
    }
    out
}

pub fn affine_relu_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    output: &Tensor<F>,
    scale: &[F],
) -> Tensor<F> {
    let (c, h, w) = grad_out.shape();
    let plane = h * w;
    let mut din = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let s = scale[ch];
        let g = &grad_out.data()[ch * plane..(ch + 1) * plane];
        let y = &output.data()[ch * plane..(ch + 1) * plane];
        let dst = &mut din.data_mut()[ch * plane..(ch + 1) * plane];
        for i in 0..plane {
            dst[i] = if y[i] > F::ZERO { g[i] * s } else { F::ZERO };
        }
    }
    din
}

/// Max pooling; returns the output and the winning input index per output
/// element (first maximum in scan order, so ties break deterministically).
pub fn maxpool<F: Scalar>(
    input: &Tensor<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Tensor<F>, Vec<u32>) {
    let (c, ih, iw) = input.shape();
    let oh = conv_out_size(ih, k, stride, pad);
    let ow = conv_out_size(iw, k, stride, pad);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut argmax = vec![0u32; c * oh * ow];
    let src = input.data();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<(F, usize)> = None;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        let idx = (ch * ih + iy as usize) * iw + ix as usize;
                        let v = src[idx];
                        if best.map_or(true, |(bv, _)| v > bv) {
                            best = Some((v, idx));
                        }
                    }
                }
                let (v, idx) = best.expect("pooling window always overlaps the input");
                let o = (ch * oh + oy) * ow + ox;
                out.data_mut()[o] = v;
                argmax[o] = idx as u32;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    argmax: &[u32],
    in_shape: (usize, usize, usize),
) -> Tensor<F> {
    let mut din = Tensor::zeros(in_shape.0, in_shape.1, in_shape.2);
    let dst = din.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        dst[idx as usize] += *g;
    }
    din
}

/// Non-overlapping k x k average pooling (stride = k); trailing rows or
/// columns that do not fill a window are dropped.
pub fn avgpool<F: Scalar>(input: &Tensor<F>, k: usize) -> Tensor<F> {
    let (c, ih, iw) = input.shape();
    let (oh, ow) = (ih / k, iw / k);
    let inv = F::from_f64(1.0 / (k * k) as f64);
    let mut out = Tensor::zeros(c, oh, ow);
    let src = input.data();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = F::ZERO;
                for ky in 0..k {
                    let base = (ch * ih + oy * k + ky) * iw + ox * k;
                    for kx in 0..k {
                        acc += src[base + kx];
                    }
                }
                out.data_mut()[(ch * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    out
}

pub fn avgpool_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    k: usize,
    in_shape: (usize, usize, usize),
) -> Tensor<F> {
    let (c, ih, iw) = in_shape;
    let (_, oh, ow) = grad_out.shape();
    let inv = F::from_f64(1.0 / (k * k) as f64);
    let mut din = Tensor::zeros(c, ih, iw);
    let dst = din.data_mut();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.data()[(ch * oh + oy) * ow + ox] * inv;
                for ky in 0..k {
                    let base = (ch * ih + oy * k + ky) * iw + ox * k;
                    for kx in 0..k {
                        dst[base + kx] += g;
                    }
                }
            }
        }
    }
    din
}

/// Channel concatenation of two equally-sized planes.
pub fn concat2<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (ca, h, w) = a.shape();
    let (cb, hb, wb) = b.shape();
    assert_eq!((h, w), (hb, wb), "concat operands must share spatial shape");
    let mut data = Vec::with_capacity((ca + cb) * h * w);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(ca + cb, h, w, data)
}

pub fn concat2_backward<F: Scalar>(grad_out: &Tensor<F>, ca: usize) -> (Tensor<F>, Tensor<F>) {
    let (c, h, w) = grad_out.shape();
    let split = ca * h * w;
    let da = Tensor::from_vec(ca, h, w, grad_out.data()[..split].to_vec());
    let db = Tensor::from_vec(c - ca, h, w, grad_out.data()[split..].to_vec());
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor_f64(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor<f64> {
        let mut data = Vec::new();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ch, y, x));
                }
            }
        }
        Tensor::from_vec(c, h, w, data)
    }

    // Direct six-loop convolution used as the oracle for the GEMM path.
    fn conv_naive(input: &Tensor<f64>, k: &ConvKernel<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (in_c, ih, iw) = input.shape();
        let oh = conv_out_size(ih, k.kh, stride, pad);
        let ow = conv_out_size(iw, k.kw, stride, pad);
        let mut out = Tensor::zeros(k.out_c, oh, ow);
        for oc in 0..k.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = k.bias.as_ref().map_or(0.0, |b| b[oc]);
                    for ic in 0..in_c {
                        for ky in 0..k.kh {
                            for kx in 0..k.kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || iy >= ih as isize || ix < 0 || ix >= iw as isize {
                                    continue;
                                }
                                let wv = k.weight
                                    [((oc * in_c + ic) * k.kh + ky) * k.kw + kx];
                                acc += wv * input.data()[(ic * ih + iy as usize) * iw + ix as usize];
                            }
                        }
                    }
                    out.data_mut()[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn rng_kernel(out_c: usize, in_c: usize, kh: usize, kw: usize, bias: bool) -> ConvKernel<f64> {
        let n = out_c * in_c * kh * kw;
        let weight = (0..n).map(|i| ((i * 2654435761 % 1000) as f64 / 500.0) - 1.0).collect();
        let bias = bias.then(|| (0..out_c).map(|i| i as f64 * 0.1 - 0.2).collect());
        ConvKernel { out_c, in_c, kh, kw, weight, bias }
    }

    #[test]
    fn conv_matches_naive_all_geometries() {
        let input = tensor_f64(3, 13, 11, |c, y, x| ((c * 31 + y * 7 + x * 3) % 17) as f64 / 8.0 - 1.0);
        for &(kh, stride, pad, bias) in
            &[(1usize, 1usize, 0usize, false), (3, 1, 1, true), (3, 2, 1, false), (7, 2, 3, false)]
        {
            let k = rng_kernel(5, 3, kh, kh, bias);
            let fast = conv2d(&input, &k, stride, pad);
            let slow = conv_naive(&input, &k, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-9, "k={kh} s={stride} p={pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let input = tensor_f64(2, 8, 9, |c, y, x| ((c * 13 + y * 5 + x) % 11) as f64 / 5.0 - 1.0);
        for &(kh, stride, pad) in &[(3usize, 1usize, 1usize), (3, 2, 1), (1, 1, 0)] {
            let k = rng_kernel(4, 2, kh, kh, false);
            let out = conv2d(&input, &k, stride, pad);
            // Loss = weighted sum of outputs with pseudo-random weights.
            let lw: Vec<f64> = (0..out.len()).map(|i| ((i * 97 % 13) as f64 - 6.0) / 6.0).collect();
            let mut gout = out.clone();
            gout.data_mut().copy_from_slice(&lw);
            let din = conv2d_backward_input(&gout, &k, stride, pad, input.shape());

            let h = 1e-5;
            for &probe in &[0usize, 17, 63, input.len() - 1] {
                let mut plus = input.clone();
                plus.data_mut()[probe] += h;
                let mut minus = input.clone();
                minus.data_mut()[probe] -= h;
                let f = |t: &Tensor<f64>| -> f64 {
                    conv2d(t, &k, stride, pad)
                        .data()
                        .iter()
                        .zip(&lw)
                        .map(|(o, w)| o * w)
                        .sum()
                };
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let an = din.data()[probe];
                assert!(
                    (fd - an).abs() < 1e-6 * (1.0 + fd.abs()),
                    "k={kh} s={stride}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn maxpool_matches_reference_and_routes_gradient() {
        let input = tensor_f64(2, 7, 7, |c, y, x| ((c * 29 + y * 11 + x * 5) % 23) as f64);
        let (out, argmax) = maxpool(&input, 3, 2, 1);
        assert_eq!(out.shape(), (2, 4, 4));
        // Every output equals the max over its window.
        for ch in 0..2 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let mut m = f64::NEG_INFINITY;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy >= 0 && iy < 7 && ix >= 0 && ix < 7 {
                                m = m.max(input.data()[(ch * 7 + iy as usize) * 7 + ix as usize]);
                            }
                        }
                    }
                    assert_eq!(out.data()[(ch * 4 + oy) * 4 + ox], m);
                }
            }
        }
        let mut gout = out.clone();
        gout.data_mut().fill(1.0);
        let din = maxpool_backward(&gout, &argmax, input.shape());
        let total: f64 = din.data().iter().sum();
        assert_eq!(total, 32.0); // one unit per output element
    }

    #[test]
    fn avgpool_round_trip() {
        let input = tensor_f64(1, 6, 6, |_, y, x| (y * 6 + x) as f64);
        let out = avgpool(&input, 2);
        assert_eq!(out.shape(), (1, 3, 3));
        assert_eq!(out.data()[0], (0.0 + 1.0 + 6.0 + 7.0) / 4.0);
        let mut gout = out.clone();
        gout.data_mut().fill(4.0);
        let din = avgpool_backward(&gout, 2, input.shape());
        assert!(din.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn concat_splits_back() {
        let a = tensor_f64(2, 3, 3, |c, y, x| (c + y + x) as f64);
        let b = tensor_f64(1, 3, 3, |_, y, x| (y * x) as f64 + 100.0);
        let cat = concat2(&a, &b);
        assert_eq!(cat.shape(), (3, 3, 3));
        let (da, db) = concat2_backward(&cat, 2);
        assert_eq!(da.data(), a.data());
        assert_eq!(db.data(), b.data());
    }
}
