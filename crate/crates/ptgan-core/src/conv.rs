//! Convolution primitives: im2col + GEMM forward, and the two adjoints
//! (data and weight gradients).
//!
//! Fractionally-strided (transposed) convolution is expressed through the same
//! three routines with the roles of input and output swapped, so correctness
//! only has to be established once.

use crate::tensor::{Bchw, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PadMode {
    Zeros,
    Reflect,
}

/// Static geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }
}

/// Maps a possibly padded coordinate to a source coordinate, or None for a
/// zero pad. Reflection mirrors without repeating the border pixel and
/// requires pad < size.
fn resolve_coord(t: isize, size: usize, mode: PadMode) -> Option<usize> {
    let n = size as isize;
    if t >= 0 && t < n {
        return Some(t as usize);
    }
    match mode {
        PadMode::Zeros => None,
        PadMode::Reflect => {
            debug_assert!(t > -n && t < 2 * n - 1, "reflect pad larger than input");
            let r = if t < 0 { -t } else { 2 * (n - 1) - t };
            Some(r as usize)
        }
    }
}

/// Per-(output position, kernel offset) source pixel indices; usize::MAX
/// marks a zero pad. Layout matches the column buffer: row = (ki*k + kj),
/// column = (oy*ow + ox), giving `k*k` rows of `oh*ow` entries each. Channel
/// handling is done by the callers since the map is channel-independent.
fn build_patch_map(geom: &ConvGeom, h: usize, w: usize) -> (Vec<usize>, usize, usize) {
    let (oh, ow) = geom.out_size(h, w);
    let k = geom.kernel;
    let mut map = vec![usize::MAX; k * k * oh * ow];
    for ki in 0..k {
        for kj in 0..k {
            let row = ki * k + kj;
            for oy in 0..oh {
                let sy = (oy * geom.stride) as isize - geom.pad as isize + ki as isize;
                let ry = resolve_coord(sy, h, geom.pad_mode);
                for ox in 0..ow {
                    let sx = (ox * geom.stride) as isize - geom.pad as isize + kj as isize;
                    if let (Some(y), Some(x)) = (ry, resolve_coord(sx, w, geom.pad_mode)) {
                        map[row * (oh * ow) + oy * ow + ox] = y * w + x;
                    }
                }
            }
        }
    }
    (map, oh, ow)
}

/// Gathers one sample into a `[in_channels*k*k, oh*ow]` column buffer.
fn im2col(sample: &[f64], geom: &ConvGeom, h: usize, w: usize, map: &[usize], cols: &mut [f64]) {
    let k2 = geom.kernel * geom.kernel;
    let spatial = map.len() / k2;
    let plane = h * w;
    for c in 0..geom.in_channels {
        let src = &sample[c * plane..(c + 1) * plane];
        let dst = &mut cols[c * k2 * spatial..(c + 1) * k2 * spatial];
        for (d, &m) in dst.iter_mut().zip(map.iter()) {
            *d = if m == usize::MAX { 0.0 } else { src[m] };
        }
    }
}

/// Adjoint of `im2col`: scatter-accumulates a column buffer back onto the
/// input plane. Reflection padding accumulates into the mirrored pixels.
fn col2im(cols: &[f64], geom: &ConvGeom, h: usize, w: usize, map: &[usize], sample: &mut [f64]) {
    let k2 = geom.kernel * geom.kernel;
    let spatial = map.len() / k2;
    let plane = h * w;
    for c in 0..geom.in_channels {
        let dst = &mut sample[c * plane..(c + 1) * plane];
        let src = &cols[c * k2 * spatial..(c + 1) * k2 * spatial];
        for (s, &m) in src.iter().zip(map.iter()) {
            if m != usize::MAX {
                dst[m] += *s;
            }
        }
    }
}

/// Row-major C = alpha * A(m,k) * B(k,n) + beta * C. `trans_*` swaps the
/// logical strides, multiplying by the transpose without copying.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
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

/// y = conv(x, w) + b with `x: [B,Ci,H,W]`, `w: [Co,Ci,k,k]`, `b: [Co]`.
pub fn conv_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, geom: &ConvGeom) -> Tensor {
    let s = Bchw::of(x);
    debug_assert_eq!(s.channels, geom.in_channels);
    debug_assert_eq!(w.dims(), &[geom.out_channels, geom.in_channels, geom.kernel, geom.kernel]);
    let (map, oh, ow) = build_patch_map(geom, s.height, s.width);
    let ckk = geom.in_channels * geom.kernel * geom.kernel;
    let mut cols = vec![0.0; ckk * oh * ow];
    let mut y = Tensor::zeros(&[s.batch, geom.out_channels, oh, ow]);
    let in_stride = s.channels * s.height * s.width;
    let out_stride = geom.out_channels * oh * ow;
    for bi in 0..s.batch {
        im2col(
            &x.data()[bi * in_stride..(bi + 1) * in_stride],
            geom,
            s.height,
            s.width,
            &map,
            &mut cols,
        );
        let out = &mut y.data_mut()[bi * out_stride..(bi + 1) * out_stride];
        gemm(
            geom.out_channels,
            ckk,
            oh * ow,
            1.0,
            w.data(),
            false,
            &cols,
            false,
            0.0,
            out,
        );
        if let Some(bias) = b {
            for co in 0..geom.out_channels {
                let bv = bias.data()[co];
                for v in &mut out[co * oh * ow..(co + 1) * oh * ow] {
                    *v += bv;
                }
            }
        }
    }
    y
}

/// dx = conv_adjoint(dy, w): gradient of the convolution with respect to its
/// input, for an input of spatial size `(h, w)`.
pub fn conv_backward_data(dy: &Tensor, w: &Tensor, geom: &ConvGeom, h: usize, w_in: usize) -> Tensor {
    let s = Bchw::of(dy);
    debug_assert_eq!(s.channels, geom.out_channels);
    let (map, oh, ow) = build_patch_map(geom, h, w_in);
    debug_assert_eq!((oh, ow), (s.height, s.width));
    let ckk = geom.in_channels * geom.kernel * geom.kernel;
    let mut cols = vec![0.0; ckk * oh * ow];
    let mut dx = Tensor::zeros(&[s.batch, geom.in_channels, h, w_in]);
    let out_stride = geom.out_channels * oh * ow;
    let in_stride = geom.in_channels * h * w_in;
    for bi in 0..s.batch {
        // dcols = W^T * dy
        gemm(
            ckk,
            geom.out_channels,
            oh * ow,
            1.0,
            w.data(),
            true,
            &dy.data()[bi * out_stride..(bi + 1) * out_stride],
            false,
            0.0,
            &mut cols,
        );
        col2im(
            &cols,
            geom,
            h,
            w_in,
            &map,
            &mut dx.data_mut()[bi * in_stride..(bi + 1) * in_stride],
        );
    }
    dx
}

/// dw = conv gradient with respect to the kernel, accumulated over the batch.
pub fn conv_backward_weight(x: &Tensor, dy: &Tensor, geom: &ConvGeom) -> Tensor {
    let s = Bchw::of(x);
    let so = Bchw::of(dy);
    let (map, oh, ow) = build_patch_map(geom, s.height, s.width);
    debug_assert_eq!((oh, ow), (so.height, so.width));
    let ckk = geom.in_channels * geom.kernel * geom.kernel;
    let mut cols = vec![0.0; ckk * oh * ow];
    let mut dw = Tensor::zeros(&[geom.out_channels, geom.in_channels, geom.kernel, geom.kernel]);
    let in_stride = s.channels * s.height * s.width;
    let out_stride = geom.out_channels * oh * ow;
    for bi in 0..s.batch {
        im2col(
            &x.data()[bi * in_stride..(bi + 1) * in_stride],
            geom,
            s.height,
            s.width,
            &map,
            &mut cols,
        );
        // dW += dy * cols^T
        gemm(
            geom.out_channels,
            oh * ow,
            ckk,
            1.0,
            &dy.data()[bi * out_stride..(bi + 1) * out_stride],
            false,
            &cols,
            true,
            1.0,
            dw.data_mut(),
        );
    }
    dw
}

/// db = sum of dy over batch and spatial positions.
pub fn conv_backward_bias(dy: &Tensor) -> Tensor {
    let s = Bchw::of(dy);
    let mut db = Tensor::zeros(&[s.channels]);
    let plane = s.height * s.width;
    for bi in 0..s.batch {
        for c in 0..s.channels {
            let off = (bi * s.channels + c) * plane;
            db.data_mut()[c] += dy.data()[off..off + plane].iter().sum::<f64>();
        }
    }
    db
}
