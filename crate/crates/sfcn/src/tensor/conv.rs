//! Spatial operators: direct correlation, its transpose, and 2x2 max
//! pooling, with gradient rules for inputs, weights and biases.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Geometry of a (de)convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> ConvSpec {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: (kernel / 2, kernel / 2),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> ConvSpec {
        self.stride = (stride, stride);
        self
    }

    pub fn with_padding(mut self, padding: usize) -> ConvSpec {
        self.padding = (padding, padding);
        self
    }

    /// Output extents of the forward correlation for an input plane.
    pub fn out_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = (h as isize + 2 * self.padding.0 as isize - self.kernel.0 as isize)
            / self.stride.0 as isize
            + 1;
        let ow = (w as isize + 2 * self.padding.1 as isize - self.kernel.1 as isize)
            / self.stride.1 as isize
            + 1;
        if oh < 1 || ow < 1 {
            return Err(Error::EmptyOutput {
                op: "conv2d",
                height: oh,
                width: ow,
            });
        }
        Ok((oh as usize, ow as usize))
    }
}

struct Geometry {
    n: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl Geometry {
    fn from_spec(spec: &ConvSpec, n: usize, h: usize, w: usize) -> Result<Geometry> {
        let (oh, ow) = spec.out_extent(h, w)?;
        Ok(Geometry {
            n,
            ci: spec.in_channels,
            co: spec.out_channels,
            h,
            w,
            oh,
            ow,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.padding.0,
            pw: spec.padding.1,
        })
    }

    /// Valid output-column range for a kernel column: `iw = ow*sw + kw - pw`
    /// must land in `[0, w)`.
    fn col_range(&self, kw: usize) -> (usize, usize) {
        let lo = if kw < self.pw {
            (self.pw - kw).div_ceil(self.sw)
        } else {
            0
        };
        let hi = if self.w + self.pw > kw {
            (((self.w + self.pw - kw - 1) / self.sw) + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Per-row even/odd split: a row [a0 a1 a2 ...] becomes [a0 a2 .. | a1 a3 ..],
/// so stride-2 kernels can read contiguously.
fn deinterleave(x: &[f64], rows: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let len_e = w.div_ceil(2);
    for r in 0..rows {
        let src = &x[r * w..(r + 1) * w];
        let dst = &mut out[r * w..(r + 1) * w];
        for (t, v) in src.iter().step_by(2).enumerate() {
            dst[t] = *v;
        }
        for (t, v) in src.iter().skip(1).step_by(2).enumerate() {
            dst[len_e + t] = *v;
        }
    }
    out
}

/// Start offset of the even/odd section a stride-2 column tap lands in:
/// column `2*ow + c0` maps to slot `ow + off` of the `parity` section.
fn parity_split(c0: isize) -> (usize, isize) {
    let parity = c0.rem_euclid(2) as usize;
    (parity, (c0 - parity as isize) / 2)
}

/// y[b,o,oh,ow] = bias[o] + sum_{c,kh,kw} w[o,c,kh,kw] * x[b,c,oh*sh+kh-ph,ow*sw+kw-pw]
///
/// Output planes are fixed parallel chunks, each filled by one sequential
/// reduction, so results are bit-deterministic.
fn corr_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &Geometry) -> Vec<f64> {
    let plane = g.oh * g.ow;
    let mut y = vec![0.0; g.n * g.co * plane];
    // Stride-2 reads become contiguous on a deinterleaved copy.
    let x_de = (g.sw == 2).then(|| deinterleave(x, g.n * g.ci * g.h, g.w));
    let len_e = g.w.div_ceil(2);
    y.par_chunks_mut(plane).enumerate().for_each(|(bo, out)| {
        let b = bo / g.co;
        let o = bo % g.co;
        if let Some(bias) = bias {
            out.fill(bias[o]);
        }
        for c in 0..g.ci {
            let x_base = (b * g.ci + c) * g.h * g.w;
            for kh in 0..g.kh {
                for kw in 0..g.kw {
                    let wv = w[((o * g.ci + c) * g.kh + kh) * g.kw + kw];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo, hi) = g.col_range(kw);
                    if lo >= hi {
                        continue;
                    }
                    let c0 = kw as isize - g.pw as isize;
                    let (parity, off) = parity_split(c0);
                    for oh in 0..g.oh {
                        let ir = (oh * g.sh + kh) as isize - g.ph as isize;
                        if ir < 0 || ir >= g.h as isize {
                            continue;
                        }
                        let x_row = x_base + ir as usize * g.w;
                        let y_row = oh * g.ow;
                        let ys = &mut out[y_row + lo..y_row + hi];
                        if g.sw == 1 {
                            let x_off = (x_row + lo) as isize + c0;
                            let xs = &x[x_off as usize..x_off as usize + (hi - lo)];
                            for (yv, xv) in ys.iter_mut().zip(xs) {
                                *yv += wv * xv;
                            }
                        } else if let Some(x_de) = x_de.as_deref() {
                            let sec = x_row + if parity == 1 { len_e } else { 0 };
                            let start = (sec + lo) as isize + off;
                            let xs = &x_de[start as usize..start as usize + (hi - lo)];
                            for (yv, xv) in ys.iter_mut().zip(xs) {
                                *yv += wv * xv;
                            }
                        } else {
                            for (t, yv) in ys.iter_mut().enumerate() {
                                let iw = ((lo + t) * g.sw + kw) as isize - g.pw as isize;
                                *yv += wv * x[x_row + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    y
}

/// Adjoint of `corr_forward` in x: scatters dy back through the same taps.
/// Parallel over input planes (disjoint write regions). The stride-2 case
/// accumulates each row into even/odd buffers so the inner loops stay
/// contiguous, then interleaves once.
fn corr_input_grad(dy: &[f64], w: &[f64], g: &Geometry) -> Vec<f64> {
    let in_plane = g.h * g.w;
    let mut dx = vec![0.0; g.n * g.ci * in_plane];
    let len_e = g.w.div_ceil(2);
    dx.par_chunks_mut(in_plane).enumerate().for_each(|(bc, dxp)| {
        let b = bc / g.ci;
        let c = bc % g.ci;
        if g.sh == 2 && g.sw == 2 {
            let mut even = vec![0.0; len_e];
            let mut odd = vec![0.0; g.w / 2];
            for ir in 0..g.h {
                even.fill(0.0);
                odd.fill(0.0);
                let mut touched = false;
                for o in 0..g.co {
                    let y_base = (b * g.co + o) * g.oh * g.ow;
                    for kh in 0..g.kh {
                        // ir = 2*oh + kh - ph must resolve to a valid row.
                        let num = ir as isize + g.ph as isize - kh as isize;
                        if num < 0 || num % 2 != 0 {
                            continue;
                        }
                        let oh = (num / 2) as usize;
                        if oh >= g.oh {
                            continue;
                        }
                        let y_row = y_base + oh * g.ow;
                        for kw in 0..g.kw {
                            let wv = w[((o * g.ci + c) * g.kh + kh) * g.kw + kw];
                            if wv == 0.0 {
                                continue;
                            }
                            let (lo, hi) = g.col_range(kw);
                            if lo >= hi {
                                continue;
                            }
                            let (parity, off) = parity_split(kw as isize - g.pw as isize);
                            let buf = if parity == 1 { &mut odd } else { &mut even };
                            let start = (lo as isize + off) as usize;
                            let ys = &dy[y_row + lo..y_row + hi];
                            for (bv, yv) in buf[start..start + (hi - lo)].iter_mut().zip(ys) {
                                *bv += wv * yv;
                            }
                            touched = true;
                        }
                    }
                }
                if touched {
                    let row = &mut dxp[ir * g.w..(ir + 1) * g.w];
                    for (t, v) in even.iter().enumerate() {
                        row[2 * t] = *v;
                    }
                    for (t, v) in odd.iter().enumerate() {
                        row[2 * t + 1] = *v;
                    }
                }
            }
            return;
        }
        for o in 0..g.co {
            let y_base = (b * g.co + o) * g.oh * g.ow;
            for kh in 0..g.kh {
                for kw in 0..g.kw {
                    let wv = w[((o * g.ci + c) * g.kh + kh) * g.kw + kw];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo, hi) = g.col_range(kw);
                    if lo >= hi {
                        continue;
                    }
                    for oh in 0..g.oh {
                        let ir = (oh * g.sh + kh) as isize - g.ph as isize;
                        if ir < 0 || ir >= g.h as isize {
                            continue;
                        }
                        let x_row = ir as usize * g.w;
                        let y_row = y_base + oh * g.ow;
                        if g.sw == 1 {
                            let x_off = (x_row + lo + kw) as isize - g.pw as isize;
                            let xs = &mut dxp[x_off as usize..x_off as usize + (hi - lo)];
                            let ys = &dy[y_row + lo..y_row + hi];
                            for (xv, yv) in xs.iter_mut().zip(ys) {
                                *xv += wv * yv;
                            }
                        } else {
                            for ow in lo..hi {
                                let iw = (ow * g.sw + kw) as isize - g.pw as isize;
                                dxp[x_row + iw as usize] += wv * dy[y_row + ow];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

/// dw[o,c,kh,kw] = sum_{b,oh,ow} dy[b,o,oh,ow] * x[b,c,oh*sh+kh-ph,ow*sw+kw-pw]
/// Parallel over (o, c) kernel slices.
fn corr_weight_grad(x: &[f64], dy: &[f64], g: &Geometry) -> Vec<f64> {
    let mut dw = vec![0.0; g.co * g.ci * g.kh * g.kw];
    let x_de = (g.sw == 2).then(|| deinterleave(x, g.n * g.ci * g.h, g.w));
    let len_e = g.w.div_ceil(2);
    dw.par_chunks_mut(g.kh * g.kw)
        .enumerate()
        .for_each(|(oc, slice)| {
            let o = oc / g.ci;
            let c = oc % g.ci;
            for kh in 0..g.kh {
                for kw in 0..g.kw {
                    let (lo, hi) = g.col_range(kw);
                    if lo >= hi {
                        continue;
                    }
                    let c0 = kw as isize - g.pw as isize;
                    let (parity, off) = parity_split(c0);
                    let mut acc = 0.0;
                    for b in 0..g.n {
                        let x_base = (b * g.ci + c) * g.h * g.w;
                        let y_base = (b * g.co + o) * g.oh * g.ow;
                        for oh in 0..g.oh {
                            let ir = (oh * g.sh + kh) as isize - g.ph as isize;
                            if ir < 0 || ir >= g.h as isize {
                                continue;
                            }
                            let x_row = x_base + ir as usize * g.w;
                            let y_row = y_base + oh * g.ow;
                            let ys = &dy[y_row + lo..y_row + hi];
                            if g.sw == 1 {
                                let x_off = (x_row + lo) as isize + c0;
                                let xs = &x[x_off as usize..x_off as usize + (hi - lo)];
                                for (xv, yv) in xs.iter().zip(ys) {
                                    acc += xv * yv;
                                }
                            } else if let Some(x_de) = x_de.as_deref() {
                                let sec = x_row + if parity == 1 { len_e } else { 0 };
                                let start = (sec + lo) as isize + off;
                                let xs = &x_de[start as usize..start as usize + (hi - lo)];
                                for (xv, yv) in xs.iter().zip(ys) {
                                    acc += xv * yv;
                                }
                            } else {
                                for (t, yv) in ys.iter().enumerate() {
                                    let iw = ((lo + t) * g.sw + kw) as isize - g.pw as isize;
                                    acc += x[x_row + iw as usize] * yv;
                                }
                            }
                        }
                    }
                    slice[kh * g.kw + kw] = acc;
                }
            }
        });
    dw
}

fn check_image(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::Rank {
            op,
            expected: 4,
            got: s.len(),
        });
    }
    Ok((s[0], s[1], s[2], s[3]))
}

/// 2-D correlation (no kernel flip) with zero padding.
///
/// `weights` is laid out `(out, in, kh, kw)`; `bias` has one value per
/// output channel.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (n, c, h, w) = check_image("conv2d", input)?;
    if c != spec.in_channels {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            what: "input",
            expected: spec.in_channels,
            got: c,
        });
    }
    let want_w = [
        spec.out_channels,
        spec.in_channels,
        spec.kernel.0,
        spec.kernel.1,
    ];
    if weights.shape() != want_w {
        return Err(Error::ShapeMismatch {
            op: "conv2d weights",
            left: want_w.to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: vec![spec.out_channels],
            right: bias.shape().to_vec(),
        });
    }
    let g = Geometry::from_spec(spec, n, h, w)?;
    let y = corr_forward(input.data(), weights.data(), Some(bias.data()), &g);
    let shape = vec![n, spec.out_channels, g.oh, g.ow];
    let spec = *spec;
    Ok(Tensor::from_op(
        shape,
        y,
        vec![input.clone(), weights.clone(), bias.clone()],
        Box::new(move |args| {
            let x = &args.parents[0];
            let w_t = &args.parents[1];
            let b_t = &args.parents[2];
            let g = Geometry::from_spec(&spec, x.shape()[0], x.shape()[2], x.shape()[3]).unwrap();
            let dx = x
                .is_taped()
                .then(|| corr_input_grad(args.cotangent, w_t.data(), &g));
            let dw = w_t
                .is_taped()
                .then(|| corr_weight_grad(x.data(), args.cotangent, &g));
            let db = b_t.is_taped().then(|| {
                let plane = g.oh * g.ow;
                let mut db = vec![0.0; g.co];
                for b in 0..g.n {
                    for (o, acc) in db.iter_mut().enumerate() {
                        let start = (b * g.co + o) * plane;
                        *acc += args.cotangent[start..start + plane].iter().sum::<f64>();
                    }
                }
                db
            });
            vec![dx, dw, db]
        }),
    ))
}

/// Transposed convolution doubling the spatial resolution.
///
/// `weights` is laid out `(in, out, kh, kw)`. Only exact-doubling
/// configurations are accepted (stride 2 with `kernel = 2*padding + 2`);
/// the operator is the adjoint of `conv2d` under the same spec.
pub fn deconv2d(input: &Tensor, weights: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (n, c, h, w) = check_image("deconv2d", input)?;
    if c != spec.in_channels {
        return Err(Error::ChannelMismatch {
            op: "deconv2d",
            what: "input",
            expected: spec.in_channels,
            got: c,
        });
    }
    let want_w = [
        spec.in_channels,
        spec.out_channels,
        spec.kernel.0,
        spec.kernel.1,
    ];
    if weights.shape() != want_w {
        return Err(Error::ShapeMismatch {
            op: "deconv2d weights",
            left: want_w.to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    // (h-1)*s - 2p + k == 2h  <=>  s == 2 and k == 2p + 2.
    let doubles = spec.stride == (2, 2)
        && spec.kernel.0 == 2 * spec.padding.0 + 2
        && spec.kernel.1 == 2 * spec.padding.1 + 2;
    if !doubles {
        return Err(Error::NoDoubling {
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
        });
    }
    // The transposed pass runs the correlation geometry backwards: the
    // deconv *output* plays the role of the correlation input.
    let (out_h, out_w) = (2 * h, 2 * w);
    let adj = ConvSpec {
        in_channels: spec.out_channels,
        out_channels: spec.in_channels,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
    };
    let g = Geometry::from_spec(&adj, n, out_h, out_w)?;
    debug_assert_eq!((g.oh, g.ow), (h, w));
    let y = corr_input_grad(input.data(), weights.data(), &g);
    let shape = vec![n, spec.out_channels, out_h, out_w];
    let spec = *spec;
    Ok(Tensor::from_op(
        shape,
        y,
        vec![input.clone(), weights.clone()],
        Box::new(move |args| {
            let x = &args.parents[0];
            let w_t = &args.parents[1];
            let (n, _, h, w) = (
                x.shape()[0],
                x.shape()[1],
                x.shape()[2],
                x.shape()[3],
            );
            let adj = ConvSpec {
                in_channels: spec.out_channels,
                out_channels: spec.in_channels,
                kernel: spec.kernel,
                stride: spec.stride,
                padding: spec.padding,
            };
            let g = Geometry::from_spec(&adj, n, 2 * h, 2 * w).unwrap();
            let dx = x
                .is_taped()
                .then(|| corr_forward(args.cotangent, w_t.data(), None, &g));
            let dw = w_t
                .is_taped()
                .then(|| corr_weight_grad(args.cotangent, x.data(), &g));
            vec![dx, dw]
        }),
    ))
}

/// 2x2 max pooling with stride 2. Gradient routes to the argmax cell; ties
/// go to the first maximal cell in row-major order.
pub fn maxpool2d(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = check_image("maxpool2d", input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatial {
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut y = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0u32; n * c * oh * ow];
    for bc in 0..n * c {
        let x_base = bc * h * w;
        let y_base = bc * oh * ow;
        for r in 0..oh {
            for col in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                // Row-major scan keeps the first maximal cell on ties.
                for dr in 0..2 {
                    for dc in 0..2 {
                        let idx = x_base + (2 * r + dr) * w + 2 * col + dc;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                y[y_base + r * ow + col] = best;
                argmax[y_base + r * ow + col] = best_idx as u32;
            }
        }
    }
    let in_len = x.len();
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        y,
        vec![input.clone()],
        Box::new(move |args| {
            let mut dx = vec![0.0; in_len];
            for (c, idx) in args.cotangent.iter().zip(&argmax) {
                dx[*idx as usize] += c;
            }
            vec![Some(dx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, ops};

    /// Brute-force correlation oracle: independent nested loops.
    pub(crate) fn conv_oracle(
        x: &[f64],
        w: &[f64],
        bias: &[f64],
        (n, ci, h, wd): (usize, usize, usize, usize),
        (co, kh, kw): (usize, usize, usize),
        (sh, sw): (usize, usize),
        (ph, pw): (usize, usize),
    ) -> Vec<f64> {
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (wd + 2 * pw - kw) / sw + 1;
        let mut y = vec![0.0; n * co * oh * ow];
        for b in 0..n {
            for o in 0..co {
                for r in 0..oh {
                    for cl in 0..ow {
                        let mut acc = bias[o];
                        for c in 0..ci {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let ir = (r * sh + i) as isize - ph as isize;
                                    let ic = (cl * sw + j) as isize - pw as isize;
                                    if ir >= 0
                                        && ir < h as isize
                                        && ic >= 0
                                        && ic < wd as isize
                                    {
                                        acc += w[((o * ci + c) * kh + i) * kw + j]
                                            * x[((b * ci + c) * h + ir as usize) * wd
                                                + ic as usize];
                                    }
                                }
                            }
                        }
                        y[((b * co + o) * oh + r) * ow + cl] = acc;
                    }
                }
            }
        }
        y
    }

    fn rng_data(n: usize, seed: u64) -> Vec<f64> {
        // Small deterministic pseudo-random values.
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        (0..n)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::new(&[1, 1, 3, 3], rng_data(9, 1)).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        let spec = ConvSpec::new(1, 1, 1).with_padding(0);
        let y = conv2d(&x, &w, &b, &spec).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_on_constant_input_counts_window_overlap() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        let y = conv2d(&x, &w, &b, &ConvSpec::new(1, 1, 3)).unwrap();
        let d = y.data();
        assert_eq!(d[4], 9.0); // center
        for corner in [0, 2, 6, 8] {
            assert_eq!(d[corner], 4.0);
        }
        for edge in [1, 3, 5, 7] {
            assert_eq!(d[edge], 6.0);
        }
    }

    #[test]
    fn zero_weights_give_constant_bias_output() {
        let x = Tensor::new(&[1, 2, 4, 4], rng_data(32, 2)).unwrap();
        let w = Tensor::zeros(&[3, 2, 3, 3]);
        let b = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv2d(&x, &w, &b, &ConvSpec::new(2, 3, 3)).unwrap();
        for o in 0..3 {
            for v in &y.data()[o * 16..(o + 1) * 16] {
                assert_eq!(*v, b.data()[o]);
            }
        }
    }

    #[test]
    fn conv_matches_brute_force_oracle_across_specs() {
        for (seed, (ci, co, h, wd, k, s, p)) in [
            (3u64, (2, 3, 5, 7, 3, 1, 1)),
            (4, (3, 2, 6, 6, 3, 2, 1)),
            (5, (1, 4, 8, 5, 1, 1, 0)),
            (6, (2, 2, 6, 6, 4, 2, 1)),
        ] {
            let n = 2;
            let x = rng_data(n * ci * h * wd, seed * 11 + 17);
            let w = rng_data(co * ci * k * k, seed * 13 + 19);
            let b = rng_data(co, seed * 7 + 23);
            let xt = Tensor::new(&[n, ci, h, wd], x.clone()).unwrap();
            let wt = Tensor::new(&[co, ci, k, k], w.clone()).unwrap();
            let bt = Tensor::new(&[co], b.clone()).unwrap();
            let spec = ConvSpec::new(ci, co, k).with_stride(s).with_padding(p);
            let y = conv2d(&xt, &wt, &bt, &spec).unwrap();
            let want = conv_oracle(
                &x,
                &w,
                &b,
                (n, ci, h, wd),
                (co, k, k),
                (s, s),
                (p, p),
            );
            for (a, e) in y.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "seed {seed}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        let b = Tensor::zeros(&[2]);
        let err = conv2d(&x, &w, &b, &ConvSpec::new(2, 2, 3)).unwrap_err();
        assert!(matches!(
            err,
            Error::ChannelMismatch {
                expected: 2,
                got: 3,
                ..
            }
        ));
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2d(&x).unwrap().data(), &[4.0]);

        let c = Tensor::full(&[1, 1, 4, 4], 2.5);
        let y = maxpool2d(&c).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|v| *v == 2.5));

        let ramp = Tensor::new(&[1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        assert_eq!(maxpool2d(&ramp).unwrap().data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn maxpool_rejects_odd_extent() {
        let x = Tensor::zeros(&[1, 1, 3, 4]);
        assert!(matches!(
            maxpool2d(&x),
            Err(Error::OddSpatial {
                height: 3,
                width: 4
            })
        ));
    }

    #[test]
    fn maxpool_ties_route_to_first_row_major_cell() {
        let x = Tensor::param(&[1, 1, 2, 2], vec![7.0, 7.0, 7.0, 7.0]).unwrap();
        let y = maxpool2d(&x).unwrap();
        let loss = ops::sum(&y);
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn deconv_replicates_single_pixel_through_surviving_window() {
        let x = Tensor::new(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::full(&[1, 1, 4, 4], 1.0);
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (4, 4),
            stride: (2, 2),
            padding: (1, 1),
        };
        let y = deconv2d(&x, &w, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn deconv_zero_input_gives_zero_output() {
        let x = Tensor::zeros(&[1, 2, 3, 3]);
        let w = Tensor::new(&[2, 3, 4, 4], rng_data(96, 8)).unwrap();
        let spec = ConvSpec {
            in_channels: 2,
            out_channels: 3,
            kernel: (4, 4),
            stride: (2, 2),
            padding: (1, 1),
        };
        let y = deconv2d(&x, &w, &spec).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn deconv_rejects_non_doubling_spec() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (3, 3),
            stride: (1, 1),
            padding: (1, 1),
        };
        assert!(matches!(
            deconv2d(&x, &w, &spec),
            Err(Error::NoDoubling { .. })
        ));
    }

    #[test]
    fn conv_and_deconv_are_adjoint() {
        // <conv(x), y> == <x, deconv(y)> with shared weights.
        let (n, ci, co, h, wd) = (2, 3, 2, 6, 4);
        let spec = ConvSpec {
            in_channels: ci,
            out_channels: co,
            kernel: (4, 4),
            stride: (2, 2),
            padding: (1, 1),
        };
        let x = rng_data(n * ci * h * wd, 31);
        let w = rng_data(co * ci * 16, 32);
        let y = rng_data(n * co * (h / 2) * (wd / 2), 33);
        let xt = Tensor::new(&[n, ci, h, wd], x.clone()).unwrap();
        let wt = Tensor::new(&[co, ci, 4, 4], w.clone()).unwrap();
        let bt = Tensor::zeros(&[co]);
        let yt = Tensor::new(&[n, co, h / 2, wd / 2], y.clone()).unwrap();

        let cx = conv2d(&xt, &wt, &bt, &spec).unwrap();
        // Same weight memory viewed in deconv layout (in=co, out=ci).
        let wd_t = Tensor::new(&[co, ci, 4, 4], w.clone()).unwrap();
        let dspec = ConvSpec {
            in_channels: co,
            out_channels: ci,
            kernel: (4, 4),
            stride: (2, 2),
            padding: (1, 1),
        };
        let dy = deconv2d(&yt, &wd_t, &dspec).unwrap();

        let lhs: f64 = cx.data().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = dy.data().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() / lhs.abs().max(1.0) < 1e-10,
            "adjoint identity violated: {lhs} vs {rhs}"
        );
    }
}
