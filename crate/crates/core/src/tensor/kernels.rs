// Copyright 2026 The gancomp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Convolution and normalization kernels on raw buffers.
//!
//! Every output element of a convolution is accumulated from zero in
//! `(input channel, ky, kx)` order with the bias added last, so results are
//! reproducible bit for bit against a plain nested-loop evaluation.

use super::Element;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub hout: usize,
    pub wout: usize,
}

impl ConvGeom {
    /// Validates a forward convolution of `input` `[N,Cin,H,W]` with `weight`
    /// `[Cout,Cin/g,Kh,Kw]`.
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input must be rank 4, got {input:?}"),
            ));
        }
        if weight.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("weight must be rank 4, got {weight:?}"),
            ));
        }
        if stride == 0 || groups == 0 {
            return Err(Error::shape("conv2d", "stride and groups must be positive"));
        }
        let [n, cin, h, w] = [input[0], input[1], input[2], input[3]];
        let [cout, cin_g, kh, kw] = [weight[0], weight[1], weight[2], weight[3]];
        if cin % groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {cin} not divisible by groups {groups}"),
            ));
        }
        if cout % groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("output channels {cout} not divisible by groups {groups}"),
            ));
        }
        if cin / groups != cin_g {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weight input-channel dim is {cin_g}, expected {} (input channels {cin} / groups {groups})",
                    cin / groups
                ),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
            ));
        }
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            groups,
            hout: (h + 2 * pad - kh) / stride + 1,
            wout: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.hout, self.wout]
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    /// Range of output columns `ox` whose input column `ox*stride + kx - pad`
    /// is inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        valid_range(self.wout, self.w, self.stride, kx, self.pad)
    }

    fn valid_rows(&self, ky: usize) -> (usize, usize) {
        valid_range(self.hout, self.h, self.stride, ky, self.pad)
    }
}

fn valid_range(out: usize, inp: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    // o*stride + k - pad in [0, inp)
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if inp + pad > k {
        ((inp + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Forward cross-correlation. `out` must be zeroed and sized `geom.out_shape()`.
pub fn conv2d_forward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let (hw_in, hw_out) = (g.h * g.w, g.hout * g.wout);
    for n in 0..g.n {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let o = &mut out[(n * g.cout + co) * hw_out..][..hw_out];
            for cig in 0..cin_g {
                let ci = grp * cin_g + cig;
                let xin = &x[(n * g.cin + ci) * hw_in..][..hw_in];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid_rows(ky);
                    for kx in 0..g.kw {
                        let wv = weight[((co * cin_g + cig) * g.kh + ky) * g.kw + kx];
                        let (ox0, ox1) = g.valid_cols(kx);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let orow = &mut o[oy * g.wout..][ox0..ox1];
                            let xrow = &xin[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let ix0 = ox0 + kx - g.pad;
                                let xs = &xrow[ix0..ix0 + (ox1 - ox0)];
                                for (ov, &xv) in orow.iter_mut().zip(xs) {
                                    *ov += wv * xv;
                                }
                            } else {
                                for (j, ov) in orow.iter_mut().enumerate() {
                                    let ix = (ox0 + j) * g.stride + kx - g.pad;
                                    *ov += wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(b) = bias {
                let bv = b[co];
                o.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

/// Gradient of the forward convolution w.r.t. its input, accumulated into
/// `gx` (shaped like the input). This is also the forward pass of the
/// transposed convolution.
pub fn conv2d_backward_input<T: Element>(g: &ConvGeom, gy: &[T], weight: &[T], gx: &mut [T]) {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let (hw_in, hw_out) = (g.h * g.w, g.hout * g.wout);
    for n in 0..g.n {
        for ci in 0..g.cin {
            let grp = ci / cin_g;
            let cig = ci % cin_g;
            let gxin = &mut gx[(n * g.cin + ci) * hw_in..][..hw_in];
            for cog in 0..cout_g {
                let co = grp * cout_g + cog;
                let gyo = &gy[(n * g.cout + co) * hw_out..][..hw_out];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid_rows(ky);
                    for kx in 0..g.kw {
                        let wv = weight[((co * cin_g + cig) * g.kh + ky) * g.kw + kx];
                        let (ox0, ox1) = g.valid_cols(kx);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let grow = &gyo[oy * g.wout..][ox0..ox1];
                            let xrow = &mut gxin[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let ix0 = ox0 + kx - g.pad;
                                let xs = &mut xrow[ix0..ix0 + (ox1 - ox0)];
                                for (xv, &gv) in xs.iter_mut().zip(grow) {
                                    *xv += wv * gv;
                                }
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    let ix = (ox0 + j) * g.stride + kx - g.pad;
                                    xrow[ix] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the weight (and bias), accumulated into `gw` / `gb`.
pub fn conv2d_backward_weight<T: Element>(
    g: &ConvGeom,
    x: &[T],
    gy: &[T],
    gw: &mut [T],
    gb: Option<&mut [T]>,
) {
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let (hw_in, hw_out) = (g.h * g.w, g.hout * g.wout);
    for co in 0..g.cout {
        let grp = co / cout_g;
        for cig in 0..cin_g {
            let ci = grp * cin_g + cig;
            for ky in 0..g.kh {
                let (oy0, oy1) = g.valid_rows(ky);
                for kx in 0..g.kw {
                    let (ox0, ox1) = g.valid_cols(kx);
                    let mut acc = T::zero();
                    if ox0 < ox1 {
                        for n in 0..g.n {
                            let gyo = &gy[(n * g.cout + co) * hw_out..][..hw_out];
                            let xin = &x[(n * g.cin + ci) * hw_in..][..hw_in];
                            for oy in oy0..oy1 {
                                let iy = oy * g.stride + ky - g.pad;
                                let grow = &gyo[oy * g.wout..][ox0..ox1];
                                let xrow = &xin[iy * g.w..][..g.w];
                                if g.stride == 1 {
                                    let ix0 = ox0 + kx - g.pad;
                                    let xs = &xrow[ix0..ix0 + (ox1 - ox0)];
                                    acc += dot(grow, xs);
                                } else {
                                    for (j, &gv) in grow.iter().enumerate() {
                                        acc += gv * xrow[(ox0 + j) * g.stride + kx - g.pad];
                                    }
                                }
                            }
                        }
                    }
                    gw[((co * cin_g + cig) * g.kh + ky) * g.kw + kx] += acc;
                }
            }
        }
    }
    if let Some(gb) = gb {
        for co in 0..g.cout {
            let mut acc = T::zero();
            for n in 0..g.n {
                acc += gy[(n * g.cout + co) * hw_out..][..hw_out]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
            gb[co] += acc;
        }
    }
}

/// Four-lane dot product; fixed association order keeps results reproducible.
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            lanes[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for i in chunks * 4..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Geometry of the doubling transposed convolution (k=3, s=2, p=1,
/// output_padding=1) expressed as the stride-2 convolution it is the adjoint
/// of. `input` is `[N,Cin,H,W]`, `weight` is `[Cin, Cout/g, 3, 3]`.
pub fn transposed_geom(input: &[usize], weight: &[usize], groups: usize) -> Result<ConvGeom> {
    if input.len() != 4 || weight.len() != 4 {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("rank-4 input and weight required, got {input:?} and {weight:?}"),
        ));
    }
    if weight[2] != 3 || weight[3] != 3 {
        return Err(Error::Unsupported {
            op: "conv_transpose2d",
            detail: format!(
                "only 3x3 kernels with stride 2, padding 1, output padding 1 are supported, got {}x{}",
                weight[2], weight[3]
            ),
        });
    }
    if weight[0] != input[1] {
        return Err(Error::shape(
            "conv_transpose2d",
            format!(
                "weight dim 0 is {}, input has {} channels",
                weight[0], input[1]
            ),
        ));
    }
    let cout = weight[1] * groups;
    let conv_input = [input[0], cout, 2 * input[2], 2 * input[3]];
    let conv_weight = [weight[0], weight[1], 3, 3];
    let g = ConvGeom::new(&conv_input, &conv_weight, 2, 1, groups)
        .map_err(|e| relabel(e, "conv_transpose2d"))?;
    debug_assert_eq!((g.hout, g.wout), (input[2], input[3]));
    Ok(g)
}

fn relabel(e: Error, op: &'static str) -> Error {
    match e {
        Error::Shape { detail, .. } => Error::Shape { op, detail },
        other => other,
    }
}

/// Per-plane statistics saved by the instance-norm forward pass.
pub struct NormSaved<T> {
    pub inv_std: Vec<T>,
    pub xhat: Vec<T>,
}

pub fn instance_norm_forward<T: Element>(
    shape: &[usize],
    x: &[T],
    scale: &[T],
    shift: &[T],
    eps: T,
    out: &mut [T],
) -> NormSaved<T> {
    let (n, c) = (shape[0], shape[1]);
    let hw: usize = shape[2..].iter().product();
    let inv_hw = T::one() / T::lit(hw as f64);
    let mut inv_std = Vec::with_capacity(n * c);
    let mut xhat = vec![T::zero(); x.len()];
    for p in 0..n * c {
        let ch = p % c;
        let xs = &x[p * hw..][..hw];
        let mean = xs.iter().copied().sum::<T>() * inv_hw;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_hw;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        let xh = &mut xhat[p * hw..][..hw];
        let o = &mut out[p * hw..][..hw];
        for i in 0..hw {
            xh[i] = (xs[i] - mean) * is;
            o[i] = xh[i] * scale[ch] + shift[ch];
        }
    }
    NormSaved { inv_std, xhat }
}

/// Accumulates input, scale and shift gradients.
#[allow(clippy::too_many_arguments)]
pub fn instance_norm_backward<T: Element>(
    shape: &[usize],
    saved: &NormSaved<T>,
    scale: &[T],
    gy: &[T],
    gx: Option<&mut [T]>,
    gscale: Option<&mut [T]>,
    gshift: Option<&mut [T]>,
) {
    let (n, c) = (shape[0], shape[1]);
    let hw: usize = shape[2..].iter().product();
    let hw_t = T::lit(hw as f64);
    let mut gx = gx;
    let mut gscale = gscale;
    let mut gshift = gshift;
    for p in 0..n * c {
        let ch = p % c;
        let g = &gy[p * hw..][..hw];
        let xh = &saved.xhat[p * hw..][..hw];
        let sum_g: T = g.iter().copied().sum();
        let sum_gx: T = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        if let Some(gs) = gscale.as_deref_mut() {
            gs[ch] += sum_gx;
        }
        if let Some(gb) = gshift.as_deref_mut() {
            gb[ch] += sum_g;
        }
        if let Some(gx) = gx.as_deref_mut() {
            let k = scale[ch] * saved.inv_std[p] / hw_t;
            let dst = &mut gx[p * hw..][..hw];
            for i in 0..hw {
                dst[i] += k * (hw_t * g[i] - sum_g - xh[i] * sum_gx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bruteforce() {
        for out in 1..6 {
            for inp in 1..12 {
                for stride in 1..3 {
                    for k in 0..4 {
                        for pad in 0..4 {
                            let (lo, hi) = valid_range(out, inp, stride, k, pad);
                            for o in 0..out {
                                let pos = (o * stride + k) as isize - pad as isize;
                                let ok = pos >= 0 && pos < inp as isize;
                                assert_eq!(
                                    ok,
                                    o >= lo && o < hi,
                                    "{out} {inp} {stride} {k} {pad} {o}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn geometry_errors_name_the_dimension() {
        let e = ConvGeom::new(&[1, 3, 4, 4], &[4, 2, 3, 3], 1, 1, 1).unwrap_err();
        assert!(e.to_string().contains("input-channel"), "{e}");
        let e = ConvGeom::new(&[1, 3, 4, 4], &[4, 1, 3, 3], 1, 1, 2).unwrap_err();
        assert!(e.to_string().contains("not divisible"), "{e}");
    }

    #[test]
    fn transposed_rejects_other_kernels() {
        let e = transposed_geom(&[1, 2, 4, 4], &[2, 2, 4, 4], 1).unwrap_err();
        assert!(matches!(e, Error::Unsupported { .. }));
    }
}
