//! Direct 2D convolution, mask-renormalized partial convolution and
//! depth-to-space. Layout is `[N, C, H, W]`; kernels are `[O, C, k, k]`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::par;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims(op: &'static str, xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Result<ConvDims> {
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || stride == 0 {
        return Err(Error::shape(op, alloc::format!("input {xs:?}, kernel {ws:?}, stride {stride}")));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (ws[0], ws[2]);
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::shape(op, alloc::format!("kernel {k} larger than padded input {h}x{w}")));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    Ok(ConvDims { n, c, h, w, o, k, stride, pad, ho, wo })
}

/// Input coordinate for output index `out` and kernel tap `tap`, if in range.
#[inline]
fn src(out: usize, tap: usize, d: &ConvDims, size: usize) -> Option<usize> {
    let p = (out * d.stride + tap) as isize - d.pad as isize;
    (p >= 0 && (p as usize) < size).then_some(p as usize)
}

fn conv_forward(x: &[f32], wt: &[f32], d: &ConvDims) -> Vec<f32> {
    let plane = d.ho * d.wo;
    let mut out = vec![0.0f32; d.n * d.o * plane];
    par::for_each_chunk_mut(&mut out, plane, |idx, dst| {
        let (n, o) = (idx / d.o, idx % d.o);
        let mut acc = vec![0.0f64; plane];
        for c in 0..d.c {
            let xin = &x[(n * d.c + c) * d.h * d.w..(n * d.c + c + 1) * d.h * d.w];
            for i in 0..d.k {
                for j in 0..d.k {
                    let wv = wt[((o * d.c + c) * d.k + i) * d.k + j] as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..d.ho {
                        let Some(sy) = src(y, i, d, d.h) else { continue };
                        let row = &xin[sy * d.w..(sy + 1) * d.w];
                        let arow = &mut acc[y * d.wo..(y + 1) * d.wo];
                        for (xo, a) in arow.iter_mut().enumerate() {
                            if let Some(sx) = src(xo, j, d, d.w) {
                                *a += wv * row[sx] as f64;
                            }
                        }
                    }
                }
            }
        }
        for (o, a) in dst.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    out
}

fn conv_backward_input(g: &[f32], wt: &[f32], d: &ConvDims) -> Vec<f32> {
    let plane = d.h * d.w;
    let mut gx = vec![0.0f32; d.n * d.c * plane];
    par::for_each_chunk_mut(&mut gx, plane, |idx, dst| {
        let (n, c) = (idx / d.c, idx % d.c);
        let mut acc = vec![0.0f64; plane];
        for o in 0..d.o {
            let gp = &g[(n * d.o + o) * d.ho * d.wo..(n * d.o + o + 1) * d.ho * d.wo];
            for i in 0..d.k {
                for j in 0..d.k {
                    let wv = wt[((o * d.c + c) * d.k + i) * d.k + j] as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..d.ho {
                        let Some(sy) = src(y, i, d, d.h) else { continue };
                        for xo in 0..d.wo {
                            if let Some(sx) = src(xo, j, d, d.w) {
                                acc[sy * d.w + sx] += wv * gp[y * d.wo + xo] as f64;
                            }
                        }
                    }
                }
            }
        }
        for (o, a) in dst.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    gx
}

fn conv_backward_weight(g: &[f32], x: &[f32], d: &ConvDims) -> Vec<f32> {
    let per_o = d.c * d.k * d.k;
    let mut gw = vec![0.0f32; d.o * per_o];
    par::for_each_chunk_mut(&mut gw, per_o, |o, dst| {
        for c in 0..d.c {
            for i in 0..d.k {
                for j in 0..d.k {
                    let mut acc = 0.0f64;
                    for n in 0..d.n {
                        let gp = &g[(n * d.o + o) * d.ho * d.wo..];
                        let xin = &x[(n * d.c + c) * d.h * d.w..];
                        for y in 0..d.ho {
                            let Some(sy) = src(y, i, d, d.h) else { continue };
                            for xo in 0..d.wo {
                                if let Some(sx) = src(xo, j, d, d.w) {
                                    acc += gp[y * d.wo + xo] as f64 * xin[sy * d.w + sx] as f64;
                                }
                            }
                        }
                    }
                    dst[(c * d.k + i) * d.k + j] = acc as f32;
                }
            }
        }
    });
    gw
}

fn bias_grad(g: &[f32], d: &ConvDims, valid: Option<&[f32]>) -> Vec<f32> {
    let plane = d.ho * d.wo;
    let mut gb = vec![0.0f64; d.o];
    for n in 0..d.n {
        for (o, acc) in gb.iter_mut().enumerate() {
            let gp = &g[(n * d.o + o) * plane..(n * d.o + o + 1) * plane];
            match valid {
                Some(m) => {
                    let mp = &m[n * plane..(n + 1) * plane];
                    *acc += gp.iter().zip(mp).map(|(a, b)| (*a * *b) as f64).sum::<f64>();
                }
                None => *acc += gp.iter().map(|v| *v as f64).sum::<f64>(),
            }
        }
    }
    gb.into_iter().map(|v| v as f32).collect()
}

/// Output of [`Graph::partial_conv2d`]: the features and the updated mask.
pub struct PartialConvOut {
    pub value: Var,
    /// `[N, 1, Ho, Wo]` binary mask, 1 where any valid input was covered.
    pub mask: Vec<f32>,
}

impl Graph {
    /// Zero-padded 2D convolution.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let d = conv_dims("conv2d", self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = b {
            if self.value(b).len() != d.o {
                return Err(Error::shape("conv2d", alloc::format!("bias {:?} for {} outputs", self.shape(b), d.o)));
            }
        }
        let mut out = conv_forward(self.data(x), self.data(w), &d);
        if let Some(b) = b {
            let bd = self.data(b);
            let plane = d.ho * d.wo;
            for (i, chunk) in out.chunks_mut(plane).enumerate() {
                let bv = bd[i % d.o];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let t = Tensor::new(&[d.n, d.o, d.ho, d.wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            t,
            &inputs,
            Box::new(move |gr, g, need| {
                let mut res = vec![
                    need[0].then(|| conv_backward_input(g, gr.data(w), &d)),
                    need[1].then(|| conv_backward_weight(g, gr.data(x), &d)),
                ];
                if need.len() > 2 {
                    res.push(need[2].then(|| bias_grad(g, &d, None)));
                }
                res
            }),
        ))
    }

    /// Partial convolution: the kernel sees only valid inputs (`mask` is a
    /// constant `[N, 1, H, W]` 0/1 raster), the response is rescaled by
    /// `in_bounds_taps / valid_taps`, and positions with no valid tap output
    /// zero with mask 0. Padding taps are out of bounds, not invalid, so an
    /// all-ones mask reproduces [`Graph::conv2d`] exactly.
    pub fn partial_conv2d(
        &mut self,
        x: Var,
        mask: &[f32],
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<PartialConvOut> {
        let d = conv_dims("partial_conv2d", self.shape(x), self.shape(w), stride, pad)?;
        if mask.len() != d.n * d.h * d.w {
            return Err(Error::shape(
                "partial_conv2d",
                alloc::format!("mask has {} values for input {:?}", mask.len(), self.shape(x)),
            ));
        }
        // per-output coverage ratio and new mask
        let plane = d.ho * d.wo;
        let mut ratio = vec![0.0f32; d.n * plane];
        let mut new_mask = vec![0.0f32; d.n * plane];
        for n in 0..d.n {
            let m = &mask[n * d.h * d.w..(n + 1) * d.h * d.w];
            for y in 0..d.ho {
                for xo in 0..d.wo {
                    let (mut tot, mut cov) = (0.0f32, 0.0f32);
                    for i in 0..d.k {
                        let Some(sy) = src(y, i, &d, d.h) else { continue };
                        for j in 0..d.k {
                            let Some(sx) = src(xo, j, &d, d.w) else { continue };
                            tot += 1.0;
                            cov += m[sy * d.w + sx];
                        }
                    }
                    if cov > 0.0 {
                        ratio[n * plane + y * d.wo + xo] = tot / cov;
                        new_mask[n * plane + y * d.wo + xo] = 1.0;
                    }
                }
            }
        }
        let hw = d.h * d.w;
        let xm: Vec<f32> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * mask[(i / (d.c * hw)) * hw + i % hw])
            .collect();
        let mut out = conv_forward(&xm, self.data(w), &d);
        let bd = b.map(|b| self.data(b).to_vec());
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let (n, o) = (i / d.o, i % d.o);
            let r = &ratio[n * plane..(n + 1) * plane];
            let bv = bd.as_ref().map_or(0.0, |b| b[o]);
            for (v, (rv, mv)) in chunk.iter_mut().zip(r.iter().zip(&new_mask[n * plane..])) {
                *v = *v * rv + bv * mv;
            }
        }
        let t = Tensor::new(&[d.n, d.o, d.ho, d.wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let in_mask = mask.to_vec();
        let valid = new_mask.clone();
        let value = self.push(
            t,
            &inputs,
            Box::new(move |gr, g, need| {
                let gs: Vec<f32> = g
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let n = i / (d.o * plane);
                        v * ratio[n * plane + i % plane]
                    })
                    .collect();
                let gx = need[0].then(|| {
                    let mut gx = conv_backward_input(&gs, gr.data(w), &d);
                    for (i, v) in gx.iter_mut().enumerate() {
                        *v *= in_mask[(i / (d.c * hw)) * hw + i % hw];
                    }
                    gx
                });
                let gw = need[1].then(|| {
                    let xm: Vec<f32> = gr
                        .data(x)
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v * in_mask[(i / (d.c * hw)) * hw + i % hw])
                        .collect();
                    conv_backward_weight(&gs, &xm, &d)
                });
                let mut res = vec![gx, gw];
                if need.len() > 2 {
                    res.push(need[2].then(|| bias_grad(g, &d, Some(&valid))));
                }
                res
            }),
        );
        Ok(PartialConvOut { value, mask: new_mask })
    }

    /// `[N, C·r², H, W] → [N, C, H·r, W·r]` (pixel-shuffle ordering).
    pub fn depth_to_space(&mut self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || r == 0 || s[1] % (r * r) != 0 {
            return Err(Error::shape("depth_to_space", alloc::format!("{s:?} with factor {r}")));
        }
        let (n, cin, h, w) = (s[0], s[1], s[2], s[3]);
        let c = cin / (r * r);
        let (ho, wo) = (h * r, w * r);
        // out index -> in index
        let mut map = vec![0usize; n * c * ho * wo];
        for nn in 0..n {
            for cc in 0..c {
                for y in 0..ho {
                    for xx in 0..wo {
                        let (i, j) = (y % r, xx % r);
                        let ci = cc * r * r + i * r + j;
                        map[((nn * c + cc) * ho + y) * wo + xx] =
                            ((nn * cin + ci) * h + y / r) * w + xx / r;
                    }
                }
            }
        }
        let xd = self.data(x);
        let out: Vec<f32> = map.iter().map(|&i| xd[i]).collect();
        let t = Tensor::new(&[n, c, ho, wo], out)?;
        let len = xd.len();
        Ok(self.push(
            t,
            &[x],
            Box::new(move |_, g, _| {
                let mut gx = vec![0.0f32; len];
                for (o, &i) in map.iter().enumerate() {
                    gx[i] = g[o];
                }
                vec![Some(gx)]
            }),
        ))
    }
}

/// Nearest-neighbour ×r upsampling of an `[N, 1, H, W]` mask, matching how
/// [`Graph::depth_to_space`] spreads each input pixel.
pub fn upsample_mask(mask: &[f32], n: usize, h: usize, w: usize, r: usize) -> Vec<f32> {
    let (ho, wo) = (h * r, w * r);
    let mut out = vec![0.0f32; n * ho * wo];
    for nn in 0..n {
        for y in 0..ho {
            for x in 0..wo {
                out[(nn * ho + y) * wo + x] = mask[(nn * h + y / r) * w + x / r];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check_grad, project, random_tensor};
    use super::*;

    #[test]
    fn partial_conv_full_mask_equals_conv() {
        let mut g = Graph::new();
        let x = g.constant(random_tensor(&[2, 3, 9, 7], 1));
        let w = g.constant(random_tensor(&[4, 3, 3, 3], 2));
        let b = g.constant(random_tensor(&[4], 3));
        let plain = g.conv2d(x, w, Some(b), 1, 1).unwrap();
        let ones = vec![1.0; 2 * 9 * 7];
        let pc = g.partial_conv2d(x, &ones, w, Some(b), 1, 1).unwrap();
        for (a, b) in g.data(plain).iter().zip(g.data(pc.value)) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(pc.mask.iter().all(|&m| m == 1.0));
        // strided as well
        let plain = g.conv2d(x, w, Some(b), 2, 1).unwrap();
        let pc = g.partial_conv2d(x, &ones, w, Some(b), 2, 1).unwrap();
        for (a, b) in g.data(plain).iter().zip(g.data(pc.value)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn partial_conv_mask_grows_and_renormalizes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 5, 5], 2.0));
        let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let mut mask = vec![0.0; 25];
        mask[12] = 1.0;
        let pc = g.partial_conv2d(x, &mask, w, None, 1, 1).unwrap();
        let valid: usize = pc.mask.iter().filter(|&&m| m > 0.0).count();
        assert_eq!(valid, 9);
        // a single valid tap of value 2, rescaled by 9/1
        assert!((g.data(pc.value)[12] - 18.0).abs() < 1e-5);
        assert_eq!(g.data(pc.value)[0], 0.0);
        // mask never shrinks
        for (m_in, m_out) in mask.iter().zip(&pc.mask) {
            assert!(m_out >= m_in);
        }
    }

    #[test]
    fn conv_grads_match_fd() {
        check_grad(&[&[1, 2, 5, 6], &[3, 2, 3, 3], &[3]], 3, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap();
            let t = g.tanh(y);
            let q = g.square(t);
            project(g, q, 1)
        });
    }

    #[test]
    fn partial_conv_grads_match_fd() {
        let mut mask = vec![0.0; 2 * 6 * 6];
        for (i, m) in mask.iter_mut().enumerate() {
            *m = if (i * 7) % 5 < 2 { 1.0 } else { 0.0 };
        }
        check_grad(&[&[2, 2, 6, 6], &[3, 2, 3, 3], &[3]], 4, move |g, v| {
            let y = g.partial_conv2d(v[0], &mask, v[1], Some(v[2]), 1, 1).unwrap();
            let t = g.tanh(y.value);
            let q = g.square(t);
            project(g, q, 1)
        });
    }

    #[test]
    fn strided_partial_conv_grads_match_fd() {
        let mut mask = vec![0.0; 2 * 6 * 6];
        for (i, m) in mask.iter_mut().enumerate() {
            *m = if (i * 7) % 5 < 2 { 1.0 } else { 0.0 };
        }
        check_grad(&[&[2, 2, 6, 6], &[8, 2, 3, 3], &[8]], 5, move |g, v| {
            let y = g.partial_conv2d(v[0], &mask, v[1], Some(v[2]), 2, 1).unwrap();
            let u = g.depth_to_space(y.value, 2).unwrap();
            let t = g.tanh(u);
            let q = g.square(t);
            project(g, q, 1)
        });
    }

    #[test]
    fn depth_to_space_layout_and_grad() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 4, 1, 1], vec![0., 1., 2., 3.]).unwrap());
        let y = g.depth_to_space(x, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.data(y), &[0., 1., 2., 3.]);
        check_grad(&[&[1, 8, 2, 3]], 2, |g, v| {
            let y = g.depth_to_space(v[0], 2).unwrap();
            let w = g.constant(random_tensor(&[1, 2, 4, 6], 9));
            let p = g.mul(y, w).unwrap();
            let q = g.square(p);
            project(g, q, 1)
        });
    }
}
