//! Texture lookups, positional encoding and finite differences on rasters.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::math::{cos, floor, sin};
use crate::{Error, Result};

/// Per-texel chart labels of an `H × W` raster. Label 0 marks gutter texels
/// that belong to no chart.
#[derive(Clone, Debug, PartialEq)]
pub struct TexelSupport {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl TexelSupport {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(
                "TexelSupport",
                alloc::format!("{} labels for {height}x{width}", labels.len()),
            ));
        }
        Ok(Self { height, width, labels })
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }
}

/// The four bilinear taps of one lookup together with the derivative of each
/// weight with respect to `u` and `v`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Taps {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub du: [f64; 4],
    pub dv: [f64; 4],
    /// Clamp state of both axes and the surviving-tap pattern.
    pub cell: u8,
}

fn axis(t: f64, n: usize) -> (usize, usize, f64, f64, u8) {
    // texel centres at (i + 0.5) / n; clamp to the outer centres
    let x = t * n as f64 - 0.5;
    let hi = (n - 1) as f64;
    if n == 1 {
        return (0, 0, 0.0, 0.0, 0);
    }
    let (xc, dx, side) = if x <= 0.0 {
        (0.0, 0.0, 1)
    } else if x >= hi {
        (hi, 0.0, 2)
    } else {
        (x, n as f64, 0)
    };
    let i0 = (floor(xc) as usize).min(n - 2);
    (i0, i0 + 1, xc - i0 as f64, dx, side)
}

/// Bilinear taps at `(u, v)` in `[0,1]²` (u along columns, v along rows).
/// With `chart` set, taps on other labels are dropped and the remaining
/// weights renormalized; if none survive, the plain weights are used.
pub(crate) fn taps(h: usize, w: usize, u: f64, v: f64, support: Option<(&TexelSupport, u16)>) -> Taps {
    let (c0, c1, fx, dxdu, su) = axis(u, w);
    let (r0, r1, fy, dydv, sv) = axis(v, h);
    let mut cell = su | sv << 2;
    let idx = [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1];
    let mut wt = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
    let mut du = [-(1.0 - fy) * dxdu, (1.0 - fy) * dxdu, -fy * dxdu, fy * dxdu];
    let mut dv = [-(1.0 - fx) * dydv, -fx * dydv, (1.0 - fx) * dydv, fx * dydv];
    if let Some((sup, label)) = support {
        let keep: [f64; 4] = core::array::from_fn(|k| f64::from(u8::from(sup.labels[idx[k]] == label)));
        let s: f64 = (0..4).map(|k| keep[k] * wt[k]).sum();
        cell |= (0..4).fold(0, |m, k| m | (u8::from(keep[k] > 0.0) << k)) << 4;
        if s > 1e-12 && keep.iter().any(|k| *k == 0.0) {
            let su: f64 = (0..4).map(|k| keep[k] * du[k]).sum();
            let sv: f64 = (0..4).map(|k| keep[k] * dv[k]).sum();
            for k in 0..4 {
                let a = keep[k] * wt[k];
                du[k] = (keep[k] * du[k] * s - a * su) / (s * s);
                dv[k] = (keep[k] * dv[k] * s - a * sv) / (s * s);
                wt[k] = a / s;
            }
        }
    }
    Taps { idx, w: wt, du, dv, cell }
}

impl Graph {
    /// Bilinear lookup of `map` (`[H, W, C]`) at `uv` (`[P, 2]`, values in
    /// `[0,1]`), giving `[P, C]`. Differentiable in both the map and the
    /// coordinates. `charts` optionally restricts each lookup to texels of a
    /// given chart label (one label per lookup).
    pub fn grid_sample(
        &mut self,
        map: Var,
        uv: Var,
        charts: Option<(&TexelSupport, &[u16])>,
    ) -> Result<Var> {
        let ms = self.shape(map).to_vec();
        let us = self.shape(uv).to_vec();
        if ms.len() != 3 || us.len() != 2 || us[1] != 2 {
            return Err(Error::shape("grid_sample", alloc::format!("map {ms:?}, uv {us:?}")));
        }
        let (h, w, c) = (ms[0], ms[1], ms[2]);
        let p = us[0];
        if let Some((sup, labels)) = charts {
            if sup.height != h || sup.width != w || labels.len() != p {
                return Err(Error::shape(
                    "grid_sample",
                    alloc::format!("support {}x{} / {} labels for map {ms:?}, uv {us:?}", sup.height, sup.width, labels.len()),
                ));
            }
        }
        let uvd = self.data(uv);
        let all: Vec<Taps> = (0..p)
            .map(|i| {
                let s = charts.map(|(sup, l)| (sup, l[i]));
                taps(h, w, uvd[2 * i] as f64, uvd[2 * i + 1] as f64, s)
            })
            .collect();
        // each lookup is smooth only inside one texel cell
        let cells: Vec<u8> = all.iter().flat_map(|t| t.idx[0].to_le_bytes().into_iter().take(4).chain([t.cell])).collect();
        self.note_branches(cells.into_iter());
        let md = self.data(map);
        let mut out = vec![0.0f32; p * c];
        for (i, t) in all.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for k in 0..4 {
                    acc += t.w[k] * md[t.idx[k] * c + ch] as f64;
                }
                out[i * c + ch] = acc as f32;
            }
        }
        let t = Tensor::new(&[p, c], out)?;
        let map_len = h * w * c;
        Ok(self.push(
            t,
            &[map, uv],
            Box::new(move |gr, g, need| {
                let gm = need[0].then(|| {
                    let mut gm = vec![0.0f64; map_len];
                    for (i, t) in all.iter().enumerate() {
                        for ch in 0..c {
                            let gi = g[i * c + ch] as f64;
                            for k in 0..4 {
                                gm[t.idx[k] * c + ch] += t.w[k] * gi;
                            }
                        }
                    }
                    gm.into_iter().map(|v| v as f32).collect()
                });
                let guv = need[1].then(|| {
                    let md = gr.data(map);
                    let mut guv = vec![0.0f32; 2 * p];
                    for (i, t) in all.iter().enumerate() {
                        let (mut su, mut sv) = (0.0f64, 0.0f64);
                        for ch in 0..c {
                            let gi = g[i * c + ch] as f64;
                            for k in 0..4 {
                                let m = md[t.idx[k] * c + ch] as f64;
                                su += t.du[k] * m * gi;
                                sv += t.dv[k] * m * gi;
                            }
                        }
                        guv[2 * i] = su as f32;
                        guv[2 * i + 1] = sv as f32;
                    }
                    guv
                });
                vec![gm, guv]
            }),
        ))
    }

    /// `[P, D] → [P, D·(1 + 2L)]`: the input followed, for each frequency
    /// `k < L`, by `sin(2^k π x)` and then `cos(2^k π x)` over all `D`.
    pub fn positional_encoding(&mut self, x: Var, freqs: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("positional_encoding", alloc::format!("expected [P, D], got {s:?}")));
        }
        let (p, d) = (s[0], s[1]);
        let wo = d * (1 + 2 * freqs);
        let xd = self.data(x);
        let mut out = vec![0.0f32; p * wo];
        for i in 0..p {
            let row = &mut out[i * wo..(i + 1) * wo];
            row[..d].copy_from_slice(&xd[i * d..(i + 1) * d]);
            for k in 0..freqs {
                let f = (1u64 << k) as f64 * core::f64::consts::PI;
                for j in 0..d {
                    let a = f * xd[i * d + j] as f64;
                    row[d + 2 * k * d + j] = sin(a) as f32;
                    row[d + (2 * k + 1) * d + j] = cos(a) as f32;
                }
            }
        }
        let t = Tensor::new(&[p, wo], out)?;
        Ok(self.push(
            t,
            &[x],
            Box::new(move |gr, g, _| {
                let xd = gr.data(x);
                let mut gx = vec![0.0f32; p * d];
                for i in 0..p {
                    let row = &g[i * wo..(i + 1) * wo];
                    for j in 0..d {
                        let mut acc = row[j] as f64;
                        for k in 0..freqs {
                            let f = (1u64 << k) as f64 * core::f64::consts::PI;
                            let a = f * xd[i * d + j] as f64;
                            acc += f * (row[d + 2 * k * d + j] as f64 * cos(a)
                                - row[d + (2 * k + 1) * d + j] as f64 * sin(a));
                        }
                        gx[i * d + j] = acc as f32;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Forward difference along columns of an `[H, W, C]` raster:
    /// `out[y, x] = in[y, x+1] − in[y, x]`, shape `[H, W−1, C]`.
    pub fn diff_x(&mut self, x: Var) -> Result<Var> {
        self.diff(x, false)
    }

    /// Forward difference along rows, shape `[H−1, W, C]`.
    pub fn diff_y(&mut self, x: Var) -> Result<Var> {
        self.diff(x, true)
    }

    fn diff(&mut self, x: Var, rows: bool) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let op = if rows { "diff_y" } else { "diff_x" };
        if s.len() != 3 || (rows && s[0] < 2) || (!rows && s[1] < 2) {
            return Err(Error::shape(op, alloc::format!("{s:?}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let (ho, wo) = if rows { (h - 1, w) } else { (h, w - 1) };
        let step = if rows { w * c } else { c };
        let mut pairs = Vec::with_capacity(ho * wo * c);
        for y in 0..ho {
            for xx in 0..wo {
                for ch in 0..c {
                    pairs.push((y * w + xx) * c + ch);
                }
            }
        }
        let xd = self.data(x);
        let out: Vec<f32> = pairs.iter().map(|&i| xd[i + step] - xd[i]).collect();
        let t = Tensor::new(&[ho, wo, c], out)?;
        let len = h * w * c;
        Ok(self.push(
            t,
            &[x],
            Box::new(move |_, g, _| {
                let mut gx = vec![0.0f32; len];
                for (o, &i) in pairs.iter().enumerate() {
                    gx[i + step] += g[o];
                    gx[i] -= g[o];
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check_grad_at, project, random_tensor};
    use super::*;

    #[test]
    fn texel_centres_are_exact() {
        let mut g = Graph::new();
        let map = g.constant(Tensor::new(&[2, 2, 1], vec![1., 2., 3., 4.]).unwrap());
        let uv = g.constant(Tensor::new(&[3, 2], vec![0.25, 0.25, 0.75, 0.75, 0.5, 0.5]).unwrap());
        let y = g.grid_sample(map, uv, None).unwrap();
        assert_eq!(g.data(y), &[1.0, 4.0, 2.5]);
    }

    #[test]
    fn chart_restricted_lookup_ignores_other_labels() {
        let mut g = Graph::new();
        let map = g.constant(Tensor::new(&[1, 2, 1], vec![1., 100.]).unwrap());
        let uv = g.constant(Tensor::new(&[1, 2], vec![0.5, 0.5]).unwrap());
        let sup = TexelSupport::new(1, 2, vec![1, 2]).unwrap();
        let y = g.grid_sample(map, uv, Some((&sup, &[1]))).unwrap();
        assert_eq!(g.data(y), &[1.0]);
    }

    #[test]
    fn grid_sample_grads_match_fd() {
        let map = random_tensor(&[4, 5, 2], 1);
        let uv = Tensor::new(&[3, 2], vec![0.31, 0.47, 0.62, 0.21, 0.55, 0.7]).unwrap();
        check_grad_at(&[map, uv], 1e-3, 1e-3, |g, v| {
            let y = g.grid_sample(v[0], v[1], None).unwrap();
            let q = g.square(y);
            project(g, q, 1)
        });
        let map = random_tensor(&[4, 4, 2], 2);
        let uv = Tensor::new(&[2, 2], vec![0.43, 0.41, 0.57, 0.55]).unwrap();
        let sup = TexelSupport::new(4, 4, (0..16).map(|i| if i % 4 < 2 { 1 } else { 2 }).collect()).unwrap();
        check_grad_at(&[map, uv], 1e-3, 1e-3, move |g, v| {
            let y = g.grid_sample(v[0], v[1], Some((&sup, &[1, 2]))).unwrap();
            let q = g.square(y);
            project(g, q, 1)
        });
    }

    #[test]
    fn positional_encoding_layout_and_grad() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 1], vec![0.25]).unwrap());
        let y = g.positional_encoding(x, 2).unwrap();
        let d = g.data(y);
        assert_eq!(g.shape(y), &[1, 5]);
        let s = core::f32::consts::FRAC_1_SQRT_2;
        for (a, b) in d.iter().zip([0.25, s, s, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-6);
        }
        let x = Tensor::new(&[2, 3], vec![0.1, -0.2, 0.3, 0.05, 0.4, -0.15]).unwrap();
        check_grad_at(&[x], 1e-3, 1e-3, |g, v| {
            let y = g.positional_encoding(v[0], 3).unwrap();
            let w = g.constant(random_tensor(&[2, 21], 5));
            let p = g.mul(y, w).unwrap();
            project(g, p, 1)
        });
    }

    #[test]
    fn diffs_and_grads() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[2, 2, 1], vec![1., 3., 6., 10.]).unwrap());
        let dx = g.diff_x(x).unwrap();
        let dy = g.diff_y(x).unwrap();
        assert_eq!(g.data(dx), &[2., 4.]);
        assert_eq!(g.data(dy), &[5., 7.]);
        check_grad_at(&[random_tensor(&[3, 4, 2], 7)], 1e-3, 1e-3, |g, v| {
            let a = g.diff_x(v[0]).unwrap();
            let b = g.diff_y(v[0]).unwrap();
            let a = g.square(a);
            let b = g.square(b);
            let a = project(g, a, 1);
            let b = project(g, b, 2);
            g.add(a, b).unwrap()
        });
    }
}
