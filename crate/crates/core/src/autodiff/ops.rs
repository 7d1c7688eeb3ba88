//! Elementwise, matrix and reduction ops.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::math::{expf, sigmoidf, tanhf};
use crate::{Error, Result};

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(
            op,
            alloc::format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

impl Graph {
    /// Elementwise map with a per-element derivative computed alongside.
    /// `f` returns `(value, d value / d input)`.
    pub fn unary(&mut self, x: Var, f: impl Fn(f32) -> (f32, f32)) -> Var {
        let (vals, ders): (Vec<f32>, Vec<f32>) = self.data(x).iter().map(|&v| f(v)).unzip();
        let out = Tensor::new(self.shape(x), vals).unwrap();
        self.push(
            out,
            &[x],
            Box::new(move |_, g, _| {
                vec![Some(g.iter().zip(&ders).map(|(a, b)| a * b).collect())]
            }),
        )
    }

    /// Like [`Graph::unary`] for piecewise-smooth maps; `piece` names the
    /// branch an input falls on, for [`Graph::branch_signature`].
    pub fn piecewise(&mut self, x: Var, piece: impl Fn(f32) -> u8, f: impl Fn(f32) -> (f32, f32)) -> Var {
        let b: Vec<u8> = self.data(x).iter().map(|v| piece(*v)).collect();
        self.note_branches(b.into_iter());
        self.unary(x, f)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.piecewise(x, |v| u8::from(v > 0.0), |v| if v > 0.0 { (v, 1.0) } else { (0.0, 0.0) })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| {
            let s = sigmoidf(v);
            (s, s * (1.0 - s))
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| {
            let t = tanhf(v);
            (t, 1.0 - t * t)
        })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| {
            let e = expf(v);
            (e, e)
        })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| (v * v, 2.0 * v))
    }

    /// `|x|` with subgradient 0 at 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.piecewise(x, |v| u8::from(v > 0.0) + u8::from(v >= 0.0), |v| {
            let s = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            (v.abs(), s)
        })
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        self.unary(x, move |v| (v * c, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Var {
        self.unary(x, move |v| (v + c, 1.0))
    }

    /// Hard clamp; the gradient is passed only strictly inside `(lo, hi)`.
    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        self.piecewise(x, move |v| u8::from(v >= lo) + u8::from(v > hi), move |v| {
            if v < lo {
                (lo, 0.0)
            } else if v > hi {
                (hi, 0.0)
            } else {
                (v, 1.0)
            }
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let vals = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a), vals)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|_, g, need| {
                vec![
                    need[0].then(|| g.to_vec()),
                    need[1].then(|| g.to_vec()),
                ]
            }),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let vals = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(self.shape(a), vals)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|_, g, need| {
                vec![
                    need[0].then(|| g.to_vec()),
                    need[1].then(|| g.iter().map(|x| -x).collect()),
                ]
            }),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let vals = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a), vals)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(move |gr, g, need| {
                let (da, db) = (gr.data(a), gr.data(b));
                vec![
                    need[0].then(|| g.iter().zip(db).map(|(u, y)| u * y).collect()),
                    need[1].then(|| g.iter().zip(da).map(|(u, x)| u * x).collect()),
                ]
            }),
        ))
    }

    /// Elementwise product with a constant buffer of the same length.
    pub fn mul_const(&mut self, x: Var, c: &[f32]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::shape(
                "mul_const",
                alloc::format!("{} values vs {:?}", c.len(), self.shape(x)),
            ));
        }
        let c = c.to_vec();
        let vals = self.data(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let out = Tensor::new(self.shape(x), vals)?;
        Ok(self.push(
            out,
            &[x],
            Box::new(move |_, g, _| vec![Some(g.iter().zip(&c).map(|(a, b)| a * b).collect())]),
        ))
    }

    /// `x [N, M] + b [M]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let m = self.value(b).len();
        if xs.len() != 2 || xs[1] != m {
            return Err(Error::shape(
                "add_bias",
                alloc::format!("{:?} + {:?}", xs, self.shape(b)),
            ));
        }
        let bd = self.data(b).to_vec();
        let vals = self
            .data(x)
            .chunks(m)
            .flat_map(|row| row.iter().zip(&bd).map(|(a, c)| a + c))
            .collect();
        let out = Tensor::new(&xs, vals)?;
        Ok(self.push(
            out,
            &[x, b],
            Box::new(move |_, g, need| {
                let db = need[1].then(|| {
                    let mut acc = vec![0.0f64; m];
                    for row in g.chunks(m) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += *v as f64;
                        }
                    }
                    acc.into_iter().map(|v| v as f32).collect()
                });
                vec![need[0].then(|| g.to_vec()), db]
            }),
        ))
    }

    /// `a [N, K] × b [K, M]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                alloc::format!("{:?} x {:?}", sa, sb),
            ));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), n, k, m);
        let out = Tensor::new(&[n, m], out)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(move |gr, g, need| {
                let (da, db) = (gr.data(a), gr.data(b));
                // dA = G Bᵀ, dB = Aᵀ G
                let ga = need[0].then(|| {
                    let mut o = vec![0.0f32; n * k];
                    for i in 0..n {
                        for p in 0..k {
                            let mut s = 0.0f64;
                            for j in 0..m {
                                s += g[i * m + j] as f64 * db[p * m + j] as f64;
                            }
                            o[i * k + p] = s as f32;
                        }
                    }
                    o
                });
                let gb = need[1].then(|| {
                    let mut o = vec![0.0f64; k * m];
                    for i in 0..n {
                        for p in 0..k {
                            let av = da[i * k + p] as f64;
                            if av == 0.0 {
                                continue;
                            }
                            let orow = &mut o[p * m..(p + 1) * m];
                            for (ov, gv) in orow.iter_mut().zip(&g[i * m..(i + 1) * m]) {
                                *ov += av * *gv as f64;
                            }
                        }
                    }
                    o.into_iter().map(|v| v as f32).collect()
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Sum of all elements (64-bit accumulation), as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().map(|&v| v as f64).sum();
        let n = self.value(x).len();
        self.push(
            Tensor::scalar(s as f32),
            &[x],
            Box::new(move |_, g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f32)
    }

    /// Weighted sum of scalar vars: `Σ cᵢ·xᵢ`.
    pub fn weighted_sum(&mut self, terms: &[(f32, Var)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(c, v) in terms {
            let t = self.scale(v, c);
            acc = Some(match acc {
                None => t,
                Some(a) => self.add(a, t)?,
            });
        }
        acc.ok_or_else(|| Error::invalid("weighted_sum", "no terms"))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let s = self.square(d);
        Ok(self.mean(s))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(self.shape(x), self.data(x).to_vec())?.reshape(shape)?;
        Ok(self.push(t, &[x], Box::new(|_, g, _| vec![Some(g.to_vec())])))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", alloc::format!("axis {axis} of {first:?}")));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut sizes = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(Error::shape(
                    "concat",
                    alloc::format!("{:?} vs {:?} on axis {}", first, s, axis),
                ));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &sz) in xs.iter().zip(&sizes) {
                let d = self.data(x);
                out.extend_from_slice(&d[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(
            t,
            xs,
            Box::new(move |_, g, need| {
                let mut res = Vec::with_capacity(sizes.len());
                let mut off = 0;
                for (k, &sz) in sizes.iter().enumerate() {
                    if need[k] {
                        let mut gi = Vec::with_capacity(outer * sz * inner);
                        for o in 0..outer {
                            let base = o * total * inner + off * inner;
                            gi.extend_from_slice(&g[base..base + sz * inner]);
                        }
                        res.push(Some(gi));
                    } else {
                        res.push(None);
                    }
                    off += sz;
                }
                res
            }),
        ))
    }

    /// Per-segment weighted sum of rows: `out[r] = Σ_{s in seg r} w[s]·x[s]`.
    ///
    /// `offsets` has one more entry than there are segments. Weights are
    /// constants.
    pub fn segment_weighted_sum(
        &mut self,
        x: Var,
        offsets: &[usize],
        weights: &[f32],
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || weights.len() != s[0] || offsets.last().copied() != Some(s[0]) {
            return Err(Error::shape(
                "segment_weighted_sum",
                alloc::format!("x {:?}, {} weights, offsets end {:?}", s, weights.len(), offsets.last()),
            ));
        }
        let c = s[1];
        let r = offsets.len() - 1;
        let xd = self.data(x);
        let mut out = vec![0.0f32; r * c];
        for seg in 0..r {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for i in offsets[seg]..offsets[seg + 1] {
                    acc += weights[i] as f64 * xd[i * c + ch] as f64;
                }
                out[seg * c + ch] = acc as f32;
            }
        }
        let offsets = offsets.to_vec();
        let weights = weights.to_vec();
        let t = Tensor::new(&[r, c], out)?;
        Ok(self.push(
            t,
            &[x],
            Box::new(move |_, g, _| {
                let mut gx = vec![0.0f32; weights.len() * c];
                for seg in 0..r {
                    for i in offsets[seg]..offsets[seg + 1] {
                        for ch in 0..c {
                            gx[i * c + ch] = weights[i] * g[seg * c + ch];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Weighted row gather: `out[s] = Σ_k w[s·K + k] · x[idx[s·K + k]]` for
    /// `x` of shape `[N, C]`, giving `[S, C]`. Weights are constants.
    pub fn gather_weighted(&mut self, x: Var, idx: &[u32], weights: &[f32], k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || k == 0 || idx.len() != weights.len() || idx.len() % k != 0 {
            return Err(Error::shape(
                "gather_weighted",
                alloc::format!("x {:?}, {} indices, {} weights, k {k}", s, idx.len(), weights.len()),
            ));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= n) {
            return Err(Error::shape("gather_weighted", alloc::format!("index {bad} out of {n} rows")));
        }
        let rows = idx.len() / k;
        let xd = self.data(x);
        let mut out = vec![0.0f32; rows * c];
        for r in 0..rows {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for t in r * k..(r + 1) * k {
                    acc += weights[t] as f64 * xd[idx[t] as usize * c + ch] as f64;
                }
                out[r * c + ch] = acc as f32;
            }
        }
        let idx = idx.to_vec();
        let weights = weights.to_vec();
        let t = Tensor::new(&[rows, c], out)?;
        Ok(self.push(
            t,
            &[x],
            Box::new(move |_, g, _| {
                let mut gx = vec![0.0f32; n * c];
                for r in 0..rows {
                    for t in r * k..(r + 1) * k {
                        let (w, base) = (weights[t], idx[t] as usize * c);
                        for ch in 0..c {
                            gx[base + ch] += w * g[r * c + ch];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Escape hatch for fused kernels: records `value` as a function of
    /// `inputs` with a caller-supplied VJP.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, vjp: super::VjpFn) -> Var {
        self.push(value, inputs, vjp)
    }
}

/// Plain row-major matrix product with 64-bit accumulation.
pub(crate) fn matmul_raw(a: &[f32], b: &[f32], n: usize, k: usize, m: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * m];
    let mut acc = vec![0.0f64; m];
    for i in 0..n {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = a[i * k + p] as f64;
            if av == 0.0 {
                continue;
            }
            for (s, bv) in acc.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *s += av * *bv as f64;
            }
        }
        for (o, s) in out[i * m..(i + 1) * m].iter_mut().zip(&acc) {
            *o = *s as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check_grad, project, random_tensor};
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let eye = g.constant(
            Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
        );
        let x = g.constant(random_tensor(&[3, 3], 4));
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.data(y), g.data(x));
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.data(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn square_sum_grad() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![3.0]).with_grad());
        let sq = g.square(x);
        let l = g.sum(sq);
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn sigmoid_grad_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0).with_grad());
        let y = g.sigmoid(x);
        let gr = g.backward(y).unwrap();
        assert_eq!(gr.get(x).unwrap(), &[0.25]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.5).with_grad());
        let y = g.add(x, x).unwrap();
        let gr = g.backward(y).unwrap();
        assert_eq!(gr.get(x).unwrap(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]).with_grad());
        assert!(matches!(g.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 3]));
        let err = g.add(a, b).unwrap_err();
        assert!(alloc::format!("{err}").contains("add"));
        let err = g.matmul(a, a).unwrap_err();
        assert!(alloc::format!("{err}").contains("matmul"));
    }

    #[test]
    fn elementwise_grads_match_fd() {
        for seed in 0..3 {
            check_grad(&[&[4, 3], &[4, 3]], seed, |g, v| {
                let m = g.mul(v[0], v[1]).unwrap();
                let s = g.sigmoid(m);
                let t = g.tanh(v[0]);
                let a = g.sub(s, t).unwrap();
                let e = g.exp(a);
                let q = g.square(e);
                g.mean(q)
            });
        }
    }

    #[test]
    fn matmul_bias_concat_grads_match_fd() {
        check_grad(&[&[5, 4], &[4, 3], &[3], &[5, 2]], 11, |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            let b = g.add_bias(m, v[2]).unwrap();
            let c = g.concat(&[b, v[3]], 1).unwrap();
            let t = g.tanh(c);
            let q = g.square(t);
            project(g, q, 1)
        });
    }

    #[test]
    fn segment_sum_grad_matches_fd() {
        check_grad(&[&[6, 3]], 5, |g, v| {
            let s = g
                .segment_weighted_sum(v[0], &[0, 2, 2, 6], &[0.5, 1.0, 0.1, 0.2, 0.3, 2.0])
                .unwrap();
            let q = g.square(s);
            project(g, q, 1)
        });
    }

    #[test]
    fn gather_weighted_grad_matches_fd() {
        // repeated indices exercise the scatter-add
        let idx = [0u32, 3, 3, 1, 2, 0];
        let w = [0.25f32, 0.75, 1.0, -0.5, 0.3, 0.7];
        check_grad(&[&[4, 2]], 8, |g, v| {
            let s = g.gather_weighted(v[0], &idx, &w, 2).unwrap();
            let q = g.square(s);
            project(g, q, 2)
        });
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[2, 1], vec![1.0, 10.0]).unwrap());
        let s = g.gather_weighted(x, &[0, 1], &[0.5, 0.5], 2).unwrap();
        assert_eq!(g.data(s), &[5.5]);
        assert!(g.gather_weighted(x, &[0, 2], &[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn three_layer_mlp_grads_match_fd() {
        // inputs: x, then (weight, bias) per layer
        check_grad(&[&[6, 5], &[5, 8], &[8], &[8, 8], &[8], &[8, 3], &[3]], 21, |g, v| {
            let mut h = v[0];
            for l in 0..3 {
                let m = g.matmul(h, v[1 + 2 * l]).unwrap();
                let b = g.add_bias(m, v[2 + 2 * l]).unwrap();
                h = if l < 2 { g.tanh(b) } else { g.sigmoid(b) };
            }
            project(g, h, 3)
        });
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g = Graph::new();
            let a = g.constant(random_tensor(&[32, 17], 1));
            let b = g.constant(random_tensor(&[17, 9], 2));
            let m = g.matmul(a, b).unwrap();
            let s = g.sigmoid(m);
            let l = g.mean(s);
            g.data(l)[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
