//! Central finite-difference gradient checking.
//!
//! Each probe perturbs all inputs along a direction that mixes a random unit
//! vector with the unit analytic gradient, then compares the analytic
//! directional derivative with a central difference. A purely random
//! direction gives derivatives of order |∇L|/√n, which for `f32` forwards
//! sits at the rounding floor of the difference quotient; the gradient
//! component keeps the signal at order |∇L|. The perturbation actually
//! applied is re-read from the rounded `f32` inputs so representation error
//! does not leak into the comparison.
//!
//! Central differences of a ReLU/abs/clamp network are meaningless when
//! `x ± h·d` lands on different branches of some element, so a probe whose
//! branch signature (see [`Graph::branch_signature`]) differs at either end
//! from the base point is redrawn. If 50 draws all straddle a branch, the
//! base point itself lies within `h` of a kink and the probe is flagged;
//! [`check_grad_at`] rejects such points rather than judging them, and
//! [`smooth_point`] finds a usable one.

use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    let mut r = rng::stream(seed, 0xfd);
    Tensor::new(shape, rng::normal_vec(&mut r, n, 1.0)).unwrap()
}

/// `Σ r ∘ y` with fixed random weights scaled so the result is O(1).
pub fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let n = g.value(y).len();
    let mut r = rng::stream(seed, 0x9e);
    let w = rng::normal_vec(&mut r, n, 1.0 / libm::sqrtf(n as f32));
    let p = g.mul_const(y, &w).unwrap();
    g.sum(p)
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Random inputs of the given shapes, 20 probes, step 1e-3, tolerance 1e-3.
pub fn check_grad(shapes: &[&[usize]], seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let inputs: Vec<Tensor> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| random_tensor(s, seed * 131 + i as u64))
        .collect();
    check_grad_at(&inputs, 1e-3, 1e-3, f);
}

pub fn check_grad_at(inputs: &[Tensor], h: f32, tol: f64, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    for p in probe_errors(inputs, h, 20, 0x5eed, &f) {
        assert!(!p.straddles, "probe {}: base point is within {h} of a non-smooth point", p.index);
        assert!(p.rel_err < tol, "probe {}: analytic {} vs numeric {} (rel {})", p.index, p.analytic, p.numeric, p.rel_err);
    }
}

/// First of `make(0)`, `make(1)`, … (at most 20 tries) around which the
/// function is smooth at scale `h` for all 20 probes. Points are chosen on
/// smoothness alone; derivative agreement is not looked at.
pub fn smooth_point(h: f32, make: impl Fn(u64) -> Vec<Tensor>, f: &impl Fn(&mut Graph, &[Var]) -> Var) -> Vec<Tensor> {
    for s in 0..20 {
        let inputs = make(s);
        if probe_errors(&inputs, h, 20, 0x5eed, f).iter().all(|p| !p.straddles) {
            return inputs;
        }
    }
    panic!("no smooth base point in 20 draws");
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub rel_err: f64,
    pub analytic: f64,
    pub numeric: f64,
    /// `x ± h·d` fell on different branches of a piecewise op.
    pub straddles: bool,
}

/// Runs `probes` directional checks.
pub fn probe_errors(
    inputs: &[Tensor],
    h: f32,
    probes: usize,
    seed: u64,
    f: &impl Fn(&mut Graph, &[Var]) -> Var,
) -> Vec<Probe> {
    let eval = |ins: &[Tensor]| -> (f64, u64) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let l = f(&mut g, &vars);
        (g.data(l)[0] as f64, g.branch_signature())
    };
    let base_sig = eval(inputs).1;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
    let l = f(&mut g, &vars);
    let grads = g.backward(l).unwrap();
    let an: Vec<Vec<f32>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).map(|s| s.to_vec()).unwrap_or_else(|| alloc::vec![0.0; t.len()]))
        .collect();
    let total: usize = inputs.iter().map(Tensor::len).sum();
    let mut r = rng::stream(seed, 0xd1);
    let mut out = Vec::with_capacity(probes);
    for k in 0..probes {
        let mut attempt = 0;
        let (dir_an, num, straddles) = loop {
            attempt += 1;
            let z = rng::normal_vec(&mut r, total, 1.0);
            let zn = norm2(z.iter().copied());
            let gn = norm2(an.iter().flatten().copied());
            let d: Vec<f32> = z
                .iter()
                .zip(an.iter().flatten())
                .map(|(z, g)| (*z as f64 / zn + if gn > 0.0 { *g as f64 / gn } else { 0.0 }) as f32)
                .collect();
            let norm = norm2(d.iter().copied());
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut off = 0;
            let mut dir_an = 0.0f64;
            for (i, t) in inputs.iter().enumerate() {
                for j in 0..t.len() {
                    let step = (h as f64 * d[off + j] as f64 / norm) as f32;
                    let x = t.data()[j];
                    let (xp, xm) = (x + step, x - step);
                    plus[i].data_mut()[j] = xp;
                    minus[i].data_mut()[j] = xm;
                    dir_an += an[i][j] as f64 * (xp as f64 - xm as f64);
                }
                off += t.len();
            }
            let ((fp, sp), (fm, sm)) = (eval(&plus), eval(&minus));
            if (sp == base_sig && sm == base_sig) || attempt >= 50 {
                break (dir_an, fp - fm, sp != base_sig || sm != base_sig);
            }
        };
        let scale = 2.0 * h as f64;
        let (a, n) = (dir_an / scale, num / scale);
        out.push(Probe { index: k, rel_err: rel_err(a, n, 1e-3), analytic: a, numeric: n, straddles });
    }
    out
}

fn norm2(v: impl Iterator<Item = f32>) -> f64 {
    libm::sqrt(v.map(|x| (x as f64) * (x as f64)).sum::<f64>()).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_one_percent_gradient_error() {
        let x = random_tensor(&[5, 4], 3);
        let worst = probe_errors(&[x], 1e-3, 20, 1, &|g: &mut Graph, v: &[Var]| {
            let val = g.value(v[0]).clone();
            let y = Tensor::new(val.shape(), val.data().iter().map(|a| a * a).collect()).unwrap();
            let y = g.custom(
                &[v[0]],
                y,
                alloc::boxed::Box::new(move |gr, up, _| {
                    let xd = gr.data(Var(0));
                    alloc::vec![Some(xd.iter().zip(up).map(|(a, u)| 2.02 * a * u).collect())]
                }),
            );
            project(g, y, 1)
        });
        assert!(worst.iter().all(|p| p.rel_err > 1e-3 && !p.straddles));
    }

    #[test]
    fn flags_points_on_a_kink() {
        let f = |g: &mut Graph, v: &[Var]| {
            let r = g.relu(v[0]);
            g.sum(r)
        };
        let at_kink = Tensor::new(&[3], alloc::vec![0.0, 1.0, -2.0]).unwrap();
        assert!(probe_errors(&[at_kink], 1e-3, 5, 1, &f).iter().all(|p| p.straddles));
        let smooth = Tensor::new(&[3], alloc::vec![0.5, 1.0, -2.0]).unwrap();
        let probes = probe_errors(&[smooth], 1e-3, 5, 1, &f);
        assert!(probes.iter().all(|p| !p.straddles && p.rel_err < 1e-4));
    }
}
