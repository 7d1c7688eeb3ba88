use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{ParamId, ParamSet, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Vector-Jacobian product of one recorded op.
///
/// Called with the graph (to read input and output values), the upstream
/// gradient of the op's output, and a flag per input saying whether that
/// input needs a gradient. Returns one entry per input.
pub type VjpFn = Box<dyn Fn(&Graph, &[f32], &[bool]) -> Vec<Option<Vec<f32>>>>;

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    vjp: Option<VjpFn>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Define-by-run operation record. Recording order is a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Running hash of the branch every piecewise op took per element.
    branches: u64,
}

/// Gradients of a scalar with respect to the leaves of a graph.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of the branches taken by piecewise ops (ReLU, abs, clamp). Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        self.branches
    }

    pub(crate) fn note_branches(&mut self, b: impl Iterator<Item = u8>) {
        // FNV-1a
        for v in b {
            self.branches = (self.branches ^ u64::from(v)).wrapping_mul(0x100_0000_01b3);
        }
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.set_requires_grad(false);
        self.push_leaf(t, false, None)
    }

    /// A leaf that is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let mut t = t;
        t.set_requires_grad(false);
        self.push_leaf(t, rg, None)
    }

    /// Copies parameter `id` of `set` into the graph.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        let src = set.get(id);
        let rg = src.requires_grad();
        let t = Tensor::new(src.shape(), src.data().to_vec()).expect("param shape");
        self.push_leaf(t, rg, Some(id))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            vjp: None,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an op result. The VJP is kept only if some input needs grad.
    pub fn push(&mut self, value: Tensor, inputs: &[Var], vjp: VjpFn) -> Var {
        debug_assert!(value.all_finite() || !inputs.iter().all(|v| self.value(*v).all_finite()));
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            vjp: if rg { Some(vjp) } else { None },
            requires_grad: rg,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse pass from a scalar `loss`. Each node is visited once, in
    /// reverse recording order; fan-out contributions are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::shape(
                "backward",
                alloc::format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0; lv.len()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(vjp) = node.vjp.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = vjp(self, &g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for ((v, gi), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(gi), true) = (gi, *need) else {
                    continue;
                };
                debug_assert_eq!(gi.len(), self.nodes[v.0].value.len());
                match grads[v.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += *b),
                    None => grads[v.0] = Some(gi),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and accumulates parameter gradients into `set`.
    pub fn backward_into(&self, loss: Var, set: &mut ParamSet) -> Result<()> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(Some(g))) = (node.param, grads.grads.get(i)) {
                set.get_mut(id).accumulate_grad(g);
            }
        }
        Ok(())
    }
}
