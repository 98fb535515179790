//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] is an append-only list of nodes. Each node stores its forward
//! value, the kind of operation that produced it, its parents (which always
//! have smaller ids), and whatever forward results its backward rule needs.
//! [`Var`] is a cheap `Copy` handle to a node on a particular tape.

mod ops;

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub type NodeId = usize;

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Gelu(NodeId),
    MatMul(NodeId, NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    Softmax {
        x: NodeId,
        axis: usize,
    },
    Sum(NodeId),
    MeanAxis {
        x: NodeId,
        axis: usize,
    },
    Reshape(NodeId),
    Permute {
        x: NodeId,
        perm: Vec<usize>,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    ZeroPadAssign {
        x: NodeId,
        axis: usize,
        offset: usize,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    sabotage: bool,
}

#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            sabotage: false,
        }
    }

    /// A tape whose softmax backward silently drops its normalisation
    /// term. Only useful as a negative control for gradient checking.
    #[doc(hidden)]
    pub fn sabotaged() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            sabotage: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register an input whose gradient is wanted.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    /// Same node kind as a leaf; the distinction is only in intent.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: NodeId) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn node(&self, id: NodeId) -> Ref<'_, Node<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id])
    }

    /// Reverse sweep from a scalar `loss`. Gradients of nodes used more than
    /// once are summed.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let root_value = self.value_of(loss.id);
        if root_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.len()];
        grads[loss.id] = Some(Tensor::ones(root_value.shape().to_vec()));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let node = self.node(id);
            for (parent, contribution) in self.vjp(&node, &g)? {
                debug_assert!(parent < id);
                accumulate(&mut grads[parent], contribution)?;
            }
        }
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of one node with respect to its parents.
    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let val = |id: NodeId| self.value_of(id);
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                (*a, g.sum_to_shape(val(*a).shape())?),
                (*b, g.sum_to_shape(val(*b).shape())?),
            ],
            Op::Sub(a, b) => vec![
                (*a, g.sum_to_shape(val(*a).shape())?),
                (*b, g.scale(-T::one()).sum_to_shape(val(*b).shape())?),
            ],
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                vec![
                    (*a, g.mul(&vb)?.sum_to_shape(va.shape())?),
                    (*b, g.mul(&va)?.sum_to_shape(vb.shape())?),
                ]
            }
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::Gelu(a) => {
                let x = val(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| g * ops::gelu_grad(x))
                    .collect();
                vec![(*a, Tensor::new(x.shape().to_vec(), data)?)]
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                vec![
                    (*a, g.matmul_ex(&vb, false, true)?.sum_to_shape(va.shape())?),
                    (*b, va.matmul_ex(g, true, false)?.sum_to_shape(vb.shape())?),
                ]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gm = val(*gamma);
                let d = gm.numel();
                let dn = T::from_usize(d).expect("extent fits in float");
                let mut dx = vec![T::zero(); g.numel()];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for (row, &rs) in rstd.iter().enumerate() {
                    let gr = &g.data()[row * d..(row + 1) * d];
                    let xr = &xhat.data()[row * d..(row + 1) * d];
                    let mut mean_dxhat = T::zero();
                    let mut mean_dxhat_xhat = T::zero();
                    for j in 0..d {
                        let dxh = gr[j] * gm.data()[j];
                        mean_dxhat = mean_dxhat + dxh;
                        mean_dxhat_xhat = mean_dxhat_xhat + dxh * xr[j];
                        dgamma[j] = dgamma[j] + gr[j] * xr[j];
                        dbeta[j] = dbeta[j] + gr[j];
                    }
                    mean_dxhat = mean_dxhat / dn;
                    mean_dxhat_xhat = mean_dxhat_xhat / dn;
                    for j in 0..d {
                        let dxh = gr[j] * gm.data()[j];
                        dx[row * d + j] = rs * (dxh - mean_dxhat - xr[j] * mean_dxhat_xhat);
                    }
                }
                vec![
                    (*x, Tensor::new(g.shape().to_vec(), dx)?),
                    (*gamma, Tensor::new(vec![d], dgamma)?),
                    (*beta, Tensor::new(vec![d], dbeta)?),
                ]
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let gy = g.mul(y)?;
                let dx = if self.sabotage {
                    gy
                } else {
                    let total = gy.sum_axis(*axis)?.expand_axis(*axis, y.shape()[*axis])?;
                    gy.sub(&total.mul(y)?)?
                };
                vec![(*x, dx)]
            }
            Op::Sum(a) => {
                let shape = val(*a).shape().to_vec();
                vec![(*a, Tensor::full(shape, g.data()[0]))]
            }
            Op::MeanAxis { x, axis } => {
                let extent = val(*x).shape()[*axis];
                let n = T::from_usize(extent).expect("extent fits in float");
                vec![(*x, g.expand_axis(*axis, extent)?.map(|v| v / n))]
            }
            Op::Reshape(a) => vec![(*a, g.reshape(val(*a).shape().to_vec())?)],
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                vec![(*x, g.permute(&inverse)?)]
            }
            Op::Slice { x, axis, start } => {
                let extent = val(*x).shape()[*axis];
                vec![(*x, g.zero_pad_assign(*axis, *start, extent)?)]
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    out.push((p, g.slice(*axis, start, start + len)?));
                    start += len;
                }
                out
            }
            Op::ZeroPadAssign { x, axis, offset } => {
                let len = val(*x).shape()[*axis];
                vec![(*x, g.slice(*axis, *offset, *offset + len)?)]
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = probs.shape()[1];
                let scale = g.data()[0] / T::from_usize(labels.len()).expect("batch fits in float");
                let mut d = probs.clone().into_vec();
                for (b, &y) in labels.iter().enumerate() {
                    d[b * c + y] = d[b * c + y] - T::one();
                }
                d.iter_mut().for_each(|v| *v = *v * scale);
                vec![(*logits, Tensor::new(probs.shape().to_vec(), d)?)]
            }
        };
        Ok(out)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    *slot = Some(match slot.take() {
        None => g,
        Some(prev) => prev.add(&g)?,
    });
    Ok(())
}

/// Result of a backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`; zeros when `var` does not reach the loss.
    pub fn get(&self, var: Var<'_, T>) -> Tensor<T> {
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.value().shape().to_vec()),
        }
    }

    pub fn reached(&self, var: Var<'_, T>) -> bool {
        matches!(self.grads.get(var.id), Some(Some(_)))
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.node(self.id).value.shape().to_vec()
    }
}
