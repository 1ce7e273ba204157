use std::cell::{Ref, RefCell};

use crate::error::{Result, TensorError};
use crate::ops::conv::ConvGeom;
use crate::ops::{activation, conv, linear, norm, reduce, shape};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation that produced a node, with whatever the backward rule needs.
pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Swish(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    ScaleChannels {
        x: Var,
        s: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
        eps: T,
    },
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    pub(crate) fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Swish(_) => "swish",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Softmax { .. } => "softmax",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Linear { .. } => "linear",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape(_) => "reshape",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::ScaleChannels { .. } => "scale_channels",
            Op::Dropout { .. } => "dropout",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<T>>,
}

/// Append-only record of a forward computation. Node order is a topological
/// order, so the backward sweep simply walks it in reverse.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> &'static str {
        self.nodes.borrow()[v.0].op.kind()
    }

    /// Gradient populated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Records a node. Operations whose inputs are all constant are stored as
    /// constants and their saved context is dropped.
    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Leaf };
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss. Gradients of every node that depends
    /// on a leaf are stored and summed over all use sites.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = {
            let nodes = self.nodes.borrow();
            (0..nodes.len()).map(|_| None).collect()
        };
        grads[loss.0] = Some(vec![T::one()]);
        {
            let nodes = self.nodes.borrow();
            for id in (0..=loss.0).rev() {
                let Some(g) = grads[id].as_ref() else {
                    continue;
                };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                let contributions = backward_rule(&nodes, node, g);
                for (input, contribution) in contributions {
                    if !nodes[input.0].requires_grad {
                        continue;
                    }
                    accumulate(&mut grads[input.0], contribution);
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (node, g) in nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(contribution) {
                *a += b;
            }
        }
        None => *slot = Some(contribution),
    }
}

fn backward_rule<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let val = |v: &Var| &nodes[v.0].value;
    let needs = |v: &Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Conv2d { x, w, b, geom } => {
            let (dx, dw, db) = conv::conv2d_backward(
                val(x).data(),
                val(w).data(),
                g,
                geom,
                needs(x),
                needs(w),
                b.map(|b| needs(&b)).unwrap_or(false),
            );
            let mut out = Vec::new();
            if let Some(dx) = dx {
                out.push((*x, dx));
            }
            if let Some(dw) = dw {
                out.push((*w, dw));
            }
            if let (Some(b), Some(db)) = (b, db) {
                out.push((*b, db));
            }
            out
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let (dx, dgamma, dbeta) = norm::batchnorm_backward(
                val(x).shape(),
                val(gamma).data(),
                xhat,
                inv_std,
                *train,
                g,
            );
            vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
        }
        Op::Swish(x) => vec![(*x, activation::swish_backward(val(x).data(), g))],
        Op::Sigmoid(x) => vec![(*x, activation::sigmoid_backward(node.value.data(), g))],
        Op::Relu(x) => vec![(*x, activation::relu_backward(val(x).data(), g))],
        Op::Softmax { x, axis } => {
            vec![(
                *x,
                reduce::softmax_backward(node.value.shape(), node.value.data(), *axis, g),
            )]
        }
        Op::GlobalAvgPool(x) => vec![(*x, reduce::gap_backward(val(x).shape(), g))],
        Op::Linear { x, w, b } => {
            let (dx, dw, db) = linear::linear_backward(val(x), val(w), g);
            let mut out = vec![(*x, dx), (*w, dw)];
            if let Some(b) = b {
                out.push((*b, db));
            }
            out
        }
        Op::Concat { xs, axis } => {
            let shapes: Vec<&[usize]> = xs.iter().map(|v| val(v).shape()).collect();
            let parts = shape::concat_backward(&shapes, *axis, g);
            xs.iter().copied().zip(parts).collect()
        }
        Op::Narrow { x, axis, start } => {
            vec![(
                *x,
                shape::narrow_backward(val(x).shape(), *axis, *start, node.value.shape(), g),
            )]
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::Mul(a, b) => {
            let da = g.iter().zip(val(b).data()).map(|(g, b)| *g * *b).collect();
            let db = g.iter().zip(val(a).data()).map(|(g, a)| *g * *a).collect();
            vec![(*a, da), (*b, db)]
        }
        Op::ScaleChannels { x, s } => {
            let (dx, ds) = activation::scale_channels_backward(val(x), val(s).data(), g);
            vec![(*x, dx), (*s, ds)]
        }
        Op::Dropout { x, mask } => {
            vec![(*x, g.iter().zip(mask).map(|(g, m)| *g * *m).collect())]
        }
        Op::CrossEntropy { probs, labels, eps } => {
            vec![(
                *probs,
                reduce::cross_entropy_backward(val(probs), labels, *eps, g[0]),
            )]
        }
        Op::Sum(x) => vec![(*x, vec![g[0]; val(x).numel()])],
        Op::Mean(x) => {
            let n = val(x).numel();
            vec![(*x, vec![g[0] / T::lit(n as f64); n])]
        }
    }
}
