//! Reverse-mode differentiation over an append-only operation list.
//!
//! Nodes are pushed in evaluation order, so the node vector is already a
//! topological order and the backward sweep simply walks it in reverse.
//! Parameters are bound by name: binding the same parameter several times
//! in one tape yields the same node, so a weight set evaluated on several
//! inputs accumulates one gradient.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use super::kernels;
use super::{describe_mismatch, Element, Parameter, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Differentiable operation families, used for reporting and for
/// deliberately corrupting one backward rule in mutation tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    Relu,
    LeakyRelu,
    PixelShuffle,
    Upsample,
    Concat,
    Add,
    Scale,
    Mse,
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::Conv2d,
        OpKind::Relu,
        OpKind::LeakyRelu,
        OpKind::PixelShuffle,
        OpKind::Upsample,
        OpKind::Concat,
        OpKind::Add,
        OpKind::Scale,
        OpKind::Mse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::PixelShuffle => "pixel_shuffle",
            OpKind::Upsample => "upsample_nearest_2x",
            OpKind::Concat => "concat_channels",
            OpKind::Add => "add",
            OpKind::Scale => "scale",
            OpKind::Mse => "mse_loss",
        }
    }

    pub fn parse(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

enum Op {
    Leaf,
    Param,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        groups: usize,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    PixelShuffle(Var, usize),
    Upsample(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Scale(Var, f64),
    Mse(Var, Var),
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf | Op::Param => return None,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu(_) => OpKind::Relu,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::PixelShuffle(..) => OpKind::PixelShuffle,
            Op::Upsample(_) => OpKind::Upsample,
            Op::Concat(_) => OpKind::Concat,
            Op::Add(..) => OpKind::Add,
            Op::Scale(..) => OpKind::Scale,
            Op::Mse(..) => OpKind::Mse,
        })
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    grad_enabled: bool,
    fault: Option<OpKind>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
            fault: None,
        }
    }

    /// A tape on which nothing requires a gradient.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Negates the input gradients produced by every `kind` node. Only
    /// meant for checking that gradient verification catches broken rules.
    #[doc(hidden)]
    pub fn inject_sign_flip(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of the side of zero on which every activation input lies. Two
    /// passes with equal signatures sit in the same linear piece of the
    /// network's piecewise-linear activations.
    pub fn activation_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Relu(x) | Op::LeakyRelu(x, _) = node.op {
                for chunk in self.nodes[x.0].value.data().chunks(64) {
                    let bits = chunk
                        .iter()
                        .enumerate()
                        .fold(0u64, |acc, (i, &v)| acc | (u64::from(v > T::zero()) << i));
                    bits.hash(&mut h);
                }
            }
        }
        h.finish()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is recorded by [`Tape::backward`].
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies the value of `var` into a new constant node: gradients never
    /// flow through the copy.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.nodes[var.0].value.clone();
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter; repeated binds of the same name share one node.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        if let Some(&v) = self.params.get(&p.name) {
            return v;
        }
        let mut value = p.value.clone();
        value.grad = None;
        let v = self.push(value, Op::Param, true);
        self.params.insert(p.name.clone(), v);
        v
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    /// Scalar value of a 1×1×1×1 node.
    pub fn scalar(&self, var: Var) -> Result<T> {
        let v = self.value(var);
        if v.len() != 1 {
            return Err(Error::shape(
                "scalar",
                format!("expected one element, node has shape {}", v.shape()),
            ));
        }
        Ok(v.data()[0])
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, groups: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(input), self.value(weight), self.value(bias), stride, groups)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                groups,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = kernels::relu(self.value(x));
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let out = kernels::leaky_relu(self.value(x), alpha);
        let rg = self.needs(&[x]);
        self.push(out, Op::LeakyRelu(x, alpha), rg)
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = kernels::pixel_shuffle(self.value(x), r)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::PixelShuffle(x, r), rg))
    }

    pub fn upsample_nearest_2x(&mut self, x: Var) -> Var {
        let out = kernels::upsample_nearest_2x(self.value(x));
        let rg = self.needs(&[x]);
        self.push(out, Op::Upsample(x), rg)
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = kernels::concat_channels(&values)?;
        let rg = self.needs(inputs);
        Ok(self.push(out, Op::Concat(inputs.to_vec()), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let out = self.value(x).map(|v| v * f);
        let rg = self.needs(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Mean squared difference as a 1×1×1×1 node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = kernels::mse(self.value(pred), self.value(target))?;
        let rg = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target), rg))
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Empty("sum of zero terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Backpropagates from a scalar node with upstream gradient 1.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {}", self.shape(loss)),
            ));
        }
        self.backward_with(loss, vec![T::one()])
    }

    /// Backpropagates an arbitrary upstream gradient from `root`. Leaf and
    /// parameter nodes keep their gradients in their value's grad slot;
    /// intermediate gradients are released as soon as they are consumed.
    pub fn backward_with(&mut self, root: Var, upstream: Vec<T>) -> Result<()> {
        if upstream.len() != self.value(root).len() {
            return Err(Error::shape(
                "backward",
                format!("upstream length {} vs node shape {}", upstream.len(), self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(upstream);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let contributions = self.local_backward(i, &g)?;
            for (parent, pg) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param) {
                self.nodes[i].value.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }

    fn local_backward(&self, i: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[i];
        let mut out = match &node.op {
            Op::Leaf | Op::Param => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                groups,
            } => {
                let want_input = self.nodes[input.0].requires_grad;
                let grads = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    self.value(*bias),
                    *stride,
                    *groups,
                    g,
                    want_input,
                )?;
                let mut v = vec![(*weight, grads.weight.into_data()), (*bias, grads.bias.into_data())];
                if let Some(dx) = grads.input {
                    v.push((*input, dx.into_data()));
                }
                v
            }
            Op::Relu(x) => vec![(*x, kernels::relu_backward(&node.value, g))],
            Op::LeakyRelu(x, alpha) => {
                vec![(*x, kernels::leaky_relu_backward(self.value(*x), *alpha, g))]
            }
            Op::PixelShuffle(x, r) => {
                let up = Tensor::from_vec(node.value.shape(), g.to_vec())?;
                vec![(*x, kernels::pixel_unshuffle(&up, *r)?.into_data())]
            }
            Op::Upsample(x) => vec![(*x, kernels::upsample_nearest_2x_backward(self.shape(*x), g))],
            Op::Concat(inputs) => {
                let channels: Vec<usize> = inputs.iter().map(|v| self.shape(*v).c).collect();
                let parts = kernels::split_channels(g, node.value.shape(), &channels);
                inputs.iter().copied().zip(parts).collect()
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Scale(x, f) => {
                let f = T::from_f64(*f);
                vec![(*x, g.iter().map(|&v| v * f).collect())]
            }
            Op::Mse(pred, target) => {
                let p = self.value(*pred);
                let t = self.value(*target);
                if p.shape() != t.shape() {
                    return Err(Error::shape("mse_loss", describe_mismatch(p.shape(), t.shape())));
                }
                let k = T::from_f64(2.0 / p.len() as f64) * g[0];
                let dp: Vec<T> = p.data().iter().zip(t.data()).map(|(&a, &b)| k * (a - b)).collect();
                let mut v = Vec::with_capacity(2);
                if self.nodes[target.0].requires_grad {
                    v.push((*target, dp.iter().map(|&x| -x).collect()));
                }
                v.push((*pred, dp));
                v
            }
        };
        if self.fault.is_some() && self.fault == node.op.kind() {
            for (_, grad) in &mut out {
                grad.iter_mut().for_each(|x| *x = -*x);
            }
        }
        Ok(out)
    }

    /// Gradient recorded for a leaf or parameter node.
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].value.grad.as_deref()
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn param_grad(&self, name: &str) -> Option<&[T]> {
        self.param_var(name).and_then(|v| self.grad(v))
    }

    /// Accumulates recorded parameter gradients into `params`' grad slots.
    /// Parameters that never entered this tape are left untouched.
    pub fn write_param_grads<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter<T>>) -> Result<()> {
        for p in params {
            if let Some(g) = self.param_grad(&p.name) {
                p.value.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}
