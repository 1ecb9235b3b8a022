//! Tape-based reverse-mode differentiation over the tensor kernels.
//!
//! A [`Tape`] records every operation applied to its nodes in execution
//! order; [`Tape::backward`] replays the records in reverse. Nodes created
//! with [`Tape::param`] are trainable and collected into a [`GradientSet`]
//! by name. [`Tape::constant`] and [`Tape::detach`] create nodes that stop
//! gradient flow.

mod check;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{
    self, conv2d, conv2d_weight_grad, conv_transpose2d, conv_transpose2d_sized,
    conv_transpose2d_weight_grad, Activation, BatchNormMode, ConvSpec, Real, Tensor,
};

pub use check::{grad_check, GradCheckOptions, GradCheckReport, ParamReport};

/// Named tensors: model parameters or values shaped like them.
pub type ParamSet<T> = BTreeMap<String, Tensor<T>>;

/// Floor applied to the argument of [`Tape::log`], forward and backward.
pub const LOG_FLOOR: f64 = 1e-12;

/// Every operation kind with a backward rule.
pub const BACKWARD_RULES: &[&str] = &[
    "conv2d",
    "conv_transpose2d",
    "batchnorm2d",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "mean",
    "log",
    "affine",
    "add",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Constant,
    Param(String),
    Conv2d {
        x: Var,
        w: Var,
        spec: ConvSpec,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        mode: BatchNormMode,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    Mean {
        x: Var,
    },
    Log {
        x: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Add {
        a: Var,
        b: Var,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Activation { kind, .. } => kind.name(),
            Op::Mean { .. } => "mean",
            Op::Log { .. } => "log",
            Op::Affine { .. } => "affine",
            Op::Add { .. } => "add",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Gradients of a scalar loss keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T: Real> {
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for GradientSet<T> {
    fn default() -> Self {
        GradientSet {
            grads: BTreeMap::new(),
        }
    }
}

impl<T: Real> GradientSet<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.grads.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<T>) {
        self.grads.insert(name.into(), grad);
    }

    /// Elementwise sum; names present in only one set are kept as is.
    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut grads = self.grads.clone();
        for (name, g) in &other.grads {
            let merged = match grads.get(name) {
                Some(mine) => mine.zip_map(g, |a, b| a + b)?,
                None => g.clone(),
            };
            grads.insert(name.clone(), merged);
        }
        Ok(GradientSet { grads })
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor<T>> {
        self.grads
    }
}

/// Single-owner record of a forward computation.
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Constant => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Operation kind that produced `v`.
    pub fn kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Constant, value, &[])
    }

    /// Trainable leaf collected by [`Tape::backward`] under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.push(Op::Param(name.into()), value, &[])
    }

    /// Gradient boundary: a constant holding the current value of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, spec: &ConvSpec) -> Result<Var> {
        let out = conv2d(self.value(x), self.value(w), spec)?;
        Ok(self.push(Op::Conv2d { x, w, spec: *spec }, out, &[x, w]))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, spec: &ConvSpec) -> Result<Var> {
        let out = conv_transpose2d(self.value(x), self.value(w), spec)?;
        Ok(self.push(Op::ConvTranspose2d { x, w, spec: *spec }, out, &[x, w]))
    }

    /// Batch normalization; running statistics are buffers, updated in
    /// train mode and never differentiated.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        mode: BatchNormMode,
        eps: T,
        momentum: T,
    ) -> Result<Var> {
        let input = self.value(x);
        let (_, c, _, _) = input.dims4()?;
        tensor::norm_check_affine(
            c,
            &[
                ("gamma", self.value(gamma)),
                ("beta", self.value(beta)),
                ("running_mean", running_mean),
                ("running_var", running_var),
            ],
        )?;
        let norm = match mode {
            BatchNormMode::Train => {
                let stats = tensor::norm_train_stats(input)?;
                let norm = tensor::norm_normalize(
                    input,
                    &stats.mean,
                    &stats.var,
                    self.value(gamma),
                    self.value(beta),
                    eps,
                )?;
                tensor::norm_update_running(&stats, running_mean, running_var, momentum);
                norm
            }
            BatchNormMode::Eval => {
                let (m, v) = (running_mean.data(), running_var.data());
                tensor::norm_normalize(input, &m, &v, self.value(gamma), self.value(beta), eps)?
            }
        };
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: norm.xhat,
                inv_std: norm.inv_std,
                mode,
            },
            norm.out,
            &[x, gamma, beta],
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = tensor::activation(self.value(x), kind);
        self.push(Op::Activation { x, kind }, out, &[x])
    }

    /// Mean over all elements; the result has shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        self.push(Op::Mean { x }, out, &[x])
    }

    /// `ln(max(x, 1e-12))`.
    pub fn log(&mut self, x: Var) -> Var {
        let floor = T::from_f64(LOG_FLOOR);
        let out = self.value(x).map(|v| v.max(floor).ln());
        self.push(Op::Log { x }, out, &[x])
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| v * scale + shift);
        self.push(Op::Affine { x, scale }, out, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(Op::Add { a, b }, out, &[a, b]))
    }

    /// Gradient of the scalar at `loss` with respect to every node that
    /// requires one; `None` for nodes the loss does not depend on.
    /// Which side of each non-differentiable point every element lies on:
    /// ReLU and LeakyReLU inputs against 0, log inputs against the clamp floor.
    pub fn branch_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Activation {
                    x,
                    kind: Activation::Relu | Activation::LeakyRelu { .. },
                } => out.extend(self.nodes[x.0].value.data().iter().map(|v| *v > T::zero())),
                Op::Log { x } => {
                    let floor = T::from_f64(LOG_FLOOR);
                    out.extend(self.nodes[x.0].value.data().iter().map(|v| *v > floor));
                }
                _ => {}
            }
        }
        out
    }

    pub fn backward_nodes(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Rank(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one())?);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                self.propagate(id, &g, &mut grads)?;
            }
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], target: Var, g: Tensor<T>) -> Result<()> {
        let slot = &mut grads[target.0];
        *slot = Some(match slot.take() {
            Some(prev) => prev.zip_map(&g, |a, b| a + b)?,
            None => g,
        });
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Conv2d { x, w, spec } => {
                let xv = self.value(*x);
                if self.wants(*x) {
                    let (_, _, h, wd) = xv.dims4()?;
                    let dx = conv_transpose2d_sized(g, self.value(*w), &spec.adjoint(), (h, wd))?;
                    self.accumulate(grads, *x, dx)?;
                }
                if self.wants(*w) {
                    let dw = conv2d_weight_grad(xv, g, spec)?;
                    self.accumulate(grads, *w, dw)?;
                }
            }
            Op::ConvTranspose2d { x, w, spec } => {
                if self.wants(*x) {
                    let dx = conv2d(g, self.value(*w), &spec.adjoint())?;
                    self.accumulate(grads, *x, dx)?;
                }
                if self.wants(*w) {
                    let dw = conv_transpose2d_weight_grad(self.value(*x), g, spec)?;
                    self.accumulate(grads, *w, dw)?;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let (n, c, h, w) = g.dims4()?;
                let plane = h * w;
                let gd = g.data();
                let xh = xhat.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        for i in (s * c + ch) * plane..(s * c + ch + 1) * plane {
                            dbeta[ch] += gd[i];
                            dgamma[ch] += gd[i] * xh[i];
                        }
                    }
                }
                if self.wants(*x) {
                    let gamma_v = self.value(*gamma).data();
                    let m = T::from_f64((n * plane) as f64);
                    let mut dx = vec![T::zero(); gd.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let scale = gamma_v[ch] * inv_std[ch];
                            for i in (s * c + ch) * plane..(s * c + ch + 1) * plane {
                                dx[i] = match mode {
                                    BatchNormMode::Eval => gd[i] * scale,
                                    // full derivative through the batch mean and variance
                                    BatchNormMode::Train => {
                                        scale / m * (m * gd[i] - dbeta[ch] - xh[i] * dgamma[ch])
                                    }
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(g.shape(), dx)?)?;
                }
                if self.wants(*gamma) {
                    self.accumulate(grads, *gamma, Tensor::from_vec(&[c], dgamma)?)?;
                }
                if self.wants(*beta) {
                    self.accumulate(grads, *beta, Tensor::from_vec(&[c], dbeta)?)?;
                }
            }
            Op::Activation { x, kind } => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let gd = g.data();
                let dx = (0..gd.len())
                    .map(|i| gd[i] * kind.derivative(xv[i], yv[i]))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), dx)?)?;
            }
            Op::Mean { x } => {
                let xv = self.value(*x);
                let share = g.data()[0] / T::from_f64(xv.numel() as f64);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), share)?)?;
            }
            Op::Log { x } => {
                let floor = T::from_f64(LOG_FLOOR);
                let dx = g.zip_map(self.value(*x), |gi, xi| gi / xi.max(floor))?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                self.accumulate(grads, *x, g.map(|v| v * s))?;
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.clone())?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.clone())?;
                }
            }
        }
        Ok(())
    }

    /// Gradients of the scalar `loss` for every parameter on the tape.
    ///
    /// Parameters registered more than once under one name receive the
    /// sum of their gradients; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<GradientSet<T>> {
        let node_grads = self.backward_nodes(loss)?;
        let mut set = GradientSet::default();
        for (node, grad) in self.nodes.iter().zip(node_grads) {
            let Op::Param(name) = &node.op else { continue };
            let g = match grad {
                Some(g) => g,
                None => node.value.zeros_like(),
            };
            let merged = match set.grads.remove(name) {
                Some(prev) => g.zip_map(&prev, |a, b| a + b)?,
                None => g,
            };
            set.grads.insert(name.clone(), merged);
        }
        Ok(set)
    }
}
