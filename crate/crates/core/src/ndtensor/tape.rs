//! Wengert tape: ops are recorded in execution order and replayed in exact
//! reverse order to accumulate gradients.

use crate::error::{Error, Result};

use super::ops::{self, BnMode};
use super::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Node {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, padding: usize },
    ConvT2d { x: Var, w: Var, stride: usize, padding: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<f64>, invstd: Vec<f64>, train: bool },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    BiasAdd { x: Var, b: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize, len: usize },
    Sum { x: Var },
    L1Norm { x: Var },
    L2NormSquared { x: Var },
}

struct Entry {
    node: Node,
    value: Tensor,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, materializing zeros for leaves the root never saw.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape().to_vec()),
        }
    }
}

/// Operation recorder. Single-owner; independent evaluations run on
/// independent tapes.
#[derive(Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.entries[v.0].value
    }

    fn push(&mut self, node: Node, value: Tensor) -> Var {
        self.entries.push(Entry { node, value });
        Var(self.entries.len() - 1)
    }

    /// Record an input tensor.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Node::Leaf, t)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(x), self.value(w), self.value(b), stride, padding)?;
        Ok(self.push(Node::Conv2d { x, w, b, stride, padding }, out))
    }

    pub fn conv2d_transpose(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d_transpose(self.value(x), self.value(w), stride, padding)?;
        Ok(self.push(Node::ConvT2d { x, w, stride, padding }, out))
    }

    /// Returns the output var plus updated running stats in train mode.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        running_mean: &Tensor,
        running_var: &Tensor,
        momentum: f64,
        eps: f64,
    ) -> Result<(Var, Option<(Tensor, Tensor)>)> {
        let fwd = ops::batchnorm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            mode,
            running_mean,
            running_var,
            momentum,
            eps,
        )?;
        let var = self.push(
            Node::BatchNorm {
                x,
                gamma,
                beta,
                mean: fwd.mean,
                invstd: fwd.invstd,
                train: mode == BnMode::Train,
            },
            fwd.out,
        );
        Ok((var, fwd.running_update))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(Node::Relu { x }, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(Node::Add { a, b }, out))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = ops::scale(self.value(x), c);
        self.push(Node::Scale { x, c }, out)
    }

    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = ops::bias_add(self.value(x), self.value(b))?;
        Ok(self.push(Node::BiasAdd { x, b }, out))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&tensors)?;
        Ok(self.push(Node::Concat { parts: parts.to_vec() }, out))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = ops::slice_channels(self.value(x), start, len)?;
        Ok(self.push(Node::Slice { x, start, len }, out))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = ops::sum_all(self.value(x));
        self.push(Node::Sum { x }, out)
    }

    pub fn l1_norm(&mut self, x: Var) -> Var {
        let out = ops::l1_norm(self.value(x));
        self.push(Node::L1Norm { x }, out)
    }

    pub fn l2_norm_squared(&mut self, x: Var) -> Var {
        let out = ops::l2_norm_squared(self.value(x));
        self.push(Node::L2NormSquared { x }, out)
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::arg(
                "backward",
                format!("root must be scalar, got shape {:?}", rv.shape()),
            ));
        }
        self.backward_seeded(root, &Tensor::from_raw(vec![1], vec![1.0]))
    }

    /// Reverse pass from `root` with an explicit output adjoint. Used where
    /// the tail of a composition (a fixed linear measurement operator) lives
    /// outside the tape and contributes the seed via its adjoint.
    pub fn backward_seeded(&self, root: Var, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::shape(
                "backward",
                format!("seed shape {:?} vs root shape {:?}", seed.shape(), self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.entries.len()).map(|_| None).collect();
        grads[root.0] = Some(seed.clone());

        for idx in (0..=root.0).rev() {
            let gy = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.entries[idx].node {
                Node::Leaf => {
                    grads[idx] = Some(gy);
                    continue;
                }
                Node::Conv2d { x, w, b, stride, padding } => {
                    let xt = self.value(*x);
                    let (_, _, h, wd) = xt.dims4()?;
                    let k = self.value(*w).shape()[2];
                    let dx = ops::conv2d_adjoint_data(&gy, self.value(*w), *stride, *padding, h, wd)?;
                    let dw = ops::correlation_kernel_grad(&gy, xt, *stride, *padding, k)?;
                    let db = ops::reduce_bias_grad(&gy)?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *w, dw)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Node::ConvT2d { x, w, stride, padding } => {
                    let k = self.value(*w).shape()[2];
                    let dx = ops::conv2d(&gy, self.value(*w), &Tensor::zeros(vec![self.value(*w).shape()[0]]), *stride, *padding)?;
                    let dw = ops::correlation_kernel_grad(self.value(*x), &gy, *stride, *padding, k)?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *w, dw)?;
                }
                Node::BatchNorm { x, gamma, beta, mean, invstd, train } => {
                    let bg = ops::batchnorm_backward(self.value(*x), self.value(*gamma), mean, invstd, *train, &gy)?;
                    accumulate(&mut grads, *x, bg.dx)?;
                    accumulate(&mut grads, *gamma, bg.dgamma)?;
                    accumulate(&mut grads, *beta, bg.dbeta)?;
                }
                Node::Relu { x } => {
                    let dx = ops::relu_backward(self.value(*x), &gy);
                    accumulate(&mut grads, *x, dx)?;
                }
                Node::Add { a, b } => {
                    accumulate(&mut grads, *a, gy.clone())?;
                    accumulate(&mut grads, *b, gy)?;
                }
                Node::Scale { x, c } => {
                    accumulate(&mut grads, *x, ops::scale(&gy, *c))?;
                }
                Node::BiasAdd { x, b } => {
                    let db = ops::reduce_bias_grad(&gy)?;
                    accumulate(&mut grads, *x, gy)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Node::Concat { parts } => {
                    let mut start = 0;
                    for p in parts {
                        let pc = self.value(*p).shape()[1];
                        let dp = ops::slice_channels(&gy, start, pc)?;
                        accumulate(&mut grads, *p, dp)?;
                        start += pc;
                    }
                }
                Node::Slice { x, start, len } => {
                    let xt = self.value(*x);
                    let (bsz, c_dim, h, w) = xt.dims4()?;
                    let plane = h * w;
                    let mut dx = vec![0.0; xt.numel()];
                    for b in 0..bsz {
                        dx[(b * c_dim + start) * plane..][..len * plane]
                            .copy_from_slice(&gy.data()[b * len * plane..][..len * plane]);
                    }
                    accumulate(&mut grads, *x, Tensor::from_raw(xt.shape().to_vec(), dx))?;
                }
                Node::Sum { x } => {
                    let xt = self.value(*x);
                    let g = gy.item();
                    accumulate(&mut grads, *x, Tensor::from_raw(xt.shape().to_vec(), vec![g; xt.numel()]))?;
                }
                Node::L1Norm { x } => {
                    let xt = self.value(*x);
                    let g = gy.item();
                    let dx = xt
                        .data()
                        .iter()
                        .map(|&v| if v > 0.0 { g } else if v < 0.0 { -g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_raw(xt.shape().to_vec(), dx))?;
                }
                Node::L2NormSquared { x } => {
                    let xt = self.value(*x);
                    let g = gy.item();
                    let dx = xt.data().iter().map(|&v| 2.0 * v * g).collect();
                    accumulate(&mut grads, *x, Tensor::from_raw(xt.shape().to_vec(), dx))?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => {
            let summed = ops::add(existing, &delta)?;
            *existing = summed;
        }
        slot @ None => *slot = Some(delta),
    }
    Ok(())
}
