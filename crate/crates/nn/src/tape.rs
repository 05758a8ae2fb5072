//! Record-then-replay reverse-mode differentiation over the handful of ops
//! the segmentation networks need.

use crate::conv::{self, ConvSpec};
use crate::error::{NnError, Result};
use crate::params::{Grads, ParamId, ParamSet};
use crate::tensor::Tensor;

pub const IN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Conv {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        spec: ConvSpec,
    },
    InstanceNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        arg: Vec<usize>,
    },
    Upsample(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Sigmoid(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

/// Result of a backward pass: parameter gradients plus gradients of every
/// input node (indexed by `Var`).
pub struct Gradients {
    pub params: Grads,
    inputs: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn input(&self, v: Var) -> Option<&Tensor> {
        self.inputs.get(v.0).and_then(Option::as_ref)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, x: Tensor) -> Var {
        self.push(x, Op::Input)
    }

    pub fn conv(&mut self, x: Var, w: ParamId, b: Option<ParamId>, spec: ConvSpec) -> Result<Var> {
        let y = conv::conv3d(self.value(x), self.params.get(w), b.map(|b| self.params.get(b)), spec)?;
        Ok(self.push(y, Op::Conv { x, w, b, spec }))
    }

    /// Per-sample, per-channel normalization over space with affine
    /// `gamma`, `beta`.
    pub fn instance_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId) -> Var {
        let xv = self.value(x);
        let (c, n) = (xv.channels(), xv.voxels());
        let (g, bt) = (self.params.get(gamma), self.params.get(beta));
        let mut xhat = xv.clone();
        let mut y = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.batch() * c);
        for (bc, chunk) in xhat.data_mut().chunks_mut(n).enumerate() {
            let mean = chunk.iter().sum::<f64>() / n as f64;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + IN_EPS).sqrt();
            for v in chunk.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
            let ch = bc % c;
            for (o, h) in y.data_mut()[bc * n..(bc + 1) * n].iter_mut().zip(chunk.iter()) {
                *o = g[ch] * h + bt[ch];
            }
        }
        self.push(
            y,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x))
    }

    pub fn max_pool(&mut self, x: Var, k: [usize; 3]) -> Result<Var> {
        let (y, arg) = conv::max_pool(self.value(x), k)?;
        Ok(self.push(y, Op::MaxPool { x, arg }))
    }

    pub fn upsample(&mut self, x: Var, size: [usize; 3]) -> Var {
        let y = conv::upsample_nearest(self.value(x), size);
        self.push(y, Op::Upsample(x))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(xs[0]).shape();
        let mut channels = 0;
        for &v in xs {
            let s = self.value(v).shape();
            if s[0] != first[0] || s[2..] != first[2..] {
                return Err(NnError::Shape(format!("cannot concatenate {s:?} with {first:?}")));
            }
            channels += s[1];
        }
        let mut y = Tensor::zeros([first[0], channels, first[2], first[3], first[4]]);
        for b in 0..first[0] {
            let mut off = 0;
            let out = y.sample_mut(b);
            for &v in xs {
                let s = self.nodes[v.0].value.sample(b);
                out[off..off + s.len()].copy_from_slice(s);
                off += s.len();
            }
        }
        Ok(self.push(y, Op::Concat(xs.to_vec())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::Shape("add operands differ in shape".into()));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(y, Op::Sigmoid(x))
    }

    /// Propagates the seed gradients `(var, dL/dvar)` back to parameters
    /// and input nodes.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.value(v).shape() {
                return Err(NnError::Shape(format!(
                    "seed gradient {:?} for value {:?}",
                    g.shape(),
                    self.value(v).shape()
                )));
            }
            accumulate(&mut grads[v.0], g);
        }
        let mut pg = self.params.zero_grads();
        let mut inputs: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for i in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => inputs[i] = Some(gy),
                Op::Conv { x, w, b, spec } => {
                    let xv = self.value(*x);
                    let mut gb = b.map(|b| std::mem::take(&mut pg.values[b.0]));
                    conv::conv3d_weight_grad(xv, &gy, *spec, pg.get_mut(*w), gb.as_deref_mut())?;
                    if let (Some(b), Some(gb)) = (b, gb) {
                        pg.values[b.0] = gb;
                    }
                    let gx = conv::conv3d_input_grad(&gy, self.params.get(*w), *spec, xv.shape())?;
                    accumulate(&mut grads[x.0], gx);
                }
                Op::InstanceNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (c, n) = (gy.channels(), gy.voxels());
                    let g = self.params.get(*gamma);
                    let mut gx = Tensor::zeros(gy.shape());
                    for (bc, is) in inv_std.iter().enumerate() {
                        let ch = bc % c;
                        let r = bc * n..(bc + 1) * n;
                        let (dy, h) = (&gy.data()[r.clone()], &xhat.data()[r.clone()]);
                        let sum_dy: f64 = dy.iter().sum();
                        let sum_dyh: f64 = dy.iter().zip(h).map(|(a, b)| a * b).sum();
                        pg.get_mut(*gamma)[ch] += sum_dyh;
                        pg.get_mut(*beta)[ch] += sum_dy;
                        let k = g[ch] * is / n as f64;
                        for ((o, &d), &hh) in gx.data_mut()[r].iter_mut().zip(dy).zip(h) {
                            *o = k * (n as f64 * d - sum_dy - hh * sum_dyh);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Relu(x) => {
                    let mut gx = gy;
                    for (g, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::MaxPool { x, arg } => {
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    for (&g, &at) in gy.data().iter().zip(arg) {
                        gx.data_mut()[at] += g;
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Upsample(x) => {
                    let gx = conv::upsample_nearest_grad(&gy, self.value(*x).spatial());
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Concat(xs) => {
                    let mut offs = vec![0usize; gy.batch()];
                    for &v in xs {
                        let shape = self.value(v).shape();
                        let mut gx = Tensor::zeros(shape);
                        for (b, off) in offs.iter_mut().enumerate() {
                            let dst = gx.sample_mut(b);
                            let len = dst.len();
                            dst.copy_from_slice(&gy.sample(b)[*off..*off + len]);
                            *off += len;
                        }
                        accumulate(&mut grads[v.0], gx);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], gy.clone());
                    accumulate(&mut grads[a.0], gy);
                }
                Op::Sigmoid(x) => {
                    let mut gx = gy;
                    for (g, &p) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *g *= p * (1.0 - p);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
        }
        Ok(Gradients { params: pg, inputs })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}
