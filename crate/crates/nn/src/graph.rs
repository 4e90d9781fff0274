//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is built per sample: every op call evaluates eagerly and
//! records what the backward pass needs. Nodes are only retained for
//! backward when at least one input requires a gradient, so inference on a
//! frozen store records nothing beyond the values themselves.

use crate::kernels::{col2im, gemm, im2col};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::{NnError, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        k: usize,
        cols: Option<Tensor>,
    },
    Relu {
        input: NodeId,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Upsample2 {
        input: NodeId,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    JointMix {
        branches: Vec<NodeId>,
        weight: NodeId,
        bias: NodeId,
    },
    Mse {
        input: NodeId,
        target: Tensor,
    },
    Sum {
        inputs: Vec<NodeId>,
    },
}

struct Node {
    value: Value,
    op: Op,
    deps: Vec<NodeId>,
    requires_grad: bool,
    label: Option<String>,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.store.value(*p),
        }
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn label(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.0].label.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let deps = op_dependencies(&op);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: if requires_grad { op } else { Op::Leaf },
            deps,
            requires_grad,
            label: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input that never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Constant input carrying a label, for wiring inspection.
    pub fn labeled_input(&mut self, value: Tensor, label: impl Into<String>) -> NodeId {
        let id = self.input(value);
        self.nodes[id.0].label = Some(label.into());
        id
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let requires_grad = self.store.is_trainable(id);
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            deps: Vec::new(),
            requires_grad,
            label: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Same-size 2D convolution: `input [Cin,H,W]`, `weight [Cout,Cin,k,k]`
    /// with odd `k`, `bias [Cout]`.
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(input).dims3()?;
        let ws = self.value(weight).shape().to_vec();
        let [cout, cin, k, k2] = ws[..] else {
            return Err(NnError::Rank {
                expected: 4,
                shape: ws,
            });
        };
        if cin != c || k != k2 || k % 2 == 0 {
            return Err(NnError::ConvShape {
                input: vec![c, h, w],
                weight: ws,
            });
        }
        if self.value(bias).shape() != [cout] {
            return Err(NnError::ShapeMismatch {
                left: self.value(bias).shape().to_vec(),
                right: vec![cout],
            });
        }
        let hw = h * w;
        let kk = c * k * k;
        let requires_grad = [input, weight, bias].iter().any(|&n| self.requires_grad(n));
        let mut out = Tensor::zeros(&[cout, h, w]);
        let cols = if k == 1 {
            None
        } else {
            let mut cols = Tensor::zeros(&[kk, hw]);
            im2col(self.value(input).data(), c, h, w, k, cols.data_mut());
            Some(cols)
        };
        {
            let b_src = match &cols {
                Some(cols) => cols.data(),
                None => self.value(input).data(),
            };
            gemm(
                cout,
                kk,
                hw,
                1.0,
                self.value(weight).data(),
                kk as isize,
                1,
                b_src,
                hw as isize,
                1,
                0.0,
                out.data_mut(),
            );
        }
        let bias_v = self.value(bias).data().to_vec();
        for (co, b) in bias_v.into_iter().enumerate() {
            for v in out.channel_mut(co) {
                *v += b;
            }
        }
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                k,
                cols: if requires_grad { cols } else { None },
            },
            requires_grad,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let rg = self.requires_grad(input);
        self.push(out, Op::Relu { input }, rg)
    }

    /// 2×2 max pooling with stride 2. Odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, input: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(input).dims3()?;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        let mut argmax = vec![0u32; c * oh * ow];
        let src = self.value(input).data();
        for ci in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = (ci * h + 2 * y + dy) * w + 2 * x + dx;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                    let o = (ci * oh + y) * ow + x;
                    out.data_mut()[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::MaxPool2 { input, argmax }, rg))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, input: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(input).dims3()?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        let src = self.value(input).data();
        let dst = out.data_mut();
        for ci in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    dst[(ci * oh + y) * ow + x] = src[(ci * h + y / 2) * w + x / 2];
                }
            }
        }
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::Upsample2 { input }, rg))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs.first().ok_or(NnError::Empty("concat"))?;
        let (_, h, w) = self.value(first).dims3()?;
        let mut total = 0;
        for &id in inputs {
            let (c, hh, ww) = self.value(id).dims3()?;
            if (hh, ww) != (h, w) {
                return Err(NnError::ShapeMismatch {
                    left: vec![h, w],
                    right: vec![hh, ww],
                });
            }
            total += c;
        }
        let mut data = Vec::with_capacity(total * h * w);
        for &id in inputs {
            data.extend_from_slice(self.value(id).data());
        }
        let out = Tensor::from_vec(&[total, h, w], data)?;
        let rg = inputs.iter().any(|&n| self.requires_grad(n));
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Per-channel weighted combination of equally shaped `[J,H,W]` inputs:
    /// `out[j] = Σ_b weight[j,b] · branch_b[j] + bias[j]`, i.e. one
    /// 1×1 convolution filter per channel over the branch axis.
    pub fn joint_mix(
        &mut self,
        branches: &[NodeId],
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId> {
        let first = *branches.first().ok_or(NnError::Empty("joint_mix"))?;
        let (j, h, w) = self.value(first).dims3()?;
        for &b in branches {
            self.value(first).expect_same_shape(self.value(b))?;
        }
        let nb = branches.len();
        if self.value(weight).shape() != [j, nb] || self.value(bias).shape() != [j] {
            return Err(NnError::ShapeMismatch {
                left: self.value(weight).shape().to_vec(),
                right: vec![j, nb],
            });
        }
        let hw = h * w;
        let mut out = Tensor::zeros(&[j, h, w]);
        {
            let wv = self.value(weight).data();
            let bv = self.value(bias).data();
            let dst = out.data_mut();
            for ji in 0..j {
                let o = &mut dst[ji * hw..(ji + 1) * hw];
                o.fill(bv[ji]);
                for (bi, &br) in branches.iter().enumerate() {
                    let coef = wv[ji * nb + bi];
                    let src = &self.value(br).data()[ji * hw..(ji + 1) * hw];
                    for (d, s) in o.iter_mut().zip(src) {
                        *d += coef * s;
                    }
                }
            }
        }
        let rg = branches.iter().any(|&n| self.requires_grad(n))
            || self.requires_grad(weight)
            || self.requires_grad(bias);
        Ok(self.push(
            out,
            Op::JointMix {
                branches: branches.to_vec(),
                weight,
                bias,
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target, as a 1-element tensor.
    pub fn mse(&mut self, input: NodeId, target: &Tensor) -> Result<NodeId> {
        self.value(input).expect_same_shape(target)?;
        let n = target.numel() as f64;
        let s: f64 = self
            .value(input)
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        let rg = self.requires_grad(input);
        Ok(self.push(
            Tensor::scalar((s / n) as f32),
            Op::Mse {
                input,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Sum of 1-element tensors.
    pub fn sum(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let mut s = 0.0f64;
        for &id in inputs {
            let v = self.value(id);
            if v.numel() != 1 {
                return Err(NnError::Rank {
                    expected: 0,
                    shape: v.shape().to_vec(),
                });
            }
            s += v.data()[0] as f64;
        }
        let rg = inputs.iter().any(|&n| self.requires_grad(n));
        Ok(self.push(
            Tensor::scalar(s as f32),
            Op::Sum {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    /// Leaf inputs (by label) that `output` depends on.
    pub fn input_labels_reaching(&self, output: NodeId) -> Vec<String> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![output];
        let mut labels = Vec::new();
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id.0], true) {
                continue;
            }
            let node = &self.nodes[id.0];
            if let Some(l) = &node.label {
                labels.push(l.clone());
            }
            stack.extend(node.deps.iter().copied());
        }
        labels.sort();
        labels.dedup();
        labels
    }

    /// Back-propagates from a 1-element `loss` node and returns the gradient
    /// of every trainable parameter reached.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(NnError::Rank {
                expected: 0,
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Tensor>> = (0..self.store.len()).map(|_| None).collect();
        if !self.requires_grad(loss) {
            return Ok(Gradients { grads: param_grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    accumulate(&mut param_grads[pid.0], g)?;
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    k,
                    cols,
                } => {
                    let (c, h, w) = self.value(*input).dims3()?;
                    let hw = h * w;
                    let kk = c * k * k;
                    let cout = g.shape()[0];
                    let cols_data = match cols {
                        Some(cols) => cols.data(),
                        None => self.value(*input).data(),
                    };
                    if self.requires_grad(*weight) {
                        let mut gw = Tensor::zeros(self.value(*weight).shape());
                        gemm(
                            cout,
                            hw,
                            kk,
                            1.0,
                            g.data(),
                            hw as isize,
                            1,
                            cols_data,
                            1,
                            hw as isize,
                            0.0,
                            gw.data_mut(),
                        );
                        accumulate(&mut grads[weight.0], gw)?;
                    }
                    if self.requires_grad(*bias) {
                        let gb: Vec<f32> = (0..cout)
                            .map(|co| g.channel(co).iter().map(|&v| v as f64).sum::<f64>() as f32)
                            .collect();
                        accumulate(&mut grads[bias.0], Tensor::from_vec(&[cout], gb)?)?;
                    }
                    if self.requires_grad(*input) {
                        let wv = self.value(*weight).data();
                        let mut gi = Tensor::zeros(&[c, h, w]);
                        if *k == 1 {
                            gemm(
                                c,
                                cout,
                                hw,
                                1.0,
                                wv,
                                1,
                                kk as isize,
                                g.data(),
                                hw as isize,
                                1,
                                0.0,
                                gi.data_mut(),
                            );
                        } else {
                            let mut gcols = vec![0.0f32; kk * hw];
                            gemm(
                                kk,
                                cout,
                                hw,
                                1.0,
                                wv,
                                1,
                                kk as isize,
                                g.data(),
                                hw as isize,
                                1,
                                0.0,
                                &mut gcols,
                            );
                            col2im(&gcols, c, h, w, *k, gi.data_mut());
                        }
                        accumulate(&mut grads[input.0], gi)?;
                    }
                }
                Op::Relu { input } => {
                    let mut gi = g;
                    let out = self.value(NodeId(idx)).data();
                    for (gv, &o) in gi.data_mut().iter_mut().zip(out) {
                        if o <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads[input.0], gi)?;
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut gi = Tensor::zeros(self.value(*input).shape());
                    let dst = gi.data_mut();
                    for (gv, &src) in g.data().iter().zip(argmax) {
                        dst[src as usize] += *gv;
                    }
                    accumulate(&mut grads[input.0], gi)?;
                }
                Op::Upsample2 { input } => {
                    let (c, h, w) = self.value(*input).dims3()?;
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut gi = Tensor::zeros(&[c, h, w]);
                    let dst = gi.data_mut();
                    for ci in 0..c {
                        for y in 0..oh {
                            for x in 0..ow {
                                dst[(ci * h + y / 2) * w + x / 2] +=
                                    g.data()[(ci * oh + y) * ow + x];
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], gi)?;
                }
                Op::Concat { inputs } => {
                    let mut offset = 0;
                    for &inp in inputs {
                        let n = self.value(inp).numel();
                        if self.requires_grad(inp) {
                            let part = Tensor::from_vec(
                                self.value(inp).shape(),
                                g.data()[offset..offset + n].to_vec(),
                            )?;
                            accumulate(&mut grads[inp.0], part)?;
                        }
                        offset += n;
                    }
                }
                Op::Add { a, b } => {
                    if self.requires_grad(*b) {
                        accumulate(&mut grads[b.0], g.clone())?;
                    }
                    if self.requires_grad(*a) {
                        accumulate(&mut grads[a.0], g)?;
                    }
                }
                Op::JointMix {
                    branches,
                    weight,
                    bias,
                } => {
                    let (j, h, w) = g.dims3()?;
                    let hw = h * w;
                    let nb = branches.len();
                    let wv = self.value(*weight).data();
                    if self.requires_grad(*weight) {
                        let mut gw = Tensor::zeros(&[j, nb]);
                        for ji in 0..j {
                            let gj = g.channel(ji);
                            for (bi, &br) in branches.iter().enumerate() {
                                let src = &self.value(br).data()[ji * hw..(ji + 1) * hw];
                                let dot: f64 = gj
                                    .iter()
                                    .zip(src)
                                    .map(|(a, b)| (*a as f64) * (*b as f64))
                                    .sum();
                                gw.data_mut()[ji * nb + bi] = dot as f32;
                            }
                        }
                        accumulate(&mut grads[weight.0], gw)?;
                    }
                    if self.requires_grad(*bias) {
                        let gb: Vec<f32> = (0..j)
                            .map(|ji| g.channel(ji).iter().map(|&v| v as f64).sum::<f64>() as f32)
                            .collect();
                        accumulate(&mut grads[bias.0], Tensor::from_vec(&[j], gb)?)?;
                    }
                    for (bi, &br) in branches.iter().enumerate() {
                        if !self.requires_grad(br) {
                            continue;
                        }
                        let mut gb = g.clone();
                        for ji in 0..j {
                            let coef = wv[ji * nb + bi];
                            for v in gb.channel_mut(ji) {
                                *v *= coef;
                            }
                        }
                        accumulate(&mut grads[br.0], gb)?;
                    }
                }
                Op::Mse { input, target } => {
                    let scale = g.data()[0] * 2.0 / target.numel() as f32;
                    let mut gi = self.value(*input).clone();
                    for (v, t) in gi.data_mut().iter_mut().zip(target.data()) {
                        *v = (*v - *t) * scale;
                    }
                    accumulate(&mut grads[input.0], gi)?;
                }
                Op::Sum { inputs } => {
                    for &inp in inputs {
                        if self.requires_grad(inp) {
                            accumulate(&mut grads[inp.0], g.clone())?;
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: param_grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn op_dependencies(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf | Op::Param(_) => vec![],
        Op::Conv2d {
            input,
            weight,
            bias,
            ..
        } => vec![*input, *weight, *bias],
        Op::Relu { input } | Op::MaxPool2 { input, .. } | Op::Upsample2 { input } => vec![*input],
        Op::Mse { input, .. } => vec![*input],
        Op::Concat { inputs } | Op::Sum { inputs } => inputs.clone(),
        Op::Add { a, b } => vec![*a, *b],
        Op::JointMix {
            branches,
            weight,
            bias,
        } => {
            let mut v = branches.clone();
            v.push(*weight);
            v.push(*bias);
            v
        }
    }
}
