// Copyright 2026 The gancomp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use super::kernels::{self, ConvGeom, NormSaved};
use super::{Element, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param {
        store: u64,
        name: String,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Norm {
        x: Var,
        scale: Var,
        shift: Var,
        saved: NormSaved<T>,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Softplus(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Square(Var),
    Abs(Var),
    Scale(Var, T),
    AddScalar(Var),
    Mean(Var),
    Sum(Var),
    ConcatChannels(Var, Var),
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of executed operations. Ops run eagerly; [`Graph::backward`] performs
/// one reverse sweep over the record and consumes it.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn input(&mut self, mut value: Tensor<T>, requires_grad: bool) -> Var {
        value.requires_grad = false;
        value.grad = None;
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// Leaf reading the leading box `dims` of a stored parameter (the whole
    /// tensor when `dims` is `None`). Its gradient is routed back to that box.
    pub fn param(
        &mut self,
        store: &ParamStore<T>,
        name: &str,
        dims: Option<&[usize]>,
    ) -> Result<Var> {
        let value = Self::read_param(store, name, dims)?;
        Ok(self.push(
            value,
            Op::Param {
                store: store.id(),
                name: name.to_string(),
            },
            true,
        ))
    }

    /// Like [`Graph::param`] but without gradient: the value is a constant.
    pub fn frozen(
        &mut self,
        store: &ParamStore<T>,
        name: &str,
        dims: Option<&[usize]>,
    ) -> Result<Var> {
        let value = Self::read_param(store, name, dims)?;
        Ok(self.constant(value))
    }

    fn read_param(store: &ParamStore<T>, name: &str, dims: Option<&[usize]>) -> Result<Tensor<T>> {
        let full = store.get(name)?;
        let mut value = match dims {
            Some(d) if d != full.shape() => full.prefix(d)?,
            _ => full.clone(),
        };
        value.set_requires_grad(false);
        Ok(value)
    }

    /// Same value, cut from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad, groups)?;
        self.check_bias("conv2d", b, geom.cout)?;
        let mut out = vec![T::zero(); geom.out_shape().iter().product()];
        kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::from_vec(geom.out_shape().to_vec(), out)?;
        Ok(self.push(value, Op::Conv { x, w, b, geom }, rg))
    }

    /// Doubling transposed convolution (k=3, s=2, p=1, output_padding=1).
    /// `w` is `[Cin, Cout/groups, 3, 3]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        groups: usize,
    ) -> Result<Var> {
        let geom = kernels::transposed_geom(self.shape(x), self.shape(w), groups)?;
        self.check_bias("conv_transpose2d", b, geom.cin)?;
        let out_shape = [geom.n, geom.cin, geom.h, geom.w];
        let mut out = vec![T::zero(); out_shape.iter().product()];
        kernels::conv2d_backward_input(&geom, self.value(x).data(), self.value(w).data(), &mut out);
        if let Some(b) = b {
            let bias = self.value(b).data();
            let hw = geom.h * geom.w;
            for (p, plane) in out.chunks_mut(hw).enumerate() {
                let bv = bias[p % geom.cin];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::from_vec(out_shape.to_vec(), out)?;
        Ok(self.push(value, Op::ConvTranspose { x, w, b, geom }, rg))
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(Error::shape(
                    op,
                    format!("bias shape {:?}, expected [{channels}]", self.shape(b)),
                ));
            }
        }
        Ok(())
    }

    /// Per-(sample, channel) normalization with affine scale/shift.
    pub fn instance_norm(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 || shape[2] * shape[3] == 0 {
            return Err(Error::shape("instance_norm", format!("input {shape:?}")));
        }
        for (what, v) in [("scale", scale), ("shift", shift)] {
            if self.shape(v) != [shape[1]] {
                return Err(Error::shape(
                    "instance_norm",
                    format!("{what} shape {:?}, expected [{}]", self.shape(v), shape[1]),
                ));
            }
        }
        let mut out = vec![T::zero(); self.value(x).len()];
        let saved = kernels::instance_norm_forward(
            &shape,
            self.value(x).data(),
            self.value(scale).data(),
            self.value(shift).data(),
            T::lit(eps),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(scale) || self.rg(shift);
        let value = Tensor::from_vec(shape, out)?;
        Ok(self.push(
            value,
            Op::Norm {
                x,
                scale,
                shift,
                saved,
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            Op::Relu(x),
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        self.unary(
            x,
            move |v| if v > T::zero() { v } else { v * s },
            Op::LeakyRelu(x, s),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, T::abs, Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        self.unary(x, move |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        self.unary(x, move |v| v + c, Op::AddScalar(x))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum::<T>() / T::lit(t.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Concatenates two `[N,C,H,W]` tensors along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape("concat_channels", format!("{sa:?} vs {sb:?}")));
        }
        let hw = sa[2] * sa[3];
        let (pa, pb) = (sa[1] * hw, sb[1] * hw);
        let mut data = Vec::with_capacity(sa[0] * (pa + pb));
        for n in 0..sa[0] {
            data.extend_from_slice(&self.value(a).data()[n * pa..][..pa]);
            data.extend_from_slice(&self.value(b).data()[n * pb..][..pb]);
        }
        let value = Tensor::from_vec(vec![sa[0], sa[1] + sb[1], sa[2], sa[3]], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatChannels(a, b), rg))
    }

    /// Reverse sweep from a one-element `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut nodes = self.nodes;
        for i in (0..nodes.len()).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            let (before, rest) = nodes.split_at_mut(i);
            let node = &rest[0];
            backprop(before, node, &gy, &mut grads);
            if matches!(node.op, Op::Leaf | Op::Param { .. }) {
                grads[i] = Some(gy);
            }
        }
        let mut out = Gradients {
            vars: Vec::new(),
            params: Vec::new(),
        };
        for (i, (node, g)) in nodes.into_iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if !node.requires_grad {
                continue;
            }
            match node.op {
                Op::Leaf => out
                    .vars
                    .push((i, Tensor::from_vec(node.value.shape().to_vec(), g)?)),
                Op::Param { store, name } => out.params.push(ParamGrad {
                    store,
                    name,
                    dims: node.value.shape().to_vec(),
                    grad: g,
                }),
                _ => {}
            }
        }
        Ok(out)
    }
}

fn softplus<T: Element>(v: T) -> T {
    if v > T::zero() {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn acc<T: Element>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
    f(slot);
}

fn elementwise<T: Element>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    x: Var,
    gy: &[T],
    df: impl Fn(T, T) -> T,
) {
    let xs = nodes[x.0].value.data();
    acc(grads, nodes, x, |g| {
        for ((g, &gv), &xv) in g.iter_mut().zip(gy).zip(xs) {
            *g += df(gv, xv);
        }
    });
}

fn backprop<T: Element>(nodes: &[Node<T>], node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
    match &node.op {
        Op::Leaf | Op::Param { .. } => {}
        Op::Conv { x, w, b, geom } => {
            let (x, w) = (*x, *w);
            if nodes[x.0].requires_grad {
                let wd = nodes[w.0].value.data();
                acc(grads, nodes, x, |g| {
                    kernels::conv2d_backward_input(geom, gy, wd, g)
                });
            }
            let need_w = nodes[w.0].requires_grad;
            let need_b = b.is_some_and(|b| nodes[b.0].requires_grad);
            if need_w || need_b {
                let xd = nodes[x.0].value.data();
                let mut gw = vec![T::zero(); nodes[w.0].value.len()];
                let mut gb = b.map(|b| vec![T::zero(); nodes[b.0].value.len()]);
                kernels::conv2d_backward_weight(geom, xd, gy, &mut gw, gb.as_deref_mut());
                if need_w {
                    acc(grads, nodes, w, |g| add_into(g, &gw));
                }
                if let (Some(b), Some(gb)) = (b, gb) {
                    acc(grads, nodes, *b, |g| add_into(g, &gb));
                }
            }
        }
        Op::ConvTranspose { x, w, b, geom } => {
            // y = conv2d_backward_input(x, w), so dx = conv2d(dy, w) and
            // dw = weight-gradient of a convolution of dy producing x.
            let (x, w) = (*x, *w);
            if nodes[x.0].requires_grad {
                let wd = nodes[w.0].value.data();
                let mut tmp = vec![T::zero(); nodes[x.0].value.len()];
                kernels::conv2d_forward(geom, gy, wd, None, &mut tmp);
                acc(grads, nodes, x, |g| add_into(g, &tmp));
            }
            if nodes[w.0].requires_grad {
                let xd = nodes[x.0].value.data();
                acc(grads, nodes, w, |g| {
                    kernels::conv2d_backward_weight(geom, gy, xd, g, None)
                });
            }
            if let Some(b) = b {
                let hw = geom.h * geom.w;
                let c = geom.cin;
                acc(grads, nodes, *b, |g| {
                    for (p, plane) in gy.chunks(hw).enumerate() {
                        g[p % c] += plane.iter().copied().sum::<T>();
                    }
                });
            }
        }
        Op::Norm {
            x,
            scale,
            shift,
            saved,
        } => {
            let shape = nodes[x.0].value.shape();
            let sc = nodes[scale.0].value.data();
            let mut gx = nodes[x.0]
                .requires_grad
                .then(|| vec![T::zero(); nodes[x.0].value.len()]);
            let mut gs = nodes[scale.0]
                .requires_grad
                .then(|| vec![T::zero(); sc.len()]);
            let mut gb = nodes[shift.0]
                .requires_grad
                .then(|| vec![T::zero(); sc.len()]);
            kernels::instance_norm_backward(
                shape,
                saved,
                sc,
                gy,
                gx.as_deref_mut(),
                gs.as_deref_mut(),
                gb.as_deref_mut(),
            );
            for (v, g) in [(*x, gx), (*scale, gs), (*shift, gb)] {
                if let Some(g) = g {
                    acc(grads, nodes, v, |dst| add_into(dst, &g));
                }
            }
        }
        Op::Relu(x) => elementwise(grads, nodes, *x, gy, |g, v| {
            if v > T::zero() {
                g
            } else {
                T::zero()
            }
        }),
        Op::LeakyRelu(x, s) => {
            let s = *s;
            elementwise(
                grads,
                nodes,
                *x,
                gy,
                move |g, v| if v > T::zero() { g } else { g * s },
            )
        }
        Op::Tanh(x) => {
            let ys = node.value.data();
            acc(grads, nodes, *x, |g| {
                for ((g, &gv), &y) in g.iter_mut().zip(gy).zip(ys) {
                    *g += gv * (T::one() - y * y);
                }
            });
        }
        Op::Softplus(x) => elementwise(grads, nodes, *x, gy, |g, v| g * sigmoid(v)),
        Op::Square(x) => {
            let two = T::lit(2.0);
            elementwise(grads, nodes, *x, gy, move |g, v| g * two * v)
        }
        Op::Abs(x) => elementwise(grads, nodes, *x, gy, |g, v| {
            if v > T::zero() {
                g
            } else if v < T::zero() {
                -g
            } else {
                T::zero()
            }
        }),
        Op::Scale(x, c) => {
            let c = *c;
            elementwise(grads, nodes, *x, gy, move |g, _| g * c)
        }
        Op::AddScalar(x) => acc(grads, nodes, *x, |g| add_into(g, gy)),
        Op::Add(a, b) => {
            acc(grads, nodes, *a, |g| add_into(g, gy));
            acc(grads, nodes, *b, |g| add_into(g, gy));
        }
        Op::Sub(a, b) => {
            acc(grads, nodes, *a, |g| add_into(g, gy));
            acc(grads, nodes, *b, |g| {
                g.iter_mut().zip(gy).for_each(|(g, &v)| *g -= v)
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            acc(grads, nodes, *a, |g| {
                for ((g, &gv), &o) in g.iter_mut().zip(gy).zip(bv) {
                    *g += gv * o;
                }
            });
            acc(grads, nodes, *b, |g| {
                for ((g, &gv), &o) in g.iter_mut().zip(gy).zip(av) {
                    *g += gv * o;
                }
            });
        }
        Op::Sum(x) => {
            let g0 = gy[0];
            acc(grads, nodes, *x, |g| g.iter_mut().for_each(|v| *v += g0));
        }
        Op::Mean(x) => {
            let g0 = gy[0] / T::lit(nodes[x.0].value.len() as f64);
            acc(grads, nodes, *x, |g| g.iter_mut().for_each(|v| *v += g0));
        }
        Op::ConcatChannels(a, b) => {
            let sa = nodes[a.0].value.shape();
            let sb = nodes[b.0].value.shape();
            let hw = sa[2] * sa[3];
            let (pa, pb) = (sa[1] * hw, sb[1] * hw);
            acc(grads, nodes, *a, |g| {
                for n in 0..sa[0] {
                    add_into(&mut g[n * pa..][..pa], &gy[n * (pa + pb)..][..pa]);
                }
            });
            acc(grads, nodes, *b, |g| {
                for n in 0..sa[0] {
                    add_into(&mut g[n * pb..][..pb], &gy[n * (pa + pb) + pa..][..pb]);
                }
            });
        }
    }
}

fn add_into<T: Element>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

struct ParamGrad<T> {
    store: u64,
    name: String,
    dims: Vec<usize>,
    grad: Vec<T>,
}

/// Result of a reverse sweep: gradients of trainable inputs and parameters.
pub struct Gradients<T: Element = f32> {
    vars: Vec<(usize, Tensor<T>)>,
    params: Vec<ParamGrad<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of an input leaf created with `requires_grad = true`.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.vars.iter().find(|(i, _)| *i == v.0).map(|(_, t)| t)
    }

    /// Adds every parameter gradient that belongs to `store` into its grad
    /// buffers, at the box each leaf was read from. Returns how many leaves
    /// were applied.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<usize> {
        let mut n = 0;
        let id = store.id();
        for p in self.params.iter().filter(|p| p.store == id) {
            store.accumulate_prefix(&p.name, &p.dims, &p.grad)?;
            n += 1;
        }
        Ok(n)
    }

    /// Scalar check for non-finite gradient values.
    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.grad.iter().all(|v| v.is_finite()))
            && self
                .vars
                .iter()
                .all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }
}
