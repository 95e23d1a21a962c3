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

//! Dense tensors and a small reverse-mode autodiff engine.
//!
//! Values live in [`Tensor`]. Computation is recorded on a [`Graph`] tape and
//! differentiated with a single reverse sweep. Trainable weights are held in a
//! [`ParamStore`] and enter a graph as (optionally channel-sliced) leaves, so a
//! sub-network's gradients land back in the full-width store.

mod adam;
mod graph;
pub mod kernels;
mod param;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, Var};
pub use param::ParamStore;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type a tensor can hold. `f32` is the working precision; `f64`
/// exists for tight gradient checks.
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits the element type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Element for f32 {}
impl Element for f64 {}

/// N-dimensional row-major array. Image tensors use `[N, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} holds {n} values, data has {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(vec![1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Marks the tensor trainable and allocates a zeroed gradient buffer;
    /// clearing the flag drops the buffer.
    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        self.grad = if on {
            Some(vec![T::zero(); self.data.len()])
        } else {
            None
        };
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn grad_mut(&mut self) -> Option<&mut Vec<T>> {
        self.grad.as_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Copies the leading box `dims` (one extent per axis, each ≤ the tensor's)
    /// into a new contiguous tensor.
    pub fn prefix(&self, dims: &[usize]) -> Result<Self> {
        check_prefix(&self.shape, dims)?;
        let mut out = Vec::with_capacity(dims.iter().product());
        for_each_prefix_run(&self.shape, dims, |src, len| {
            out.extend_from_slice(&self.data[src..src + len]);
        });
        Tensor::from_vec(dims.to_vec(), out)
    }

    /// Overwrites the leading box of `self` with `src` (shaped like the box).
    pub fn write_prefix(&mut self, src: &Tensor<T>) -> Result<()> {
        check_prefix(&self.shape, &src.shape)?;
        let mut off = 0;
        let data = &mut self.data;
        for_each_prefix_run(&self.shape, &src.shape, |dst, len| {
            data[dst..dst + len].copy_from_slice(&src.data[off..off + len]);
            off += len;
        });
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::lit(v.as_f64())).collect()),
        }
    }

    /// Sample `i` of a batched tensor, keeping a leading batch axis of 1.
    pub fn sample(&self, i: usize) -> Tensor<T> {
        let per: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::from_vec(shape, self.data[i * per..(i + 1) * per].to_vec())
            .expect("sample shape is consistent")
    }

    /// Rows `indices` of axis 0, in that order.
    pub fn gather(&self, indices: &[usize]) -> Tensor<T> {
        let per: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::from_vec(shape, data).expect("gather shape is consistent")
    }

    /// Concatenates tensors along axis 0.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors"))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if &t.shape[1..] != tail {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Tensor::from_vec(shape, data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor::from_vec(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
        .expect("same shape")
    }
}

fn check_prefix(shape: &[usize], dims: &[usize]) -> Result<()> {
    if dims.len() != shape.len() || dims.iter().zip(shape).any(|(d, s)| d > s) {
        return Err(Error::shape(
            "prefix",
            format!("box {dims:?} does not fit inside {shape:?}"),
        ));
    }
    Ok(())
}

/// Calls `f(offset, len)` for every contiguous run of the leading box `dims`
/// inside a row-major array of `shape`, in row-major order.
pub(crate) fn for_each_prefix_run(
    shape: &[usize],
    dims: &[usize],
    mut f: impl FnMut(usize, usize),
) {
    if dims.contains(&0) {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0, 1);
        return;
    }
    // Trailing axes that are taken whole merge into a single run.
    let mut split = rank;
    while split > 0 && dims[split - 1] == shape[split - 1] {
        split -= 1;
    }
    let inner: usize = shape[split..].iter().product();
    if split == 0 {
        f(0, inner);
        return;
    }
    let run = dims[split - 1] * inner;
    let mut strides = vec![0usize; split];
    let mut acc = inner;
    for ax in (0..split).rev() {
        strides[ax] = acc;
        acc *= shape[ax];
    }
    let mut idx = vec![0usize; split - 1];
    loop {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        f(off, run);
        let mut ax = split - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}
