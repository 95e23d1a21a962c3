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

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{for_each_prefix_run, Element, Tensor};
use crate::error::{Error, Result};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Named trainable tensors plus their gradient buffers.
///
/// Graph leaves created from a store remember the store's identity and the
/// leading box they read, so gradients flow back to exactly that box. The
/// union of boxes written since the last [`ParamStore::zero_grad`] is tracked
/// per tensor; the optimizer only updates inside it.
#[derive(Debug)]
pub struct ParamStore<T: Element = f32> {
    id: u64,
    params: BTreeMap<String, Tensor<T>>,
    touched: BTreeMap<String, Vec<usize>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            id: next_id(),
            params: self.params.clone(),
            touched: self.touched.clone(),
        }
    }
}

impl<T: Element> PartialEq for ParamStore<T> {
    /// Compares names and values bitwise; gradients and identity are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((na, a), (nb, b))| {
                    na == nb
                        && a.shape() == b.shape()
                        && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits_eq(*y))
                })
    }
}

trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<T: Element> BitsEq for T {
    fn to_bits_eq(self, other: Self) -> bool {
        // NaN payloads aside, equal bit patterns <=> equal values except ±0.
        (self == other && self.is_sign_negative() == other.is_sign_negative())
            || (self.is_nan() && other.is_nan())
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            id: next_id(),
            params: BTreeMap::new(),
            touched: BTreeMap::new(),
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub fn insert(&mut self, name: impl Into<String>, mut value: Tensor<T>) {
        value.set_requires_grad(true);
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Arch(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Arch(format!("no parameter named {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
        self.touched.clear();
    }

    /// Leading box of `name` that received gradient since the last reset.
    pub fn touched(&self, name: &str) -> Option<&[usize]> {
        self.touched.get(name).map(Vec::as_slice)
    }

    /// Adds `grad` (shaped like the box `dims`) into the gradient of `name`.
    pub(crate) fn accumulate_prefix(
        &mut self,
        name: &str,
        dims: &[usize],
        grad: &[T],
    ) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Arch(format!("no parameter named {name}")))?;
        let shape = p.shape().to_vec();
        if dims.len() != shape.len() || dims.iter().zip(&shape).any(|(d, s)| d > s) {
            return Err(Error::shape(
                "param grad",
                format!("box {dims:?} outside {name} {shape:?}"),
            ));
        }
        let g = p.grad_mut().expect("stored params carry a grad buffer");
        let mut off = 0;
        for_each_prefix_run(&shape, dims, |dst, len| {
            for (a, &b) in g[dst..dst + len].iter_mut().zip(&grad[off..off + len]) {
                *a += b;
            }
            off += len;
        });
        let t = self
            .touched
            .entry(name.to_string())
            .or_insert_with(|| vec![0; dims.len()]);
        for (t, &d) in t.iter_mut().zip(dims) {
            *t = (*t).max(d);
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, v) in &self.params {
            out.insert(k.clone(), v.cast());
        }
        out
    }

    /// Copies every tensor of `other` whose name exists here, checking shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, src) in &other.params {
            let dst = self.get_mut(name)?;
            if dst.shape() != src.shape() {
                return Err(Error::shape(
                    "load params",
                    format!("{name}: {:?} vs {:?}", dst.shape(), src.shape()),
                ));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}
