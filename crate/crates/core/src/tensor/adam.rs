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

use serde::{Deserialize, Serialize};

use super::{for_each_prefix_run, Element, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
///
/// Only the box of each parameter that received gradient in the current step
/// is updated (see [`ParamStore::touched`]); entries outside a sampled
/// sub-network keep their values and moments.
#[derive(Clone, Debug)]
pub struct Adam<T: Element = f32> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` and clears the store's
    /// gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let lr = T::lit(lr);
        let eps = T::lit(c.eps);
        let boxes: Vec<(String, Vec<usize>)> = store
            .names()
            .filter_map(|n| store.touched(n).map(|b| (n.to_string(), b.to_vec())))
            .collect();
        for (name, dims) in boxes {
            let p = store.get_mut(&name).expect("touched names exist");
            let shape = p.shape().to_vec();
            let len = p.len();
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (vec![T::zero(); len], vec![T::zero(); len]));
            let grad = p.grad().expect("params carry grads").to_vec();
            let data = p.data_mut();
            for_each_prefix_run(&shape, &dims, |off, n| {
                for i in off..off + n {
                    let g = grad[i];
                    m[i] = b1 * m[i] + one_b1 * g;
                    v[i] = b2 * v[i] + one_b2 * g * g;
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    data[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            });
        }
        store.zero_grad();
    }
}
