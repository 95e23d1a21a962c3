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

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, ParamStore, Tensor, Var};

/// Channel count of a layer endpoint: fixed, or taken from a prunable group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Width {
    Fixed(usize),
    Group(usize),
}

impl Width {
    pub fn resolve(self, widths: &[usize]) -> usize {
        match self {
            Width::Fixed(c) => c,
            Width::Group(k) => widths[k],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub cin: Width,
    pub cout: Width,
    /// One filter per channel (`groups = channels`, `cin == cout`).
    pub depthwise: bool,
    /// Doubling transposed convolution (stride 2, pad 1, output padding 1).
    pub transposed: bool,
    pub bias: bool,
}

impl ConvLayer {
    pub fn conv(
        name: impl Into<String>,
        kernel: usize,
        stride: usize,
        pad: usize,
        cin: Width,
        cout: Width,
    ) -> Self {
        ConvLayer {
            name: name.into(),
            kernel,
            stride,
            pad,
            cin,
            cout,
            depthwise: false,
            transposed: false,
            bias: true,
        }
    }

    pub fn depthwise(
        name: impl Into<String>,
        kernel: usize,
        stride: usize,
        pad: usize,
        ch: Width,
    ) -> Self {
        ConvLayer {
            depthwise: true,
            ..Self::conv(name, kernel, stride, pad, ch, ch)
        }
    }

    pub fn up(name: impl Into<String>, cin: Width, cout: Width) -> Self {
        ConvLayer {
            transposed: true,
            ..Self::conv(name, 3, 2, 1, cin, cout)
        }
    }

    pub fn groups(&self, widths: &[usize]) -> usize {
        if self.depthwise {
            self.cin.resolve(widths)
        } else {
            1
        }
    }

    /// Weight shape at the given widths: `[Cout, Cin/g, k, k]`, or
    /// `[Cin, Cout/g, k, k]` for transposed layers.
    pub fn weight_shape(&self, widths: &[usize]) -> [usize; 4] {
        let (ci, co) = (self.cin.resolve(widths), self.cout.resolve(widths));
        let k = self.kernel;
        match (self.depthwise, self.transposed) {
            (true, _) => [ci, 1, k, k],
            (false, false) => [co, ci, k, k],
            (false, true) => [ci, co, k, k],
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    Conv(ConvLayer),
    Norm {
        name: String,
        ch: Width,
    },
    Relu,
    LeakyRelu,
    Tanh,
    /// Remember the current activation as a residual source.
    SaveSkip,
    /// Add the most recently saved activation.
    AddSkip,
    /// Expose the current activation under a tag (distillation site).
    Tap(String),
}

/// Ordered layer program of a network.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Plan {
    pub steps: Vec<Step>,
}

pub(crate) const NORM_EPS: f64 = 1e-5;
pub(crate) const LEAKY_SLOPE: f64 = 0.2;
const INIT_STD: f64 = 0.02;

/// Whether a forward pass records parameter gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamMode {
    Train,
    Frozen,
}

impl Plan {
    pub fn push(&mut self, s: Step) {
        self.steps.push(s);
    }

    pub fn conv(&mut self, c: ConvLayer) {
        self.steps.push(Step::Conv(c));
    }

    pub fn norm(&mut self, name: impl Into<String>, ch: Width) {
        self.steps.push(Step::Norm {
            name: name.into(),
            ch,
        });
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvLayer> {
        self.steps.iter().filter_map(|s| match s {
            Step::Conv(c) => Some(c),
            _ => None,
        })
    }

    /// Every parameter as `(name, shape at the given widths)`, in plan order.
    pub fn param_shapes(&self, widths: &[usize]) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for s in &self.steps {
            match s {
                Step::Conv(c) => {
                    out.push((c.weight_name(), c.weight_shape(widths).to_vec()));
                    if c.bias {
                        out.push((c.bias_name(), vec![c.cout.resolve(widths)]));
                    }
                }
                Step::Norm { name, ch } => {
                    let c = ch.resolve(widths);
                    out.push((format!("{name}.scale"), vec![c]));
                    out.push((format!("{name}.shift"), vec![c]));
                }
                _ => {}
            }
        }
        out
    }

    /// Conv weights ~ N(0, 0.02), biases 0, norm scale 1 and shift 0.
    pub fn init_params<T: Element, R: Rng>(&self, widths: &[usize], rng: &mut R) -> ParamStore<T> {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut store = ParamStore::new();
        for (name, shape) in self.param_shapes(widths) {
            let n: usize = shape.iter().product();
            let t = if name.ends_with(".weight") {
                let data = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
                Tensor::from_vec(shape, data).expect("consistent")
            } else if name.ends_with(".scale") {
                Tensor::ones(shape)
            } else {
                Tensor::zeros(shape)
            };
            store.insert(name, t);
        }
        store
    }

    /// Runs the plan on `x` reading parameters at `widths` (a leading box of
    /// each stored tensor). Tapped activations are appended to `taps`.
    pub fn run<T: Element>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        widths: &[usize],
        x: Var,
        mode: ParamMode,
        taps: &mut Vec<(String, Var)>,
    ) -> Result<Var> {
        let mut h = x;
        let mut skips = Vec::new();
        let p = |g: &mut Graph<T>, name: &str, dims: &[usize]| -> Result<Var> {
            match mode {
                ParamMode::Train => g.param(store, name, Some(dims)),
                ParamMode::Frozen => g.frozen(store, name, Some(dims)),
            }
        };
        for s in &self.steps {
            h = match s {
                Step::Conv(c) => {
                    let w = p(g, &c.weight_name(), &c.weight_shape(widths))?;
                    let b = if c.bias {
                        Some(p(g, &c.bias_name(), &[c.cout.resolve(widths)])?)
                    } else {
                        None
                    };
                    let groups = c.groups(widths);
                    if c.transposed {
                        g.conv_transpose2d(h, w, b, groups)?
                    } else {
                        g.conv2d(h, w, b, c.stride, c.pad, groups)?
                    }
                }
                Step::Norm { name, ch } => {
                    let c = ch.resolve(widths);
                    let scale = p(g, &format!("{name}.scale"), &[c])?;
                    let shift = p(g, &format!("{name}.shift"), &[c])?;
                    g.instance_norm(h, scale, shift, NORM_EPS)?
                }
                Step::Relu => g.relu(h),
                Step::LeakyRelu => g.leaky_relu(h, LEAKY_SLOPE),
                Step::Tanh => g.tanh(h),
                Step::SaveSkip => {
                    skips.push(h);
                    h
                }
                Step::AddSkip => {
                    let s = skips
                        .pop()
                        .ok_or_else(|| Error::Arch("residual add without a saved input".into()))?;
                    g.add(h, s)?
                }
                Step::Tap(tag) => {
                    taps.push((tag.clone(), h));
                    h
                }
            };
        }
        Ok(h)
    }
}
