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

//! Analytic multiply-accumulate (MAC) and parameter counts.
//!
//! Convolutions cost `Hout·Wout·Cout·(Cin/g)·K²`; transposed convolutions
//! are counted at their output resolution, `Hout·Wout·Cin·(Cout/g)·K²`.
//! Normalization, activations and bias additions cost nothing. Parameters
//! are weights plus biases plus two affine values per normalized channel.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arch::{
    ChannelConfig, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Plan, Step,
};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    pub macs: u64,
    pub params: u64,
    /// `[C, H, W]` of the layer output.
    pub output_shape: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_params: u64,
}

impl CostReport {
    fn from_layers(layers: Vec<LayerCost>) -> Self {
        let total_macs = layers.iter().map(|l| l.macs).sum();
        let total_params = layers.iter().map(|l| l.params).sum();
        CostReport {
            layers,
            total_macs,
            total_params,
        }
    }

    pub fn gmacs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.total_params as f64 / 1e6
    }
}

/// Walks a plan from an input of `in_channels × side × side`.
pub fn plan_cost(plan: &Plan, widths: &[usize], in_channels: usize, side: usize) -> CostReport {
    let (mut c, mut h, mut w) = (in_channels, side, side);
    let mut layers = Vec::new();
    for step in &plan.steps {
        match step {
            Step::Conv(conv) => {
                let ci = conv.cin.resolve(widths);
                let co = conv.cout.resolve(widths);
                let k = conv.kernel as u64;
                let groups = conv.groups(widths) as u64;
                debug_assert_eq!(ci, c, "plan input width mismatch at {}", conv.name);
                let (oh, ow) = if conv.transposed {
                    (2 * h, 2 * w)
                } else {
                    (
                        (h + 2 * conv.pad - conv.kernel) / conv.stride + 1,
                        (w + 2 * conv.pad - conv.kernel) / conv.stride + 1,
                    )
                };
                let spatial = (oh * ow) as u64;
                let (ci, co) = (ci as u64, co as u64);
                let macs = if conv.transposed {
                    spatial * ci * (co / groups) * k * k
                } else {
                    spatial * co * (ci / groups) * k * k
                };
                let weights = k * k * ci * co / groups;
                let bias = if conv.bias { co } else { 0 };
                let kind = match (conv.depthwise, conv.transposed, conv.kernel) {
                    (true, true, _) => "depthwise_transpose",
                    (true, false, _) => "depthwise",
                    (false, true, _) => "conv_transpose",
                    (false, false, 1) => "pointwise",
                    _ => "conv",
                };
                c = co as usize;
                h = oh;
                w = ow;
                layers.push(LayerCost {
                    name: conv.name.clone(),
                    kind: kind.into(),
                    macs,
                    params: weights + bias,
                    output_shape: [c, h, w],
                });
            }
            Step::Norm { name, ch } => {
                let ch = ch.resolve(widths);
                layers.push(LayerCost {
                    name: name.clone(),
                    kind: "instance_norm".into(),
                    macs: 0,
                    params: 2 * ch as u64,
                    output_shape: [c, h, w],
                });
            }
            _ => {}
        }
    }
    CostReport::from_layers(layers)
}

/// Cost of a generator at `config` (full width when `None`) on a square
/// `resolution` input.
pub fn generator_cost(
    spec: &GeneratorSpec,
    config: Option<&ChannelConfig>,
    resolution: usize,
) -> Result<CostReport> {
    let net = Generator::new(spec)?;
    let full = spec.full_widths();
    let widths = match config {
        Some(c) => {
            net.check_config(c)?;
            c
        }
        None => &full,
    };
    Ok(plan_cost(
        net.plan(),
        widths.widths(),
        spec.in_channels,
        resolution,
    ))
}

pub fn discriminator_cost(spec: &DiscriminatorSpec, resolution: usize) -> Result<CostReport> {
    let net = Discriminator::new(spec)?;
    Ok(plan_cost(net.plan(), &[], spec.in_channels, resolution))
}

/// Strict budget test: total MACs `<` `budget`.
pub fn under_budget(report: &CostReport, budget: u64) -> bool {
    report.total_macs < budget
}

/// Display helper: `56.8G`, `11.38M`.
pub struct Scaled(pub u64, pub f64, pub &'static str, pub usize);

impl fmt::Display for Scaled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.*}{}", self.3, self.0 as f64 / self.1, self.2)
    }
}

pub fn giga(v: u64) -> Scaled {
    Scaled(v, 1e9, "G", 1)
}

pub fn mega(v: u64) -> Scaled {
    Scaled(v, 1e6, "M", 2)
}

/// Fixed-width text table of a report, one line per layer plus totals.
pub fn render_table(report: &CostReport) -> String {
    let mut s = format!(
        "{:<22} {:<20} {:>16} {:>12}  {}\n",
        "layer", "type", "MACs", "params", "output"
    );
    for l in &report.layers {
        s.push_str(&format!(
            "{:<22} {:<20} {:>16} {:>12}  {}x{}x{}\n",
            l.name,
            l.kind,
            l.macs,
            l.params,
            l.output_shape[0],
            l.output_shape[1],
            l.output_shape[2]
        ));
    }
    s.push_str(&format!(
        "total: {:.1} G MACs ({} MACs), {:.2} M params ({} params)\n",
        report.gmacs(),
        report.total_macs,
        report.mparams(),
        report.total_params
    ));
    s
}
