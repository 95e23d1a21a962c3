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

//! Architecture descriptions, network builders and once-for-all slicing.
//!
//! A generator is described symbolically by a [`GeneratorSpec`]; its widths
//! are split into `5 + n_blocks` prunable groups, and a [`ChannelConfig`]
//! assigns one width to each group. All layer topology lives in a [`Plan`],
//! which the forward pass, parameter initialization, slicing and the cost
//! model all walk.

mod discriminator;
mod distill;
mod generator;
mod plan;

pub use discriminator::{Discriminator, DiscriminatorSpec};
pub use distill::{distill_points, DistillMap, DistillPoint, TapSite};
pub use generator::{GenOutput, Generator, SuperNet};
pub use plan::{ConvLayer, ParamMode, Plan, Step, Width};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorStyle {
    StandardResnet,
    MobileResnet,
}

/// Generator stage whose 3×3 convolutions may be replaced by depthwise +
/// pointwise pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Downsample,
    Resblocks,
    Upsample,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub style: GeneratorStyle,
    pub ngf: usize,
    pub n_blocks: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub resolution: usize,
    pub quantization_step: usize,
    #[serde(default)]
    pub decompose_parts: Vec<Part>,
}

impl GeneratorSpec {
    /// The canonical 9-block ResNet generator at 256×256.
    pub fn resnet(ngf: usize) -> Self {
        GeneratorSpec {
            style: GeneratorStyle::StandardResnet,
            ngf,
            n_blocks: 9,
            in_channels: 3,
            out_channels: 3,
            resolution: 256,
            quantization_step: 8,
            decompose_parts: Vec::new(),
        }
    }

    /// Resblock-decomposed ("mobile") variant of [`GeneratorSpec::resnet`].
    pub fn mobile(ngf: usize) -> Self {
        GeneratorSpec {
            style: GeneratorStyle::MobileResnet,
            decompose_parts: vec![Part::Resblocks],
            ..Self::resnet(ngf)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.quantization_step;
        if q == 0 {
            return Err(Error::Arch("quantization_step must be positive".into()));
        }
        if self.ngf == 0 || !self.ngf.is_multiple_of(q) {
            return Err(Error::Arch(format!(
                "ngf {} must be a positive multiple of the quantization step {q}",
                self.ngf
            )));
        }
        if self.n_blocks == 0 {
            return Err(Error::Arch("n_blocks must be at least 1".into()));
        }
        if self.resolution == 0 || !self.resolution.is_multiple_of(4) {
            return Err(Error::Arch(format!(
                "resolution {} must be a positive multiple of 4",
                self.resolution
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Arch("image channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn decomposes(&self, part: Part) -> bool {
        (part == Part::Resblocks && self.style == GeneratorStyle::MobileResnet)
            || self.decompose_parts.contains(&part)
    }

    /// Number of prunable width groups, `5 + n_blocks`.
    pub fn num_groups(&self) -> usize {
        5 + self.n_blocks
    }

    /// Full widths `(ngf, 2ngf, 4ngf, 4ngf × n_blocks, 2ngf, ngf)`.
    pub fn full_widths(&self) -> ChannelConfig {
        let f = self.ngf;
        let mut c = vec![f, 2 * f, 4 * f];
        c.extend(std::iter::repeat_n(4 * f, self.n_blocks));
        c.extend([2 * f, f]);
        ChannelConfig(c)
    }

    /// Group index of the resblock trunk (shared skip width).
    pub const TRUNK: usize = 2;

    pub fn block_group(&self, block: usize) -> usize {
        3 + block
    }

    /// Groups of `(stem, down1, trunk, inner..., up1, up2)` labelled for display.
    pub fn group_names(&self) -> Vec<String> {
        let mut v = vec!["stem".to_string(), "down1".into(), "trunk".into()];
        v.extend((1..=self.n_blocks).map(|i| format!("block{i}.inner")));
        v.extend(["up1".to_string(), "up2".into()]);
        v
    }
}

/// One channel width per prunable group.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelConfig(pub Vec<usize>);

impl ChannelConfig {
    pub fn widths(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks length, granularity and the upper bound `full`.
    pub fn validate(&self, full: &ChannelConfig, q: usize) -> Result<()> {
        if self.0.len() != full.0.len() {
            return Err(Error::Config(format!(
                "expected {} widths, got {}",
                full.0.len(),
                self.0.len()
            )));
        }
        for (k, (&c, &c0)) in self.0.iter().zip(&full.0).enumerate() {
            if c == 0 || c % q != 0 {
                return Err(Error::Config(format!(
                    "group {k}: width {c} is not a positive multiple of {q}"
                )));
            }
            if c > c0 {
                return Err(Error::Config(format!(
                    "group {k}: width {c} exceeds the full width {c0}"
                )));
            }
        }
        Ok(())
    }

    /// Parses `"c1,c2,..."`.
    pub fn parse(s: &str) -> Result<Self> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("bad width {p:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(ChannelConfig)
    }
}

impl fmt::Display for ChannelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Allowed widths for every group of a once-for-all network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChoiceSets(pub Vec<Vec<usize>>);

impl ChoiceSets {
    /// Each group may take `fraction · full width`, rounded up to the
    /// quantization step, for every listed fraction.
    pub fn fractions(spec: &GeneratorSpec, fractions: &[f64]) -> Self {
        let q = spec.quantization_step;
        ChoiceSets(
            spec.full_widths()
                .0
                .iter()
                .map(|&full| {
                    let mut v: Vec<usize> = fractions
                        .iter()
                        .map(|f| {
                            (((full as f64 * f) / q as f64).ceil() as usize).clamp(1, full / q) * q
                        })
                        .collect();
                    v.sort_unstable();
                    v.dedup();
                    v
                })
                .collect(),
        )
    }

    /// 25%, 50%, 75% and 100% of every width.
    pub fn quarters(spec: &GeneratorSpec) -> Self {
        Self::fractions(spec, &[0.25, 0.5, 0.75, 1.0])
    }

    /// The full width only, in every group.
    pub fn full(spec: &GeneratorSpec) -> Self {
        ChoiceSets(spec.full_widths().0.into_iter().map(|w| vec![w]).collect())
    }

    pub fn validate(&self, spec: &GeneratorSpec) -> Result<()> {
        let full = spec.full_widths();
        if self.0.len() != full.len() {
            return Err(Error::Config(format!(
                "expected choice sets for {} groups, got {}",
                full.len(),
                self.0.len()
            )));
        }
        for (k, set) in self.0.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Config(format!("group {k} has an empty choice set")));
            }
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "group {k}: choices must be strictly increasing"
                )));
            }
        }
        self.max_config().validate(&full, spec.quantization_step)?;
        self.min_config().validate(&full, spec.quantization_step)
    }

    pub fn num_groups(&self) -> usize {
        self.0.len()
    }

    /// Number of configurations, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        self.0
            .iter()
            .fold(1u128, |a, s| a.saturating_mul(s.len() as u128))
    }

    pub fn max_config(&self) -> ChannelConfig {
        ChannelConfig(
            self.0
                .iter()
                .map(|s| *s.last().expect("non-empty"))
                .collect(),
        )
    }

    pub fn min_config(&self) -> ChannelConfig {
        ChannelConfig(self.0.iter().map(|s| s[0]).collect())
    }

    pub fn contains(&self, c: &ChannelConfig) -> bool {
        c.len() == self.0.len() && c.0.iter().zip(&self.0).all(|(w, s)| s.contains(w))
    }

    /// One width per group, each drawn uniformly and independently.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> ChannelConfig {
        ChannelConfig(
            self.0
                .iter()
                .map(|s| s[rng.gen_range(0..s.len())])
                .collect(),
        )
    }
}
