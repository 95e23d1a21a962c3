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

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use super::plan::{ConvLayer, ParamMode, Plan, Step, Width};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, ParamStore, Var};

/// PatchGAN discriminator description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub ndf: usize,
    pub n_layers: usize,
    /// Condition + image channels when paired, image channels otherwise.
    pub in_channels: usize,
}

impl DiscriminatorSpec {
    pub fn patchgan(ndf: usize, in_channels: usize) -> Self {
        DiscriminatorSpec {
            ndf,
            n_layers: 3,
            in_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ndf == 0 || self.n_layers == 0 || self.in_channels == 0 {
            return Err(Error::Arch(
                "discriminator ndf, n_layers and in_channels must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Spatial side of the logit map for a square input of side `res`.
    pub fn output_side(&self, res: usize) -> usize {
        // 4×4 kernels with padding 1: side -> side/2 for stride 2, side-1 for stride 1.
        let mut s = res;
        for _ in 0..self.n_layers {
            s = (s + 2 - 4) / 2 + 1;
        }
        s - 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    plan: Plan,
}

impl Discriminator {
    pub fn new(spec: &DiscriminatorSpec) -> Result<Self> {
        spec.validate()?;
        use Width::Fixed;
        let mut p = Plan::default();
        let ndf = spec.ndf;
        let mut prev = spec.in_channels;
        for i in 0..=spec.n_layers {
            let width = ndf * (1usize << i.min(3));
            let stride = if i < spec.n_layers { 2 } else { 1 };
            let name = format!("layer{i}");
            p.conv(ConvLayer::conv(
                name.clone(),
                4,
                stride,
                1,
                Fixed(prev),
                Fixed(width),
            ));
            if i > 0 {
                p.norm(format!("{name}.norm"), Fixed(width));
            }
            p.push(Step::LeakyRelu);
            prev = width;
        }
        p.conv(ConvLayer::conv("head", 4, 1, 1, Fixed(prev), Fixed(1)));
        Ok(Discriminator {
            spec: spec.clone(),
            plan: p,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.plan.param_shapes(&[])
    }

    pub fn init_params<T: Element>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = SplitMix64::seed_from_u64(seed);
        self.plan.init_params(&[], &mut rng)
    }

    /// Patch logit map `[N, 1, h, w]`.
    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: ParamMode,
    ) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != self.spec.in_channels {
            return Err(Error::shape(
                "discriminator",
                format!("input {s:?}, expected {} channels", self.spec.in_channels),
            ));
        }
        self.plan.run(g, store, &[], x, mode, &mut Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Shape oracle: apply out = floor((in + 2 - 4)/s) + 1 for s = 2,2,2,1,1.
    fn patch_side(res: usize) -> usize {
        [2usize, 2, 2, 1, 1]
            .iter()
            .fold(res, |s, &st| (s + 2 - 4) / st + 1)
    }

    #[test]
    fn output_side_formula() {
        assert_eq!(patch_side(256), 30);
        assert_eq!(patch_side(64), 6);
        let d = DiscriminatorSpec::patchgan(64, 6);
        assert_eq!(d.output_side(256), 30);
        assert_eq!(d.output_side(64), 6);
        assert_eq!(d.output_side(32), patch_side(32));
    }

    #[test]
    fn widths_double_and_cap() {
        let d = Discriminator::new(&DiscriminatorSpec {
            ndf: 4,
            n_layers: 5,
            in_channels: 3,
        })
        .unwrap();
        let widths: Vec<usize> = d.plan().convs().map(|c| c.weight_shape(&[])[0]).collect();
        assert_eq!(widths, vec![4, 8, 16, 32, 32, 32, 1]);
    }
}
