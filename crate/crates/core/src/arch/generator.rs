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

use super::plan::{ConvLayer, ParamMode, Plan, Step, Width};
use super::{ChannelConfig, GeneratorSpec, Part};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, ParamStore, Var};

/// ResNet image-to-image generator, possibly with decomposed stages, whose
/// parameter store is sized for `widths`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    spec: GeneratorSpec,
    widths: ChannelConfig,
    plan: Plan,
}

pub struct GenOutput {
    pub out: Var,
    /// `("down", ..)` then `("block{i}", ..)` for every resblock.
    pub taps: Vec<(String, Var)>,
}

fn generator_plan(spec: &GeneratorSpec) -> Plan {
    use Width::{Fixed, Group};
    let mut p = Plan::default();
    let nb = spec.n_blocks;
    let trunk = Group(GeneratorSpec::TRUNK);

    p.conv(ConvLayer::conv(
        "stem",
        7,
        1,
        3,
        Fixed(spec.in_channels),
        Group(0),
    ));
    p.norm("stem.norm", Group(0));
    p.push(Step::Relu);

    p.conv(ConvLayer::conv("down1", 3, 2, 1, Group(0), Group(1)));
    p.norm("down1.norm", Group(1));
    p.push(Step::Relu);

    // Only the last strided convolution is decomposed for the downsample part.
    if spec.decomposes(Part::Downsample) {
        separable(&mut p, "down2", 2, Group(1), trunk);
    } else {
        p.conv(ConvLayer::conv("down2", 3, 2, 1, Group(1), trunk));
    }
    p.norm("down2.norm", trunk);
    p.push(Step::Relu);
    p.push(Step::Tap("down".into()));

    let mobile = spec.decomposes(Part::Resblocks);
    for i in 1..=nb {
        let inner = Group(spec.block_group(i - 1));
        let name = format!("block{i}");
        p.push(Step::SaveSkip);
        if mobile {
            separable(&mut p, &format!("{name}.conv1"), 1, trunk, inner);
        } else {
            p.conv(ConvLayer::conv(
                format!("{name}.conv1"),
                3,
                1,
                1,
                trunk,
                inner,
            ));
        }
        p.norm(format!("{name}.norm1"), inner);
        p.push(Step::Relu);
        if mobile {
            separable(&mut p, &format!("{name}.conv2"), 1, inner, trunk);
        } else {
            p.conv(ConvLayer::conv(
                format!("{name}.conv2"),
                3,
                1,
                1,
                inner,
                trunk,
            ));
        }
        p.norm(format!("{name}.norm2"), trunk);
        p.push(Step::AddSkip);
        p.push(Step::Tap(name));
    }

    let up_groups = [(trunk, Group(3 + nb)), (Group(3 + nb), Group(4 + nb))];
    for (j, (cin, cout)) in up_groups.into_iter().enumerate() {
        let name = format!("up{}", j + 1);
        if spec.decomposes(Part::Upsample) {
            p.conv(ConvLayer {
                transposed: true,
                ..ConvLayer::depthwise(format!("{name}.dw"), 3, 2, 1, cin)
            });
            p.norm(format!("{name}.dw_norm"), cin);
            p.push(Step::Relu);
            p.conv(ConvLayer::conv(format!("{name}.pw"), 1, 1, 0, cin, cout));
        } else {
            p.conv(ConvLayer::up(name.clone(), cin, cout));
        }
        p.norm(format!("{name}.norm"), cout);
        p.push(Step::Relu);
    }

    p.conv(ConvLayer::conv(
        "head",
        7,
        1,
        3,
        Group(4 + nb),
        Fixed(spec.out_channels),
    ));
    p.push(Step::Tanh);
    p
}

/// Depthwise 3×3 → norm → relu → pointwise 1×1; the caller appends the
/// closing norm.
fn separable(p: &mut Plan, name: &str, stride: usize, cin: Width, cout: Width) {
    p.conv(ConvLayer::depthwise(
        format!("{name}.dw"),
        3,
        stride,
        1,
        cin,
    ));
    p.norm(format!("{name}.dw_norm"), cin);
    p.push(Step::Relu);
    p.conv(ConvLayer::conv(format!("{name}.pw"), 1, 1, 0, cin, cout));
}

impl Generator {
    /// Full-width generator for `spec`.
    pub fn new(spec: &GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Generator {
            widths: spec.full_widths(),
            plan: generator_plan(spec),
            spec: spec.clone(),
        })
    }

    /// Standalone generator whose own weights have the widths of `config`.
    pub fn with_widths(spec: &GeneratorSpec, config: &ChannelConfig) -> Result<Self> {
        spec.validate()?;
        config.validate(&spec.full_widths(), spec.quantization_step)?;
        Ok(Generator {
            widths: config.clone(),
            plan: generator_plan(spec),
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    /// Widths the parameter store is sized for.
    pub fn widths(&self) -> &ChannelConfig {
        &self.widths
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.plan.param_shapes(self.widths.widths())
    }

    pub fn init_params<T: Element>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = SplitMix64::seed_from_u64(seed);
        self.plan.init_params(self.widths.widths(), &mut rng)
    }

    /// Checks `config` against this network's widths (it may only shrink).
    pub fn check_config(&self, config: &ChannelConfig) -> Result<()> {
        config.validate(&self.widths, self.spec.quantization_step)
    }

    /// Runs the generator at `config` (or the stored widths) on `x`
    /// (`[N, in_channels, H, W]`, H and W divisible by 4).
    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        config: Option<&ChannelConfig>,
        x: Var,
        mode: ParamMode,
    ) -> Result<GenOutput> {
        let widths = match config {
            Some(c) => {
                self.check_config(c)?;
                c.widths()
            }
            None => self.widths.widths(),
        };
        let s = g.shape(x);
        if s.len() != 4
            || s[1] != self.spec.in_channels
            || !s[2].is_multiple_of(4)
            || !s[3].is_multiple_of(4)
            || s[2] == 0
        {
            return Err(Error::shape(
                "generator",
                format!(
                    "input {s:?}: expected [N, {}, H, W] with H, W positive multiples of 4",
                    self.spec.in_channels
                ),
            ));
        }
        let mut taps = Vec::new();
        let out = self.plan.run(g, store, widths, x, mode, &mut taps)?;
        Ok(GenOutput { out, taps })
    }

    /// Copies the leading boxes of `store` selected by `config` into a new
    /// store, together with a standalone generator of those widths.
    pub fn extract<T: Element>(
        &self,
        store: &ParamStore<T>,
        config: &ChannelConfig,
    ) -> Result<(Generator, ParamStore<T>)> {
        self.check_config(config)?;
        let sub = Generator::with_widths(&self.spec, config)?;
        let mut out = ParamStore::new();
        for (name, shape) in sub.param_shapes() {
            out.insert(name.clone(), store.get(&name)?.prefix(&shape)?);
        }
        Ok((sub, out))
    }
}

/// Full-width generator weights shared by every channel configuration.
#[derive(Clone, Debug)]
pub struct SuperNet<T: Element = f32> {
    pub generator: Generator,
    pub store: ParamStore<T>,
}

impl<T: Element> SuperNet<T> {
    pub fn new(spec: &GeneratorSpec, seed: u64) -> Result<Self> {
        let generator = Generator::new(spec)?;
        let store = generator.init_params(seed);
        Ok(SuperNet { generator, store })
    }

    /// Forward pass of the sub-network at `config`. With
    /// [`ParamMode::Train`], gradients accumulate into the matching boxes of
    /// the shared store.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        config: &ChannelConfig,
        x: Var,
        mode: ParamMode,
    ) -> Result<GenOutput> {
        self.generator
            .forward(g, &self.store, Some(config), x, mode)
    }

    pub fn extract(&self, config: &ChannelConfig) -> Result<(Generator, ParamStore<T>)> {
        self.generator.extract(&self.store, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::GeneratorStyle;
    use crate::tensor::Tensor;

    fn toy(style: GeneratorStyle, n_blocks: usize) -> GeneratorSpec {
        GeneratorSpec {
            style,
            ngf: 8,
            n_blocks,
            in_channels: 3,
            out_channels: 3,
            resolution: 16,
            quantization_step: 4,
            decompose_parts: if style == GeneratorStyle::MobileResnet {
                vec![Part::Resblocks]
            } else {
                vec![]
            },
        }
    }

    #[test]
    fn output_shape_and_range() {
        let spec = toy(GeneratorStyle::MobileResnet, 2);
        let net = Generator::new(&spec).unwrap();
        let store = net.init_params::<f32>(3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![2, 3, 16, 16], 0.7));
        let out = net
            .forward(&mut g, &store, None, x, ParamMode::Frozen)
            .unwrap();
        assert_eq!(g.shape(out.out), &[2, 3, 16, 16]);
        assert!(g
            .value(out.out)
            .data()
            .iter()
            .all(|v| (-1.0..=1.0).contains(v)));
        let tags: Vec<_> = out.taps.iter().map(|t| t.0.as_str()).collect();
        assert_eq!(tags, ["down", "block1", "block2"]);
    }

    #[test]
    fn rejects_wrong_config_length() {
        let spec = toy(GeneratorStyle::StandardResnet, 2);
        let net = Generator::new(&spec).unwrap();
        let store = net.init_params::<f32>(0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 3, 8, 8]));
        let bad = ChannelConfig(vec![8; 3]);
        assert!(matches!(
            net.forward(&mut g, &store, Some(&bad), x, ParamMode::Frozen),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rejects_bad_input_shape() {
        let spec = toy(GeneratorStyle::StandardResnet, 1);
        let net = Generator::new(&spec).unwrap();
        let store = net.init_params::<f32>(0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 3, 10, 10]));
        assert!(net
            .forward(&mut g, &store, None, x, ParamMode::Frozen)
            .is_err());
    }

    #[test]
    fn decomposed_parts_change_layer_names() {
        let mut spec = toy(GeneratorStyle::StandardResnet, 1);
        spec.decompose_parts = vec![Part::Downsample, Part::Upsample];
        let net = Generator::new(&spec).unwrap();
        let names: Vec<String> = net.param_shapes().into_iter().map(|p| p.0).collect();
        assert!(names.contains(&"down2.dw.weight".to_string()));
        assert!(names.contains(&"down1.weight".to_string()));
        assert!(names.contains(&"up1.dw.weight".to_string()));
        assert!(names.contains(&"up2.pw.weight".to_string()));
        assert!(names.contains(&"block1.conv1.weight".to_string()));
    }
}
