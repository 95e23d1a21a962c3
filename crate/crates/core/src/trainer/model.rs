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

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{
    distill_points, ChannelConfig, ChoiceSets, Discriminator, DiscriminatorSpec, DistillMap,
    DistillPoint, Generator, GeneratorSpec,
};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::tensor::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Teacher,
    Student,
    Supernet,
    Finetuned,
}

/// A generator with its discriminator and (for students) distillation maps.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub generator: Generator,
    pub g_params: ParamStore,
    pub discriminator: Discriminator,
    pub d_params: ParamStore,
    /// The discriminator sees `concat(input, image)` rather than the image.
    pub conditional: bool,
    pub distill: Option<DistillMap>,
    pub choice_sets: Option<ChoiceSets>,
}

/// Everything about a model except its tensors; stored as the checkpoint's
/// architecture blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchRecord {
    kind: ModelKind,
    generator: GeneratorSpec,
    widths: ChannelConfig,
    discriminator: DiscriminatorSpec,
    conditional: bool,
    distill_points: Option<Vec<DistillPoint>>,
    choice_sets: Option<ChoiceSets>,
}

const G: &str = "g.";
const D: &str = "d.";

/// Discriminator input channels for a generator spec.
pub fn disc_in_channels(spec: &GeneratorSpec, conditional: bool) -> usize {
    spec.out_channels + if conditional { spec.in_channels } else { 0 }
}

impl TrainedModel {
    /// Freshly initialized teacher. `ndf`/`n_layers` shape the PatchGAN.
    pub fn init_teacher(
        spec: &GeneratorSpec,
        ndf: usize,
        n_layers: usize,
        conditional: bool,
        seed: u64,
    ) -> Result<Self> {
        let generator = Generator::new(spec)?;
        let d_spec = DiscriminatorSpec {
            ndf,
            n_layers,
            in_channels: disc_in_channels(spec, conditional),
        };
        let discriminator = Discriminator::new(&d_spec)?;
        Ok(TrainedModel {
            kind: ModelKind::Teacher,
            g_params: generator.init_params(seed),
            d_params: discriminator.init_params(seed ^ 0xD15C),
            generator,
            discriminator,
            conditional,
            distill: None,
            choice_sets: None,
        })
    }

    /// A student (or supernet, with `choice_sets`) of `spec` for `teacher`.
    /// With `inherit_d` the student starts from the teacher's
    /// discriminator; otherwise the discriminator is freshly initialized.
    /// Maps start at the identity plus N(0, `map_noise`).
    pub fn init_student(
        teacher: &TrainedModel,
        spec: &GeneratorSpec,
        choice_sets: Option<ChoiceSets>,
        inherit_d: bool,
        map_noise: f64,
        seed: u64,
    ) -> Result<Self> {
        let generator = Generator::new(spec)?;
        if let Some(c) = &choice_sets {
            c.validate(spec)?;
        }
        let d_params = if inherit_d {
            teacher.d_params.clone()
        } else {
            teacher.discriminator.init_params(seed ^ 0xD15C)
        };
        let distill = distill_points(
            teacher.generator.spec(),
            teacher.generator.widths(),
            spec,
            generator.widths(),
            map_noise,
            seed ^ 0xF7,
        )?;
        Ok(TrainedModel {
            kind: if choice_sets.is_some() {
                ModelKind::Supernet
            } else {
                ModelKind::Student
            },
            g_params: generator.init_params(seed),
            generator,
            discriminator: teacher.discriminator.clone(),
            d_params,
            conditional: teacher.conditional,
            distill: Some(distill),
            choice_sets,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        self.generator.spec()
    }

    /// Standalone copy of the sub-network at `config`, keeping the
    /// discriminator and slicing the distillation maps to the new trunk.
    pub fn extract(&self, config: &ChannelConfig) -> Result<TrainedModel> {
        let (generator, g_params) = self.generator.extract(&self.g_params, config)?;
        let distill = match &self.distill {
            Some(map) => {
                let trunk = config.widths()[GeneratorSpec::TRUNK];
                let mut store = ParamStore::new();
                let mut points = map.points.clone();
                for (t, p) in points.iter_mut().enumerate() {
                    let name = DistillMap::<f32>::weight_name(t);
                    store.insert(
                        name.clone(),
                        map.store
                            .get(&name)?
                            .prefix(&[p.teacher_channels, trunk, 1, 1])?,
                    );
                    p.student_channels = trunk;
                }
                Some(DistillMap { points, store })
            }
            None => None,
        };
        Ok(TrainedModel {
            kind: ModelKind::Finetuned,
            generator,
            g_params,
            discriminator: self.discriminator.clone(),
            d_params: self.d_params.clone(),
            conditional: self.conditional,
            distill,
            choice_sets: None,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let arch = ArchRecord {
            kind: self.kind,
            generator: self.spec().clone(),
            widths: self.generator.widths().clone(),
            discriminator: self.discriminator.spec().clone(),
            conditional: self.conditional,
            distill_points: self.distill.as_ref().map(|m| m.points.clone()),
            choice_sets: self.choice_sets.clone(),
        };
        let mut c = Checkpoint::new(serde_json::to_value(arch).expect("plain data"));
        c.add_store(G, &self.g_params);
        c.add_store(D, &self.d_params);
        if let Some(m) = &self.distill {
            c.add_store("", &m.store);
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let arch: ArchRecord = serde_json::from_value(c.arch.clone())
            .map_err(|e| Error::Malformed(format!("architecture blob: {e}")))?;
        let generator = Generator::with_widths(&arch.generator, &arch.widths)?;
        let discriminator = Discriminator::new(&arch.discriminator)?;
        let g_shapes = generator.param_shapes();
        let d_shapes = discriminator.param_shapes();
        let map_shapes: Vec<(String, Vec<usize>)> = arch
            .distill_points
            .iter()
            .flatten()
            .enumerate()
            .map(|(t, p)| {
                (
                    DistillMap::<f32>::weight_name(t),
                    vec![p.teacher_channels, p.student_channels, 1, 1],
                )
            })
            .collect();
        let expected: BTreeSet<String> = g_shapes
            .iter()
            .map(|(n, _)| format!("{G}{n}"))
            .chain(d_shapes.iter().map(|(n, _)| format!("{D}{n}")))
            .chain(map_shapes.iter().map(|(n, _)| n.clone()))
            .collect();
        c.check_names(&expected)?;
        let distill = match arch.distill_points {
            Some(points) => Some(DistillMap {
                points,
                store: c.take_store("", &map_shapes)?,
            }),
            None => None,
        };
        Ok(TrainedModel {
            kind: arch.kind,
            g_params: c.take_store(G, &g_shapes)?,
            d_params: c.take_store(D, &d_shapes)?,
            generator,
            discriminator,
            conditional: arch.conditional,
            distill,
            choice_sets: arch.choice_sets,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Runs the generator (frozen) over `[N, C, H, W]` inputs.
    pub fn translate(&self, config: Option<&ChannelConfig>, inputs: &Tensor) -> Result<Tensor> {
        crate::objectives::run_generator(&self.generator, &self.g_params, config, inputs)
    }
}
