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
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use super::{ChannelConfig, GeneratorSpec};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, ParamStore, Tensor, Var};

/// Where a distillation feature is read: after the last downsampling stage,
/// or at the output of a (1-based) residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TapSite {
    Down,
    Block(usize),
}

impl TapSite {
    pub fn tag(&self) -> String {
        match self {
            TapSite::Down => "down".into(),
            TapSite::Block(i) => format!("block{i}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillPoint {
    pub student: TapSite,
    pub teacher: TapSite,
    pub teacher_channels: usize,
    /// Full student width at the site; sub-networks read a leading slice.
    pub student_channels: usize,
}

/// Distillation sites and their learnable 1×1 maps from student to teacher
/// features, stored as `distill.{t}.weight` of shape `[C_teacher, C_student, 1, 1]`.
#[derive(Clone, Debug)]
pub struct DistillMap<T: Element = f32> {
    pub points: Vec<DistillPoint>,
    pub store: ParamStore<T>,
}

fn sites(n_blocks: usize) -> Vec<TapSite> {
    let mut v = vec![TapSite::Down];
    v.extend((1..=3).map(|j| TapSite::Block((n_blocks * j).div_ceil(3).max(1))));
    v
}

/// Four distillation points: the downsampling output and the residual
/// blocks at one, two and three thirds of the trunk. Each map starts as the
/// (truncated) identity plus N(0, `noise_std`) noise.
pub fn distill_points<T: Element>(
    teacher: &GeneratorSpec,
    teacher_widths: &ChannelConfig,
    student: &GeneratorSpec,
    student_widths: &ChannelConfig,
    noise_std: f64,
    seed: u64,
) -> Result<DistillMap<T>> {
    if teacher.n_blocks != student.n_blocks {
        return Err(Error::Arch(format!(
            "teacher has {} residual blocks, student has {}",
            teacher.n_blocks, student.n_blocks
        )));
    }
    let trunk = GeneratorSpec::TRUNK;
    let ct = teacher_widths.widths()[trunk];
    let cs = student_widths.widths()[trunk];
    let mut rng = SplitMix64::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std.max(0.0)).map_err(|e| Error::Arch(e.to_string()))?;
    let mut store = ParamStore::new();
    let mut points = Vec::new();
    for (t, site) in sites(student.n_blocks).into_iter().enumerate() {
        let mut w = vec![T::zero(); ct * cs];
        for o in 0..ct {
            for i in 0..cs {
                let base = if o == i { 1.0 } else { 0.0 };
                let n = if noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                w[o * cs + i] = T::lit(base + n);
            }
        }
        store.insert(
            DistillMap::<T>::weight_name(t),
            Tensor::from_vec(vec![ct, cs, 1, 1], w)?,
        );
        points.push(DistillPoint {
            student: site,
            teacher: site,
            teacher_channels: ct,
            student_channels: cs,
        });
    }
    Ok(DistillMap { points, store })
}

impl<T: Element> DistillMap<T> {
    pub fn weight_name(t: usize) -> String {
        format!("distill.{t}.weight")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `f_t` to a student feature of `c` channels (a leading slice
    /// of the map's input channels).
    pub fn project(&self, g: &mut Graph<T>, t: usize, feat: Var, trainable: bool) -> Result<Var> {
        let p = self
            .points
            .get(t)
            .ok_or_else(|| Error::Arch(format!("no distillation point {t}")))?;
        let c = g.shape(feat)[1];
        let dims = [p.teacher_channels, c, 1, 1];
        let name = Self::weight_name(t);
        let w = if trainable {
            g.param(&self.store, &name, Some(&dims))?
        } else {
            g.frozen(&self.store, &name, Some(&dims))?
        };
        g.conv2d(feat, w, None, 1, 0, 1)
    }

    /// Picks the tapped activation for each point out of a tap list.
    pub fn select(taps: &[(String, Var)], site: TapSite) -> Result<Var> {
        let tag = site.tag();
        taps.iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Arch(format!("network has no tap {tag}")))
    }
}
