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

//! Run configuration: one JSON document describing data, networks,
//! schedules, search and which pipeline to execute. Unknown keys are
//! rejected and every section is validated before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{ChoiceSets, DiscriminatorSpec, GeneratorSpec, GeneratorStyle, Part};
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::objectives::{GanLossKind, LossWeights};
use crate::search::{Algo, EvolutionParams, Metric, BRUTE_FORCE_LIMIT};
use crate::trainer::{disc_in_channels, TrainPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    /// Mobile teacher → pre-distillation → once-for-all → brute force →
    /// fine-tuning.
    GanCompression,
    /// Once-for-all straight from the teacher → evolution → fine-tuning.
    FastGanCompression,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Epochs {
    pub epochs_const: usize,
    pub epochs_decay: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    /// The original model to compress.
    pub teacher: GeneratorSpec,
    /// Mobile teacher of the full pipeline; defaults to the teacher with
    /// decomposed residual blocks.
    #[serde(default)]
    pub mobile_teacher: Option<GeneratorSpec>,
    /// Full-width student / once-for-all network.
    pub student: GeneratorSpec,
}

impl GeneratorSection {
    pub fn mobile_teacher(&self) -> GeneratorSpec {
        self.mobile_teacher.clone().unwrap_or_else(|| {
            let mut s = self.teacher.clone();
            s.style = GeneratorStyle::MobileResnet;
            if !s.decompose_parts.contains(&Part::Resblocks) {
                s.decompose_parts.push(Part::Resblocks);
            }
            s
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub eval_every: u64,
    /// Standard deviation of the initial noise on the distillation maps.
    #[serde(default = "default_map_noise")]
    pub map_noise: f64,
    /// Training of the original teacher (skipped when a checkpoint is given).
    pub pretrain: Epochs,
    #[serde(default)]
    pub mobile_teacher: Epochs,
    #[serde(default)]
    pub distill: Epochs,
    pub ofa: Epochs,
    pub finetune: Epochs,
}

fn default_map_noise() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    /// Defaults to brute force for the full pipeline, evolution for the
    /// fast one.
    #[serde(default)]
    pub algo: Option<Algo>,
    /// Absolute MAC budget; exclusive with `budget_divisor`.
    #[serde(default)]
    pub budget_macs: Option<u64>,
    /// Budget as teacher MACs divided by this factor.
    #[serde(default)]
    pub budget_divisor: Option<f64>,
    pub metric: Metric,
    #[serde(default)]
    pub evolution: EvolutionParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub pipeline: PipelineKind,
    pub dataset: DatasetSpec,
    pub generator: GeneratorSection,
    pub discriminator: DiscriminatorSpec,
    pub plan: PlanSection,
    pub weights: LossWeights,
    pub gan_loss: GanLossKind,
    /// Loss for teacher training; defaults to `gan_loss`.
    #[serde(default)]
    pub teacher_gan_loss: Option<GanLossKind>,
    /// Per-group widths of the once-for-all network; defaults to 25, 50, 75
    /// and 100% of each student width.
    #[serde(default)]
    pub choice_sets: Option<ChoiceSets>,
    pub search: SearchSection,
    /// Pre-trained original teacher; skips teacher training.
    #[serde(default)]
    pub teacher_checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::RunConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn choice_sets(&self) -> ChoiceSets {
        self.choice_sets
            .clone()
            .unwrap_or_else(|| ChoiceSets::quarters(&self.generator.student))
    }

    pub fn algo(&self) -> Algo {
        self.search.algo.unwrap_or(match self.pipeline {
            PipelineKind::GanCompression => Algo::Brute,
            PipelineKind::FastGanCompression => Algo::Evolution,
        })
    }

    /// Training plan of a stage.
    pub fn train_plan(&self, epochs: Epochs, seed: u64, gan_loss: GanLossKind) -> TrainPlan {
        TrainPlan {
            epochs_const: epochs.epochs_const,
            epochs_decay: epochs.epochs_decay,
            batch_size: self.plan.batch_size,
            lr: self.plan.lr,
            seed,
            weights: self.weights,
            gan_loss,
            eval_every: self.plan.eval_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::RunConfig(m));
        self.dataset.validate()?;
        let res = self.dataset.resolution;
        let g = &self.generator;
        for (name, spec) in [
            ("teacher", &g.teacher),
            ("mobile_teacher", &g.mobile_teacher()),
            ("student", &g.student),
        ] {
            spec.validate()
                .map_err(|e| Error::RunConfig(format!("generator.{name}: {e}")))?;
            if spec.resolution != res {
                return bad(format!(
                    "generator.{name}.resolution {} differs from the dataset resolution {res}",
                    spec.resolution
                ));
            }
            if spec.n_blocks != g.teacher.n_blocks {
                return bad(format!(
                    "generator.{name} must have as many residual blocks as the teacher"
                ));
            }
            if spec.in_channels != 3 || spec.out_channels != 3 {
                return bad(format!(
                    "generator.{name} must map 3 channels to 3 channels"
                ));
            }
        }
        let need = disc_in_channels(&g.teacher, self.dataset.task.is_paired());
        if self.discriminator.in_channels != need {
            return bad(format!(
                "discriminator.in_channels must be {need} for task {:?}",
                self.dataset.task
            ));
        }
        self.discriminator.validate()?;
        let side = self.discriminator.output_side(res);
        if side == 0 || side > res {
            return bad(format!("discriminator is too deep for {res}x{res} inputs"));
        }
        self.train_plan(self.plan.ofa, 0, self.gan_loss)
            .validate()?;
        if !(self.plan.map_noise >= 0.0 && self.plan.map_noise.is_finite()) {
            return bad("plan.map_noise must be finite and >= 0".into());
        }
        self.choice_sets()
            .validate(&g.student)
            .map_err(|e| Error::RunConfig(format!("choice_sets: {e}")))?;
        match (self.search.budget_macs, self.search.budget_divisor) {
            (Some(_), None) => {}
            (None, Some(d)) if d > 0.0 && d.is_finite() => {}
            _ => {
                return bad(
                    "search needs exactly one of budget_macs or a positive budget_divisor".into(),
                )
            }
        }
        match self.algo() {
            Algo::Evolution => self.search.evolution.validate()?,
            Algo::Brute => {
                let size = self.choice_sets().size();
                if size > BRUTE_FORCE_LIMIT {
                    return bad(format!(
                        "brute-force search over {size} configurations exceeds {BRUTE_FORCE_LIMIT}"
                    ));
                }
            }
        }
        Ok(())
    }
}
