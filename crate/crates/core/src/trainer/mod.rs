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

//! Training procedures: teacher training, distillation into a student,
//! once-for-all training over sampled channel configurations, and
//! fine-tuning of an extracted sub-network.
//!
//! All four share one loop. Each iteration takes a discriminator step on
//! the detached generator output, then a generator step against the
//! updated discriminator. Data order and configuration sampling use
//! separate random streams, so a once-for-all run whose choice sets are all
//! singletons retraces plain distillation exactly.

mod model;

pub use model::{disc_in_channels, ModelKind, TrainedModel};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::arch::{ChannelConfig, ChoiceSets, DistillMap, DistillPoint, Generator, ParamMode};
use crate::error::{Error, Result};
use crate::objectives::{
    distill_loss, gan_loss, make_pseudo_pairs, recon_loss, total_loss, GanLossKind, GanRole,
    LossWeights, PairedSet, ReconMode,
};
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    /// Epochs at the initial learning rate.
    pub epochs_const: usize,
    /// Epochs of linear decay towards zero.
    pub epochs_decay: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub gan_loss: GanLossKind,
    /// Validation interval in steps; 0 disables it.
    #[serde(default)]
    pub eval_every: u64,
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::RunConfig(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::RunConfig("batch_size must be positive".into()));
        }
        self.weights.validate()
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        (self.epochs_const + self.epochs_decay) as u64 * self.steps_per_epoch(n)
    }

    /// `lr₀` for the constant phase; then step `i` of `D` decay steps uses
    /// `lr₀·(1 − (i+1)/(D+1))`, ending at `lr₀/(D+1)`.
    pub fn lr_at(&self, step: u64, n: usize) -> f64 {
        let spe = self.steps_per_epoch(n);
        let constant = self.epochs_const as u64 * spe;
        if step < constant {
            return self.lr;
        }
        let decay = self.epochs_decay as u64 * spe;
        let i = step - constant;
        self.lr * (1.0 - (i + 1) as f64 / (decay + 1) as f64)
    }
}

/// What a run trains on. `real` is what the discriminator treats as real,
/// row-aligned with `inputs`; `recon` (when present) is the target of the
/// reconstruction term.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub inputs: Tensor,
    pub recon: Option<Tensor>,
    pub recon_mode: ReconMode,
    pub real: Tensor,
    /// Held-out pairs for periodic validation L1.
    pub val: Option<PairedSet>,
}

impl TrainData {
    /// Ground-truth pairs: reconstruct the target, which is also the real
    /// sample.
    pub fn paired(set: &PairedSet) -> Self {
        TrainData {
            inputs: set.inputs.clone(),
            recon: Some(set.targets.clone()),
            recon_mode: ReconMode::Paired,
            real: set.targets.clone(),
            val: None,
        }
    }

    /// Pseudo pairs `(x, teacher(x))`, used exactly like ground-truth pairs.
    pub fn pseudo(teacher: &TrainedModel, sources: &Tensor) -> Result<Self> {
        let set = make_pseudo_pairs(&teacher.generator, &teacher.g_params, sources)?;
        Ok(TrainData {
            recon_mode: ReconMode::PseudoPaired,
            ..Self::paired(&set)
        })
    }

    /// Adversarial training only: no reconstruction term, real samples come
    /// from an independent target-domain pool.
    pub fn gan_only(inputs: &Tensor, pool: &Tensor) -> Result<Self> {
        if inputs.shape()[0] != pool.shape()[0] {
            return Err(Error::shape(
                "train data",
                format!("{:?} inputs vs {:?} pool", inputs.shape(), pool.shape()),
            ));
        }
        Ok(TrainData {
            inputs: inputs.clone(),
            recon: None,
            recon_mode: ReconMode::Paired,
            real: pool.clone(),
            val: None,
        })
    }

    pub fn with_val(mut self, val: PairedSet) -> Self {
        self.val = Some(val);
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub d_loss: f64,
    pub gan: f64,
    pub recon: Option<f64>,
    pub distill: Option<f64>,
    pub total: f64,
    pub config: Option<ChannelConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_l1: Option<f64>,
}

/// Destination of line-delimited JSON training records.
pub enum TrainLog {
    Discard,
    Memory(Vec<StepRecord>),
    File { path: PathBuf, out: BufWriter<File> },
}

impl TrainLog {
    /// Appends to `path`, creating it if needed.
    pub fn append(path: &Path) -> Result<Self> {
        let f = File::options()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(TrainLog::File {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    fn record(&mut self, r: StepRecord) -> Result<()> {
        match self {
            TrainLog::Discard => Ok(()),
            TrainLog::Memory(v) => {
                v.push(r);
                Ok(())
            }
            TrainLog::File { path, out } => {
                serde_json::to_writer(&mut *out, &r)?;
                out.write_all(b"\n")
                    .map_err(|e| Error::io(path.as_path(), e))
            }
        }
    }

    pub fn flush(&mut self) -> Result<()> {
        if let TrainLog::File { path, out } = self {
            out.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        match self {
            TrainLog::Memory(v) => v,
            _ => &[],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    pub last: Option<StepRecord>,
}

const DATA_SALT: u64 = 0x0DA7_A000;
const CONFIG_SALT: u64 = 0xC0F1_6000;

/// Sampler of training configurations, on its own random stream.
pub struct ConfigSampler {
    rng: SplitMix64,
}

impl ConfigSampler {
    pub fn new(seed: u64) -> Self {
        ConfigSampler {
            rng: SplitMix64::seed_from_u64(seed ^ CONFIG_SALT),
        }
    }

    pub fn sample(&mut self, sets: &ChoiceSets) -> ChannelConfig {
        sets.sample(&mut self.rng)
    }
}

fn adam(plan: &TrainPlan) -> Adam {
    Adam::new(AdamConfig {
        lr: plan.lr,
        ..AdamConfig::default()
    })
}

/// Teacher activations at each distillation point for every training input,
/// computed once without gradients.
fn teacher_features(
    teacher: &TrainedModel,
    points: &[DistillPoint],
    inputs: &Tensor,
) -> Result<Vec<Tensor>> {
    const CHUNK: usize = 16;
    let n = inputs.shape()[0];
    let mut per_point: Vec<Vec<Tensor>> = vec![Vec::new(); points.len()];
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let mut g = Graph::new();
        let x = g.constant(inputs.gather(&idx));
        let out =
            teacher
                .generator
                .forward(&mut g, &teacher.g_params, None, x, ParamMode::Frozen)?;
        for (t, p) in points.iter().enumerate() {
            let v = DistillMap::<f32>::select(&out.taps, p.teacher)?;
            per_point[t].push(g.value(v).clone());
        }
    }
    per_point.iter().map(|v| Tensor::stack(v)).collect()
}

fn d_input(g: &mut Graph, conditional: bool, x: &Tensor, img: Var) -> Result<Var> {
    if conditional {
        let xv = g.constant(x.clone());
        g.concat_channels(xv, img)
    } else {
        Ok(img)
    }
}

fn finite(v: f64, step: u64, term: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence {
            step,
            term: term.into(),
        })
    }
}

/// The shared loop. On error the model holds the weights after the last
/// completed step.
fn run(
    model: &mut TrainedModel,
    teacher: Option<&TrainedModel>,
    data: &TrainData,
    plan: &TrainPlan,
    choices: Option<&ChoiceSets>,
    log: &mut TrainLog,
) -> Result<RunSummary> {
    plan.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::RunConfig("training set is empty".into()));
    }
    if data.real.shape()[0] != n || data.recon.as_ref().is_some_and(|r| r.shape()[0] != n) {
        return Err(Error::shape(
            "train data",
            "inputs, targets and real samples differ in length",
        ));
    }
    let feats = match (teacher, &model.distill) {
        (Some(t), Some(map)) => Some(teacher_features(t, &map.points, &data.inputs)?),
        (Some(_), None) => {
            return Err(Error::Arch(
                "distillation needs a student with distillation maps".into(),
            ))
        }
        _ => None,
    };
    let mut data_rng = SplitMix64::seed_from_u64(plan.seed ^ DATA_SALT);
    let mut sampler = ConfigSampler::new(plan.seed);
    let mut adam_g = adam(plan);
    let mut adam_f = adam(plan);
    let mut adam_d = adam(plan);
    let mut order: Vec<usize> = (0..n).collect();
    let total_steps = plan.total_steps(n);
    let kind = plan.gan_loss;
    let disc = model.discriminator.clone();
    let mut summary = RunSummary::default();
    let mut step = 0u64;
    while step < total_steps {
        order.shuffle(&mut data_rng);
        for batch in order.chunks(plan.batch_size) {
            if step >= total_steps {
                break;
            }
            let lr = plan.lr_at(step, n);
            let config = choices.map(|c| sampler.sample(c));
            let x = data.inputs.gather(batch);

            let mut gg = Graph::new();
            let xv = gg.constant(x.clone());
            let out = model.generator.forward(
                &mut gg,
                &model.g_params,
                config.as_ref(),
                xv,
                ParamMode::Train,
            )?;
            let fake = gg.value(out.out).clone();

            // Discriminator step on the detached output.
            let d_backup = model.d_params.clone();
            let d_loss = {
                let mut gd = Graph::new();
                let rv = gd.constant(data.real.gather(batch));
                let fv = gd.constant(fake);
                let ri = d_input(&mut gd, model.conditional, &x, rv)?;
                let fi = d_input(&mut gd, model.conditional, &x, fv)?;
                let lr_real = disc.forward(&mut gd, &model.d_params, ri, ParamMode::Train)?;
                let lr_fake = disc.forward(&mut gd, &model.d_params, fi, ParamMode::Train)?;
                let l = gan_loss(
                    &mut gd,
                    kind,
                    GanRole::Discriminator,
                    Some(lr_real),
                    lr_fake,
                )?;
                let v = finite(gd.value(l).item() as f64, step, "discriminator")?;
                gd.backward(l)?.accumulate_into(&mut model.d_params)?;
                adam_d.step(&mut model.d_params, lr);
                v
            };

            // Generator step against the updated discriminator.
            let g_side = (|| -> Result<StepRecord> {
                let fi = d_input(&mut gg, model.conditional, &x, out.out)?;
                let logits = disc.forward(&mut gg, &model.d_params, fi, ParamMode::Frozen)?;
                let gan = gan_loss(&mut gg, kind, GanRole::Generator, None, logits)?;
                let recon = match &data.recon {
                    Some(t) => {
                        let tv = gg.constant(t.gather(batch));
                        Some(recon_loss(&mut gg, data.recon_mode, out.out, tv)?)
                    }
                    None => None,
                };
                let distill = match (&feats, &model.distill) {
                    (Some(tf), Some(map)) => {
                        let s = map
                            .points
                            .iter()
                            .map(|p| DistillMap::<f32>::select(&out.taps, p.student))
                            .collect::<Result<Vec<_>>>()?;
                        let t: Vec<Var> = tf.iter().map(|f| gg.constant(f.gather(batch))).collect();
                        Some(distill_loss(&mut gg, map, &s, &t, true)?)
                    }
                    _ => None,
                };
                let total = total_loss(&mut gg, &plan.weights, gan, recon, distill, step)?;
                let rec = StepRecord {
                    step,
                    lr,
                    d_loss,
                    gan: gg.value(gan).item() as f64,
                    recon: recon.map(|v| gg.value(v).item() as f64),
                    distill: distill.map(|v| gg.value(v).item() as f64),
                    total: gg.value(total).item() as f64,
                    config: config.clone(),
                    val_l1: None,
                };
                let grads = std::mem::take(&mut gg).backward(total)?;
                grads.accumulate_into(&mut model.g_params)?;
                if let Some(map) = &mut model.distill {
                    grads.accumulate_into(&mut map.store)?;
                }
                Ok(rec)
            })();
            let mut rec = match g_side {
                Ok(r) => r,
                Err(e) => {
                    model.d_params = d_backup;
                    model.g_params.zero_grad();
                    if let Some(map) = &mut model.distill {
                        map.store.zero_grad();
                    }
                    return Err(e);
                }
            };
            adam_g.step(&mut model.g_params, lr);
            if let Some(map) = &mut model.distill {
                adam_f.step(&mut map.store, lr);
            }
            step += 1;
            if plan.eval_every > 0 && step.is_multiple_of(plan.eval_every) {
                if let Some(val) = &data.val {
                    let cfg = choices.map(ChoiceSets::max_config);
                    let y = model.translate(cfg.as_ref(), &val.inputs)?;
                    rec.val_l1 = Some(crate::metrics::pixel_metrics(&y, &val.targets)?.l1);
                }
            }
            log.record(rec.clone())?;
            summary.last = Some(rec);
            summary.steps = step;
        }
    }
    log.flush()?;
    Ok(summary)
}

/// Trains a teacher with `gan + λ_recon·recon` (no distillation).
pub fn train_teacher(
    model: &mut TrainedModel,
    data: &TrainData,
    plan: &TrainPlan,
    log: &mut TrainLog,
) -> Result<RunSummary> {
    let distill = model.distill.take();
    let r = run(model, None, data, plan, None, log);
    model.distill = distill;
    r
}

/// Trains `student` with the full objective against a frozen `teacher`.
pub fn distill_student(
    student: &mut TrainedModel,
    teacher: &TrainedModel,
    data: &TrainData,
    plan: &TrainPlan,
    log: &mut TrainLog,
) -> Result<RunSummary> {
    run(student, Some(teacher), data, plan, None, log)
}

/// Once-for-all training: each step samples a configuration from the
/// supernet's choice sets and updates only its slices (plus the maps and
/// the shared full-width discriminator).
pub fn train_ofa(
    supernet: &mut TrainedModel,
    teacher: &TrainedModel,
    data: &TrainData,
    plan: &TrainPlan,
    log: &mut TrainLog,
) -> Result<RunSummary> {
    let choices = supernet
        .choice_sets
        .clone()
        .ok_or_else(|| Error::RunConfig("once-for-all training needs choice sets".into()))?;
    choices.validate(supernet.spec())?;
    run(supernet, Some(teacher), data, plan, Some(&choices), log)
}

/// Extracts the sub-network at `config` and continues distillation on it
/// with the inherited discriminator and maps.
pub fn finetune(
    supernet: &TrainedModel,
    config: &ChannelConfig,
    teacher: &TrainedModel,
    data: &TrainData,
    plan: &TrainPlan,
    log: &mut TrainLog,
) -> Result<TrainedModel> {
    let mut m = supernet.extract(config)?;
    distill_student(&mut m, teacher, data, plan, log)?;
    Ok(m)
}

/// Runs `gen` on `inputs` and returns per-set pixel metrics against `targets`.
pub fn validate_l1(
    gen: &Generator,
    store: &ParamStore,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<f64> {
    let y = crate::objectives::run_generator(gen, store, None, inputs)?;
    Ok(crate::metrics::pixel_metrics(&y, targets)?.l1)
}
