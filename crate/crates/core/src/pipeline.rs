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

//! End-to-end compression recipes with resumable stages.
//!
//! Every stage writes its output plus a `<stage>.done` marker holding a hash
//! chained from the run configuration and all earlier stages. A rerun skips
//! a stage whose marker matches; any mismatch recomputes it and everything
//! after it. One run owns its artifacts directory through a lock file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::arch::{ChannelConfig, GeneratorSpec};
use crate::config::{PipelineKind, RunConfig};
use crate::cost::generator_cost;
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::io::{fnv1a, write_atomic};
use crate::metrics::{evaluate_images, EvalMetrics};
use crate::objectives::PairedSet;
use crate::search::{
    brute_force_search, evolution_search, Algo, SearchResult, SpecCost, ValidationFitness,
};
use crate::trainer::{self, TrainData, TrainLog, TrainedModel};

/// Exclusive ownership of an artifacts directory for one run.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Compression stages each recipe trains through (teacher pre-training is
/// separate and skippable).
pub fn training_stages(kind: PipelineKind) -> &'static [&'static str] {
    match kind {
        PipelineKind::GanCompression => &["mobile_teacher", "distill", "ofa", "finetune"],
        PipelineKind::FastGanCompression => &["ofa", "finetune"],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub macs: u64,
    pub params: u64,
    pub metrics: EvalMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudentSummary {
    pub config: ChannelConfig,
    pub macs: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Compression {
    pub macs: f64,
    pub params: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchSummary {
    pub algo: Algo,
    pub budget_macs: u64,
    pub evaluations: u64,
    pub best_fitness: f64,
}

/// Final report: the teacher row, the searched student without and with
/// fine-tuning, and compression ratios relative to the teacher.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub pipeline: PipelineKind,
    pub seed: u64,
    pub training_stages: Vec<String>,
    pub teacher: ModelSummary,
    pub student: StudentSummary,
    pub compression: Compression,
    pub search: SearchSummary,
    pub without_finetuning: EvalMetrics,
    pub finetuned: EvalMetrics,
}

/// Artifacts of a finished run.
#[derive(Debug)]
pub struct PipelineRun {
    pub dir: PathBuf,
    pub report: serde_json::Value,
    /// Stages executed in this invocation (the rest were resumed).
    pub executed: Vec<String>,
}

struct Stages {
    dir: PathBuf,
    chain: u64,
    /// Set once a stage recomputes; everything after it recomputes too.
    dirty: bool,
    executed: Vec<String>,
}

impl Stages {
    fn advance(&mut self, name: &str, salt: &[u8]) -> String {
        let mut bytes = self.chain.to_le_bytes().to_vec();
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(salt);
        self.chain = fnv1a(&bytes);
        format!("{:016x}", self.chain)
    }

    /// Loads the stage output when its marker matches, otherwise computes,
    /// saves and marks it.
    fn run<T>(
        &mut self,
        name: &str,
        file: &str,
        load: impl Fn(&Path) -> Result<T>,
        save: impl Fn(&T, &Path) -> Result<()>,
        compute: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let hash = self.advance(name, &[]);
        let marker = self.dir.join(format!("{name}.done"));
        let out = self.dir.join(file);
        if !self.dirty && fs::read_to_string(&marker).is_ok_and(|h| h.trim() == hash) {
            if let Ok(v) = load(&out) {
                return Ok(v);
            }
        }
        let wrap = |e: Error| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        };
        self.dirty = true;
        let _ = fs::remove_file(&marker);
        let log = self.dir.join(format!("{name}.log.jsonl"));
        let _ = fs::remove_file(&log);
        let v = compute(&log).map_err(wrap)?;
        save(&v, &out).map_err(wrap)?;
        write_atomic(&marker, hash.as_bytes()).map_err(wrap)?;
        self.executed.push(name.to_string());
        Ok(v)
    }
}

fn stage_seed(seed: u64, name: &str) -> u64 {
    seed ^ fnv1a(name.as_bytes())
}

fn save_model(m: &TrainedModel, p: &Path) -> Result<()> {
    m.save(p)
}

/// Validation inputs, FFD references and pixel targets.
struct Validation {
    inputs: crate::tensor::Tensor,
    references: crate::tensor::Tensor,
    targets: crate::tensor::Tensor,
}

fn validation(ds: &Dataset) -> Result<Validation> {
    let paired = ds.val.paired(ds.spec.task)?;
    Ok(Validation {
        inputs: ds.val.inputs.clone(),
        references: ds.val.references().clone(),
        targets: paired.targets,
    })
}

impl Validation {
    fn metrics(&self, m: &TrainedModel, config: Option<&ChannelConfig>) -> Result<EvalMetrics> {
        let y = m.translate(config, &self.inputs)?;
        evaluate_images(&y, &self.references, &self.targets)
    }

    fn pairs(&self) -> PairedSet {
        PairedSet {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
        }
    }
}

/// Data for training a student of `teacher`: ground-truth pairs for paired
/// tasks, the teacher's pseudo pairs otherwise.
fn student_data(ds: &Dataset, teacher: &TrainedModel, val: &Validation) -> Result<TrainData> {
    let d = if ds.spec.task.is_paired() {
        TrainData::paired(&ds.train.paired(ds.spec.task)?)
    } else {
        TrainData::pseudo(teacher, &ds.train.inputs)?
    };
    Ok(d.with_val(val.pairs()))
}

fn macs_params(spec: &GeneratorSpec, config: Option<&ChannelConfig>) -> Result<(u64, u64)> {
    let r = generator_cost(spec, config, spec.resolution)?;
    Ok((r.total_macs, r.total_params))
}

/// Runs the configured recipe into `dir`.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> Result<PipelineRun> {
    cfg.validate()?;
    let _lock = DirLock::acquire(dir)?;
    let ds = data::generate(&cfg.dataset)?;
    let val = validation(&ds)?;
    let choices = cfg.choice_sets();
    let (teacher_macs, teacher_params) = macs_params(&cfg.generator.teacher, None)?;
    let budget = match (cfg.search.budget_macs, cfg.search.budget_divisor) {
        (Some(b), _) => b,
        (None, Some(d)) => (teacher_macs as f64 / d).floor() as u64,
        (None, None) => unreachable!("validated"),
    };

    let manifest = serde_json::json!({
        "config": cfg,
        "dataset_hash": ds.content_hash(),
        "choice_sets": choices,
        "budget_macs": budget,
    });
    let manifest_text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir.join("manifest.json"), manifest_text.as_bytes())?;

    let mut st = Stages {
        dir: dir.to_path_buf(),
        chain: fnv1a(manifest_text.as_bytes()),
        dirty: false,
        executed: Vec::new(),
    };
    let conditional = cfg.dataset.task.is_paired();
    let plan_for = |stage: &str, epochs, teacher_stage: bool| {
        let loss = if teacher_stage {
            cfg.teacher_gan_loss.unwrap_or(cfg.gan_loss)
        } else {
            cfg.gan_loss
        };
        cfg.train_plan(epochs, stage_seed(cfg.seed, stage), loss)
    };
    // Teachers learn from ground truth, or from the reference translation
    // when the task has no pairs.
    let teacher_data = || -> Result<TrainData> {
        Ok(TrainData::paired(&ds.train.paired(ds.spec.task)?).with_val(val.pairs()))
    };

    let teacher = match &cfg.teacher_checkpoint {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            st.advance("pretrain", &fnv1a(&bytes).to_le_bytes());
            let t = TrainedModel::load(path).map_err(|e| Error::Stage {
                stage: "pretrain".into(),
                source: Box::new(e),
            })?;
            if t.spec() != &cfg.generator.teacher {
                return Err(Error::RunConfig(format!(
                    "teacher checkpoint {} does not match generator.teacher",
                    path.display()
                )));
            }
            t
        }
        None => st.run(
            "pretrain",
            "teacher.gckp",
            TrainedModel::load,
            save_model,
            |log| {
                let mut t = TrainedModel::init_teacher(
                    &cfg.generator.teacher,
                    cfg.discriminator.ndf,
                    cfg.discriminator.n_layers,
                    conditional,
                    stage_seed(cfg.seed, "teacher-init"),
                )?;
                trainer::train_teacher(
                    &mut t,
                    &teacher_data()?,
                    &plan_for("pretrain", cfg.plan.pretrain, true),
                    &mut TrainLog::append(log)?,
                )?;
                Ok(t)
            },
        )?,
    };

    // The teacher the compressed student learns from, and the supernet.
    let (ofa_teacher, supernet) = match cfg.pipeline {
        PipelineKind::GanCompression => {
            let mobile = st.run(
                "mobile_teacher",
                "mobile_teacher.gckp",
                TrainedModel::load,
                save_model,
                |log| {
                    let mut m = TrainedModel::init_teacher(
                        &cfg.generator.mobile_teacher(),
                        cfg.discriminator.ndf,
                        cfg.discriminator.n_layers,
                        conditional,
                        stage_seed(cfg.seed, "mobile-init"),
                    )?;
                    let d = student_data(&ds, &teacher, &val)?;
                    trainer::train_teacher(
                        &mut m,
                        &d,
                        &plan_for("mobile_teacher", cfg.plan.mobile_teacher, true),
                        &mut TrainLog::append(log)?,
                    )?;
                    Ok(m)
                },
            )?;
            let student = st.run(
                "distill",
                "student.gckp",
                TrainedModel::load,
                save_model,
                |log| {
                    let mut s = TrainedModel::init_student(
                        &mobile,
                        &cfg.generator.student,
                        None,
                        true,
                        cfg.plan.map_noise,
                        stage_seed(cfg.seed, "student-init"),
                    )?;
                    let d = student_data(&ds, &mobile, &val)?;
                    trainer::distill_student(
                        &mut s,
                        &mobile,
                        &d,
                        &plan_for("distill", cfg.plan.distill, false),
                        &mut TrainLog::append(log)?,
                    )?;
                    Ok(s)
                },
            )?;
            let supernet = st.run(
                "ofa",
                "supernet.gckp",
                TrainedModel::load,
                save_model,
                |log| {
                    let mut s = student.clone();
                    s.kind = trainer::ModelKind::Supernet;
                    s.choice_sets = Some(choices.clone());
                    let d = student_data(&ds, &mobile, &val)?;
                    trainer::train_ofa(
                        &mut s,
                        &mobile,
                        &d,
                        &plan_for("ofa", cfg.plan.ofa, false),
                        &mut TrainLog::append(log)?,
                    )?;
                    Ok(s)
                },
            )?;
            (mobile, supernet)
        }
        PipelineKind::FastGanCompression => {
            let supernet = st.run(
                "ofa",
                "supernet.gckp",
                TrainedModel::load,
                save_model,
                |log| {
                    let mut s = TrainedModel::init_student(
                        &teacher,
                        &cfg.generator.student,
                        Some(choices.clone()),
                        true,
                        cfg.plan.map_noise,
                        stage_seed(cfg.seed, "supernet-init"),
                    )?;
                    let d = student_data(&ds, &teacher, &val)?;
                    trainer::train_ofa(
                        &mut s,
                        &teacher,
                        &d,
                        &plan_for("ofa", cfg.plan.ofa, false),
                        &mut TrainLog::append(log)?,
                    )?;
                    Ok(s)
                },
            )?;
            (teacher.clone(), supernet)
        }
    };

    let algo = cfg.algo();
    let load_search = |p: &Path| -> Result<SearchResult> {
        Ok(serde_json::from_slice(
            &fs::read(p).map_err(|e| Error::io(p, e))?,
        )?)
    };
    let save_search =
        |r: &SearchResult, p: &Path| write_atomic(p, serde_json::to_string_pretty(r)?.as_bytes());
    let result = st.run("search", "search.json", load_search, save_search, |_| {
        let cost = SpecCost {
            spec: cfg.generator.student.clone(),
            resolution: cfg.dataset.resolution,
        };
        let mut fit = ValidationFitness {
            model: &supernet,
            inputs: &val.inputs,
            references: &val.references,
            metric: cfg.search.metric,
        };
        match algo {
            Algo::Brute => brute_force_search(&choices, budget, &cost, &mut fit),
            Algo::Evolution => {
                let mut p = cfg.search.evolution.clone();
                p.seed ^= stage_seed(cfg.seed, "search");
                evolution_search(&choices, budget, &cost, &mut fit, &p)
            }
        }
    })?;
    let best = result.best.config.clone();

    let finetuned = st.run(
        "finetune",
        "finetuned.gckp",
        TrainedModel::load,
        save_model,
        |log| {
            let d = student_data(&ds, &ofa_teacher, &val)?;
            trainer::finetune(
                &supernet,
                &best,
                &ofa_teacher,
                &d,
                &plan_for("finetune", cfg.plan.finetune, false),
                &mut TrainLog::append(log)?,
            )
        },
    )?;

    let load_report = |p: &Path| -> Result<serde_json::Value> {
        Ok(serde_json::from_slice(
            &fs::read(p).map_err(|e| Error::io(p, e))?,
        )?)
    };
    let save_report = |r: &serde_json::Value, p: &Path| {
        let mut text = serde_json::to_string_pretty(r)?;
        text.push('\n');
        write_atomic(p, text.as_bytes())
    };
    let report = st.run("eval", "report.json", load_report, save_report, |_| {
        let (student_macs, student_params) = macs_params(&cfg.generator.student, Some(&best))?;
        let report = Report {
            pipeline: cfg.pipeline,
            seed: cfg.seed,
            training_stages: training_stages(cfg.pipeline)
                .iter()
                .map(|s| s.to_string())
                .collect(),
            teacher: ModelSummary {
                macs: teacher_macs,
                params: teacher_params,
                metrics: val.metrics(&teacher, None)?,
            },
            student: StudentSummary {
                config: best.clone(),
                macs: student_macs,
                params: student_params,
            },
            compression: Compression {
                macs: teacher_macs as f64 / student_macs as f64,
                params: teacher_params as f64 / student_params as f64,
            },
            search: SearchSummary {
                algo,
                budget_macs: budget,
                evaluations: result.evaluations,
                best_fitness: result.best.fitness,
            },
            without_finetuning: val.metrics(&supernet, Some(&best))?,
            finetuned: val.metrics(&finetuned, None)?,
        };
        Ok(serde_json::to_value(report)?)
    })?;

    Ok(PipelineRun {
        dir: dir.to_path_buf(),
        report,
        executed: st.executed,
    })
}
