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

//! Acceptance run. Prints one `criterion N: PASS|FAIL` line per criterion.
//!
//! `cargo test --release --test acceptance -- 1 5` runs a subset. The run
//! reports failures without failing the target unless
//! `GANCOMP_ACCEPTANCE_STRICT=1` is set.

#[path = "gradients.rs"]
#[allow(dead_code, unused_imports)]
mod gradients;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gancomp::arch::{ChoiceSets, GeneratorSpec};
use gancomp::config::RunConfig;
use gancomp::data::{generate, DatasetSpec, Task};
use gancomp::metrics::ffd;
use gancomp::objectives::{GanLossKind, LossWeights};
use gancomp::pipeline::run_pipeline;
use gancomp::trainer::{
    distill_student, train_teacher, TrainData, TrainLog, TrainPlan, TrainedModel,
};
use serde_json::Value;

const MIN_MACS_RATIO: f64 = 6.0;
const MAX_FFD_RATIO: f64 = 1.5;
const SEEDS: u64 = 5;
const NEEDED: usize = 4;
const ABLATION_EPOCHS: usize = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn suite(limit: Duration, tests: &[(&str, fn())]) -> Verdict {
    let t = Instant::now();
    let mut failed = Vec::new();
    for (name, f) in tests {
        if catch_unwind(AssertUnwindSafe(f)).is_err() {
            failed.push(*name);
        }
    }
    let took = t.elapsed();
    let mut detail = format!("{} checks in {:.1}s", tests.len(), took.as_secs_f64());
    if !failed.is_empty() {
        detail += &format!(", failed: {}", failed.join(", "));
    }
    if took > limit {
        detail += &format!(", over the {}s limit", limit.as_secs());
    }
    Verdict {
        pass: failed.is_empty() && took <= limit,
        detail,
    }
}

fn reference_config(seed: u64) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/colorize32_fast.json");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["seed"] = seed.into();
    RunConfig::from_json(&v.to_string()).unwrap()
}

/// The fast recipe on the reference config. Seed 0 pretrains the teacher;
/// later seeds reuse it so that seeds vary only the compression stages.
struct Reference {
    root: PathBuf,
}

impl Reference {
    fn dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed{seed}"))
    }

    fn teacher(&self) -> PathBuf {
        self.dir(0).join("teacher.gckp")
    }

    fn run(&self, seed: u64, dir: &Path) -> Result<(Value, Duration), String> {
        let mut cfg = reference_config(seed);
        if seed != 0 {
            cfg.teacher_checkpoint = Some(self.teacher());
        }
        let t = Instant::now();
        let run = run_pipeline(&cfg, dir).map_err(|e| e.to_string())?;
        Ok((run.report, t.elapsed()))
    }
}

fn criterion_6(reference: &Reference) -> Verdict {
    let mut good = 0;
    let mut lines = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..SEEDS {
        match reference.run(seed, &reference.dir(seed)) {
            Ok((r, took)) => {
                slowest = slowest.max(took);
                let macs = r["compression"]["macs"].as_f64().unwrap();
                let ratio = r["finetuned"]["ffd"].as_f64().unwrap()
                    / r["teacher"]["metrics"]["ffd"].as_f64().unwrap();
                let ok = macs >= MIN_MACS_RATIO && ratio <= MAX_FFD_RATIO;
                good += usize::from(ok);
                lines.push(format!(
                    "seed {seed}: {macs:.2}x MACs, FFD {ratio:.2}x teacher, {:.1} min",
                    took.as_secs_f64() / 60.0
                ));
            }
            Err(e) => lines.push(format!("seed {seed}: {e}")),
        }
    }
    let in_time = slowest < Duration::from_secs(30 * 60);
    Verdict {
        pass: good >= NEEDED && in_time,
        detail: format!(
            "{good}/{SEEDS} seeds within thresholds; {}",
            lines.join("; ")
        ),
    }
}

fn criterion_8(reference: &Reference) -> Verdict {
    let again = reference.root.join("seed0-repeat");
    let first = reference.dir(0).join("report.json");
    if !first.is_file() {
        return Verdict {
            pass: false,
            detail: "criterion 6 did not produce a seed 0 report".into(),
        };
    }
    let mut cfg = reference_config(0);
    cfg.teacher_checkpoint = None;
    if let Err(e) = run_pipeline(&cfg, &again) {
        return Verdict {
            pass: false,
            detail: e.to_string(),
        };
    }
    let (a, b) = (
        fs::read(first).unwrap(),
        fs::read(again.join("report.json")).unwrap(),
    );
    Verdict {
        pass: a == b,
        detail: format!("report {} bytes, identical: {}", a.len(), a == b),
    }
}

fn plan(seed: u64, weights: LossWeights) -> TrainPlan {
    TrainPlan {
        epochs_const: ABLATION_EPOCHS / 2,
        epochs_decay: ABLATION_EPOCHS - ABLATION_EPOCHS / 2,
        batch_size: 4,
        lr: 1e-3,
        seed,
        weights,
        gan_loss: GanLossKind::Hinge,
        eval_every: 0,
    }
}

fn dataset(task: Task) -> gancomp::data::Dataset {
    generate(&DatasetSpec {
        task,
        n_train: 128,
        n_val: 100,
        resolution: 32,
        seed: 9,
    })
    .unwrap()
}

/// Smallest-width students trained three ways against each alternative.
fn criterion_7(reference: &Reference) -> Verdict {
    let teacher_spec = GeneratorSpec {
        resolution: 32,
        n_blocks: 3,
        ..GeneratorSpec::resnet(32)
    };
    let student_spec = GeneratorSpec {
        resolution: 32,
        n_blocks: 3,
        ..GeneratorSpec::mobile(32)
    };
    let smallest = ChoiceSets::quarters(&student_spec).min_config();

    let stripes = dataset(Task::StripesA2B);
    let mut st = TrainedModel::init_teacher(&teacher_spec, 16, 2, false, 5).unwrap();
    let paired = TrainData::paired(&stripes.train.paired(Task::StripesA2B).unwrap());
    // The teacher learns from reference-translation pairs with the paired
    // weights; only the students below see the unpaired setting.
    train_teacher(
        &mut st,
        &paired,
        &plan(5, LossWeights::PAIRED),
        &mut TrainLog::Discard,
    )
    .unwrap();

    let colorize = dataset(Task::Colorize);
    let cdata = TrainData::paired(&colorize.train.paired(Task::Colorize).unwrap());
    let ct = match TrainedModel::load(&reference.teacher()) {
        Ok(t) => t,
        Err(_) => {
            let mut t = TrainedModel::init_teacher(&teacher_spec, 16, 2, true, 5).unwrap();
            train_teacher(
                &mut t,
                &cdata,
                &plan(5, LossWeights::PAIRED),
                &mut TrainLog::Discard,
            )
            .unwrap();
            t
        }
    };

    let score = |m: &TrainedModel, ds: &gancomp::data::Dataset| {
        ffd(
            &m.translate(None, &ds.val.inputs).unwrap(),
            ds.val.references(),
        )
        .unwrap()
    };
    let student = |teacher: &TrainedModel, inherit: bool, seed: u64| {
        TrainedModel::init_student(teacher, &student_spec, None, inherit, 0.01, 100 + seed)
            .unwrap()
            .extract(&smallest)
            .unwrap()
    };
    let (mut a, mut b, mut c) = (0, 0, 0);
    let mut lines = Vec::new();
    for seed in 0..SEEDS {
        let w = LossWeights::UNPAIRED;
        let mut pseudo = student(&st, true, seed);
        let data = TrainData::pseudo(&st, &stripes.train.inputs).unwrap();
        train_teacher(&mut pseudo, &data, &plan(seed, w), &mut TrainLog::Discard).unwrap();
        let mut unpaired = student(&st, true, seed);
        let data = TrainData::gan_only(
            &stripes.train.inputs,
            stripes.train.domain_b.as_ref().unwrap(),
        )
        .unwrap();
        train_teacher(&mut unpaired, &data, &plan(seed, w), &mut TrainLog::Discard).unwrap();

        let w = LossWeights::PAIRED;
        let mut inherit = student(&ct, true, seed);
        distill_student(
            &mut inherit,
            &ct,
            &cdata,
            &plan(seed, w),
            &mut TrainLog::Discard,
        )
        .unwrap();
        let mut random = student(&ct, false, seed);
        distill_student(
            &mut random,
            &ct,
            &cdata,
            &plan(seed, w),
            &mut TrainLog::Discard,
        )
        .unwrap();
        // Same widths, hence the same MACs, without the distillation term.
        let mut scratch = student(&ct, true, seed);
        train_teacher(&mut scratch, &cdata, &plan(seed, w), &mut TrainLog::Discard).unwrap();

        let (fp, fu) = (score(&pseudo, &stripes), score(&unpaired, &stripes));
        let (fi, fr, fs) = (
            score(&inherit, &colorize),
            score(&random, &colorize),
            score(&scratch, &colorize),
        );
        a += usize::from(fp < fu);
        b += usize::from(fi <= fr);
        c += usize::from(fi < fs);
        lines.push(format!(
            "seed {seed}: pseudo {fp:.3e} unpaired {fu:.3e} inherit {fi:.3e} random {fr:.3e} scratch {fs:.3e}"
        ));
    }
    for l in &lines {
        eprintln!("  {l}");
    }
    Verdict {
        pass: a >= NEEDED && b >= NEEDED && c >= NEEDED,
        detail: format!(
            "pseudo < unpaired {a}/{SEEDS}, inherited D <= random D {b}/{SEEDS}, distilled < scratch {c}/{SEEDS}"
        ),
    }
}

fn main() {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let selected = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let work = tempfile::tempdir().unwrap();
    let reference = Reference {
        root: work.path().to_path_buf(),
    };
    let secs = Duration::from_secs;

    type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;
    let criteria: [(u32, &str, Check); 8] = [
        (
            1,
            "cost model",
            Box::new(|| {
                suite(
                    secs(1),
                    &[(
                        "canonical counts",
                        cost_model::check_canonical_generator_counts,
                    )],
                )
            }),
        ),
        (
            2,
            "gradients",
            Box::new(|| {
                suite(
                    secs(120),
                    &[
                        ("ops f64", gradients::op_suite::<f64>),
                        ("ops f32", gradients::op_suite::<f32>),
                        ("losses f64", gradients::loss_suite::<f64>),
                        ("losses f32", gradients::loss_suite::<f32>),
                        ("networks f64", gradients::deep_suite::<f64>),
                        ("distill f64", gradients::distill_suite::<f64>),
                        ("networks f32", gradients::distill_suite::<f32>),
                        (
                            "networks f32 vs f64",
                            gradients::check_deep_networks_f32_match_f64,
                        ),
                    ],
                )
            }),
        ),
        (
            3,
            "once-for-all slicing",
            Box::new(|| {
                suite(
                    secs(60),
                    &[
                        (
                            "sliced views",
                            slicing::check_sliced_views_equal_copied_networks,
                        ),
                        (
                            "one step footprint",
                            slicing::check_one_step_changes_only_the_sampled_ranges,
                        ),
                    ],
                )
            }),
        ),
        (
            4,
            "search",
            Box::new(|| {
                suite(
                    secs(120),
                    &[
                        (
                            "brute force",
                            search::check_brute_force_equals_sorting_every_feasible_config,
                        ),
                        ("evolution", search::check_evolution_finds_the_top_percent),
                    ],
                )
            }),
        ),
        (
            5,
            "frechet distance",
            Box::new(|| {
                suite(
                    secs(30),
                    &[
                        (
                            "stats",
                            metrics::check_stats_identity_symmetry_and_isotropic_form,
                        ),
                        (
                            "2x2 closed form",
                            metrics::check_frechet_matches_two_dimensional_closed_form,
                        ),
                    ],
                )
            }),
        ),
        (6, "fast pipeline", Box::new(|| criterion_6(&reference))),
        (7, "ablations", Box::new(|| criterion_7(&reference))),
        (8, "determinism", Box::new(|| criterion_8(&reference))),
    ];

    std::panic::set_hook(Box::new(|info| eprintln!("  {info}")));
    let mut failures = 0;
    for (n, name, check) in &criteria {
        if !selected(*n) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or(Verdict {
            pass: false,
            detail: "panicked".into(),
        });
        failures += usize::from(!v.pass);
        let word = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n}: {word} {name}: {}", v.detail);
    }
    let strict = std::env::var("GANCOMP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
