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

//! Training loop contracts: determinism, immutability of the teacher,
//! degenerate cases that must reduce to simpler procedures.

use gancomp::arch::{ChoiceSets, GeneratorSpec};
use gancomp::data::{generate, Dataset, DatasetSpec, Task};
use gancomp::objectives::{make_pseudo_pairs, GanLossKind, LossWeights};
use gancomp::tensor::{ParamStore, Tensor};
use gancomp::trainer::{
    distill_student, finetune, train_ofa, train_teacher, ConfigSampler, TrainData, TrainLog,
    TrainPlan, TrainedModel,
};
use std::collections::HashMap;

fn dataset() -> Dataset {
    generate(&DatasetSpec {
        task: Task::Colorize,
        n_train: 8,
        n_val: 65,
        resolution: 16,
        seed: 21,
    })
    .unwrap()
}

fn teacher_spec() -> GeneratorSpec {
    GeneratorSpec {
        resolution: 16,
        n_blocks: 2,
        ..GeneratorSpec::resnet(8)
    }
}

fn student_spec() -> GeneratorSpec {
    GeneratorSpec {
        resolution: 16,
        n_blocks: 2,
        quantization_step: 4,
        ..GeneratorSpec::mobile(8)
    }
}

fn plan(epochs: usize, seed: u64) -> TrainPlan {
    TrainPlan {
        epochs_const: epochs,
        epochs_decay: 0,
        batch_size: 4,
        lr: 2e-3,
        seed,
        weights: LossWeights::PAIRED,
        gan_loss: GanLossKind::Hinge,
        eval_every: 0,
    }
}

fn same_bits(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len()
        && a.iter().all(|(name, t)| {
            b.get(name).is_ok_and(|u| {
                u.shape() == t.shape()
                    && t.data()
                        .iter()
                        .zip(u.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
        })
}

fn same_model(a: &TrainedModel, b: &TrainedModel) -> bool {
    same_bits(&a.g_params, &b.g_params)
        && same_bits(&a.d_params, &b.d_params)
        && match (&a.distill, &b.distill) {
            (Some(x), Some(y)) => same_bits(&x.store, &y.store),
            (None, None) => true,
            _ => false,
        }
}

fn teacher(ds: &Dataset) -> TrainedModel {
    let mut t = TrainedModel::init_teacher(&teacher_spec(), 8, 2, true, 3).unwrap();
    let data = TrainData::paired(&ds.train.paired(Task::Colorize).unwrap());
    train_teacher(&mut t, &data, &plan(1, 4), &mut TrainLog::Discard).unwrap();
    t
}

#[test]
fn zero_epochs_checkpoint_equals_init() {
    let ds = dataset();
    let dir = tempfile::tempdir().unwrap();
    let init = TrainedModel::init_teacher(&teacher_spec(), 8, 2, true, 3).unwrap();
    let mut t = TrainedModel::init_teacher(&teacher_spec(), 8, 2, true, 3).unwrap();
    let data = TrainData::paired(&ds.train.paired(Task::Colorize).unwrap());
    let s = train_teacher(&mut t, &data, &plan(0, 4), &mut TrainLog::Discard).unwrap();
    assert_eq!(s.steps, 0);
    let path = dir.path().join("t.gckp");
    t.save(&path).unwrap();
    assert!(same_model(&TrainedModel::load(&path).unwrap(), &init));
}

#[test]
fn same_seed_same_bits() {
    let ds = dataset();
    let data = TrainData::paired(&ds.train.paired(Task::Colorize).unwrap());
    let run = |seed| {
        let mut t = TrainedModel::init_teacher(&teacher_spec(), 8, 2, true, 3).unwrap();
        let mut log = TrainLog::Memory(Vec::new());
        train_teacher(&mut t, &data, &plan(2, seed), &mut log).unwrap();
        (t, log.records().to_vec())
    };
    let (a, la) = run(7);
    let (b, lb) = run(7);
    assert!(same_model(&a, &b));
    assert_eq!(la, lb);
    assert_eq!(la.len(), 4);
    let (c, _) = run(8);
    assert!(
        !same_model(&a, &c),
        "a different data order must change the weights"
    );
}

#[test]
fn teacher_is_never_modified() {
    let ds = dataset();
    let t = teacher(&ds);
    let snapshot = TrainedModel::from_checkpoint(&t.to_checkpoint()).unwrap();
    let data = TrainData::paired(&ds.train.paired(Task::Colorize).unwrap());
    let mut s = TrainedModel::init_student(&t, &student_spec(), None, true, 0.01, 5).unwrap();
    distill_student(&mut s, &t, &data, &plan(1, 6), &mut TrainLog::Discard).unwrap();
    let mut net = TrainedModel::init_student(
        &t,
        &student_spec(),
        Some(ChoiceSets::quarters(&student_spec())),
        true,
        0.01,
        5,
    )
    .unwrap();
    train_ofa(&mut net, &t, &data, &plan(1, 6), &mut TrainLog::Discard).unwrap();
    assert!(same_model(&t, &snapshot));
}

#[test]
fn inherited_discriminator_is_a_copy() {
    let ds = dataset();
    let t = teacher(&ds);
    let s = TrainedModel::init_student(&t, &student_spec(), None, true, 0.01, 5).unwrap();
    assert!(same_bits(&s.d_params, &t.d_params));
    let fresh = TrainedModel::init_student(&t, &student_spec(), None, false, 0.01, 5).unwrap();
    assert!(!same_bits(&fresh.d_params, &t.d_params));
}

#[test]
fn self_distillation_starts_at_zero() {
    let ds = dataset();
    let t = teacher(&ds);
    let mut s = TrainedModel::init_student(&t, &teacher_spec(), None, true, 0.0, 5).unwrap();
    s.g_params.load_from(&t.g_params).unwrap();
    let data = TrainData::paired(&ds.train.paired(Task::Colorize).unwrap());
    let mut log = TrainLog::Memory(Vec::new());
    distill_student(&mut s, &t, &data, &plan(1, 6), &mut log).unwrap();
    let first = log.records()[0].distill.unwrap();
    assert!(first < 1e-6, "{first}");
}

#[test]
fn singleton_choice_sets_reduce_to_plain_distillation() {
    let ds = dataset();
    let t = teacher(&ds);
    let data = TrainData::paired(&ds.train.paired(Task::Colorize).unwrap());
    let mut plain = TrainedModel::init_student(&t, &student_spec(), None, true, 0.01, 5).unwrap();
    let mut ofa = TrainedModel::init_student(
        &t,
        &student_spec(),
        Some(ChoiceSets::full(&student_spec())),
        true,
        0.01,
        5,
    )
    .unwrap();
    distill_student(&mut plain, &t, &data, &plan(2, 6), &mut TrainLog::Discard).unwrap();
    train_ofa(&mut ofa, &t, &data, &plan(2, 6), &mut TrainLog::Discard).unwrap();
    assert!(same_model(&plain, &ofa));
}

#[test]
fn sampler_is_uniform_per_group() {
    let sets = ChoiceSets(vec![vec![4, 8, 12, 16]; 3]);
    let mut sampler = ConfigSampler::new(99);
    let mut counts = vec![HashMap::new(); 3];
    for _ in 0..20_000 {
        let c = sampler.sample(&sets);
        for (k, &w) in c.0.iter().enumerate() {
            *counts[k].entry(w).or_insert(0usize) += 1;
        }
    }
    for per_group in counts {
        assert_eq!(per_group.len(), 4);
        for (&w, &n) in &per_group {
            assert!((4700..=5300).contains(&n), "width {w}: {n}");
        }
    }
}

#[test]
fn zero_step_finetune_is_the_slice() {
    let ds = dataset();
    let t = teacher(&ds);
    let data = TrainData::paired(&ds.train.paired(Task::Colorize).unwrap());
    let spec = student_spec();
    let sets = ChoiceSets::quarters(&spec);
    let mut net = TrainedModel::init_student(&t, &spec, Some(sets.clone()), true, 0.01, 5).unwrap();
    train_ofa(&mut net, &t, &data, &plan(1, 6), &mut TrainLog::Discard).unwrap();
    let config = sets.min_config();
    let fine = finetune(
        &net,
        &config,
        &t,
        &data,
        &plan(0, 7),
        &mut TrainLog::Discard,
    )
    .unwrap();
    let x = &ds.val.paired(Task::Colorize).unwrap().inputs;
    let a = net.translate(Some(&config), x).unwrap();
    let b = fine.translate(None, x).unwrap();
    assert_eq!(a, b);
    assert_eq!(fine.generator.widths(), &config);
}

#[test]
fn pseudo_pairs_are_teacher_outputs() {
    let ds = dataset();
    let t = teacher(&ds);
    let x = ds.train.paired(Task::Colorize).unwrap().inputs;
    let data = TrainData::pseudo(&t, &x).unwrap();
    let recomputed = t.translate(None, &x).unwrap();
    assert_eq!(data.recon.as_ref().unwrap(), &recomputed);
    assert_eq!(&data.real, &recomputed);
    let set = make_pseudo_pairs(&t.generator, &t.g_params, &x).unwrap();
    assert_eq!(set.targets, recomputed);
    assert_eq!(set.inputs, x);
}

#[test]
fn bad_inputs_are_rejected() {
    let ds = dataset();
    let t = teacher(&ds);
    let data = TrainData::paired(&ds.train.paired(Task::Colorize).unwrap());
    let mut s = TrainedModel::init_student(&t, &student_spec(), None, true, 0.01, 5).unwrap();
    let mut p = plan(1, 1);
    p.lr = 0.0;
    assert!(distill_student(&mut s, &t, &data, &p, &mut TrainLog::Discard).is_err());
    // A plain student has no choice sets to sample from.
    assert!(train_ofa(&mut s, &t, &data, &plan(1, 1), &mut TrainLog::Discard).is_err());
    let short = Tensor::zeros(vec![3, 3, 16, 16]);
    assert!(TrainData::gan_only(&data.inputs, &short).is_err());
}
