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

//! Loss terms: reconstruction, adversarial (three variants), intermediate
//! feature distillation and their weighted sum, plus pseudo-pair
//! construction for teachers trained without paired data.

use serde::{Deserialize, Serialize};

use crate::arch::{DistillMap, Generator, ParamMode};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub recon: f64,
    pub distill: f64,
}

impl LossWeights {
    /// Unpaired recipe (λ_recon = 10, λ_distill = 0.01).
    pub const UNPAIRED: LossWeights = LossWeights {
        recon: 10.0,
        distill: 0.01,
    };
    /// Paired recipe (λ_recon = 100, λ_distill = 1).
    pub const PAIRED: LossWeights = LossWeights {
        recon: 100.0,
        distill: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("recon", self.recon), ("distill", self.distill)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::RunConfig(format!(
                    "loss weight {n} = {v} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanLossKind {
    Vanilla,
    Lsgan,
    Hinge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanRole {
    Generator,
    Discriminator,
}

/// How the reconstruction target was obtained. Both branches compute the
/// same L1 distance; the distinction is which tensor is passed as target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconMode {
    /// Ground-truth target image.
    Paired,
    /// Output of the frozen teacher on the same input.
    PseudoPaired,
}

/// Mean absolute difference over all elements.
pub fn recon_loss<T: Element>(
    g: &mut Graph<T>,
    _mode: ReconMode,
    student_out: Var,
    target: Var,
) -> Result<Var> {
    let d = g
        .sub(student_out, target)
        .map_err(|e| relabel(e, "recon_loss"))?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

fn relabel(e: Error, op: &'static str) -> Error {
    match e {
        Error::Shape { detail, .. } => Error::Shape { op, detail },
        e => e,
    }
}

/// Adversarial loss on patch logit maps. The generator role only reads
/// `fake`; the discriminator role needs `real` as well.
pub fn gan_loss<T: Element>(
    g: &mut Graph<T>,
    kind: GanLossKind,
    role: GanRole,
    real: Option<Var>,
    fake: Var,
) -> Result<Var> {
    match role {
        GanRole::Generator => Ok(match kind {
            GanLossKind::Vanilla => {
                // -log σ(f) = softplus(-f)
                let n = g.scale(fake, -1.0);
                let s = g.softplus(n);
                g.mean(s)
            }
            GanLossKind::Lsgan => {
                let d = g.add_scalar(fake, -1.0);
                let s = g.square(d);
                g.mean(s)
            }
            GanLossKind::Hinge => {
                let m = g.mean(fake);
                g.scale(m, -1.0)
            }
        }),
        GanRole::Discriminator => {
            let real = real.ok_or_else(|| Error::Unsupported {
                op: "gan_loss",
                detail: "discriminator loss needs real logits".into(),
            })?;
            let (lr, lf) = match kind {
                GanLossKind::Vanilla => {
                    // -log σ(r) - log(1 - σ(f)) = softplus(-r) + softplus(f)
                    let n = g.scale(real, -1.0);
                    let a = g.softplus(n);
                    let b = g.softplus(fake);
                    (g.mean(a), g.mean(b))
                }
                GanLossKind::Lsgan => {
                    let d = g.add_scalar(real, -1.0);
                    let a = g.square(d);
                    let b = g.square(fake);
                    (g.mean(a), g.mean(b))
                }
                GanLossKind::Hinge => {
                    let n = g.scale(real, -1.0);
                    let m = g.add_scalar(n, 1.0);
                    let a = g.relu(m);
                    let p = g.add_scalar(fake, 1.0);
                    let b = g.relu(p);
                    (g.mean(a), g.mean(b))
                }
            };
            g.add(lr, lf)
        }
    }
}

/// `Σ_t mean((f_t(student_t) − teacher_t)²)`. With `trainable`, the maps
/// `f_t` receive gradients.
pub fn distill_loss<T: Element>(
    g: &mut Graph<T>,
    map: &DistillMap<T>,
    student_feats: &[Var],
    teacher_feats: &[Var],
    trainable: bool,
) -> Result<Var> {
    if student_feats.len() != map.len() || teacher_feats.len() != map.len() {
        return Err(Error::shape(
            "distill_loss",
            format!(
                "{} points, {} student and {} teacher features",
                map.len(),
                student_feats.len(),
                teacher_feats.len()
            ),
        ));
    }
    let mut total: Option<Var> = None;
    for (t, (&s, &tf)) in student_feats.iter().zip(teacher_feats).enumerate() {
        let mapped = map.project(g, t, s, trainable)?;
        let d = g.sub(mapped, tf).map_err(|e| relabel(e, "distill_loss"))?;
        let sq = g.square(d);
        let term = g.mean(sq);
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    total.ok_or_else(|| Error::shape("distill_loss", "no distillation points"))
}

/// `gan + λ_recon·recon + λ_distill·distill`; absent terms are skipped.
/// A non-finite term is reported as divergence.
pub fn total_loss<T: Element>(
    g: &mut Graph<T>,
    weights: &LossWeights,
    gan: Var,
    recon: Option<Var>,
    distill: Option<Var>,
    step: u64,
) -> Result<Var> {
    check_finite(g.value(gan).item(), "gan", step)?;
    let mut acc = gan;
    for (name, term, w) in [
        ("recon", recon, weights.recon),
        ("distill", distill, weights.distill),
    ] {
        if let Some(t) = term {
            check_finite(g.value(t).item(), name, step)?;
            let s = g.scale(t, w);
            acc = g.add(acc, s)?;
        }
    }
    check_finite(g.value(acc).item(), "total", step)?;
    Ok(acc)
}

/// Scalar form of [`total_loss`].
pub fn weighted_sum(weights: &LossWeights, gan: f64, recon: f64, distill: f64) -> Result<f64> {
    for (n, v) in [("gan", gan), ("recon", recon), ("distill", distill)] {
        check_finite(v, n, 0)?;
    }
    Ok(gan + weights.recon * recon + weights.distill * distill)
}

fn check_finite<T: Element>(v: T, term: &str, step: u64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            term: term.to_string(),
        })
    }
}

/// Inputs with their reconstruction targets; `[N, C, H, W]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSet<T: Element = f32> {
    pub inputs: Tensor<T>,
    pub targets: Tensor<T>,
}

impl<T: Element> PairedSet<T> {
    pub fn new(inputs: Tensor<T>, targets: Tensor<T>) -> Result<Self> {
        if inputs.shape()[0] != targets.shape()[0] {
            return Err(Error::shape(
                "paired set",
                format!(
                    "{:?} inputs vs {:?} targets",
                    inputs.shape(),
                    targets.shape()
                ),
            ));
        }
        Ok(PairedSet { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs `net` (frozen) over `images` in chunks and stacks the outputs.
pub fn run_generator<T: Element>(
    net: &Generator,
    store: &ParamStore<T>,
    config: Option<&crate::arch::ChannelConfig>,
    images: &Tensor<T>,
) -> Result<Tensor<T>> {
    const CHUNK: usize = 16;
    let n = images.shape()[0];
    let mut outs = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let batch = Tensor::stack(&(start..end).map(|i| images.sample(i)).collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let x = g.constant(batch);
        let out = net.forward(&mut g, store, config, x, ParamMode::Frozen)?;
        outs.push(g.value(out.out).clone());
        start = end;
    }
    Tensor::stack(&outs)
}

/// Pairs each source image with the frozen teacher's translation of it.
/// Teacher outputs are computed once here and reused by every epoch.
pub fn make_pseudo_pairs<T: Element>(
    teacher: &Generator,
    teacher_store: &ParamStore<T>,
    sources: &Tensor<T>,
) -> Result<PairedSet<T>> {
    let targets = run_generator(teacher, teacher_store, None, sources)?;
    PairedSet::new(sources.clone(), targets)
}
