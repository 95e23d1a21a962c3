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

//! Central finite-difference checks of every differentiable operation and
//! of whole networks, in both precisions.

#![allow(clippy::type_complexity)]

use gancomp::arch::{
    distill_points, ChannelConfig, Discriminator, DiscriminatorSpec, DistillMap, Generator,
    GeneratorSpec, GeneratorStyle, ParamMode, Part,
};
use gancomp::objectives::{distill_loss, gan_loss, recon_loss, GanLossKind, GanRole, ReconMode};
use gancomp::tensor::{Element, Graph, ParamStore, Tensor, Var};
use gancomp::Result;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

/// Builds an output from input leaves and a parameter holder.
type Build<'a, T, H> = &'a dyn Fn(&mut Graph<T>, &[Var], &H) -> Result<Var>;

/// Anything owning the parameter store a build reads from.
trait Holder<T: Element>: Clone {
    fn store_mut(&mut self) -> &mut ParamStore<T>;
}

impl<T: Element> Holder<T> for ParamStore<T> {
    fn store_mut(&mut self) -> &mut ParamStore<T> {
        self
    }
}

impl<T: Element> Holder<T> for DistillMap<T> {
    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }
}

/// Per-precision step and tolerance.
pub trait Prec: Element {
    const EPS: f64;
    const TOL: f64;
    /// Whole networks in single precision accumulate rounding and the odd
    /// relu kink inside the step; double precision stays tight.
    const NET_TOL: f64;
    /// Gradients whose difference is below this are equal (exact zeros such
    /// as a bias feeding an instance norm).
    const ABS: f64;
}

impl Prec for f32 {
    const EPS: f64 = 4e-3;
    const TOL: f64 = 1e-3;
    const NET_TOL: f64 = 6e-2;
    const ABS: f64 = 1e-3;
}

impl Prec for f64 {
    const EPS: f64 = 1e-6;
    const TOL: f64 = 1e-5;
    const NET_TOL: f64 = 1e-5;
    const ABS: f64 = 1e-7;
}

/// Elements probed per tensor.
const PROBES: usize = 12;

fn rand_tensor<T: Element>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(lo..hi))).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Values in ±[0.2, 1], away from the kinks of relu/abs/hinge.
fn off_kink<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.2..1.0);
            T::lit(if rng.gen_bool(0.5) { m } else { -m })
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output element matters.
fn scalar_loss<T: Element>(g: &mut Graph<T>, out: Var) -> Var {
    let r = rand_tensor::<T>(g.shape(out), 0xABCD, -1.0, 1.0);
    let r = g.constant(r);
    let p = g.mul(out, r).unwrap();
    g.sum(p)
}

fn eval<T: Element, H>(build: Build<T, H>, inputs: &[Tensor<T>], store: &H) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), false)).collect();
    let out = build(&mut g, &vars, store).unwrap();
    let l = scalar_loss(&mut g, out);
    g.value(l).item().as_f64()
}

fn probes(len: usize) -> Vec<usize> {
    if len <= PROBES {
        (0..len).collect()
    } else {
        (0..PROBES)
            .map(|i| i * len / PROBES + (i * 7) % (len / PROBES))
            .collect()
    }
}

fn rel_err(a: &[f64], n: &[f64], abs: f64) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if diff < abs {
        0.0
    } else {
        diff / na.max(nn)
    }
}

/// Checks gradients w.r.t. every input and every stored parameter; returns
/// the worst relative error.
fn check<T: Prec, H: Holder<T>>(
    label: &str,
    build: Build<T, H>,
    inputs: Vec<Tensor<T>>,
    store: H,
) -> f64 {
    check_tol(label, build, inputs, store, T::TOL)
}

fn check_tol<T: Prec, H: Holder<T>>(
    label: &str,
    build: Build<T, H>,
    inputs: Vec<Tensor<T>>,
    store: H,
    tol: f64,
) -> f64 {
    let mut store = store;
    store.store_mut().zero_grad();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let out = build(&mut g, &vars, &store).unwrap();
    let l = scalar_loss(&mut g, out);
    let grads = g.backward(l).unwrap();
    let input_grads: Vec<Tensor<T>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| {
            grads
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();
    grads.accumulate_into(store.store_mut()).unwrap();

    let mut worst = 0f64;
    let central = |inputs: &[Tensor<T>],
                   store: &H,
                   bump: &dyn Fn(&mut [Tensor<T>], &mut ParamStore<T>, f64)| {
        let (mut ip, mut sp) = (inputs.to_vec(), store.clone());
        bump(&mut ip, sp.store_mut(), T::EPS);
        let (mut im, mut sm) = (inputs.to_vec(), store.clone());
        bump(&mut im, sm.store_mut(), -T::EPS);
        (eval(build, &ip, &sp) - eval(build, &im, &sm)) / (2.0 * T::EPS)
    };
    for (k, t) in inputs.iter().enumerate() {
        let idx = probes(t.len());
        let a: Vec<f64> = idx
            .iter()
            .map(|&i| input_grads[k].data()[i].as_f64())
            .collect();
        let n: Vec<f64> = idx
            .iter()
            .map(|&i| {
                central(&inputs, &store, &|ins, _, d| {
                    let v = &mut ins[k].data_mut()[i];
                    *v += T::lit(d);
                })
            })
            .collect();
        let e = rel_err(&a, &n, T::ABS);
        assert!(
            e < tol,
            "{label}: input {k} rel err {e:.3e} (analytic {a:?} numeric {n:?})"
        );
        worst = worst.max(e);
    }
    let names: Vec<String> = store.store_mut().names().map(str::to_string).collect();
    for name in names {
        let p = store.store_mut().get(&name).unwrap().clone();
        let grad: Vec<f64> = p.grad().unwrap().iter().map(|v| v.as_f64()).collect();
        let idx = probes(p.len());
        let a: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
        let n: Vec<f64> = idx
            .iter()
            .map(|&i| {
                central(&inputs, &store, &|_, s, d| {
                    let v = &mut s.get_mut(&name).unwrap().data_mut()[i];
                    *v += T::lit(d);
                })
            })
            .collect();
        let e = rel_err(&a, &n, T::ABS);
        assert!(
            e < tol,
            "{label}: param {name} rel err {e:.3e} (analytic {a:?} numeric {n:?})"
        );
        worst = worst.max(e);
    }
    worst
}

fn no_params<T: Element>() -> ParamStore<T> {
    ParamStore::new()
}

pub fn op_suite<T: Prec>() {
    let x = |s: &[usize], seed| rand_tensor::<T>(s, seed, -1.0, 1.0);

    let conv_cases: [(&str, [usize; 4], [usize; 4], usize, usize, usize); 6] = [
        ("conv3x3", [2, 4, 6, 6], [6, 4, 3, 3], 1, 1, 1),
        ("conv stride2", [2, 4, 6, 6], [6, 4, 3, 3], 2, 1, 1),
        ("conv grouped", [2, 4, 5, 5], [6, 2, 3, 3], 1, 1, 2),
        ("conv depthwise", [1, 4, 6, 6], [4, 1, 3, 3], 2, 1, 4),
        ("conv 1x1", [2, 5, 4, 4], [3, 5, 1, 1], 1, 0, 1),
        ("conv 7x7", [1, 3, 8, 8], [4, 3, 7, 7], 1, 3, 1),
    ];
    for (label, xs, ws, stride, pad, groups) in conv_cases {
        let cout = ws[0];
        check::<T, _>(
            label,
            &|g, v, _| g.conv2d(v[0], v[1], Some(v[2]), stride, pad, groups),
            vec![x(&xs, 1), x(&ws, 2), x(&[cout], 3)],
            no_params(),
        );
    }
    for (label, xs, ws, groups, cout) in [
        ("conv transpose", [2, 4, 3, 3], [4, 6, 3, 3], 1, 6),
        ("conv transpose grouped", [1, 4, 3, 3], [4, 3, 3, 3], 2, 6),
        ("conv transpose depthwise", [1, 4, 3, 3], [4, 1, 3, 3], 4, 4),
    ] {
        check::<T, _>(
            label,
            &|g, v, _| g.conv_transpose2d(v[0], v[1], Some(v[2]), groups),
            vec![x(&xs, 4), x(&ws, 5), x(&[cout], 6)],
            no_params(),
        );
    }
    check::<T, _>(
        "instance norm",
        &|g, v, _| g.instance_norm(v[0], v[1], v[2], 1e-5),
        vec![x(&[2, 3, 4, 4], 7), x(&[3], 8), x(&[3], 9)],
        no_params(),
    );

    let shape = [2, 3, 4, 4];
    type Unary<T> = fn(&mut Graph<T>, Var) -> Var;
    let unary: [(&str, Unary<T>); 8] = [
        ("relu", |g, a| g.relu(a)),
        ("leaky relu", |g, a| g.leaky_relu(a, 0.2)),
        ("tanh", |g, a| g.tanh(a)),
        ("softplus", |g, a| g.softplus(a)),
        ("square", |g, a| g.square(a)),
        ("abs", |g, a| g.abs(a)),
        ("scale", |g, a| g.scale(a, -1.7)),
        ("add scalar", |g, a| g.add_scalar(a, 0.3)),
    ];
    for (label, f) in unary {
        check::<T, _>(
            label,
            &|g, v, _| Ok(f(g, v[0])),
            vec![off_kink(&shape, 10)],
            no_params(),
        );
    }
    check::<T, _>(
        "add",
        &|g, v, _| g.add(v[0], v[1]),
        vec![x(&shape, 11), x(&shape, 12)],
        no_params(),
    );
    check::<T, _>(
        "sub",
        &|g, v, _| g.sub(v[0], v[1]),
        vec![x(&shape, 13), x(&shape, 14)],
        no_params(),
    );
    check::<T, _>(
        "mul",
        &|g, v, _| g.mul(v[0], v[1]),
        vec![x(&shape, 15), x(&shape, 16)],
        no_params(),
    );
    check::<T, _>(
        "sum",
        &|g, v, _| Ok(g.sum(v[0])),
        vec![x(&shape, 17)],
        no_params(),
    );
    check::<T, _>(
        "mean",
        &|g, v, _| Ok(g.mean(v[0])),
        vec![x(&shape, 18)],
        no_params(),
    );
    check::<T, _>(
        "concat channels",
        &|g, v, _| g.concat_channels(v[0], v[1]),
        vec![x(&[2, 3, 4, 4], 19), x(&[2, 2, 4, 4], 20)],
        no_params(),
    );

    // A leaf reading the leading box of a larger stored tensor.
    let mut store = ParamStore::new();
    store.insert("w", x(&[6, 4, 3, 3], 21));
    check::<T, _>(
        "param prefix box",
        &|g, v, s| {
            let w = g.param(s, "w", Some(&[3, 2, 3, 3]))?;
            g.conv2d(v[0], w, None, 1, 1, 1)
        },
        vec![x(&[1, 2, 5, 5], 22)],
        store,
    );
}

pub fn loss_suite<T: Prec>() {
    let logits = |seed| off_kink::<T>(&[2, 1, 3, 3], seed);
    for kind in [GanLossKind::Vanilla, GanLossKind::Lsgan, GanLossKind::Hinge] {
        check::<T, _>(
            &format!("{kind:?} generator loss"),
            &|g, v, _| gan_loss(g, kind, GanRole::Generator, None, v[0]),
            vec![logits(30)],
            no_params(),
        );
        check::<T, _>(
            &format!("{kind:?} discriminator loss"),
            &|g, v, _| gan_loss(g, kind, GanRole::Discriminator, Some(v[0]), v[1]),
            vec![logits(31), logits(32)],
            no_params(),
        );
    }
    let a = rand_tensor::<T>(&[2, 3, 4, 4], 33, -1.0, 1.0);
    let b = rand_tensor::<T>(&[2, 3, 4, 4], 34, -1.0, 1.0);
    check::<T, _>(
        "recon loss",
        &|g, v, _| recon_loss(g, ReconMode::Paired, v[0], v[1]),
        vec![a, b],
        no_params(),
    );
}

fn toy_spec(style: GeneratorStyle) -> GeneratorSpec {
    GeneratorSpec {
        style,
        ngf: 8,
        n_blocks: 2,
        in_channels: 3,
        out_channels: 3,
        resolution: 8,
        quantization_step: 4,
        decompose_parts: if style == GeneratorStyle::MobileResnet {
            vec![Part::Resblocks]
        } else {
            Vec::new()
        },
    }
}

/// Finite differences through whole generators and the discriminator. Single precision cannot
/// resolve these (a step large enough to beat rounding crosses relu kinks
/// deep in the net), so f32 is instead held to the f64 analytic gradient.
pub fn deep_suite<T: Prec>() {
    for style in [GeneratorStyle::StandardResnet, GeneratorStyle::MobileResnet] {
        let spec = toy_spec(style);
        let gen = Generator::new(&spec).unwrap();
        let store: ParamStore<T> = gen.init_params(40);
        let input = rand_tensor::<T>(&[2, 3, 8, 8], 41, -1.0, 1.0);
        let worst = check_tol::<T, _>(
            &format!("{style:?} generator"),
            &|g, v, s| Ok(gen.forward(g, s, None, v[0], ParamMode::Train)?.out),
            vec![input.clone()],
            store.clone(),
            T::NET_TOL,
        );
        assert!(worst.is_finite());
        // A sliced sub-network of the same weights.
        let mut sub = gen.widths().clone();
        sub.0.iter_mut().for_each(|w| *w = (*w / 2).max(4));
        let sub = ChannelConfig(sub.0);
        check_tol::<T, _>(
            &format!("{style:?} generator sliced"),
            &|g, v, s| Ok(gen.forward(g, s, Some(&sub), v[0], ParamMode::Train)?.out),
            vec![input],
            store,
            T::NET_TOL,
        );
    }
    let d = Discriminator::new(&DiscriminatorSpec {
        ndf: 4,
        n_layers: 2,
        in_channels: 6,
    })
    .unwrap();
    check_tol::<T, _>(
        "discriminator",
        &|g, v, s| d.forward(g, s, v[0], ParamMode::Train),
        vec![rand_tensor(&[2, 6, 16, 16], 42, -1.0, 1.0)],
        d.init_params(43),
        T::NET_TOL,
    );
}

pub fn distill_suite<T: Prec>() {
    // Distillation through trainable 1x1 maps from student to teacher widths.
    let teacher = toy_spec(GeneratorStyle::StandardResnet);
    let tgen = Generator::new(&teacher).unwrap();
    let sspec = GeneratorSpec {
        ngf: 4,
        ..toy_spec(GeneratorStyle::MobileResnet)
    };
    let sgen = Generator::new(&sspec).unwrap();
    let map = distill_points::<T>(&teacher, tgen.widths(), &sspec, sgen.widths(), 0.3, 44).unwrap();
    let tstore: ParamStore<T> = tgen.init_params(45);
    let sstore: ParamStore<T> = sgen.init_params(46);
    let input = rand_tensor::<T>(&[1, 3, 8, 8], 47, -1.0, 1.0);
    let feats = |g: &mut Graph<T>,
                 m: &DistillMap<T>,
                 x: Var,
                 gen: &Generator,
                 s: &ParamStore<T>|
     -> Result<Vec<Var>> {
        let o = gen.forward(g, s, None, x, ParamMode::Frozen)?;
        m.points
            .iter()
            .map(|p| DistillMap::<T>::select(&o.taps, p.student))
            .collect()
    };
    check_tol::<T, DistillMap<T>>(
        "distillation loss",
        &|g, v, m| {
            let sf = feats(g, m, v[0], &sgen, &sstore)?;
            let tf = feats(g, m, v[0], &tgen, &tstore)?;
            distill_loss(g, m, &sf, &tf, true)
        },
        vec![input],
        map,
        T::NET_TOL,
    );
}

#[test]
fn ops_f64() {
    op_suite::<f64>();
}

#[test]
fn ops_f32() {
    op_suite::<f32>();
}

#[test]
fn losses_f64() {
    loss_suite::<f64>();
}

#[test]
fn losses_f32() {
    loss_suite::<f32>();
}

#[test]
fn networks_f64() {
    deep_suite::<f64>();
    distill_suite::<f64>();
}

/// Analytic gradients of `Σ out ⊙ R` w.r.t. the input and every parameter.
fn analytic<T: Element>(
    forward: &dyn Fn(&mut Graph<T>, Var, &ParamStore<T>) -> Result<Var>,
    input: &Tensor<f64>,
    store: &ParamStore<f64>,
) -> Vec<(String, Vec<f64>)> {
    let mut store: ParamStore<T> = store.cast();
    let mut g = Graph::new();
    let x = g.input(input.cast(), true);
    let out = forward(&mut g, x, &store).unwrap();
    let l = scalar_loss(&mut g, out);
    let grads = g.backward(l).unwrap();
    let mut all = vec![(
        "input".to_string(),
        grads
            .wrt(x)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.as_f64())
            .collect(),
    )];
    grads.accumulate_into(&mut store).unwrap();
    for (name, t) in store.iter() {
        all.push((
            name.to_string(),
            t.grad().unwrap().iter().map(|v| v.as_f64()).collect(),
        ));
    }
    all
}

#[test]
fn deep_networks_f32_match_f64() {
    check_deep_networks_f32_match_f64();
}

pub fn check_deep_networks_f32_match_f64() {
    for style in [GeneratorStyle::StandardResnet, GeneratorStyle::MobileResnet] {
        let spec = toy_spec(style);
        let gen = Generator::new(&spec).unwrap();
        let store: ParamStore<f64> = gen.init_params(40);
        let input = rand_tensor::<f64>(&[2, 3, 8, 8], 41, -1.0, 1.0);
        let lo = analytic::<f32>(
            &|g, x, s| Ok(gen.forward(g, s, None, x, ParamMode::Train)?.out),
            &input,
            &store,
        );
        let hi = analytic::<f64>(
            &|g, x, s| Ok(gen.forward(g, s, None, x, ParamMode::Train)?.out),
            &input,
            &store,
        );
        assert_eq!(lo.len(), hi.len());
        for ((name, a), (_, b)) in lo.iter().zip(&hi) {
            let e = rel_err(a, b, 1e-4);
            assert!(e < 1e-3, "{style:?} {name}: rel err {e:.3e}");
        }
    }
    let d = Discriminator::new(&DiscriminatorSpec {
        ndf: 4,
        n_layers: 2,
        in_channels: 6,
    })
    .unwrap();
    let store: ParamStore<f64> = d.init_params(43);
    let input = rand_tensor::<f64>(&[2, 6, 16, 16], 42, -1.0, 1.0);
    let lo = analytic::<f32>(
        &|g, x, s| d.forward(g, s, x, ParamMode::Train),
        &input,
        &store,
    );
    let hi = analytic::<f64>(
        &|g, x, s| d.forward(g, s, x, ParamMode::Train),
        &input,
        &store,
    );
    for ((name, a), (_, b)) in lo.iter().zip(&hi) {
        let e = rel_err(a, b, 1e-4);
        assert!(e < 1e-3, "discriminator {name}: rel err {e:.3e}");
    }
}

#[test]
fn networks_f32() {
    distill_suite::<f32>();
}
