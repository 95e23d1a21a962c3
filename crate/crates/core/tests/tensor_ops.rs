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

use gancomp::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let bv = b.map(|b| g.constant(b.clone()));
    let y = g.conv2d(xv, wv, bv, stride, pad, 1).unwrap();
    g.value(y).clone()
}

fn conv_t(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.conv_transpose2d(xv, wv, None, 1).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_identity_and_sum() {
    let x = Tensor::from_vec(vec![1, 1, 1, 1], vec![0.37]).unwrap();
    let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    assert_eq!(conv(&x, &w, None, 1, 0).data(), &[0.37]);
    let y = conv(
        &Tensor::ones(vec![1, 1, 3, 3]),
        &Tensor::ones(vec![1, 1, 3, 3]),
        None,
        1,
        0,
    );
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.data(), &[9.0]);
}

#[test]
fn conv_matches_nested_loops_exactly() {
    let (n, ci, h, w, co, k, s, p) = (2, 3, 5, 5, 4, 3, 2, 1);
    let x = rand_t(&[n, ci, h, w], 1);
    let wt = rand_t(&[co, ci, k, k], 2);
    let b = rand_t(&[co], 3);
    let y = conv(&x, &wt, Some(&b), s, p);
    let (oh, ow) = ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
    assert_eq!(y.shape(), &[n, co, oh, ow]);
    let (xd, wd) = (x.data(), wt.data());
    for ni in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    // Same accumulation order as the documented kernel:
                    // input channel, then kernel row, then kernel column.
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += xd[((ni * ci + c) * h + iy as usize) * w + ix as usize]
                                    * wd[((o * ci + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    acc += b.data()[o];
                    let got = y.data()[((ni * co + o) * oh + oy) * ow + ox];
                    assert_eq!(
                        got.to_bits(),
                        acc.to_bits(),
                        "({ni},{o},{oy},{ox}) {got} vs {acc}"
                    );
                }
            }
        }
    }
}

#[test]
fn transposed_conv_shape_and_scatter() {
    let x = Tensor::from_vec(vec![1, 1, 1, 1], vec![0.5]).unwrap();
    let y = conv_t(&x, &Tensor::ones(vec![1, 1, 3, 3]));
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    // Scatter oracle: output (oy, ox) = Σ x(iy, ix)·w(ky, kx) over
    // oy = 2·iy − 1 + ky; only ky, kx ∈ {1, 2} land inside a 2×2 output.
    assert_eq!(y.data(), &[0.5; 4]);

    for (h, w) in [(1, 1), (3, 5), (4, 4)] {
        let y = conv_t(&rand_t(&[2, 3, h, w], 4), &rand_t(&[3, 5, 3, 3], 5));
        assert_eq!(y.shape(), &[2, 5, 2 * h, 2 * w]);
    }

    let (ci, co, h, w) = (2, 3, 3, 4);
    let x = rand_t(&[1, ci, h, w], 6);
    let wt = rand_t(&[ci, co, 3, 3], 7);
    let y = conv_t(&x, &wt);
    let mut oracle = vec![0.0; co * 4 * h * w];
    for c in 0..ci {
        for iy in 0..h {
            for ix in 0..w {
                for o in 0..co {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let oy = (2 * iy + ky) as isize - 1;
                            let ox = (2 * ix + kx) as isize - 1;
                            if oy < 0 || ox < 0 || oy >= 2 * h as isize || ox >= 2 * w as isize {
                                continue;
                            }
                            oracle[(o * 2 * h + oy as usize) * 2 * w + ox as usize] += x.data()
                                [(c * h + iy) * w + ix]
                                * wt.data()[((c * co + o) * 3 + ky) * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    for (a, b) in y.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn transposed_conv_is_the_adjoint() {
    // <conv(x, w), y> = <x, conv_t(y, w)> with w read as [C_small, C_big]
    // for the transposed direction.
    let x = rand_t(&[2, 3, 8, 6], 8);
    let w = rand_t(&[5, 3, 3, 3], 9);
    let cx = conv(&x, &w, None, 2, 1);
    let y = rand_t(cx.shape(), 10);
    let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let ty = conv_t(&y, &w);
    assert_eq!(ty.shape(), x.shape());
    let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() / lhs.abs() < 1e-5, "{lhs} vs {rhs}");
}

#[test]
fn instance_norm_contract() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(vec![1, 2, 3, 3], 4.2));
    let scale = g.constant(Tensor::from_vec(vec![2], vec![1.5, -0.5]).unwrap());
    let shift = g.constant(Tensor::from_vec(vec![2], vec![0.25, -3.0]).unwrap());
    let y = g.instance_norm(x, scale, shift, 1e-5).unwrap();
    let d = g.value(y).data();
    assert!(d[..9].iter().all(|&v| (v - 0.25).abs() < 1e-9));
    assert!(d[9..].iter().all(|&v| (v + 3.0).abs() < 1e-9));

    let mut g = Graph::<f32>::new();
    let x = g.constant(rand_t(&[2, 3, 6, 6], 11).cast());
    let one = g.constant(Tensor::ones(vec![3]));
    let zero = g.constant(Tensor::zeros(vec![3]));
    let y = g.instance_norm(x, one, zero, 1e-5).unwrap();
    for plane in g.value(y).data().chunks(36) {
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / 36.0;
        let var = plane
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / 36.0;
        assert!(mean.abs() < 1e-5, "{mean}");
        assert!((var - 1.0).abs() < 1e-3, "{var}");
    }
}

#[test]
fn activation_anchors() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::from_vec(vec![3], vec![-1.0, 2.0, 0.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 2.0, 0.0]);
    let t = g.tanh(x);
    assert_eq!(g.value(t).data()[2], 0.0);
    let l = g.leaky_relu(x, 0.2);
    assert_eq!(g.value(l).data()[0], -0.2);
}

#[test]
fn backward_closed_forms() {
    let x0 = rand_t(&[2, 3, 4], 12);
    let mut g = Graph::new();
    let x = g.input(x0.clone(), true);
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let x = g.input(x0.clone(), true);
    let sq = g.square(x);
    let m = g.mean(sq);
    let grads = g.backward(m).unwrap();
    let n = x0.len() as f64;
    for (gv, xv) in grads.wrt(x).unwrap().data().iter().zip(x0.data()) {
        assert!((gv - 2.0 * xv / n).abs() < 1e-15);
    }

    let mut g = Graph::new();
    let x = g.input(x0, true);
    assert!(g.backward(x).is_err(), "non-scalar loss must be rejected");
}

fn store_with(value: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("p", Tensor::from_vec(vec![1], vec![value]).unwrap());
    s
}

fn set_grad(store: &mut ParamStore<f64>, g: f64) {
    let mut graph = Graph::new();
    let p = graph.param(store, "p", None).unwrap();
    let k = graph.scale(p, g);
    let l = graph.sum(k);
    graph.backward(l).unwrap().accumulate_into(store).unwrap();
}

#[test]
fn adam_matches_hand_stepped_oracle() {
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut store = store_with(1.0);
    let mut adam = Adam::new(cfg);
    let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let grads = [1.0, 1.0, -0.5, 2.0, 0.25];
    for (t, &gr) in grads.iter().enumerate() {
        set_grad(&mut store, gr);
        adam.step(&mut store, 0.1);
        let t = t as i32 + 1;
        m = 0.5 * m + 0.5 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        let mh = m / (1.0 - 0.5f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        p -= 0.1 * mh / (vh.sqrt() + 1e-8);
        let got = store.get("p").unwrap().data()[0];
        assert!((got - p).abs() < 1e-7, "step {t}: {got} vs {p}");
        if t == 1 {
            assert!((got - 0.9).abs() < 1e-7);
        }
    }
}

#[test]
fn adam_leaves_untouched_and_zero_grad_params() {
    let mut store = store_with(0.75);
    let mut adam = Adam::new(AdamConfig::default());
    adam.step(&mut store, 0.1);
    assert_eq!(store.get("p").unwrap().data(), &[0.75]);
    set_grad(&mut store, 0.0);
    adam.step(&mut store, 0.1);
    assert_eq!(store.get("p").unwrap().data(), &[0.75]);
}

#[test]
fn identical_gradient_streams_stay_identical() {
    let (mut a, mut b) = (store_with(0.3), store_with(0.3));
    let (mut oa, mut ob) = (
        Adam::new(AdamConfig::default()),
        Adam::new(AdamConfig::default()),
    );
    let mut rng = SplitMix64::seed_from_u64(13);
    for _ in 0..50 {
        let g = rng.gen_range(-3.0..3.0);
        set_grad(&mut a, g);
        set_grad(&mut b, g);
        oa.step(&mut a, 2e-3);
        ob.step(&mut b, 2e-3);
    }
    assert_eq!(
        a.get("p").unwrap().data()[0].to_bits(),
        b.get("p").unwrap().data()[0].to_bits()
    );
}
