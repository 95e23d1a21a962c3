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

//! Image-quality metrics: Fréchet feature distance (FFD) over a fixed random
//! convolutional feature extractor, plus pixel L1 and PSNR.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;
use serde::{Serialize, Serializer};

use crate::arch::{ConvLayer, ParamMode, Plan, Step, Width};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor};

pub const EXTRACTOR_SEED: u64 = 0xFEED_F00D;
pub const FEATURE_DIM: usize = 64;
/// Fewest images per set; the covariance needs more samples than features.
pub const MIN_SAMPLES: usize = FEATURE_DIM + 1;
const EXTRACTOR_STD: f64 = 0.05;
const EXTRACTOR_WIDTHS: [usize; 4] = [16, 32, 64, 64];

/// Four stride-2 3×3 conv + ReLU stages and a global average pool. The
/// weights are drawn once from N(0, 0.05) and never trained.
pub struct FeatureExtractor {
    plan: Plan,
    store: ParamStore,
}

impl FeatureExtractor {
    fn build() -> Self {
        let mut plan = Plan::default();
        let mut cin = 3;
        for (i, &c) in EXTRACTOR_WIDTHS.iter().enumerate() {
            plan.conv(ConvLayer {
                bias: false,
                ..ConvLayer::conv(
                    format!("feat{i}"),
                    3,
                    2,
                    1,
                    Width::Fixed(cin),
                    Width::Fixed(c),
                )
            });
            plan.push(Step::Relu);
            cin = c;
        }
        let mut rng = SplitMix64::seed_from_u64(EXTRACTOR_SEED);
        let normal = Normal::new(0.0, EXTRACTOR_STD).expect("valid std");
        let mut store = ParamStore::new();
        for (name, shape) in plan.param_shapes(&[]) {
            let n = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
            store.insert(name, Tensor::from_vec(shape, data).expect("consistent"));
        }
        FeatureExtractor { plan, store }
    }

    /// The process-wide extractor.
    pub fn shared() -> &'static FeatureExtractor {
        static CELL: OnceLock<FeatureExtractor> = OnceLock::new();
        CELL.get_or_init(Self::build)
    }

    /// `[N, 3, H, W]` images → `N` feature vectors of length 64.
    pub fn features(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape(
                "features",
                format!("expected [N, 3, H, W], got {s:?}"),
            ));
        }
        const CHUNK: usize = 32;
        let mut out = Vec::with_capacity(s[0]);
        for start in (0..s[0]).step_by(CHUNK) {
            let end = (start + CHUNK).min(s[0]);
            let batch = Tensor::stack(&(start..end).map(|i| images.sample(i)).collect::<Vec<_>>())?;
            let mut g = Graph::new();
            let x = g.constant(batch);
            let y = self.plan.run(
                &mut g,
                &self.store,
                &[],
                x,
                ParamMode::Frozen,
                &mut Vec::new(),
            )?;
            let v = g.value(y);
            let (c, hw) = (v.shape()[1], v.shape()[2] * v.shape()[3]);
            for n in 0..end - start {
                out.push(
                    (0..c)
                        .map(|ch| {
                            let base = (n * c + ch) * hw;
                            v.data()[base..base + hw]
                                .iter()
                                .map(|&a| a as f64)
                                .sum::<f64>()
                                / hw as f64
                        })
                        .collect(),
                );
            }
        }
        Ok(out)
    }
}

/// Mean and covariance (denominator `n − 1`) of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fits statistics to `samples`, each of the same length `d`; requires
    /// at least `d + 1` samples.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let d = samples.first().map_or(0, Vec::len);
        if samples.len() < d + 1 || d == 0 {
            return Err(Error::TooFewSamples {
                need: d.max(1) + 1,
                got: samples.len(),
            });
        }
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::Stats("feature vectors differ in length".into()));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = vec![0.0; d * d];
        for s in samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1.0);
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(GaussianStats { mean, cov })
    }

    fn check(&self) -> Result<()> {
        let d = self.dim();
        if self.cov.len() != d * d {
            return Err(Error::Stats(format!(
                "covariance has {} entries for dim {d}",
                self.cov.len()
            )));
        }
        let scale = self
            .cov
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(1e-300);
        for i in 0..d {
            for j in i + 1..d {
                if (self.cov[i * d + j] - self.cov[j * d + i]).abs() > 1e-9 * scale {
                    return Err(Error::Stats(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if self.mean.iter().chain(&self.cov).any(|v| !v.is_finite()) {
            return Err(Error::Stats("non-finite statistics".into()));
        }
        Ok(())
    }
}

/// Eigen-decomposition of a symmetric `d × d` matrix by cyclic Jacobi
/// rotations. Returns eigenvalues and row-major eigenvectors (columns).
pub fn symmetric_eigen(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let trace: f64 = (0..d).map(|i| m[i * d + i].abs()).sum();
    let tol = 1e-10 * trace.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j] * m[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off < tol {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (mkp, mkq) = (m[k * d + p], m[k * d + q]);
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let (mpk, mqk) = (m[p * d + k], m[q * d + k]);
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..d).map(|i| m[i * d + i]).collect(), v)
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

fn check_eigs(eigs: &[f64], trace: f64, what: &str) -> Result<()> {
    let floor = -1e-6 * trace.abs().max(f64::MIN_POSITIVE);
    match eigs.iter().copied().find(|&e| e < floor) {
        Some(e) => Err(Error::Stats(format!(
            "{what} has eigenvalue {e:e}, not positive semidefinite"
        ))),
        None => Ok(()),
    }
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^½)`, with the trace of the root
/// taken from the eigenvalues of `√Σa · Σb · √Σa`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    a.check()?;
    b.check()?;
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::Stats(format!(
            "dimensions differ: {d} vs {}",
            b.dim()
        )));
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let tr_a: f64 = (0..d).map(|i| a.cov[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| b.cov[i * d + i]).sum();

    let (ea, va) = symmetric_eigen(&a.cov, d);
    check_eigs(&ea, tr_a, "first covariance")?;
    let (eb, _) = symmetric_eigen(&b.cov, d);
    check_eigs(&eb, tr_b, "second covariance")?;

    // √Σa = V diag(√λ) Vᵀ
    let mut scaled = va.clone();
    for i in 0..d {
        for k in 0..d {
            scaled[i * d + k] *= ea[k].max(0.0).sqrt();
        }
    }
    let mut sqrt_a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            sqrt_a[i * d + j] = (0..d).map(|k| scaled[i * d + k] * va[j * d + k]).sum();
        }
    }
    let mut m = matmul(&matmul(&sqrt_a, &b.cov, d), &sqrt_a, d);
    for i in 0..d {
        for j in i + 1..d {
            let s = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = s;
            m[j * d + i] = s;
        }
    }
    let (em, _) = symmetric_eigen(&m, d);
    let tr_sqrt: f64 = em.iter().map(|&e| e.max(0.0).sqrt()).sum();
    Ok((mean_term + tr_a + tr_b - 2.0 * tr_sqrt).max(0.0))
}

/// FFD between two image sets (`[N, 3, H, W]`, at least 65 each).
pub fn ffd(generated: &Tensor, reference: &Tensor) -> Result<f64> {
    for t in [generated, reference] {
        if t.shape().first().copied().unwrap_or(0) < MIN_SAMPLES {
            return Err(Error::TooFewSamples {
                need: MIN_SAMPLES,
                got: t.shape().first().copied().unwrap_or(0),
            });
        }
    }
    if generated.shape()[1..] != reference.shape()[1..] {
        return Err(Error::shape(
            "ffd",
            format!("{:?} vs {:?}", generated.shape(), reference.shape()),
        ));
    }
    let fx = FeatureExtractor::shared();
    let a = GaussianStats::fit(&fx.features(generated)?)?;
    let b = GaussianStats::fit(&fx.features(reference)?)?;
    frechet_distance(&a, &b)
}

fn finite_or_str<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PixelMetrics {
    pub l1: f64,
    /// `+∞` when the images are identical; serialized as `"inf"`.
    #[serde(serialize_with = "finite_or_str")]
    pub psnr: f64,
}

/// Mean absolute error and PSNR with a peak-to-peak range of 2.
pub fn pixel_metrics(a: &Tensor, b: &Tensor) -> Result<PixelMetrics> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "pixel_metrics",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let n = a.len().max(1) as f64;
    let (mut l1, mut se) = (0.0f64, 0.0f64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        l1 += d.abs();
        se += d * d;
    }
    let mse = se / n;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (4.0 / mse).log10()
    };
    Ok(PixelMetrics { l1: l1 / n, psnr })
}

/// Everything the `eval` command and pipeline reports print.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub ffd: f64,
    pub l1: f64,
    #[serde(serialize_with = "finite_or_str")]
    pub psnr: f64,
    pub n_images: usize,
}

/// FFD of `generated` against `references`, pixel metrics against the
/// row-aligned `targets`.
pub fn evaluate_images(
    generated: &Tensor,
    references: &Tensor,
    targets: &Tensor,
) -> Result<EvalMetrics> {
    let p = pixel_metrics(generated, targets)?;
    Ok(EvalMetrics {
        ffd: ffd(generated, references)?,
        l1: p.l1,
        psnr: p.psnr,
        n_images: generated.shape()[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(d: usize, v: f64) -> Vec<f64> {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = v;
        }
        m
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0];
        let (e, v) = symmetric_eigen(&a, 3);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| v[i * 3 + k] * e[k] * v[j * 3 + k]).sum();
                assert!((r - a[i * 3 + j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn closed_forms() {
        let d = 8;
        let a = GaussianStats {
            mean: vec![0.0; d],
            cov: diag(d, 1.0),
        };
        let b = GaussianStats {
            mean: vec![0.0; d],
            cov: diag(d, 4.0),
        };
        assert!((frechet_distance(&a, &b).unwrap() - d as f64).abs() < 1e-9);
        let mut shifted = a.clone();
        shifted.mean[0] = 1.0;
        assert!((frechet_distance(&a, &shifted).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let mut a = GaussianStats {
            mean: vec![0.0; 2],
            cov: diag(2, 1.0),
        };
        a.cov[1] = 0.5;
        assert!(matches!(frechet_distance(&a, &a), Err(Error::Stats(_))));
        let bad = GaussianStats {
            mean: vec![0.0; 2],
            cov: vec![1.0, 0.0, 0.0, -1.0],
        };
        assert!(matches!(frechet_distance(&bad, &bad), Err(Error::Stats(_))));
    }

    #[test]
    fn pixel_metric_anchors() {
        let a = Tensor::full(vec![1, 3, 2, 2], -1.0f32);
        let b = Tensor::full(vec![1, 3, 2, 2], 1.0f32);
        let m = pixel_metrics(&a, &b).unwrap();
        assert_eq!(m.l1, 2.0);
        assert_eq!(m.psnr, 0.0);
        let same = pixel_metrics(&a, &a).unwrap();
        assert_eq!(same.l1, 0.0);
        assert!(same.psnr.is_infinite());
        assert_eq!(serde_json::to_value(same).unwrap()["psnr"], "inf");
    }

    #[test]
    fn too_few_samples() {
        let x = Tensor::zeros(vec![64, 3, 8, 8]);
        assert!(matches!(
            ffd(&x, &x),
            Err(Error::TooFewSamples { need: 65, got: 64 })
        ));
    }
}
