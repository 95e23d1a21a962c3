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

//! Procedural toy image-translation datasets and PPM image I/O.
//!
//! Every sample is a pure function of `(seed, index)`: geometry is
//! rasterized with integer arithmetic from a SplitMix64 stream, and floats
//! appear only when palette bytes are mapped to `[-1, 1]`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fnv1a;
use crate::objectives::PairedSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Edge map → filled shapes.
    #[serde(rename = "edges2fill")]
    Edges2Fill,
    /// Grayscale → colored shapes.
    #[serde(rename = "colorize")]
    Colorize,
    /// Shapes → the same shapes.
    #[serde(rename = "identity")]
    Identity,
    /// Unpaired: horizontal stripes (A) → vertical stripes (B).
    #[serde(rename = "stripesA2B")]
    StripesA2B,
}

impl Task {
    pub fn is_paired(self) -> bool {
        self != Task::StripesA2B
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub task: Task,
    pub n_train: usize,
    pub n_val: usize,
    pub resolution: usize,
    pub seed: u64,
}

/// Minimum validation size; Fréchet statistics need more samples than
/// feature dimensions.
pub const MIN_VAL: usize = 65;

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_val < MIN_VAL {
            return Err(Error::RunConfig(format!(
                "n_val = {} is below the minimum of {MIN_VAL}",
                self.n_val
            )));
        }
        if self.resolution == 0 || !self.resolution.is_multiple_of(4) {
            return Err(Error::RunConfig(format!(
                "resolution {} must be a positive multiple of 4",
                self.resolution
            )));
        }
        if self.n_train == 0 {
            return Err(Error::RunConfig("n_train must be positive".into()));
        }
        Ok(())
    }
}

/// One generated example; images are `[3, H, W]` in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: u64,
    pub input: Tensor,
    /// Absent for unpaired tasks.
    pub target: Option<Tensor>,
}

/// `[N, 3, H, W]` tensors for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub inputs: Tensor,
    /// Paired targets, absent for unpaired tasks.
    pub targets: Option<Tensor>,
    /// Target-domain images drawn independently of `inputs` (unpaired tasks).
    pub domain_b: Option<Tensor>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Images the translated outputs should resemble.
    pub fn references(&self) -> &Tensor {
        self.targets
            .as_ref()
            .or(self.domain_b.as_ref())
            .expect("every split has targets or a target-domain pool")
    }

    /// Paired view; for unpaired tasks the pairing is the reference
    /// translation of each input (see [`reference_translation`]).
    pub fn paired(&self, task: Task) -> Result<PairedSet> {
        let targets = match &self.targets {
            Some(t) => t.clone(),
            None => reference_translation(task, &self.inputs)?,
        };
        PairedSet::new(self.inputs.clone(), targets)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Split,
    pub val: Split,
}

const BG: [u8; 3] = [255, 255, 255];
/// Fill colors, chosen so their luma values are at least 25 apart and a
/// grayscale image still identifies the color.
pub const PALETTE: [[u8; 3]; 5] = [
    [20, 20, 140],
    [220, 30, 30],
    [40, 170, 40],
    [250, 140, 20],
    [240, 230, 40],
];

pub fn luma(c: [u8; 3]) -> u8 {
    ((299 * c[0] as u32 + 587 * c[1] as u32 + 114 * c[2] as u32 + 500) / 1000) as u8
}

/// Stream for one sample: SplitMix64 seeded from `(seed, index, salt)`.
fn stream(seed: u64, index: u64, salt: u64) -> SplitMix64 {
    let key =
        seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    SplitMix64::seed_from_u64(key)
}

fn below(rng: &mut SplitMix64, n: u64) -> u64 {
    rng.next_u64() % n
}

fn range(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + below(rng, (hi - lo + 1) as u64) as usize
}

/// Palette index map (0 = background, k = PALETTE[k-1]) of 1–4 rectangles
/// and circles.
fn shapes(rng: &mut SplitMix64, res: usize) -> Vec<u8> {
    let mut idx = vec![0u8; res * res];
    let n = range(rng, 1, 4);
    for _ in 0..n {
        let color = 1 + below(rng, PALETTE.len() as u64) as u8;
        if below(rng, 2) == 0 {
            let w = range(rng, (res / 8).max(1), (res / 3).max(1));
            let h = range(rng, (res / 8).max(1), (res / 3).max(1));
            let x0 = range(rng, 0, res - w);
            let y0 = range(rng, 0, res - h);
            for y in y0..y0 + h {
                idx[y * res + x0..y * res + x0 + w].fill(color);
            }
        } else {
            let r = range(rng, (res / 16).max(1), (res / 6).max(1)) as i64;
            let cx = range(rng, 0, res - 1) as i64;
            let cy = range(rng, 0, res - 1) as i64;
            for y in 0..res as i64 {
                for x in 0..res as i64 {
                    if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r {
                        idx[(y as usize) * res + x as usize] = color;
                    }
                }
            }
        }
    }
    idx
}

fn color_of(i: u8) -> [u8; 3] {
    if i == 0 {
        BG
    } else {
        PALETTE[i as usize - 1]
    }
}

/// Pixels with a 4-neighbour of a different palette index.
pub fn edge_mask(idx: &[u8], res: usize) -> Vec<bool> {
    let mut m = vec![false; res * res];
    for y in 0..res {
        for x in 0..res {
            let c = idx[y * res + x];
            let differs = (x > 0 && idx[y * res + x - 1] != c)
                || (x + 1 < res && idx[y * res + x + 1] != c)
                || (y > 0 && idx[(y - 1) * res + x] != c)
                || (y + 1 < res && idx[(y + 1) * res + x] != c);
            m[y * res + x] = differs;
        }
    }
    m
}

/// Maps a channels-last RGB byte image to a `[3, H, W]` tensor.
fn to_tensor(rgb: &[[u8; 3]], res: usize) -> Tensor {
    let mut data = vec![0f32; 3 * res * res];
    for (p, px) in rgb.iter().enumerate() {
        for c in 0..3 {
            data[c * res * res + p] = byte_to_unit(px[c]);
        }
    }
    Tensor::from_vec(vec![3, res, res], data).expect("consistent")
}

pub fn byte_to_unit(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

/// Round-half-up quantization of `[-1, 1]` to a byte.
pub fn unit_to_byte(v: f32) -> u8 {
    let x = ((v as f64 + 1.0) * 127.5 + 0.5).floor();
    x.clamp(0.0, 255.0) as u8
}

fn stripes(rng: &mut SplitMix64, res: usize, vertical: bool) -> Vec<[u8; 3]> {
    let color = PALETTE[below(rng, PALETTE.len() as u64) as usize];
    let width = range(rng, 2, (res / 4).max(2));
    let phase = below(rng, (2 * width) as u64) as usize;
    let mut img = vec![BG; res * res];
    for y in 0..res {
        for x in 0..res {
            let t = if vertical { x } else { y };
            if ((t + phase) / width).is_multiple_of(2) {
                img[y * res + x] = color;
            }
        }
    }
    img
}

const SALT_A: u64 = 1;
const SALT_B: u64 = 2;

/// Generates sample `index` of `spec` in isolation.
pub fn sample(spec: &DatasetSpec, index: u64) -> Sample {
    let res = spec.resolution;
    match spec.task {
        Task::StripesA2B => {
            let mut rng = stream(spec.seed, index, SALT_A);
            Sample {
                index,
                input: to_tensor(&stripes(&mut rng, res, false), res),
                target: None,
            }
        }
        task => {
            let mut rng = stream(spec.seed, index, 0);
            let idx = shapes(&mut rng, res);
            let target: Vec<[u8; 3]> = idx.iter().map(|&i| color_of(i)).collect();
            let input: Vec<[u8; 3]> = match task {
                Task::Identity => target.clone(),
                Task::Colorize => target.iter().map(|&c| [luma(c); 3]).collect(),
                Task::Edges2Fill => edge_mask(&idx, res)
                    .into_iter()
                    .map(|e| if e { [0, 0, 0] } else { BG })
                    .collect(),
                Task::StripesA2B => unreachable!(),
            };
            Sample {
                index,
                input: to_tensor(&input, res),
                target: Some(to_tensor(&target, res)),
            }
        }
    }
}

/// Target-domain image `index` of an unpaired task, drawn from its own stream.
pub fn domain_b_sample(spec: &DatasetSpec, index: u64) -> Tensor {
    let mut rng = stream(spec.seed, index, SALT_B);
    to_tensor(&stripes(&mut rng, spec.resolution, true), spec.resolution)
}

/// Translation that pairs an unpaired task's inputs with target-domain
/// images. For stripes it is the transpose (horizontal ↔ vertical).
pub fn reference_translation(task: Task, inputs: &Tensor) -> Result<Tensor> {
    match task {
        Task::StripesA2B => {
            let s = inputs.shape();
            let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
            let src = inputs.data();
            let mut out = vec![0f32; src.len()];
            for p in 0..n * c {
                for y in 0..h {
                    for x in 0..w {
                        out[p * h * w + x * h + y] = src[p * h * w + y * w + x];
                    }
                }
            }
            Tensor::from_vec(vec![n, c, w, h], out)
        }
        _ => Err(Error::RunConfig(format!(
            "task {task:?} has paired targets"
        ))),
    }
}

fn batch(items: Vec<Tensor>) -> Result<Tensor> {
    let with_batch: Vec<Tensor> = items
        .into_iter()
        .map(|t| {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.reshape(s)
        })
        .collect::<Result<_>>()?;
    Tensor::stack(&with_batch)
}

fn split(spec: &DatasetSpec, lo: u64, hi: u64) -> Result<Split> {
    let samples: Vec<Sample> = (lo..hi).map(|i| sample(spec, i)).collect();
    let targets = if spec.task.is_paired() {
        Some(batch(
            samples
                .iter()
                .map(|s| s.target.clone().expect("paired"))
                .collect(),
        )?)
    } else {
        None
    };
    let domain_b = if spec.task.is_paired() {
        None
    } else {
        Some(batch((lo..hi).map(|i| domain_b_sample(spec, i)).collect())?)
    };
    Ok(Split {
        inputs: batch(samples.into_iter().map(|s| s.input).collect())?,
        targets,
        domain_b,
    })
}

/// Train indices `[0, n_train)`, validation `[n_train, n_train + n_val)`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let nt = spec.n_train as u64;
    Ok(Dataset {
        spec: spec.clone(),
        train: split(spec, 0, nt)?,
        val: split(spec, nt, nt + spec.n_val as u64)?,
    })
}

impl Dataset {
    /// FNV-1a over the little-endian bytes of every tensor, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        for s in [&self.train, &self.val] {
            for t in [Some(&s.inputs), s.targets.as_ref(), s.domain_b.as_ref()]
                .into_iter()
                .flatten()
            {
                for v in t.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        format!("{:016x}", fnv1a(&bytes))
    }

    /// Writes `<root>/{train,val}/{input,target}/<index>.ppm` and
    /// `dataset.json`.
    pub fn write_dir(&self, root: &Path) -> Result<()> {
        let nt = self.spec.n_train;
        for (name, s, base) in [("train", &self.train, 0), ("val", &self.val, nt)] {
            let tgt = s.targets.as_ref().or(s.domain_b.as_ref());
            for (sub, t) in [("input", Some(&s.inputs)), ("target", tgt)] {
                let Some(t) = t else { continue };
                let dir = root.join(name).join(sub);
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for i in 0..s.len() {
                    write_ppm(&dir.join(format!("{}.ppm", base + i)), &t.sample(i))?;
                }
            }
        }
        let manifest = serde_json::json!({
            "spec": self.spec,
            "content_hash": self.content_hash(),
        });
        let path = root.join("dataset.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }
}

/// Reads every `<index>.ppm` in `dir`, ordered by index, into `[N, 3, H, W]`.
pub fn read_ppm_dir(dir: &Path) -> Result<Tensor> {
    let mut entries: Vec<(u64, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .filter_map(|p| {
            let stem = p.file_stem()?.to_str()?.parse::<u64>().ok()?;
            Some((stem, p))
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Image {
            path: dir.to_path_buf(),
            detail: "no <index>.ppm files".into(),
        });
    }
    let imgs = entries
        .iter()
        .map(|(_, p)| read_ppm(p))
        .collect::<Result<Vec<_>>>()?;
    batch(imgs)
}

/// Binary P6 encoding of a `[3, H, W]` or `[1, 3, H, W]` image.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    let (c, h, w) = match s {
        [3, h, w] | [1, 3, h, w] => (3, *h, *w),
        _ => {
            return Err(Error::shape(
                "write_ppm",
                format!("expected a 3-channel image, got {s:?}"),
            ))
        }
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for p in 0..h * w {
        for ch in 0..c {
            out.push(unit_to_byte(d[ch * h * w + p]));
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let bytes = encode_ppm(image)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|detail| Error::Image {
        path: path.to_path_buf(),
        detail,
    })
}

/// Parses a binary P6 image with maxval 255 into `[3, H, W]`.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("header ended early".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P6" {
        return Err(format!("magic {magic:?}, expected P6"));
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what} {t:?}"))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval}, only 255 is supported"));
    }
    if w == 0 || h == 0 {
        return Err("zero-sized image".into());
    }
    // Exactly one whitespace byte separates the header from the payload.
    let payload = &bytes[(pos + 1).min(bytes.len())..];
    let need = 3 * w * h;
    if payload.len() < need {
        return Err(format!(
            "payload has {} bytes, expected {need}",
            payload.len()
        ));
    }
    let mut data = vec![0f32; need];
    for p in 0..w * h {
        for c in 0..3 {
            data[c * w * h + p] = byte_to_unit(payload[3 * p + c]);
        }
    }
    Tensor::from_vec(vec![3, h, w], data).map_err(|e| e.to_string())
}

/// Tiles `[N, 3, H, W]` images into a grid with `cols` columns.
pub fn contact_sheet(images: &Tensor, cols: usize) -> Result<Tensor> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 3 || cols == 0 {
        return Err(Error::shape("contact_sheet", format!("{s:?}")));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let rows = n.div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut out = vec![1f32; 3 * gh * gw];
    let d = images.data();
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out[ch * gh * gw + (r * h + y) * gw + c * w + x] =
                        d[((i * 3 + ch) * h + y) * w + x];
                }
            }
        }
    }
    Tensor::from_vec(vec![3, gh, gw], out)
}
