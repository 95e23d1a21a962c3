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

//! C interface to `gancomp`.
//!
//! Every fallible function returns a status: `GC_OK` (0) or the error code
//! of the failure, which matches `gancomp::Error::code`. The message of the
//! last failure on the calling thread is available through
//! [`gc_last_error_message`]. Models are opaque handles released with
//! [`gc_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gancomp::arch::{ChannelConfig, GeneratorSpec};
use gancomp::config::RunConfig;
use gancomp::cost::generator_cost;
use gancomp::metrics::ffd;
use gancomp::pipeline::run_pipeline;
use gancomp::tensor::Tensor;
use gancomp::trainer::TrainedModel;
use gancomp::Error;

pub const GC_OK: i32 = 0;
/// A required pointer argument was null.
pub const GC_ERR_NULL: i32 = 1;
/// A string argument was not valid UTF-8.
pub const GC_ERR_UTF8: i32 = 2;
/// An output buffer was too small.
pub const GC_ERR_BUFFER: i32 = 3;
/// An internal panic was caught.
pub const GC_ERR_PANIC: i32 = 4;
pub const GC_ERR_SHAPE: i32 = 10;
pub const GC_ERR_ARCH: i32 = 20;
pub const GC_ERR_CONFIG: i32 = 21;
pub const GC_ERR_DIVERGENCE: i32 = 30;
pub const GC_ERR_INFEASIBLE_BUDGET: i32 = 40;
pub const GC_ERR_TOO_FEW_SAMPLES: i32 = 50;
pub const GC_ERR_BAD_MAGIC: i32 = 60;
pub const GC_ERR_VERSION_MISMATCH: i32 = 61;
pub const GC_ERR_HASH_MISMATCH: i32 = 62;
pub const GC_ERR_MISSING_TENSOR: i32 = 63;
pub const GC_ERR_UNEXPECTED_TENSOR: i32 = 64;
pub const GC_ERR_MALFORMED: i32 = 65;
pub const GC_ERR_RUN_CONFIG: i32 = 80;
pub const GC_ERR_LOCKED: i32 = 81;
pub const GC_ERR_IO: i32 = 90;
pub const GC_ERR_JSON: i32 = 91;

/// A trained generator (teacher, student, supernet or fine-tuned model).
pub struct GcModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.code(), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    let (code, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return GC_OK,
        Ok(Err(Failure(c, m))) => (c, m),
        Err(_) => (GC_ERR_PANIC, "internal panic".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    code
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(GC_ERR_NULL, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GC_ERR_UTF8, format!("{what} is not UTF-8")))
}

unsafe fn opt_config(p: *const c_char) -> Result<Option<ChannelConfig>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    Ok(Some(ChannelConfig::parse(text(p, "config_vec")?)?))
}

fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(GC_ERR_NULL, format!("{what} is null")))
}

/// Copies `src` into a caller buffer of `cap` bytes, NUL-terminated and
/// truncated if needed; returns the full length excluding the terminator.
unsafe fn copy_out(src: &str, buf: *mut c_char, cap: usize) -> usize {
    if !buf.is_null() && cap > 0 {
        let n = src.len().min(cap - 1);
        ptr::copy_nonoverlapping(src.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    src.len()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the last error message of this thread into `buf` (capacity `cap`
/// bytes, always NUL-terminated when `cap > 0`) and returns its full length.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gc_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| copy_out(&e.borrow(), buf, cap))
}

/// MACs and parameters of the generator described by `spec_json` (a
/// GeneratorSpec document), optionally sliced to `config_vec`
/// ("c1,c2,..."; null for full width), at `resolution` (0 for the spec's).
///
/// # Safety
/// String arguments must be null or NUL-terminated; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn gc_generator_cost(
    spec_json: *const c_char,
    config_vec: *const c_char,
    resolution: usize,
    macs: *mut u64,
    params: *mut u64,
) -> i32 {
    guard(|| {
        let spec: GeneratorSpec =
            serde_json::from_str(text(spec_json, "spec_json")?).map_err(Error::from)?;
        spec.validate()?;
        let config = opt_config(config_vec)?;
        let res = if resolution == 0 {
            spec.resolution
        } else {
            resolution
        };
        let r = generator_cost(&spec, config.as_ref(), res)?;
        *out(macs, "macs")? = r.total_macs;
        *out(params, "params")? = r.total_params;
        Ok(())
    })
}

/// Loads a checkpoint into a new model handle.
///
/// # Safety
/// `path` must be NUL-terminated; `model` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gc_model_load(path: *const c_char, model: *mut *mut GcModel) -> i32 {
    guard(|| {
        let slot = out(model, "model")?;
        *slot = ptr::null_mut();
        let m = TrainedModel::load(&PathBuf::from(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(GcModel { inner: m }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`gc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gc_model_free(model: *mut GcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input side length the model was built for.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gc_model_resolution(model: *const GcModel, side: *mut usize) -> i32 {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| Failure(GC_ERR_NULL, "model is null".into()))?;
        *out(side, "side")? = m.inner.spec().resolution;
        Ok(())
    })
}

/// Translates `n` images of `3 × side × side` floats in [-1, 1] (NCHW,
/// contiguous) into `output`, which must hold the same number of floats.
/// `config_vec` selects a sub-network of a supernet; null runs full width.
///
/// # Safety
/// `input` and `output` must each point to `n·3·side·side` floats.
#[no_mangle]
pub unsafe extern "C" fn gc_model_translate(
    model: *const GcModel,
    config_vec: *const c_char,
    input: *const f32,
    n: usize,
    side: usize,
    output: *mut f32,
) -> i32 {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| Failure(GC_ERR_NULL, "model is null".into()))?;
        if input.is_null() || output.is_null() {
            return Err(Failure(GC_ERR_NULL, "image buffer is null".into()));
        }
        let len = n * 3 * side * side;
        let x = Tensor::from_vec(
            vec![n, 3, side, side],
            std::slice::from_raw_parts(input, len).to_vec(),
        )?;
        let config = opt_config(config_vec)?;
        let y = m.inner.translate(config.as_ref(), &x)?;
        if y.data().len() != len {
            return Err(Failure(
                GC_ERR_SHAPE,
                format!("output has {} values, buffer {len}", y.data().len()),
            ));
        }
        ptr::copy_nonoverlapping(y.data().as_ptr(), output, len);
        Ok(())
    })
}

/// Fréchet feature distance between two image sets (`3 × side × side`
/// floats each, NCHW).
///
/// # Safety
/// `a` must point to `n_a·3·side·side` floats and `b` to `n_b·3·side·side`.
#[no_mangle]
pub unsafe extern "C" fn gc_ffd(
    a: *const f32,
    n_a: usize,
    b: *const f32,
    n_b: usize,
    side: usize,
    distance: *mut f64,
) -> i32 {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(Failure(GC_ERR_NULL, "image buffer is null".into()));
        }
        let img = side * side * 3;
        let ta = Tensor::from_vec(
            vec![n_a, 3, side, side],
            std::slice::from_raw_parts(a, n_a * img).to_vec(),
        )?;
        let tb = Tensor::from_vec(
            vec![n_b, 3, side, side],
            std::slice::from_raw_parts(b, n_b * img).to_vec(),
        )?;
        *out(distance, "distance")? = ffd(&ta, &tb)?;
        Ok(())
    })
}

/// Runs (or resumes) the pipeline configured in the JSON file `config_path`
/// into `out_dir`. The report JSON is copied into `report` (capacity `cap`,
/// may be null); `report_len` (may be null) receives its full length.
///
/// # Safety
/// Paths must be NUL-terminated; `report` must be null or hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn gc_pipeline_run(
    config_path: *const c_char,
    out_dir: *const c_char,
    report: *mut c_char,
    cap: usize,
    report_len: *mut usize,
) -> i32 {
    guard(|| {
        let cfg = RunConfig::load(&PathBuf::from(text(config_path, "config_path")?))?;
        let run = run_pipeline(&cfg, &PathBuf::from(text(out_dir, "out_dir")?))?;
        let json = serde_json::to_string(&run.report).map_err(Error::from)?;
        let full = copy_out(&json, report, cap);
        if let Some(l) = report_len.as_mut() {
            *l = full;
        }
        if !report.is_null() && full >= cap {
            return Err(Failure(
                GC_ERR_BUFFER,
                format!("report needs {} bytes", full + 1),
            ));
        }
        Ok(())
    })
}
