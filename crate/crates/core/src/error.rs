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

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("unsupported configuration for {op}: {detail}")]
    Unsupported { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid architecture: {0}")]
    Arch(String),

    #[error("invalid channel config: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {term} is not finite")]
    Divergence { step: u64, term: String },

    #[error("no configuration satisfies the MAC budget {budget}")]
    InfeasibleBudget { budget: u64 },

    #[error("search space has {size} configurations, more than the limit {limit}")]
    SpaceTooLarge { size: u128, limit: u128 },

    #[error("invalid search parameters: {0}")]
    SearchParams(String),

    #[error("not enough samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("invalid statistics: {0}")]
    Stats(String),

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint hash mismatch (stored {stored:016x}, computed {computed:016x})")]
    HashMismatch { stored: u64, computed: u64 },

    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),

    #[error("checkpoint has unexpected tensor {0}")]
    UnexpectedTensor(String),

    #[error("checkpoint is truncated or malformed: {0}")]
    Malformed(String),

    #[error("malformed image {path}: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error("invalid run config: {0}")]
    RunConfig(String),

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("artifacts directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable numeric code, shared with the C API.
    pub fn code(&self) -> i32 {
        match self {
            Error::Shape { .. } => 10,
            Error::Unsupported { .. } => 11,
            Error::NonScalarLoss(_) => 12,
            Error::Arch(_) => 20,
            Error::Config(_) => 21,
            Error::Divergence { .. } => 30,
            Error::InfeasibleBudget { .. } => 40,
            Error::SpaceTooLarge { .. } => 41,
            Error::SearchParams(_) => 42,
            Error::TooFewSamples { .. } => 50,
            Error::Stats(_) => 51,
            Error::BadMagic => 60,
            Error::VersionMismatch { .. } => 61,
            Error::HashMismatch { .. } => 62,
            Error::MissingTensor(_) => 63,
            Error::UnexpectedTensor(_) => 64,
            Error::Malformed(_) => 65,
            Error::Image { .. } => 70,
            Error::RunConfig(_) => 80,
            Error::Stage { source, .. } => source.code(),
            Error::Locked(_) => 81,
            Error::Io { .. } => 90,
            Error::Json(_) => 91,
        }
    }
}
