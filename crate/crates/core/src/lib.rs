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

//! Compression toolkit for conditional image-to-image GANs.
//!
//! The crate trains a ResNet generator teacher, distills it into a
//! once-for-all super-network whose channel-sliced sub-networks share
//! weights, searches those sub-networks under a MAC budget and fine-tunes the
//! winner. Everything runs on a small built-in autodiff engine at toy scale.

pub mod arch;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod search;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
