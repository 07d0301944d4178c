// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

pub mod codec;
pub mod deathtime;
pub mod engine;
pub mod expctl;
pub mod flashsim;
pub mod spacemap;
pub mod workload;
