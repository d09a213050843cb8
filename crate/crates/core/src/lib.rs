// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod algorithms;
pub mod autotester;
pub mod builder;
pub mod eval;
pub mod linalg;
pub mod planted;
pub mod runtime;
pub mod store;
pub mod toy;
