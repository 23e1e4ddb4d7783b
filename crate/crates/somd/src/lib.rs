//! Method-level data parallelism for a small annotated imperative
//! language: one call site, many method instances, each working a
//! partition of the inputs.
//!
//! A method qualifies values with `dist` (partitioning, with optional
//! `view` halos, `polyview`, `dim` and user strategies), declares a
//! `reduce` combining the per-instance results, shares scalars with
//! `shared`, and marks memory-consistency points with `sync` blocks. The
//! same source lowers onto two execution targets, both validated against
//! a sequential reference interpreter:
//!
//! - a shared-memory worker pool: a master partitions index ranges,
//!   spawns one task per method instance, waits on a completion phaser
//!   and reduces the rank-indexed results vector;
//! - a simulator of the GPU execution model: kernels split at sync
//!   boundaries, global-id guards instead of loops, explicit transfer
//!   ledger, per-group device reductions folded on the host, and
//!   cross-group hazard detection.
//!
//! ## Crate layout
//!
//! | module | role |
//! |--------|------|
//! | [`lexer`], [`parser`], [`ast`], [`pretty`] | source language frontend |
//! | [`validate`] | name/type checking, loop ranking and classification |
//! | [`partition`] | index-range partitioners, views, reductions, registry |
//! | [`plan_sm`], [`runtime_sm`] | shared-memory lowering and worker pool |
//! | [`plan_gpu`], [`device_sim`] | kernel lowering and device simulator |
//! | [`interp`] | sequential oracle |
//! | [`backend`], [`corpus`], [`bench`] | driver, benchmark programs, reports |
//!
//! ## Runnable examples
//!
//! Each major capability has one example under `examples/`:
//!
//! ```bash
//! cargo run -p somd --example parse_and_check
//! cargo run -p somd --example partitioning
//! cargo run -p somd --example emit_sm_plan
//! cargo run -p somd --example run_worker_pool
//! cargo run -p somd --example intermediate_reduction
//! cargo run -p somd --example emit_gpu_kernels
//! cargo run -p somd --example run_device_sim
//! cargo run -p somd --example custom_strategy
//! cargo run -p somd --example bench_report
//! ```
//!
//! The `somdc` binary wraps the same entry points as a command line:
//! `somdc check|inspect|run|bench`.

pub mod ast;
pub mod backend;
pub mod bench;
pub mod corpus;
pub mod device_sim;
pub mod diag;
pub mod eval;
pub mod interp;
pub mod lexer;
pub mod parser;
pub mod partition;
pub mod plan_gpu;
pub mod plan_sm;
pub mod pretty;
pub mod runtime_sm;
pub mod validate;
pub mod value;

pub use backend::{run_method, Backend, RunConfig};
pub use diag::{DiagCode, Diagnostic};
pub use parser::parse;
pub use validate::{validate, ValidatedProgram};
pub use value::Value;
