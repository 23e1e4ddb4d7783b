//! Benchmark harness: timed repetitions with oracle validation.
//!
//! Every report validates the backend's output against the sequential
//! oracle once before timing, and summarizes wall times as the average of
//! the middle tier of the measurements (the middle third after sorting),
//! with the median alongside.

use crate::backend::{run_method, Backend, RunConfig};
use crate::corpus::{self, CorpusProgram};
use crate::eval::RtError;
use crate::partition::StrategyRegistry;
use crate::value::{approx_eq, checksum, Value};
use serde::Serialize;
use std::time::Instant;

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub program: String,
    pub backend: String,
    pub n_slaves: usize,
    pub size: usize,
    pub repetitions: usize,
    pub wall_times_s: Vec<f64>,
    pub middle_tier_mean_s: f64,
    pub median_s: f64,
    pub output_checksum: String,
    pub oracle_checksum: String,
    pub output_validated: bool,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("unknown benchmark `{0}`")]
    UnknownProgram(String),
    #[error("checksum mismatch against the sequential oracle (tolerance {tol}): {detail}")]
    ChecksumMismatch { tol: f64, detail: String },
    #[error(transparent)]
    Runtime(#[from] RtError),
}

/// Average of the middle third of the sorted measurements.
pub fn middle_tier_mean(times: &[f64]) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tier = (sorted.len() / 3).max(1);
    let start = (sorted.len() - tier) / 2;
    let mid = &sorted[start..start + tier];
    mid.iter().sum::<f64>() / mid.len() as f64
}

pub fn median(times: &[f64]) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted[sorted.len() / 2]
}

pub fn bench(
    program: &CorpusProgram,
    cfg: &RunConfig,
    size: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport, BenchError> {
    let vp = corpus::load(program);
    let registry = StrategyRegistry::with_builtins();
    let args = corpus::generate_args(program.name, size, seed);

    // validate once against the oracle before timing
    let oracle = crate::interp::interpret(&vp, program.entry, &args)?;
    let out = run_method(&vp, &registry, program.entry, &args, cfg)?;
    let tol = match cfg.backend {
        Backend::Seq => 0.0,
        Backend::Sm => program.tol_sm,
        Backend::GpuSim => program.tol_sm.max(program.tol_gpu),
    };
    if !approx_eq(&out.value, &oracle, tol) {
        return Err(BenchError::ChecksumMismatch {
            tol,
            detail: format!(
                "oracle {:016x} vs {} {:016x}",
                checksum(&oracle),
                cfg.backend.name(),
                checksum(&out.value)
            ),
        });
    }

    let mut times = Vec::with_capacity(repetitions);
    let mut last = out.value;
    for _ in 0..repetitions {
        let t = Instant::now();
        last = run_method(&vp, &registry, program.entry, &args, cfg)?.value;
        times.push(t.elapsed().as_secs_f64());
    }

    Ok(BenchReport {
        program: program.name.to_string(),
        backend: cfg.backend.name().to_string(),
        n_slaves: cfg.n_slaves,
        size,
        repetitions,
        middle_tier_mean_s: middle_tier_mean(&times),
        median_s: median(&times),
        wall_times_s: times,
        output_checksum: format!("{:016x}", checksum(&last)),
        oracle_checksum: format!("{:016x}", checksum(&oracle)),
        output_validated: true,
    })
}

/// Run one invocation (no timing) and validate against the oracle; used
/// by the equivalence suites.
pub fn validate_once(
    program: &CorpusProgram,
    cfg: &RunConfig,
    size: usize,
    seed: u64,
) -> Result<Value, BenchError> {
    let vp = corpus::load(program);
    let registry = StrategyRegistry::with_builtins();
    let args = corpus::generate_args(program.name, size, seed);
    let oracle = crate::interp::interpret(&vp, program.entry, &args)?;
    let out = run_method(&vp, &registry, program.entry, &args, cfg)?;
    let tol = match cfg.backend {
        Backend::Seq => 0.0,
        Backend::Sm => program.tol_sm,
        Backend::GpuSim => program.tol_sm.max(program.tol_gpu),
    };
    if !approx_eq(&out.value, &oracle, tol) {
        return Err(BenchError::ChecksumMismatch {
            tol,
            detail: format!("program {} size {size} seed {seed}", program.name),
        });
    }
    Ok(out.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn middle_tier_drops_extremes() {
        let times = vec![100.0, 1.0, 2.0, 3.0, 4.0, 0.001];
        let m = middle_tier_mean(&times);
        assert!((2.0..=3.5).contains(&m), "mean {m}");
    }
}
