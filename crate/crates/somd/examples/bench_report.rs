//! Benchmark harness: oracle-validated timed repetitions with a
//! middle-tier summary.

use somd::backend::{Backend, RunConfig};
use somd::bench::bench;
use somd::corpus;
use somd::runtime_sm::ExecConfigSM;

fn main() {
    let program = corpus::find("series").unwrap();
    for n_slaves in [1, 2] {
        let cfg = RunConfig {
            backend: Backend::Sm,
            n_slaves,
            sm: ExecConfigSM { pool_size: n_slaves, watchdog: None, stress_seed: None },
            ..Default::default()
        };
        let report = bench(program, &cfg, 64, 5, 7).unwrap();
        println!(
            "{} slaves: middle-tier mean {:.4}s, median {:.4}s, checksum {}",
            n_slaves, report.middle_tier_mean_s, report.median_s, report.output_checksum
        );
        if n_slaves == 1 {
            println!("full report:\n{}", report.to_json());
        }
    }
}
