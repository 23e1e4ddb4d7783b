//! Execute corpus programs on the worker pool and compare against the
//! sequential oracle across slave counts.

use somd::backend::{run_method, Backend, RunConfig};
use somd::corpus;
use somd::interp::interpret;
use somd::partition::StrategyRegistry;
use somd::value::{approx_eq, checksum};

fn main() {
    let registry = StrategyRegistry::with_builtins();
    for name in ["vectoradd", "sum", "sor", "series"] {
        let program = corpus::find(name).unwrap();
        let vp = corpus::load(program);
        let args = corpus::generate_args(name, 48, 11);
        let oracle = interpret(&vp, program.entry, &args).unwrap();
        print!("{name}: oracle checksum {:016x};", checksum(&oracle));
        for n_slaves in [1, 2, 4, 8] {
            let cfg = RunConfig { backend: Backend::Sm, n_slaves, ..Default::default() };
            let out = run_method(&vp, &registry, program.entry, &args, &cfg).unwrap();
            let ok = approx_eq(&out.value, &oracle, program.tol_sm);
            print!(" {n_slaves} slaves {}", if ok { "ok" } else { "MISMATCH" });
        }
        println!();
    }
}
