//! Intermediate reductions: an auxiliary reduce-carrying method combines
//! the per-instance values mid-execution and broadcasts the result, and a
//! `sync reduce` block does the same for a shared scalar.

use somd::backend::{run_method, Backend, RunConfig};
use somd::corpus;
use somd::partition::StrategyRegistry;
use somd::value::{ArrayData, Value};

fn main() {
    let registry = StrategyRegistry::with_builtins();

    // norm: each instance computes sumProd over its partition; the
    // combined value reaches every instance before the normalization loop
    let program = corpus::find("norm").unwrap();
    let vp = corpus::load(program);
    let args = vec![Value::array(ArrayData::from_f64(vec![3.0, 4.0]))];
    let cfg = RunConfig { backend: Backend::Sm, n_slaves: 2, ..Default::default() };
    let out = run_method(&vp, &registry, "norm", &args, &cfg).unwrap();
    println!("norm([3, 4]) over 2 instances = {out:?}", out = out.value);

    // normalize expresses the same with a shared scalar and sync reduce
    let program = corpus::find("normalize").unwrap();
    let vp = corpus::load(program);
    let out = run_method(&vp, &registry, "normalize", &args, &cfg).unwrap();
    println!("normalize([3, 4]) over 2 instances = {out:?}", out = out.value);
}
