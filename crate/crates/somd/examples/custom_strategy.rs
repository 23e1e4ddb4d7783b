//! User-defined partitioners and reducers register by name and plug into
//! the same machinery as the built-ins.

use somd::backend::{run_method, Backend, RunConfig};
use somd::corpus;
use somd::interp::interpret;
use somd::partition::{IndexRange, StrategyRegistry, UserReducer, UserStrategy};
use somd::parser::parse;
use somd::validate::validate;
use somd::value::{approx_eq, Scalar, Value};
use std::sync::Arc;

/// Splits a length into chunks of at most `chunk` elements, round-robin
/// over the slaves (a deliberately unbalanced strategy).
struct FrontLoaded;

impl UserStrategy for FrontLoaded {
    fn partition(&self, length: usize, n_slaves: usize, _args: &[Value]) -> Result<Vec<IndexRange>, String> {
        // first slave takes half, the rest split the remainder evenly
        let mut out = Vec::new();
        let mut at = 0usize;
        for rank in 0..n_slaves {
            let remaining = length - at;
            let left = n_slaves - rank;
            let take = if rank == 0 { remaining.div_ceil(2) } else { remaining.div_ceil(left) };
            let hi = (at + take).min(length);
            out.push(IndexRange { lo: at, hi, view_lo: at, view_hi: hi });
            at = hi;
        }
        Ok(out)
    }
}

struct MaxReducer;

impl UserReducer for MaxReducer {
    fn reduce(&self, partials: &[Value]) -> Result<Value, String> {
        let mut best = f64::NEG_INFINITY;
        for p in partials {
            if let Some(Scalar::Double(v)) = p.as_scalar() {
                best = best.max(v);
            }
        }
        Ok(Value::double(best))
    }
}

fn main() {
    let mut registry = StrategyRegistry::with_builtins();
    registry.register_strategy("frontloaded", Arc::new(FrontLoaded));
    registry.register_reducer("maxd", Arc::new(MaxReducer));

    let src = r#"
reduce(maxd)
double peak(dist(frontloaded) double[] a) {
  double best = 0;
  for (int i = 0; i < a.length; i++)
    if (a[i] > best) best = a[i];
  return best;
}
"#;
    let vp = validate(parse(src).unwrap(), &registry).unwrap();
    let args = vec![Value::array(somd::value::ArrayData::from_f64(
        (0..50).map(|i| ((i * 37 % 50) as f64) / 7.0).collect(),
    ))];
    let cfg = RunConfig { backend: Backend::Sm, n_slaves: 4, ..Default::default() };
    let out = run_method(&vp, &registry, "peak", &args, &cfg).unwrap();
    println!("peak over a front-loaded partition: {:?}", out.value);

    // the corpus sparse multiply uses the registered row-disjoint strategy
    let program = corpus::find("sparsematmult").unwrap();
    let vp = corpus::load(program);
    let args = corpus::generate_args("sparsematmult", 200, 5);
    let oracle = interpret(&vp, "spmv", &args).unwrap();
    let out = run_method(&vp, &registry, "spmv", &args, &cfg).unwrap();
    println!(
        "sparsematmult over row-disjoint ranges matches the oracle: {}",
        approx_eq(&out.value, &oracle, 0.0)
    );
}
