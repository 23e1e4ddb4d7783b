//! Lower the relaxation benchmark for the GPU execution model: one update
//! kernel issued once per iteration from a host loop, a copy kernel, a
//! per-group reduction kernel, and a transfer schedule that stages the
//! matrix once.

use somd::corpus;
use somd::plan_gpu::{dump_gpu_plan, lower_gpu};

fn main() {
    let program = corpus::find("sor").unwrap();
    let vp = corpus::load(program);
    let plan = lower_gpu(&vp, "sor").unwrap();
    print!("{}", dump_gpu_plan(&plan));
}
