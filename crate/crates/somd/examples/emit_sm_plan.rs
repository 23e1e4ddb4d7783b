//! Lower a stencil to its shared-memory plan: partition calls with views,
//! the two phasers, spawned tasks and the transformed slave body.

use somd::parser::parse;
use somd::partition::StrategyRegistry;
use somd::plan_sm::{dump_plan, lower_master_sm};
use somd::validate::validate;

const STENCIL: &str = include_str!("../corpus/listings/listing6.somd");

fn main() {
    let vp = validate(parse(STENCIL).unwrap(), &StrategyRegistry::with_builtins()).unwrap();
    let plan = lower_master_sm(&vp, "stencil", 4).unwrap();
    print!("{}", dump_plan(&vp, &plan));
}
