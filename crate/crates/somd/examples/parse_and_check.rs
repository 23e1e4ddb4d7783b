//! Parse and validate annotated sources, including the diagnostics a
//! rejected program produces.

use somd::parser::parse;
use somd::partition::StrategyRegistry;
use somd::pretty::print_program;
use somd::validate::validate;

fn main() {
    let registry = StrategyRegistry::with_builtins();

    let good = r#"
reduce(self)
int sum(dist int[] a) {
  int sum = 0;
  for (int i = 0; i < a.length; i++)
    sum += a[i];
  return sum;
}
"#;
    let program = parse(good).expect("parses");
    println!("--- canonical form ---\n{}", print_program(&program));
    let vp = validate(program, &registry).expect("validates");
    let info = vp.info("sum").unwrap();
    println!(
        "`sum`: {} loop(s), distributed values: {:?}",
        info.loops.len(),
        info.dist_values.iter().map(|d| d.name.as_str()).collect::<Vec<_>>()
    );

    // writing a parameter that is not distributed violates the input-only
    // rule; the validator reports a coded diagnostic with its location
    let bad = r#"
int fill(int[] a) {
  for (int i = 0; i < a.length; i++)
    a[i] = i;
  return 0;
}
"#;
    let errs = validate(parse(bad).expect("parses"), &registry).unwrap_err();
    println!("\n--- diagnostics for the rejected program ---");
    for d in &errs {
        println!("{d}");
    }
    println!("\nas JSON:\n{}", somd::diag::to_json(&errs));
}
