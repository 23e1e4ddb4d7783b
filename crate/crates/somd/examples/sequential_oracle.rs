//! The sequential reference interpreter: parallel qualifiers are no-ops,
//! floating point evaluates in strict source order, and every backend is
//! measured against its output.

use somd::corpus;
use somd::interp::interpret;
use somd::value::{checksum, Value};

fn main() {
    for p in corpus::PROGRAMS {
        let vp = corpus::load(p);
        let args = corpus::generate_args(p.name, 24, 1);
        match interpret(&vp, p.entry, &args) {
            Ok(v) => println!("{:14} -> checksum {:016x} ({})", p.name, checksum(&v), shape(&v)),
            Err(e) => println!("{:14} -> error: {e}", p.name),
        }
    }
}

fn shape(v: &Value) -> String {
    match v {
        Value::Scalar(s) => s.ty().keyword().to_string(),
        Value::Array(a) if a.ndim == 1 => format!("{}[{}]", a.elem_type().keyword(), a.dims[0]),
        Value::Array(a) => format!("{}[{}][{}]", a.elem_type().keyword(), a.dims[0], a.dims[1]),
        other => other.type_name(),
    }
}
