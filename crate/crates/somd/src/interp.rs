//! Reference sequential interpreter.
//!
//! Runs a validated method with every parallel qualifier ignored: `dist`
//! and `shared` decay to ordinary storage, `sync` bodies execute inline,
//! and reduce-carrying auxiliary methods are plain calls. Floating-point
//! evaluation order is strictly source order; every backend is measured
//! against this semantics.

use crate::ast::Type;
use crate::diag::Span;
use crate::eval::{exec_method, CallHooks, Frame, RtError};
use crate::validate::ValidatedProgram;
use crate::value::Value;

pub fn interpret(vp: &ValidatedProgram, method: &str, args: &[Value]) -> Result<Value, RtError> {
    let mut hooks = SeqCalls { vp };
    call_seq(vp, method, args.to_vec(), &mut hooks)
}

struct SeqCalls<'a> {
    vp: &'a ValidatedProgram,
}

impl CallHooks for SeqCalls<'_> {
    fn call(&mut self, name: &str, args: Vec<Value>, span: Span) -> Result<Value, RtError> {
        call_seq(self.vp, name, args, self).map_err(|e| match e.span {
            Some(_) => e,
            None => RtError::new(e.message, span),
        })
    }
}

pub(crate) fn call_seq(
    vp: &ValidatedProgram,
    name: &str,
    args: Vec<Value>,
    hooks: &mut dyn CallHooks,
) -> Result<Value, RtError> {
    let idx = vp
        .method_index(name)
        .ok_or_else(|| RtError::plain(format!("unknown method `{name}`")))?;
    let decl = &vp.program.methods[idx];
    let info = &vp.methods[idx];
    if args.len() != decl.params.len() {
        return Err(RtError::plain(format!(
            "`{name}` takes {} arguments, got {}",
            decl.params.len(),
            args.len()
        )));
    }
    let mut frame = Frame::for_method(info);
    for (i, (arg, param)) in args.into_iter().zip(&decl.params).enumerate() {
        let v = match (arg, param.ty) {
            (Value::Scalar(s), Type::Scalar(t)) => Value::Scalar(s.widen_to(t).ok_or_else(|| {
                RtError::plain(format!(
                    "argument {i} of `{name}`: cannot pass {} as {}",
                    s.ty().keyword(),
                    t.keyword()
                ))
            })?),
            (v, _) => v,
        };
        frame.set(i as u32, v);
    }
    exec_method(decl, info, &mut frame, hooks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::partition::StrategyRegistry;
    use crate::validate::validate;
    use crate::value::{ArrayData, Scalar};

    fn check(src: &str) -> ValidatedProgram {
        let p = parse(src).expect("parse");
        validate(p, &StrategyRegistry::with_builtins()).expect("validate")
    }

    #[test]
    fn vector_add_single_element() {
        let vp = check(
            "int[] vectorAdd(dist int[] a, dist int[] b) {\n\
             dist int[] c = new int[a.length];\n\
             for (int i = 0; i < a.length; i++) c[i] = a[i] + b[i];\n\
             return c;\n}",
        );
        let out = interpret(
            &vp,
            "vectorAdd",
            &[
                Value::array(ArrayData::from_i32(vec![1])),
                Value::array(ArrayData::from_i32(vec![2])),
            ],
        )
        .unwrap();
        assert_eq!(out, Value::array(ArrayData::from_i32(vec![3])));
    }

    #[test]
    fn sum_one_to_ten() {
        let vp = check(
            "reduce(self)\nint sum(dist int[] a) {\n int s = 0;\n for (int i = 0; i < a.length; i++) s += a[i];\n return s;\n}",
        );
        let out = interpret(&vp, "sum", &[Value::array(ArrayData::from_i32((1..=10).collect()))])
            .unwrap();
        assert_eq!(out, Value::int(55));
    }

    #[test]
    fn norm_three_four() {
        let vp = check(
            "double[] norm(dist double[] a) {\n\
               double n = Math.sqrt(sumProd(a));\n\
               for (int i = 0; i < a.length; i++) a[i] = a[i] / n;\n\
               return a;\n}\n\
             reduce(+)\n\
             double sumProd(double[] a) {\n\
               double s = 0;\n\
               for (int i = 0; i < a.length; i++) s = s + a[i] * a[i];\n\
               return s;\n}",
        );
        let out =
            interpret(&vp, "norm", &[Value::array(ArrayData::from_f64(vec![3.0, 4.0]))]).unwrap();
        assert_eq!(out, Value::array(ArrayData::from_f64(vec![0.6, 0.8])));
    }

    #[test]
    fn two_buffer_stencil_matches_hand_computation() {
        // 4x4 seeded with (i*4+j)^2, two damped-Jacobi iterations; interior
        // values and total were computed independently beforehand
        let vp = check(
            "reduce(+)\n\
             double jacobi(dist(view = <1,1>, <1,1>) double[][] g, int num_iterations) {\n\
               dist double[][] h = new double[g.length][g[0].length];\n\
               for (int p = 0; p < num_iterations; p++) {\n\
                 sync {\n\
                   for (int i = 1; i < g.length - 1; i++)\n\
                     for (int j = 1; j < g[0].length - 1; j++)\n\
                       h[i][j] = 0.25 * (g[i-1][j] + g[i+1][j] + g[i][j-1] + g[i][j+1]);\n\
                   for (int i = 1; i < g.length - 1; i++)\n\
                     for (int j = 1; j < g[0].length - 1; j++)\n\
                       g[i][j] = h[i][j];\n\
                 }\n\
               }\n\
               double total = 0;\n\
               for (int i = 1; i < g.length - 1; i++)\n\
                 for (int j = 1; j < g[0].length - 1; j++)\n\
                   total += g[i][j];\n\
               return total;\n}",
        );
        let grid: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64).powi(2)).collect())
            .collect();
        let out = interpret(
            &vp,
            "jacobi",
            &[Value::array(ArrayData::from_f64_2d(grid)), Value::int(2)],
        )
        .unwrap();
        assert_eq!(out, Value::double(293.0));
    }

    #[test]
    fn division_by_zero_faults() {
        let vp = check("int f(int a) {\n int b = a / 0;\n return b;\n}");
        let err = interpret(&vp, "f", &[Value::int(1)]).unwrap_err();
        assert!(err.message.contains("division by zero"), "{err}");
    }

    #[test]
    fn out_of_bounds_faults_with_location() {
        let vp = check("int f(int[] a) {\n return a[3];\n}");
        let err = interpret(&vp, "f", &[Value::array(ArrayData::from_i32(vec![1]))]).unwrap_err();
        assert!(err.message.contains("out of bounds"), "{err}");
        assert!(err.span.is_some());
    }

    #[test]
    fn determinism_bitwise() {
        let vp = check(
            "double f(double[] a) {\n double s = 0;\n for (int i = 0; i < a.length; i++) s += Math.sin(a[i]) * Math.exp(a[i]);\n return s;\n}",
        );
        let arr = Value::array(ArrayData::from_f64(vec![0.1, 0.7, 0.31, 2.9]));
        let a = interpret(&vp, "f", std::slice::from_ref(&arr)).unwrap();
        let b = interpret(&vp, "f", &[arr]).unwrap();
        match (a, b) {
            (Value::Scalar(Scalar::Double(x)), Value::Scalar(Scalar::Double(y))) => {
                assert_eq!(x.to_bits(), y.to_bits())
            }
            _ => panic!("expected doubles"),
        }
    }
}
