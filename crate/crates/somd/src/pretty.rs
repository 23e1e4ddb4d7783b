//! Canonical source printer. `parse(print(parse(s)))` is structurally
//! identical to `parse(s)` for every accepted program.

use crate::ast::*;
use std::fmt::Write;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for (i, m) in p.methods.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_method(&mut out, m);
    }
    out
}

pub fn print_method(out: &mut String, m: &MethodDecl) {
    if let Some(r) = &m.reduce {
        let _ = writeln!(out, "reduce({})", reduce_str(r));
    }
    let _ = write!(out, "{} {}(", type_str(m.ret), m.name);
    for (i, p) in m.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        if let Some(d) = &p.dist {
            out.push_str(&dist_str(d));
            out.push(' ');
        }
        let _ = write!(out, "{} {}", type_str(p.ty), p.name);
    }
    out.push_str(") ");
    print_block(out, &m.body, 0);
    out.push('\n');
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn print_block(out: &mut String, b: &Block, level: usize) {
    out.push_str("{\n");
    for s in &b.stmts {
        print_stmt(out, s, level + 1);
    }
    indent(out, level);
    out.push('}');
}

fn print_stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match s {
        Stmt::VarDecl { .. } => {
            out.push_str(&var_decl_str(s));
            out.push_str(";\n");
        }
        Stmt::Assign { .. } => {
            out.push_str(&assign_str(s));
            out.push_str(";\n");
        }
        Stmt::For(f) => {
            out.push_str("for (");
            if let Some(init) = &f.init {
                match init {
                    Stmt::VarDecl { .. } => out.push_str(&var_decl_str(init)),
                    _ => out.push_str(&assign_str(init)),
                }
            }
            out.push_str("; ");
            if let Some(c) = &f.cond {
                out.push_str(&expr_str(c));
            }
            out.push_str("; ");
            if let Some(st) = &f.step {
                out.push_str(&assign_str(st));
            }
            out.push_str(") ");
            print_block(out, &f.body, level);
            out.push('\n');
        }
        Stmt::If { cond, then_branch, else_branch, .. } => {
            let _ = write!(out, "if ({}) ", expr_str(cond));
            print_block(out, then_branch, level);
            if let Some(e) = else_branch {
                out.push_str(" else ");
                print_block(out, e, level);
            }
            out.push('\n');
        }
        Stmt::Sync { reduce, target, body, .. } => {
            out.push_str("sync ");
            if let Some(r) = reduce {
                let _ = write!(out, "reduce({}) ", reduce_str(r));
            }
            if let Some((name, _)) = target {
                let _ = write!(out, "({name}) ");
            }
            print_block(out, body, level);
            out.push('\n');
        }
        Stmt::Return { value, .. } => {
            match value {
                Some(v) => {
                    let _ = writeln!(out, "return {};", expr_str(v));
                }
                None => out.push_str("return;\n"),
            };
        }
        Stmt::Expr { expr, .. } => {
            let _ = writeln!(out, "{};", expr_str(expr));
        }
    }
}

fn var_decl_str(s: &Stmt) -> String {
    let Stmt::VarDecl { shared, dist, ty, name, init, .. } = s else {
        unreachable!("var_decl_str on non-declaration")
    };
    let mut out = String::new();
    if *shared {
        out.push_str("shared ");
    }
    if let Some(d) = dist {
        out.push_str(&dist_str(d));
        out.push(' ');
    }
    let _ = write!(out, "{} {}", type_str(*ty), name);
    if let Some(e) = init {
        let _ = write!(out, " = {}", expr_str(e));
    }
    out
}

fn assign_str(s: &Stmt) -> String {
    let Stmt::Assign { target, value, .. } = s else {
        unreachable!("assign_str on non-assignment")
    };
    let mut out = target.name.clone();
    for ix in &target.indices {
        let _ = write!(out, "[{}]", expr_str(ix));
    }
    let _ = write!(out, " = {}", expr_str(value));
    out
}

pub fn type_str(t: Type) -> String {
    match t {
        Type::Scalar(s) => s.keyword().to_string(),
        Type::Array(s, 1) => format!("{}[]", s.keyword()),
        Type::Array(s, _) => format!("{}[][]", s.keyword()),
    }
}

pub fn dist_str(d: &DistSpec) -> String {
    let mut parts: Vec<String> = Vec::new();
    if let DistStrategy::User { name, args } = &d.strategy {
        let mut s = name.clone();
        if !args.is_empty() {
            s.push('(');
            s.push_str(&args.iter().map(expr_str).collect::<Vec<_>>().join(", "));
            s.push(')');
        }
        parts.push(s);
    }
    if let Some(v) = &d.view {
        parts.push(format!("view = {}", views_str(v)));
    }
    if let Some(v) = &d.polyview {
        parts.push(format!("polyview = {}", views_str(v)));
    }
    if let Some(dims) = &d.dims {
        parts.push(format!(
            "dim = {}",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
        ));
    }
    if parts.is_empty() {
        "dist".to_string()
    } else {
        format!("dist({})", parts.join(", "))
    }
}

fn views_str(v: &[(u32, u32)]) -> String {
    v.iter()
        .map(|(b, a)| format!("<{b},{a}>"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn reduce_str(r: &ReduceSpec) -> String {
    match r {
        ReduceSpec::Prim(op) => op.symbol().to_string(),
        ReduceSpec::ArrayAssembly => "assemble".to_string(),
        ReduceSpec::SelfReduce => "self".to_string(),
        ReduceSpec::User { name, args } => {
            if args.is_empty() {
                name.clone()
            } else {
                format!("{name}({})", args.iter().map(expr_str).collect::<Vec<_>>().join(", "))
            }
        }
    }
}

pub fn expr_str(e: &Expr) -> String {
    prec_str(e, 0)
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => match op {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        },
        Expr::Unary { .. } => 7,
        _ => 8,
    }
}

fn prec_str(e: &Expr, min: u8) -> String {
    let p = prec(e);
    let body = match e {
        Expr::IntLit(v, _) => v.to_string(),
        Expr::LongLit(v, _) => format!("{v}L"),
        Expr::DoubleLit(v, _) => {
            let s = format!("{v}");
            if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
                s
            } else {
                format!("{s}.0")
            }
        }
        Expr::BoolLit(v, _) => v.to_string(),
        Expr::Var { name, .. } => name.clone(),
        Expr::Index { base, indices, .. } => {
            let mut s = base.clone();
            for ix in indices {
                s.push('[');
                s.push_str(&prec_str(ix, 0));
                s.push(']');
            }
            s
        }
        Expr::Len { base, dim, .. } => {
            if *dim == 1 {
                format!("{base}.length")
            } else {
                format!("{base}[0].length")
            }
        }
        Expr::Unary { op, expr, .. } => {
            let inner = prec_str(expr, 7);
            match op {
                UnOp::Neg => format!("-{inner}"),
                UnOp::Not => format!("!{inner}"),
            }
        }
        Expr::Binary { op, lhs, rhs, .. } => {
            // left-assoc: the right operand needs one level more
            format!("{} {} {}", prec_str(lhs, p), op.symbol(), prec_str(rhs, p + 1))
        }
        Expr::Call { name, args, .. } => format!(
            "{name}({})",
            args.iter().map(|a| prec_str(a, 0)).collect::<Vec<_>>().join(", ")
        ),
        Expr::MathCall { func, args, .. } => format!(
            "Math.{}({})",
            func.name(),
            args.iter().map(|a| prec_str(a, 0)).collect::<Vec<_>>().join(", ")
        ),
        Expr::NewArray { elem, dims, .. } => {
            let mut s = format!("new {}", elem.keyword());
            for d in dims {
                s.push('[');
                s.push_str(&prec_str(d, 0));
                s.push(']');
            }
            s
        }
    };
    if p < min {
        format!("({body})")
    } else {
        body
    }
}
