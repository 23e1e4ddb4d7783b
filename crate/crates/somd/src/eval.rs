//! Statement and expression engine shared by the sequential interpreter
//! and the worker-pool slave bodies.
//!
//! The engine walks validated ASTs over a slot frame. Distributed values
//! show up in the frame as [`Value::Dist`] views, which makes the
//! partition semantics intrinsic: a canonical loop classified against a
//! distributed dimension clamps its bounds to the view's owned range, a
//! window read outside the visible halo faults, and a write outside the
//! owned range faults. Plain values execute with ordinary Java-like
//! semantics, which is exactly the sequential oracle.
//!
//! The pieces that differ between execution modes: method calls, sync
//! points and edge-rank clamp elision, are injected through [`CallHooks`].

use crate::ast::*;
use crate::diag::Span;
use crate::validate::MethodInfo;
use crate::value::{ArrayData, Scalar, Value};
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Debug)]
pub struct RtError {
    pub message: String,
    pub span: Option<Span>,
}

impl RtError {
    pub fn new(message: impl Into<String>, span: Span) -> Self {
        RtError { message: message.into(), span: Some(span) }
    }

    pub fn plain(message: impl Into<String>) -> Self {
        RtError { message: message.into(), span: None }
    }
}

impl fmt::Display for RtError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.span {
            Some(s) => write!(f, "{}: {}", s, self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for RtError {}

pub enum Flow {
    Normal,
    Return(Value),
}

#[derive(Debug)]
pub struct Frame {
    pub slots: Vec<Option<Value>>,
}

impl Frame {
    pub fn for_method(info: &MethodInfo) -> Frame {
        Frame { slots: vec![None; info.slot_types.len()] }
    }

    pub fn set(&mut self, slot: u32, v: Value) {
        self.slots[slot as usize] = Some(v);
    }

    pub fn get(&self, slot: u32, name: &str, span: Span) -> Result<&Value, RtError> {
        self.slots[slot as usize]
            .as_ref()
            .ok_or_else(|| RtError::new(format!("`{name}` used before assignment"), span))
    }
}

/// Execution-mode hooks.
pub trait CallHooks {
    fn call(&mut self, name: &str, args: Vec<Value>, span: Span) -> Result<Value, RtError>;

    /// Invoked when a `sync` block's body has completed.
    fn sync_point(
        &mut self,
        _reduce: Option<&ReduceSpec>,
        _target: Option<u32>,
        _frame: &mut Frame,
        _span: Span,
    ) -> Result<(), RtError> {
        Ok(())
    }

    /// First/last ranked instances may skip the boundary `max`/`min`.
    fn elide_edge_clamps(&self) -> bool {
        false
    }
}

pub fn exec_method(
    decl: &MethodDecl,
    info: &MethodInfo,
    frame: &mut Frame,
    hooks: &mut dyn CallHooks,
) -> Result<Value, RtError> {
    match exec_block(&decl.body, info, frame, hooks)? {
        Flow::Return(v) => coerce_return(v, decl.ret),
        Flow::Normal => Err(RtError::new(
            format!("method `{}` finished without returning", decl.name),
            decl.span,
        )),
    }
}

fn coerce_return(v: Value, ret: Type) -> Result<Value, RtError> {
    match (&v, ret) {
        (Value::Scalar(s), Type::Scalar(t)) => s
            .widen_to(t)
            .map(Value::Scalar)
            .ok_or_else(|| RtError::plain(format!("cannot return {} as {}", s.ty().keyword(), t.keyword()))),
        _ => Ok(v),
    }
}

pub fn exec_block(
    block: &Block,
    info: &MethodInfo,
    frame: &mut Frame,
    hooks: &mut dyn CallHooks,
) -> Result<Flow, RtError> {
    for stmt in &block.stmts {
        if let Flow::Return(v) = exec_stmt(stmt, info, frame, hooks)? {
            return Ok(Flow::Return(v));
        }
    }
    Ok(Flow::Normal)
}

pub fn exec_stmt(
    stmt: &Stmt,
    info: &MethodInfo,
    frame: &mut Frame,
    hooks: &mut dyn CallHooks,
) -> Result<Flow, RtError> {
    match stmt {
        Stmt::VarDecl { dist, ty, slot, init, span, .. } => {
            // distributed locals are materialized by the runtime before the
            // body runs; keep the installed window
            if dist.is_some() && matches!(frame.slots[*slot as usize], Some(Value::Dist(_))) {
                return Ok(Flow::Normal);
            }
            let value = match init {
                Some(e) => Some(store_as(eval_expr(e, info, frame, hooks)?, *ty, *span)?),
                None => None,
            };
            frame.slots[*slot as usize] = value;
            Ok(Flow::Normal)
        }
        Stmt::Assign { target, value, span } => {
            let v = eval_expr(value, info, frame, hooks)?;
            assign_lvalue(target, v, info, frame, hooks, *span)?;
            Ok(Flow::Normal)
        }
        Stmt::For(f) => exec_for(f, info, frame, hooks),
        Stmt::If { cond, then_branch, else_branch, .. } => {
            if eval_bool(cond, info, frame, hooks)? {
                exec_block(then_branch, info, frame, hooks)
            } else if let Some(e) = else_branch {
                exec_block(e, info, frame, hooks)
            } else {
                Ok(Flow::Normal)
            }
        }
        Stmt::Sync { reduce, target, body, span } => {
            if let Flow::Return(v) = exec_block(body, info, frame, hooks)? {
                return Ok(Flow::Return(v));
            }
            hooks.sync_point(reduce.as_ref(), target.as_ref().map(|(_, s)| *s), frame, *span)?;
            Ok(Flow::Normal)
        }
        Stmt::Return { value, span } => {
            let v = match value {
                Some(e) => eval_expr(e, info, frame, hooks)?,
                None => return Err(RtError::new("return without a value", *span)),
            };
            Ok(Flow::Return(v))
        }
        Stmt::Expr { expr, .. } => {
            eval_expr(expr, info, frame, hooks)?;
            Ok(Flow::Normal)
        }
    }
}

fn exec_for(
    f: &ForStmt,
    info: &MethodInfo,
    frame: &mut Frame,
    hooks: &mut dyn CallHooks,
) -> Result<Flow, RtError> {
    let li = info.loops.get(f.rank as usize);
    let canonical = li.and_then(|l| l.var_slot.map(|v| (v, l.bind.as_ref())));

    if let Some((var, bind)) = canonical {
        // canonical unit-stride loop: bounds are loop-invariant, distributed
        // dimensions clamp to the instance's owned range
        let (lower, upper) = match bind {
            Some(b) => (&b.lower, &b.upper),
            None => match (&f.init, &f.cond) {
                (Some(Stmt::VarDecl { init: Some(e1), .. }), Some(Expr::Binary { op: BinOp::Lt, rhs, .. })) => {
                    (e1, rhs.as_ref())
                }
                (Some(Stmt::Assign { value: e1, .. }), Some(Expr::Binary { op: BinOp::Lt, rhs, .. })) => {
                    (e1, rhs.as_ref())
                }
                _ => return exec_for_general(f, info, frame, hooks),
            },
        };
        let e1 = eval_index(lower, info, frame, hooks)?;
        let e2 = eval_index(upper, info, frame, hooks)?;
        let (mut lo, mut hi) = (e1, e2);
        if let Some(b) = bind {
            if let Some(Value::Dist(d)) = &frame.slots[b.value_slot as usize] {
                let dim = (b.dim - 1) as usize;
                if hooks.elide_edge_clamps() && d.first[dim] {
                    lo = e1;
                } else {
                    lo = e1.max(d.owned_lo[dim] as i64);
                }
                if hooks.elide_edge_clamps() && d.last[dim] {
                    hi = e2;
                } else {
                    hi = e2.min(d.owned_hi[dim] as i64);
                }
            }
        }
        // make sure the induction slot exists even for zero-trip loops
        frame.set(var, Value::Scalar(Scalar::Int(lo as i32)));
        let mut i = lo;
        while i < hi {
            frame.set(var, Value::Scalar(Scalar::Int(i as i32)));
            if let Flow::Return(v) = exec_block(&f.body, info, frame, hooks)? {
                return Ok(Flow::Return(v));
            }
            i += 1;
        }
        return Ok(Flow::Normal);
    }
    exec_for_general(f, info, frame, hooks)
}

fn exec_for_general(
    f: &ForStmt,
    info: &MethodInfo,
    frame: &mut Frame,
    hooks: &mut dyn CallHooks,
) -> Result<Flow, RtError> {
    if let Some(init) = &f.init {
        exec_stmt(init, info, frame, hooks)?;
    }
    loop {
        if let Some(c) = &f.cond {
            if !eval_bool(c, info, frame, hooks)? {
                break;
            }
        }
        if let Flow::Return(v) = exec_block(&f.body, info, frame, hooks)? {
            return Ok(Flow::Return(v));
        }
        if let Some(s) = &f.step {
            exec_stmt(s, info, frame, hooks)?;
        }
    }
    Ok(Flow::Normal)
}

fn assign_lvalue(
    target: &LValue,
    value: Value,
    info: &MethodInfo,
    frame: &mut Frame,
    hooks: &mut dyn CallHooks,
    span: Span,
) -> Result<(), RtError> {
    if target.indices.is_empty() {
        let declared = info.slot_types[target.slot as usize];
        let v = store_as(value, declared, span)?;
        frame.set(target.slot, v);
        return Ok(());
    }
    let mut idx = [0usize; 2];
    for (k, e) in target.indices.iter().enumerate() {
        idx[k] = eval_usize_index(e, info, frame, hooks)?;
    }
    let scalar = value
        .as_scalar()
        .ok_or_else(|| RtError::new("array element assignment needs a scalar", span))?;
    let slot = &mut frame.slots[target.slot as usize];
    match slot {
        Some(Value::Array(arr)) => {
            let a = Arc::make_mut(arr);
            let flat = flat_index(a.dims, a.ndim, idx, target.indices.len(), &target.name, span)?;
            let widened = scalar.widen_to(a.elem_type()).ok_or_else(|| {
                RtError::new(format!("cannot store {} element", scalar.ty().keyword()), span)
            })?;
            a.cells.set(flat, widened);
            Ok(())
        }
        Some(Value::Dist(d)) => {
            let dv = Arc::make_mut(d);
            let widened = scalar.widen_to(dv.elem_type()).ok_or_else(|| {
                RtError::new(format!("cannot store {} element", scalar.ty().keyword()), span)
            })?;
            let (i, j) = (idx[0], if target.indices.len() > 1 { idx[1] } else { 0 });
            dv.write(i, j, widened).map_err(|e| {
                RtError::new(format!("`{}`[{i}{}]: {e}", target.name, fmt_j(dv.ndim, j)), span)
            })
        }
        Some(Value::Scalar(_)) => Err(RtError::new(format!("`{}` is not an array", target.name), span)),
        None => Err(RtError::new(format!("`{}` used before assignment", target.name), span)),
    }
}

fn fmt_j(ndim: u8, j: usize) -> String {
    if ndim == 2 {
        format!("][{j}")
    } else {
        String::new()
    }
}

/// Widen a scalar to a slot's declared type; arrays pass through.
pub fn coerce_slot(v: Value, declared: Type, span: Span) -> Result<Value, RtError> {
    store_as(v, declared, span)
}

fn store_as(v: Value, declared: Type, span: Span) -> Result<Value, RtError> {
    match (v, declared) {
        (Value::Scalar(s), Type::Scalar(t)) => s
            .widen_to(t)
            .map(Value::Scalar)
            .ok_or_else(|| RtError::new(format!("cannot store {} as {}", s.ty().keyword(), t.keyword()), span)),
        (v, _) => Ok(v),
    }
}

fn flat_index(
    dims: [usize; 2],
    ndim: u8,
    idx: [usize; 2],
    n_indices: usize,
    name: &str,
    span: Span,
) -> Result<usize, RtError> {
    if n_indices != ndim as usize {
        return Err(RtError::new(format!("`{name}` indexed with wrong arity"), span));
    }
    if idx[0] >= dims[0] || (ndim == 2 && idx[1] >= dims[1]) {
        return Err(RtError::new(
            format!(
                "`{name}`[{}{}] out of bounds for [{}{}]",
                idx[0],
                if ndim == 2 { format!("][{}", idx[1]) } else { String::new() },
                dims[0],
                if ndim == 2 { format!("][{}", dims[1]) } else { String::new() }
            ),
            span,
        ));
    }
    Ok(if ndim == 2 { idx[0] * dims[1] + idx[1] } else { idx[0] })
}

pub fn eval_bool(
    e: &Expr,
    info: &MethodInfo,
    frame: &mut Frame,
    hooks: &mut dyn CallHooks,
) -> Result<bool, RtError> {
    match eval_expr(e, info, frame, hooks)? {
        Value::Scalar(Scalar::Bool(b)) => Ok(b),
        other => Err(RtError::new(format!("expected boolean, got {}", other.type_name()), e.span())),
    }
}

fn eval_index(
    e: &Expr,
    info: &MethodInfo,
    frame: &mut Frame,
    hooks: &mut dyn CallHooks,
) -> Result<i64, RtError> {
    match eval_expr(e, info, frame, hooks)? {
        Value::Scalar(s) => s
            .as_index()
            .ok_or_else(|| RtError::new("expected an integer", e.span())),
        other => Err(RtError::new(format!("expected an integer, got {}", other.type_name()), e.span())),
    }
}

fn eval_usize_index(
    e: &Expr,
    info: &MethodInfo,
    frame: &mut Frame,
    hooks: &mut dyn CallHooks,
) -> Result<usize, RtError> {
    let i = eval_index(e, info, frame, hooks)?;
    if i < 0 {
        return Err(RtError::new(format!("negative array index {i}"), e.span()));
    }
    Ok(i as usize)
}

pub fn eval_expr(
    e: &Expr,
    info: &MethodInfo,
    frame: &mut Frame,
    hooks: &mut dyn CallHooks,
) -> Result<Value, RtError> {
    match e {
        Expr::IntLit(v, _) => Ok(Value::Scalar(Scalar::Int(*v))),
        Expr::LongLit(v, _) => Ok(Value::Scalar(Scalar::Long(*v))),
        Expr::DoubleLit(v, _) => Ok(Value::Scalar(Scalar::Double(*v))),
        Expr::BoolLit(v, _) => Ok(Value::Scalar(Scalar::Bool(*v))),
        Expr::Var { name, slot, span } => Ok(frame.get(*slot, name, *span)?.clone()),
        Expr::Index { base, slot, indices, span } => {
            let mut idx = [0usize; 2];
            for (k, ixe) in indices.iter().enumerate() {
                idx[k] = eval_usize_index(ixe, info, frame, hooks)?;
            }
            match frame.get(*slot, base, *span)? {
                Value::Array(a) => {
                    let flat = flat_index(a.dims, a.ndim, idx, indices.len(), base, *span)?;
                    Ok(Value::Scalar(a.cells.get(flat)))
                }
                Value::Dist(d) => {
                    let (i, j) = (idx[0], if indices.len() > 1 { idx[1] } else { 0 });
                    d.read(i, j).map(Value::Scalar).ok_or_else(|| {
                        RtError::new(
                            format!("`{base}`[{i}{}] outside the visible window", fmt_j(d.ndim, j)),
                            *span,
                        )
                    })
                }
                Value::Scalar(_) => Err(RtError::new(format!("`{base}` is not an array"), *span)),
            }
        }
        Expr::Len { base, slot, dim, span } => {
            let len = match frame.get(*slot, base, *span)? {
                Value::Array(a) => a.dims[(*dim - 1) as usize],
                Value::Dist(d) => d.full_dims[(*dim - 1) as usize],
                Value::Scalar(_) => {
                    return Err(RtError::new(format!("`{base}` is not an array"), *span))
                }
            };
            Ok(Value::Scalar(Scalar::Int(len as i32)))
        }
        Expr::Unary { op, expr, span } => {
            let v = eval_expr(expr, info, frame, hooks)?;
            let s = v
                .as_scalar()
                .ok_or_else(|| RtError::new("unary operator needs a scalar", *span))?;
            match op {
                UnOp::Neg => Ok(Value::Scalar(match s {
                    Scalar::Int(x) => Scalar::Int(x.wrapping_neg()),
                    Scalar::Long(x) => Scalar::Long(x.wrapping_neg()),
                    Scalar::Double(x) => Scalar::Double(-x),
                    Scalar::Bool(_) => return Err(RtError::new("cannot negate a boolean", *span)),
                })),
                UnOp::Not => match s {
                    Scalar::Bool(b) => Ok(Value::Scalar(Scalar::Bool(!b))),
                    _ => Err(RtError::new("`!` needs a boolean", *span)),
                },
            }
        }
        Expr::Binary { op: BinOp::And, lhs, rhs, .. } => {
            if !eval_bool(lhs, info, frame, hooks)? {
                return Ok(Value::Scalar(Scalar::Bool(false)));
            }
            Ok(Value::Scalar(Scalar::Bool(eval_bool(rhs, info, frame, hooks)?)))
        }
        Expr::Binary { op: BinOp::Or, lhs, rhs, .. } => {
            if eval_bool(lhs, info, frame, hooks)? {
                return Ok(Value::Scalar(Scalar::Bool(true)));
            }
            Ok(Value::Scalar(Scalar::Bool(eval_bool(rhs, info, frame, hooks)?)))
        }
        Expr::Binary { op, lhs, rhs, span } => {
            let lv = eval_expr(lhs, info, frame, hooks)?;
            let rv = eval_expr(rhs, info, frame, hooks)?;
            let (a, b) = match (lv.as_scalar(), rv.as_scalar()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(RtError::new("binary operator needs scalars", *span)),
            };
            binary_scalar(*op, a, b, *span).map(Value::Scalar)
        }
        Expr::Call { name, args, span } => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval_expr(a, info, frame, hooks)?);
            }
            hooks.call(name, vals, *span)
        }
        Expr::MathCall { func, args, span } => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                let v = eval_expr(a, info, frame, hooks)?;
                vals.push(v.as_scalar().ok_or_else(|| {
                    RtError::new(format!("Math.{} needs scalar arguments", func.name()), *span)
                })?);
            }
            math_call(*func, &vals, *span).map(Value::Scalar)
        }
        Expr::NewArray { elem, dims, span } => {
            let mut sizes = [0usize; 2];
            for (k, d) in dims.iter().enumerate() {
                let v = eval_index(d, info, frame, hooks)?;
                if v < 0 {
                    return Err(RtError::new(format!("negative array size {v}"), *span));
                }
                sizes[k] = v as usize;
            }
            let arr = if dims.len() == 1 {
                ArrayData::new_1d(*elem, sizes[0])
            } else {
                ArrayData::new_2d(*elem, sizes[0], sizes[1])
            };
            Ok(Value::array(arr))
        }
    }
}

pub fn binary_scalar(op: BinOp, a: Scalar, b: Scalar, span: Span) -> Result<Scalar, RtError> {
    use BinOp::*;
    use Scalar::*;
    match op {
        Add | Sub | Mul | Div | Rem => match (a, b) {
            (Double(_), _) | (_, Double(_)) => {
                let (x, y) = (a.as_f64(), b.as_f64());
                Ok(Double(match op {
                    Add => x + y,
                    Sub => x - y,
                    Mul => x * y,
                    Div => x / y,
                    Rem => x % y,
                    _ => unreachable!(),
                }))
            }
            (Int(x), Int(y)) => {
                if matches!(op, Div | Rem) && y == 0 {
                    return Err(RtError::new("integer division by zero", span));
                }
                Ok(Int(match op {
                    Add => x.wrapping_add(y),
                    Sub => x.wrapping_sub(y),
                    Mul => x.wrapping_mul(y),
                    Div => x.wrapping_div(y),
                    Rem => x.wrapping_rem(y),
                    _ => unreachable!(),
                }))
            }
            _ => {
                let (x, y) = (
                    a.as_index().ok_or_else(|| RtError::new("numeric operands required", span))?,
                    b.as_index().ok_or_else(|| RtError::new("numeric operands required", span))?,
                );
                if matches!(op, Div | Rem) && y == 0 {
                    return Err(RtError::new("integer division by zero", span));
                }
                Ok(Long(match op {
                    Add => x.wrapping_add(y),
                    Sub => x.wrapping_sub(y),
                    Mul => x.wrapping_mul(y),
                    Div => x.wrapping_div(y),
                    Rem => x.wrapping_rem(y),
                    _ => unreachable!(),
                }))
            }
        },
        Lt | Le | Gt | Ge => {
            let ord = compare(a, b, span)?;
            Ok(Bool(match op {
                Lt => ord < 0,
                Le => ord <= 0,
                Gt => ord > 0,
                Ge => ord >= 0,
                _ => unreachable!(),
            }))
        }
        Eq | Ne => {
            let eq = match (a, b) {
                (Bool(x), Bool(y)) => x == y,
                _ => compare(a, b, span)? == 0,
            };
            Ok(Bool(if op == Eq { eq } else { !eq }))
        }
        And | Or => unreachable!("short-circuited above"),
    }
}

fn compare(a: Scalar, b: Scalar, span: Span) -> Result<i8, RtError> {
    use Scalar::*;
    let ord = match (a, b) {
        (Double(_), _) | (_, Double(_)) => {
            let (x, y) = (a.as_f64(), b.as_f64());
            if x < y {
                -1
            } else if x > y {
                1
            } else {
                0
            }
        }
        _ => {
            let x = a.as_index().ok_or_else(|| RtError::new("numeric operands required", span))?;
            let y = b.as_index().ok_or_else(|| RtError::new("numeric operands required", span))?;
            (x.cmp(&y)) as i8
        }
    };
    Ok(ord)
}

pub fn math_call(func: MathFunc, args: &[Scalar], span: Span) -> Result<Scalar, RtError> {
    use MathFunc::*;
    let f = |i: usize| args[i].as_f64();
    Ok(match func {
        Sqrt => Scalar::Double(f(0).sqrt()),
        Sin => Scalar::Double(f(0).sin()),
        Cos => Scalar::Double(f(0).cos()),
        Exp => Scalar::Double(f(0).exp()),
        Log => Scalar::Double(f(0).ln()),
        Pow => Scalar::Double(f(0).powf(f(1))),
        Floor => Scalar::Double(f(0).floor()),
        Abs => match args[0] {
            Scalar::Int(v) => Scalar::Int(v.wrapping_abs()),
            Scalar::Long(v) => Scalar::Long(v.wrapping_abs()),
            Scalar::Double(v) => Scalar::Double(v.abs()),
            Scalar::Bool(_) => return Err(RtError::new("Math.abs needs a number", span)),
        },
        Min | Max => {
            let pick_first = {
                let ord = compare(args[0], args[1], span)?;
                if func == Min {
                    ord <= 0
                } else {
                    ord >= 0
                }
            };
            let chosen = if pick_first { args[0] } else { args[1] };
            // promote to the wider of the two operand types
            match (args[0], args[1]) {
                (Scalar::Double(_), _) | (_, Scalar::Double(_)) => Scalar::Double(chosen.as_f64()),
                (Scalar::Long(_), _) | (_, Scalar::Long(_)) => {
                    Scalar::Long(chosen.as_index().unwrap())
                }
                _ => chosen,
            }
        }
    })
}
