//! Semantic analysis: name resolution, type checking, the input-only
//! parameter rule, loop ranking and classification against distributed
//! dimensions, and strategy/reducer resolution.
//!
//! Validation consumes a parsed [`Program`], fills in slots and loop ranks,
//! and returns a [`ValidatedProgram`] carrying per-method tables the
//! planners and runtimes rely on. All violations are reported together,
//! each as a distinct diagnostic code with a source location.

use crate::ast::*;
use crate::diag::{DiagCode, Diagnostic, Span};
use crate::partition::StrategyRegistry;
use std::collections::HashMap;

#[derive(Clone, Debug)]
pub struct ValidatedProgram {
    pub program: Program,
    pub methods: Vec<MethodInfo>,
    pub warnings: Vec<Diagnostic>,
}

impl ValidatedProgram {
    pub fn method_index(&self, name: &str) -> Option<usize> {
        self.program.methods.iter().position(|m| m.name == name)
    }

    pub fn info(&self, name: &str) -> Option<&MethodInfo> {
        self.method_index(name).map(|i| &self.methods[i])
    }

    pub fn decl(&self, name: &str) -> Option<&MethodDecl> {
        self.program.method(name)
    }
}

#[derive(Clone, Debug)]
pub struct MethodInfo {
    pub name: String,
    pub param_count: usize,
    pub slot_names: Vec<String>,
    pub slot_types: Vec<Type>,
    /// Distributed values: parameters first, locals after, in source order.
    pub dist_values: Vec<DistValue>,
    pub shared_decls: Vec<SharedDecl>,
    pub loops: Vec<LoopInfo>,
    pub writes_by_slot: Vec<bool>,
    /// First write location per slot, for diagnostics.
    pub write_spans: Vec<Option<Span>>,
    pub has_sync: bool,
    /// Names of reduce-carrying auxiliary methods this method invokes.
    pub aux_reduce_calls: Vec<String>,
    /// Effective reduction: the declared one, or the implicit array
    /// assembly for array-returning methods.
    pub effective_reduce: Option<ReduceSpec>,
}

impl MethodInfo {
    /// A method is lowered for parallel execution when it distributes at
    /// least one value.
    pub fn is_somd(&self) -> bool {
        !self.dist_values.is_empty()
    }

    pub fn dist_value_for_slot(&self, slot: u32) -> Option<&DistValue> {
        self.dist_values.iter().find(|d| d.slot == slot)
    }
}

#[derive(Clone, Debug)]
pub struct DistValue {
    pub slot: u32,
    pub name: String,
    pub ty: Type,
    pub spec: DistSpec,
    pub is_param: bool,
    pub written: bool,
    /// For locals, the `new T[...]` initializer the master evaluates.
    pub init: Option<Expr>,
    /// 1-based dimensions that are actually partitioned.
    pub partitioned_dims: Vec<u8>,
    /// Per dimension (1-based index - 1): the expression giving the length
    /// to partition, taken from the first loop iterating that dimension.
    pub partition_len: Vec<Expr>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharedDecl {
    pub slot: u32,
    pub name: String,
    pub ty: Type,
    pub init: Option<Expr>,
}

#[derive(Clone, Debug)]
pub struct LoopInfo {
    pub rank: u32,
    pub span: Span,
    /// Canonical unit-stride loops: the induction variable's slot.
    pub var_slot: Option<u32>,
    pub bind: Option<LoopBind>,
}

/// A loop classified against a distributed dimension.
#[derive(Clone, Debug)]
pub struct LoopBind {
    pub value_slot: u32,
    pub dim: u8,
    /// Bounds cover the whole dimension (`[0, X.length)`).
    pub full_extent: bool,
    pub lower: Expr,
    pub upper: Expr,
}

pub fn validate(
    mut program: Program,
    registry: &StrategyRegistry,
) -> Result<ValidatedProgram, Vec<Diagnostic>> {
    let mut diags: Vec<Diagnostic> = Vec::new();
    let mut warnings: Vec<Diagnostic> = Vec::new();

    // method table
    let mut sigs: HashMap<String, (Vec<Type>, Type, bool, bool)> = HashMap::new();
    for m in &program.methods {
        if sigs.contains_key(&m.name) {
            diags.push(Diagnostic::error(
                DiagCode::DUPLICATE_METHOD,
                m.span,
                format!("method `{}` is declared twice", m.name),
            ));
            continue;
        }
        let has_dist_param = m.params.iter().any(|p| p.dist.is_some());
        sigs.insert(
            m.name.clone(),
            (m.params.iter().map(|p| p.ty).collect(), m.ret, m.reduce.is_some(), has_dist_param),
        );
    }

    let mut infos = Vec::with_capacity(program.methods.len());
    for m in &mut program.methods {
        let mut cx = MethodCx::new(m, &sigs, registry);
        cx.run();
        diags.extend(cx.diags);
        warnings.extend(cx.warnings);
        infos.push(cx.info);
    }

    if diags.is_empty() {
        Ok(ValidatedProgram { program, methods: infos, warnings })
    } else {
        Err(diags)
    }
}

struct MethodCx<'a> {
    method: &'a mut MethodDecl,
    sigs: &'a HashMap<String, (Vec<Type>, Type, bool, bool)>,
    registry: &'a StrategyRegistry,
    diags: Vec<Diagnostic>,
    warnings: Vec<Diagnostic>,
    info: MethodInfo,
    scopes: Vec<HashMap<String, u32>>,
    next_rank: u32,
    /// (slot, dim) pairs indexed by each loop's induction variable,
    /// discovered while walking its body.
    index_uses: Vec<(u32, u32, u8)>, // (loop_rank, value_slot, dim)
    dist_local_inits: HashMap<u32, Expr>,
}

impl<'a> MethodCx<'a> {
    fn new(
        method: &'a mut MethodDecl,
        sigs: &'a HashMap<String, (Vec<Type>, Type, bool, bool)>,
        registry: &'a StrategyRegistry,
    ) -> Self {
        let name = method.name.clone();
        MethodCx {
            method,
            sigs,
            registry,
            diags: Vec::new(),
            warnings: Vec::new(),
            info: MethodInfo {
                name,
                param_count: 0,
                slot_names: Vec::new(),
                slot_types: Vec::new(),
                dist_values: Vec::new(),
                shared_decls: Vec::new(),
                loops: Vec::new(),
                writes_by_slot: Vec::new(),
                write_spans: Vec::new(),
                has_sync: false,
                aux_reduce_calls: Vec::new(),
                effective_reduce: None,
            },
            scopes: vec![HashMap::new()],
            next_rank: 0,
            index_uses: Vec::new(),
            dist_local_inits: HashMap::new(),
        }
    }

    fn err(&mut self, code: DiagCode, span: Span, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(code, span, msg));
    }

    fn declare(&mut self, name: &str, ty: Type, span: Span) -> u32 {
        let slot = self.info.slot_types.len() as u32;
        let scope = self.scopes.last_mut().unwrap();
        if scope.contains_key(name) {
            self.diags.push(Diagnostic::error(
                DiagCode::DUPLICATE_VARIABLE,
                span,
                format!("`{name}` is already declared in this scope"),
            ));
        }
        self.scopes.last_mut().unwrap().insert(name.to_string(), slot);
        self.info.slot_names.push(name.to_string());
        self.info.slot_types.push(ty);
        self.info.writes_by_slot.push(false);
        self.info.write_spans.push(None);
        slot
    }

    fn lookup(&mut self, name: &str, span: Span) -> Option<u32> {
        for scope in self.scopes.iter().rev() {
            if let Some(&slot) = scope.get(name) {
                return Some(slot);
            }
        }
        self.err(DiagCode::UNKNOWN_VARIABLE, span, format!("unknown variable `{name}`"));
        None
    }

    fn slot_type(&self, slot: u32) -> Type {
        self.info.slot_types[slot as usize]
    }

    fn run(&mut self) {
        // parameters occupy the leading slots
        let mut params = std::mem::take(&mut self.method.params);
        for p in &params {
            self.declare(&p.name, p.ty, p.span);
            if let Some(d) = &p.dist {
                if !p.ty.is_array() {
                    self.err(
                        DiagCode::DIST_ON_SCALAR,
                        d.span,
                        format!("`dist` applies to arrays; `{}` is scalar", p.name),
                    );
                }
            }
        }
        self.info.param_count = params.len();
        // strategy arguments may reference sibling parameters
        for p in &mut params {
            if let Some(DistSpec { strategy: DistStrategy::User { args, .. }, .. }) = &mut p.dist {
                for a in args.iter_mut() {
                    self.type_expr(a);
                }
            }
        }
        self.method.params = params;

        let mut body = std::mem::take(&mut self.method.body);
        self.walk_block(&mut body, true);
        self.method.body = body;

        // require a trailing return
        match self.method.body.stmts.last() {
            Some(Stmt::Return { .. }) => {}
            _ => {
                let span = self.method.span;
                self.err(
                    DiagCode::MISSING_RETURN,
                    span,
                    format!("method `{}` must end with a return statement", self.method.name),
                );
            }
        }

        self.collect_dist_values();
        self.check_dist_specs();
        self.check_reduce_spec();
        self.check_input_only();
        self.bind_loops();
        self.resolve_partition_lengths();

        self.info.effective_reduce = match (&self.method.reduce, self.method.ret) {
            (Some(r), _) => Some(r.clone()),
            (None, Type::Array(..)) if self.info.is_somd() => Some(ReduceSpec::ArrayAssembly),
            _ => None,
        };
    }

    // --- statement / expression resolution ---

    fn walk_block(&mut self, block: &mut Block, method_body: bool) {
        if !method_body {
            self.scopes.push(HashMap::new());
        }
        let mut stmts = std::mem::take(&mut block.stmts);
        for s in &mut stmts {
            self.walk_stmt(s);
        }
        block.stmts = stmts;
        if !method_body {
            self.scopes.pop();
        }
    }

    fn walk_stmt(&mut self, stmt: &mut Stmt) {
        match stmt {
            Stmt::VarDecl { shared, dist, ty, name, slot, init, span } => {
                if *shared && ty.is_array() {
                    self.err(
                        DiagCode::SHARED_NOT_SCALAR,
                        *span,
                        format!("`shared` applies to scalars; `{name}` is an array"),
                    );
                }
                if let Some(d) = dist {
                    if !ty.is_array() {
                        let dspan = d.span;
                        self.err(
                            DiagCode::DIST_ON_SCALAR,
                            dspan,
                            format!("`dist` applies to arrays; `{name}` is scalar"),
                        );
                    }
                    if let DistStrategy::User { args, .. } = &mut d.strategy {
                        for a in args.iter_mut() {
                            self.type_expr(a);
                        }
                    }
                }
                if let Some(e) = init {
                    if let Some(t) = self.type_expr(e) {
                        self.require_assignable(t, *ty, e.span());
                    }
                }
                // initializer resolves in the outer scope, then declare
                *slot = self.declare(name, *ty, *span);
                if dist.is_some() {
                    match init {
                        Some(e @ Expr::NewArray { .. }) => {
                            if !self.is_master_expr(e, false) {
                                self.err(
                                    DiagCode::DIST_LOCAL_INIT,
                                    *span,
                                    format!(
                                        "distributed local `{name}` needs master-computable dimensions"
                                    ),
                                );
                            }
                            self.dist_local_inits.insert(*slot, e.clone());
                        }
                        _ => self.err(
                            DiagCode::DIST_LOCAL_INIT,
                            *span,
                            format!("distributed local `{name}` must be initialized with `new`"),
                        ),
                    }
                }
                if *shared {
                    if let Some(e) = init {
                        if !self.is_master_expr(e, false) {
                            self.err(
                                DiagCode::DIST_LOCAL_INIT,
                                *span,
                                format!("shared `{name}` needs a master-computable initial value"),
                            );
                        }
                    }
                    self.info.shared_decls.push(SharedDecl {
                        slot: *slot,
                        name: name.clone(),
                        ty: *ty,
                        init: init.clone(),
                    });
                }
            }
            Stmt::Assign { target, value, span } => {
                let target_ty = self.resolve_lvalue(target);
                if let Some(vt) = self.type_expr(value) {
                    if let Some(tt) = target_ty {
                        self.require_assignable(vt, tt, *span);
                    }
                }
            }
            Stmt::For(f) => {
                let rank = self.next_rank;
                self.next_rank += 1;
                f.rank = rank;
                self.scopes.push(HashMap::new());
                let mut var_slot = None;
                if let Some(init) = &mut f.init {
                    self.walk_stmt(init);
                    var_slot = match init {
                        Stmt::VarDecl { slot, ty: Type::Scalar(ScalarType::Int), .. } => Some(*slot),
                        Stmt::Assign { target, .. }
                            if target.indices.is_empty() && target.slot != NO_SLOT =>
                        {
                            Some(target.slot)
                        }
                        _ => None,
                    };
                }
                if let Some(c) = &mut f.cond {
                    if let Some(t) = self.type_expr(c) {
                        if t != Type::Scalar(ScalarType::Bool) {
                            self.err(DiagCode::TYPE_MISMATCH, c.span(), "loop condition must be boolean");
                        }
                    }
                }
                if let Some(s) = &mut f.step {
                    self.walk_stmt(s);
                }
                // canonical form: unit-stride increment of the int induction
                // variable declared or assigned in the init position
                if let Some(v) = var_slot {
                    let unit_step = matches!(
                        &f.step,
                        Some(Stmt::Assign { target, value: Expr::Binary { op: BinOp::Add, lhs, rhs, .. }, .. })
                            if target.indices.is_empty()
                                && target.slot == v
                                && matches!(lhs.as_ref(), Expr::Var { slot, .. } if *slot == v)
                                && matches!(rhs.as_ref(), Expr::IntLit(1, _))
                    );
                    let cond_on_var = matches!(
                        &f.cond,
                        Some(Expr::Binary { lhs, .. })
                            if matches!(lhs.as_ref(), Expr::Var { slot, .. } if *slot == v)
                    );
                    if !unit_step || !cond_on_var {
                        var_slot = None;
                    }
                }
                self.info.loops.push(LoopInfo { rank, span: f.span, var_slot, bind: None });
                self.walk_block(&mut f.body, false);
                self.scopes.pop();

                // record (value, dim) pairs indexed by the induction var
                if let Some(v) = var_slot {
                    let mut uses = Vec::new();
                    scan_index_uses(&f.body, v, &mut uses);
                    if let Some(c) = &f.cond {
                        scan_index_uses_expr(c, v, &mut uses);
                    }
                    for (slot, dim) in uses {
                        self.index_uses.push((rank, slot, dim));
                    }
                }
            }
            Stmt::If { cond, then_branch, else_branch, .. } => {
                if let Some(t) = self.type_expr(cond) {
                    if t != Type::Scalar(ScalarType::Bool) {
                        self.err(DiagCode::TYPE_MISMATCH, cond.span(), "if condition must be boolean");
                    }
                }
                self.walk_block(then_branch, false);
                if let Some(e) = else_branch {
                    self.walk_block(e, false);
                }
            }
            Stmt::Sync { reduce, target, body, span } => {
                self.info.has_sync = true;
                if let Some((name, slot)) = target {
                    if let Some(s) = self.lookup(name, *span) {
                        *slot = s;
                    }
                }
                match (reduce.as_ref(), target.as_ref()) {
                    (Some(_), None) => self.err(
                        DiagCode::SYNC_REDUCE_TARGET,
                        *span,
                        "a sync reduction needs a target variable",
                    ),
                    (Some(_), Some((name, slot))) if *slot != NO_SLOT => {
                        let is_shared_scalar = self
                            .info
                            .shared_decls
                            .iter()
                            .any(|d| d.slot == *slot && !d.ty.is_array());
                        if !is_shared_scalar {
                            self.err(
                                DiagCode::SYNC_REDUCE_TARGET,
                                *span,
                                format!("sync reduction target `{name}` must be a shared scalar"),
                            );
                        }
                    }
                    _ => {}
                }
                if let Some(ReduceSpec::User { name, .. }) = reduce {
                    if !self.registry.has_reducer(name) {
                        self.err(
                            DiagCode::UNKNOWN_REDUCER,
                            *span,
                            format!("unregistered reducer `{name}`"),
                        );
                    }
                }
                self.walk_block(body, false);
            }
            Stmt::Return { value, span } => {
                let ret = self.method.ret;
                if let Some(v) = value {
                    if let Some(t) = self.type_expr(v) {
                        self.require_assignable(t, ret, *span);
                    }
                } else {
                    self.err(DiagCode::TYPE_MISMATCH, *span, "return needs a value");
                }
            }
            Stmt::Expr { expr, .. } => {
                self.type_expr(expr);
            }
        }
    }

    fn resolve_lvalue(&mut self, lv: &mut LValue) -> Option<Type> {
        let slot = self.lookup(&lv.name, lv.span)?;
        lv.slot = slot;
        self.info.writes_by_slot[slot as usize] = true;
        if self.info.write_spans[slot as usize].is_none() {
            self.info.write_spans[slot as usize] = Some(lv.span);
        }
        let ty = self.slot_type(slot);
        let mut indices = std::mem::take(&mut lv.indices);
        for ix in &mut indices {
            if let Some(t) = self.type_expr(ix) {
                if t != Type::Scalar(ScalarType::Int) {
                    self.err(DiagCode::BAD_INDEXING, ix.span(), "array index must be int");
                }
            }
        }
        lv.indices = indices;
        if lv.indices.is_empty() {
            Some(ty)
        } else {
            match ty {
                Type::Array(elem, d) if lv.indices.len() == d as usize => Some(Type::Scalar(elem)),
                Type::Array(..) => {
                    self.err(
                        DiagCode::BAD_INDEXING,
                        lv.span,
                        format!("`{}` indexed with wrong arity", lv.name),
                    );
                    None
                }
                Type::Scalar(_) => {
                    self.err(DiagCode::BAD_INDEXING, lv.span, format!("`{}` is not an array", lv.name));
                    None
                }
            }
        }
    }

    fn require_assignable(&mut self, from: Type, to: Type, span: Span) {
        if !assignable(from, to) {
            self.err(
                DiagCode::TYPE_MISMATCH,
                span,
                format!("cannot assign {} to {}", type_name(from), type_name(to)),
            );
        }
    }

    fn type_expr(&mut self, e: &mut Expr) -> Option<Type> {
        use ScalarType::*;
        match e {
            Expr::IntLit(..) => Some(Type::Scalar(Int)),
            Expr::LongLit(..) => Some(Type::Scalar(Long)),
            Expr::DoubleLit(..) => Some(Type::Scalar(Double)),
            Expr::BoolLit(..) => Some(Type::Scalar(Bool)),
            Expr::Var { name, slot, span } => {
                let s = self.lookup(name, *span)?;
                *slot = s;
                Some(self.slot_type(s))
            }
            Expr::Index { base, slot, indices, span } => {
                let s = self.lookup(base, *span)?;
                *slot = s;
                for ix in indices.iter_mut() {
                    if let Some(t) = self.type_expr(ix) {
                        if t != Type::Scalar(Int) {
                            self.err(DiagCode::BAD_INDEXING, ix.span(), "array index must be int");
                        }
                    }
                }
                match self.slot_type(s) {
                    Type::Array(elem, d) if indices.len() == d as usize => Some(Type::Scalar(elem)),
                    Type::Array(..) => {
                        self.err(
                            DiagCode::BAD_INDEXING,
                            *span,
                            format!("`{base}` indexed with wrong arity"),
                        );
                        None
                    }
                    Type::Scalar(_) => {
                        self.err(DiagCode::BAD_INDEXING, *span, format!("`{base}` is not an array"));
                        None
                    }
                }
            }
            Expr::Len { base, slot, dim, span } => {
                let s = self.lookup(base, *span)?;
                *slot = s;
                match self.slot_type(s) {
                    Type::Array(_, d) if *dim <= d => Some(Type::Scalar(Int)),
                    Type::Array(..) => {
                        self.err(DiagCode::BAD_INDEXING, *span, "length of a missing dimension");
                        None
                    }
                    Type::Scalar(_) => {
                        self.err(DiagCode::BAD_INDEXING, *span, format!("`{base}` is not an array"));
                        None
                    }
                }
            }
            Expr::Unary { op, expr, span } => {
                let t = self.type_expr(expr)?;
                match op {
                    UnOp::Neg => match t {
                        Type::Scalar(Int) | Type::Scalar(Long) | Type::Scalar(Double) => Some(t),
                        _ => {
                            self.err(DiagCode::TYPE_MISMATCH, *span, "negation needs a numeric operand");
                            None
                        }
                    },
                    UnOp::Not => {
                        if t == Type::Scalar(Bool) {
                            Some(t)
                        } else {
                            self.err(DiagCode::TYPE_MISMATCH, *span, "`!` needs a boolean operand");
                            None
                        }
                    }
                }
            }
            Expr::Binary { op, lhs, rhs, span } => {
                let lt = self.type_expr(lhs);
                let rt = self.type_expr(rhs);
                let (lt, rt) = (lt?, rt?);
                let numeric = |t: Type| {
                    matches!(t, Type::Scalar(Int) | Type::Scalar(Long) | Type::Scalar(Double))
                };
                match op {
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem => {
                        if numeric(lt) && numeric(rt) {
                            Some(Type::Scalar(promote(lt.elem(), rt.elem())))
                        } else {
                            self.err(
                                DiagCode::TYPE_MISMATCH,
                                *span,
                                format!("`{}` needs numeric operands", op.symbol()),
                            );
                            None
                        }
                    }
                    BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                        if numeric(lt) && numeric(rt) {
                            Some(Type::Scalar(Bool))
                        } else {
                            self.err(
                                DiagCode::TYPE_MISMATCH,
                                *span,
                                format!("`{}` needs numeric operands", op.symbol()),
                            );
                            None
                        }
                    }
                    BinOp::Eq | BinOp::Ne => {
                        if (numeric(lt) && numeric(rt)) || (lt == rt && !lt.is_array()) {
                            Some(Type::Scalar(Bool))
                        } else {
                            self.err(DiagCode::TYPE_MISMATCH, *span, "incomparable operands");
                            None
                        }
                    }
                    BinOp::And | BinOp::Or => {
                        if lt == Type::Scalar(Bool) && rt == Type::Scalar(Bool) {
                            Some(Type::Scalar(Bool))
                        } else {
                            self.err(
                                DiagCode::TYPE_MISMATCH,
                                *span,
                                format!("`{}` needs boolean operands", op.symbol()),
                            );
                            None
                        }
                    }
                }
            }
            Expr::Call { name, args, span } => {
                let sig = match self.sigs.get(name) {
                    Some(s) => s.clone(),
                    None => {
                        self.err(DiagCode::UNKNOWN_METHOD, *span, format!("unknown method `{name}`"));
                        return None;
                    }
                };
                let (param_tys, ret, has_reduce, has_dist) = sig;
                if args.len() != param_tys.len() {
                    self.err(
                        DiagCode::ARITY_MISMATCH,
                        *span,
                        format!("`{name}` takes {} arguments, got {}", param_tys.len(), args.len()),
                    );
                }
                for (a, pt) in args.iter_mut().zip(param_tys.iter()) {
                    if let Some(at) = self.type_expr(a) {
                        self.require_assignable(at, *pt, a.span());
                    }
                }
                if has_reduce && !has_dist {
                    self.info.aux_reduce_calls.push(name.clone());
                }
                Some(ret)
            }
            Expr::MathCall { func, args, span } => {
                if args.len() != func.arity() {
                    self.err(
                        DiagCode::ARITY_MISMATCH,
                        *span,
                        format!("Math.{} takes {} arguments", func.name(), func.arity()),
                    );
                }
                let mut tys = Vec::new();
                for a in args.iter_mut() {
                    if let Some(t) = self.type_expr(a) {
                        if !matches!(t, Type::Scalar(Int) | Type::Scalar(Long) | Type::Scalar(Double)) {
                            self.err(
                                DiagCode::TYPE_MISMATCH,
                                a.span(),
                                format!("Math.{} needs numeric arguments", func.name()),
                            );
                        }
                        tys.push(t);
                    }
                }
                match func {
                    MathFunc::Abs | MathFunc::Min | MathFunc::Max => {
                        let t = tys
                            .iter()
                            .map(|t| t.elem())
                            .reduce(promote)
                            .unwrap_or(ScalarType::Double);
                        Some(Type::Scalar(t))
                    }
                    _ => Some(Type::Scalar(Double)),
                }
            }
            Expr::NewArray { dims, elem, span } => {
                if dims.is_empty() || dims.len() > 2 {
                    self.err(DiagCode::BAD_INDEXING, *span, "new array takes one or two dimensions");
                }
                for d in dims.iter_mut() {
                    if let Some(t) = self.type_expr(d) {
                        if t != Type::Scalar(Int) {
                            self.err(DiagCode::TYPE_MISMATCH, d.span(), "array dimension must be int");
                        }
                    }
                }
                Some(Type::Array(*elem, dims.len() as u8))
            }
        }
    }

    // --- SOMD-specific passes (run after resolution) ---

    fn collect_dist_values(&mut self) {
        let mut values = Vec::new();
        for (i, p) in self.method.params.iter().enumerate() {
            if let Some(spec) = &p.dist {
                if !p.ty.is_array() {
                    continue;
                }
                values.push(DistValue {
                    slot: i as u32,
                    name: p.name.clone(),
                    ty: p.ty,
                    spec: spec.clone(),
                    is_param: true,
                    written: self.info.writes_by_slot[i],
                    init: None,
                    partitioned_dims: Vec::new(),
                    partition_len: Vec::new(),
                });
            }
        }
        collect_dist_locals(&self.method.body, &mut values, &self.info.writes_by_slot);
        for v in &mut values {
            let ndim = v.ty.dims();
            v.partitioned_dims = match &v.spec.dims {
                Some(ds) => ds.clone(),
                None => (1..=ndim).collect(),
            };
        }
        self.info.dist_values = values;
    }

    fn check_dist_specs(&mut self) {
        let specs: Vec<(String, DistSpec, u8)> = self
            .info
            .dist_values
            .iter()
            .map(|v| (v.name.clone(), v.spec.clone(), v.ty.dims()))
            .collect();
        for (name, spec, ndim) in specs {
            if spec.view.is_some() && spec.polyview.is_some() {
                self.err(
                    DiagCode::VIEW_POLYVIEW_CONFLICT,
                    spec.span,
                    format!("`{name}` declares both view and polyview"),
                );
            }
            if let Some(v) = spec.view.as_ref().or(spec.polyview.as_ref()) {
                if v.len() > ndim as usize {
                    self.err(
                        DiagCode::VIEW_SHAPE_MISMATCH,
                        spec.span,
                        format!("`{name}` declares {} view pairs for {} dimensions", v.len(), ndim),
                    );
                }
            }
            if let Some(dims) = &spec.dims {
                for &d in dims {
                    if d == 0 || d > ndim {
                        self.err(
                            DiagCode::DIM_OUT_OF_RANGE,
                            spec.span,
                            format!("`{name}` has no dimension {d}"),
                        );
                    }
                }
            }
            if let DistStrategy::User { name: sname, args } = &spec.strategy {
                if !self.registry.has_strategy(sname) {
                    self.err(
                        DiagCode::UNKNOWN_STRATEGY,
                        spec.span,
                        format!("unregistered partition strategy `{sname}`"),
                    );
                }
                for a in args {
                    if !self.is_master_expr(a, true) {
                        self.err(
                            DiagCode::LOOP_BOUND_NOT_MASTER_COMPUTABLE,
                            a.span(),
                            "strategy arguments must be master-computable",
                        );
                    }
                }
            }
        }
    }

    fn check_reduce_spec(&mut self) {
        let Some(reduce) = self.method.reduce.clone() else { return };
        let span = self.method.span;
        match reduce {
            ReduceSpec::Prim(_) => {
                if self.method.ret.is_array() {
                    self.err(
                        DiagCode::BAD_REDUCE_TYPE,
                        span,
                        "primitive reductions apply to scalar-returning methods",
                    );
                }
            }
            ReduceSpec::ArrayAssembly => {
                if !self.method.ret.is_array() {
                    self.err(DiagCode::BAD_REDUCE_TYPE, span, "array assembly needs an array return");
                }
            }
            ReduceSpec::SelfReduce => {
                let ok = match (self.method.ret, self.method.params.as_slice()) {
                    (Type::Scalar(t), [p]) => {
                        p.dist.is_some() && p.ty == Type::Array(t, 1)
                    }
                    _ => false,
                };
                if !ok {
                    self.err(
                        DiagCode::BAD_REDUCE_TYPE,
                        span,
                        "self-reduction needs a single distributed array parameter whose element type matches the return type",
                    );
                }
            }
            ReduceSpec::User { name, .. } => {
                if !self.registry.has_reducer(&name) {
                    self.err(DiagCode::UNKNOWN_REDUCER, span, format!("unregistered reducer `{name}`"));
                }
            }
        }
    }

    fn check_input_only(&mut self) {
        for i in 0..self.info.param_count {
            if self.info.writes_by_slot[i] {
                let p = &self.method.params[i];
                if p.dist.is_none() {
                    let at = self.info.write_spans[i].unwrap_or(p.span);
                    self.diags.push(Diagnostic::error(
                        DiagCode::INPUT_ONLY_VIOLATION,
                        at,
                        format!(
                            "parameter `{}` is written but not distributed; parameters are input-only",
                            p.name
                        ),
                    ));
                }
            }
        }
    }

    /// Classify canonical loops against distributed dimensions and check
    /// the master-computability restriction on their bounds.
    fn bind_loops(&mut self) {
        // the aux-reduction case: a reduce-carrying method without dist
        // parameters binds loops against its array parameters, since the
        // caller's partition applies to the argument it passes
        let aux_reduction = self.method.reduce.is_some() && self.info.dist_values.is_empty();
        let bindable: Vec<u32> = if aux_reduction {
            (0..self.info.param_count as u32)
                .filter(|&s| self.slot_type(s).is_array())
                .collect()
        } else {
            self.info.dist_values.iter().map(|v| v.slot).collect()
        };
        if !bindable.is_empty() {
            let mut binds: Vec<(usize, Option<LoopBind>, Span)> = Vec::new();
            collect_loop_binds(&self.method.body, &bindable, &mut binds);
            for (rank, bind, span) in binds {
                let Some(info) = self.info.loops.get_mut(rank) else { continue };
                if let Some(b) = bind {
                    let lower = b.lower.clone();
                    let upper = b.upper.clone();
                    let canonical = info.var_slot.is_some();
                    info.bind = Some(b);
                    if !canonical {
                        self.err(
                            DiagCode::NON_CANONICAL_PARALLEL_LOOP,
                            span,
                            "parallel loops need a single int induction variable with unit stride",
                        );
                    }
                    for e in [&lower, &upper] {
                        if !self.is_master_expr(e, false) {
                            self.err(
                                DiagCode::LOOP_BOUND_NOT_MASTER_COMPUTABLE,
                                e.span(),
                                "parallel loop bounds may use parameters, array lengths and literals only",
                            );
                        }
                    }
                }
            }
        }

        // structural restrictions; they only constrain methods that are
        // lowered for parallel execution
        if self.info.is_somd() {
            let mut ctx = StructCtx { diags: Vec::new(), sigs: self.sigs };
            check_structure(&self.method.body, &self.info, &mut ctx, 0, 0);
            self.diags.extend(ctx.diags);
        }
    }

    /// Partition length per (value, dim): the upper bound of the first loop
    /// whose induction variable indexes that dimension; the dimension's own
    /// length otherwise.
    fn resolve_partition_lengths(&mut self) {
        let loops = self.info.loops.clone();
        let index_uses = self.index_uses.clone();
        for v in &mut self.info.dist_values {
            let ndim = v.ty.dims();
            for dim in 1..=ndim {
                let mut expr: Option<Expr> = None;
                for l in &loops {
                    let used = index_uses
                        .iter()
                        .any(|(r, s, d)| *r == l.rank && *s == v.slot && *d == dim);
                    if used {
                        if let Some(b) = &l.bind {
                            expr = Some(b.upper.clone());
                            break;
                        }
                        // fall back to the bound of whatever loop indexes it
                    }
                }
                let expr = expr.unwrap_or(Expr::Len {
                    base: v.name.clone(),
                    slot: v.slot,
                    dim,
                    span: v.spec.span,
                });
                v.partition_len.push(expr);
            }
        }
    }

    /// Bounds, strategy arguments and distributed-local sizes must be
    /// computable by the master: parameters, array lengths and literals.
    fn is_master_expr(&self, e: &Expr, allow_array_vars: bool) -> bool {
        let param_count = self.info.param_count as u32;
        let dist_local = |slot: u32| self.dist_local_inits.contains_key(&slot);
        master_expr(e, param_count, &dist_local, allow_array_vars)
    }
}

struct StructCtx<'a> {
    diags: Vec<Diagnostic>,
    sigs: &'a HashMap<String, (Vec<Type>, Type, bool, bool)>,
}

impl StructCtx<'_> {
    fn check_expr_calls(&mut self, expr: &Expr, span: Span, if_depth: u32, bound_depth: u32) {
        let mut found = Vec::new();
        scan_calls(expr, &mut found);
        for name in found {
            let Some((_, _, has_reduce, has_dist)) = self.sigs.get(&name) else { continue };
            if *has_dist {
                self.diags.push(Diagnostic::error(
                    DiagCode::UNSUPPORTED_NESTED_SOMD,
                    span,
                    format!("cannot invoke distributed method `{name}` from a distributed method"),
                ));
            } else if *has_reduce {
                if if_depth > 0 {
                    self.diags.push(Diagnostic::error(
                        DiagCode::CONDITIONAL_NESTED_REDUCTION,
                        span,
                        format!("reduction-carrying call `{name}` cannot be conditional"),
                    ));
                }
                if bound_depth > 0 {
                    self.diags.push(Diagnostic::error(
                        DiagCode::NESTED_REDUCTION_IN_PARALLEL_LOOP,
                        span,
                        format!("intermediate reduction `{name}` cannot sit inside a partitioned loop"),
                    ));
                }
            }
        }
    }
}

/// Structural restrictions inside parallel methods: sync blocks and
/// intermediate reductions are collective points, so they cannot live
/// inside a loop split across method instances, and reduction-carrying
/// calls cannot be conditional.
fn check_structure(block: &Block, info: &MethodInfo, cx: &mut StructCtx, if_depth: u32, bound_depth: u32) {
    for s in &block.stmts {
        match s {
            Stmt::For(f) => {
                let bound = info
                    .loops
                    .get(f.rank as usize)
                    .map(|l| l.bind.is_some())
                    .unwrap_or(false);
                check_structure(&f.body, info, cx, if_depth, bound_depth + bound as u32);
            }
            Stmt::If { then_branch, else_branch, .. } => {
                check_structure(then_branch, info, cx, if_depth + 1, bound_depth);
                if let Some(e) = else_branch {
                    check_structure(e, info, cx, if_depth + 1, bound_depth);
                }
            }
            Stmt::Sync { body, span, .. } => {
                if bound_depth > 0 {
                    cx.diags.push(Diagnostic::error(
                        DiagCode::NON_CANONICAL_PARALLEL_LOOP,
                        *span,
                        "sync blocks cannot appear inside a partitioned loop",
                    ));
                }
                check_structure(body, info, cx, if_depth, bound_depth);
            }
            Stmt::Expr { expr, span } | Stmt::Assign { value: expr, span, .. } => {
                cx.check_expr_calls(expr, *span, if_depth, bound_depth);
            }
            Stmt::VarDecl { init: Some(expr), span, .. } => {
                cx.check_expr_calls(expr, *span, if_depth, bound_depth);
            }
            Stmt::Return { value: Some(expr), span } => {
                cx.check_expr_calls(expr, *span, if_depth, bound_depth);
            }
            _ => {}
        }
    }
}

fn scan_calls(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::Call { name, args, .. } => {
            out.push(name.clone());
            for a in args {
                scan_calls(a, out);
            }
        }
        Expr::Unary { expr, .. } => scan_calls(expr, out),
        Expr::Binary { lhs, rhs, .. } => {
            scan_calls(lhs, out);
            scan_calls(rhs, out);
        }
        Expr::MathCall { args, .. } | Expr::NewArray { dims: args, .. } => {
            for a in args {
                scan_calls(a, out);
            }
        }
        Expr::Index { indices, .. } => {
            for a in indices {
                scan_calls(a, out);
            }
        }
        _ => {}
    }
}

fn master_expr(
    e: &Expr,
    param_count: u32,
    dist_local: &dyn Fn(u32) -> bool,
    allow_array_vars: bool,
) -> bool {
    match e {
        Expr::IntLit(..) | Expr::LongLit(..) | Expr::DoubleLit(..) | Expr::BoolLit(..) => true,
        Expr::Var { slot, .. } => {
            *slot != NO_SLOT && (*slot < param_count || (allow_array_vars && dist_local(*slot)))
        }
        Expr::Len { slot, .. } => *slot != NO_SLOT && (*slot < param_count || dist_local(*slot)),
        Expr::Unary { expr, .. } => master_expr(expr, param_count, dist_local, allow_array_vars),
        Expr::Binary { lhs, rhs, .. } => {
            master_expr(lhs, param_count, dist_local, allow_array_vars)
                && master_expr(rhs, param_count, dist_local, allow_array_vars)
        }
        Expr::MathCall { args, .. } => {
            args.iter().all(|a| master_expr(a, param_count, dist_local, allow_array_vars))
        }
        Expr::NewArray { dims, .. } => {
            dims.iter().all(|d| master_expr(d, param_count, dist_local, allow_array_vars))
        }
        _ => false,
    }
}

fn collect_dist_locals(block: &Block, out: &mut Vec<DistValue>, writes: &[bool]) {
    for s in &block.stmts {
        match s {
            Stmt::VarDecl { dist: Some(spec), ty, name, slot, init, .. } if ty.is_array() => {
                out.push(DistValue {
                    slot: *slot,
                    name: name.clone(),
                    ty: *ty,
                    spec: spec.clone(),
                    is_param: false,
                    written: writes.get(*slot as usize).copied().unwrap_or(false),
                    init: init.clone(),
                    partitioned_dims: Vec::new(),
                    partition_len: Vec::new(),
                });
            }
            Stmt::For(f) => collect_dist_locals(&f.body, out, writes),
            Stmt::If { then_branch, else_branch, .. } => {
                collect_dist_locals(then_branch, out, writes);
                if let Some(e) = else_branch {
                    collect_dist_locals(e, out, writes);
                }
            }
            Stmt::Sync { body, .. } => collect_dist_locals(body, out, writes),
            _ => {}
        }
    }
}

/// Index positions `v` or `v +- literal` at dimension `d` of arrays.
fn scan_index_uses(block: &Block, var: u32, out: &mut Vec<(u32, u8)>) {
    for s in &block.stmts {
        match s {
            Stmt::VarDecl { init: Some(e), .. } => scan_index_uses_expr(e, var, out),
            Stmt::Assign { target, value, .. } => {
                for (d, ix) in target.indices.iter().enumerate() {
                    if indexes_with(ix, var) && target.slot != NO_SLOT {
                        out.push((target.slot, d as u8 + 1));
                    }
                    scan_index_uses_expr(ix, var, out);
                }
                scan_index_uses_expr(value, var, out);
            }
            Stmt::For(f) => {
                if let Some(Stmt::VarDecl { init: Some(e), .. } | Stmt::Assign { value: e, .. }) =
                    &f.init
                {
                    scan_index_uses_expr(e, var, out);
                }
                if let Some(c) = &f.cond {
                    scan_index_uses_expr(c, var, out);
                }
                scan_index_uses(&f.body, var, out);
            }
            Stmt::If { cond, then_branch, else_branch, .. } => {
                scan_index_uses_expr(cond, var, out);
                scan_index_uses(then_branch, var, out);
                if let Some(e) = else_branch {
                    scan_index_uses(e, var, out);
                }
            }
            Stmt::Sync { body, .. } => scan_index_uses(body, var, out),
            Stmt::Return { value: Some(e), .. } => scan_index_uses_expr(e, var, out),
            Stmt::Expr { expr, .. } => scan_index_uses_expr(expr, var, out),
            _ => {}
        }
    }
}

fn scan_index_uses_expr(e: &Expr, var: u32, out: &mut Vec<(u32, u8)>) {
    match e {
        Expr::Index { slot, indices, .. } => {
            for (d, ix) in indices.iter().enumerate() {
                if indexes_with(ix, var) && *slot != NO_SLOT {
                    out.push((*slot, d as u8 + 1));
                }
                scan_index_uses_expr(ix, var, out);
            }
        }
        Expr::Unary { expr, .. } => scan_index_uses_expr(expr, var, out),
        Expr::Binary { lhs, rhs, .. } => {
            scan_index_uses_expr(lhs, var, out);
            scan_index_uses_expr(rhs, var, out);
        }
        Expr::Call { args, .. } | Expr::MathCall { args, .. } | Expr::NewArray { dims: args, .. } => {
            for a in args {
                scan_index_uses_expr(a, var, out);
            }
        }
        _ => {}
    }
}

fn indexes_with(ix: &Expr, var: u32) -> bool {
    match ix {
        Expr::Var { slot, .. } => *slot == var,
        Expr::Binary { op: BinOp::Add | BinOp::Sub, lhs, rhs, .. } => {
            matches!(
                (lhs.as_ref(), rhs.as_ref()),
                (Expr::Var { slot, .. }, Expr::IntLit(..)) if *slot == var
            ) || matches!(
                (lhs.as_ref(), rhs.as_ref()),
                (Expr::IntLit(..), Expr::Var { slot, .. }) if *slot == var
            )
        }
        _ => false,
    }
}

/// Canonical loops whose upper bound names a bindable array dimension:
/// `X.length`, `X[0].length`, or either minus an int literal.
fn collect_loop_binds(block: &Block, bindable: &[u32], out: &mut Vec<(usize, Option<LoopBind>, Span)>) {
    for s in &block.stmts {
        match s {
            Stmt::For(f) => {
                let bind = loop_bind_of(f, bindable);
                out.push((f.rank as usize, bind, f.span));
                collect_loop_binds(&f.body, bindable, out);
            }
            Stmt::If { then_branch, else_branch, .. } => {
                collect_loop_binds(then_branch, bindable, out);
                if let Some(e) = else_branch {
                    collect_loop_binds(e, bindable, out);
                }
            }
            Stmt::Sync { body, .. } => collect_loop_binds(body, bindable, out),
            _ => {}
        }
    }
}

fn loop_bind_of(f: &ForStmt, bindable: &[u32]) -> Option<LoopBind> {
    let lower = match &f.init {
        Some(Stmt::VarDecl { init: Some(e), .. }) => e.clone(),
        Some(Stmt::Assign { value: e, target, .. }) if target.indices.is_empty() => e.clone(),
        _ => return None,
    };
    let Some(Expr::Binary { op: BinOp::Lt, rhs, .. }) = f.cond.as_ref() else {
        return None;
    };
    let upper = rhs.as_ref().clone();
    let (slot, dim) = match &upper {
        Expr::Len { slot, dim, .. } => (*slot, *dim),
        Expr::Binary { op: BinOp::Sub, lhs, rhs, .. } => match (lhs.as_ref(), rhs.as_ref()) {
            (Expr::Len { slot, dim, .. }, Expr::IntLit(..)) => (*slot, *dim),
            _ => return None,
        },
        _ => return None,
    };
    if !bindable.contains(&slot) {
        return None;
    }
    let full_extent =
        matches!(lower, Expr::IntLit(0, _)) && matches!(upper, Expr::Len { .. });
    Some(LoopBind { value_slot: slot, dim, full_extent, lower, upper })
}

fn assignable(from: Type, to: Type) -> bool {
    use ScalarType::*;
    if from == to {
        return true;
    }
    matches!(
        (from, to),
        (Type::Scalar(Int), Type::Scalar(Long | Double)) | (Type::Scalar(Long), Type::Scalar(Double))
    )
}

fn promote(a: ScalarType, b: ScalarType) -> ScalarType {
    use ScalarType::*;
    match (a, b) {
        (Double, _) | (_, Double) => Double,
        (Long, _) | (_, Long) => Long,
        _ => Int,
    }
}

fn type_name(t: Type) -> String {
    crate::pretty::type_str(t)
}
