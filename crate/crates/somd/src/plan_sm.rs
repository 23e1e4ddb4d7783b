//! Shared-memory lowering: master coordination plan plus the slave-side
//! translation.
//!
//! The master plan declares two phasers (`fence` with one party per slave,
//! `completed` with one extra party for the master), a rank-indexed results
//! vector, one partition call per distributed dimension, and the final
//! reduction. The slave translation rewrites `return e` into a results
//! write plus a completion arrival, closes `sync` bodies with a fence
//! arrival, and narrows loops over distributed dimensions to the
//! instance's index range: full-extent bounds become the range itself,
//! partial extents clamp with `max`/`min` against it. Specialized first
//! and last ranks may drop the clamps.
//!
//! Slaves carry all the work; the master only partitions, spawns, awaits
//! completion and reduces.

use crate::ast::*;
use crate::pretty::{expr_str, reduce_str, type_str};
use crate::validate::{LoopBind, MethodInfo, SharedDecl, ValidatedProgram};
use std::fmt::Write;

/// Lowered shared-memory plan. Immutable once built; execution state lives
/// entirely in the runtime.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionPlanSM {
    pub method: String,
    pub method_index: usize,
    pub n_slaves: usize,
    /// Near-square factorization used by values partitioned on two
    /// dimensions; `(n_slaves, 1)` when no such value exists.
    pub grid: (usize, usize),
    pub partition_calls: Vec<PartitionCall>,
    pub values: Vec<PlanValue>,
    pub shared_decls: Vec<SharedDecl>,
    pub reduce: ReduceSpec,
    /// Slot of the returned distributed value, when the method returns one
    /// directly; drives result assembly.
    pub return_value_slot: Option<u32>,
    /// Emit specialized first/last-rank bounds without `max`/`min`.
    pub specialize_edge_ranks: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionCall {
    pub value_index: usize,
    pub name: String,
    pub dim: u8,
    pub count: usize,
    pub length: Expr,
    pub view: (u32, u32),
    pub strategy: DistStrategy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanValue {
    pub slot: u32,
    pub name: String,
    pub ty: Type,
    pub is_param: bool,
    /// Written values materialize per-instance windows; read-only values
    /// alias the original storage.
    pub materialize: bool,
    pub init: Option<Expr>,
    pub ndim: u8,
    /// Ranges per dimension (1 for unpartitioned dimensions).
    pub counts: [usize; 2],
    pub views: [(u32, u32); 2],
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("method `{0}` distributes no values")]
    NotParallel(String),
    #[error("method `{0}` needs a reduction or an array return")]
    NoReduction(String),
    #[error("n_slaves must be at least 1")]
    ZeroSlaves,
}

pub fn lower_master_sm(
    vp: &ValidatedProgram,
    method: &str,
    n_slaves: usize,
) -> Result<ExecutionPlanSM, PlanError> {
    if n_slaves == 0 {
        return Err(PlanError::ZeroSlaves);
    }
    let idx = vp
        .method_index(method)
        .ok_or_else(|| PlanError::NotParallel(method.to_string()))?;
    let info = &vp.methods[idx];
    let decl = &vp.program.methods[idx];
    if !info.is_somd() {
        return Err(PlanError::NotParallel(method.to_string()));
    }
    let reduce = info
        .effective_reduce
        .clone()
        .ok_or_else(|| PlanError::NoReduction(method.to_string()))?;

    let two_dim = info
        .dist_values
        .iter()
        .any(|v| v.partitioned_dims.len() == 2);
    let grid = if two_dim {
        crate::partition::near_square_factors(n_slaves)
    } else {
        (n_slaves, 1)
    };

    let mut values = Vec::new();
    let mut partition_calls = Vec::new();
    for dv in &info.dist_values {
        let ndim = dv.ty.dims();
        let mut counts = [1usize; 2];
        let mut views = [(0u32, 0u32); 2];
        for dim in 1..=ndim {
            let d = (dim - 1) as usize;
            views[d] = dv.spec.view_for(dim);
            if !dv.partitioned_dims.contains(&dim) {
                continue;
            }
            counts[d] = if dv.partitioned_dims.len() == 2 {
                if dim == 1 {
                    grid.0
                } else {
                    grid.1
                }
            } else {
                n_slaves
            };
            partition_calls.push(PartitionCall {
                value_index: values.len(),
                name: dv.name.clone(),
                dim,
                count: counts[d],
                length: dv.partition_len[d].clone(),
                view: views[d],
                strategy: dv.spec.strategy.clone(),
            });
        }
        values.push(PlanValue {
            slot: dv.slot,
            name: dv.name.clone(),
            ty: dv.ty,
            is_param: dv.is_param,
            materialize: dv.written,
            init: dv.init.clone(),
            ndim,
            counts,
            views,
        });
    }

    let return_value_slot = returned_dist_slot(decl, info);

    Ok(ExecutionPlanSM {
        method: method.to_string(),
        method_index: idx,
        n_slaves,
        grid,
        partition_calls,
        values,
        shared_decls: info.shared_decls.clone(),
        reduce,
        return_value_slot,
        specialize_edge_ranks: false,
    })
}

fn returned_dist_slot(decl: &MethodDecl, info: &MethodInfo) -> Option<u32> {
    let Some(Stmt::Return { value: Some(Expr::Var { slot, .. }), .. }) = decl.body.stmts.last()
    else {
        return None;
    };
    info.dist_value_for_slot(*slot).map(|v| v.slot)
}

// --- plan dump -------------------------------------------------------------

/// Renders the plan as structured master + slave pseudo-source, mirroring
/// the generated-code shape (`--emit-plan`).
pub fn dump_plan(vp: &ValidatedProgram, plan: &ExecutionPlanSM) -> String {
    let decl = vp.decl(&plan.method).expect("plan method");
    let info = vp.info(&plan.method).expect("plan method");
    let mut out = String::new();

    let params = decl
        .params
        .iter()
        .map(|p| format!("{} {}", type_str(p.ty), p.name))
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(out, "{} {}({}) {{", type_str(decl.ret), decl.name, params);
    let _ = writeln!(out, "  int nSlaves = {};", plan.n_slaves);
    let _ = writeln!(out, "  Phaser fence = new Phaser(nSlaves);");
    let _ = writeln!(out, "  Phaser completed = new Phaser(nSlaves + 1);");
    let _ = writeln!(out, "  {}[] results = new {}[nSlaves];", type_str(decl.ret), type_str(decl.ret));
    for s in &plan.shared_decls {
        let init = s
            .init
            .as_ref()
            .map(|e| format!(" = {}", expr_str(e)))
            .unwrap_or_default();
        let _ = writeln!(out, "  {} {}{};", type_str(s.ty), s.name, init);
    }
    for v in plan.values.iter().filter(|v| !v.is_param) {
        let init = v.init.as_ref().map(expr_str).unwrap_or_default();
        let _ = writeln!(out, "  {} {} = {};", type_str(v.ty), v.name, init);
    }
    for pc in &plan.partition_calls {
        let strategy = match &pc.strategy {
            DistStrategy::Block => "IndexPartitioner".to_string(),
            DistStrategy::User { name, .. } => name.clone(),
        };
        let _ = writeln!(
            out,
            "  int[][] {}_{} = Distributions.{}({}, {}, {{{},{}}});",
            pc.name,
            pc.dim,
            strategy,
            expr_str(&pc.length),
            pc.count,
            pc.view.0,
            pc.view.1
        );
    }
    let mut spawn_args: Vec<String> = decl.params.iter().map(|p| p.name.clone()).collect();
    for pc in &plan.partition_calls {
        let v = &plan.values[pc.value_index];
        let sel = range_selector(v, pc.dim, plan);
        spawn_args.push(format!("{}_{}[{}]", pc.name, pc.dim, sel));
    }
    spawn_args.extend(["fence", "completed", "results", "r"].map(String::from));
    let _ = writeln!(out, "  for (int r = 0; r < nSlaves; r++)");
    let _ = writeln!(out, "    spawn(new {}_MI({}));", camel(&plan.method), spawn_args.join(", "));
    let _ = writeln!(out, "  completed.advanceAndWait();");
    let _ = writeln!(out, "  {} result = {};", type_str(decl.ret), reduce_call(&plan.reduce));
    let _ = writeln!(out, "  return result;");
    let _ = writeln!(out, "}}");
    out.push('\n');
    let _ = writeln!(out, "class {}_MI {{", camel(&plan.method));
    let _ = writeln!(out, "  // env: completed, fence, results, rank, index ranges");
    let _ = writeln!(out, "  void call() {{");
    out.push_str(&transform_slave(vp, decl, info, plan, 2));
    let _ = writeln!(out, "  }}");
    let _ = writeln!(out, "}}");
    out
}

fn camel(name: &str) -> String {
    let mut c = name.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn range_selector(v: &PlanValue, dim: u8, plan: &ExecutionPlanSM) -> String {
    let two_dim = v.counts[0] > 1 && v.counts[1] > 1;
    if two_dim {
        if dim == 1 {
            format!("r / {}", plan.grid.1)
        } else {
            format!("r % {}", plan.grid.1)
        }
    } else {
        "r".to_string()
    }
}

fn reduce_call(reduce: &ReduceSpec) -> String {
    match reduce {
        ReduceSpec::Prim(op) => format!("Reductions.fold(\"{}\", results)", op.symbol()),
        ReduceSpec::ArrayAssembly => "Reductions.assemble(results)".to_string(),
        ReduceSpec::SelfReduce => "Reductions.self(results)".to_string(),
        ReduceSpec::User { name, .. } => format!("Reductions.user(\"{name}\", results)"),
    }
}

/// The slave-side translation: generated source for one method instance.
/// The runtime executes the plan tables directly; this rendering is the
/// inspectable artifact.
pub fn transform_slave(
    vp: &ValidatedProgram,
    decl: &MethodDecl,
    info: &MethodInfo,
    plan: &ExecutionPlanSM,
    indent: usize,
) -> String {
    let mut cx = SlaveCx { vp, info, plan, out: String::new(), indent };
    cx.block(&decl.body);
    cx.out
}

struct SlaveCx<'a> {
    vp: &'a ValidatedProgram,
    info: &'a MethodInfo,
    plan: &'a ExecutionPlanSM,
    out: String,
    indent: usize,
}

impl SlaveCx<'_> {
    fn line(&mut self, s: &str) {
        for _ in 0..self.indent {
            self.out.push_str("  ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn block(&mut self, b: &Block) {
        for s in &b.stmts {
            self.stmt(s);
        }
    }

    fn is_shared(&self, slot: u32) -> bool {
        self.plan.shared_decls.iter().any(|d| d.slot == slot)
    }

    fn is_dist_local(&self, slot: u32) -> bool {
        self.plan.values.iter().any(|v| v.slot == slot && !v.is_param)
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::VarDecl { shared, slot, ty, name, init, .. } => {
                if *shared && self.is_shared(*slot) {
                    // shared declarations are eliminated; the instance
                    // works on its env-provided copy
                    return;
                }
                if self.is_dist_local(*slot) {
                    // materialized by the master; the window arrives as a task argument
                    return;
                }
                let (name, ty) = (name.clone(), *ty);
                match init {
                    Some(e) => {
                        let prefix = format!("{} {} = ", type_str(ty), name);
                        if let Some(text) = self.intermediate_call(e, &prefix) {
                            self.line(&text);
                        } else {
                            self.line(&format!("{} {} = {};", type_str(ty), name, expr_str(e)));
                        }
                    }
                    None => self.line(&format!("{} {};", type_str(ty), name)),
                }
            }
            Stmt::Assign { target, value, .. } => {
                let mut lhs = target.name.clone();
                for ix in &target.indices {
                    lhs.push_str(&format!("[{}]", expr_str(ix)));
                }
                let prefix = format!("{lhs} = ");
                if let Some(text) = self.intermediate_call(value, &prefix) {
                    self.line(&text);
                } else {
                    self.line(&format!("{} = {};", lhs, expr_str(value)));
                }
            }
            Stmt::For(f) => self.for_stmt(f),
            Stmt::If { cond, then_branch, else_branch, .. } => {
                self.line(&format!("if ({}) {{", expr_str(cond)));
                self.indent += 1;
                self.block(then_branch);
                self.indent -= 1;
                match else_branch {
                    Some(e) => {
                        self.line("} else {");
                        self.indent += 1;
                        self.block(e);
                        self.indent -= 1;
                        self.line("}");
                    }
                    None => self.line("}"),
                }
            }
            Stmt::Sync { reduce, target, body, .. } => {
                self.block(body);
                match (reduce, target) {
                    (Some(r), Some((name, _))) => {
                        // intermediate reduction over the shared scalar:
                        // stage, combine at rank 0, then read the broadcast
                        self.line(&format!("staging[rank] = {name};"));
                        self.line("fence.advanceAndWait();");
                        self.line(&format!(
                            "if (rank == 0) broadcast = Reductions.fold(\"{}\", staging);",
                            reduce_str(r)
                        ));
                        self.line("fence.advanceAndWait();");
                        self.line(&format!("{name} = broadcast;"));
                    }
                    _ => {
                        self.line("fence.advanceAndWait();");
                    }
                }
            }
            Stmt::Return { value, .. } => {
                match value {
                    Some(e) => self.line(&format!("results[rank] = {};", expr_str(e))),
                    None => self.line("results[rank] = null;"),
                }
                self.line("completed.advance();");
            }
            Stmt::Expr { expr, .. } => {
                if let Some(text) = self.intermediate_call(expr, "") {
                    self.line(&text);
                } else {
                    self.line(&format!("{};", expr_str(expr)));
                }
            }
        }
    }

    /// When `e` contains a call to a reduce-carrying auxiliary method,
    /// emit the staged two-fence protocol and return the final line with
    /// the call replaced by the broadcast value.
    fn intermediate_call(&mut self, e: &Expr, lhs_prefix: &str) -> Option<String> {
        let (rewritten, callee, arglist) = replace_aux_call(e, self.vp)?;
        let reduce = self.vp.decl(&callee).and_then(|m| m.reduce.clone())?;
        self.line(&format!("staging[rank] = {callee}_local({arglist});"));
        self.line("fence.advanceAndWait();");
        self.line(&format!(
            "if (rank == 0) broadcast = Reductions.fold(\"{}\", staging);",
            reduce_str(&reduce)
        ));
        self.line("fence.advanceAndWait();");
        Some(format!("{lhs_prefix}{};", expr_str(&rewritten)))
    }

    fn for_stmt(&mut self, f: &ForStmt) {
        let li = self.info.loops.get(f.rank as usize);
        let bind: Option<&LoopBind> = li.and_then(|l| l.bind.as_ref());
        let var = li
            .and_then(|l| l.var_slot)
            .map(|s| self.info.slot_names[s as usize].clone());
        match (bind, var) {
            (Some(b), Some(var)) => {
                let v = self
                    .plan
                    .values
                    .iter()
                    .find(|v| v.slot == b.value_slot)
                    .map(|v| v.name.clone())
                    .unwrap_or_else(|| self.info.slot_names[b.value_slot as usize].clone());
                let range = format!("{}_{}", v, b.dim);
                let (lo, hi) = if b.full_extent {
                    (format!("{range}[0]"), format!("{range}[1]"))
                } else {
                    (
                        format!("Math.max({}, {range}[0])", expr_str(&b.lower)),
                        format!("Math.min({}, {range}[1])", expr_str(&b.upper)),
                    )
                };
                self.line(&format!("for (int {var} = {lo}; {var} < {hi}; {var}++) {{"));
            }
            _ => {
                let init = f
                    .init
                    .as_ref()
                    .map(stmt_inline)
                    .unwrap_or_default();
                let cond = f.cond.as_ref().map(expr_str).unwrap_or_default();
                let step = f.step.as_ref().map(stmt_inline).unwrap_or_default();
                self.line(&format!("for ({init}; {cond}; {step}) {{"));
            }
        }
        self.indent += 1;
        self.block(&f.body);
        self.indent -= 1;
        self.line("}");
    }
}

/// Replace the first call to a reduce-carrying auxiliary method with the
/// `broadcast` variable; returns the rewritten expression, the callee name
/// and its printed argument list.
fn replace_aux_call(e: &Expr, vp: &ValidatedProgram) -> Option<(Expr, String, String)> {
    fn is_aux(name: &str, vp: &ValidatedProgram) -> bool {
        vp.decl(name)
            .map(|m| m.reduce.is_some() && m.params.iter().all(|p| p.dist.is_none()))
            .unwrap_or(false)
    }
    fn walk(e: &Expr, vp: &ValidatedProgram, found: &mut Option<(String, String)>) -> Expr {
        match e {
            Expr::Call { name, args, span } if found.is_none() && is_aux(name, vp) => {
                let arglist = args.iter().map(expr_str).collect::<Vec<_>>().join(", ");
                *found = Some((name.clone(), arglist));
                Expr::Var { name: "broadcast".into(), slot: NO_SLOT, span: *span }
            }
            Expr::Unary { op, expr, span } => Expr::Unary {
                op: *op,
                expr: Box::new(walk(expr, vp, found)),
                span: *span,
            },
            Expr::Binary { op, lhs, rhs, span } => Expr::Binary {
                op: *op,
                lhs: Box::new(walk(lhs, vp, found)),
                rhs: Box::new(walk(rhs, vp, found)),
                span: *span,
            },
            Expr::MathCall { func, args, span } => Expr::MathCall {
                func: *func,
                args: args.iter().map(|a| walk(a, vp, found)).collect(),
                span: *span,
            },
            Expr::Call { name, args, span } => Expr::Call {
                name: name.clone(),
                args: args.iter().map(|a| walk(a, vp, found)).collect(),
                span: *span,
            },
            other => other.clone(),
        }
    }
    let mut found = None;
    let rewritten = walk(e, vp, &mut found);
    let (callee, arglist) = found?;
    Some((rewritten, callee, arglist))
}

fn stmt_inline(s: &Stmt) -> String {
    match s {
        Stmt::VarDecl { ty, name, init, .. } => match init {
            Some(e) => format!("{} {} = {}", type_str(*ty), name, expr_str(e)),
            None => format!("{} {}", type_str(*ty), name),
        },
        Stmt::Assign { target, value, .. } => {
            let mut lhs = target.name.clone();
            for ix in &target.indices {
                lhs.push_str(&format!("[{}]", expr_str(ix)));
            }
            format!("{} = {}", lhs, expr_str(value))
        }
        _ => String::new(),
    }
}

/// Rank `r`'s range indices per dimension for a value partitioned with
/// `counts`, under the plan grid.
pub fn range_indices_for_rank(
    plan: &ExecutionPlanSM,
    counts: [usize; 2],
    rank: usize,
) -> [usize; 2] {
    let (gr, gc) = plan.grid;
    let two_dim = counts[0] > 1 && counts[1] > 1;
    if two_dim {
        [rank / gc, rank % gc]
    } else if counts[0] > 1 {
        [rank, 0]
    } else if counts[1] > 1 {
        [0, rank]
    } else {
        // unpartitioned in both dimensions (single range each)
        let _ = (gr, gc);
        [0, 0]
    }
}
