//! GPU lowering: kernel sequence split at sync boundaries, global-id
//! guarded bodies, grid configuration, transfer schedule and the
//! device/host reduction split.
//!
//! Loops over distributed dimensions are refactored away: each thread
//! computes one index of the iteration set behind a bounds guard, and a
//! nested two-dimensional loop maps the flattened matrix through
//! `i = id / cols`, `j = id % cols`. Group independence is the execution
//! model's precondition, so the only global synchronization point is the
//! return of control to the host; a `sync` block inside a loop therefore
//! becomes a synchronous, repeated kernel launch. Trailing accumulation
//! loops turn into a per-group tree reduction whose group partials are
//! folded on the host; when the in-method accumulation operator matches
//! the method's reduce operator the two merge into one pass.
//!
//! User-defined partition strategies cannot be expressed in the execution
//! model and are dropped with a warning.

use crate::ast::*;
use crate::diag::{DiagCode, Diagnostic, Span};
use crate::validate::{MethodInfo, ValidatedProgram};
use crate::value::Scalar;
use std::collections::HashMap;

/// Thread-grid shape: the group size is the device maximum and the group
/// count rounds the problem up, so `total_threads - problem_size` is
/// always smaller than one group.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct GridConfig {
    pub n_groups: usize,
    pub group_size: usize,
    pub total_threads: usize,
}

pub fn grid_config(problem_size: usize, max_group_size: usize) -> GridConfig {
    assert!(max_group_size >= 1);
    let n_groups = problem_size.div_ceil(max_group_size);
    GridConfig { n_groups, group_size: max_group_size, total_threads: n_groups * max_group_size }
}

#[derive(Clone, Debug)]
pub struct GpuPlan {
    pub method: String,
    pub method_index: usize,
    pub buffers: Vec<BufferDecl>,
    pub kernels: Vec<Kernel>,
    pub steps: Vec<HostStep>,
    pub result: ResultSpec,
    /// Host frame width: method slots plus synthetic scalars.
    pub frame_size: usize,
    pub warnings: Vec<Diagnostic>,
}

#[derive(Clone, Debug)]
pub struct BufferDecl {
    pub id: usize,
    pub name: String,
    pub elem: ScalarType,
    pub source: BufferSource,
}

#[derive(Clone, Debug)]
pub enum BufferSource {
    /// Method parameter, copied host-to-device before the first launch
    /// that reads it.
    Param { slot: u32 },
    /// Method-local distributed array, allocated zeroed on the device.
    Local { slot: u32, dims: Vec<Expr> },
    /// One cell per thread group, written by a reduction kernel.
    Partials { kernel: usize },
    /// Single-cell broadcast target for intermediate reductions.
    Broadcast,
}

#[derive(Clone, Debug)]
pub struct Kernel {
    pub id: usize,
    pub name: String,
    /// Problem size (thread demand), evaluated on the host per invocation.
    pub size: Expr,
    pub body: KernelBody,
    /// Registers used by the kernel's thread-local state.
    pub n_regs: usize,
}

#[derive(Clone, Debug)]
pub enum KernelBody {
    Compute(Vec<KStmt>),
    /// Guarded contribution tree-reduced within each group into
    /// `partials[group]`.
    GroupReduce { op: PrimOp, setup: Vec<KStmt>, guard: KExpr, contrib: KExpr, partials: usize },
}

#[derive(Clone, Debug)]
pub enum KStmt {
    Let { reg: u16, expr: KExpr },
    Assign { reg: u16, expr: KExpr },
    Store { buf: usize, index: KExpr, value: KExpr, name: String },
    If { cond: KExpr, then: Vec<KStmt>, els: Vec<KStmt> },
    /// Sequential in-thread loop over `[lo, hi)`.
    For { reg: u16, lo: KExpr, hi: KExpr, body: Vec<KStmt> },
}

#[derive(Clone, Debug)]
pub enum KExpr {
    Lit(Scalar),
    GlobalId,
    Reg(u16),
    /// Scalar bound from the host frame at launch time.
    Arg(u32),
    Load { buf: usize, index: Box<KExpr>, name: String },
    /// Logical length of a buffer dimension.
    Len { buf: usize, dim: u8 },
    Unary { op: UnOp, expr: Box<KExpr> },
    Binary { op: BinOp, lhs: Box<KExpr>, rhs: Box<KExpr> },
    Math { func: MathFunc, args: Vec<KExpr> },
}

#[derive(Clone, Debug)]
pub enum HostStep {
    Put { buf: usize },
    Alloc { buf: usize },
    Launch { kernel: usize },
    Repeat { count: Expr, var_slot: Option<u32>, start: Option<Expr>, steps: Vec<HostStep> },
    /// Fetch a partials buffer and fold it into a host slot.
    FoldPartials { buf: usize, kind: FoldKind, init_slot: u32, dest_slot: u32 },
    /// Copy a host scalar into a single-cell device buffer.
    PutScalar { buf: usize, src_slot: u32 },
    /// Evaluate a master-computable expression on the host frame.
    EvalScalar { dest_slot: u32, expr: Expr, declared: Type },
}

#[derive(Clone, Debug)]
pub enum FoldKind {
    Prim(PrimOp),
    /// Re-apply the method over the partials vector (self-reduction).
    SelfMethod,
}

#[derive(Clone, Debug)]
pub enum ResultSpec {
    Buffer { buf: usize },
    HostSlot { slot: u32 },
}

#[derive(Debug, thiserror::Error)]
pub enum GpuPlanError {
    #[error("{message} ({span})")]
    Unsupported { message: String, span: Span },
    #[error("method `{0}` distributes no values")]
    NotParallel(String),
}

fn unsupported<T>(message: impl Into<String>, span: Span) -> Result<T, GpuPlanError> {
    Err(GpuPlanError::Unsupported { message: message.into(), span })
}

/// Lower a validated distributed method to a kernel-sequence plan.
pub fn lower_gpu(vp: &ValidatedProgram, method: &str) -> Result<GpuPlan, GpuPlanError> {
    let idx = vp
        .method_index(method)
        .ok_or_else(|| GpuPlanError::NotParallel(method.to_string()))?;
    let info = &vp.methods[idx];
    let decl = &vp.program.methods[idx];
    if !info.is_somd() {
        return Err(GpuPlanError::NotParallel(method.to_string()));
    }
    let mut cx = GpuCx {
        vp,
        info,
        decl,
        buffers: Vec::new(),
        kernels: Vec::new(),
        steps: Vec::new(),
        warnings: Vec::new(),
        buffer_by_slot: HashMap::new(),
        scalar_slots: HashMap::new(),
        derived: HashMap::new(),
        bcast_put_done: std::collections::HashSet::new(),
        next_synthetic: info.slot_types.len() as u32,
        result: None,
    };
    cx.lower()?;
    let mut plan = GpuPlan {
        method: method.to_string(),
        method_index: idx,
        buffers: cx.buffers,
        kernels: cx.kernels,
        steps: cx.steps,
        result: cx.result.expect("lowering sets the result"),
        frame_size: cx.next_synthetic as usize,
        warnings: cx.warnings,
    };
    prune_unused_buffers(&mut plan);
    Ok(plan)
}

/// Drop buffers nothing references (e.g. broadcast cells for reduction
/// results that never flow back into a kernel) and renumber the rest.
fn prune_unused_buffers(plan: &mut GpuPlan) {
    use std::collections::HashSet;
    let mut used: HashSet<usize> = HashSet::new();
    fn expr_bufs(e: &KExpr, used: &mut HashSet<usize>) {
        match e {
            KExpr::Load { buf, index, .. } => {
                used.insert(*buf);
                expr_bufs(index, used);
            }
            KExpr::Len { buf, .. } => {
                used.insert(*buf);
            }
            KExpr::Unary { expr, .. } => expr_bufs(expr, used),
            KExpr::Binary { lhs, rhs, .. } => {
                expr_bufs(lhs, used);
                expr_bufs(rhs, used);
            }
            KExpr::Math { args, .. } => args.iter().for_each(|a| expr_bufs(a, used)),
            _ => {}
        }
    }
    fn stmt_bufs(list: &[KStmt], used: &mut HashSet<usize>) {
        for s in list {
            match s {
                KStmt::Let { expr, .. } | KStmt::Assign { expr, .. } => expr_bufs(expr, used),
                KStmt::Store { buf, index, value, .. } => {
                    used.insert(*buf);
                    expr_bufs(index, used);
                    expr_bufs(value, used);
                }
                KStmt::If { cond, then, els } => {
                    expr_bufs(cond, used);
                    stmt_bufs(then, used);
                    stmt_bufs(els, used);
                }
                KStmt::For { lo, hi, body, .. } => {
                    expr_bufs(lo, used);
                    expr_bufs(hi, used);
                    stmt_bufs(body, used);
                }
            }
        }
    }
    for k in &plan.kernels {
        match &k.body {
            KernelBody::Compute(stmts) => stmt_bufs(stmts, &mut used),
            KernelBody::GroupReduce { setup, guard, contrib, partials, .. } => {
                stmt_bufs(setup, &mut used);
                expr_bufs(guard, &mut used);
                expr_bufs(contrib, &mut used);
                used.insert(*partials);
            }
        }
    }
    if let ResultSpec::Buffer { buf } = &plan.result {
        used.insert(*buf);
    }
    // puts of parameters и allocs stay regardless; drop only unused
    // broadcast cells
    let keep: Vec<bool> = plan
        .buffers
        .iter()
        .map(|b| !matches!(b.source, BufferSource::Broadcast) || used.contains(&b.id))
        .collect();
    if keep.iter().all(|k| *k) {
        return;
    }
    let mut remap = vec![usize::MAX; plan.buffers.len()];
    let mut new_buffers = Vec::new();
    for (i, b) in plan.buffers.drain(..).enumerate() {
        if keep[i] {
            remap[i] = new_buffers.len();
            let mut nb = b;
            nb.id = remap[i];
            new_buffers.push(nb);
        }
    }
    plan.buffers = new_buffers;
    let map = |old: usize| remap[old];
    for k in plan.kernels.iter_mut() {
        *k = rebind_kernel(k, &map);
    }
    fn remap_steps(steps: &mut Vec<HostStep>, remap: &[usize]) {
        steps.retain(|s| !matches!(s, HostStep::PutScalar { buf, .. } if remap[*buf] == usize::MAX));
        for s in steps.iter_mut() {
            match s {
                HostStep::Put { buf }
                | HostStep::Alloc { buf }
                | HostStep::FoldPartials { buf, .. }
                | HostStep::PutScalar { buf, .. } => *buf = remap[*buf],
                HostStep::Repeat { steps, .. } => remap_steps(steps, remap),
                _ => {}
            }
        }
    }
    remap_steps(&mut plan.steps, &remap);
    if let ResultSpec::Buffer { buf } = &mut plan.result {
        *buf = remap[*buf];
    }
}

struct GpuCx<'a> {
    vp: &'a ValidatedProgram,
    info: &'a MethodInfo,
    decl: &'a MethodDecl,
    buffers: Vec<BufferDecl>,
    kernels: Vec<Kernel>,
    steps: Vec<HostStep>,
    warnings: Vec<Diagnostic>,
    buffer_by_slot: HashMap<u32, usize>,
    /// Scalar slots live on the host between kernels.
    scalar_slots: HashMap<u32, ()>,
    /// Scalars derived from a reduction; kernels read them from a
    /// device-resident broadcast cell instead of a launch argument.
    derived: HashMap<u32, usize>,
    bcast_put_done: std::collections::HashSet<usize>,
    next_synthetic: u32,
    result: Option<ResultSpec>,
}

impl GpuCx<'_> {
    fn lower(&mut self) -> Result<(), GpuPlanError> {
        // buffers for distributed values and array parameters; every
        // parameter is staged before the first launch that reads it
        for (i, p) in self.decl.params.iter().enumerate() {
            let slot = i as u32;
            if p.ty.is_array() {
                let id = self.buffers.len();
                self.buffers.push(BufferDecl {
                    id,
                    name: p.name.clone(),
                    elem: p.ty.elem(),
                    source: BufferSource::Param { slot },
                });
                self.buffer_by_slot.insert(slot, id);
                self.steps.push(HostStep::Put { buf: id });
            } else {
                self.scalar_slots.insert(slot, ());
            }
            if let Some(spec) = &p.dist {
                if let DistStrategy::User { name, .. } = &spec.strategy {
                    self.warnings.push(Diagnostic::warning(
                        DiagCode::GPU_STRATEGY_IGNORED,
                        spec.span,
                        format!("user partition strategy `{name}` is ignored in GPU code"),
                    ));
                }
            }
        }

        let stmts = std::mem::take(&mut { self.decl.body.stmts.clone() });
        self.lower_region(&stmts, true)?;
        if self.result.is_none() {
            return unsupported("method produced no result under GPU lowering", self.decl.span);
        }
        Ok(())
    }

    fn synthetic_slot(&mut self) -> u32 {
        let s = self.next_synthetic;
        self.next_synthetic += 1;
        s
    }

    /// Scalars carrying reduction results live in single-cell broadcast
    /// buffers so later kernels read them device-side.
    fn mark_derived(&mut self, slot: u32, elem: ScalarType) {
        if self.derived.contains_key(&slot) {
            return;
        }
        let id = self.buffers.len();
        self.buffers.push(BufferDecl {
            id,
            name: format!("bcast{id}"),
            elem,
            source: BufferSource::Broadcast,
        });
        self.derived.insert(slot, id);
    }

    fn expr_mentions_derived(&self, e: &Expr) -> bool {
        match e {
            Expr::Var { slot, .. } => self.derived.contains_key(slot),
            Expr::Unary { expr, .. } => self.expr_mentions_derived(expr),
            Expr::Binary { lhs, rhs, .. } => {
                self.expr_mentions_derived(lhs) || self.expr_mentions_derived(rhs)
            }
            Expr::MathCall { args, .. } => args.iter().any(|a| self.expr_mentions_derived(a)),
            _ => false,
        }
    }

    /// Emit the pending broadcast puts a kernel depends on, then launch.
    fn emit_launch(&mut self, kernel: usize, used_bcasts: &[(u32, usize)]) {
        for (slot, buf) in used_bcasts {
            if self.bcast_put_done.insert(*buf) {
                self.steps.push(HostStep::PutScalar { buf: *buf, src_slot: *slot });
            }
        }
        self.steps.push(HostStep::Launch { kernel });
    }

    fn declare_local_buffer(&mut self, slot: u32, name: &str, elem: ScalarType, dims: Vec<Expr>, spec: Option<&DistSpec>) {
        if let Some(DistSpec { strategy: DistStrategy::User { name: sname, .. }, span, .. }) = spec {
            self.warnings.push(Diagnostic::warning(
                DiagCode::GPU_STRATEGY_IGNORED,
                *span,
                format!("user partition strategy `{sname}` is ignored in GPU code"),
            ));
        }
        let id = self.buffers.len();
        self.buffers.push(BufferDecl {
            id,
            name: name.to_string(),
            elem,
            source: BufferSource::Local { slot, dims },
        });
        self.buffer_by_slot.insert(slot, id);
        self.steps.push(HostStep::Alloc { buf: id });
    }

    fn lower_region(&mut self, stmts: &[Stmt], top: bool) -> Result<(), GpuPlanError> {
        let mut i = 0usize;
        while i < stmts.len() {
            let stmt = &stmts[i];
            match stmt {
                Stmt::VarDecl { dist, ty, name, slot, init, span, .. } => {
                    if dist.is_some() || (ty.is_array() && init.is_some()) {
                        let Some(Expr::NewArray { dims, .. }) = init else {
                            return unsupported(
                                format!("array local `{name}` needs a `new` initializer for GPU lowering"),
                                *span,
                            );
                        };
                        for d in dims {
                            self.require_host_expr(d)?;
                        }
                        self.declare_local_buffer(*slot, name, ty.elem(), dims.clone(), dist.as_ref());
                    } else if ty.is_array() {
                        return unsupported(
                            format!("array local `{name}` without initializer"),
                            *span,
                        );
                    } else {
                        self.scalar_slots.insert(*slot, ());
                        let value = match init {
                            Some(e) => self.host_expr_with_reductions(e)?,
                            None => Expr::IntLit(0, *span),
                        };
                        if self.expr_mentions_derived(&value) {
                            self.mark_derived(*slot, ty.elem());
                        }
                        self.steps.push(HostStep::EvalScalar {
                            dest_slot: *slot,
                            expr: value,
                            declared: *ty,
                        });
                    }
                }
                Stmt::Assign { target, value, span } => {
                    if !target.indices.is_empty() {
                        return unsupported(
                            "array element writes outside parallel loops are not lowered",
                            *span,
                        );
                    }
                    if self.buffer_by_slot.contains_key(&target.slot) {
                        // whole-array reassignment between kernels
                        return unsupported(
                            format!("cannot reassign device array `{}`", target.name),
                            *span,
                        );
                    }
                    let value = self.host_expr_with_reductions(value)?;
                    let declared = self.info.slot_types[target.slot as usize];
                    if self.expr_mentions_derived(&value) {
                        self.mark_derived(target.slot, declared.elem());
                    }
                    self.steps.push(HostStep::EvalScalar {
                        dest_slot: target.slot,
                        expr: value,
                        declared,
                    });
                }
                Stmt::For(f) => {
                    if contains_sync(&f.body) {
                        self.lower_repeat_loop(f)?;
                    } else if self.loop_bind(f).is_some() {
                        // a parallel nest; if it is the trailing accumulation
                        // of the method, plan the split reduction instead
                        if top && self.is_trailing_reduction(stmts, i) {
                            self.lower_trailing_reduction(f, stmts, i)?;
                            return Ok(());
                        }
                        let (kernel, used) = self.lower_parallel_nest(f)?;
                        self.emit_launch(kernel, &used);
                    } else {
                        return unsupported(
                            "sequential loops between kernels are not lowered",
                            f.span,
                        );
                    }
                }
                Stmt::Sync { reduce, target, body, span } => {
                    self.lower_sync(reduce.as_ref(), target.as_ref(), body, *span)?;
                }
                Stmt::If { span, .. } => {
                    return unsupported("conditional kernel schedules are not lowered", *span)
                }
                Stmt::Return { value, span } => {
                    self.lower_return(value.as_ref(), *span)?;
                    return Ok(());
                }
                Stmt::Expr { span, .. } => {
                    return unsupported("expression statements between kernels", *span)
                }
            }
            i += 1;
        }
        Ok(())
    }

    /// Host-side loop enclosing sync blocks: the enclosed kernels are
    /// issued synchronously once per iteration.
    fn lower_repeat_loop(&mut self, f: &ForStmt) -> Result<(), GpuPlanError> {
        let li = &self.info.loops[f.rank as usize];
        let var_slot = li.var_slot;
        let (start, count) = match (&f.init, &f.cond) {
            (Some(Stmt::VarDecl { init: Some(e1), .. }), Some(Expr::Binary { op: BinOp::Lt, rhs, .. }))
            | (Some(Stmt::Assign { value: e1, .. }), Some(Expr::Binary { op: BinOp::Lt, rhs, .. })) => {
                let e1 = e1.clone();
                let e2 = rhs.as_ref().clone();
                let count = if matches!(e1, Expr::IntLit(0, _)) {
                    e2
                } else {
                    Expr::Binary {
                        op: BinOp::Sub,
                        lhs: Box::new(e2),
                        rhs: Box::new(e1.clone()),
                        span: f.span,
                    }
                };
                (Some(e1), count)
            }
            _ => return unsupported("sync-enclosing loop bounds must be master-computable", f.span),
        };
        self.require_host_expr(&count)?;
        let outer_steps = std::mem::take(&mut self.steps);
        for s in &f.body.stmts {
            match s {
                Stmt::Sync { reduce, target, body, span } => {
                    self.lower_sync(reduce.as_ref(), target.as_ref(), body, *span)?;
                }
                other => {
                    return unsupported(
                        "a kernel-issuing loop may only contain sync blocks",
                        other.span(),
                    )
                }
            }
        }
        let inner = std::mem::replace(&mut self.steps, outer_steps);
        self.steps.push(HostStep::Repeat { count, var_slot, start, steps: inner });
        Ok(())
    }

    fn lower_sync(
        &mut self,
        reduce: Option<&ReduceSpec>,
        target: Option<&(String, u32)>,
        body: &Block,
        span: Span,
    ) -> Result<(), GpuPlanError> {
        match (reduce, target) {
            (Some(spec), Some((_, slot))) => {
                // shared-scalar reduction: the accumulation loop becomes a
                // per-group reduction, the host folds the partials and the
                // combined value goes back device-side as a broadcast cell
                let ReduceSpec::Prim(op) = spec else {
                    return unsupported("sync reductions lower for primitive operators only", span);
                };
                let loops: Vec<&ForStmt> = body
                    .stmts
                    .iter()
                    .filter_map(|s| match s {
                        Stmt::For(f) => Some(f.as_ref()),
                        _ => None,
                    })
                    .collect();
                if loops.len() != 1 || body.stmts.len() != 1 {
                    return unsupported("sync reduction body must be a single accumulation loop", span);
                }
                self.lower_accumulation(loops[0], *op, *slot, *slot)?;
                Ok(())
            }
            _ => {
                for s in &body.stmts {
                    match s {
                        Stmt::For(f) if self.loop_bind(f).is_some() => {
                            let (kernel, used) = self.lower_parallel_nest(f)?;
                            self.emit_launch(kernel, &used);
                        }
                        other => {
                            return unsupported(
                                "sync bodies lower as parallel loop nests",
                                other.span(),
                            )
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Accumulation loop `acc = acc op f(...)` over a distributed
    /// dimension: per-group tree reduction plus host fold into `dest`.
    fn lower_accumulation(
        &mut self,
        f: &ForStmt,
        op: PrimOp,
        acc_slot: u32,
        dest_slot: u32,
    ) -> Result<(), GpuPlanError> {
        let kernel_id = self.kernels.len();
        let partials_id = self.buffers.len();
        self.buffers.push(BufferDecl {
            id: partials_id,
            name: format!("partials{kernel_id}"),
            elem: ScalarType::Double,
            source: BufferSource::Partials { kernel: kernel_id },
        });

        let mut lcx = KernelCx::new(self);
        let nest = lcx.flatten_nest(f)?;
        let contrib = lcx.extract_contribution(&nest, op, acc_slot)?;
        let elem = self.info.slot_types[acc_slot as usize].elem();
        let used = lcx.used_bcasts.clone();
        let kernel = Kernel {
            id: kernel_id,
            name: format!("K{}", kernel_id + 1),
            size: nest.size.clone(),
            body: KernelBody::GroupReduce {
                op,
                setup: nest.setup.clone(),
                guard: nest.guard.clone(),
                contrib,
                partials: partials_id,
            },
            n_regs: lcx.n_regs as usize,
        };
        if let Some(b) = self.buffers.get_mut(partials_id) {
            b.elem = elem;
        }
        self.kernels.push(kernel);
        self.emit_launch(kernel_id, &used);
        self.steps.push(HostStep::FoldPartials {
            buf: partials_id,
            kind: FoldKind::Prim(op),
            init_slot: acc_slot,
            dest_slot,
        });
        self.mark_derived(dest_slot, elem);
        Ok(())
    }

    /// The method's trailing accumulation merges with its declared
    /// reduction: the device produces group partials, the host performs a
    /// single fold (or the self-reduction) over them.
    fn is_trailing_reduction(&self, stmts: &[Stmt], at: usize) -> bool {
        if !matches!(
            self.info.effective_reduce,
            Some(ReduceSpec::Prim(_)) | Some(ReduceSpec::SelfReduce)
        ) {
            return false;
        }
        let Stmt::For(f) = &stmts[at] else { return false };
        let Some(acc) = accumulation_target(f) else { return false };
        // everything after must be `return acc`
        match &stmts[at + 1..] {
            [Stmt::Return { value: Some(Expr::Var { slot, .. }), .. }] => *slot == acc.0,
            _ => false,
        }
    }

    fn lower_trailing_reduction(
        &mut self,
        f: &ForStmt,
        stmts: &[Stmt],
        at: usize,
    ) -> Result<(), GpuPlanError> {
        let (acc_slot, acc_op) = accumulation_target(f).expect("checked by caller");
        let reduce = self.info.effective_reduce.clone().unwrap();
        match reduce {
            ReduceSpec::Prim(op) if op == acc_op => {
                // merged: only the method-level reduction is performed
                self.lower_accumulation(f, op, acc_slot, acc_slot)?;
                self.result = Some(ResultSpec::HostSlot { slot: acc_slot });
            }
            ReduceSpec::SelfReduce => {
                // device group partials, host self-reduction over them
                let kernel_id = self.kernels.len();
                let partials_id = self.buffers.len();
                self.buffers.push(BufferDecl {
                    id: partials_id,
                    name: format!("partials{kernel_id}"),
                    elem: self.info.slot_types[acc_slot as usize].elem(),
                    source: BufferSource::Partials { kernel: kernel_id },
                });
                let mut lcx = KernelCx::new(self);
                let nest = lcx.flatten_nest(f)?;
                let contrib = lcx.extract_contribution(&nest, acc_op, acc_slot)?;
                self.kernels.push(Kernel {
                    id: kernel_id,
                    name: format!("K{}", kernel_id + 1),
                    size: nest.size.clone(),
                    body: KernelBody::GroupReduce {
                        op: acc_op,
                        setup: nest.setup,
                        guard: nest.guard,
                        contrib,
                        partials: partials_id,
                    },
                    n_regs: lcx.n_regs as usize,
                });
                let used = lcx.used_bcasts.clone();
                self.emit_launch(kernel_id, &used);
                let dest = self.synthetic_slot();
                self.steps.push(HostStep::FoldPartials {
                    buf: partials_id,
                    kind: FoldKind::SelfMethod,
                    init_slot: acc_slot,
                    dest_slot: dest,
                });
                self.result = Some(ResultSpec::HostSlot { slot: dest });
            }
            other => {
                return unsupported(
                    format!("reduction {other:?} does not merge with the trailing accumulation"),
                    f.span,
                )
            }
        }
        let _ = &stmts[at];
        Ok(())
    }

    fn lower_return(&mut self, value: Option<&Expr>, span: Span) -> Result<(), GpuPlanError> {
        match value {
            Some(Expr::Var { slot, .. }) if self.buffer_by_slot.contains_key(slot) => {
                let buf = self.buffer_by_slot[slot];
                self.result = Some(ResultSpec::Buffer { buf });
                Ok(())
            }
            Some(e) if self.kernels.is_empty() && !self.decl.ret.is_array() => {
                // loop-free body: a degenerate kernel where only the guard
                // of global id 0 passes
                let out = self.buffers.len();
                let slot = self.synthetic_slot();
                self.buffers.push(BufferDecl {
                    id: out,
                    name: "result".into(),
                    elem: self.decl.ret.elem(),
                    source: BufferSource::Local { slot, dims: vec![Expr::IntLit(1, span)] },
                });
                self.steps.push(HostStep::Alloc { buf: out });
                let mut lcx = KernelCx::new(self);
                let value = lcx.lower_expr(e)?;
                let reg = lcx.n_regs;
                lcx.n_regs += 1;
                let body = vec![
                    KStmt::Let { reg, expr: KExpr::GlobalId },
                    KStmt::If {
                        cond: KExpr::Binary {
                            op: BinOp::And,
                            lhs: Box::new(KExpr::Binary {
                                op: BinOp::Ge,
                                lhs: Box::new(KExpr::Reg(reg)),
                                rhs: Box::new(KExpr::Lit(Scalar::Int(0))),
                            }),
                            rhs: Box::new(KExpr::Binary {
                                op: BinOp::Lt,
                                lhs: Box::new(KExpr::Reg(reg)),
                                rhs: Box::new(KExpr::Lit(Scalar::Int(1))),
                            }),
                        },
                        then: vec![KStmt::Store {
                            buf: out,
                            index: KExpr::Reg(reg),
                            value,
                            name: "result".into(),
                        }],
                        els: Vec::new(),
                    },
                ];
                let used = lcx.used_bcasts.clone();
                let n_regs = lcx.n_regs as usize;
                let kernel_id = self.kernels.len();
                self.kernels.push(Kernel {
                    id: kernel_id,
                    name: format!("K{}", kernel_id + 1),
                    size: Expr::IntLit(1, span),
                    body: KernelBody::Compute(body),
                    n_regs,
                });
                self.emit_launch(kernel_id, &used);
                self.result = Some(ResultSpec::Buffer { buf: out });
                Ok(())
            }
            Some(e) => {
                let lowered = self.host_expr_with_reductions(e)?;
                let dest = self.synthetic_slot();
                let declared = self.decl.ret;
                self.steps.push(HostStep::EvalScalar { dest_slot: dest, expr: lowered, declared });
                self.result = Some(ResultSpec::HostSlot { slot: dest });
                Ok(())
            }
            None => unsupported("return without value", span),
        }
    }

    /// Rewrite intermediate-reduction calls inside a host expression: the
    /// auxiliary method lowers to a reduction kernel + host fold, and the
    /// call site reads the folded value from a synthetic slot.
    fn host_expr_with_reductions(&mut self, e: &Expr) -> Result<Expr, GpuPlanError> {
        match e {
            Expr::Call { name, args, span } => {
                let Some(idx) = self.vp.method_index(name) else {
                    return unsupported(format!("unknown method `{name}`"), *span);
                };
                let callee = &self.vp.program.methods[idx];
                if callee.reduce.is_none() {
                    return unsupported(
                        format!("plain call `{name}` cannot run between kernels"),
                        *span,
                    );
                }
                let dest = self.lower_aux_reduction(idx, args, *span)?;
                Ok(Expr::Var { name: format!("__r{dest}"), slot: dest, span: *span })
            }
            Expr::Unary { op, expr, span } => Ok(Expr::Unary {
                op: *op,
                expr: Box::new(self.host_expr_with_reductions(expr)?),
                span: *span,
            }),
            Expr::Binary { op, lhs, rhs, span } => Ok(Expr::Binary {
                op: *op,
                lhs: Box::new(self.host_expr_with_reductions(lhs)?),
                rhs: Box::new(self.host_expr_with_reductions(rhs)?),
                span: *span,
            }),
            Expr::MathCall { func, args, span } => Ok(Expr::MathCall {
                func: *func,
                args: args
                    .iter()
                    .map(|a| self.host_expr_with_reductions(a))
                    .collect::<Result<_, _>>()?,
                span: *span,
            }),
            other => {
                self.require_host_expr(other)?;
                Ok(other.clone())
            }
        }
    }

    /// Intermediate reduction: lower the auxiliary method's accumulation
    /// body against the caller's argument buffers.
    fn lower_aux_reduction(
        &mut self,
        callee_idx: usize,
        args: &[Expr],
        span: Span,
    ) -> Result<u32, GpuPlanError> {
        let callee = self.vp.program.methods[callee_idx].clone();
        let callee_info = &self.vp.methods[callee_idx];
        let Some(ReduceSpec::Prim(op)) = callee.reduce else {
            return unsupported("intermediate reductions lower for primitive operators", span);
        };
        // body shape: acc decl, accumulation loop, return acc
        let [Stmt::VarDecl { slot: acc_slot, init: Some(acc_init), ty: acc_ty, .. }, Stmt::For(f), Stmt::Return { value: Some(Expr::Var { slot: ret_slot, .. }), .. }] =
            &callee.body.stmts[..]
        else {
            return unsupported(
                "auxiliary reduction body must be init, accumulation loop, return",
                callee.span,
            );
        };
        if ret_slot != acc_slot {
            return unsupported("auxiliary reduction must return its accumulator", callee.span);
        }

        // bind callee parameters: arrays map to the caller's buffers,
        // scalars evaluate on the host into synthetic slots
        let mut param_map: HashMap<u32, ParamBinding> = HashMap::new();
        for (i, (p, a)) in callee.params.iter().zip(args).enumerate() {
            if p.ty.is_array() {
                let Expr::Var { slot, .. } = a else {
                    return unsupported("array arguments must be plain variables", a.span());
                };
                let Some(buf) = self.buffer_by_slot.get(slot) else {
                    return unsupported("argument array has no device buffer", a.span());
                };
                param_map.insert(i as u32, ParamBinding::Buffer(*buf));
            } else {
                let lowered = self.host_expr_with_reductions(a)?;
                let s = self.synthetic_slot();
                self.steps.push(HostStep::EvalScalar { dest_slot: s, expr: lowered, declared: p.ty });
                param_map.insert(i as u32, ParamBinding::HostSlot(s));
            }
        }

        // accumulator initial value on the host
        let init_slot = self.synthetic_slot();
        self.require_host_expr_in(acc_init, Some(&param_map))?;
        let init_expr = substitute_params(acc_init, &param_map);
        self.steps.push(HostStep::EvalScalar { dest_slot: init_slot, expr: init_expr, declared: *acc_ty });

        let kernel_id = self.kernels.len();
        let partials_id = self.buffers.len();
        self.buffers.push(BufferDecl {
            id: partials_id,
            name: format!("partials{kernel_id}"),
            elem: acc_ty.elem(),
            source: BufferSource::Partials { kernel: kernel_id },
        });
        let mut lcx = KernelCx::with_bindings(self, callee_info, &param_map);
        let nest = lcx.flatten_nest(f)?;
        let contrib = lcx.extract_contribution(&nest, op, *acc_slot)?;
        let used = lcx.used_bcasts.clone();
        self.kernels.push(Kernel {
            id: kernel_id,
            name: format!("K{}", kernel_id + 1),
            size: nest.size.clone(),
            body: KernelBody::GroupReduce {
                op,
                setup: nest.setup,
                guard: nest.guard,
                contrib,
                partials: partials_id,
            },
            n_regs: lcx.n_regs as usize,
        });
        self.emit_launch(kernel_id, &used);
        let dest = self.synthetic_slot();
        self.steps.push(HostStep::FoldPartials {
            buf: partials_id,
            kind: FoldKind::Prim(op),
            init_slot,
            dest_slot: dest,
        });
        self.mark_derived(dest, acc_ty.elem());
        Ok(dest)
    }

    fn lower_parallel_nest(&mut self, f: &ForStmt) -> Result<(usize, Vec<(u32, usize)>), GpuPlanError> {
        let kernel_id = self.kernels.len();
        let mut lcx = KernelCx::new(self);
        let nest = lcx.flatten_nest(f)?;
        let mut stmts = nest.setup.clone();
        let body = lcx.lower_stmts(&nest.body)?;
        stmts.push(KStmt::If { cond: nest.guard.clone(), then: body, els: Vec::new() });
        let used = lcx.used_bcasts.clone();
        self.kernels.push(Kernel {
            id: kernel_id,
            name: format!("K{}", kernel_id + 1),
            size: nest.size.clone(),
            body: KernelBody::Compute(stmts),
            n_regs: lcx.n_regs as usize,
        });
        Ok((kernel_id, used))
    }

    fn loop_bind(&self, f: &ForStmt) -> Option<&crate::validate::LoopBind> {
        self.info.loops.get(f.rank as usize).and_then(|l| l.bind.as_ref())
    }

    fn require_host_expr(&self, e: &Expr) -> Result<(), GpuPlanError> {
        self.require_host_expr_in(e, None)
    }

    /// Host expressions may use scalars tracked on the host frame, array
    /// lengths, literals and math calls.
    fn require_host_expr_in(
        &self,
        e: &Expr,
        params: Option<&HashMap<u32, ParamBinding>>,
    ) -> Result<(), GpuPlanError> {
        let ok = match e {
            Expr::IntLit(..) | Expr::LongLit(..) | Expr::DoubleLit(..) | Expr::BoolLit(..) => true,
            Expr::Var { slot, .. } => match params {
                Some(map) => matches!(map.get(slot), Some(ParamBinding::HostSlot(_))),
                None => self.scalar_slots.contains_key(slot) || *slot >= self.info.slot_types.len() as u32,
            },
            Expr::Len { slot, .. } => match params {
                Some(map) => matches!(map.get(slot), Some(ParamBinding::Buffer(_))),
                None => self.buffer_by_slot.contains_key(slot),
            },
            Expr::Unary { expr, .. } => {
                self.require_host_expr_in(expr, params)?;
                true
            }
            Expr::Binary { lhs, rhs, .. } => {
                self.require_host_expr_in(lhs, params)?;
                self.require_host_expr_in(rhs, params)?;
                true
            }
            Expr::MathCall { args, .. } | Expr::NewArray { dims: args, .. } => {
                for a in args {
                    self.require_host_expr_in(a, params)?;
                }
                true
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            unsupported("expression is not host-computable", e.span())
        }
    }
}

#[derive(Clone, Copy)]
enum ParamBinding {
    Buffer(usize),
    HostSlot(u32),
}

fn substitute_params(e: &Expr, map: &HashMap<u32, ParamBinding>) -> Expr {
    match e {
        Expr::Var { name, slot, span } => match map.get(slot) {
            Some(ParamBinding::HostSlot(s)) => Expr::Var { name: name.clone(), slot: *s, span: *span },
            _ => e.clone(),
        },
        Expr::Unary { op, expr, span } => Expr::Unary {
            op: *op,
            expr: Box::new(substitute_params(expr, map)),
            span: *span,
        },
        Expr::Binary { op, lhs, rhs, span } => Expr::Binary {
            op: *op,
            lhs: Box::new(substitute_params(lhs, map)),
            rhs: Box::new(substitute_params(rhs, map)),
            span: *span,
        },
        Expr::MathCall { func, args, span } => Expr::MathCall {
            func: *func,
            args: args.iter().map(|a| substitute_params(a, map)).collect(),
            span: *span,
        },
        other => other.clone(),
    }
}

fn contains_sync(b: &Block) -> bool {
    b.stmts.iter().any(|s| match s {
        Stmt::Sync { .. } => true,
        Stmt::For(f) => contains_sync(&f.body),
        Stmt::If { then_branch, else_branch, .. } => {
            contains_sync(then_branch) || else_branch.as_ref().is_some_and(contains_sync)
        }
        _ => false,
    })
}

/// `acc = acc op rhs` accumulation over a scalar local, possibly behind
/// preamble lets inside a nest; returns the accumulator slot and operator.
fn accumulation_target(f: &ForStmt) -> Option<(u32, PrimOp)> {
    let mut body = &f.body;
    loop {
        let non_decl: Vec<&Stmt> = body.stmts.iter().collect();
        match non_decl.as_slice() {
            [Stmt::For(inner)] => body = &inner.body,
            _ => break,
        }
    }
    for s in &body.stmts {
        if let Stmt::Assign { target, value, .. } = s {
            if target.indices.is_empty() {
                if let Expr::Binary { op, lhs, .. } = value {
                    let prim = match op {
                        BinOp::Add => PrimOp::Add,
                        BinOp::Sub => PrimOp::Sub,
                        BinOp::Mul => PrimOp::Mul,
                        _ => continue,
                    };
                    if matches!(lhs.as_ref(), Expr::Var { slot, .. } if *slot == target.slot) {
                        return Some((target.slot, prim));
                    }
                }
            }
        }
    }
    None
}

// --- kernel-body lowering ---------------------------------------------------

struct FlatNest {
    /// Derived-id lets (`i = id / cols`, `j = id % cols`).
    setup: Vec<KStmt>,
    guard: KExpr,
    size: Expr,
    body: Vec<Stmt>,
}

struct KernelCx<'a> {
    info: &'a MethodInfo,
    buffer_by_slot: HashMap<u32, usize>,
    scalar_slots: HashMap<u32, ScalarBinding>,
    /// Reduction-derived scalars: read device-side from broadcast cells.
    derived: HashMap<u32, usize>,
    used_bcasts: Vec<(u32, usize)>,
    names: Vec<String>,
    n_regs: u16,
    regs: HashMap<u32, u16>,
}

#[derive(Clone, Copy)]
enum ScalarBinding {
    HostArg(u32),
}

impl<'a> KernelCx<'a> {
    fn new(cx: &GpuCx<'a>) -> Self {
        let mut scalars = HashMap::new();
        for slot in cx.scalar_slots.keys() {
            scalars.insert(*slot, ScalarBinding::HostArg(*slot));
        }
        KernelCx {
            info: cx.info,
            buffer_by_slot: cx.buffer_by_slot.clone(),
            scalar_slots: scalars,
            derived: cx.derived.clone(),
            used_bcasts: Vec::new(),
            names: cx.info.slot_names.clone(),
            n_regs: 0,
            regs: HashMap::new(),
        }
    }

    /// Lowering context for an auxiliary method's body: parameters bind to
    /// the caller's buffers or host slots.
    fn with_bindings(
        _cx: &GpuCx<'a>,
        callee_info: &'a MethodInfo,
        params: &HashMap<u32, ParamBinding>,
    ) -> Self {
        let mut buffers = HashMap::new();
        let mut scalars = HashMap::new();
        for (slot, b) in params {
            match b {
                ParamBinding::Buffer(id) => {
                    buffers.insert(*slot, *id);
                }
                ParamBinding::HostSlot(s) => {
                    scalars.insert(*slot, ScalarBinding::HostArg(*s));
                }
            }
        }
        KernelCx {
            info: callee_info,
            buffer_by_slot: buffers,
            scalar_slots: scalars,
            derived: HashMap::new(),
            used_bcasts: Vec::new(),
            names: callee_info.slot_names.clone(),
            n_regs: 0,
            regs: HashMap::new(),
        }
    }

    fn alloc_reg(&mut self, slot: u32) -> u16 {
        let r = self.n_regs;
        self.n_regs += 1;
        self.regs.insert(slot, r);
        r
    }

    fn name_of(&self, slot: u32) -> String {
        self.names.get(slot as usize).cloned().unwrap_or_else(|| format!("s{slot}"))
    }

    /// Replace a (possibly nested) parallel loop by global-id guards.
    fn flatten_nest(&mut self, f: &ForStmt) -> Result<FlatNest, GpuPlanError> {
        let bind1 = self
            .info
            .loops
            .get(f.rank as usize)
            .and_then(|l| l.bind.clone())
            .ok_or_else(|| GpuPlanError::Unsupported {
                message: "kernel loop is not classified against a distributed dimension".into(),
                span: f.span,
            })?;
        let var1 = self.info.loops[f.rank as usize]
            .var_slot
            .ok_or_else(|| GpuPlanError::Unsupported {
                message: "kernel loop needs a canonical induction variable".into(),
                span: f.span,
            })?;

        // a directly nested second parallel loop flattens with this one
        let inner: Option<&ForStmt> = match f.body.stmts.as_slice() {
            [Stmt::For(inner)] => {
                let il = &self.info.loops[inner.rank as usize];
                if il.bind.is_some() && il.var_slot.is_some() {
                    Some(inner)
                } else {
                    None
                }
            }
            _ => None,
        };

        let mut setup = Vec::new();
        let (guard, size, body) = match inner {
            None => {
                let reg = self.alloc_reg(var1);
                setup.push(KStmt::Let { reg, expr: KExpr::GlobalId });
                let lo = self.lower_expr(&bind1.lower)?;
                let hi = self.lower_expr(&bind1.upper)?;
                let guard = and(
                    KExpr::Binary {
                        op: BinOp::Ge,
                        lhs: Box::new(KExpr::Reg(reg)),
                        rhs: Box::new(lo),
                    },
                    KExpr::Binary {
                        op: BinOp::Lt,
                        lhs: Box::new(KExpr::Reg(reg)),
                        rhs: Box::new(hi),
                    },
                );
                // the grid covers the whole dimension; guards mask
                let buf = self.buffer_by_slot.get(&bind1.value_slot).copied();
                let size = match buf {
                    Some(_) => Expr::Len {
                        base: self.name_of(bind1.value_slot),
                        slot: bind1.value_slot,
                        dim: bind1.dim,
                        span: f.span,
                    },
                    None => bind1.upper.clone(),
                };
                (guard, size, f.body.stmts.clone())
            }
            Some(inner_f) => {
                let bind2 = self.info.loops[inner_f.rank as usize].bind.clone().unwrap();
                let var2 = self.info.loops[inner_f.rank as usize].var_slot.unwrap();
                // the matrix must be flattened: i = id / cols, j = id % cols
                let cols_buf = self.buffer_by_slot.get(&bind2.value_slot).copied().ok_or_else(
                    || GpuPlanError::Unsupported {
                        message: "inner loop dimension has no device buffer".into(),
                        span: inner_f.span,
                    },
                )?;
                let cols = KExpr::Len { buf: cols_buf, dim: 2 };
                let reg_i = self.alloc_reg(var1);
                setup.push(KStmt::Let {
                    reg: reg_i,
                    expr: KExpr::Binary {
                        op: BinOp::Div,
                        lhs: Box::new(KExpr::GlobalId),
                        rhs: Box::new(cols.clone()),
                    },
                });
                let reg_j = self.alloc_reg(var2);
                setup.push(KStmt::Let {
                    reg: reg_j,
                    expr: KExpr::Binary {
                        op: BinOp::Rem,
                        lhs: Box::new(KExpr::GlobalId),
                        rhs: Box::new(cols),
                    },
                });
                let g1 = self.range_guard(reg_i, &bind1)?;
                let g2 = self.range_guard(reg_j, &bind2)?;
                let rows_name = self.name_of(bind1.value_slot);
                let size = Expr::Binary {
                    op: BinOp::Mul,
                    lhs: Box::new(Expr::Len {
                        base: rows_name.clone(),
                        slot: bind1.value_slot,
                        dim: 1,
                        span: f.span,
                    }),
                    rhs: Box::new(Expr::Len {
                        base: self.name_of(bind2.value_slot),
                        slot: bind2.value_slot,
                        dim: 2,
                        span: f.span,
                    }),
                    span: f.span,
                };
                (and(g1, g2), size, inner_f.body.stmts.clone())
            }
        };
        Ok(FlatNest { setup, guard, size, body })
    }

    fn range_guard(&mut self, reg: u16, bind: &crate::validate::LoopBind) -> Result<KExpr, GpuPlanError> {
        let lo = self.lower_expr(&bind.lower)?;
        let hi = self.lower_expr(&bind.upper)?;
        Ok(and(
            KExpr::Binary { op: BinOp::Ge, lhs: Box::new(KExpr::Reg(reg)), rhs: Box::new(lo) },
            KExpr::Binary { op: BinOp::Lt, lhs: Box::new(KExpr::Reg(reg)), rhs: Box::new(hi) },
        ))
    }

    /// The accumulation body reduced to a per-thread contribution
    /// expression: exactly one `acc = acc op rhs` statement.
    fn extract_contribution(
        &mut self,
        nest: &FlatNest,
        op: PrimOp,
        acc_slot: u32,
    ) -> Result<KExpr, GpuPlanError> {
        let mut contrib: Option<KExpr> = None;
        for s in &nest.body {
            match s {
                Stmt::Assign { target, value, span } => {
                    if target.slot != acc_slot || !target.indices.is_empty() {
                        return unsupported("accumulation body writes a non-accumulator", *span);
                    }
                    let Expr::Binary { op: bop, lhs, rhs, .. } = value else {
                        return unsupported("accumulation must combine into the accumulator", *span);
                    };
                    let matches_op = matches!(
                        (bop, op),
                        (BinOp::Add, PrimOp::Add) | (BinOp::Sub, PrimOp::Sub) | (BinOp::Mul, PrimOp::Mul)
                    );
                    if !matches_op
                        || !matches!(lhs.as_ref(), Expr::Var { slot, .. } if *slot == acc_slot)
                    {
                        return unsupported("accumulation operator mismatch", *span);
                    }
                    if contrib.is_some() {
                        return unsupported("multiple accumulations in one loop", *span);
                    }
                    contrib = Some(self.lower_expr(rhs)?);
                }
                other => return unsupported("unsupported statement in accumulation body", other.span()),
            }
        }
        contrib.ok_or_else(|| GpuPlanError::Unsupported {
            message: "no accumulation found in reduction loop".into(),
            span: Span::new(0, 0),
        })
    }

    fn lower_stmts(&mut self, stmts: &[Stmt]) -> Result<Vec<KStmt>, GpuPlanError> {
        let mut out = Vec::new();
        for s in stmts {
            match s {
                Stmt::VarDecl { ty, slot, init, span, .. } => {
                    if ty.is_array() {
                        return unsupported("array locals inside kernels", *span);
                    }
                    let expr = match init {
                        Some(e) => self.lower_expr(e)?,
                        None => KExpr::Lit(Scalar::zero(ty.elem())),
                    };
                    let reg = self.alloc_reg(*slot);
                    out.push(KStmt::Let { reg, expr });
                }
                Stmt::Assign { target, value, span } => {
                    let value = self.lower_expr(value)?;
                    if target.indices.is_empty() {
                        match self.regs.get(&target.slot) {
                            Some(reg) => out.push(KStmt::Assign { reg: *reg, expr: value }),
                            None => {
                                return unsupported(
                                    format!("`{}` is not thread-local", target.name),
                                    *span,
                                )
                            }
                        }
                    } else {
                        let buf = *self.buffer_by_slot.get(&target.slot).ok_or_else(|| {
                            GpuPlanError::Unsupported {
                                message: format!("`{}` has no device buffer", target.name),
                                span: *span,
                            }
                        })?;
                        let index = self.flat_index(buf, target.slot, &target.indices)?;
                        out.push(KStmt::Store { buf, index, value, name: target.name.clone() });
                    }
                }
                Stmt::For(f) => {
                    // sequential in-thread loop
                    let li = &self.info.loops[f.rank as usize];
                    let (var, lower, upper) = match (li.var_slot, &f.init, &f.cond) {
                        (
                            Some(v),
                            Some(Stmt::VarDecl { init: Some(e1), .. }),
                            Some(Expr::Binary { op: BinOp::Lt, rhs, .. }),
                        ) => (v, e1, rhs.as_ref()),
                        (
                            Some(v),
                            Some(Stmt::Assign { value: e1, .. }),
                            Some(Expr::Binary { op: BinOp::Lt, rhs, .. }),
                        ) => (v, e1, rhs.as_ref()),
                        _ => {
                            return unsupported(
                                "kernel-internal loops must be canonical",
                                f.span,
                            )
                        }
                    };
                    let lo = self.lower_expr(lower)?;
                    let hi = self.lower_expr(upper)?;
                    let reg = self.alloc_reg(var);
                    let body = self.lower_stmts(&f.body.stmts)?;
                    out.push(KStmt::For { reg, lo, hi, body });
                }
                Stmt::If { cond, then_branch, else_branch, .. } => {
                    let cond = self.lower_expr(cond)?;
                    let then = self.lower_stmts(&then_branch.stmts)?;
                    let els = match else_branch {
                        Some(b) => self.lower_stmts(&b.stmts)?,
                        None => Vec::new(),
                    };
                    out.push(KStmt::If { cond, then, els });
                }
                Stmt::Sync { span, .. } => {
                    return unsupported("nested sync inside a kernel body", *span)
                }
                Stmt::Return { span, .. } => {
                    return unsupported("return inside a kernel body", *span)
                }
                Stmt::Expr { expr, span } => {
                    let _ = self.lower_expr(expr)?;
                    return unsupported("expression statements inside kernels", *span);
                }
            }
        }
        Ok(out)
    }

    fn flat_index(&mut self, buf: usize, slot: u32, indices: &[Expr]) -> Result<KExpr, GpuPlanError> {
        let _ = slot;
        match indices {
            [i] => self.lower_expr(i),
            [i, j] => {
                let i = self.lower_expr(i)?;
                let j = self.lower_expr(j)?;
                Ok(KExpr::Binary {
                    op: BinOp::Add,
                    lhs: Box::new(KExpr::Binary {
                        op: BinOp::Mul,
                        lhs: Box::new(i),
                        rhs: Box::new(KExpr::Len { buf, dim: 2 }),
                    }),
                    rhs: Box::new(j),
                })
            }
            _ => unsupported("bad index arity", Span::new(0, 0)),
        }
    }

    fn lower_expr(&mut self, e: &Expr) -> Result<KExpr, GpuPlanError> {
        Ok(match e {
            Expr::IntLit(v, _) => KExpr::Lit(Scalar::Int(*v)),
            Expr::LongLit(v, _) => KExpr::Lit(Scalar::Long(*v)),
            Expr::DoubleLit(v, _) => KExpr::Lit(Scalar::Double(*v)),
            Expr::BoolLit(v, _) => KExpr::Lit(Scalar::Bool(*v)),
            Expr::Var { slot, name, span } => {
                if let Some(reg) = self.regs.get(slot) {
                    KExpr::Reg(*reg)
                } else if let Some(buf) = self.derived.get(slot) {
                    if !self.used_bcasts.iter().any(|(s, _)| s == slot) {
                        self.used_bcasts.push((*slot, *buf));
                    }
                    KExpr::Load {
                        buf: *buf,
                        index: Box::new(KExpr::Lit(Scalar::Int(0))),
                        name: name.clone(),
                    }
                } else if let Some(ScalarBinding::HostArg(s)) = self.scalar_slots.get(slot) {
                    KExpr::Arg(*s)
                } else {
                    return unsupported(format!("`{name}` is not available inside kernels"), *span);
                }
            }
            Expr::Index { slot, base, indices, span } => {
                let buf = *self.buffer_by_slot.get(slot).ok_or_else(|| GpuPlanError::Unsupported {
                    message: format!("`{base}` has no device buffer"),
                    span: *span,
                })?;
                let index = self.flat_index(buf, *slot, indices)?;
                KExpr::Load { buf, index: Box::new(index), name: base.clone() }
            }
            Expr::Len { slot, base, dim, span } => {
                let buf = *self.buffer_by_slot.get(slot).ok_or_else(|| GpuPlanError::Unsupported {
                    message: format!("`{base}` has no device buffer"),
                    span: *span,
                })?;
                KExpr::Len { buf, dim: *dim }
            }
            Expr::Unary { op, expr, .. } => KExpr::Unary {
                op: *op,
                expr: Box::new(self.lower_expr(expr)?),
            },
            Expr::Binary { op, lhs, rhs, .. } => KExpr::Binary {
                op: *op,
                lhs: Box::new(self.lower_expr(lhs)?),
                rhs: Box::new(self.lower_expr(rhs)?),
            },
            Expr::MathCall { func, args, .. } => KExpr::Math {
                func: *func,
                args: args.iter().map(|a| self.lower_expr(a)).collect::<Result<_, _>>()?,
            },
            Expr::Call { name, span, .. } => {
                return unsupported(
                    format!("method call `{name}` cannot execute inside a kernel"),
                    *span,
                )
            }
            Expr::NewArray { span, .. } => {
                return unsupported("array allocation inside a kernel", *span)
            }
        })
    }
}

fn and(a: KExpr, b: KExpr) -> KExpr {
    KExpr::Binary { op: BinOp::And, lhs: Box::new(a), rhs: Box::new(b) }
}

// --- plan dump ---------------------------------------------------------------

/// Structured text for `--emit-kernels`: each kernel with its guards and
/// body, then the host-side schedule with transfers and launches.
pub fn dump_gpu_plan(plan: &GpuPlan) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "gpu plan for `{}`", plan.method);
    for b in &plan.buffers {
        let kind = match &b.source {
            BufferSource::Param { .. } => "param, copied host->device".to_string(),
            BufferSource::Local { .. } => "device-allocated local".to_string(),
            BufferSource::Partials { kernel } => {
                format!("one cell per group of K{}", kernel + 1)
            }
            BufferSource::Broadcast => "single-cell broadcast".to_string(),
        };
        let _ = writeln!(out, "buffer {}: {} ({kind})", b.name, b.elem.keyword());
    }
    for k in &plan.kernels {
        let _ = writeln!(out, "\nkernel {} (threads = {}):", k.name, crate::pretty::expr_str(&k.size));
        match &k.body {
            KernelBody::Compute(stmts) => dump_kstmts(&mut out, stmts, plan, 1),
            KernelBody::GroupReduce { op, setup, guard, contrib, partials } => {
                dump_kstmts(&mut out, setup, plan, 1);
                let _ = writeln!(out, "  if ({}) contribute {};", kexpr_str(guard, plan), kexpr_str(contrib, plan));
                let _ = writeln!(
                    out,
                    "  {}[group] = tree-combine(\"{}\") over the group's contributions;",
                    plan.buffers[*partials].name,
                    op.symbol()
                );
            }
        }
    }
    let _ = writeln!(out, "\nhost schedule:");
    dump_steps(&mut out, &plan.steps, plan, 1);
    match &plan.result {
        ResultSpec::Buffer { buf } => {
            let _ = writeln!(out, "  result = get({});", plan.buffers[*buf].name);
        }
        ResultSpec::HostSlot { .. } => {
            let _ = writeln!(out, "  result = host-folded value;");
        }
    }
    out
}

fn indent_line(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn dump_steps(out: &mut String, steps: &[HostStep], plan: &GpuPlan, level: usize) {
    use std::fmt::Write;
    for s in steps {
        indent_line(out, level);
        match s {
            HostStep::Put { buf } => {
                let _ = writeln!(out, "kernel.put({});", plan.buffers[*buf].name);
            }
            HostStep::Alloc { buf } => {
                let _ = writeln!(out, "allocate {};", plan.buffers[*buf].name);
            }
            HostStep::Launch { kernel } => {
                let k = &plan.kernels[*kernel];
                let _ = writeln!(
                    out,
                    "{}.execute(numberOfThreads({}));",
                    k.name,
                    crate::pretty::expr_str(&k.size)
                );
            }
            HostStep::Repeat { count, steps, .. } => {
                let _ = writeln!(out, "for (int p = 0; p < {}; p++) {{", crate::pretty::expr_str(count));
                dump_steps(out, steps, plan, level + 1);
                indent_line(out, level);
                out.push_str("}\n");
            }
            HostStep::FoldPartials { buf, kind, .. } => {
                let how = match kind {
                    FoldKind::Prim(op) => format!("fold(\"{}\")", op.symbol()),
                    FoldKind::SelfMethod => "self-reduction".to_string(),
                };
                let _ = writeln!(out, "host {} over get({});", how, plan.buffers[*buf].name);
            }
            HostStep::PutScalar { buf, .. } => {
                let _ = writeln!(out, "kernel.put({});", plan.buffers[*buf].name);
            }
            HostStep::EvalScalar { expr, .. } => {
                let _ = writeln!(out, "host eval {};", crate::pretty::expr_str(expr));
            }
        }
    }
}

fn dump_kstmts(out: &mut String, stmts: &[KStmt], plan: &GpuPlan, level: usize) {
    use std::fmt::Write;
    for s in stmts {
        indent_line(out, level);
        match s {
            KStmt::Let { reg, expr } => {
                let _ = writeln!(out, "int r{reg} = {};", kexpr_str(expr, plan));
            }
            KStmt::Assign { reg, expr } => {
                let _ = writeln!(out, "r{reg} = {};", kexpr_str(expr, plan));
            }
            KStmt::Store { buf, index, value, .. } => {
                let _ = writeln!(
                    out,
                    "{}[{}] = {};",
                    plan.buffers[*buf].name,
                    kexpr_str(index, plan),
                    kexpr_str(value, plan)
                );
            }
            KStmt::If { cond, then, els } => {
                let _ = writeln!(out, "if ({}) {{", kexpr_str(cond, plan));
                dump_kstmts(out, then, plan, level + 1);
                if !els.is_empty() {
                    indent_line(out, level);
                    out.push_str("} else {\n");
                    dump_kstmts(out, els, plan, level + 1);
                }
                indent_line(out, level);
                out.push_str("}\n");
            }
            KStmt::For { reg, lo, hi, body } => {
                let _ = writeln!(
                    out,
                    "for (int r{reg} = {}; r{reg} < {}; r{reg}++) {{",
                    kexpr_str(lo, plan),
                    kexpr_str(hi, plan)
                );
                dump_kstmts(out, body, plan, level + 1);
                indent_line(out, level);
                out.push_str("}\n");
            }
        }
    }
}

fn kexpr_str(e: &KExpr, plan: &GpuPlan) -> String {
    match e {
        KExpr::Lit(Scalar::Int(v)) => v.to_string(),
        KExpr::Lit(Scalar::Long(v)) => format!("{v}L"),
        KExpr::Lit(Scalar::Double(v)) => format!("{v:?}"),
        KExpr::Lit(Scalar::Bool(v)) => v.to_string(),
        KExpr::GlobalId => "getGlobalId()".to_string(),
        KExpr::Reg(r) => format!("r{r}"),
        KExpr::Arg(s) => format!("arg{s}"),
        KExpr::Load { buf, index, .. } => {
            format!("{}[{}]", plan.buffers[*buf].name, kexpr_str(index, plan))
        }
        KExpr::Len { buf, dim } => format!("len({}, {dim})", plan.buffers[*buf].name),
        KExpr::Unary { op, expr } => {
            let inner = kexpr_str(expr, plan);
            match op {
                UnOp::Neg => format!("-({inner})"),
                UnOp::Not => format!("!({inner})"),
            }
        }
        KExpr::Binary { op, lhs, rhs } => format!(
            "{} {} {}",
            wrap(lhs, plan),
            op.symbol(),
            wrap(rhs, plan)
        ),
        KExpr::Math { func, args } => format!(
            "Math.{}({})",
            func.name(),
            args.iter().map(|a| kexpr_str(a, plan)).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn wrap(e: &KExpr, plan: &GpuPlan) -> String {
    match e {
        KExpr::Binary { .. } => format!("({})", kexpr_str(e, plan)),
        _ => kexpr_str(e, plan),
    }
}

/// Rewrite a kernel's buffer ids through `map`.
pub fn rebind_kernel(k: &Kernel, map: &impl Fn(usize) -> usize) -> Kernel {
    fn expr(e: &KExpr, map: &impl Fn(usize) -> usize) -> KExpr {
        match e {
            KExpr::Load { buf, index, name } => KExpr::Load {
                buf: map(*buf),
                index: Box::new(expr(index, map)),
                name: name.clone(),
            },
            KExpr::Len { buf, dim } => KExpr::Len { buf: map(*buf), dim: *dim },
            KExpr::Unary { op, expr: e } => KExpr::Unary { op: *op, expr: Box::new(expr(e, map)) },
            KExpr::Binary { op, lhs, rhs } => KExpr::Binary {
                op: *op,
                lhs: Box::new(expr(lhs, map)),
                rhs: Box::new(expr(rhs, map)),
            },
            KExpr::Math { func, args } => KExpr::Math {
                func: *func,
                args: args.iter().map(|a| expr(a, map)).collect(),
            },
            other => other.clone(),
        }
    }
    fn stmts(list: &[KStmt], map: &impl Fn(usize) -> usize) -> Vec<KStmt> {
        list.iter()
            .map(|s| match s {
                KStmt::Let { reg, expr: e } => KStmt::Let { reg: *reg, expr: expr(e, map) },
                KStmt::Assign { reg, expr: e } => KStmt::Assign { reg: *reg, expr: expr(e, map) },
                KStmt::Store { buf, index, value, name } => KStmt::Store {
                    buf: map(*buf),
                    index: expr(index, map),
                    value: expr(value, map),
                    name: name.clone(),
                },
                KStmt::If { cond, then, els } => KStmt::If {
                    cond: expr(cond, map),
                    then: stmts(then, map),
                    els: stmts(els, map),
                },
                KStmt::For { reg, lo, hi, body } => KStmt::For {
                    reg: *reg,
                    lo: expr(lo, map),
                    hi: expr(hi, map),
                    body: stmts(body, map),
                },
            })
            .collect()
    }
    Kernel {
        id: k.id,
        name: k.name.clone(),
        size: k.size.clone(),
        n_regs: k.n_regs,
        body: match &k.body {
            KernelBody::Compute(list) => KernelBody::Compute(stmts(list, map)),
            KernelBody::GroupReduce { op, setup, guard, contrib, partials } => {
                KernelBody::GroupReduce {
                    op: *op,
                    setup: stmts(setup, map),
                    guard: expr(guard, map),
                    contrib: expr(contrib, map),
                    partials: map(*partials),
                }
            }
        },
    }
}
