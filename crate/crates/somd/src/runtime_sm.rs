//! Worker-pool execution of shared-memory plans.
//!
//! One task per method instance (MI), executed by a pool of workers. Two
//! phasers coordinate: `fence` (one party per MI) implements sync points
//! and intermediate reductions, `completed` (parties = MIs + master) sig-
//! nals termination. MI-private state is confined to its task; the only
//! cross-MI structures are the phasers, the staging/broadcast cells, the
//! rank-indexed results vector and the canonical arrays behind windowed
//! partitions.
//!
//! An invocation is synchronous: the caller blocks until the reduction of
//! the results vector produces the method's value.

use crate::ast::{ReduceSpec, Type};
use crate::diag::Span;
use crate::eval::{exec_method, CallHooks, Frame, RtError};
use crate::interp;
use crate::partition::{
    apply_reduction, check_partition_contract, index_partition, widen, Assembly, IndexRange,
    ReduceCtx, StrategyRegistry,
};
use crate::plan_sm::{range_indices_for_rank, ExecutionPlanSM};
use crate::validate::ValidatedProgram;
use crate::value::{ArrayData, Cells, DistArray, DistStorage, Value};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Counting barrier with reusable phases, after the
/// `java.util.concurrent.Phaser` subset the generated code relies on.
pub struct Phaser {
    parties: usize,
    state: Mutex<PhaserState>,
    cv: Condvar,
}

struct PhaserState {
    arrived: usize,
    phase: u64,
    poisoned: Option<String>,
}

#[derive(Clone, Debug)]
pub struct PhaserSnapshot {
    pub parties: usize,
    pub arrived: usize,
    pub phase: u64,
}

impl Phaser {
    pub fn new(parties: usize) -> Phaser {
        Phaser {
            parties,
            state: Mutex::new(PhaserState { arrived: 0, phase: 0, poisoned: None }),
            cv: Condvar::new(),
        }
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    /// Register arrival without waiting for the phase to complete.
    pub fn advance(&self) {
        let mut st = self.state.lock().unwrap();
        st.arrived += 1;
        if st.arrived >= self.parties {
            st.arrived = 0;
            st.phase += 1;
            self.cv.notify_all();
        }
    }

    /// Arrive and block until every party of the current phase has arrived.
    pub fn advance_and_wait(&self, timeout: Option<Duration>) -> Result<(), RtError> {
        let mut st = self.state.lock().unwrap();
        if let Some(msg) = &st.poisoned {
            return Err(RtError::plain(msg.clone()));
        }
        let my_phase = st.phase;
        st.arrived += 1;
        if st.arrived >= self.parties {
            st.arrived = 0;
            st.phase += 1;
            self.cv.notify_all();
            return Ok(());
        }
        loop {
            st = match timeout {
                Some(t) => {
                    let (guard, wait) = self.cv.wait_timeout(st, t).unwrap();
                    if wait.timed_out() && guard.phase == my_phase && guard.poisoned.is_none() {
                        let snap = PhaserSnapshot {
                            parties: self.parties,
                            arrived: guard.arrived,
                            phase: guard.phase,
                        };
                        return Err(RtError::plain(format!(
                            "watchdog: phaser stalled at phase {} with {}/{} arrivals; deadlock suspected",
                            snap.phase, snap.arrived, snap.parties
                        )));
                    }
                    guard
                }
                None => self.cv.wait(st).unwrap(),
            };
            if let Some(msg) = &st.poisoned {
                return Err(RtError::plain(msg.clone()));
            }
            if st.phase != my_phase {
                return Ok(());
            }
        }
    }

    /// Wake every waiter with an error; used when an instance faults.
    pub fn poison(&self, msg: &str) {
        let mut st = self.state.lock().unwrap();
        if st.poisoned.is_none() {
            st.poisoned = Some(msg.to_string());
        }
        self.cv.notify_all();
    }

    pub fn snapshot(&self) -> PhaserSnapshot {
        let st = self.state.lock().unwrap();
        PhaserSnapshot { parties: self.parties, arrived: st.arrived, phase: st.phase }
    }
}

#[derive(Clone, Debug)]
pub struct ExecConfigSM {
    /// Worker threads; tasks queue when instances outnumber workers.
    pub pool_size: usize,
    /// Per-invocation stall limit on every phaser wait.
    pub watchdog: Option<Duration>,
    /// Randomized scheduling jitter for stress runs.
    pub stress_seed: Option<u64>,
}

impl Default for ExecConfigSM {
    fn default() -> Self {
        ExecConfigSM {
            pool_size: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            watchdog: Some(Duration::from_secs(30)),
            stress_seed: None,
        }
    }
}

enum Canonical {
    /// Written value: master-owned storage the windows publish into.
    Shared(Mutex<ArrayData>),
    /// Read-only value: aliased by every instance, copy-free.
    Frozen(std::sync::Arc<ArrayData>),
}

impl Canonical {
    fn dims(&self) -> [usize; 2] {
        match self {
            Canonical::Shared(m) => m.lock().unwrap().dims,
            Canonical::Frozen(a) => a.dims,
        }
    }

}

struct MiShared<'a> {
    vp: &'a ValidatedProgram,
    plan: &'a ExecutionPlanSM,
    registry: &'a StrategyRegistry,
    cfg: &'a ExecConfigSM,
    fence: Phaser,
    completed: Phaser,
    canonical: Vec<Canonical>,
    /// Per value, per dimension: the slave index ranges.
    partitions: Vec<[Vec<IndexRange>; 2]>,
    staging: Mutex<Vec<Option<Value>>>,
    broadcast: Mutex<Option<Value>>,
    results: Mutex<Vec<Option<Value>>>,
    error: Mutex<Option<RtError>>,
}

impl MiShared<'_> {
    fn fail(&self, e: RtError) {
        let mut slot = self.error.lock().unwrap();
        if slot.is_none() {
            *slot = Some(e);
        }
        drop(slot);
        self.fence.poison("aborted: a method instance faulted");
        self.completed.poison("aborted: a method instance faulted");
    }
}

/// Execute a lowered plan over a worker pool and return the reduced value.
pub fn execute_sm(
    vp: &ValidatedProgram,
    plan: &ExecutionPlanSM,
    args: &[Value],
    registry: &StrategyRegistry,
    cfg: &ExecConfigSM,
) -> Result<Value, RtError> {
    let decl = &vp.program.methods[plan.method_index];
    let info = &vp.methods[plan.method_index];
    if args.len() != decl.params.len() {
        return Err(RtError::plain(format!(
            "`{}` takes {} arguments, got {}",
            plan.method,
            decl.params.len(),
            args.len()
        )));
    }
    if cfg.pool_size == 0 {
        return Err(RtError::plain("pool size must be at least 1"));
    }

    // master frame: parameters plus canonical arrays for distributed locals
    let mut master = Frame::for_method(info);
    for (i, (arg, param)) in args.iter().zip(&decl.params).enumerate() {
        master.set(i as u32, widen_arg(arg, param.ty, &param.name)?);
    }

    let mut canonical = Vec::with_capacity(plan.values.len());
    for v in &plan.values {
        let base = if v.is_param {
            match &master.slots[v.slot as usize] {
                Some(Value::Array(a)) => a.as_ref().clone(),
                _ => return Err(RtError::plain(format!("argument `{}` must be an array", v.name))),
            }
        } else {
            let init = v.init.as_ref().expect("validated dist local has an initializer");
            match eval_master(init, info, &mut master)? {
                Value::Array(a) => a.as_ref().clone(),
                _ => return Err(RtError::plain(format!("`{}` initializer must build an array", v.name))),
            }
        };
        if !v.is_param {
            master.set(v.slot, Value::array(base.clone()));
        }
        canonical.push(if v.materialize {
            Canonical::Shared(Mutex::new(base))
        } else {
            Canonical::Frozen(std::sync::Arc::new(base))
        });
    }

    // partition every distributed dimension
    let mut partitions: Vec<[Vec<IndexRange>; 2]> = plan
        .values
        .iter()
        .zip(&canonical)
        .map(|(v, canon)| {
            let dims = canon.dims();
            let mut per = [Vec::new(), Vec::new()];
            for (d, ranges) in per.iter_mut().enumerate() {
                let len = if d == 0 { dims[0] } else { dims[1] };
                *ranges = vec![IndexRange { lo: 0, hi: len, view_lo: 0, view_hi: len }];
            }
            let _ = &v.name;
            per
        })
        .collect();
    for pc in &plan.partition_calls {
        let length = eval_master_index(&pc.length, info, &mut master)?;
        let ranges = match &pc.strategy {
            crate::ast::DistStrategy::Block => index_partition(length, pc.count, pc.view),
            crate::ast::DistStrategy::User { name, args: sargs } => {
                let strategy = registry
                    .strategy(name)
                    .ok_or_else(|| RtError::plain(format!("unregistered strategy `{name}`")))?;
                let mut argv = Vec::new();
                for a in sargs {
                    argv.push(eval_master(a, info, &mut master)?);
                }
                strategy
                    .partition(length, pc.count, &argv)
                    .map_err(|e| RtError::plain(format!("strategy `{name}`: {e}")))?
            }
        };
        check_partition_contract(&ranges, length, pc.count)
            .map_err(|e| RtError::plain(format!("partition of `{}` dim {}: {e}", pc.name, pc.dim)))?;
        partitions[pc.value_index][(pc.dim - 1) as usize] = ranges;
    }

    let n = plan.n_slaves;
    let shared = MiShared {
        vp,
        plan,
        registry,
        cfg,
        fence: Phaser::new(n),
        completed: Phaser::new(n + 1),
        canonical,
        partitions,
        staging: Mutex::new(vec![None; n]),
        broadcast: Mutex::new(None),
        results: Mutex::new(vec![None; n]),
        error: Mutex::new(None),
    };

    // the master materializes every instance's view before spawning; a
    // window snapshot taken after another instance published would leak
    // in-flight values into the "initial" halo
    let mut views: Vec<Vec<DistArray>> = Vec::with_capacity(n);
    for rank in 0..n {
        views.push(
            (0..plan.values.len())
                .map(|vi| make_view(&shared, vi, rank))
                .collect(),
        );
    }
    let views_by_rank: Vec<Mutex<Option<Vec<DistArray>>>> =
        views.into_iter().map(|v| Mutex::new(Some(v))).collect();

    let mut order: VecDeque<usize> = (0..n).collect();
    if let Some(seed) = cfg.stress_seed {
        let mut rng = SmallRng::seed_from_u64(seed);
        let mut v: Vec<usize> = order.into_iter().collect();
        for i in (1..v.len()).rev() {
            v.swap(i, rng.gen_range(0..=i));
        }
        order = v.into();
    }
    let queue = Mutex::new(order);

    std::thread::scope(|scope| {
        for _ in 0..cfg.pool_size.min(n.max(1)) {
            scope.spawn(|| loop {
                let rank = {
                    let mut q = queue.lock().unwrap();
                    match q.pop_front() {
                        Some(r) => r,
                        None => break,
                    }
                };
                let view = views_by_rank[rank].lock().unwrap().take().expect("view taken once");
                let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                    run_mi(&shared, args, rank, view)
                }));
                match run {
                    Ok(Ok(())) => {}
                    Ok(Err(e)) => shared.fail(e),
                    Err(_) => shared.fail(RtError::plain(format!("instance {rank} panicked"))),
                }
            });
        }
        // master blocks on `completed` until every instance has arrived
        if let Err(e) = shared.completed.advance_and_wait(cfg.watchdog) {
            shared.fail(e);
        }
    });

    if let Some(e) = shared.error.into_inner().unwrap() {
        return Err(e);
    }

    let partials: Vec<Value> = shared
        .results
        .into_inner()
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(r, v)| v.ok_or_else(|| RtError::plain(format!("instance {r} produced no result"))))
        .collect::<Result<_, _>>()?;

    let assembly = assembly_geometry(plan, decl.ret, &shared.partitions, &shared.canonical);
    let self_apply = |arr: Value| -> Result<Value, String> {
        interp::interpret(vp, &plan.method, &[arr]).map_err(|e| e.to_string())
    };
    let ctx = ReduceCtx {
        registry,
        self_apply: Some(&self_apply),
        assembly,
    };
    apply_reduction(&plan.reduce, partials, &ctx)
        .map_err(|e| RtError::plain(format!("reduction failed: {e}")))
}

fn widen_arg(arg: &Value, ty: Type, name: &str) -> Result<Value, RtError> {
    match (arg, ty) {
        (Value::Scalar(s), Type::Scalar(t)) => s.widen_to(t).map(Value::Scalar).ok_or_else(|| {
            RtError::plain(format!("argument `{name}`: cannot pass {} as {}", s.ty().keyword(), t.keyword()))
        }),
        (v, _) => Ok(v.clone()),
    }
}

struct NoCalls;

impl CallHooks for NoCalls {
    fn call(&mut self, name: &str, _args: Vec<Value>, span: Span) -> Result<Value, RtError> {
        Err(RtError::new(format!("call to `{name}` is not master-computable"), span))
    }
}

fn eval_master(
    e: &crate::ast::Expr,
    info: &crate::validate::MethodInfo,
    master: &mut Frame,
) -> Result<Value, RtError> {
    crate::eval::eval_expr(e, info, master, &mut NoCalls)
}

fn eval_master_index(
    e: &crate::ast::Expr,
    info: &crate::validate::MethodInfo,
    master: &mut Frame,
) -> Result<usize, RtError> {
    match eval_master(e, info, master)? {
        Value::Scalar(s) => {
            let v = s.as_index().ok_or_else(|| RtError::plain("length must be integral"))?;
            if v < 0 {
                return Err(RtError::plain(format!("negative partition length {v}")));
            }
            Ok(v as usize)
        }
        _ => Err(RtError::plain("length must be a scalar")),
    }
}

fn assembly_geometry(
    plan: &ExecutionPlanSM,
    ret: Type,
    partitions: &[[Vec<IndexRange>; 2]],
    canonical: &[Canonical],
) -> Option<Assembly> {
    if !ret.is_array() {
        return None;
    }
    let pick = plan
        .return_value_slot
        .and_then(|slot| plan.values.iter().position(|v| v.slot == slot))
        .or_else(|| {
            plan.values
                .iter()
                .position(|v| v.ty.dims() == ret.dims())
        })?;
    let base = match &canonical[pick] {
        Canonical::Shared(m) => m.lock().unwrap().clone(),
        Canonical::Frozen(a) => a.as_ref().clone(),
    };
    Some(Assembly::Blocks {
        base,
        row_ranges: partitions[pick][0].clone(),
        col_ranges: partitions[pick][1].clone(),
    })
}

// --- per-instance execution -------------------------------------------------

fn run_mi(
    shared: &MiShared,
    args: &[Value],
    rank: usize,
    views: Vec<DistArray>,
) -> Result<(), RtError> {
    let decl = &shared.vp.program.methods[shared.plan.method_index];
    let info = &shared.vp.methods[shared.plan.method_index];

    let mut hooks = MiHooks {
        shared,
        rank,
        rng: shared.cfg.stress_seed.map(|s| SmallRng::seed_from_u64(s ^ ((rank as u64) << 17))),
        depth: 0,
    };
    hooks.jitter();

    let mut frame = Frame::for_method(info);
    let mut views: Vec<Option<DistArray>> = views.into_iter().map(Some).collect();
    for (i, (arg, param)) in args.iter().zip(&decl.params).enumerate() {
        let slot = i as u32;
        match shared.plan.values.iter().position(|v| v.slot == slot) {
            Some(vi) => {
                let view = views[vi].take().expect("param view");
                frame.set(slot, Value::Dist(std::sync::Arc::new(view)));
            }
            None => frame.set(slot, widen_arg(arg, param.ty, &param.name)?),
        }
    }
    for (vi, v) in shared.plan.values.iter().enumerate() {
        if !v.is_param {
            let view = views[vi].take().expect("local view");
            frame.set(v.slot, Value::Dist(std::sync::Arc::new(view)));
        }
    }

    let result = exec_method(decl, info, &mut frame, &mut hooks)?;
    let result = match result {
        Value::Dist(d) => Value::array(d.owned_data()),
        other => other,
    };

    {
        let mut cells = shared.results.lock().unwrap();
        if cells[rank].is_some() {
            return Err(RtError::plain(format!("results[{rank}] written twice")));
        }
        cells[rank] = Some(result);
    }
    shared.completed.advance();
    Ok(())
}

/// Build rank's view of one distributed value: owned ranges per dimension,
/// halo window, and either aliased or window storage.
fn make_view(shared: &MiShared, value_index: usize, rank: usize) -> DistArray {
    let v = &shared.plan.values[value_index];
    let canon = &shared.canonical[value_index];
    let dims = canon.dims();
    let idx = range_indices_for_rank(shared.plan, v.counts, rank);

    let mut owned_lo = [0usize; 2];
    let mut owned_hi = [dims[0], if v.ndim == 1 { 1 } else { dims[1] }];
    let mut view_lo = owned_lo;
    let mut view_hi = owned_hi;
    let mut first = [true; 2];
    let mut last = [true; 2];
    for d in 0..(v.ndim as usize) {
        let ranges = &shared.partitions[value_index][d];
        let r = ranges[idx[d].min(ranges.len() - 1)];
        let dim_len = if d == 0 { dims[0] } else { dims[1] };
        let w = widen(r, v.views[d], dim_len);
        owned_lo[d] = w.lo;
        owned_hi[d] = w.hi;
        view_lo[d] = w.view_lo;
        view_hi[d] = w.view_hi;
        first[d] = idx[d] == 0;
        last[d] = idx[d] + 1 == ranges.len();
    }
    if v.ndim == 1 {
        owned_lo[1] = 0;
        owned_hi[1] = 1;
        view_lo[1] = 0;
        view_hi[1] = 1;
    }

    let storage = match canon {
        Canonical::Frozen(a) => DistStorage::Alias(a.clone()),
        Canonical::Shared(m) => {
            let canon = m.lock().unwrap();
            DistStorage::Window(copy_region(&canon, view_lo, view_hi))
        }
    };
    DistArray {
        ndim: v.ndim,
        full_dims: [dims[0], if v.ndim == 1 { 1 } else { dims[1] }],
        owned_lo,
        owned_hi,
        view_lo,
        view_hi,
        first,
        last,
        storage,
    }
}

fn copy_region(src: &ArrayData, lo: [usize; 2], hi: [usize; 2]) -> Cells {
    let cols = src.dims[1].max(1);
    let w = hi[1] - lo[1];
    let mut out = Cells::zeros(src.elem_type(), (hi[0] - lo[0]) * w);
    for (bi, i) in (lo[0]..hi[0]).enumerate() {
        out.copy_range(bi * w, &src.cells, i * cols + lo[1]..i * cols + hi[1]);
    }
    out
}

struct MiHooks<'a, 'b> {
    shared: &'a MiShared<'b>,
    rank: usize,
    rng: Option<SmallRng>,
    depth: u32,
}

impl MiHooks<'_, '_> {
    fn jitter(&mut self) {
        if let Some(rng) = &mut self.rng {
            if rng.gen_bool(0.5) {
                std::thread::sleep(Duration::from_micros(rng.gen_range(0..120)));
            } else {
                std::thread::yield_now();
            }
        }
    }

    fn fence_wait(&mut self) -> Result<(), RtError> {
        self.jitter();
        self.shared.fence.advance_and_wait(self.shared.cfg.watchdog)
    }

    /// Two-phase intermediate reduction: stage the local operand, fence,
    /// rank 0 combines in rank order into the broadcast cell, fence, read.
    fn intermediate_reduce(&mut self, spec: &ReduceSpec, local: Value) -> Result<Value, RtError> {
        self.shared.staging.lock().unwrap()[self.rank] = Some(local);
        self.fence_wait()?;
        if self.rank == 0 {
            let staged: Vec<Value> = {
                let mut cells = self.shared.staging.lock().unwrap();
                cells.iter_mut().map(|c| c.take().expect("all instances staged")).collect()
            };
            let ctx = ReduceCtx { registry: self.shared.registry, self_apply: None, assembly: None };
            let combined = apply_reduction(spec, staged, &ctx)
                .map_err(|e| RtError::plain(format!("intermediate reduction failed: {e}")))?;
            *self.shared.broadcast.lock().unwrap() = Some(combined);
        }
        self.fence_wait()?;
        let v = self
            .shared
            .broadcast
            .lock()
            .unwrap()
            .clone()
            .ok_or_else(|| RtError::plain("broadcast cell empty after reduction"))?;
        Ok(v)
    }

    /// Publish owned window regions into the canonical arrays.
    fn publish(&self, frame: &Frame, only_slot: Option<u32>) {
        for (vi, v) in self.shared.plan.values.iter().enumerate() {
            if !v.materialize || only_slot.is_some_and(|s| s != v.slot) {
                continue;
            }
            let Some(Value::Dist(d)) = &frame.slots[v.slot as usize] else { continue };
            let Canonical::Shared(m) = &self.shared.canonical[vi] else { continue };
            let DistStorage::Window(cells) = &d.storage else { continue };
            let mut canon = m.lock().unwrap();
            let cols = canon.dims[1].max(1);
            let w = d.view_hi[1] - d.view_lo[1];
            for i in d.owned_lo[0]..d.owned_hi[0] {
                let src_start = (i - d.view_lo[0]) * w + (d.owned_lo[1] - d.view_lo[1]);
                canon.cells.copy_range(
                    i * cols + d.owned_lo[1],
                    cells,
                    src_start..src_start + (d.owned_hi[1] - d.owned_lo[1]),
                );
            }
        }
    }

    /// Refresh halo cells (visible window minus owned range) from the
    /// canonical arrays.
    fn refresh(&self, frame: &mut Frame, only_slot: Option<u32>) {
        for (vi, v) in self.shared.plan.values.iter().enumerate() {
            if !v.materialize || only_slot.is_some_and(|s| s != v.slot) {
                continue;
            }
            let Some(Value::Dist(d)) = &mut frame.slots[v.slot as usize] else { continue };
            let Canonical::Shared(m) = &self.shared.canonical[vi] else { continue };
            let canon = m.lock().unwrap();
            let cols = canon.dims[1].max(1);
            let dv = std::sync::Arc::make_mut(d);
            let w = dv.view_hi[1] - dv.view_lo[1];
            let (vl, vh, ol, oh) = (dv.view_lo, dv.view_hi, dv.owned_lo, dv.owned_hi);
            let DistStorage::Window(cells) = &mut dv.storage else { continue };
            for i in vl[0]..vh[0] {
                let dst_row = (i - vl[0]) * w;
                if i < ol[0] || i >= oh[0] {
                    // halo row: refresh the full visible width
                    cells.copy_range(dst_row, &canon.cells, i * cols + vl[1]..i * cols + vh[1]);
                } else {
                    // owned row: refresh the side halo columns only
                    if vl[1] < ol[1] {
                        cells.copy_range(dst_row, &canon.cells, i * cols + vl[1]..i * cols + ol[1]);
                    }
                    if oh[1] < vh[1] {
                        cells.copy_range(
                            dst_row + (oh[1] - vl[1]),
                            &canon.cells,
                            i * cols + oh[1]..i * cols + vh[1],
                        );
                    }
                }
            }
        }
    }
}

impl CallHooks for MiHooks<'_, '_> {
    fn call(&mut self, name: &str, args: Vec<Value>, span: Span) -> Result<Value, RtError> {
        let Some(idx) = self.shared.vp.method_index(name) else {
            return Err(RtError::new(format!("unknown method `{name}`"), span));
        };
        let callee = &self.shared.vp.program.methods[idx];
        let is_aux = callee.reduce.is_some() && callee.params.iter().all(|p| p.dist.is_none());
        self.depth += 1;
        if self.depth > 64 {
            self.depth -= 1;
            return Err(RtError::new("call depth exceeded", span));
        }
        // run the callee locally; loops over distributed arguments clamp to
        // this instance's ranges because the views travel with the values
        let local = interp::call_seq(self.shared.vp, name, args, self);
        self.depth -= 1;
        let local = local?;
        if is_aux {
            let spec = callee.reduce.clone().unwrap();
            self.intermediate_reduce(&spec, local)
        } else {
            Ok(local)
        }
    }

    fn sync_point(
        &mut self,
        reduce: Option<&ReduceSpec>,
        target: Option<u32>,
        frame: &mut Frame,
        span: Span,
    ) -> Result<(), RtError> {
        let array_target = target.filter(|s| {
            self.shared.plan.values.iter().any(|v| v.slot == *s)
        });
        let scalar_reduce = reduce.map(|r| {
            let slot = target.expect("validated sync reduction has a target");
            (r.clone(), slot)
        });

        // phase one: stage the reduction operand and publish owned regions
        if let Some((_, slot)) = &scalar_reduce {
            let v = frame.slots[*slot as usize]
                .clone()
                .ok_or_else(|| RtError::new("sync target unset", span))?;
            self.shared.staging.lock().unwrap()[self.rank] = Some(v);
        }
        self.publish(frame, array_target);
        self.fence_wait()?;

        // rank 0 combines while everyone else refreshes halos
        if let Some((spec, _)) = &scalar_reduce {
            if self.rank == 0 {
                let staged: Vec<Value> = {
                    let mut cells = self.shared.staging.lock().unwrap();
                    cells.iter_mut().map(|c| c.take().expect("staged")).collect()
                };
                let ctx =
                    ReduceCtx { registry: self.shared.registry, self_apply: None, assembly: None };
                let combined = apply_reduction(spec, staged, &ctx)
                    .map_err(|e| RtError::new(format!("sync reduction failed: {e}"), span))?;
                *self.shared.broadcast.lock().unwrap() = Some(combined);
            }
        }
        self.refresh(frame, array_target);
        self.fence_wait()?;

        if let Some((_, slot)) = scalar_reduce {
            let v = self
                .shared
                .broadcast
                .lock()
                .unwrap()
                .clone()
                .ok_or_else(|| RtError::new("broadcast cell empty after sync reduction", span))?;
            let declared = self.shared.vp.methods[self.shared.plan.method_index].slot_types
                [slot as usize];
            frame.set(slot, crate::eval::coerce_slot(v, declared, span)?);
        }
        Ok(())
    }

    fn elide_edge_clamps(&self) -> bool {
        self.shared.plan.specialize_edge_ranks
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::plan_sm::lower_master_sm;
    use crate::validate::validate;
    use crate::value::{ArrayData, Scalar};

    fn check(src: &str) -> ValidatedProgram {
        validate(parse(src).expect("parse"), &StrategyRegistry::with_builtins()).expect("validate")
    }

    fn run(
        vp: &ValidatedProgram,
        method: &str,
        args: &[Value],
        n_slaves: usize,
    ) -> Result<Value, RtError> {
        let plan = lower_master_sm(vp, method, n_slaves).expect("lower");
        let reg = StrategyRegistry::with_builtins();
        let cfg = ExecConfigSM { pool_size: n_slaves.max(1), ..Default::default() };
        execute_sm(vp, &plan, args, &reg, &cfg)
    }

    const VECTORADD: &str = include_str!("../corpus/vectoradd.somd");
    const SUM: &str = include_str!("../corpus/sum.somd");
    const NORMALIZE: &str = include_str!("../corpus/normalize.somd");
    const NORM: &str = include_str!("../corpus/norm.somd");

    #[test]
    fn phaser_counts_parties() {
        let p = Phaser::new(2);
        assert_eq!(p.parties(), 2);
        p.advance();
        let snap = p.snapshot();
        assert_eq!((snap.arrived, snap.phase), (1, 0));
        p.advance();
        let snap = p.snapshot();
        assert_eq!((snap.arrived, snap.phase), (0, 1));
    }

    #[test]
    fn phaser_watchdog_reports_stall() {
        let p = Phaser::new(2);
        let err = p.advance_and_wait(Some(Duration::from_millis(50))).unwrap_err();
        assert!(err.message.contains("deadlock"), "{err}");
    }

    #[test]
    fn vectoradd_two_slaves() {
        let vp = check(VECTORADD);
        let out = run(
            &vp,
            "vectorAdd",
            &[
                Value::array(ArrayData::from_i32(vec![1, 2, 3, 4])),
                Value::array(ArrayData::from_i32(vec![10, 20, 30, 40])),
            ],
            2,
        )
        .unwrap();
        assert_eq!(out, Value::array(ArrayData::from_i32(vec![11, 22, 33, 44])));
    }

    #[test]
    fn sum_four_slaves_is_5050() {
        let vp = check(SUM);
        let out = run(&vp, "sum", &[Value::array(ArrayData::from_i32((1..=100).collect()))], 4)
            .unwrap();
        assert_eq!(out, Value::int(5050));
    }

    #[test]
    fn normalize_two_slaves_matches_example() {
        let vp = check(NORMALIZE);
        let out = run(&vp, "normalize", &[Value::array(ArrayData::from_f64(vec![3.0, 4.0]))], 2)
            .unwrap();
        assert_eq!(out, Value::array(ArrayData::from_f64(vec![0.6, 0.8])));
    }

    #[test]
    fn norm_intermediate_reduction_three_slaves() {
        // a = [1, 2, 2]: sumProd = 9 across instances, norm = 3
        let vp = check(NORM);
        let out = run(&vp, "norm", &[Value::array(ArrayData::from_f64(vec![1.0, 2.0, 2.0]))], 3)
            .unwrap();
        let expect = vec![1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        assert_eq!(out, Value::array(ArrayData::from_f64(expect)));
    }

    #[test]
    fn empty_input_more_slaves_than_elements() {
        let vp = check(SUM);
        let out = run(&vp, "sum", &[Value::array(ArrayData::from_i32(vec![]))], 4).unwrap();
        assert_eq!(out, Value::int(0));
        let vp = check(VECTORADD);
        let out = run(
            &vp,
            "vectorAdd",
            &[
                Value::array(ArrayData::from_i32(vec![])),
                Value::array(ArrayData::from_i32(vec![])),
            ],
            3,
        )
        .unwrap();
        assert_eq!(out, Value::array(ArrayData::from_i32(vec![])));
    }

    #[test]
    fn intermediate_multiply_with_zero_absorbs() {
        let src = "reduce(*)\nlong prod(dist long[] a) {\n long p = 1;\n for (int i = 0; i < a.length; i++) p = p * a[i];\n return p;\n}";
        let vp = check(src);
        let arr = ArrayData { dims: [4, 1], ndim: 1, cells: crate::value::Cells::I64(vec![3, 0, 5, 7]) };
        let out = run(&vp, "prod", &[Value::array(arr)], 3).unwrap();
        assert_eq!(out, Value::Scalar(Scalar::Long(0)));
    }

    #[test]
    fn results_write_once_and_schedule_independent() {
        let vp = check(NORMALIZE);
        let input = Value::array(ArrayData::from_f64(vec![0.5, 1.5, 2.5, 3.5, 4.5]));
        let reference = run(&vp, "normalize", std::slice::from_ref(&input), 4).unwrap();
        for seed in 0..30 {
            let plan = lower_master_sm(&vp, "normalize", 4).unwrap();
            let reg = StrategyRegistry::with_builtins();
            let cfg = ExecConfigSM {
                pool_size: 4,
                stress_seed: Some(seed),
                ..Default::default()
            };
            let out = execute_sm(&vp, &plan, std::slice::from_ref(&input), &reg, &cfg).unwrap();
            assert_eq!(out, reference, "seed {seed} diverged");
        }
    }

    #[test]
    fn specialized_edge_ranks_change_nothing() {
        let vp = check(NORM);
        let input = Value::array(ArrayData::from_f64(vec![0.25, 1.0, 2.25, 4.0, 6.25, 9.0]));
        let mut plan = lower_master_sm(&vp, "norm", 3).unwrap();
        let reg = StrategyRegistry::with_builtins();
        let cfg = ExecConfigSM { pool_size: 3, ..Default::default() };
        let base = execute_sm(&vp, &plan, std::slice::from_ref(&input), &reg, &cfg).unwrap();
        plan.specialize_edge_ranks = true;
        let specialized = execute_sm(&vp, &plan, &[input], &reg, &cfg).unwrap();
        assert_eq!(base, specialized);
    }

    #[test]
    fn listing_style_private_result_array_mismatches_assembly() {
        // the result local lacks `dist`: every instance returns a full-size
        // private array, and the default assembly rejects the total size
        let src = "int[] vectorAdd(dist int[] a, dist int[] b) {\n\
                   int[] c = new int[a.length];\n\
                   for (int i = 0; i < a.length; i++) c[i] = a[i] + b[i];\n\
                   return c;\n}";
        let vp = check(src);
        let err = run(
            &vp,
            "vectorAdd",
            &[
                Value::array(ArrayData::from_i32(vec![1, 2])),
                Value::array(ArrayData::from_i32(vec![3, 4])),
            ],
            2,
        )
        .unwrap_err();
        assert!(err.message.contains("size mismatch"), "{err}");
    }
}
