//! Simulator of the GPU execution model, driving [`crate::plan_gpu`] plans.
//!
//! Device buffers live in an addressing space the host reaches only
//! through ledger-recorded transfers. A launch runs a grid of thread
//! groups; group execution order is randomized by seed, and the only
//! global synchronization point is the launch boundary itself — writes
//! become visible to later launches, never reliably within one. A dynamic
//! detector records every cell that one group writes while another group
//! touches it in the same launch; strict mode turns any such record into
//! an error, because group independence is the execution model's
//! precondition.

use crate::ast::{BinOp, MathFunc, PrimOp, ScalarType, Type, UnOp};
use crate::eval::{binary_scalar, math_call, CallHooks, Frame, RtError};
use crate::interp;
use crate::partition::prim_combine;
use crate::plan_gpu::{
    grid_config, rebind_kernel, BufferDecl, BufferSource, FoldKind, GpuPlan, GridConfig, HostStep,
    KExpr, KStmt, Kernel, KernelBody, ResultSpec,
};
use crate::validate::ValidatedProgram;
use crate::value::{ArrayData, Cells, Scalar, Value};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use std::collections::HashMap;

#[derive(Clone, Debug)]
pub struct ExecConfigGpu {
    pub max_group_size: usize,
    pub seed: u64,
    pub strict_hazards: bool,
    /// Round every double operation through single precision, matching
    /// prototype stacks that lack doubles on device.
    pub force_f32: bool,
}

impl Default for ExecConfigGpu {
    fn default() -> Self {
        ExecConfigGpu { max_group_size: 256, seed: 0, strict_hazards: true, force_f32: false }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum Direction {
    HostToDevice,
    DeviceToHost,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransferRecord {
    pub direction: Direction,
    pub buffer: String,
    pub bytes: usize,
    /// Number of launches issued before this transfer.
    pub launch_index: usize,
}

/// Append-only log of host/device copies.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TransferLedger {
    pub records: Vec<TransferRecord>,
}

impl TransferLedger {
    pub fn puts(&self, buffer: &str) -> usize {
        self.count(buffer, Direction::HostToDevice)
    }

    pub fn gets(&self, buffer: &str) -> usize {
        self.count(buffer, Direction::DeviceToHost)
    }

    fn count(&self, buffer: &str, direction: Direction) -> usize {
        self.records
            .iter()
            .filter(|r| r.buffer == buffer && r.direction == direction)
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HazardRecord {
    pub launch: usize,
    pub kernel: String,
    pub buffer: String,
    pub index: usize,
    pub writer_group: usize,
    pub reader_group: usize,
}

struct DeviceBuffer {
    name: String,
    cells: Cells,
    /// Logical dims for two-dimensional flattening and reshape on fetch.
    dims: [usize; 2],
    ndim: u8,
}

/// Simulated device: buffers, launch counter, ledger and hazard log.
pub struct DeviceState {
    buffers: Vec<DeviceBuffer>,
    pub ledger: TransferLedger,
    pub hazards: Vec<HazardRecord>,
    pub launches: Vec<String>,
    pub max_group_size: usize,
}

impl DeviceState {
    pub fn new(max_group_size: usize) -> DeviceState {
        DeviceState {
            buffers: Vec::new(),
            ledger: TransferLedger::default(),
            hazards: Vec::new(),
            launches: Vec::new(),
            max_group_size,
        }
    }

    /// Allocate a zeroed buffer; returns its id.
    pub fn alloc(&mut self, name: &str, elem: ScalarType, dims: [usize; 2], ndim: u8) -> usize {
        let id = self.buffers.len();
        let flat = dims[0] * dims[1].max(1);
        self.buffers.push(DeviceBuffer {
            name: name.to_string(),
            cells: Cells::zeros(elem, flat),
            dims,
            ndim,
        });
        id
    }

    fn put(&mut self, id: usize, data: &ArrayData) {
        let b = &mut self.buffers[id];
        b.cells = data.cells.clone();
        b.dims = data.dims;
        b.ndim = data.ndim;
        self.ledger.records.push(TransferRecord {
            direction: Direction::HostToDevice,
            buffer: b.name.clone(),
            bytes: byte_len(&b.cells),
            launch_index: self.launches.len(),
        });
    }

    fn put_scalar(&mut self, id: usize, v: Scalar) {
        let b = &mut self.buffers[id];
        b.cells.set(0, v.widen_to(b.cells.elem_type()).expect("scalar widens to cell"));
        self.ledger.records.push(TransferRecord {
            direction: Direction::HostToDevice,
            buffer: b.name.clone(),
            bytes: byte_len(&b.cells),
            launch_index: self.launches.len(),
        });
    }

    fn get(&mut self, id: usize) -> ArrayData {
        let b = &self.buffers[id];
        let data = ArrayData { dims: b.dims, ndim: b.ndim, cells: b.cells.clone() };
        let record = TransferRecord {
            direction: Direction::DeviceToHost,
            buffer: b.name.clone(),
            bytes: byte_len(&b.cells),
            launch_index: self.launches.len(),
        };
        self.ledger.records.push(record);
        data
    }
}

fn byte_len(c: &Cells) -> usize {
    let per = match c.elem_type() {
        ScalarType::Int => 4,
        ScalarType::Long => 8,
        ScalarType::Double => 8,
        ScalarType::Bool => 1,
    };
    c.len() * per
}

/// Per-launch access records for the cross-group hazard detector.
#[derive(Default)]
struct AccessMap {
    cells: HashMap<(usize, usize), CellAccess>,
}

#[derive(Default)]
struct CellAccess {
    writers: Vec<usize>,
    readers: Vec<usize>,
}

impl AccessMap {
    fn read(&mut self, buf: usize, idx: usize, group: usize) {
        let cell = self.cells.entry((buf, idx)).or_default();
        if !cell.readers.contains(&group) {
            cell.readers.push(group);
        }
    }

    fn write(&mut self, buf: usize, idx: usize, group: usize) {
        let cell = self.cells.entry((buf, idx)).or_default();
        if !cell.writers.contains(&group) {
            cell.writers.push(group);
        }
    }
}

/// Execute one kernel over the grid. Groups run in seed-randomized order;
/// threads inside a group run to completion (reduction kernels combine
/// their contributions in lockstep tree rounds). Writes become globally
/// visible to later launches. Cross-group hazards are recorded and, in
/// strict mode, fail the launch.
pub fn launch(
    kernel: &Kernel,
    grid: GridConfig,
    state: &mut DeviceState,
    launch_args: &LaunchArgs,
    cfg: &ExecConfigGpu,
) -> Result<(), RtError> {
    let launch_idx = state.launches.len();
    state.launches.push(kernel.name.clone());

    let mut order: Vec<usize> = (0..grid.n_groups).collect();
    let mut rng = SmallRng::seed_from_u64(cfg.seed ^ ((launch_idx as u64) << 24));
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }

    let mut access = AccessMap::default();
    for &group in &order {
        match &kernel.body {
            KernelBody::Compute(stmts) => {
                for t in 0..grid.group_size {
                    let id = group * grid.group_size + t;
                    let mut th = ThreadCx {
                        id,
                        group,
                        regs: vec![Scalar::Int(0); kernel.n_regs],
                        state,
                        access: &mut access,
                        args: launch_args,
                        f32: cfg.force_f32,
                    };
                    th.run_stmts(stmts)?;
                }
            }
            KernelBody::GroupReduce { op, setup, guard, contrib, partials } => {
                // lockstep rounds: contributions gather, then combine as a
                // tree so the result is independent of group scheduling
                let mut contributions: Vec<Scalar> = Vec::new();
                for t in 0..grid.group_size {
                    let id = group * grid.group_size + t;
                    let mut th = ThreadCx {
                        id,
                        group,
                        regs: vec![Scalar::Int(0); kernel.n_regs],
                        state,
                        access: &mut access,
                        args: launch_args,
                        f32: cfg.force_f32,
                    };
                    th.run_stmts(setup)?;
                    if th.eval(guard)?.truthy().unwrap_or(false) {
                        let v = th.eval(contrib)?;
                        contributions.push(v);
                    }
                }
                let partial = tree_fold(*op, &contributions, state.buffers[*partials].cells.elem_type());
                if group < state.buffers[*partials].cells.len() {
                    state.buffers[*partials].cells.set(group, partial);
                    access.write(*partials, group, group);
                }
            }
        }
    }

    // cross-group conflicts: a cell written by one group and touched by another
    let mut new_hazards = Vec::new();
    for ((buf, idx), cell) in &access.cells {
        for &w in &cell.writers {
            for &r in cell.readers.iter().chain(cell.writers.iter()) {
                if r != w {
                    new_hazards.push(HazardRecord {
                        launch: launch_idx,
                        kernel: kernel.name.clone(),
                        buffer: state.buffers[*buf].name.clone(),
                        index: *idx,
                        writer_group: w,
                        reader_group: r,
                    });
                }
            }
        }
    }
    new_hazards.sort_by_key(|h| (h.index, h.writer_group, h.reader_group));
    new_hazards.dedup_by_key(|h| (h.index, h.writer_group, h.reader_group));
    let had = !new_hazards.is_empty();
    state.hazards.extend(new_hazards);
    if had && cfg.strict_hazards {
        let h = state.hazards.last().unwrap();
        return Err(RtError::plain(format!(
            "cross-group hazard in {}: buffer `{}` cell {} written by group {} while group {} touches it",
            h.kernel, h.buffer, h.index, h.writer_group, h.reader_group
        )));
    }
    Ok(())
}

/// Tree combine over the group's contributions; pads odd tails upward.
/// Matches device-style reduction order rather than the host's
/// left-to-right fold, which is why backend equivalence carries a
/// floating-point tolerance.
fn tree_fold(op: PrimOp, contributions: &[Scalar], elem: ScalarType) -> Scalar {
    // subtraction accumulations sum their operands on device; the host
    // fold subtracts each group partial from the initial value
    let combine = if op == PrimOp::Sub { PrimOp::Add } else { op };
    if contributions.is_empty() {
        return match combine {
            PrimOp::Mul => Scalar::Int(1).widen_to(elem).unwrap_or(Scalar::Int(1)),
            _ => Scalar::zero(elem),
        };
    }
    let mut level: Vec<Scalar> = contributions.to_vec();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            next.push(if pair.len() == 2 { prim_combine(combine, pair[0], pair[1]) } else { pair[0] });
        }
        level = next;
    }
    level[0]
}

pub struct LaunchArgs {
    /// Host scalars referenced by `KExpr::Arg`, indexed by host slot.
    pub scalars: Vec<Option<Scalar>>,
}

struct ThreadCx<'a> {
    id: usize,
    group: usize,
    regs: Vec<Scalar>,
    state: &'a mut DeviceState,
    access: &'a mut AccessMap,
    args: &'a LaunchArgs,
    f32: bool,
}

impl ThreadCx<'_> {
    fn run_stmts(&mut self, stmts: &[KStmt]) -> Result<(), RtError> {
        for s in stmts {
            match s {
                KStmt::Let { reg, expr } | KStmt::Assign { reg, expr } => {
                    let v = self.eval(expr)?;
                    self.regs[*reg as usize] = v;
                }
                KStmt::Store { buf, index, value, name } => {
                    let idx = self.index(index, *buf, name)?;
                    let v = self.eval(value)?;
                    let cells = &mut self.state.buffers[*buf].cells;
                    let widened = v.widen_to(cells.elem_type()).ok_or_else(|| {
                        RtError::plain(format!("thread {}: cannot store {:?} into `{name}`", self.id, v.ty()))
                    })?;
                    cells.set(idx, widened);
                    self.access.write(*buf, idx, self.group);
                }
                KStmt::If { cond, then, els } => {
                    if self.eval(cond)?.truthy().unwrap_or(false) {
                        self.run_stmts(then)?;
                    } else {
                        self.run_stmts(els)?;
                    }
                }
                KStmt::For { reg, lo, hi, body } => {
                    let lo = self
                        .eval(lo)?
                        .as_index()
                        .ok_or_else(|| RtError::plain("loop bound must be integral"))?;
                    let hi = self
                        .eval(hi)?
                        .as_index()
                        .ok_or_else(|| RtError::plain("loop bound must be integral"))?;
                    let mut i = lo;
                    while i < hi {
                        self.regs[*reg as usize] = Scalar::Int(i as i32);
                        self.run_stmts(body)?;
                        i += 1;
                    }
                }
            }
        }
        Ok(())
    }

    fn index(&mut self, e: &KExpr, buf: usize, name: &str) -> Result<usize, RtError> {
        let idx = self
            .eval(e)?
            .as_index()
            .ok_or_else(|| RtError::plain(format!("buffer index must be integral for `{name}`")))?;
        let len = self.state.buffers[buf].cells.len();
        if idx < 0 || idx as usize >= len {
            return Err(RtError::plain(format!(
                "global id {}: buffer `{name}` index {idx} out of bounds for {len} cells",
                self.id
            )));
        }
        Ok(idx as usize)
    }

    fn round(&self, s: Scalar) -> Scalar {
        match (self.f32, s) {
            (true, Scalar::Double(v)) => Scalar::Double(v as f32 as f64),
            _ => s,
        }
    }

    fn eval(&mut self, e: &KExpr) -> Result<Scalar, RtError> {
        Ok(match e {
            KExpr::Lit(s) => *s,
            KExpr::GlobalId => Scalar::Int(self.id as i32),
            KExpr::Reg(r) => self.regs[*r as usize],
            KExpr::Arg(slot) => self.args.scalars[*slot as usize]
                .ok_or_else(|| RtError::plain(format!("launch argument {slot} unbound")))?,
            KExpr::Load { buf, index, name } => {
                let idx = self.index(index, *buf, name)?;
                self.access.read(*buf, idx, self.group);
                self.state.buffers[*buf].cells.get(idx)
            }
            KExpr::Len { buf, dim } => {
                Scalar::Int(self.state.buffers[*buf].dims[(*dim - 1) as usize] as i32)
            }
            KExpr::Unary { op, expr } => {
                let v = self.eval(expr)?;
                match op {
                    UnOp::Neg => self.round(match v {
                        Scalar::Int(x) => Scalar::Int(x.wrapping_neg()),
                        Scalar::Long(x) => Scalar::Long(x.wrapping_neg()),
                        Scalar::Double(x) => Scalar::Double(-x),
                        Scalar::Bool(_) => return Err(RtError::plain("cannot negate a boolean")),
                    }),
                    UnOp::Not => match v {
                        Scalar::Bool(b) => Scalar::Bool(!b),
                        _ => return Err(RtError::plain("`!` needs a boolean")),
                    },
                }
            }
            KExpr::Binary { op, lhs, rhs } => {
                // short-circuit logical operators mirror the host language
                match op {
                    BinOp::And => {
                        if !self.eval(lhs)?.truthy().unwrap_or(false) {
                            return Ok(Scalar::Bool(false));
                        }
                        return self.eval(rhs);
                    }
                    BinOp::Or => {
                        if self.eval(lhs)?.truthy().unwrap_or(false) {
                            return Ok(Scalar::Bool(true));
                        }
                        return self.eval(rhs);
                    }
                    _ => {}
                }
                let a = self.eval(lhs)?;
                let b = self.eval(rhs)?;
                self.round(binary_scalar(*op, a, b, crate::diag::Span::new(0, 0))?)
            }
            KExpr::Math { func, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                if self.f32 {
                    self.round(math_call_f32(*func, &vals)?)
                } else {
                    math_call(*func, &vals, crate::diag::Span::new(0, 0))?
                }
            }
        })
    }
}

fn math_call_f32(func: MathFunc, args: &[Scalar]) -> Result<Scalar, RtError> {
    let f = |i: usize| args[i].as_f64() as f32;
    Ok(match func {
        MathFunc::Sqrt => Scalar::Double(f(0).sqrt() as f64),
        MathFunc::Sin => Scalar::Double(f(0).sin() as f64),
        MathFunc::Cos => Scalar::Double(f(0).cos() as f64),
        MathFunc::Exp => Scalar::Double(f(0).exp() as f64),
        MathFunc::Log => Scalar::Double(f(0).ln() as f64),
        MathFunc::Pow => Scalar::Double(f(0).powf(f(1)) as f64),
        MathFunc::Floor => Scalar::Double(f(0).floor() as f64),
        _ => math_call(func, args, crate::diag::Span::new(0, 0))?,
    })
}

/// Outcome of a plan execution: the method value plus the device log.
pub struct GpuRun {
    pub value: Value,
    pub ledger: TransferLedger,
    pub hazards: Vec<HazardRecord>,
    pub launches: Vec<String>,
    pub grids: Vec<(String, GridConfig)>,
}

/// Execute a lowered GPU plan: stage transfers in, issue the launch
/// schedule synchronously, perform host-side folds, fetch results and
/// apply the final reduction.
pub fn run_gpu(
    vp: &ValidatedProgram,
    plan: &GpuPlan,
    args: &[Value],
    cfg: &ExecConfigGpu,
) -> Result<GpuRun, RtError> {
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

    // host frame: method slots plus synthetics
    let mut frame = Frame { slots: vec![None; plan.frame_size] };
    for (i, (arg, param)) in args.iter().zip(&decl.params).enumerate() {
        let v = match (arg, param.ty) {
            (Value::Scalar(s), Type::Scalar(t)) => Value::Scalar(s.widen_to(t).ok_or_else(|| {
                RtError::plain(format!("argument `{}` type mismatch", param.name))
            })?),
            (v, _) => v.clone(),
        };
        frame.set(i as u32, v);
    }

    let mut state = DeviceState::new(cfg.max_group_size);
    let mut host = HostCx {
        vp,
        plan,
        info,
        frame,
        buffer_ids: vec![usize::MAX; plan.buffers.len()],
        grids: Vec::new(),
        cfg,
    };

    // realize buffers: parameters carry their argument contents, locals
    // allocate zeroed, partials size one cell per group, broadcasts one
    for decl_buf in &plan.buffers {
        host.realize_buffer(decl_buf, &mut state, args)?;
    }

    host.run_steps(&plan.steps, &mut state)?;

    let value = match &plan.result {
        ResultSpec::Buffer { buf } => {
            let data = state.get(host.buffer_ids[*buf]);
            if decl.ret.is_array() {
                Value::array(data)
            } else {
                Value::Scalar(data.cells.get(0))
            }
        }
        ResultSpec::HostSlot { slot } => host
            .frame
            .slots
            .get(*slot as usize)
            .cloned()
            .flatten()
            .ok_or_else(|| RtError::plain("result slot unset"))?,
    };
    let value = match (&value, decl.ret) {
        (Value::Scalar(s), Type::Scalar(t)) => Value::Scalar(
            s.widen_to(t).ok_or_else(|| RtError::plain("result type mismatch"))?,
        ),
        _ => value,
    };

    Ok(GpuRun {
        value,
        ledger: state.ledger,
        hazards: state.hazards,
        launches: state.launches,
        grids: host.grids,
    })
}

struct HostCx<'a> {
    vp: &'a ValidatedProgram,
    plan: &'a GpuPlan,
    info: &'a crate::validate::MethodInfo,
    frame: Frame,
    /// Plan buffer id -> device buffer id.
    buffer_ids: Vec<usize>,
    grids: Vec<(String, GridConfig)>,
    cfg: &'a ExecConfigGpu,
}

struct HostNoCalls;

impl CallHooks for HostNoCalls {
    fn call(&mut self, name: &str, _args: Vec<Value>, span: crate::diag::Span) -> Result<Value, RtError> {
        Err(RtError::new(format!("host step cannot call `{name}`"), span))
    }
}

impl HostCx<'_> {
    fn eval_expr(&mut self, e: &crate::ast::Expr) -> Result<Value, RtError> {
        crate::eval::eval_expr(e, self.info, &mut self.frame, &mut HostNoCalls)
    }

    fn eval_usize(&mut self, e: &crate::ast::Expr) -> Result<usize, RtError> {
        match self.eval_expr(e)? {
            Value::Scalar(s) => {
                let v = s.as_index().ok_or_else(|| RtError::plain("expected an integer"))?;
                Ok(v.max(0) as usize)
            }
            _ => Err(RtError::plain("expected a scalar")),
        }
    }

    fn realize_buffer(
        &mut self,
        decl: &BufferDecl,
        state: &mut DeviceState,
        args: &[Value],
    ) -> Result<(), RtError> {
        let id = match &decl.source {
            BufferSource::Param { slot } => {
                let arr = args
                    .get(*slot as usize)
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| RtError::plain(format!("argument `{}` must be an array", decl.name)))?;
                state.alloc(&decl.name, decl.elem, arr.dims, arr.ndim)
            }
            BufferSource::Local { slot, dims } => {
                let mut sizes = [0usize; 2];
                for (k, d) in dims.iter().enumerate() {
                    sizes[k] = self.eval_usize(d)?;
                }
                let ndim = dims.len() as u8;
                let dims = [sizes[0], if ndim == 1 { 1 } else { sizes[1] }];
                // register the logical shape so host expressions can take
                // the local's dimension lengths
                if (*slot as usize) < self.info.slot_types.len() {
                    let placeholder = if ndim == 1 {
                        ArrayData::new_1d(decl.elem, dims[0])
                    } else {
                        ArrayData::new_2d(decl.elem, dims[0], dims[1])
                    };
                    self.frame.set(*slot, Value::array(placeholder));
                }
                state.alloc(&decl.name, decl.elem, dims, ndim)
            }
            BufferSource::Partials { kernel } => {
                let grid = self.grid_for(*kernel, state)?;
                state.alloc(&decl.name, decl.elem, [grid.n_groups, 1], 1)
            }
            BufferSource::Broadcast => state.alloc(&decl.name, decl.elem, [1, 1], 1),
        };
        self.buffer_ids[decl.id] = id;
        Ok(())
    }

    fn grid_for(&mut self, kernel: usize, _state: &DeviceState) -> Result<GridConfig, RtError> {
        let k = &self.plan.kernels[kernel];
        let size = self.eval_kernel_size(k)?;
        Ok(grid_config(size, self.cfg.max_group_size))
    }

    fn eval_kernel_size(&mut self, k: &Kernel) -> Result<usize, RtError> {
        // the size expression references buffer lengths; resolve them from
        // realized device dims via the frame's array slots (parameters) or
        // the buffer table (locals)
        self.eval_usize(&k.size)
    }

    fn run_steps(&mut self, steps: &[HostStep], state: &mut DeviceState) -> Result<(), RtError> {
        for step in steps {
            match step {
                HostStep::Put { buf } => {
                    let BufferSource::Param { slot } = self.plan.buffers[*buf].source else {
                        return Err(RtError::plain("put of a non-parameter buffer"));
                    };
                    let arr = self
                        .frame
                        .slots
                        .get(slot as usize)
                        .cloned()
                        .flatten()
                        .and_then(|v| v.to_plain_array())
                        .ok_or_else(|| RtError::plain("parameter unavailable for transfer"))?;
                    state.put(self.buffer_ids[*buf], &arr);
                }
                HostStep::Alloc { .. } => {
                    // realized up front; allocation is not a transfer
                }
                HostStep::Launch { kernel } => {
                    let k = &self.plan.kernels[*kernel];
                    let grid = self.grid_for(*kernel, state)?;
                    self.grids.push((k.name.clone(), grid));
                    let launch_args = self.collect_args(k)?;
                    let bound = self.bind_kernel(k)?;
                    launch(&bound, grid, state, &launch_args, self.cfg)?;
                }
                HostStep::Repeat { count, var_slot, start, steps } => {
                    let n = self.eval_usize(count)?;
                    let start_val = match start {
                        Some(e) => self.eval_expr(e)?,
                        None => Value::int(0),
                    };
                    for it in 0..n {
                        if let Some(slot) = var_slot {
                            let base = start_val
                                .as_scalar()
                                .and_then(|s| s.as_index())
                                .unwrap_or(0);
                            self.frame.set(*slot, Value::int((base + it as i64) as i32));
                        }
                        self.run_steps(steps, state)?;
                    }
                }
                HostStep::FoldPartials { buf, kind, init_slot, dest_slot } => {
                    let data = state.get(self.buffer_ids[*buf]);
                    match kind {
                        FoldKind::Prim(op) => {
                            let init = self
                                .frame
                                .slots
                                .get(*init_slot as usize)
                                .cloned()
                                .flatten()
                                .and_then(|v| v.as_scalar())
                                .ok_or_else(|| RtError::plain("fold initial value unset"))?;
                            let mut acc = init;
                            for g in 0..data.flat_len() {
                                acc = prim_combine(*op, acc, data.cells.get(g));
                            }
                            self.frame.set(*dest_slot, Value::Scalar(acc));
                        }
                        FoldKind::SelfMethod => {
                            let out = interp::interpret(
                                self.vp,
                                &self.plan.method,
                                &[Value::array(data)],
                            )?;
                            self.frame.set(*dest_slot, out);
                        }
                    }
                }
                HostStep::PutScalar { buf, src_slot } => {
                    let v = self
                        .frame
                        .slots
                        .get(*src_slot as usize)
                        .cloned()
                        .flatten()
                        .and_then(|v| v.as_scalar())
                        .ok_or_else(|| RtError::plain("broadcast source unset"))?;
                    state.put_scalar(self.buffer_ids[*buf], v);
                }
                HostStep::EvalScalar { dest_slot, expr, declared } => {
                    let v = self.eval_expr(expr)?;
                    let v = crate::eval::coerce_slot(v, *declared, crate::diag::Span::new(0, 0))?;
                    self.frame.set(*dest_slot, v);
                }
            }
        }
        Ok(())
    }

    fn collect_args(&mut self, k: &Kernel) -> Result<LaunchArgs, RtError> {
        let mut scalars = vec![None; self.plan.frame_size];
        collect_arg_slots(k, &mut |slot| {
            if let Some(Some(Value::Scalar(s))) = self.frame.slots.get(slot as usize) {
                scalars[slot as usize] = Some(*s);
            }
        });
        Ok(LaunchArgs { scalars })
    }

    /// Rebind plan buffer ids to realized device ids.
    fn bind_kernel(&self, k: &Kernel) -> Result<Kernel, RtError> {
        let map = |buf: usize| self.buffer_ids[buf];
        Ok(rebind_kernel(k, &map))
    }
}

fn collect_arg_slots(k: &Kernel, f: &mut impl FnMut(u32)) {
    fn expr(e: &KExpr, f: &mut impl FnMut(u32)) {
        match e {
            KExpr::Arg(s) => f(*s),
            KExpr::Unary { expr: e, .. } => expr(e, f),
            KExpr::Binary { lhs, rhs, .. } => {
                expr(lhs, f);
                expr(rhs, f);
            }
            KExpr::Math { args, .. } => args.iter().for_each(|a| expr(a, f)),
            KExpr::Load { index, .. } => expr(index, f),
            _ => {}
        }
    }
    fn stmts(list: &[KStmt], f: &mut impl FnMut(u32)) {
        for s in list {
            match s {
                KStmt::Let { expr: e, .. } | KStmt::Assign { expr: e, .. } => expr(e, f),
                KStmt::Store { index, value, .. } => {
                    expr(index, f);
                    expr(value, f);
                }
                KStmt::If { cond, then, els } => {
                    expr(cond, f);
                    stmts(then, f);
                    stmts(els, f);
                }
                KStmt::For { lo, hi, body, .. } => {
                    expr(lo, f);
                    expr(hi, f);
                    stmts(body, f);
                }
            }
        }
    }
    match &k.body {
        KernelBody::Compute(list) => stmts(list, f),
        KernelBody::GroupReduce { setup, guard, contrib, .. } => {
            stmts(setup, f);
            expr(guard, f);
            expr(contrib, f);
        }
    }
}

