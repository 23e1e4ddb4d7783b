//! Backend selection and the unified run entry point.
//!
//! A program's entry method may itself be an ordinary sequential method
//! (the driver) whose calls into distributed methods dispatch onto the
//! selected backend; that keeps split-phase algorithms like the
//! factorization driver working unchanged on every target.
//!
//! Configuration rules take the form `Qualifier.method:target`, one per
//! line with `#` comments. The shared-memory version is the default; a
//! rule naming an unavailable target falls back to the default with a
//! warning.

use crate::ast::Type;
use crate::device_sim::{run_gpu, ExecConfigGpu, GpuRun, HazardRecord, TransferLedger};
use crate::diag::Span;
use crate::eval::{CallHooks, RtError};
use crate::interp;
use crate::partition::StrategyRegistry;
use crate::plan_gpu::lower_gpu;
use crate::plan_sm::lower_master_sm;
use crate::runtime_sm::{execute_sm, ExecConfigSM};
use crate::validate::ValidatedProgram;
use crate::value::Value;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Backend {
    Seq,
    Sm,
    GpuSim,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Seq => "seq",
            Backend::Sm => "sm",
            Backend::GpuSim => "gpu-sim",
        }
    }

    pub fn parse(s: &str) -> Option<Backend> {
        Some(match s {
            "seq" => Backend::Seq,
            "sm" => Backend::Sm,
            "gpu-sim" => Backend::GpuSim,
            _ => return None,
        })
    }
}

/// One configuration rule: `Qualifier.method:target`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackendRule {
    pub qualifier: String,
    pub method: String,
    pub target: String,
}

#[derive(Debug, thiserror::Error)]
#[error("rule line {line}: {message}")]
pub struct RuleError {
    pub line: usize,
    pub message: String,
}

pub fn parse_rules(text: &str) -> Result<Vec<BackendRule>, RuleError> {
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, target) = line.split_once(':').ok_or_else(|| RuleError {
            line: i + 1,
            message: "expected `Qualifier.method:target`".to_string(),
        })?;
        let (qualifier, method) = key.trim().split_once('.').ok_or_else(|| RuleError {
            line: i + 1,
            message: "expected a `Qualifier.method` key".to_string(),
        })?;
        let target = target.trim().to_string();
        let known = ["seq", "sm", "gpu-sim", "cluster"];
        if !known.contains(&target.as_str()) {
            return Err(RuleError { line: i + 1, message: format!("unknown target `{target}`") });
        }
        if rules.iter().any(|r: &BackendRule| r.method == method.trim()) {
            return Err(RuleError {
                line: i + 1,
                message: format!("duplicate rule for method `{}`", method.trim()),
            });
        }
        rules.push(BackendRule {
            qualifier: qualifier.trim().to_string(),
            method: method.trim().to_string(),
            target,
        });
    }
    Ok(rules)
}

/// The shared-memory version is the default; a rule selects another
/// target when it is available, and reverts to the default otherwise.
pub fn select_backend(
    rules: &[BackendRule],
    method: &str,
    available: &[Backend],
) -> (Backend, Option<String>) {
    let rule = rules.iter().find(|r| r.method == method);
    match rule {
        None => (Backend::Sm, None),
        Some(r) => match Backend::parse(&r.target) {
            Some(b) if available.contains(&b) => (b, None),
            _ => (
                Backend::Sm,
                Some(format!(
                    "target `{}` for `{}` is unavailable; reverting to the default",
                    r.target, method
                )),
            ),
        },
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub backend: Backend,
    pub n_slaves: usize,
    pub sm: ExecConfigSM,
    pub gpu: ExecConfigGpu,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sm = ExecConfigSM::default();
        RunConfig { backend: Backend::Sm, n_slaves: sm.pool_size, sm, gpu: ExecConfigGpu::default() }
    }
}

/// Aggregated device activity when gpu-sim executed any method.
#[derive(Default, Clone, Debug)]
pub struct DeviceReport {
    pub ledger: TransferLedger,
    pub hazards: Vec<HazardRecord>,
    pub launches: Vec<String>,
}

impl DeviceReport {
    fn absorb(&mut self, run: &GpuRun) {
        self.ledger.records.extend(run.ledger.records.iter().cloned());
        self.hazards.extend(run.hazards.iter().cloned());
        self.launches.extend(run.launches.iter().cloned());
    }

    pub fn launch_count(&self, kernel: &str) -> usize {
        self.launches.iter().filter(|k| k.as_str() == kernel).count()
    }
}

pub struct RunOutcome {
    pub value: Value,
    pub device: Option<DeviceReport>,
}

/// Run `entry` with the chosen backend. Ordinary methods interpret
/// sequentially; distributed methods (and distributed methods they call)
/// execute on the backend.
pub fn run_method(
    vp: &ValidatedProgram,
    registry: &StrategyRegistry,
    entry: &str,
    args: &[Value],
    cfg: &RunConfig,
) -> Result<RunOutcome, RtError> {
    match cfg.backend {
        Backend::Seq => {
            let value = interp::interpret(vp, entry, args)?;
            Ok(RunOutcome { value, device: None })
        }
        Backend::Sm | Backend::GpuSim => {
            let mut hooks = Dispatch { vp, registry, cfg, device: DeviceReport::default() };
            let value = hooks.invoke(entry, args.to_vec())?;
            let device = match cfg.backend {
                Backend::GpuSim => Some(hooks.device),
                _ => None,
            };
            Ok(RunOutcome { value, device })
        }
    }
}

struct Dispatch<'a> {
    vp: &'a ValidatedProgram,
    registry: &'a StrategyRegistry,
    cfg: &'a RunConfig,
    device: DeviceReport,
}

impl Dispatch<'_> {
    fn invoke(&mut self, name: &str, args: Vec<Value>) -> Result<Value, RtError> {
        let idx = self
            .vp
            .method_index(name)
            .ok_or_else(|| RtError::plain(format!("unknown method `{name}`")))?;
        if self.vp.methods[idx].is_somd() {
            match self.cfg.backend {
                Backend::GpuSim => {
                    let plan = lower_gpu(self.vp, name)
                        .map_err(|e| RtError::plain(format!("gpu lowering failed: {e}")))?;
                    let run = run_gpu(self.vp, &plan, &args, &self.cfg.gpu)?;
                    self.device.absorb(&run);
                    Ok(run.value)
                }
                _ => {
                    let plan = lower_master_sm(self.vp, name, self.cfg.n_slaves)
                        .map_err(|e| RtError::plain(format!("lowering failed: {e}")))?;
                    execute_sm(self.vp, &plan, &args, self.registry, &self.cfg.sm)
                }
            }
        } else {
            interp::call_seq(self.vp, name, args, self)
        }
    }
}

impl CallHooks for Dispatch<'_> {
    fn call(&mut self, name: &str, args: Vec<Value>, span: Span) -> Result<Value, RtError> {
        self.invoke(name, args).map_err(|e| match e.span {
            Some(_) => e,
            None => RtError::new(e.message, span),
        })
    }
}

/// Entry points: methods no other method calls, in declaration order.
pub fn entry_candidates(vp: &ValidatedProgram) -> Vec<String> {
    let mut called = std::collections::HashSet::new();
    for m in &vp.program.methods {
        collect_called(&m.body, &mut called);
    }
    vp.program
        .methods
        .iter()
        .filter(|m| !called.contains(&m.name))
        .map(|m| m.name.clone())
        .collect()
}

fn collect_called(b: &crate::ast::Block, out: &mut std::collections::HashSet<String>) {
    use crate::ast::{Expr, Stmt};
    fn expr(e: &Expr, out: &mut std::collections::HashSet<String>) {
        match e {
            Expr::Call { name, args, .. } => {
                out.insert(name.clone());
                args.iter().for_each(|a| expr(a, out));
            }
            Expr::Unary { expr: i, .. } => expr(i, out),
            Expr::Binary { lhs, rhs, .. } => {
                expr(lhs, out);
                expr(rhs, out);
            }
            Expr::MathCall { args, .. } | Expr::NewArray { dims: args, .. } => {
                args.iter().for_each(|a| expr(a, out))
            }
            Expr::Index { indices, .. } => indices.iter().for_each(|a| expr(a, out)),
            _ => {}
        }
    }
    for s in &b.stmts {
        match s {
            Stmt::VarDecl { init: Some(e), .. } => expr(e, out),
            Stmt::Assign { target, value, .. } => {
                target.indices.iter().for_each(|ix| expr(ix, out));
                expr(value, out);
            }
            Stmt::For(f) => {
                if let Some(Stmt::VarDecl { init: Some(e), .. } | Stmt::Assign { value: e, .. }) =
                    &f.init
                {
                    expr(e, out);
                }
                if let Some(c) = &f.cond {
                    expr(c, out);
                }
                collect_called(&f.body, out);
            }
            Stmt::If { cond, then_branch, else_branch, .. } => {
                expr(cond, out);
                collect_called(then_branch, out);
                if let Some(e) = else_branch {
                    collect_called(e, out);
                }
            }
            Stmt::Sync { body, .. } => collect_called(body, out),
            Stmt::Return { value: Some(e), .. } => expr(e, out),
            Stmt::Expr { expr: e, .. } => expr(e, out),
            _ => {}
        }
    }
}

/// Deterministic argument synthesis for running arbitrary source files:
/// arrays get seeded contents of the requested size, integer scalars
/// default to 4 (an iteration-count-like value), doubles to 1.0.
pub fn synthesize_args(decl_params: &[(String, Type)], size: usize, seed: u64) -> Vec<Value> {
    use crate::ast::ScalarType;
    use crate::value::{ArrayData, Cells, Scalar};
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};
    let mut rng = SmallRng::seed_from_u64(seed);
    decl_params
        .iter()
        .map(|(_, ty)| match ty {
            Type::Scalar(ScalarType::Int) => Value::int(4),
            Type::Scalar(ScalarType::Long) => Value::long(4),
            Type::Scalar(ScalarType::Double) => Value::double(1.0),
            Type::Scalar(ScalarType::Bool) => Value::Scalar(Scalar::Bool(true)),
            Type::Array(elem, 1) => {
                let cells = match elem {
                    ScalarType::Int => Cells::I32((0..size).map(|_| rng.gen_range(-100..100)).collect()),
                    ScalarType::Long => Cells::I64((0..size).map(|_| rng.gen_range(0..256)).collect()),
                    ScalarType::Double => Cells::F64((0..size).map(|_| rng.gen_range(0.1..1.0)).collect()),
                    ScalarType::Bool => Cells::Bool(vec![false; size]),
                };
                Value::array(ArrayData { dims: [size, 1], ndim: 1, cells })
            }
            Type::Array(elem, _) => {
                let cols = 8usize.min(size.max(1));
                let rows = size.div_ceil(cols).max(1);
                let n = rows * cols;
                let cells = match elem {
                    ScalarType::Int => Cells::I32((0..n).map(|_| rng.gen_range(0..256)).collect()),
                    ScalarType::Long => Cells::I64((0..n).map(|_| rng.gen_range(0..256)).collect()),
                    ScalarType::Double => Cells::F64((0..n).map(|_| rng.gen_range(0.1..1.0)).collect()),
                    ScalarType::Bool => Cells::Bool(vec![false; n]),
                };
                Value::array(ArrayData { dims: [rows, cols], ndim: 2, cells })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_shared_memory() {
        let (b, warn) = select_backend(&[], "series", &[Backend::Seq, Backend::Sm, Backend::GpuSim]);
        assert_eq!(b, Backend::Sm);
        assert!(warn.is_none());
    }

    #[test]
    fn rule_selects_available_target() {
        let rules = parse_rules("Bench.series:gpu-sim\n").unwrap();
        let (b, warn) = select_backend(&rules, "series", &[Backend::Sm, Backend::GpuSim]);
        assert_eq!(b, Backend::GpuSim);
        assert!(warn.is_none());
    }

    #[test]
    fn unavailable_target_reverts_to_default() {
        let rules = parse_rules("Bench.series:gpu-sim").unwrap();
        let (b, warn) = select_backend(&rules, "series", &[Backend::Sm]);
        assert_eq!(b, Backend::Sm);
        assert!(warn.is_some());
    }

    #[test]
    fn cluster_targets_parse_but_stay_unavailable() {
        let rules = parse_rules("# comment line\nBench.spmv:cluster\n").unwrap();
        let (b, warn) = select_backend(&rules, "spmv", &[Backend::Sm, Backend::GpuSim]);
        assert_eq!(b, Backend::Sm);
        assert!(warn.is_some());
    }

    #[test]
    fn malformed_rule_reports_line() {
        let err = parse_rules("Bench.series:gpu-sim\nnot a rule\n").unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse_rules("Bench.series:warp9").unwrap_err();
        assert_eq!(err.line, 1);
    }
}
