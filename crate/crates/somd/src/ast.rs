//! Abstract syntax for the annotated source language.
//!
//! The language is a small Java-like imperative subset: `int`, `long`,
//! `double` and `boolean` scalars, one- and two-dimensional arrays, methods,
//! `for`/`if`/`return`, plus the four parallel qualifiers: `dist` on
//! parameters and locals, a method-level `reduce` clause, `shared` scalars
//! and `sync` blocks.
//!
//! Name resolution happens in [`crate::validate`]: the parser leaves every
//! `slot` at [`NO_SLOT`], and validation assigns frame slots (parameters
//! first, then locals in declaration order) and loop ranks.

use crate::diag::Span;

/// Sentinel for slots not yet assigned by validation.
pub const NO_SLOT: u32 = u32::MAX;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum ScalarType {
    Int,
    Long,
    Double,
    Bool,
}

impl ScalarType {
    pub fn keyword(self) -> &'static str {
        match self {
            ScalarType::Int => "int",
            ScalarType::Long => "long",
            ScalarType::Double => "double",
            ScalarType::Bool => "boolean",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Type {
    Scalar(ScalarType),
    /// Element type plus number of dimensions (1 or 2).
    Array(ScalarType, u8),
}

impl Type {
    pub fn elem(self) -> ScalarType {
        match self {
            Type::Scalar(s) | Type::Array(s, _) => s,
        }
    }

    pub fn dims(self) -> u8 {
        match self {
            Type::Scalar(_) => 0,
            Type::Array(_, d) => d,
        }
    }

    pub fn is_array(self) -> bool {
        matches!(self, Type::Array(..))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PrimOp {
    Add,
    Sub,
    Mul,
}

impl PrimOp {
    pub fn symbol(self) -> &'static str {
        match self {
            PrimOp::Add => "+",
            PrimOp::Sub => "-",
            PrimOp::Mul => "*",
        }
    }
}

/// Reduction declared on a method (or carried by a `sync` block).
#[derive(Clone, PartialEq, Debug)]
pub enum ReduceSpec {
    Prim(PrimOp),
    /// Assembles partially computed arrays; the implicit default for array
    /// returns, never written in source.
    ArrayAssembly,
    /// Re-applies the method itself over the vector of partial results.
    SelfReduce,
    User { name: String, args: Vec<Expr> },
}

#[derive(Clone, PartialEq, Debug)]
pub enum DistStrategy {
    /// Built-in block partitioning (per-dimension index ranges).
    Block,
    User { name: String, args: Vec<Expr> },
}

/// Parameters of a `dist` qualifier.
#[derive(Clone, PartialEq, Debug)]
pub struct DistSpec {
    pub strategy: DistStrategy,
    /// Per-dimension `(before, after)` visible-window extensions.
    pub view: Option<Vec<(u32, u32)>>,
    /// Polygonal views; mutually exclusive with `view`, same shape.
    pub polyview: Option<Vec<(u32, u32)>>,
    /// 1-based dimensions to partition; `None` partitions all of them.
    pub dims: Option<Vec<u8>>,
    pub span: Span,
}

impl DistSpec {
    pub fn block(span: Span) -> Self {
        DistSpec { strategy: DistStrategy::Block, view: None, polyview: None, dims: None, span }
    }

    /// The declared view pair for `dim` (1-based), `(0, 0)` when absent.
    pub fn view_for(&self, dim: u8) -> (u32, u32) {
        let table = self.view.as_ref().or(self.polyview.as_ref());
        table
            .and_then(|v| v.get(dim as usize - 1))
            .copied()
            .unwrap_or((0, 0))
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub ty: Type,
    pub dist: Option<DistSpec>,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub struct MethodDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Type,
    pub reduce: Option<ReduceSpec>,
    pub body: Block,
    pub span: Span,
}

#[derive(Clone, Debug, Default)]
pub struct Block {
    pub stmts: Vec<Stmt>,
}

#[derive(Clone, Debug)]
pub struct ForStmt {
    /// Either a `VarDecl` or an `Assign`.
    pub init: Option<Stmt>,
    pub cond: Option<Expr>,
    /// Always an `Assign` after desugaring of `i++` and compound forms.
    pub step: Option<Stmt>,
    pub body: Block,
    pub span: Span,
    /// Source-order rank among all loops of the method; set by validation.
    pub rank: u32,
}

#[derive(Clone, Debug)]
pub enum Stmt {
    VarDecl {
        shared: bool,
        dist: Option<DistSpec>,
        ty: Type,
        name: String,
        slot: u32,
        init: Option<Expr>,
        span: Span,
    },
    Assign {
        target: LValue,
        value: Expr,
        span: Span,
    },
    For(Box<ForStmt>),
    If {
        cond: Expr,
        then_branch: Block,
        else_branch: Option<Block>,
        span: Span,
    },
    Sync {
        reduce: Option<ReduceSpec>,
        /// Optional variable the consistency point targets.
        target: Option<(String, u32)>,
        body: Block,
        span: Span,
    },
    Return {
        value: Option<Expr>,
        span: Span,
    },
    Expr {
        expr: Expr,
        span: Span,
    },
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::VarDecl { span, .. }
            | Stmt::Assign { span, .. }
            | Stmt::If { span, .. }
            | Stmt::Sync { span, .. }
            | Stmt::Return { span, .. }
            | Stmt::Expr { span, .. } => *span,
            Stmt::For(f) => f.span,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LValue {
    pub name: String,
    pub slot: u32,
    pub indices: Vec<Expr>,
    pub span: Span,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MathFunc {
    Sqrt,
    Abs,
    Sin,
    Cos,
    Exp,
    Log,
    Pow,
    Floor,
    Min,
    Max,
}

impl MathFunc {
    pub fn by_name(name: &str) -> Option<MathFunc> {
        Some(match name {
            "sqrt" => MathFunc::Sqrt,
            "abs" => MathFunc::Abs,
            "sin" => MathFunc::Sin,
            "cos" => MathFunc::Cos,
            "exp" => MathFunc::Exp,
            "log" => MathFunc::Log,
            "pow" => MathFunc::Pow,
            "floor" => MathFunc::Floor,
            "min" => MathFunc::Min,
            "max" => MathFunc::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            MathFunc::Sqrt => "sqrt",
            MathFunc::Abs => "abs",
            MathFunc::Sin => "sin",
            MathFunc::Cos => "cos",
            MathFunc::Exp => "exp",
            MathFunc::Log => "log",
            MathFunc::Pow => "pow",
            MathFunc::Floor => "floor",
            MathFunc::Min => "min",
            MathFunc::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            MathFunc::Pow | MathFunc::Min | MathFunc::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub enum Expr {
    IntLit(i32, Span),
    LongLit(i64, Span),
    DoubleLit(f64, Span),
    BoolLit(bool, Span),
    Var {
        name: String,
        slot: u32,
        span: Span,
    },
    Index {
        base: String,
        slot: u32,
        indices: Vec<Expr>,
        span: Span,
    },
    /// `a.length` (dim 1) or `a[0].length` (dim 2).
    Len {
        base: String,
        slot: u32,
        dim: u8,
        span: Span,
    },
    Unary {
        op: UnOp,
        expr: Box<Expr>,
        span: Span,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
    Call {
        name: String,
        args: Vec<Expr>,
        span: Span,
    },
    MathCall {
        func: MathFunc,
        args: Vec<Expr>,
        span: Span,
    },
    NewArray {
        elem: ScalarType,
        dims: Vec<Expr>,
        span: Span,
    },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::IntLit(_, s)
            | Expr::LongLit(_, s)
            | Expr::DoubleLit(_, s)
            | Expr::BoolLit(_, s) => *s,
            Expr::Var { span, .. }
            | Expr::Index { span, .. }
            | Expr::Len { span, .. }
            | Expr::Unary { span, .. }
            | Expr::Binary { span, .. }
            | Expr::Call { span, .. }
            | Expr::MathCall { span, .. }
            | Expr::NewArray { span, .. } => *span,
        }
    }

    pub fn int_value(&self) -> Option<i64> {
        match self {
            Expr::IntLit(v, _) => Some(*v as i64),
            Expr::LongLit(v, _) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Program {
    pub methods: Vec<MethodDecl>,
}

impl Program {
    pub fn method(&self, name: &str) -> Option<&MethodDecl> {
        self.methods.iter().find(|m| m.name == name)
    }
}

/// Structural AST equality ignoring spans and resolution state; used by the
/// pretty-print round-trip property.
pub fn programs_structurally_equal(a: &Program, b: &Program) -> bool {
    struct_eq::program(a, b)
}

mod struct_eq {
    use super::*;

    pub fn program(a: &Program, b: &Program) -> bool {
        a.methods.len() == b.methods.len()
            && a.methods.iter().zip(&b.methods).all(|(x, y)| method(x, y))
    }

    fn method(a: &MethodDecl, b: &MethodDecl) -> bool {
        a.name == b.name
            && a.ret == b.ret
            && opt_reduce(&a.reduce, &b.reduce)
            && a.params.len() == b.params.len()
            && a.params.iter().zip(&b.params).all(|(x, y)| param(x, y))
            && block(&a.body, &b.body)
    }

    fn param(a: &Param, b: &Param) -> bool {
        a.name == b.name && a.ty == b.ty && opt_dist(&a.dist, &b.dist)
    }

    fn opt_dist(a: &Option<DistSpec>, b: &Option<DistSpec>) -> bool {
        match (a, b) {
            (None, None) => true,
            (Some(x), Some(y)) => {
                strategy(&x.strategy, &y.strategy)
                    && x.view == y.view
                    && x.polyview == y.polyview
                    && x.dims == y.dims
            }
            _ => false,
        }
    }

    fn strategy(a: &DistStrategy, b: &DistStrategy) -> bool {
        match (a, b) {
            (DistStrategy::Block, DistStrategy::Block) => true,
            (DistStrategy::User { name: n1, args: a1 }, DistStrategy::User { name: n2, args: a2 }) => {
                n1 == n2 && exprs(a1, a2)
            }
            _ => false,
        }
    }

    fn opt_reduce(a: &Option<ReduceSpec>, b: &Option<ReduceSpec>) -> bool {
        match (a, b) {
            (None, None) => true,
            (Some(x), Some(y)) => reduce(x, y),
            _ => false,
        }
    }

    fn reduce(a: &ReduceSpec, b: &ReduceSpec) -> bool {
        match (a, b) {
            (ReduceSpec::Prim(x), ReduceSpec::Prim(y)) => x == y,
            (ReduceSpec::ArrayAssembly, ReduceSpec::ArrayAssembly) => true,
            (ReduceSpec::SelfReduce, ReduceSpec::SelfReduce) => true,
            (ReduceSpec::User { name: n1, args: a1 }, ReduceSpec::User { name: n2, args: a2 }) => {
                n1 == n2 && exprs(a1, a2)
            }
            _ => false,
        }
    }

    fn block(a: &Block, b: &Block) -> bool {
        a.stmts.len() == b.stmts.len() && a.stmts.iter().zip(&b.stmts).all(|(x, y)| stmt(x, y))
    }

    fn stmt(a: &Stmt, b: &Stmt) -> bool {
        match (a, b) {
            (
                Stmt::VarDecl { shared: s1, dist: d1, ty: t1, name: n1, init: i1, .. },
                Stmt::VarDecl { shared: s2, dist: d2, ty: t2, name: n2, init: i2, .. },
            ) => s1 == s2 && opt_dist(d1, d2) && t1 == t2 && n1 == n2 && opt_expr(i1, i2),
            (Stmt::Assign { target: t1, value: v1, .. }, Stmt::Assign { target: t2, value: v2, .. }) => {
                lvalue(t1, t2) && expr(v1, v2)
            }
            (Stmt::For(f1), Stmt::For(f2)) => {
                opt_stmt(&f1.init, &f2.init)
                    && opt_expr(&f1.cond, &f2.cond)
                    && opt_stmt(&f1.step, &f2.step)
                    && block(&f1.body, &f2.body)
            }
            (
                Stmt::If { cond: c1, then_branch: t1, else_branch: e1, .. },
                Stmt::If { cond: c2, then_branch: t2, else_branch: e2, .. },
            ) => {
                expr(c1, c2)
                    && block(t1, t2)
                    && match (e1, e2) {
                        (None, None) => true,
                        (Some(x), Some(y)) => block(x, y),
                        _ => false,
                    }
            }
            (
                Stmt::Sync { reduce: r1, target: g1, body: b1, .. },
                Stmt::Sync { reduce: r2, target: g2, body: b2, .. },
            ) => {
                opt_reduce(r1, r2)
                    && match (g1, g2) {
                        (None, None) => true,
                        (Some((n1, _)), Some((n2, _))) => n1 == n2,
                        _ => false,
                    }
                    && block(b1, b2)
            }
            (Stmt::Return { value: v1, .. }, Stmt::Return { value: v2, .. }) => opt_expr(v1, v2),
            (Stmt::Expr { expr: e1, .. }, Stmt::Expr { expr: e2, .. }) => expr(e1, e2),
            _ => false,
        }
    }

    fn opt_stmt(a: &Option<Stmt>, b: &Option<Stmt>) -> bool {
        match (a, b) {
            (None, None) => true,
            (Some(x), Some(y)) => stmt(x, y),
            _ => false,
        }
    }

    fn lvalue(a: &LValue, b: &LValue) -> bool {
        a.name == b.name && exprs(&a.indices, &b.indices)
    }

    fn opt_expr(a: &Option<Expr>, b: &Option<Expr>) -> bool {
        match (a, b) {
            (None, None) => true,
            (Some(x), Some(y)) => expr(x, y),
            _ => false,
        }
    }

    fn exprs(a: &[Expr], b: &[Expr]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| expr(x, y))
    }

    pub fn expr(a: &Expr, b: &Expr) -> bool {
        match (a, b) {
            (Expr::IntLit(x, _), Expr::IntLit(y, _)) => x == y,
            (Expr::LongLit(x, _), Expr::LongLit(y, _)) => x == y,
            (Expr::DoubleLit(x, _), Expr::DoubleLit(y, _)) => x.to_bits() == y.to_bits(),
            (Expr::BoolLit(x, _), Expr::BoolLit(y, _)) => x == y,
            (Expr::Var { name: n1, .. }, Expr::Var { name: n2, .. }) => n1 == n2,
            (
                Expr::Index { base: b1, indices: i1, .. },
                Expr::Index { base: b2, indices: i2, .. },
            ) => b1 == b2 && exprs(i1, i2),
            (Expr::Len { base: b1, dim: d1, .. }, Expr::Len { base: b2, dim: d2, .. }) => {
                b1 == b2 && d1 == d2
            }
            (Expr::Unary { op: o1, expr: e1, .. }, Expr::Unary { op: o2, expr: e2, .. }) => {
                o1 == o2 && expr(e1, e2)
            }
            (
                Expr::Binary { op: o1, lhs: l1, rhs: r1, .. },
                Expr::Binary { op: o2, lhs: l2, rhs: r2, .. },
            ) => o1 == o2 && expr(l1, l2) && expr(r1, r2),
            (Expr::Call { name: n1, args: a1, .. }, Expr::Call { name: n2, args: a2, .. }) => {
                n1 == n2 && exprs(a1, a2)
            }
            (
                Expr::MathCall { func: f1, args: a1, .. },
                Expr::MathCall { func: f2, args: a2, .. },
            ) => f1 == f2 && exprs(a1, a2),
            (
                Expr::NewArray { elem: e1, dims: d1, .. },
                Expr::NewArray { elem: e2, dims: d2, .. },
            ) => e1 == e2 && exprs(d1, d2),
            _ => false,
        }
    }
}
