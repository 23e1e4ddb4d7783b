//! Recursive-descent parser producing an unresolved [`Program`].
//!
//! Accepts the annotated Java-like subset verbatim, including `dist` with
//! `view`/`polyview`/`dim`/user-strategy arguments, method-level `reduce`
//! clauses, `shared` locals and `sync` blocks (optionally carrying a
//! reduction and a target variable).

use crate::ast::*;
use crate::diag::{DiagCode, Diagnostic, Span};
use crate::lexer::{lex, Tok, Token};

pub fn parse(source: &str) -> Result<Program, Vec<Diagnostic>> {
    let tokens = lex(source).map_err(|d| vec![d])?;
    let mut p = Parser { tokens, pos: 0 };
    p.program().map_err(|d| vec![d])
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        let i = (self.pos + 1).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<Token> {
        if self.peek() == &tok {
            Ok(self.bump())
        } else {
            Err(self.err(format!("expected {what}, found {:?}", self.peek())))
        }
    }

    fn err(&self, message: String) -> Diagnostic {
        Diagnostic::error(DiagCode::SYNTAX_ERROR, self.span(), message)
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Span)> {
        let span = self.span();
        match self.bump().tok {
            Tok::Ident(s) => Ok((s, span)),
            other => Err(Diagnostic::error(
                DiagCode::SYNTAX_ERROR,
                span,
                format!("expected {what}, found {other:?}"),
            )),
        }
    }

    fn at_ident(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn scalar_type_of(name: &str) -> Option<ScalarType> {
        Some(match name {
            "int" => ScalarType::Int,
            "long" => ScalarType::Long,
            "double" => ScalarType::Double,
            "boolean" => ScalarType::Bool,
            _ => return None,
        })
    }

    fn at_type(&self) -> bool {
        matches!(self.peek(), Tok::Ident(s) if Self::scalar_type_of(s).is_some())
    }

    // program := method*
    fn program(&mut self) -> PResult<Program> {
        let mut methods = Vec::new();
        while self.peek() != &Tok::Eof {
            methods.push(self.method()?);
        }
        Ok(Program { methods })
    }

    fn method(&mut self) -> PResult<MethodDecl> {
        let span = self.span();
        let reduce = if self.at_ident("reduce") {
            Some(self.reduce_clause()?)
        } else {
            None
        };
        let ret = self.parse_type()?;
        let (name, _) = self.ident("method name")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if self.peek() != &Tok::RParen {
            loop {
                params.push(self.param()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        let body = self.block()?;
        Ok(MethodDecl { name, params, ret, reduce, body, span })
    }

    fn reduce_clause(&mut self) -> PResult<ReduceSpec> {
        self.ident("`reduce`")?;
        self.expect(Tok::LParen, "`(` after reduce")?;
        let spec = match self.peek().clone() {
            Tok::Plus => {
                self.bump();
                ReduceSpec::Prim(PrimOp::Add)
            }
            Tok::Minus => {
                self.bump();
                ReduceSpec::Prim(PrimOp::Sub)
            }
            Tok::Star => {
                self.bump();
                ReduceSpec::Prim(PrimOp::Mul)
            }
            Tok::Ident(s) if s == "self" => {
                self.bump();
                ReduceSpec::SelfReduce
            }
            Tok::Ident(_) => {
                let (name, _) = self.ident("reducer name")?;
                let args = if self.peek() == &Tok::LParen {
                    self.paren_args()?
                } else {
                    Vec::new()
                };
                ReduceSpec::User { name, args }
            }
            other => return Err(self.err(format!("expected reduction operator, found {other:?}"))),
        };
        self.expect(Tok::RParen, "`)` closing reduce")?;
        Ok(spec)
    }

    fn param(&mut self) -> PResult<Param> {
        let span = self.span();
        let dist = if self.at_ident("dist") {
            Some(self.dist_spec()?)
        } else {
            if let Tok::Ident(s) = self.peek() {
                if Self::scalar_type_of(s).is_none() && matches!(self.peek2(), Tok::Ident(n) if Self::scalar_type_of(n).is_some())
                {
                    return Err(Diagnostic::error(
                        DiagCode::UNKNOWN_QUALIFIER,
                        span,
                        format!("unknown qualifier `{s}`"),
                    ));
                }
            }
            None
        };
        let ty = self.parse_type()?;
        let (name, _) = self.ident("parameter name")?;
        Ok(Param { name, ty, dist, span })
    }

    fn dist_spec(&mut self) -> PResult<DistSpec> {
        let (_, span) = self.ident("`dist`")?;
        let mut spec = DistSpec::block(span);
        if !self.eat(&Tok::LParen) {
            return Ok(spec);
        }
        loop {
            match self.peek().clone() {
                Tok::Ident(key) if key == "view" || key == "polyview" => {
                    self.bump();
                    self.expect(Tok::Assign, "`=` after view")?;
                    let pairs = self.view_pairs()?;
                    if key == "view" {
                        spec.view = Some(pairs);
                    } else {
                        spec.polyview = Some(pairs);
                    }
                }
                Tok::Ident(key) if key == "dim" => {
                    self.bump();
                    self.expect(Tok::Assign, "`=` after dim")?;
                    let mut dims = vec![self.small_uint()? as u8];
                    while matches!(self.peek(), Tok::IntLit(_)) {
                        dims.push(self.small_uint()? as u8);
                    }
                    spec.dims = Some(dims);
                }
                Tok::Ident(_) => {
                    let (name, _) = self.ident("strategy name")?;
                    let args = if self.peek() == &Tok::LParen {
                        self.paren_args()?
                    } else {
                        Vec::new()
                    };
                    spec.strategy = DistStrategy::User { name, args };
                }
                other => return Err(self.err(format!("expected dist argument, found {other:?}"))),
            }
            if self.eat(&Tok::Comma) {
                continue;
            }
            break;
        }
        self.expect(Tok::RParen, "`)` closing dist")?;
        Ok(spec)
    }

    // view_pairs := '<' INT ',' INT '>' (',' '<' INT ',' INT '>')*
    fn view_pairs(&mut self) -> PResult<Vec<(u32, u32)>> {
        let mut pairs = Vec::new();
        loop {
            self.expect(Tok::Lt, "`<` opening view pair")?;
            let before = self.small_uint()?;
            self.expect(Tok::Comma, "`,` in view pair")?;
            let after = self.small_uint()?;
            self.expect(Tok::Gt, "`>` closing view pair")?;
            pairs.push((before, after));
            // a comma continues the vector only if another pair follows
            if self.peek() == &Tok::Comma && self.peek2() == &Tok::Lt {
                self.bump();
                continue;
            }
            break;
        }
        Ok(pairs)
    }

    fn small_uint(&mut self) -> PResult<u32> {
        let span = self.span();
        match self.bump().tok {
            Tok::IntLit(v) if v >= 0 && v <= u32::MAX as i64 => Ok(v as u32),
            other => Err(Diagnostic::error(
                DiagCode::SYNTAX_ERROR,
                span,
                format!("expected non-negative integer, found {other:?}"),
            )),
        }
    }

    fn parse_type(&mut self) -> PResult<Type> {
        let (name, span) = self.ident("type")?;
        let scalar = Self::scalar_type_of(&name).ok_or_else(|| {
            Diagnostic::error(DiagCode::SYNTAX_ERROR, span, format!("expected type, found `{name}`"))
        })?;
        let mut dims = 0u8;
        while self.peek() == &Tok::LBracket && self.peek2() == &Tok::RBracket {
            self.bump();
            self.bump();
            dims += 1;
            if dims > 2 {
                return Err(Diagnostic::error(
                    DiagCode::SYNTAX_ERROR,
                    span,
                    "arrays are limited to two dimensions",
                ));
            }
        }
        Ok(if dims == 0 { Type::Scalar(scalar) } else { Type::Array(scalar, dims) })
    }

    fn block(&mut self) -> PResult<Block> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut stmts = Vec::new();
        while self.peek() != &Tok::RBrace {
            if self.peek() == &Tok::Eof {
                return Err(self.err("unexpected end of input in block".into()));
            }
            stmts.push(self.stmt()?);
        }
        self.bump();
        Ok(Block { stmts })
    }

    /// A block, or a single statement wrapped in one (brace-less loop/if bodies).
    fn body(&mut self) -> PResult<Block> {
        if self.peek() == &Tok::LBrace {
            self.block()
        } else {
            let stmt = self.stmt()?;
            Ok(Block { stmts: vec![stmt] })
        }
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Ident(s) if s == "for" => self.for_stmt(),
            Tok::Ident(s) if s == "if" => self.if_stmt(),
            Tok::Ident(s) if s == "sync" => self.sync_stmt(),
            Tok::Ident(s) if s == "return" => {
                self.bump();
                let value = if self.peek() == &Tok::Semi { None } else { Some(self.expr()?) };
                self.expect(Tok::Semi, "`;` after return")?;
                Ok(Stmt::Return { value, span })
            }
            Tok::Ident(s) if s == "shared" || s == "dist" || Self::scalar_type_of(&s).is_some() => {
                let stmt = self.var_decl()?;
                self.expect(Tok::Semi, "`;` after declaration")?;
                Ok(stmt)
            }
            _ => {
                let stmt = self.assign_or_expr()?;
                self.expect(Tok::Semi, "`;` after statement")?;
                Ok(stmt)
            }
        }
    }

    fn var_decl(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let shared = if self.at_ident("shared") {
            self.bump();
            true
        } else {
            false
        };
        let dist = if self.at_ident("dist") { Some(self.dist_spec()?) } else { None };
        let ty = self.parse_type()?;
        let (name, _) = self.ident("variable name")?;
        let init = if self.eat(&Tok::Assign) { Some(self.expr()?) } else { None };
        Ok(Stmt::VarDecl { shared, dist, ty, name, slot: NO_SLOT, init, span })
    }

    fn for_stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        self.bump(); // for
        self.expect(Tok::LParen, "`(` after for")?;
        let init = if self.peek() == &Tok::Semi {
            None
        } else if self.at_type() {
            Some(self.var_decl()?)
        } else {
            Some(self.assign_or_expr()?)
        };
        self.expect(Tok::Semi, "`;` after for-init")?;
        let cond = if self.peek() == &Tok::Semi { None } else { Some(self.expr()?) };
        self.expect(Tok::Semi, "`;` after for-condition")?;
        let step = if self.peek() == &Tok::RParen { None } else { Some(self.assign_or_expr()?) };
        self.expect(Tok::RParen, "`)` closing for")?;
        let body = self.body()?;
        Ok(Stmt::For(Box::new(ForStmt { init, cond, step, body, span, rank: u32::MAX })))
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        self.bump(); // if
        self.expect(Tok::LParen, "`(` after if")?;
        let cond = self.expr()?;
        self.expect(Tok::RParen, "`)` closing if condition")?;
        let then_branch = self.body()?;
        let else_branch = if self.at_ident("else") {
            self.bump();
            Some(self.body()?)
        } else {
            None
        };
        Ok(Stmt::If { cond, then_branch, else_branch, span })
    }

    // sync [reduce(op)] [(target)] { ... }
    fn sync_stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        self.bump(); // sync
        let reduce = if self.at_ident("reduce") { Some(self.reduce_clause()?) } else { None };
        let target = if self.peek() == &Tok::LParen {
            self.bump();
            let (name, _) = self.ident("sync target variable")?;
            self.expect(Tok::RParen, "`)` closing sync target")?;
            Some((name, NO_SLOT))
        } else {
            None
        };
        let body = self.block()?;
        Ok(Stmt::Sync { reduce, target, body, span })
    }

    /// Statement starting from an expression: plain call, assignment
    /// (including compound `+=` forms) or `++`/`--` which desugar to
    /// ordinary assignments.
    fn assign_or_expr(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let expr = self.expr()?;
        let compound = |op: BinOp, target: LValue, rhs: Expr, span: Span| {
            let lhs = if target.indices.is_empty() {
                Expr::Var { name: target.name.clone(), slot: NO_SLOT, span: target.span }
            } else {
                Expr::Index {
                    base: target.name.clone(),
                    slot: NO_SLOT,
                    indices: target.indices.clone(),
                    span: target.span,
                }
            };
            Stmt::Assign {
                target,
                value: Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), span },
                span,
            }
        };
        match self.peek().clone() {
            Tok::Assign => {
                self.bump();
                let target = self.as_lvalue(expr)?;
                let value = self.expr()?;
                Ok(Stmt::Assign { target, value, span })
            }
            Tok::PlusAssign | Tok::MinusAssign | Tok::StarAssign | Tok::SlashAssign => {
                let op = match self.bump().tok {
                    Tok::PlusAssign => BinOp::Add,
                    Tok::MinusAssign => BinOp::Sub,
                    Tok::StarAssign => BinOp::Mul,
                    _ => BinOp::Div,
                };
                let target = self.as_lvalue(expr)?;
                let rhs = self.expr()?;
                Ok(compound(op, target, rhs, span))
            }
            Tok::PlusPlus | Tok::MinusMinus => {
                let op = if self.bump().tok == Tok::PlusPlus { BinOp::Add } else { BinOp::Sub };
                let target = self.as_lvalue(expr)?;
                Ok(compound(op, target, Expr::IntLit(1, span), span))
            }
            _ => Ok(Stmt::Expr { expr, span }),
        }
    }

    fn as_lvalue(&self, expr: Expr) -> PResult<LValue> {
        match expr {
            Expr::Var { name, span, .. } => Ok(LValue { name, slot: NO_SLOT, indices: vec![], span }),
            Expr::Index { base, indices, span, .. } => {
                Ok(LValue { name: base, slot: NO_SLOT, indices, span })
            }
            other => Err(Diagnostic::error(
                DiagCode::SYNTAX_ERROR,
                other.span(),
                "assignment target must be a variable or array element",
            )),
        }
    }

    // --- expressions, precedence climbing ---

    fn expr(&mut self) -> PResult<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.peek() == &Tok::OrOr {
            let span = self.span();
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::Binary { op: BinOp::Or, lhs: Box::new(lhs), rhs: Box::new(rhs), span };
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.equality()?;
        while self.peek() == &Tok::AndAnd {
            let span = self.span();
            self.bump();
            let rhs = self.equality()?;
            lhs = Expr::Binary { op: BinOp::And, lhs: Box::new(lhs), rhs: Box::new(rhs), span };
        }
        Ok(lhs)
    }

    fn equality(&mut self) -> PResult<Expr> {
        let mut lhs = self.relational()?;
        loop {
            let op = match self.peek() {
                Tok::EqEq => BinOp::Eq,
                Tok::Ne => BinOp::Ne,
                _ => break,
            };
            let span = self.span();
            self.bump();
            let rhs = self.relational()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), span };
        }
        Ok(lhs)
    }

    fn relational(&mut self) -> PResult<Expr> {
        let mut lhs = self.additive()?;
        loop {
            let op = match self.peek() {
                Tok::Lt => BinOp::Lt,
                Tok::Le => BinOp::Le,
                Tok::Gt => BinOp::Gt,
                Tok::Ge => BinOp::Ge,
                _ => break,
            };
            let span = self.span();
            self.bump();
            let rhs = self.additive()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), span };
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            let span = self.span();
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), span };
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Percent => BinOp::Rem,
                _ => break,
            };
            let span = self.span();
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), span };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek() {
            Tok::Minus => {
                self.bump();
                let inner = self.unary()?;
                Ok(Expr::Unary { op: UnOp::Neg, expr: Box::new(inner), span })
            }
            Tok::Not => {
                self.bump();
                let inner = self.unary()?;
                Ok(Expr::Unary { op: UnOp::Not, expr: Box::new(inner), span })
            }
            _ => self.postfix(),
        }
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let expr = self.primary()?;
        // `.length` on a variable or on `v[0]`
        if self.peek() == &Tok::Dot && matches!(self.peek2(), Tok::Ident(s) if s == "length") {
            let span = self.span();
            self.bump();
            self.bump();
            return match expr {
                Expr::Var { name, .. } => Ok(Expr::Len { base: name, slot: NO_SLOT, dim: 1, span }),
                Expr::Index { base, indices, .. } if indices.len() == 1 => {
                    Ok(Expr::Len { base, slot: NO_SLOT, dim: 2, span })
                }
                other => Err(Diagnostic::error(
                    DiagCode::SYNTAX_ERROR,
                    other.span(),
                    "`.length` applies to an array variable or its first index",
                )),
            };
        }
        Ok(expr)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek().clone() {
            Tok::IntLit(v) => {
                self.bump();
                Ok(Expr::IntLit(v as i32, span))
            }
            Tok::LongLit(v) => {
                self.bump();
                Ok(Expr::LongLit(v, span))
            }
            Tok::DoubleLit(v) => {
                self.bump();
                Ok(Expr::DoubleLit(v, span))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.bump();
                Ok(Expr::BoolLit(s == "true", span))
            }
            Tok::Ident(s) if s == "new" => {
                self.bump();
                let (tyname, tspan) = self.ident("element type after new")?;
                let elem = Self::scalar_type_of(&tyname).ok_or_else(|| {
                    Diagnostic::error(DiagCode::SYNTAX_ERROR, tspan, format!("expected scalar type, found `{tyname}`"))
                })?;
                let mut dims = Vec::new();
                self.expect(Tok::LBracket, "`[` after new type")?;
                dims.push(self.expr()?);
                self.expect(Tok::RBracket, "`]`")?;
                if self.peek() == &Tok::LBracket {
                    self.bump();
                    dims.push(self.expr()?);
                    self.expect(Tok::RBracket, "`]`")?;
                }
                Ok(Expr::NewArray { elem, dims, span })
            }
            Tok::Ident(s) if s == "Math" => {
                self.bump();
                self.expect(Tok::Dot, "`.` after Math")?;
                let (fname, fspan) = self.ident("math function")?;
                let func = MathFunc::by_name(&fname).ok_or_else(|| {
                    Diagnostic::error(
                        DiagCode::UNKNOWN_METHOD,
                        fspan,
                        format!("unknown math function `Math.{fname}`"),
                    )
                })?;
                let args = self.paren_args()?;
                Ok(Expr::MathCall { func, args, span })
            }
            Tok::Ident(_) => {
                let (name, _) = self.ident("identifier")?;
                if self.peek() == &Tok::LParen {
                    let args = self.paren_args()?;
                    return Ok(Expr::Call { name, args, span });
                }
                let mut indices = Vec::new();
                while self.peek() == &Tok::LBracket && indices.len() < 2 {
                    self.bump();
                    indices.push(self.expr()?);
                    self.expect(Tok::RBracket, "`]`")?;
                }
                if indices.is_empty() {
                    Ok(Expr::Var { name, slot: NO_SLOT, span })
                } else {
                    Ok(Expr::Index { base: name, slot: NO_SLOT, indices, span })
                }
            }
            other => Err(self.err(format!("expected expression, found {other:?}"))),
        }
    }

    fn paren_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() != &Tok::RParen {
            loop {
                args.push(self.expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(args)
    }
}
