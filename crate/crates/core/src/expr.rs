//! Arithmetic expressions for coefficient fields, signals and functionals.
//!
//! Grammar, from loosest to tightest binding:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Names resolve at parse time to `t`, `x1..xd`, a declared parameter, or the
//! constants `pi` and `e`. Functions: `sin cos exp log sqrt abs tanh` (one
//! argument) and `min max` (two arguments).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{func}` takes {expected} argument(s), got {found} (byte {offset})")]
    Arity { func: String, expected: usize, found: usize, offset: usize },
    #[error("identifier `{0}` is not bound in the evaluation environment")]
    Unbound(String),
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },
    #[error("parameter name `{0}` collides with a reserved name")]
    ReservedName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Time,
    /// zero-based state coordinate (`x1` is `State(0)`)
    State(usize),
    Param(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// Syntax tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Const(Constant),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression together with the scope it was resolved in.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    dim: usize,
    params: Vec<String>,
}

/// Values for the free identifiers of an expression.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub params: &'a [f64],
}

impl<'a> Env<'a> {
    pub fn new(t: f64, x: &'a [f64], params: &'a [f64]) -> Self {
        Env { t, x, params }
    }
}

const RESERVED: &[&str] = &["t", "pi", "e", "sin", "cos", "exp", "log", "sqrt", "abs", "tanh", "min", "max"];

fn is_state_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    digits.parse().ok()
}

/// Parses `text` with state dimension `dim` and the given parameter names.
pub fn parse(text: &str, dim: usize, params: &[&str]) -> Result<Expr, ExprError> {
    for p in params {
        if RESERVED.contains(p) || is_state_name(p).is_some() {
            return Err(ExprError::ReservedName((*p).to_string()));
        }
    }
    let tokens = lex(text)?;
    let mut parser = Parser { tokens: &tokens, pos: 0, dim, params, end: text.len() };
    if tokens.is_empty() {
        return Err(ExprError::Syntax { offset: 0, message: "empty expression".into() });
    }
    let root = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ExprError::Syntax { offset: tok.offset, message: format!("unexpected {}", tok.kind.describe()) });
    }
    Ok(Expr { root, dim, params: params.iter().map(|s| s.to_string()).collect() })
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(v) => format!("number {v}"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Plus => "`+`".into(),
            TokKind::Minus => "`-`".into(),
            TokKind::Star => "`*`".into(),
            TokKind::Slash => "`/`".into(),
            TokKind::Caret => "`^`".into(),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
            TokKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokKind::Plus,
            b'-' => TokKind::Minus,
            b'*' => TokKind::Star,
            b'/' => TokKind::Slash,
            b'^' => TokKind::Caret,
            b'(' => TokKind::LParen,
            b')' => TokKind::RParen,
            b',' => TokKind::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // exponent only when followed by digits, so `2e` stays a syntax error
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                out.push(Token { kind: TokKind::Num(v), offset: start });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token { kind: TokKind::Ident(text[start..i].to_string()), offset: start });
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax { offset: start, message: format!("unexpected character `{ch}`") });
            }
        };
        i += 1;
        out.push(Token { kind, offset: start });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    dim: usize,
    params: &'a [&'a str],
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, kind: &TokKind) -> bool {
        if self.peek().map(|t| &t.kind) == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn error_here(&self, expected: &str) -> ExprError {
        match self.peek() {
            Some(tok) => ExprError::Syntax {
                offset: tok.offset,
                message: format!("expected {expected}, found {}", tok.kind.describe()),
            },
            None => ExprError::Syntax { offset: self.end, message: format!("expected {expected}, found end of input") },
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(&TokKind::Plus) {
                BinOp::Add
            } else if self.eat(&TokKind::Minus) {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(&TokKind::Star) {
                BinOp::Mul
            } else if self.eat(&TokKind::Slash) {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(&TokKind::Minus) {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.eat(&TokKind::Caret) {
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.peek() else {
            return Err(self.error_here("an operand"));
        };
        match &tok.kind {
            TokKind::Num(v) => {
                self.pos += 1;
                Ok(Node::Num(*v))
            }
            TokKind::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(&TokKind::RParen) {
                    return Err(self.error_here("`)`"));
                }
                Ok(inner)
            }
            TokKind::Ident(name) => {
                self.pos += 1;
                if self.peek().map(|t| &t.kind) == Some(&TokKind::LParen) {
                    return self.call(name, tok.offset);
                }
                self.resolve(name, tok.offset)
            }
            _ => Err(self.error_here("an operand")),
        }
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Node, ExprError> {
        let func = Func::lookup(name).ok_or_else(|| ExprError::UnknownIdentifier { name: name.to_string(), offset })?;
        self.pos += 1; // `(`
        let mut args = vec![self.expr()?];
        while self.eat(&TokKind::Comma) {
            args.push(self.expr()?);
        }
        if !self.eat(&TokKind::RParen) {
            return Err(self.error_here("`,` or `)`"));
        }
        if args.len() != func.arity() {
            return Err(ExprError::Arity {
                func: name.to_string(),
                expected: func.arity(),
                found: args.len(),
                offset,
            });
        }
        Ok(Node::Call(func, args))
    }

    fn resolve(&self, name: &str, offset: usize) -> Result<Node, ExprError> {
        if let Some(idx) = self.params.iter().position(|p| *p == name) {
            return Ok(Node::Var(Var::Param(idx)));
        }
        match name {
            "t" => return Ok(Node::Var(Var::Time)),
            "pi" => return Ok(Node::Const(Constant::Pi)),
            "e" => return Ok(Node::Const(Constant::E)),
            _ => {}
        }
        match is_state_name(name) {
            Some(k) if k >= 1 && k <= self.dim => Ok(Node::Var(Var::State(k - 1))),
            _ => Err(ExprError::UnknownIdentifier { name: name.to_string(), offset }),
        }
    }
}

impl Expr {
    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    /// Builds an expression directly from a tree; used by generators and tests.
    pub fn from_node(root: Node, dim: usize, params: &[&str]) -> Expr {
        Expr { root, dim, params: params.iter().map(|s| s.to_string()).collect() }
    }

    pub fn eval(&self, env: &Env<'_>) -> Result<f64, ExprError> {
        self.eval_node(&self.root, env)
    }

    /// True if the expression mentions `t`.
    pub fn uses_time(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Var(Var::Time) => true,
                Node::Num(_) | Node::Const(_) | Node::Var(_) => false,
                Node::Neg(a) => walk(a),
                Node::Bin(_, a, b) => walk(a) || walk(b),
                Node::Call(_, args) => args.iter().any(walk),
            }
        }
        walk(&self.root)
    }

    fn var_name(&self, v: Var) -> String {
        match v {
            Var::Time => "t".into(),
            Var::State(i) => format!("x{}", i + 1),
            Var::Param(i) => self.params.get(i).cloned().unwrap_or_else(|| format!("p{i}")),
        }
    }

    fn domain(&self, node: &Node, reason: impl Into<String>) -> ExprError {
        ExprError::Domain { expr: self.render(node), reason: reason.into() }
    }

    fn eval_node(&self, node: &Node, env: &Env<'_>) -> Result<f64, ExprError> {
        let v = match node {
            Node::Num(v) => return Ok(*v),
            Node::Const(Constant::Pi) => return Ok(std::f64::consts::PI),
            Node::Const(Constant::E) => return Ok(std::f64::consts::E),
            Node::Var(var) => {
                let value = match *var {
                    Var::Time => Some(env.t),
                    Var::State(i) => env.x.get(i).copied(),
                    Var::Param(i) => env.params.get(i).copied(),
                };
                return value.ok_or_else(|| ExprError::Unbound(self.var_name(*var)));
            }
            Node::Neg(a) => -self.eval_node(a, env)?,
            Node::Bin(op, a, b) => {
                let a = self.eval_node(a, env)?;
                let b = self.eval_node(b, env)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(self.domain(node, "division by zero"));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Node::Call(func, args) => {
                let a = self.eval_node(&args[0], env)?;
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(self.domain(node, format!("log of non-positive value {a}")));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(self.domain(node, format!("sqrt of negative value {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Tanh => a.tanh(),
                    Func::Min => a.min(self.eval_node(&args[1], env)?),
                    Func::Max => a.max(self.eval_node(&args[1], env)?),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.domain(node, format!("non-finite result {v}")))
        }
    }

    /// Fully parenthesized rendering of a subtree. Parsing the output yields the
    /// same tree.
    pub fn render(&self, node: &Node) -> String {
        let mut s = String::new();
        self.write_node(node, &mut s);
        s
    }

    fn write_node(&self, node: &Node, out: &mut String) {
        use std::fmt::Write;
        match node {
            Node::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    let _ = write!(out, "(-{})", -v);
                } else {
                    let _ = write!(out, "{v:?}");
                }
            }
            Node::Const(Constant::Pi) => out.push_str("pi"),
            Node::Const(Constant::E) => out.push('e'),
            Node::Var(v) => out.push_str(&self.var_name(*v)),
            Node::Neg(a) => {
                out.push_str("(-");
                self.write_node(a, out);
                out.push(')');
            }
            Node::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => " * ",
                    BinOp::Div => " / ",
                    BinOp::Pow => " ^ ",
                };
                out.push('(');
                self.write_node(a, out);
                out.push_str(sym);
                self.write_node(b, out);
                out.push(')');
            }
            Node::Call(f, args) => {
                out.push_str(f.name());
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    self.write_node(a, out);
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&self.root))
    }
}

/// Finite-difference estimates of space-derivative magnitudes, one entry per order.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBound {
    /// `per_order[k - 1]` is the grid maximum over all order-`k` partials.
    pub per_order: Vec<f64>,
    /// Grid point where the overall maximum was attained.
    pub argmax: (f64, Vec<f64>),
}

impl DerivativeBound {
    pub fn order(&self, k: usize) -> f64 {
        self.per_order[k - 1]
    }

    /// Maximum over all estimated orders.
    pub fn max(&self) -> f64 {
        self.per_order.iter().copied().fold(0.0, f64::max)
    }
}

/// Sampling region for derivative estimates: the box `[-half_width, half_width]^d`
/// crossed with `[0, period]` in time.
#[derive(Debug, Clone, Copy)]
pub struct Region {
    pub half_width: f64,
    pub period: f64,
}

/// Grid maximum of central finite-difference partials (orders `1..=max_order`)
/// of a scalar field `f(t, x)`. Grid sampling only sees the points it visits,
/// so the result is a lower bound on the true supremum.
pub fn fd_derivative_bound<F, E>(
    f: F,
    dim: usize,
    region: Region,
    max_order: usize,
    grid_n: usize,
    h: f64,
) -> Result<DerivativeBound, E>
where
    F: Fn(f64, &[f64]) -> Result<f64, E>,
{
    assert!((1..=2).contains(&max_order), "max_order must be 1 or 2");
    assert!(grid_n >= 3 && h > 0.0);
    let space: Vec<f64> = (0..grid_n)
        .map(|i| -region.half_width + 2.0 * region.half_width * i as f64 / (grid_n - 1) as f64)
        .collect();
    // time only matters for time-dependent fields; a coarse grid keeps the cost bounded
    let time_n = grid_n.min(17);
    let times: Vec<f64> = (0..time_n).map(|i| region.period * i as f64 / (time_n - 1) as f64).collect();
    let mut per_order = vec![0.0f64; max_order];
    let mut argmax = (0.0, vec![0.0; dim]);
    let mut best = f64::NEG_INFINITY;
    let total = grid_n.pow(dim as u32);
    let mut x = vec![0.0; dim];
    let mut probe = vec![0.0; dim];
    for &t in &times {
        for flat in 0..total {
            let mut rem = flat;
            for xi in x.iter_mut() {
                *xi = space[rem % grid_n];
                rem /= grid_n;
            }
            let mut at = |shift: &[(usize, f64)]| -> Result<f64, E> {
                probe.copy_from_slice(&x);
                for &(i, dx) in shift {
                    probe[i] += dx;
                }
                f(t, &probe)
            };
            let centre = at(&[])?;
            for i in 0..dim {
                let d1 = (at(&[(i, h)])? - at(&[(i, -h)])?) / (2.0 * h);
                let v = d1.abs();
                if v > per_order[0] {
                    per_order[0] = v;
                }
                if v > best {
                    best = v;
                    argmax = (t, x.clone());
                }
                if max_order >= 2 {
                    for j in i..dim {
                        let d2 = if i == j {
                            (at(&[(i, h)])? - 2.0 * centre + at(&[(i, -h)])?) / (h * h)
                        } else {
                            (at(&[(i, h), (j, h)])? - at(&[(i, h), (j, -h)])? - at(&[(i, -h), (j, h)])?
                                + at(&[(i, -h), (j, -h)])?)
                                / (4.0 * h * h)
                        };
                        let v = d2.abs();
                        if v > per_order[1] {
                            per_order[1] = v;
                        }
                        if v > best {
                            best = v;
                            argmax = (t, x.clone());
                        }
                    }
                }
            }
        }
    }
    Ok(DerivativeBound { per_order, argmax })
}

/// Derivative bound of a parsed expression, with `params` bound to the given values.
pub fn estimate_derivative_bound(
    e: &Expr,
    params: &[f64],
    region: Region,
    max_order: usize,
    grid_n: usize,
    h: f64,
) -> Result<DerivativeBound, ExprError> {
    fd_derivative_bound(|t, x| e.eval(&Env::new(t, x, params)), e.dim(), region, max_order, grid_n, h)
}
