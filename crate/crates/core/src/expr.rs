//! Scalar expressions in chart coordinates `x1..xn` and fiber coordinates
//! `y1..yn`.
//!
//! Expressions are parsed once into an immutable [`ExprAst`] and evaluated
//! over any [`Scalar`]: plain `f64` or truncated Taylor jets. Only smooth
//! primitives are admitted, so every expression can be differentiated to the
//! orders the tensor formulas need.

use std::fmt;

use crate::error::{ExprError, SourceSpan};

/// Numeric type an expression can be evaluated over.
///
/// `SINGULAR_GUARD` is the magnitude below which division, `log` and
/// fractional powers are rejected. It is zero for plain numbers and positive
/// for jets, whose higher coefficients blow up near a singular base value.
pub trait Scalar: Clone {
    const SINGULAR_GUARD: f64;

    /// A constant with the same shape as `self`.
    fn lift(&self, c: f64) -> Self;
    fn value(&self) -> f64;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;
    fn recip(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn powf(&self, exponent: f64) -> Self;

    fn div(&self, other: &Self) -> Self {
        self.mul(&other.recip())
    }

    fn powi(&self, n: i64) -> Self {
        let mut base = self.clone();
        let mut e = n.unsigned_abs();
        let mut acc = self.lift(1.0);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        if n < 0 {
            acc.recip()
        } else {
            acc
        }
    }
}

impl Scalar for f64 {
    const SINGULAR_GUARD: f64 = 0.0;

    fn lift(&self, c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn neg(&self) -> Self {
        -self
    }
    fn recip(&self) -> Self {
        1.0 / self
    }
    fn div(&self, other: &Self) -> Self {
        self / other
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn powf(&self, exponent: f64) -> Self {
        f64::powf(*self, exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Sin,
    Cos,
    Exp,
    Log,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            _ => return None,
        })
    }
}

/// Exact rational exponent `num / den` with `den > 0` in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: i64,
    pub den: i64,
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Option<Rational> {
        Rat::new(num as i128, den as i128).and_then(Rat::to_rational)
    }

    pub fn is_integer(self) -> bool {
        self.den == 1
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// Zero-based coordinate index.
    Var(VarKind, usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    Pow(Box<Expr>, Rational),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub node: Node,
    pub span: SourceSpan,
}

impl Expr {
    pub fn new(node: Node, span: SourceSpan) -> Expr {
        Expr { node, span }
    }

    pub fn node_count(&self) -> usize {
        1 + match &self.node {
            Node::Const(_) | Node::Var(..) => 0,
            Node::Neg(a) | Node::Call(_, a) | Node::Pow(a, _) => a.node_count(),
            Node::Binary(_, a, b) => a.node_count() + b.node_count(),
        }
    }

    fn max_index(&self) -> Option<usize> {
        match &self.node {
            Node::Var(_, i) => Some(*i),
            Node::Const(_) => None,
            Node::Neg(a) | Node::Call(_, a) | Node::Pow(a, _) => a.max_index(),
            Node::Binary(_, a, b) => a.max_index().max(b.max_index()),
        }
    }

    /// Whether the subtree mentions any coordinate of the given kind.
    pub fn depends_on(&self, kind: VarKind) -> bool {
        match &self.node {
            Node::Var(k, _) => *k == kind,
            Node::Const(_) => false,
            Node::Neg(a) | Node::Call(_, a) | Node::Pow(a, _) => a.depends_on(kind),
            Node::Binary(_, a, b) => a.depends_on(kind) || b.depends_on(kind),
        }
    }

    fn constant_value(&self) -> Option<f64> {
        match &self.node {
            Node::Const(c) => Some(*c),
            Node::Var(..) => None,
            Node::Neg(a) => a.constant_value().map(|v| -v),
            Node::Binary(op, a, b) => {
                let (a, b) = (a.constant_value()?, b.constant_value()?);
                Some(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                })
            }
            Node::Call(f, a) => {
                let a = a.constant_value()?;
                Some(match f {
                    Func::Sqrt => a.sqrt(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                })
            }
            Node::Pow(a, r) => a.constant_value().map(|v| v.powf(r.to_f64())),
        }
    }

    pub fn eval<T: Scalar>(&self, x: &[T], y: &[T]) -> Result<T, ExprError> {
        match &self.node {
            Node::Const(c) => {
                let template = x.first().or(y.first()).ok_or(ExprError::Arity {
                    expected: 1,
                    got: 0,
                })?;
                Ok(template.lift(*c))
            }
            Node::Var(VarKind::X, i) => Ok(x[*i].clone()),
            Node::Var(VarKind::Y, i) => Ok(y[*i].clone()),
            Node::Neg(a) => Ok(a.eval(x, y)?.neg()),
            Node::Binary(op, a, b) => {
                let a = a.eval(x, y)?;
                let b = b.eval(x, y)?;
                Ok(match op {
                    BinOp::Add => a.add(&b),
                    BinOp::Sub => a.sub(&b),
                    BinOp::Mul => a.mul(&b),
                    BinOp::Div => {
                        let d = b.value();
                        if d == 0.0 || d.abs() < T::SINGULAR_GUARD {
                            return Err(self.domain("division", d));
                        }
                        a.div(&b)
                    }
                })
            }
            Node::Call(f, a) => {
                let a = a.eval(x, y)?;
                let v = a.value();
                Ok(match f {
                    Func::Sqrt => {
                        if v < 0.0 || (v < T::SINGULAR_GUARD) {
                            return Err(self.domain("sqrt", v));
                        }
                        a.sqrt()
                    }
                    Func::Log => {
                        if v <= 0.0 || v < T::SINGULAR_GUARD {
                            return Err(self.domain("log", v));
                        }
                        a.ln()
                    }
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                })
            }
            Node::Pow(a, r) => {
                let a = a.eval(x, y)?;
                let v = a.value();
                if r.is_integer() {
                    if r.num < 0 && (v == 0.0 || v.abs() < T::SINGULAR_GUARD) {
                        return Err(self.domain("pow", v));
                    }
                    Ok(a.powi(r.num))
                } else {
                    if v < 0.0 || v < T::SINGULAR_GUARD || (v == 0.0 && r.num < 0) {
                        return Err(self.domain("pow", v));
                    }
                    Ok(a.powf(r.to_f64()))
                }
            }
        }
    }

    fn domain(&self, op: &'static str, value: f64) -> ExprError {
        ExprError::Domain {
            op,
            span: self.span,
            value,
        }
    }

    fn write_infix(&self, out: &mut String) {
        match &self.node {
            Node::Const(c) if c.is_sign_negative() => out.push_str(&format!("(-{})", -c)),
            Node::Const(c) => out.push_str(&format!("{c}")),
            Node::Var(k, i) => out.push_str(&var_name(*k, *i)),
            Node::Neg(a) => {
                out.push_str("(-");
                a.write_infix(out);
                out.push(')');
            }
            Node::Binary(op, a, b) => {
                out.push('(');
                a.write_infix(out);
                out.push(' ');
                out.push(op.symbol());
                out.push(' ');
                b.write_infix(out);
                out.push(')');
            }
            Node::Call(f, a) => {
                out.push_str(f.name());
                out.push('(');
                a.write_infix(out);
                out.push(')');
            }
            Node::Pow(a, r) => {
                out.push('(');
                a.write_infix(out);
                out.push_str(")^(");
                out.push_str(&r.to_string());
                out.push(')');
            }
        }
    }

    fn write_sexpr(&self, out: &mut String) {
        match &self.node {
            Node::Const(c) => out.push_str(&format!("{c}")),
            Node::Var(k, i) => out.push_str(&var_name(*k, *i)),
            Node::Neg(a) => {
                out.push_str("(neg ");
                a.write_sexpr(out);
                out.push(')');
            }
            Node::Binary(op, a, b) => {
                out.push('(');
                out.push(op.symbol());
                out.push(' ');
                a.write_sexpr(out);
                out.push(' ');
                b.write_sexpr(out);
                out.push(')');
            }
            Node::Call(f, a) => {
                out.push('(');
                out.push_str(f.name());
                out.push(' ');
                a.write_sexpr(out);
                out.push(')');
            }
            Node::Pow(a, r) => {
                out.push_str("(^ ");
                a.write_sexpr(out);
                out.push(' ');
                out.push_str(&r.to_string());
                out.push(')');
            }
        }
    }
}

fn var_name(kind: VarKind, index: usize) -> String {
    match kind {
        VarKind::X => format!("x{}", index + 1),
        VarKind::Y => format!("y{}", index + 1),
    }
}

/// A parsed expression together with its source and chart dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprAst {
    source: String,
    dimension: usize,
    root: Expr,
}

impl ExprAst {
    pub fn from_root(root: Expr, dimension: usize) -> Result<ExprAst, ExprError> {
        if let Some(i) = root.max_index() {
            if i >= dimension {
                return Err(ExprError::VariableOutOfRange {
                    name: format!("index {}", i + 1),
                    span: root.span,
                    dimension,
                });
            }
        }
        let mut source = String::new();
        root.write_infix(&mut source);
        Ok(ExprAst {
            source,
            dimension,
            root,
        })
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn depends_on(&self, kind: VarKind) -> bool {
        self.root.depends_on(kind)
    }

    /// Fully parenthesised infix form; parsing it yields an equal tree.
    pub fn pretty(&self) -> String {
        let mut s = String::new();
        self.root.write_infix(&mut s);
        s
    }

    pub fn to_sexpr(&self) -> String {
        let mut s = String::new();
        self.root.write_sexpr(&mut s);
        s
    }

    pub fn eval<T: Scalar>(&self, x: &[T], y: &[T]) -> Result<T, ExprError> {
        for got in [x.len(), y.len()] {
            if got != self.dimension {
                return Err(ExprError::Arity {
                    expected: self.dimension,
                    got,
                });
            }
        }
        self.root.eval(x, y)
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pretty())
    }
}

/// Evaluate over plain doubles.
pub fn eval_scalar(ast: &ExprAst, x: &[f64], y: &[f64]) -> Result<f64, ExprError> {
    ast.eval(x, y)
}

/// Parse `source` as an expression over an `dimension`-dimensional chart.
///
/// Precedence, tightest first: `^` (right-associative), unary minus, `* /`,
/// `+ -`. Exponents must fold to rational constants.
pub fn parse(source: &str, dimension: usize) -> Result<ExprAst, ExprError> {
    if source.trim().is_empty() {
        return Err(ExprError::Syntax {
            span: SourceSpan::new(0, source.len()),
            message: "empty expression".into(),
        });
    }
    let tokens = lex(source)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        len: source.len(),
        dimension,
    };
    let root = p.expr()?;
    if let Some(tok) = p.peek() {
        return Err(ExprError::Syntax {
            span: tok.span,
            message: format!("unexpected {}", tok.kind.describe()),
        });
    }
    Ok(ExprAst {
        source: source.to_string(),
        dimension,
        root,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Number(f64, String),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Number(_, s) => format!("number `{s}`"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Op(c) => format!("`{c}`"),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
            TokKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    span: SourceSpan,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                i += 1;
                TokKind::Op(c as char)
            }
            b'(' => {
                i += 1;
                TokKind::LParen
            }
            b')' => {
                i += 1;
                TokKind::RParen
            }
            b',' => {
                i += 1;
                TokKind::Comma
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
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
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    span: SourceSpan::new(start, i),
                    message: format!("malformed number `{text}`"),
                })?;
                TokKind::Number(value, text.to_string())
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                TokKind::Ident(src[start..i].to_string())
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    span: SourceSpan::new(start, start + ch.len_utf8()),
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push(Token {
            kind,
            span: SourceSpan::new(start, i),
        });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    len: usize,
    dimension: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eof_span(&self) -> SourceSpan {
        SourceSpan::new(self.len, self.len)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<(char, SourceSpan)> {
        match self.peek() {
            Some(Token {
                kind: TokKind::Op(c),
                span,
            }) if ops.contains(c) => {
                let r = (*c, *span);
                self.pos += 1;
                Some(r)
            }
            _ => None,
        }
    }

    fn expect(&mut self, want: TokKind, what: &str) -> Result<SourceSpan, ExprError> {
        match self.next() {
            Some(t) if t.kind == want => Ok(t.span),
            Some(t) => Err(ExprError::Syntax {
                span: t.span,
                message: format!("expected {what}, found {}", t.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                span: self.eof_span(),
                message: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some((c, _)) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            let span = lhs.span.join(rhs.span);
            lhs = Expr::new(Node::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some((c, _)) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            let span = lhs.span.join(rhs.span);
            lhs = Expr::new(Node::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some((_, span)) = self.eat_op(&['-']) {
            let inner = self.unary()?;
            let span = span.join(inner.span);
            return Ok(Expr::new(Node::Neg(Box::new(inner)), span));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            let exponent = self.unary()?;
            let r = fold_rational(&exponent)?;
            let span = base.span.join(exponent.span);
            return Ok(Expr::new(Node::Pow(Box::new(base), r), span));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let tok = self.next().ok_or_else(|| ExprError::Syntax {
            span: self.eof_span(),
            message: "expected an operand, found end of input".into(),
        })?;
        match tok.kind {
            TokKind::Number(v, _) => Ok(Expr::new(Node::Const(v), tok.span)),
            TokKind::LParen => {
                let inner = self.expr()?;
                let close = self.expect(TokKind::RParen, "`)`")?;
                Ok(Expr::new(inner.node, tok.span.join(close)))
            }
            TokKind::Ident(name) => self.ident(name, tok.span),
            other => Err(ExprError::Syntax {
                span: tok.span,
                message: format!("expected an operand, found {}", other.describe()),
            }),
        }
    }

    fn ident(&mut self, name: String, span: SourceSpan) -> Result<Expr, ExprError> {
        if let Some(f) = Func::from_name(&name) {
            self.expect(TokKind::LParen, "`(` after function name")?;
            let arg = self.expr()?;
            let close = self.expect(TokKind::RParen, "`)`")?;
            if matches!(f, Func::Sqrt | Func::Log) && arg.constant_value() == Some(0.0) {
                return Err(ExprError::Syntax {
                    span: arg.span,
                    message: format!("argument of {} is the constant 0", f.name()),
                });
            }
            return Ok(Expr::new(Node::Call(f, Box::new(arg)), span.join(close)));
        }
        if name == "pow" {
            self.expect(TokKind::LParen, "`(` after pow")?;
            let base = self.expr()?;
            self.expect(TokKind::Comma, "`,` in pow(base, exponent)")?;
            let exponent = self.expr()?;
            let close = self.expect(TokKind::RParen, "`)`")?;
            let r = fold_rational(&exponent)?;
            return Ok(Expr::new(Node::Pow(Box::new(base), r), span.join(close)));
        }
        let kind = match name.as_bytes()[0] {
            b'x' => Some(VarKind::X),
            b'y' => Some(VarKind::Y),
            _ => None,
        };
        let digits = &name[1..];
        match kind {
            Some(kind) if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) => {
                let index: usize = digits.parse().unwrap_or(0);
                if index == 0 || index > self.dimension {
                    return Err(ExprError::VariableOutOfRange {
                        name,
                        span,
                        dimension: self.dimension,
                    });
                }
                Ok(Expr::new(Node::Var(kind, index - 1), span))
            }
            _ => Err(ExprError::UnknownIdentifier { name, span }),
        }
    }
}

/// Exact rational arithmetic used to fold exponents.
#[derive(Debug, Clone, Copy)]
struct Rat {
    num: i128,
    den: i128,
}

impl Rat {
    fn new(num: i128, den: i128) -> Option<Rat> {
        if den == 0 {
            return None;
        }
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()).max(1) as i128;
        let s = if den < 0 { -1 } else { 1 };
        Some(Rat {
            num: s * num / g,
            den: s * den / g,
        })
    }

    fn to_rational(self) -> Option<Rational> {
        Some(Rational {
            num: i64::try_from(self.num).ok()?,
            den: i64::try_from(self.den).ok()?,
        })
    }

    fn from_literal(text: &str) -> Option<Rat> {
        let (mantissa, exp) = match text.find(['e', 'E']) {
            Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
            None => (text, 0),
        };
        let (int, frac) = match mantissa.find('.') {
            Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
            None => (mantissa, ""),
        };
        let digits = format!("{int}{frac}");
        let mut num: i128 = if digits.is_empty() {
            0
        } else {
            digits.parse().ok()?
        };
        let mut den: i128 = 10i128.checked_pow(frac.len() as u32)?;
        if exp >= 0 {
            num = num.checked_mul(10i128.checked_pow(exp as u32)?)?;
        } else {
            den = den.checked_mul(10i128.checked_pow((-exp) as u32)?)?;
        }
        Rat::new(num, den)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn fold_rational(e: &Expr) -> Result<Rational, ExprError> {
    fn go(e: &Expr) -> Option<Rat> {
        match &e.node {
            Node::Const(c) => {
                // Recover the literal through the shortest round-trip form.
                Rat::from_literal(&format!("{c:e}"))
            }
            Node::Neg(a) => go(a).map(|r| Rat {
                num: -r.num,
                den: r.den,
            }),
            Node::Binary(op, a, b) => {
                let (a, b) = (go(a)?, go(b)?);
                match op {
                    BinOp::Add => Rat::new(
                        a.num.checked_mul(b.den)? + b.num.checked_mul(a.den)?,
                        a.den.checked_mul(b.den)?,
                    ),
                    BinOp::Sub => Rat::new(
                        a.num.checked_mul(b.den)? - b.num.checked_mul(a.den)?,
                        a.den.checked_mul(b.den)?,
                    ),
                    BinOp::Mul => Rat::new(a.num.checked_mul(b.num)?, a.den.checked_mul(b.den)?),
                    BinOp::Div => Rat::new(a.num.checked_mul(b.den)?, a.den.checked_mul(b.num)?),
                }
            }
            Node::Pow(a, r) if r.is_integer() => {
                let a = go(a)?;
                let e = u32::try_from(r.num.unsigned_abs()).ok()?;
                let (n, d) = (a.num.checked_pow(e)?, a.den.checked_pow(e)?);
                if r.num >= 0 {
                    Rat::new(n, d)
                } else {
                    Rat::new(d, n)
                }
            }
            _ => None,
        }
    }
    go(e)
        .and_then(Rat::to_rational)
        .ok_or_else(|| ExprError::Syntax {
            span: e.span,
            message: "exponent must be a rational constant".into(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Expr {
        Expr::new(Node::Const(v), SourceSpan::new(0, 0))
    }
    fn y(i: usize) -> Expr {
        Expr::new(Node::Var(VarKind::Y, i), SourceSpan::new(0, 0))
    }
    fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::new(
            Node::Binary(op, Box::new(a), Box::new(b)),
            SourceSpan::new(0, 0),
        )
    }

    #[test]
    fn sum_of_squares_tree() {
        let ast = parse("y1^2 + y2^2", 2).unwrap();
        assert_eq!(ast.to_sexpr(), "(+ (^ y1 2) (^ y2 2))");
    }

    #[test]
    fn incomplete_expression_points_at_end() {
        let err = parse("y1 +", 2).unwrap_err();
        match err {
            ExprError::Syntax { span, .. } => assert_eq!(span.start, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn randers_tree() {
        let ast = parse("sqrt(y1^2+y2^2) + 0.5*y1", 2).unwrap();
        assert_eq!(
            ast.to_sexpr(),
            "(+ (sqrt (+ (^ y1 2) (^ y2 2))) (* 0.5 y1))"
        );
        // add, sqrt, add, pow, y1, pow, y2, mul, 0.5, y1
        assert_eq!(ast.node_count(), 10);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(parse("-y1^2", 1).unwrap().to_sexpr(), "(neg (^ y1 2))");
        assert_eq!(parse("y1-y1-y1", 1).unwrap().to_sexpr(), "(- (- y1 y1) y1)");
        assert_eq!(parse("y1/y1*y1", 1).unwrap().to_sexpr(), "(* (/ y1 y1) y1)");
        assert_eq!(parse("2^3^2", 1).unwrap().to_sexpr(), "(^ 2 9)");
        assert_eq!(parse("y1^-2", 1).unwrap().to_sexpr(), "(^ y1 -2)");
        assert_eq!(parse("y1^(1/4)", 1).unwrap().to_sexpr(), "(^ y1 1/4)");
        assert_eq!(parse("pow(y1, 0.75)", 1).unwrap().to_sexpr(), "(^ y1 3/4)");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse("z1 + y1", 2),
            Err(ExprError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            parse("y3", 2),
            Err(ExprError::VariableOutOfRange { .. })
        ));
        assert!(matches!(parse("y1^x1", 2), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("log(0)", 1), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("sqrt(1-1)", 1), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("y1 y2", 2), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("", 2), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("abs(y1)", 1), Err(ExprError::UnknownIdentifier { .. })));
    }

    #[test]
    fn scalar_evaluation() {
        let ast = parse("y1^2+y2^2", 2).unwrap();
        assert_eq!(eval_scalar(&ast, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        let ast = parse("sqrt(y1^2+y2^2)+0.5*y1", 2).unwrap();
        assert_eq!(eval_scalar(&ast, &[0.0, 0.0], &[1.0, 0.0]).unwrap(), 1.5);
    }

    #[test]
    fn domain_errors_carry_span() {
        let ast = parse("log(y1)", 1).unwrap();
        match eval_scalar(&ast, &[0.0], &[-1.0]) {
            Err(ExprError::Domain { op, span, .. }) => {
                assert_eq!(op, "log");
                assert_eq!(span, SourceSpan::new(0, 7));
            }
            other => panic!("unexpected {other:?}"),
        }
        let ast = parse("1 + sqrt(y1)", 1).unwrap();
        match eval_scalar(&ast, &[0.0], &[-4.0]) {
            Err(ExprError::Domain { span, .. }) => assert_eq!(span, SourceSpan::new(4, 12)),
            other => panic!("unexpected {other:?}"),
        }
        let ast = parse("y1^(1/3)", 1).unwrap();
        assert!(eval_scalar(&ast, &[0.0], &[-8.0]).is_err());
        let ast = parse("y1^3", 1).unwrap();
        assert_eq!(eval_scalar(&ast, &[0.0], &[-2.0]).unwrap(), -8.0);
        let ast = parse("1/(y1-1)", 1).unwrap();
        assert!(eval_scalar(&ast, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn parsed_and_hand_built_trees_agree() {
        let hand = bin(
            BinOp::Add,
            Expr::new(
                Node::Call(
                    Func::Sqrt,
                    Box::new(bin(
                        BinOp::Add,
                        Expr::new(
                            Node::Pow(Box::new(y(0)), Rational::new(2, 1).unwrap()),
                            SourceSpan::new(0, 0),
                        ),
                        Expr::new(
                            Node::Pow(Box::new(y(1)), Rational::new(2, 1).unwrap()),
                            SourceSpan::new(0, 0),
                        ),
                    )),
                ),
                SourceSpan::new(0, 0),
            ),
            bin(BinOp::Mul, c(0.5), y(0)),
        );
        let hand = ExprAst::from_root(hand, 2).unwrap();
        let parsed = parse("sqrt(y1^2+y2^2) + 0.5*y1", 2).unwrap();
        let pt = [0.3, -0.2];
        let yv = [0.7, 1.9];
        assert_eq!(
            eval_scalar(&hand, &pt, &yv).unwrap().to_bits(),
            eval_scalar(&parsed, &pt, &yv).unwrap().to_bits()
        );
    }
}
