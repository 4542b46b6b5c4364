//! The ComplexOR expression mini-language.
//!
//! Domains look like `{i <in> I, j <in> J}` and functions like
//! `<sum>_{i <in> I} s_{i} * x_{i,j} <= c * y_{j}`. A `<sum>` captures the
//! maximal multiplicative term that follows it unless parenthesized.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

/// `index_var <in> set_name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainBinding {
    pub index_var: String,
    pub set_name: String,
}

impl DomainBinding {
    pub fn new(index_var: impl Into<String>, set_name: impl Into<String>) -> Self {
        DomainBinding {
            index_var: index_var.into(),
            set_name: set_name.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            ArithOp::Add | ArithOp::Sub => 1,
            ArithOp::Mul | ArithOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelOp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl RelOp {
    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Le => "<=",
            RelOp::Ge => ">=",
            RelOp::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Number(f64),
    Symbol {
        name: String,
        subscripts: Vec<String>,
    },
    Sum {
        bindings: Vec<DomainBinding>,
        body: Box<ExprNode>,
    },
    Arith {
        op: ArithOp,
        left: Box<ExprNode>,
        right: Box<ExprNode>,
    },
    Relation {
        op: RelOp,
        left: Box<ExprNode>,
        right: Box<ExprNode>,
    },
    Neg(Box<ExprNode>),
}

impl ExprNode {
    pub fn symbol(name: &str, subscripts: &[&str]) -> Self {
        ExprNode::Symbol {
            name: name.to_string(),
            subscripts: subscripts.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn arith(op: ArithOp, left: ExprNode, right: ExprNode) -> Self {
        ExprNode::Arith {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn relation(op: RelOp, left: ExprNode, right: ExprNode) -> Self {
        ExprNode::Relation {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn sum(bindings: Vec<DomainBinding>, body: ExprNode) -> Self {
        ExprNode::Sum {
            bindings,
            body: Box::new(body),
        }
    }

    pub fn is_relation(&self) -> bool {
        matches!(self, ExprNode::Relation { .. })
    }

    /// Visit every symbol reference together with the index variables bound
    /// by enclosing sums at that point.
    pub fn visit_symbols<'a, F>(&'a self, f: &mut F)
    where
        F: FnMut(&'a str, &'a [String], &[&'a str]),
    {
        fn walk<'a, F>(node: &'a ExprNode, bound: &mut Vec<&'a str>, f: &mut F)
        where
            F: FnMut(&'a str, &'a [String], &[&'a str]),
        {
            match node {
                ExprNode::Number(_) => {}
                ExprNode::Symbol { name, subscripts } => f(name, subscripts, bound),
                ExprNode::Sum { bindings, body } => {
                    let mark = bound.len();
                    bound.extend(bindings.iter().map(|b| b.index_var.as_str()));
                    walk(body, bound, f);
                    bound.truncate(mark);
                }
                ExprNode::Arith { left, right, .. } | ExprNode::Relation { left, right, .. } => {
                    walk(left, bound, f);
                    walk(right, bound, f);
                }
                ExprNode::Neg(child) => walk(child, bound, f),
            }
        }
        walk(self, &mut Vec::new(), f)
    }

    /// Every binding introduced by a `<sum>` anywhere in the tree.
    pub fn sum_bindings(&self) -> Vec<&DomainBinding> {
        let mut out = Vec::new();
        fn walk<'a>(node: &'a ExprNode, out: &mut Vec<&'a DomainBinding>) {
            match node {
                ExprNode::Sum { bindings, body } => {
                    out.extend(bindings.iter());
                    walk(body, out);
                }
                ExprNode::Arith { left, right, .. } | ExprNode::Relation { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
                ExprNode::Neg(child) => walk(child, out),
                ExprNode::Number(_) | ExprNode::Symbol { .. } => {}
            }
        }
        walk(self, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message} at position {position}")]
pub struct ParseError {
    pub message: String,
    pub position: usize,
}

impl ParseError {
    fn new(message: impl Into<String>, position: usize) -> Self {
        ParseError {
            message: message.into(),
            position,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Ident(String),
    SubOpen,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Colon,
    In,
    SumKw,
    Plus,
    Minus,
    Star,
    Slash,
    Le,
    Ge,
    Eq,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Number(v) => write!(f, "number {v}"),
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::SubOpen => f.write_str("`_{`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::In => f.write_str("`<in>`"),
            Tok::SumKw => f.write_str("`<sum>`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Le => f.write_str("`<=`"),
            Tok::Ge => f.write_str("`>=`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let mut toks = Vec::new();
    let bytes = text.as_bytes();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let rest = &text[pos..];
        let (tok, len) = if rest.starts_with("<in>") {
            (Tok::In, 4)
        } else if rest.starts_with("<sum>") {
            (Tok::SumKw, 5)
        } else if rest.starts_with("<=") {
            (Tok::Le, 2)
        } else if rest.starts_with(">=") {
            (Tok::Ge, 2)
        } else if rest.starts_with("_{") {
            (Tok::SubOpen, 2)
        } else if c.is_ascii_digit() || (c == '.' && bytes.get(pos + 1).is_some_and(u8::is_ascii_digit)) {
            let mut end = pos;
            let mut seen_dot = false;
            let mut seen_exp = false;
            let mut prev = ' ';
            for (i, ch) in rest.char_indices() {
                let ok = ch.is_ascii_digit()
                    || (ch == '.' && !seen_dot && !seen_exp)
                    || ((ch == 'e' || ch == 'E') && !seen_exp && i > 0)
                    || ((ch == '+' || ch == '-') && (prev == 'e' || prev == 'E'));
                if !ok {
                    break;
                }
                if ch == '.' {
                    seen_dot = true;
                }
                if ch == 'e' || ch == 'E' {
                    seen_exp = true;
                }
                prev = ch;
                end = pos + i + ch.len_utf8();
            }
            let lit = &text[pos..end];
            let v: f64 = lit
                .parse()
                .map_err(|_| ParseError::new(format!("invalid number `{lit}`"), pos))?;
            (Tok::Number(v), end - pos)
        } else if is_ident_start(c) {
            let mut end = pos;
            for (i, ch) in rest.char_indices() {
                if !is_ident_continue(ch) {
                    break;
                }
                // `_{` starts a subscript list, it is not part of the name.
                if ch == '_' && rest[i + 1..].starts_with('{') {
                    break;
                }
                end = pos + i + ch.len_utf8();
            }
            (Tok::Ident(text[pos..end].to_string()), end - pos)
        } else {
            let tok = match c {
                '{' => Tok::LBrace,
                '}' => Tok::RBrace,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                ':' => Tok::Colon,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                '=' => Tok::Eq,
                '<' | '>' => return Err(ParseError::new(format!("strict inequality `{c}` is not supported"), pos)),
                _ => return Err(ParseError::new(format!("unknown token `{c}`"), pos)),
            };
            (tok, c.len_utf8())
        };
        toks.push((tok, pos));
        let target = pos + len;
        while chars.peek().is_some_and(|&(p, _)| p < target) {
            chars.next();
        }
    }
    toks.push((Tok::End, text.len()));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: lex(text)?,
            at: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(ParseError::new(
                format!("expected {what}, found {}", self.peek()),
                self.pos(),
            ))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(name)
            }
            other => Err(ParseError::new(
                format!("expected {what}, found {other}"),
                self.pos(),
            )),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::End => Ok(()),
            other => Err(ParseError::new(
                format!("unexpected trailing {other}"),
                self.pos(),
            )),
        }
    }

    /// Parses `i <in> I, j <in> J` up to (not including) the closing brace.
    fn bindings(&mut self) -> Result<Vec<DomainBinding>, ParseError> {
        let mut out = Vec::new();
        loop {
            let index_var = self.ident("index variable")?;
            if *self.peek() != Tok::In {
                return Err(ParseError::new(
                    format!("expected `<in>` after `{index_var}`, found {}", self.peek()),
                    self.pos(),
                ));
            }
            self.bump();
            let set_name = self.ident("set name")?;
            out.push(DomainBinding { index_var, set_name });
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::Colon => {
                    return Err(ParseError::new(
                        "conditional domains are not supported",
                        self.pos(),
                    ))
                }
                _ => return Ok(out),
            }
        }
    }

    fn domain(&mut self) -> Result<Vec<DomainBinding>, ParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        let b = self.bindings()?;
        self.expect(Tok::RBrace, "`}`")?;
        Ok(b)
    }

    fn relation(&mut self) -> Result<ExprNode, ParseError> {
        let left = self.additive()?;
        let op = match self.peek() {
            Tok::Le => RelOp::Le,
            Tok::Ge => RelOp::Ge,
            Tok::Eq => RelOp::Eq,
            _ => return Ok(left),
        };
        self.bump();
        let right = self.additive()?;
        if matches!(self.peek(), Tok::Le | Tok::Ge | Tok::Eq) {
            return Err(ParseError::new("chained relations are not supported", self.pos()));
        }
        Ok(ExprNode::relation(op, left, right))
    }

    fn additive(&mut self) -> Result<ExprNode, ParseError> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => return Ok(left),
            };
            self.bump();
            let right = self.multiplicative()?;
            left = ExprNode::arith(op, left, right);
        }
    }

    fn multiplicative(&mut self) -> Result<ExprNode, ParseError> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => ArithOp::Mul,
                Tok::Slash => ArithOp::Div,
                _ => return Ok(left),
            };
            self.bump();
            let right = self.unary()?;
            left = ExprNode::arith(op, left, right);
        }
    }

    fn unary(&mut self) -> Result<ExprNode, ParseError> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(ExprNode::Neg(Box::new(self.unary()?)))
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<ExprNode, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Number(v) => Ok(ExprNode::Number(v)),
            Tok::Ident(name) => {
                let mut subscripts = Vec::new();
                if *self.peek() == Tok::SubOpen {
                    self.bump();
                    if *self.peek() == Tok::RBrace {
                        return Err(ParseError::new("empty subscript list", self.pos()));
                    }
                    loop {
                        match self.peek().clone() {
                            Tok::Ident(s) => {
                                self.bump();
                                subscripts.push(s);
                            }
                            Tok::Number(_) => {
                                return Err(ParseError::new(
                                    "literal subscripts are not supported",
                                    self.pos(),
                                ))
                            }
                            other => {
                                return Err(ParseError::new(
                                    format!("expected index variable, found {other}"),
                                    self.pos(),
                                ))
                            }
                        }
                        match self.peek() {
                            Tok::Comma => {
                                self.bump();
                            }
                            _ => break,
                        }
                    }
                    self.expect(Tok::RBrace, "`}` closing subscript list")?;
                }
                Ok(ExprNode::Symbol { name, subscripts })
            }
            Tok::SumKw => {
                if *self.peek() != Tok::SubOpen {
                    return Err(ParseError::new(
                        format!("expected `_{{` after `<sum>`, found {}", self.peek()),
                        self.pos(),
                    ));
                }
                self.bump();
                let bindings = self.bindings()?;
                self.expect(Tok::RBrace, "`}` closing sum domain")?;
                let body = self.multiplicative()?;
                Ok(ExprNode::sum(bindings, body))
            }
            Tok::LParen => {
                let inner = self.additive()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            other => Err(ParseError::new(format!("unexpected {other}"), pos)),
        }
    }
}

/// Parses a domain string such as `{i <in> I, j <in> I}`.
pub fn parse_domain(text: &str) -> Result<Vec<DomainBinding>, ParseError> {
    let mut p = Parser::new(text)?;
    let b = p.domain()?;
    p.finish()?;
    Ok(b)
}

/// Parses a function string. Relations may appear only at the root.
pub fn parse_expr(text: &str) -> Result<ExprNode, ParseError> {
    let mut p = Parser::new(text)?;
    if *p.peek() == Tok::End {
        return Err(ParseError::new("empty expression", 0));
    }
    let node = p.relation()?;
    p.finish()?;
    Ok(node)
}

pub fn render_domain(bindings: &[DomainBinding]) -> String {
    format!("{{{}}}", render_bindings(bindings))
}

fn render_bindings(bindings: &[DomainBinding]) -> String {
    bindings
        .iter()
        .map(|b| format!("{} <in> {}", b.index_var, b.set_name))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Renders in the corpus surface syntax; `parse_expr(render(e)) == e`.
pub fn render(node: &ExprNode) -> String {
    let mut out = String::new();
    render_into(node, &mut out);
    out
}

fn prec(node: &ExprNode) -> u8 {
    match node {
        ExprNode::Relation { .. } => 0,
        ExprNode::Arith { op, .. } => op.precedence(),
        ExprNode::Neg(_) => 3,
        _ => 4,
    }
}

// True when the rendered node ends in a `<sum>` whose body would absorb a
// following `*` or `/`.
fn ends_with_open_sum(node: &ExprNode) -> bool {
    match node {
        ExprNode::Sum { .. } => true,
        ExprNode::Arith {
            op: ArithOp::Mul | ArithOp::Div,
            right,
            ..
        } => ends_with_open_sum(right),
        ExprNode::Neg(child) => ends_with_open_sum(child),
        _ => false,
    }
}

fn render_wrapped(node: &ExprNode, wrap: bool, out: &mut String) {
    if wrap {
        out.push('(');
        render_into(node, out);
        out.push(')');
    } else {
        render_into(node, out);
    }
}

fn render_into(node: &ExprNode, out: &mut String) {
    match node {
        ExprNode::Number(v) => out.push_str(&format_number(*v)),
        ExprNode::Symbol { name, subscripts } => {
            out.push_str(name);
            if !subscripts.is_empty() {
                out.push_str("_{");
                out.push_str(&subscripts.join(","));
                out.push('}');
            }
        }
        ExprNode::Sum { bindings, body } => {
            out.push_str("<sum>_{");
            out.push_str(&render_bindings(bindings));
            out.push_str("} ");
            render_wrapped(body, prec(body) < 2, out);
        }
        ExprNode::Arith { op, left, right } => {
            let p = op.precedence();
            let wrap_left = prec(left) < p || (p == 2 && ends_with_open_sum(left));
            render_wrapped(left, wrap_left, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            render_wrapped(right, prec(right) <= p, out);
        }
        ExprNode::Relation { op, left, right } => {
            render_wrapped(left, prec(left) == 0, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            render_wrapped(right, prec(right) == 0, out);
        }
        ExprNode::Neg(child) => {
            out.push('-');
            render_wrapped(child, prec(child) < 3, out);
        }
    }
}

fn format_number(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// One assignment of index variables to set elements.
pub type Assignment = BTreeMap<String, i64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unknown set `{0}`")]
    UnknownSet(String),
    #[error("missing value for `{name}` at index {index:?}")]
    MissingSymbol { name: String, index: Vec<i64> },
    #[error("index variable `{0}` is not bound")]
    UnboundIndex(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("a relation has no numeric value")]
    Relation,
}

/// Cartesian product of the bound sets, varying the last binding fastest.
pub fn expand_domain(
    bindings: &[DomainBinding],
    sets: &HashMap<String, Vec<i64>>,
) -> Result<Vec<Assignment>, EvalError> {
    let mut out = vec![Assignment::new()];
    for b in bindings {
        let elems = sets
            .get(&b.set_name)
            .ok_or_else(|| EvalError::UnknownSet(b.set_name.clone()))?;
        let mut next = Vec::with_capacity(out.len() * elems.len());
        for partial in &out {
            for &e in elems {
                let mut a = partial.clone();
                a.insert(b.index_var.clone(), e);
                next.push(a);
            }
        }
        out = next;
    }
    Ok(out)
}

/// Values the evaluator can look up.
pub trait Environment {
    fn set_elements(&self, set: &str) -> Option<&[i64]>;
    fn value(&self, name: &str, index: &[i64]) -> Option<f64>;
}

/// A plain map-backed environment.
#[derive(Debug, Clone, Default)]
pub struct MapEnv {
    pub sets: HashMap<String, Vec<i64>>,
    pub values: HashMap<(String, Vec<i64>), f64>,
}

impl MapEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_set(mut self, name: &str, elems: Vec<i64>) -> Self {
        self.sets.insert(name.to_string(), elems);
        self
    }

    pub fn set_value(&mut self, name: &str, index: Vec<i64>, v: f64) {
        self.values.insert((name.to_string(), index), v);
    }
}

impl Environment for MapEnv {
    fn set_elements(&self, set: &str) -> Option<&[i64]> {
        self.sets.get(set).map(Vec::as_slice)
    }

    fn value(&self, name: &str, index: &[i64]) -> Option<f64> {
        self.values.get(&(name.to_string(), index.to_vec())).copied()
    }
}

pub(crate) fn expand_in_env(
    bindings: &[DomainBinding],
    env: &dyn Environment,
    scope: &Assignment,
) -> Result<Vec<Assignment>, EvalError> {
    let mut out = vec![scope.clone()];
    for b in bindings {
        let elems = env
            .set_elements(&b.set_name)
            .ok_or_else(|| EvalError::UnknownSet(b.set_name.clone()))?;
        let mut next = Vec::with_capacity(out.len() * elems.len());
        for partial in &out {
            for &e in elems {
                let mut a = partial.clone();
                a.insert(b.index_var.clone(), e);
                next.push(a);
            }
        }
        out = next;
    }
    Ok(out)
}

pub(crate) fn resolve_index(
    subscripts: &[String],
    scope: &Assignment,
) -> Result<Vec<i64>, EvalError> {
    subscripts
        .iter()
        .map(|s| scope.get(s).copied().ok_or_else(|| EvalError::UnboundIndex(s.clone())))
        .collect()
}

pub fn evaluate(node: &ExprNode, env: &dyn Environment) -> Result<f64, EvalError> {
    evaluate_in(node, env, &Assignment::new())
}

/// Evaluates with `scope` supplying the host domain's index values. A bare
/// symbol naming a bound index variable evaluates to its current element.
pub fn evaluate_in(
    node: &ExprNode,
    env: &dyn Environment,
    scope: &Assignment,
) -> Result<f64, EvalError> {
    match node {
        ExprNode::Number(v) => Ok(*v),
        ExprNode::Symbol { name, subscripts } => {
            if subscripts.is_empty() {
                if let Some(&v) = scope.get(name) {
                    return Ok(v as f64);
                }
            }
            let index = resolve_index(subscripts, scope)?;
            env.value(name, &index).ok_or(EvalError::MissingSymbol {
                name: name.clone(),
                index,
            })
        }
        ExprNode::Sum { bindings, body } => {
            let mut total = 0.0;
            for a in expand_in_env(bindings, env, scope)? {
                total += evaluate_in(body, env, &a)?;
            }
            Ok(total)
        }
        ExprNode::Arith { op, left, right } => {
            let l = evaluate_in(left, env, scope)?;
            let r = evaluate_in(right, env, scope)?;
            match op {
                ArithOp::Add => Ok(l + r),
                ArithOp::Sub => Ok(l - r),
                ArithOp::Mul => Ok(l * r),
                ArithOp::Div => {
                    if r == 0.0 {
                        Err(EvalError::DivisionByZero)
                    } else {
                        Ok(l / r)
                    }
                }
            }
        }
        ExprNode::Relation { .. } => Err(EvalError::Relation),
        ExprNode::Neg(child) => Ok(-evaluate_in(child, env, scope)?),
    }
}
