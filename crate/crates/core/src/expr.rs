//! Algebraic expressions over named variables with reverse-mode derivatives.
//!
//! Model equations are written as plain strings such as `x + exp(x) - y` and
//! compiled into a flat [`Tape`]. A tape evaluates the expression value and,
//! with one reverse sweep, its gradient with respect to every variable slot.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at offset {pos} in `{src}`")]
    UnexpectedChar { src: String, ch: char, pos: usize },
    #[error("unexpected end of expression `{0}`")]
    UnexpectedEnd(String),
    #[error("unexpected token `{token}` in `{src}`")]
    UnexpectedToken { src: String, token: String },
    #[error("unknown symbol `{name}` in `{src}`")]
    UnknownSymbol { src: String, name: String },
    #[error("unknown function `{name}` in `{src}`")]
    UnknownFunction { src: String, name: String },
    #[error("function `{name}` takes {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
}

/// What a bare identifier in an expression refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Symbol {
    Variable(usize),
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Log10,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "log10" => Func::Log10,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn apply(self, a: f64) -> f64 {
        match self {
            Func::Exp => a.exp(),
            Func::Ln => a.ln(),
            Func::Log10 => a.log10(),
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Sqrt => a.sqrt(),
        }
    }

    /// Derivative given the argument and the already computed value.
    fn derivative(self, a: f64, value: f64) -> f64 {
        match self {
            Func::Exp => value,
            Func::Ln => 1.0 / a,
            Func::Log10 => 1.0 / (a * std::f64::consts::LN_10),
            Func::Sin => a.cos(),
            Func::Cos => -a.sin(),
            Func::Sqrt => 0.5 / value,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Log10 => "log10",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }
}

/// Expression tree. Variables are referenced by slot index.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "v{i}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| ExprError::UnexpectedToken {
                src: src.to_string(),
                token: text.clone(),
            })?;
            out.push(Token::Num(value));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            out.push(match c {
                '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                '(' => Token::LParen,
                ')' => Token::RParen,
                ',' => Token::Comma,
                _ => {
                    return Err(ExprError::UnexpectedChar {
                        src: src.to_string(),
                        ch: c,
                        pos: i,
                    })
                }
            });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a, F> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    resolve: F,
}

impl<F: Fn(&str) -> Option<Symbol>> Parser<'_, F> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Token, ExprError> {
        let t = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| ExprError::UnexpectedEnd(self.src.to_string()))?;
        self.pos += 1;
        Ok(t)
    }

    fn unexpected(&self, token: &Token) -> ExprError {
        ExprError::UnexpectedToken {
            src: self.src.to_string(),
            token: format!("{token:?}"),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    // unary := ('-'|'+') unary | power
    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // power := atom ('^' unary)?   (right associative)
    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.next()? {
            Token::Num(v) => Ok(Expr::Const(v)),
            Token::LParen => {
                let e = self.expr()?;
                match self.next()? {
                    Token::RParen => Ok(e),
                    t => Err(self.unexpected(&t)),
                }
            }
            Token::Ident(name) => {
                if let Some(Token::LParen) = self.peek() {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    loop {
                        match self.next()? {
                            Token::Comma => args.push(self.expr()?),
                            Token::RParen => break,
                            t => return Err(self.unexpected(&t)),
                        }
                    }
                    self.call(name, args)
                } else {
                    match (self.resolve)(&name) {
                        Some(Symbol::Variable(i)) => Ok(Expr::Var(i)),
                        Some(Symbol::Constant(c)) => Ok(Expr::Const(c)),
                        None => Err(ExprError::UnknownSymbol {
                            src: self.src.to_string(),
                            name,
                        }),
                    }
                }
            }
            t => Err(self.unexpected(&t)),
        }
    }

    fn call(&self, name: String, mut args: Vec<Expr>) -> Result<Expr, ExprError> {
        if name == "pow" {
            if args.len() != 2 {
                return Err(ExprError::Arity {
                    name,
                    expected: 2,
                    got: args.len(),
                });
            }
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            return Ok(Expr::Pow(Box::new(a), Box::new(b)));
        }
        let func = Func::from_name(&name).ok_or_else(|| ExprError::UnknownFunction {
            src: self.src.to_string(),
            name: name.clone(),
        })?;
        if args.len() != 1 {
            return Err(ExprError::Arity {
                name,
                expected: 1,
                got: args.len(),
            });
        }
        Ok(Expr::Call(func, Box::new(args.pop().unwrap())))
    }
}

/// Parse `src`, resolving identifiers through `resolve`.
pub fn parse<F>(src: &str, resolve: F) -> Result<Expr, ExprError>
where
    F: Fn(&str) -> Option<Symbol>,
{
    let tokens = tokenize(src)?;
    let mut parser = Parser {
        src,
        tokens,
        pos: 0,
        resolve,
    };
    let e = parser.expr()?;
    if let Some(t) = parser.peek().cloned() {
        return Err(parser.unexpected(&t));
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    PowConst(usize, f64),
    Pow(usize, usize),
    Call(Func, usize),
}

/// Compiled expression in topological order; the last node is the result.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    num_vars: usize,
}

impl Tape {
    pub fn compile(expr: &Expr, num_vars: usize) -> Self {
        let mut nodes = Vec::new();
        push_node(expr, &mut nodes);
        Tape { nodes, num_vars }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Variable slots the expression actually reads.
    pub fn referenced_vars(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Var(i) => Some(*i),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn forward(&self, vars: &[f64], vals: &mut Vec<f64>) {
        debug_assert_eq!(vars.len(), self.num_vars);
        vals.clear();
        for node in &self.nodes {
            let v = match *node {
                Node::Const(c) => c,
                Node::Var(i) => vars[i],
                Node::Neg(a) => -vals[a],
                Node::Add(a, b) => vals[a] + vals[b],
                Node::Sub(a, b) => vals[a] - vals[b],
                Node::Mul(a, b) => vals[a] * vals[b],
                Node::Div(a, b) => vals[a] / vals[b],
                Node::PowConst(a, p) => powc(vals[a], p),
                Node::Pow(a, b) => vals[a].powf(vals[b]),
                Node::Call(f, a) => f.apply(vals[a]),
            };
            vals.push(v);
        }
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        let mut vals = Vec::with_capacity(self.nodes.len());
        self.forward(vars, &mut vals);
        *vals.last().unwrap()
    }

    /// Value and gradient; `grad` is overwritten.
    pub fn eval_grad(&self, vars: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.num_vars);
        let mut vals = Vec::with_capacity(self.nodes.len());
        self.forward(vars, &mut vals);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut adj = vec![0.0; self.nodes.len()];
        let last = self.nodes.len() - 1;
        adj[last] = 1.0;
        for k in (0..self.nodes.len()).rev() {
            let a_k = adj[k];
            if a_k == 0.0 {
                continue;
            }
            match self.nodes[k] {
                Node::Const(_) => {}
                Node::Var(i) => grad[i] += a_k,
                Node::Neg(a) => adj[a] -= a_k,
                Node::Add(a, b) => {
                    adj[a] += a_k;
                    adj[b] += a_k;
                }
                Node::Sub(a, b) => {
                    adj[a] += a_k;
                    adj[b] -= a_k;
                }
                Node::Mul(a, b) => {
                    adj[a] += a_k * vals[b];
                    adj[b] += a_k * vals[a];
                }
                Node::Div(a, b) => {
                    adj[a] += a_k / vals[b];
                    adj[b] -= a_k * vals[a] / (vals[b] * vals[b]);
                }
                Node::PowConst(a, p) => {
                    if p != 0.0 {
                        adj[a] += a_k * p * powc(vals[a], p - 1.0);
                    }
                }
                Node::Pow(a, b) => {
                    let (x, y) = (vals[a], vals[b]);
                    adj[a] += a_k * y * x.powf(y - 1.0);
                    adj[b] += a_k * vals[k] * x.ln();
                }
                Node::Call(f, a) => adj[a] += a_k * f.derivative(vals[a], vals[k]),
            }
        }
        vals[last]
    }
}

fn powc(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

fn push_node(expr: &Expr, nodes: &mut Vec<Node>) -> usize {
    let node = match expr {
        Expr::Const(c) => Node::Const(*c),
        Expr::Var(i) => Node::Var(*i),
        Expr::Neg(a) => {
            let a = push_node(a, nodes);
            match nodes[a] {
                Node::Const(c) => {
                    nodes.pop();
                    Node::Const(-c)
                }
                _ => Node::Neg(a),
            }
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            let ia = push_node(a, nodes);
            let ib = push_node(b, nodes);
            if let (Node::Const(x), Node::Const(y)) = (nodes[ia], nodes[ib]) {
                nodes.truncate(ia);
                let v = match expr {
                    Expr::Add(..) => x + y,
                    Expr::Sub(..) => x - y,
                    Expr::Mul(..) => x * y,
                    _ => x / y,
                };
                Node::Const(v)
            } else {
                match expr {
                    Expr::Add(..) => Node::Add(ia, ib),
                    Expr::Sub(..) => Node::Sub(ia, ib),
                    Expr::Mul(..) => Node::Mul(ia, ib),
                    _ => Node::Div(ia, ib),
                }
            }
        }
        Expr::Pow(a, b) => {
            let ia = push_node(a, nodes);
            let ib = push_node(b, nodes);
            match (nodes[ia], nodes[ib]) {
                (Node::Const(x), Node::Const(p)) => {
                    nodes.truncate(ia);
                    Node::Const(powc(x, p))
                }
                (_, Node::Const(p)) => {
                    nodes.pop();
                    Node::PowConst(ia, p)
                }
                _ => Node::Pow(ia, ib),
            }
        }
        Expr::Call(f, a) => {
            let ia = push_node(a, nodes);
            if let Node::Const(x) = nodes[ia] {
                nodes.pop();
                Node::Const(f.apply(x))
            } else {
                Node::Call(*f, ia)
            }
        }
    };
    nodes.push(node);
    nodes.len() - 1
}
