//! A small expression language for coefficient fields and payoffs.
//!
//! Grammar (usual precedence, `^` binds tightest and is right-associative):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '(' args ')' | '(' expr ')' | '|' expr '|'
//! ```
//!
//! Names resolve to the time `t`, parameters `f`/`f1..fk`, the current state
//! `X`/`X1..Xd`, path taps `X(t - c)` / `Xi(t - c)` with a constant lag `c ≥ 0`,
//! named constants, and caller-declared extra variables (e.g. `max_X`).
//! Functions: `abs`, `min`, `max`.
//!
//! Only continuous fields are expressible: divisors and exponents must be
//! constant, negative exponents are rejected, and fractional exponents need an
//! absolute-value base.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::path::PathView;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Var {
    Time,
    Param(usize),
    State(usize),
    Tap { comp: usize, lag: f64 },
    Extra(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Pow(Box<Node>, f64),
    Abs(Box<Node>),
    Min(Vec<Node>),
    Max(Vec<Node>),
}

/// Names available to an expression.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    pub n_params: usize,
    pub dim: usize,
    pub allow_time: bool,
    pub allow_taps: bool,
    pub constants: BTreeMap<String, f64>,
    pub extras: Vec<String>,
}

/// Values bound to the names of a [`Scope`] at evaluation time.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub params: &'a [f64],
    pub path: Option<PathView<'a>>,
    pub state: &'a [f64],
    pub extras: &'a [f64],
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str, scope: &Scope) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            scope,
        };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected `{}` in `{source}`",
                p.tokens[p.pos]
            )));
        }
        Ok(Expr {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, env: &Env<'_>) -> f64 {
        eval(&self.root, env)
    }

    pub fn uses_state(&self) -> bool {
        any_var(&self.root, &|v| matches!(v, Var::State(_) | Var::Tap { .. }))
    }

    /// True when some tap looks strictly into the past.
    pub fn uses_lagged_taps(&self) -> bool {
        any_var(&self.root, &|v| matches!(v, Var::Tap { lag, .. } if *lag > 0.0))
    }

    /// True when some caller-declared extra variable appears.
    pub fn uses_extras(&self) -> bool {
        any_var(&self.root, &|v| matches!(v, Var::Extra(_)))
    }

    pub fn uses_time(&self) -> bool {
        any_var(&self.root, &|v| matches!(v, Var::Time))
    }

    /// Largest tap lag referenced (0 when none).
    pub fn max_lag(&self) -> f64 {
        let mut lag = 0.0_f64;
        visit_vars(&self.root, &mut |v| {
            if let Var::Tap { lag: l, .. } = v {
                lag = lag.max(*l);
            }
        });
        lag
    }
}

fn any_var(node: &Node, pred: &dyn Fn(&Var) -> bool) -> bool {
    let mut hit = false;
    visit_vars(node, &mut |v| hit |= pred(v));
    hit
}

fn visit_vars(node: &Node, f: &mut dyn FnMut(&Var)) {
    match node {
        Node::Const(_) => {}
        Node::Var(v) => f(v),
        Node::Neg(a) | Node::Abs(a) | Node::Pow(a, _) => visit_vars(a, f),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) => {
            visit_vars(a, f);
            visit_vars(b, f);
        }
        Node::Min(xs) | Node::Max(xs) => xs.iter().for_each(|x| visit_vars(x, f)),
    }
}

fn eval(node: &Node, env: &Env<'_>) -> f64 {
    match node {
        Node::Const(c) => *c,
        Node::Var(v) => match *v {
            Var::Time => env.t,
            Var::Param(i) => env.params[i],
            Var::State(i) => env.state[i],
            Var::Tap { comp, lag } => match env.path {
                Some(p) => p.component_at(comp, (env.t - lag).max(0.0)),
                None => env.state[comp],
            },
            Var::Extra(i) => env.extras[i],
        },
        Node::Neg(a) => -eval(a, env),
        Node::Add(a, b) => eval(a, env) + eval(b, env),
        Node::Sub(a, b) => eval(a, env) - eval(b, env),
        Node::Mul(a, b) => eval(a, env) * eval(b, env),
        Node::Pow(a, p) => {
            let base = eval(a, env);
            if p.fract() == 0.0 && p.abs() <= 64.0 {
                base.powi(*p as i32)
            } else {
                base.powf(*p)
            }
        }
        Node::Abs(a) => eval(a, env).abs(),
        Node::Min(xs) => xs.iter().map(|x| eval(x, env)).fold(f64::INFINITY, f64::min),
        Node::Max(xs) => xs
            .iter()
            .map(|x| eval(x, env))
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

fn const_value(node: &Node) -> Option<f64> {
    match node {
        Node::Const(c) => Some(*c),
        Node::Var(_) => None,
        Node::Neg(a) => const_value(a).map(|v| -v),
        Node::Add(a, b) => Some(const_value(a)? + const_value(b)?),
        Node::Sub(a, b) => Some(const_value(a)? - const_value(b)?),
        Node::Mul(a, b) => Some(const_value(a)? * const_value(b)?),
        Node::Pow(a, p) => Some(const_value(a)?.powf(*p)),
        Node::Abs(a) => const_value(a).map(f64::abs),
        Node::Min(xs) => xs
            .iter()
            .map(const_value)
            .try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v))),
        Node::Max(xs) => xs
            .iter()
            .map(const_value)
            .try_fold(f64::NEG_INFINITY, |acc, v| v.map(|v| acc.max(v))),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Token::Num(v) => write!(f, "{v}"),
            Token::Ident(s) => write!(f, "{s}"),
            Token::Op(c) => write!(f, "{c}"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
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
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number `{text}`")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),|".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character `{c}` in `{src}`")));
        }
    }
    Ok(out)
}

struct Parser<'s> {
    tokens: Vec<Token>,
    pos: usize,
    scope: &'s Scope,
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expr(format!(
                "expected `{op}`, found {}",
                self.tokens
                    .get(self.pos)
                    .map(|t| format!("`{t}`"))
                    .unwrap_or_else(|| "end of input".into())
            )))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                let c = const_value(&rhs)
                    .ok_or_else(|| Error::Expr("divisor must be a constant".into()))?;
                if c == 0.0 {
                    return Err(Error::Expr("division by zero".into()));
                }
                Node::Mul(Box::new(lhs), Box::new(Node::Const(1.0 / c)))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_op() != Some('^') {
            return Ok(base);
        }
        self.pos += 1;
        let exp_node = self.unary()?;
        let p = const_value(&exp_node)
            .ok_or_else(|| Error::Expr("exponent must be a constant".into()))?;
        if let Some(b) = const_value(&base) {
            return Ok(Node::Const(b.powf(p)));
        }
        if p < 0.0 {
            return Err(Error::Expr(
                "negative exponents of non-constant expressions are not allowed".into(),
            ));
        }
        if p.fract() != 0.0 && !matches!(base, Node::Abs(_)) {
            return Err(Error::Expr(
                "fractional exponents need an absolute-value base, e.g. |X|^0.5".into(),
            ));
        }
        Ok(Node::Pow(Box::new(base), p))
    }

    fn atom(&mut self) -> Result<Node> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Expr("unexpected end of input".into()))?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Node::Const(v)),
            Token::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Token::Op('|') => {
                let e = self.expr()?;
                self.expect('|')?;
                Ok(Node::Abs(Box::new(e)))
            }
            Token::Ident(name) => {
                if self.peek_op() == Some('(') {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek_op() == Some(',') {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    self.call(&name, args)
                } else {
                    self.name(&name)
                }
            }
            Token::Op(c) => Err(Error::Expr(format!("unexpected `{c}`"))),
        }
    }

    fn state_component(&self, name: &str) -> Option<usize> {
        let rest = name.strip_prefix('X')?;
        if rest.is_empty() {
            return (self.scope.dim == 1).then_some(0);
        }
        let i: usize = rest.parse().ok()?;
        (1..=self.scope.dim).contains(&i).then(|| i - 1)
    }

    fn name(&self, name: &str) -> Result<Node> {
        if name == "t" {
            if !self.scope.allow_time {
                return Err(Error::Expr("`t` is not available here".into()));
            }
            return Ok(Node::Var(Var::Time));
        }
        if let Some(i) = self.scope.extras.iter().position(|e| e == name) {
            return Ok(Node::Var(Var::Extra(i)));
        }
        if let Some(c) = self.scope.constants.get(name) {
            return Ok(Node::Const(*c));
        }
        if let Some(i) = self.state_component(name) {
            return Ok(Node::Var(Var::State(i)));
        }
        if let Some(rest) = name.strip_prefix('f') {
            if rest.is_empty() && self.scope.n_params == 1 {
                return Ok(Node::Var(Var::Param(0)));
            }
            if let Ok(i) = rest.parse::<usize>() {
                if (1..=self.scope.n_params).contains(&i) {
                    return Ok(Node::Var(Var::Param(i - 1)));
                }
            }
        }
        Err(Error::Expr(format!("unknown name `{name}`")))
    }

    fn call(&self, name: &str, mut args: Vec<Node>) -> Result<Node> {
        match name {
            "abs" if args.len() == 1 => Ok(Node::Abs(Box::new(args.remove(0)))),
            "min" if !args.is_empty() => Ok(Node::Min(args)),
            "max" if !args.is_empty() => Ok(Node::Max(args)),
            "abs" | "min" | "max" => Err(Error::Expr(format!("wrong arity for `{name}`"))),
            _ => {
                let comp = self
                    .state_component(name)
                    .ok_or_else(|| Error::Expr(format!("unknown function `{name}`")))?;
                if args.len() != 1 {
                    return Err(Error::Expr(format!("tap `{name}(..)` takes one argument")));
                }
                let lag = tap_lag(&args[0]).ok_or_else(|| {
                    Error::Expr(format!("tap `{name}(..)` must be of the form t or t - c"))
                })?;
                if lag < 0.0 {
                    return Err(Error::Expr("taps cannot look into the future".into()));
                }
                if lag > 0.0 && !self.scope.allow_taps {
                    return Err(Error::Expr("lagged taps are not available here".into()));
                }
                if lag == 0.0 {
                    Ok(Node::Var(Var::State(comp)))
                } else {
                    Ok(Node::Var(Var::Tap { comp, lag }))
                }
            }
        }
    }
}

fn tap_lag(arg: &Node) -> Option<f64> {
    match arg {
        Node::Var(Var::Time) => Some(0.0),
        Node::Sub(a, b) if matches!(**a, Node::Var(Var::Time)) => const_value(b),
        Node::Add(a, b) if matches!(**a, Node::Var(Var::Time)) => const_value(b).map(|c| -c),
        Node::Add(a, b) if matches!(**b, Node::Var(Var::Time)) => const_value(a).map(|c| -c),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::Path;

    fn scope() -> Scope {
        Scope {
            n_params: 2,
            dim: 1,
            allow_time: true,
            allow_taps: true,
            constants: BTreeMap::from([("tau".to_string(), 0.5)]),
            extras: vec![],
        }
    }

    fn eval_at(src: &str, x: f64, f: &[f64]) -> f64 {
        let e = Expr::parse(src, &scope()).unwrap();
        e.eval(&Env {
            t: 0.0,
            params: f,
            path: None,
            state: &[x],
            extras: &[],
        })
    }

    #[test]
    fn precedence_and_functions() {
        assert_eq!(eval_at("1 + 2 * 3 ^ 2", 0.0, &[0.0, 0.0]), 19.0);
        assert_eq!(eval_at("-2^2", 0.0, &[0.0, 0.0]), -4.0);
        assert_eq!(eval_at("f1 * |X|^0.5", 4.0, &[1.5, 0.0]), 3.0);
        assert_eq!(eval_at("max(X - 1, 0) + min(f1, f2, 7)", 3.0, &[5.0, 2.0]), 4.0);
        assert_eq!(eval_at("X / 4", 2.0, &[0.0, 0.0]), 0.5);
        assert_eq!(eval_at("1e-2 * X", 3.0, &[0.0, 0.0]), 0.03);
    }

    #[test]
    fn taps_read_the_past() {
        let e = Expr::parse("X(t) - X(t - tau)", &scope()).unwrap();
        assert!(e.uses_lagged_taps());
        assert_eq!(e.max_lag(), 0.5);
        let p = Path {
            dt: 0.25,
            dim: 1,
            data: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        };
        let v = e.eval(&Env {
            t: 1.0,
            params: &[0.0, 0.0],
            path: Some(p.view()),
            state: &[4.0],
            extras: &[],
        });
        assert_eq!(v, 2.0);
    }

    #[test]
    fn rejects_discontinuous_constructs() {
        let s = scope();
        assert!(Expr::parse("1 / X", &s).is_err());
        assert!(Expr::parse("X^0.5", &s).is_err());
        assert!(Expr::parse("|X|^-1", &s).is_err());
        assert!(Expr::parse("X(t + 1)", &s).is_err());
        assert!(Expr::parse("foo", &s).is_err());
        assert!(Expr::parse("(X", &s).is_err());
        assert!(Expr::parse("f3", &s).is_err());
    }
}
