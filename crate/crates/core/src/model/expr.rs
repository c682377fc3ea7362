//! A small expression language for scenario functions.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, decimal numbers, named
//! variables and the functions `tanh`, `exp`, `sin`, `cos`, `sqrt`. The
//! exponent of `^` must be a constant. Gradients are accumulated by a walk
//! over the parse tree; there is no symbolic differentiation.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, f64),
    Call(Func, Box<Node>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Tanh,
    Exp,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    /// `(f(x), f'(x))`
    fn apply(self, x: f64) -> (f64, f64) {
        match self {
            Func::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Func::Exp => {
                let e = x.exp();
                (e, e)
            }
            Func::Sin => (x.sin(), x.cos()),
            Func::Cos => (x.cos(), -x.sin()),
            Func::Sqrt => {
                let s = x.sqrt();
                (s, 0.5 / s)
            }
        }
    }
}

/// A parsed scalar expression over a fixed list of variable names.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    n_vars: usize,
}

impl Expr {
    pub fn parse(source: &str, vars: &[String]) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut p = Parser { tokens, pos: 0, vars, source };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self {
            source: source.to_string(),
            root,
            n_vars: vars.len(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_vars);
        value(&self.root, x)
    }

    /// Value and gradient with respect to all variables.
    pub fn eval_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.n_vars];
        let v = dual(&self.root, x, &mut grad, 1.0);
        (v, grad)
    }
}

fn value(n: &Node, x: &[f64]) -> f64 {
    match n {
        Node::Num(c) => *c,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -value(a, x),
        Node::Add(a, b) => value(a, x) + value(b, x),
        Node::Sub(a, b) => value(a, x) - value(b, x),
        Node::Mul(a, b) => value(a, x) * value(b, x),
        Node::Div(a, b) => value(a, x) / value(b, x),
        Node::Pow(a, p) => powf(value(a, x), *p),
        Node::Call(f, a) => f.apply(value(a, x)).0,
    }
}

fn powf(base: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= 64.0 {
        base.powi(p as i32)
    } else {
        base.powf(p)
    }
}

/// Reverse accumulation: adds `seed * d(node)/dx` into `grad` and returns the value.
///
/// Subtrees are re-evaluated for their values, which is fine for the short
/// expressions this grammar is meant for.
fn dual(n: &Node, x: &[f64], grad: &mut [f64], seed: f64) -> f64 {
    match n {
        Node::Num(c) => *c,
        Node::Var(i) => {
            grad[*i] += seed;
            x[*i]
        }
        Node::Neg(a) => -dual(a, x, grad, -seed),
        Node::Add(a, b) => dual(a, x, grad, seed) + dual(b, x, grad, seed),
        Node::Sub(a, b) => dual(a, x, grad, seed) - dual(b, x, grad, -seed),
        Node::Mul(a, b) => {
            let (va, vb) = (value(a, x), value(b, x));
            dual(a, x, grad, seed * vb);
            dual(b, x, grad, seed * va);
            va * vb
        }
        Node::Div(a, b) => {
            let (va, vb) = (value(a, x), value(b, x));
            dual(a, x, grad, seed / vb);
            dual(b, x, grad, -seed * va / (vb * vb));
            va / vb
        }
        Node::Pow(a, p) => {
            let va = value(a, x);
            let d = if *p == 0.0 { 0.0 } else { p * powf(va, p - 1.0) };
            dual(a, x, grad, seed * d);
            powf(va, *p)
        }
        Node::Call(f, a) => {
            let (fv, fd) = f.apply(value(a, x));
            dual(a, x, grad, seed * fd);
            fv
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(s: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = s.chars().collect();
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
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Expr(format!("bad number '{text}' at column {} in '{s}'", start + 1)))?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), start));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character '{c}' at column {} in '{s}'", i + 1)));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [String],
    source: &'a str,
}

impl Parser<'_> {
    fn error(&self, what: &str) -> Error {
        let col = self.tokens.get(self.pos).map(|t| t.1 + 1).unwrap_or(self.source.len() + 1);
        Error::Expr(format!("{what} at column {col} in '{}'", self.source))
    }

    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some((Tok::Op(c), _)) => Some(*c),
            _ => None,
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
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            let p = constant(&exp).ok_or_else(|| self.error("exponent must be a constant"))?;
            return Ok(Node::Pow(Box::new(base), p));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let Some((tok, _)) = self.tokens.get(self.pos).cloned() else {
            return Err(self.error("unexpected end of expression"));
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Op('(') => {
                let inner = self.expr()?;
                if self.peek_op() != Some(')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(f) = Func::lookup(&name) {
                    if self.peek_op() != Some('(') {
                        return Err(self.error(&format!("expected '(' after {name}")));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek_op() != Some(')') {
                        return Err(self.error("expected ')'"));
                    }
                    self.pos += 1;
                    Ok(Node::Call(f, Box::new(arg)))
                } else if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    Ok(Node::Var(i))
                } else {
                    self.pos -= 1;
                    Err(self.error(&format!("unknown name '{name}'")))
                }
            }
            Tok::Op(c) => {
                self.pos -= 1;
                Err(self.error(&format!("unexpected '{c}'")))
            }
        }
    }
}

fn constant(n: &Node) -> Option<f64> {
    match n {
        Node::Num(c) => Some(*c),
        Node::Neg(a) => constant(a).map(|c| -c),
        Node::Add(a, b) => Some(constant(a)? + constant(b)?),
        Node::Sub(a, b) => Some(constant(a)? - constant(b)?),
        Node::Mul(a, b) => Some(constant(a)? * constant(b)?),
        Node::Div(a, b) => Some(constant(a)? / constant(b)?),
        Node::Pow(a, p) => Some(powf(constant(a)?, *p)),
        Node::Call(f, a) => Some(f.apply(constant(a)?).0),
        Node::Var(_) => None,
    }
}

/// Names `prefix1..prefixN`.
pub fn var_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars() -> Vec<String> {
        var_names("v", 3)
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e = Expr::parse("-v1 + 2*v2^2 - v3/4", &vars()).unwrap();
        assert_eq!(e.eval(&[1.0, 3.0, 8.0]), -1.0 + 18.0 - 2.0);
        let e = Expr::parse("-2^2", &vars()).unwrap();
        assert_eq!(e.eval(&[0.0; 3]), -4.0);
        let e = Expr::parse("2^-1", &vars()).unwrap();
        assert_eq!(e.eval(&[0.0; 3]), 0.5);
    }

    #[test]
    fn functions_and_gradient() {
        let e = Expr::parse("(1 + tanh(v1))/2 + exp(v2)*sin(v3) + 1e-1*cos(v1*v2)", &vars()).unwrap();
        let x = [0.3, -0.7, 1.1];
        let (v, g) = e.eval_grad(&x);
        assert!((v - e.eval(&x)).abs() < 1e-15);
        for i in 0..3 {
            let step = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[i] += step;
            xm[i] -= step;
            let fd = (e.eval(&xp) - e.eval(&xm)) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-8, "d/dv{} {} vs {}", i + 1, g[i], fd);
        }
    }

    #[test]
    fn polynomial_gradient_is_exact() {
        let e = Expr::parse("1 + v1^2/2", &vars()).unwrap();
        let (v, g) = e.eval_grad(&[0.4, 0.0, 0.0]);
        assert_eq!(v, 1.08);
        assert_eq!(g, vec![0.4, 0.0, 0.0]);
    }

    #[test]
    fn errors_name_the_problem() {
        let msg = |s: &str| Expr::parse(s, &vars()).unwrap_err().to_string();
        assert!(msg("v4 + 1").contains("unknown name 'v4'"));
        assert!(msg("v1 ^ v2").contains("exponent must be a constant"));
        assert!(msg("(v1").contains("expected ')'"));
        assert!(msg("v1 $ 2").contains("unexpected character"));
        assert!(msg("v1 v2").contains("trailing"));
        assert!(msg("tanh v1").contains("expected '('"));
    }
}
