//! Small arithmetic expression language for user-defined dynamics and costs.
//!
//! Grammar `expr/1`:
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := "-" unary | power
//! power  := primary ("^" number)?
//! primary:= number | variable | func "(" expr ("," expr)* ")" | "(" expr ")"
//! func   := exp | sin | cos | abs | min | max
//! variable := t | r | x<k> | u<k> | w<k>        (k is 1-based)
//! ```
//!
//! `x<k>` is a state component, `u<k>` a control component, `w<k>` a
//! coordinate of the current parameter atom and `r` the radius argument of a
//! modulus of continuity. Exponents must be numeric literals.

use std::fmt;

use crate::error::{Error, Result};

pub const GRAMMAR_VERSION: &str = "expr/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Time,
    Radius,
    State(usize),
    Control(usize),
    Param(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Abs,
    /// `sign(a)` with `sign(0) = 0`; produced by differentiation only.
    Sign,
    /// Heaviside step, 1 for `a >= 0`; produced by differentiation only.
    Step,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

/// Variable bindings for evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bindings<'a> {
    pub t: f64,
    pub r: f64,
    pub x: &'a [f64],
    pub u: &'a [f64],
    pub w: &'a [f64],
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Parse(format!(
                "unexpected `{}` in `{src}`",
                p.tokens[p.pos]
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, b: &Bindings<'_>) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => match *v {
                Var::Time => b.t,
                Var::Radius => b.r,
                Var::State(k) => b.x[k],
                Var::Control(k) => b.u[k],
                Var::Param(k) => b.w[k],
            },
            Expr::Neg(a) => -a.eval(b),
            Expr::Add(a, c) => a.eval(b) + c.eval(b),
            Expr::Sub(a, c) => a.eval(b) - c.eval(b),
            Expr::Mul(a, c) => a.eval(b) * c.eval(b),
            Expr::Div(a, c) => a.eval(b) / c.eval(b),
            Expr::Pow(a, p) => {
                let base = a.eval(b);
                if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
                    base.powi(*p as i32)
                } else {
                    base.powf(*p)
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(b);
                match f {
                    Func::Exp => v.exp(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Abs => v.abs(),
                    Func::Sign => {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Func::Step => {
                        if v >= 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
            Expr::Min(a, c) => a.eval(b).min(c.eval(b)),
            Expr::Max(a, c) => a.eval(b).max(c.eval(b)),
        }
    }

    /// Largest 1-based index used for each indexed variable family:
    /// `(state, control, param)`.
    pub fn arity(&self) -> (usize, usize, usize) {
        let mut out = (0, 0, 0);
        self.visit(&mut |v| match v {
            Var::State(k) => out.0 = out.0.max(k + 1),
            Var::Control(k) => out.1 = out.1.max(k + 1),
            Var::Param(k) => out.2 = out.2.max(k + 1),
            _ => {}
        });
        out
    }

    pub fn uses(&self, var: Var) -> bool {
        let mut found = false;
        self.visit(&mut |v| found |= v == var);
        found
    }

    fn visit(&self, f: &mut impl FnMut(Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.visit(f),
            Expr::Add(a, c)
            | Expr::Sub(a, c)
            | Expr::Mul(a, c)
            | Expr::Div(a, c)
            | Expr::Min(a, c)
            | Expr::Max(a, c) => {
                a.visit(f);
                c.visit(f);
            }
        }
    }

    /// Symbolic partial derivative. At kinks `abs'(0) = 0` and `min`/`max`
    /// follow their left argument on ties.
    pub fn derivative(&self, var: Var) -> Expr {
        use Expr::*;
        let d = |e: &Expr| e.derivative(var);
        let bx = Box::new;
        let out = match self {
            Num(_) => Num(0.0),
            Var(v) => Num(if *v == var { 1.0 } else { 0.0 }),
            Neg(a) => Neg(bx(d(a))),
            Add(a, c) => Add(bx(d(a)), bx(d(c))),
            Sub(a, c) => Sub(bx(d(a)), bx(d(c))),
            Mul(a, c) => Add(
                bx(Mul(bx(d(a)), c.clone())),
                bx(Mul(a.clone(), bx(d(c)))),
            ),
            Div(a, c) => Div(
                bx(Sub(
                    bx(Mul(bx(d(a)), c.clone())),
                    bx(Mul(a.clone(), bx(d(c)))),
                )),
                bx(Pow(c.clone(), 2.0)),
            ),
            Pow(a, p) => Mul(
                bx(Mul(bx(Num(*p)), bx(Pow(a.clone(), p - 1.0)))),
                bx(d(a)),
            ),
            Call(f, a) => {
                let outer = match f {
                    Func::Exp => Call(Func::Exp, a.clone()),
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => Neg(bx(Call(Func::Sin, a.clone()))),
                    Func::Abs => Call(Func::Sign, a.clone()),
                    Func::Sign | Func::Step => Num(0.0),
                };
                Mul(bx(outer), bx(d(a)))
            }
            Min(a, c) => select(bx(Sub(c.clone(), a.clone())), d(a), d(c)),
            Max(a, c) => select(bx(Sub(a.clone(), c.clone())), d(a), d(c)),
        };
        out.simplify()
    }

    fn simplify(self) -> Expr {
        use Expr::*;
        match self {
            Neg(a) => match a.simplify() {
                Num(v) => Num(-v),
                e => Neg(Box::new(e)),
            },
            Add(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) => Num(x + y),
                (Num(z), e) | (e, Num(z)) if z == 0.0 => e,
                (x, y) => Add(Box::new(x), Box::new(y)),
            },
            Sub(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) => Num(x - y),
                (e, Num(z)) if z == 0.0 => e,
                (Num(z), e) if z == 0.0 => Neg(Box::new(e)),
                (x, y) => Sub(Box::new(x), Box::new(y)),
            },
            Mul(a, c) => match (a.simplify(), c.simplify()) {
                (Num(x), Num(y)) => Num(x * y),
                (Num(z), _) | (_, Num(z)) if z == 0.0 => Num(0.0),
                (Num(o), e) | (e, Num(o)) if o == 1.0 => e,
                (x, y) => Mul(Box::new(x), Box::new(y)),
            },
            Div(a, c) => match (a.simplify(), c.simplify()) {
                (Num(z), _) if z == 0.0 => Num(0.0),
                (e, Num(o)) if o == 1.0 => e,
                (x, y) => Div(Box::new(x), Box::new(y)),
            },
            Pow(a, p) => match (a.simplify(), p) {
                (_, p) if p == 0.0 => Num(1.0),
                (e, p) if p == 1.0 => e,
                (Num(x), p) => Num(x.powf(p)),
                (e, p) => Pow(Box::new(e), p),
            },
            Call(f, a) => Call(f, Box::new(a.simplify())),
            Min(a, c) => Min(Box::new(a.simplify()), Box::new(c.simplify())),
            Max(a, c) => Max(Box::new(a.simplify()), Box::new(c.simplify())),
            e => e,
        }
    }

}

/// `step(gap) * when_true + (1 - step(gap)) * when_false`.
fn select(gap: Box<Expr>, when_true: Expr, when_false: Expr) -> Expr {
    let step = Expr::Call(Func::Step, gap);
    Expr::Add(
        Box::new(Expr::Mul(Box::new(step.clone()), Box::new(when_true))),
        Box::new(Expr::Mul(
            Box::new(Expr::Sub(Box::new(Expr::Num(1.0)), Box::new(step))),
            Box::new(when_false),
        )),
    )
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => match v {
                Var::Time => write!(f, "t"),
                Var::Radius => write!(f, "r"),
                Var::State(k) => write!(f, "x{}", k + 1),
                Var::Control(k) => write!(f, "u{}", k + 1),
                Var::Param(k) => write!(f, "w{}", k + 1),
            },
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, p) => write!(f, "({a} ^ {p})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Exp => "exp",
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Abs => "abs",
                    Func::Sign => "sign",
                    Func::Step => "step",
                };
                write!(f, "{name}({a})")
            }
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
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
                .map_err(|_| Error::Parse(format!("bad number `{text}`")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(Error::Parse(format!("unexpected character `{c}` in `{src}`")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if self.peek() == Some(&Token::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: char) -> Result<()> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(Error::Parse(format!(
                "expected `{op}`, found {}",
                self.peek().map_or("end of input".into(), |t| format!("`{t}`"))
            )))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_op('-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat_op('^') {
            let neg = self.eat_op('-');
            match self.tokens.get(self.pos).cloned() {
                Some(Token::Num(p)) => {
                    self.pos += 1;
                    Ok(Expr::Pow(Box::new(base), if neg { -p } else { p }))
                }
                _ => Err(Error::Parse("exponent must be a numeric literal".into())),
            }
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.tokens.get(self.pos).cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Token::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_op(')')?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Token::Op('(')) {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.eat_op(',') {
                        args.push(self.expr()?);
                    }
                    self.expect_op(')')?;
                    call(&name, args)
                } else {
                    variable(&name).map(Expr::Var)
                }
            }
            Some(t) => Err(Error::Parse(format!("unexpected `{t}`"))),
            None => Err(Error::Parse("unexpected end of expression".into())),
        }
    }
}

fn call(name: &str, mut args: Vec<Expr>) -> Result<Expr> {
    let unary = |f: Func, mut args: Vec<Expr>| {
        if args.len() != 1 {
            return Err(Error::Parse(format!("`{name}` takes one argument")));
        }
        Ok(Expr::Call(f, Box::new(args.remove(0))))
    };
    match name {
        "exp" => unary(Func::Exp, args),
        "sin" => unary(Func::Sin, args),
        "cos" => unary(Func::Cos, args),
        "abs" => unary(Func::Abs, args),
        "min" | "max" => {
            if args.len() != 2 {
                return Err(Error::Parse(format!("`{name}` takes two arguments")));
            }
            let b = Box::new(args.pop().unwrap());
            let a = Box::new(args.pop().unwrap());
            Ok(if name == "min" {
                Expr::Min(a, b)
            } else {
                Expr::Max(a, b)
            })
        }
        _ => Err(Error::Parse(format!("unknown function `{name}`"))),
    }
}

fn variable(name: &str) -> Result<Var> {
    match name {
        "t" => return Ok(Var::Time),
        "r" => return Ok(Var::Radius),
        _ => {}
    }
    let (head, rest) = name.split_at(1);
    let index: usize = rest
        .parse()
        .ok()
        .filter(|&k| k >= 1)
        .ok_or_else(|| Error::Parse(format!("unknown variable `{name}`")))?;
    match head {
        "x" => Ok(Var::State(index - 1)),
        "u" => Ok(Var::Control(index - 1)),
        "w" => Ok(Var::Param(index - 1)),
        _ => Err(Error::Parse(format!("unknown variable `{name}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, x: &[f64]) -> f64 {
        Expr::parse(src).unwrap().eval(&Bindings {
            t: 0.5,
            r: 0.25,
            x,
            u: &[2.0],
            w: &[3.0],
        })
    }

    #[test]
    fn precedence_and_functions() {
        assert_eq!(eval("1 + 2 * 3", &[]), 7.0);
        assert_eq!(eval("-2^2", &[]), -4.0);
        assert_eq!(eval("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(eval("w1 * x1 + u1", &[1.5]), 6.5);
        assert_eq!(eval("max(x1, 0) - min(x1, 0)", &[-4.0]), 4.0);
        assert_eq!(eval("abs(x1 - 1)^2", &[-1.0]), 4.0);
        assert_eq!(eval("t + r", &[]), 0.75);
        assert_eq!(eval("1e-1 * 10", &[]), 1.0);
        assert!((eval("exp(0) + sin(0) + cos(0)", &[]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn parse_errors() {
        for bad in ["1 +", "foo(1)", "y1", "x0", "(1", "x1 ^ x1", "min(1)", "1 $ 2"] {
            assert!(Expr::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn arity_counts_indices() {
        let e = Expr::parse("x2 * u1 + w3").unwrap();
        assert_eq!(e.arity(), (2, 1, 3));
        assert!(e.uses(Var::State(1)));
        assert!(!e.uses(Var::Time));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let sources = [
            "w1 * x1 + u1",
            "u1 * w1 * x1",
            "sin(x1) * exp(0.5 * x1)",
            "(x1 - 0.3)^2 + x1 / (2 + cos(x1))",
            "abs(x1) + max(x1, 0.1) + min(2 * x1, 1)",
        ];
        for src in sources {
            let e = Expr::parse(src).unwrap();
            let de = e.derivative(Var::State(0));
            for &x in &[-1.3, -0.4, 0.7, 1.9] {
                let h = 1e-6;
                let eval_at = |f: &Expr, v: f64| {
                    f.eval(&Bindings {
                        t: 0.0,
                        r: 0.0,
                        x: &[v],
                        u: &[0.7],
                        w: &[1.1],
                    })
                };
                let fd = (eval_at(&e, x + h) - eval_at(&e, x - h)) / (2.0 * h);
                let an = eval_at(&de, x);
                assert!((fd - an).abs() < 1e-6, "{src} at {x}: fd {fd} vs {an}");
            }
        }
    }
}
