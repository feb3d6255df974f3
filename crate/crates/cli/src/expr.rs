//! Bound expressions: arithmetic over named values with a few functions,
//! compared to give a pass/fail flag.
//!
//! ```text
//! q_max <= 32 * n * lg(n) / (gamma * k)
//! t <= (n + f) * (f + 1) and correct == 1
//! ```
//!
//! Operators: `+ - * /` (also `× ÷ ·` and `−`), `^`, comparisons
//! `< <= > >= == !=` (also `≤ ≥ ≠`), `and`/`&&`, `or`/`||`.
//! Functions: `lg ln sqrt ceil floor abs min max`. A comparison is 1 when
//! it holds and 0 otherwise; a bound passes when it evaluates to non-zero.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected `{found}` at offset {at} in `{text}`")]
    Syntax { text: String, at: usize, found: String },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{name}` takes {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(Op),
    LParen,
    RParen,
    Comma,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |at: usize, found: &str| ExprError::Syntax {
        text: text.to_string(),
        at,
        found: found.to_string(),
    };
    while i < chars.len() {
        let (at, c) = chars[i];
        let next = chars.get(i + 1).map(|p| p.1);
        let mut two = |op: Op| {
            out.push((at, Tok::Op(op)));
            i += 2;
        };
        match (c, next) {
            (c, _) if c.is_whitespace() => i += 1,
            ('<', Some('=')) => two(Op::Le),
            ('>', Some('=')) => two(Op::Ge),
            ('=', Some('=')) => two(Op::Eq),
            ('!', Some('=')) => two(Op::Ne),
            ('&', Some('&')) => two(Op::And),
            ('|', Some('|')) => two(Op::Or),
            _ => {
                let single = match c {
                    '+' => Some(Tok::Op(Op::Add)),
                    '-' | '−' => Some(Tok::Op(Op::Sub)),
                    '*' | '×' | '·' => Some(Tok::Op(Op::Mul)),
                    '/' | '÷' => Some(Tok::Op(Op::Div)),
                    '^' => Some(Tok::Op(Op::Pow)),
                    '<' => Some(Tok::Op(Op::Lt)),
                    '>' => Some(Tok::Op(Op::Gt)),
                    '≤' => Some(Tok::Op(Op::Le)),
                    '≥' => Some(Tok::Op(Op::Ge)),
                    '≠' => Some(Tok::Op(Op::Ne)),
                    '(' => Some(Tok::LParen),
                    ')' => Some(Tok::RParen),
                    ',' => Some(Tok::Comma),
                    _ => None,
                };
                if let Some(t) = single {
                    out.push((at, t));
                    i += 1;
                } else if c.is_ascii_digit() || c == '.' {
                    let start = i;
                    while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                        i += 1;
                    }
                    // Optional exponent.
                    if i < chars.len() && matches!(chars[i].1, 'e' | 'E') {
                        let mut j = i + 1;
                        if j < chars.len() && matches!(chars[j].1, '+' | '-') {
                            j += 1;
                        }
                        if j < chars.len() && chars[j].1.is_ascii_digit() {
                            i = j;
                            while i < chars.len() && chars[i].1.is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let s: String = chars[start..i].iter().map(|p| p.1).collect();
                    let v = s.parse::<f64>().map_err(|_| err(at, &s))?;
                    out.push((at, Tok::Num(v)));
                } else if c.is_alphabetic() || c == '_' {
                    let start = i;
                    while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                        i += 1;
                    }
                    let s: String = chars[start..i].iter().map(|p| p.1).collect();
                    let tok = match s.as_str() {
                        "and" => Tok::Op(Op::And),
                        "or" => Tok::Op(Op::Or),
                        "γ" => Tok::Ident("gamma".into()),
                        "β" => Tok::Ident("beta".into()),
                        _ => Tok::Ident(s),
                    };
                    out.push((at, tok));
                } else {
                    return Err(err(at, &c.to_string()));
                }
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    text: &'a str,
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn fail(&self) -> ExprError {
        let (at, found) = match self.toks.get(self.pos) {
            Some((at, t)) => (*at, format!("{t:?}")),
            None => (self.text.len(), "end of input".to_string()),
        };
        ExprError::Syntax {
            text: self.text.to_string(),
            at,
            found,
        }
    }

    fn eat_op(&mut self, ops: &[Op]) -> Option<Op> {
        match self.peek() {
            Some(Tok::Op(op)) if ops.contains(op) => {
                let op = *op;
                self.pos += 1;
                Some(op)
            }
            _ => None,
        }
    }

    fn left_assoc(&mut self, ops: &[Op], next: fn(&mut Self) -> Result<Expr, ExprError>) -> Result<Expr, ExprError> {
        let mut lhs = next(self)?;
        while let Some(op) = self.eat_op(ops) {
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(next(self)?));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        self.left_assoc(&[Op::Or], Self::and)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        self.left_assoc(&[Op::And], Self::cmp)
    }

    fn cmp(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.sum()?;
        match self.eat_op(&[Op::Lt, Op::Le, Op::Gt, Op::Ge, Op::Eq, Op::Ne]) {
            Some(op) => Ok(Expr::Bin(op, Box::new(lhs), Box::new(self.sum()?))),
            None => Ok(lhs),
        }
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        self.left_assoc(&[Op::Add, Op::Sub], Self::product)
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        self.left_assoc(&[Op::Mul, Op::Div], Self::unary)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat_op(&[Op::Sub]).is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.eat_op(&[Op::Pow]).is_some() {
            return Ok(Expr::Bin(Op::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() != Some(&Tok::LParen) {
                    // `lg n` binds like a call on the next atom.
                    if check_call(&name, 1).is_ok() && matches!(self.peek(), Some(Tok::Num(_) | Tok::Ident(_))) {
                        return Ok(Expr::Call(name, vec![self.atom()?]));
                    }
                    return Ok(Expr::Var(name));
                }
                self.pos += 1;
                let mut args = Vec::new();
                if self.peek() != Some(&Tok::RParen) {
                    loop {
                        args.push(self.or()?);
                        if self.peek() == Some(&Tok::Comma) {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.fail());
                }
                self.pos += 1;
                check_call(&name, args.len())?;
                Ok(Expr::Call(name, args))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.or()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.fail());
                }
                self.pos += 1;
                Ok(e)
            }
            _ => Err(self.fail()),
        }
    }
}

fn check_call(name: &str, got: usize) -> Result<(), ExprError> {
    let expected = match name {
        "lg" | "ln" | "sqrt" | "ceil" | "floor" | "abs" => 1,
        "min" | "max" => 2,
        _ => return Err(ExprError::UnknownFunction(name.to_string())),
    };
    if got != expected {
        return Err(ExprError::Arity {
            name: name.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            text,
            toks: lex(text)?,
            pos: 0,
        };
        let e = p.or()?;
        if p.pos != p.toks.len() {
            return Err(p.fail());
        }
        Ok(e)
    }

    /// Evaluates with `lookup` supplying variables.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => lookup(name).ok_or_else(|| ExprError::UnknownVariable(name.clone()))?,
            Expr::Neg(e) => -e.eval(lookup)?,
            Expr::Bin(op, l, r) => {
                let (x, y) = (l.eval(lookup)?, r.eval(lookup)?);
                match op {
                    Op::Add => x + y,
                    Op::Sub => x - y,
                    Op::Mul => x * y,
                    Op::Div => x / y,
                    Op::Pow => x.powf(y),
                    Op::Lt => b(x < y),
                    Op::Le => b(x <= y),
                    Op::Gt => b(x > y),
                    Op::Ge => b(x >= y),
                    Op::Eq => b(x == y),
                    Op::Ne => b(x != y),
                    Op::And => b(x != 0.0 && y != 0.0),
                    Op::Or => b(x != 0.0 || y != 0.0),
                }
            }
            Expr::Call(name, args) => {
                let v: Vec<f64> = args.iter().map(|a| a.eval(lookup)).collect::<Result<_, _>>()?;
                match name.as_str() {
                    "lg" => v[0].log2(),
                    "ln" => v[0].ln(),
                    "sqrt" => v[0].sqrt(),
                    "ceil" => v[0].ceil(),
                    "floor" => v[0].floor(),
                    "abs" => v[0].abs(),
                    "min" => v[0].min(v[1]),
                    "max" => v[0].max(v[1]),
                    _ => unreachable!("checked when parsed"),
                }
            }
        })
    }

    /// Variable names used, in order of first appearance.
    pub fn variables(&self) -> Vec<String> {
        fn walk(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Num(_) => {}
                Expr::Var(v) => {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
                Expr::Neg(e) => walk(e, out),
                Expr::Bin(_, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                Expr::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
            Op::Pow => "^",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Eq => "==",
            Op::Ne => "!=",
            Op::And => "and",
            Op::Or => "or",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(text: &str, vars: &[(&str, f64)]) -> f64 {
        let e = Expr::parse(text).unwrap();
        e.eval(&|name| vars.iter().find(|v| v.0 == name).map(|v| v.1)).unwrap()
    }

    #[test]
    fn precedence_and_functions() {
        assert_eq!(eval("1 + 2 * 3", &[]), 7.0);
        assert_eq!(eval("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(eval("2 ^ 3 ^ 2", &[]), 512.0);
        assert_eq!(eval("-2 ^ 2", &[]), -4.0);
        assert_eq!(eval("lg(1024) + ceil(1.2) + min(3, max(1, 2))", &[]), 14.0);
        assert_eq!(eval("32 × n · lg n ÷ (γ * k)",&[("n", 1024.0), ("gamma", 0.5), ("k", 256.0)]), 2560.0);
    }

    #[test]
    fn comparisons_and_logic() {
        assert_eq!(eval("q_max <= 2560", &[("q_max", 2560.0)]), 1.0);
        assert_eq!(eval("q_max ≤ 2559 or t < 1", &[("q_max", 2560.0), ("t", 0.5)]), 1.0);
        assert_eq!(eval("1 < 2 and 2 != 2", &[]), 0.0);
        assert_eq!(eval("1e3 >= 1000", &[]), 1.0);
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(Expr::parse("1 +"), Err(ExprError::Syntax { .. })));
        assert!(matches!(Expr::parse("foo(1)"), Err(ExprError::UnknownFunction(_))));
        assert!(matches!(Expr::parse("min(1)"), Err(ExprError::Arity { .. })));
        assert!(matches!(Expr::parse("1 $ 2"), Err(ExprError::Syntax { .. })));
        let e = Expr::parse("x + 1").unwrap();
        assert_eq!(e.eval(&|_| None), Err(ExprError::UnknownVariable("x".into())));
        assert_eq!(e.variables(), vec!["x".to_string()]);
    }
}
