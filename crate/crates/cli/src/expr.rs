//! Test-function expressions for `zigzag estimate --g`.
//!
//! Grammar: coordinates `x1..xd`, velocity signs `th1..thd`, numeric
//! literals, `+ - * ^` (with `^` right-associative and binding tighter than
//! unary minus), parentheses, and the functions `cos(...)` and `exp(...)`.

use std::fmt;

use zigzag_core::Velocity;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    X(usize),
    Th(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.pos + 1, self.msg)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // Optional exponent: e, E followed by an optional sign and digits.
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
            let v = text.parse::<f64>().map_err(|_| ParseError {
                pos: start,
                msg: format!("bad number `{text}`"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*^()".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else {
            return Err(ParseError {
                pos: i,
                msg: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while self.eat('*') {
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat('^') {
            // Right-associative; the exponent may carry its own sign.
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.at += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Op('(')) => {
                self.at += 1;
                let e = self.sum()?;
                if !self.eat(')') {
                    return self.err("expected `)`");
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.at += 1;
                if name == "cos" || name == "exp" {
                    if !self.eat('(') {
                        return self.err(format!("expected `(` after {name}"));
                    }
                    let arg = Box::new(self.sum()?);
                    if !self.eat(')') {
                        return self.err("expected `)`");
                    }
                    return Ok(if name == "cos" { Expr::Cos(arg) } else { Expr::Exp(arg) });
                }
                let (kind, digits) = if let Some(d) = name.strip_prefix("th") {
                    ("th", d)
                } else if let Some(d) = name.strip_prefix('x') {
                    ("x", d)
                } else {
                    return Err(ParseError {
                        pos,
                        msg: format!("unknown name `{name}`"),
                    });
                };
                let k: usize = digits.parse().map_err(|_| ParseError {
                    pos,
                    msg: format!("unknown name `{name}`"),
                })?;
                if k == 0 || k > self.dim {
                    return Err(ParseError {
                        pos,
                        msg: format!("`{name}` is out of range for dimension {}", self.dim),
                    });
                }
                Ok(if kind == "x" { Expr::X(k - 1) } else { Expr::Th(k - 1) })
            }
            Some(Tok::Op(c)) => self.err(format!("unexpected `{c}`")),
            None => self.err("unexpected end of expression"),
        }
    }
}

impl Expr {
    /// Parses `src` for a target of dimension `dim`.
    pub fn parse(src: &str, dim: usize) -> Result<Expr, ParseError> {
        let toks = lex(src)?;
        let mut p = Parser {
            toks,
            at: 0,
            end: src.len(),
            dim,
        };
        let e = p.sum()?;
        if p.at != p.toks.len() {
            return p.err("trailing input");
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[f64], th: &Velocity) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::X(k) => x[*k],
            Expr::Th(k) => th.sign(*k),
            Expr::Neg(a) => -a.eval(x, th),
            Expr::Add(a, b) => a.eval(x, th) + b.eval(x, th),
            Expr::Sub(a, b) => a.eval(x, th) - b.eval(x, th),
            Expr::Mul(a, b) => a.eval(x, th) * b.eval(x, th),
            Expr::Pow(a, b) => {
                let (base, exp) = (a.eval(x, th), b.eval(x, th));
                if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
                    base.powi(exp as i32)
                } else {
                    base.powf(exp)
                }
            }
            Expr::Cos(a) => a.eval(x, th).cos(),
            Expr::Exp(a) => a.eval(x, th).exp(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: &[f64], th: &[f64]) -> f64 {
        Expr::parse(src, x.len()).unwrap().eval(x, &Velocity::new(th).unwrap())
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1 + 2 * 3", &[0.0], &[1.0]), 7.0);
        assert_eq!(ev("-x1^2", &[3.0], &[1.0]), -9.0);
        assert_eq!(ev("2^3^2", &[0.0], &[1.0]), 512.0);
        assert_eq!(ev("(1 + 2) * 3", &[0.0], &[1.0]), 9.0);
        assert_eq!(ev("x1 - x2 - 1", &[5.0, 2.0], &[1.0, 1.0]), 2.0);
        assert_eq!(ev("2^-1", &[0.0], &[1.0]), 0.5);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(ev("th1*x1 + th2*x2", &[1.0, 2.0], &[-1.0, 1.0]), 1.0);
        assert_eq!(ev("cos(0) + exp(0)", &[0.0], &[1.0]), 2.0);
        assert_eq!(ev("1.5e2 + 2E-1", &[0.0], &[1.0]), 150.2);
    }

    #[test]
    fn errors_point_at_the_problem() {
        let e = Expr::parse("x1 + x3", 2).unwrap_err();
        assert_eq!(e.pos, 5);
        assert!(Expr::parse("x0", 2).is_err());
        assert!(Expr::parse("sin(x1)", 1).is_err());
        assert!(Expr::parse("x1 +", 1).is_err());
        assert!(Expr::parse("(x1", 1).is_err());
        assert!(Expr::parse("x1 / 2", 1).is_err());
        assert!(Expr::parse("x1 x1", 1).is_err());
    }
}
