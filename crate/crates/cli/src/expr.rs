//! Complex expressions in `x` for user spec files.
//!
//! Grammar: numbers, `i`, `pi`, `x`, `eps`, `+ - * /`, `^` with an integer
//! exponent, parentheses and `exp(...)`. The variable may be complex, so a
//! parsed entry also provides its continuation off the real axis.

use anyhow::{anyhow, bail, Result};
use num_complex::Complex64 as C64;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(C64),
    X,
    Eps,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: C64, eps: f64) -> C64 {
        match self {
            Expr::Num(c) => *c,
            Expr::X => x,
            Expr::Eps => C64::new(eps, 0.0),
            Expr::Neg(a) => -a.eval(x, eps),
            Expr::Add(a, b) => a.eval(x, eps) + b.eval(x, eps),
            Expr::Sub(a, b) => a.eval(x, eps) - b.eval(x, eps),
            Expr::Mul(a, b) => a.eval(x, eps) * b.eval(x, eps),
            Expr::Div(a, b) => a.eval(x, eps) / b.eval(x, eps),
            Expr::Pow(a, k) => a.eval(x, eps).powi(*k),
            Expr::Exp(a) => a.eval(x, eps).exp(),
        }
    }

    /// Frequencies `w` of the `exp(i w x + …)` factors whose argument is
    /// linear in `x`.
    pub fn frequencies(&self, eps: f64) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_frequencies(eps, &mut out);
        out
    }

    fn collect_frequencies(&self, eps: f64, out: &mut Vec<f64>) {
        match self {
            Expr::Num(_) | Expr::X | Expr::Eps => {}
            Expr::Neg(a) | Expr::Pow(a, _) => a.collect_frequencies(eps, out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_frequencies(eps, out);
                b.collect_frequencies(eps, out);
            }
            Expr::Exp(a) => {
                a.collect_frequencies(eps, out);
                let slope = a.eval(C64::new(1.0, 0.0), eps) - a.eval(C64::new(0.0, 0.0), eps);
                let w = slope.im;
                if w != 0.0 && w.is_finite() {
                    out.push(w);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(s: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let cs: Vec<char> = s.chars().collect();
    let mut k = 0;
    while k < cs.len() {
        let c = cs[k];
        if c.is_whitespace() {
            k += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = k;
            while k < cs.len() && (cs[k].is_ascii_digit() || cs[k] == '.') {
                k += 1;
            }
            if k < cs.len() && (cs[k] == 'e' || cs[k] == 'E') {
                let mut j = k + 1;
                if j < cs.len() && (cs[j] == '+' || cs[j] == '-') {
                    j += 1;
                }
                if j < cs.len() && cs[j].is_ascii_digit() {
                    k = j;
                    while k < cs.len() && cs[k].is_ascii_digit() {
                        k += 1;
                    }
                }
            }
            let t: String = cs[start..k].iter().collect();
            out.push(Tok::Num(t.parse().map_err(|_| anyhow!("bad number '{t}'"))?));
        } else if c.is_ascii_alphabetic() {
            let start = k;
            while k < cs.len() && cs[k].is_ascii_alphanumeric() {
                k += 1;
            }
            out.push(Tok::Ident(cs[start..k].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            k += 1;
        } else {
            bail!("unexpected character '{c}'");
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut e = self.product()?;
        loop {
            if self.eat('+') {
                e = Expr::Add(Box::new(e), Box::new(self.product()?));
            } else if self.eat('-') {
                e = Expr::Sub(Box::new(e), Box::new(self.product()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut e = self.unary()?;
        loop {
            if self.eat('*') {
                e = Expr::Mul(Box::new(e), Box::new(self.unary()?));
            } else if self.eat('/') {
                e = Expr::Div(Box::new(e), Box::new(self.unary()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let neg = self.eat('-');
            match self.next() {
                Some(Tok::Num(v)) if v.fract() == 0.0 && v.abs() < 1e6 => {
                    let k = if neg { -(v as i32) } else { v as i32 };
                    Ok(Expr::Pow(Box::new(base), k))
                }
                _ => bail!("exponent must be an integer literal"),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(C64::new(v, 0.0))),
            Some(Tok::Ident(name)) => match name.as_str() {
                "x" => Ok(Expr::X),
                "eps" => Ok(Expr::Eps),
                "i" => Ok(Expr::Num(C64::new(0.0, 1.0))),
                "pi" => Ok(Expr::Num(C64::new(std::f64::consts::PI, 0.0))),
                "exp" => {
                    if !self.eat('(') {
                        bail!("expected '(' after exp");
                    }
                    let a = self.sum()?;
                    if !self.eat(')') {
                        bail!("missing ')'");
                    }
                    Ok(Expr::Exp(Box::new(a)))
                }
                _ => bail!("unknown name '{name}'"),
            },
            Some(Tok::Op('(')) => {
                let e = self.sum()?;
                if !self.eat(')') {
                    bail!("missing ')'");
                }
                Ok(e)
            }
            Some(t) => bail!("unexpected token {t:?}"),
            None => bail!("unexpected end of expression"),
        }
    }
}

pub fn parse(s: &str) -> Result<Expr> {
    let mut p = Parser { toks: lex(s)?, pos: 0 };
    let e = p.sum()?;
    if p.pos != p.toks.len() {
        bail!("trailing input in '{s}'");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> C64 {
        parse(s).unwrap().eval(C64::new(x, 0.0), 0.5)
    }

    #[test]
    fn arithmetic() {
        assert_eq!(ev("1 + 2*3", 0.0), C64::new(7.0, 0.0));
        assert_eq!(ev("-x^2", 3.0), C64::new(-9.0, 0.0));
        assert_eq!(ev("(x-i)/(x+i)", 0.0), C64::new(-1.0, 0.0));
        assert_eq!(ev("x^-1", 4.0), C64::new(0.25, 0.0));
        assert_eq!(ev("2e-1 * eps", 0.0), C64::new(0.1, 0.0));
        assert!((ev("exp(i*pi)", 0.0) + 1.0).norm() < 1e-15);
    }

    #[test]
    fn frequencies_of_exponentials() {
        let e = parse("x*i*(24 - 12*exp(i*eps*x) - 12*exp(-i*eps*x))/(x^2+1)").unwrap();
        assert_eq!(e.frequencies(0.25), vec![0.25, -0.25]);
        assert!(parse("1/(x+i)").unwrap().frequencies(1.0).is_empty());
    }

    #[test]
    fn errors() {
        assert!(parse("x +").is_err());
        assert!(parse("sin(x)").is_err());
        assert!(parse("x^0.5").is_err());
        assert!(parse("(x").is_err());
        assert!(parse("x $ 2").is_err());
    }
}
