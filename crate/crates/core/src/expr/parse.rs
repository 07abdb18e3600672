//! Recursive-descent parser for the expression grammar:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := base ('^' INT)?
//! base   := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')' | '-' base
//! VAR    := 'x' INT
//! FUNC   := sin | cos | exp | log | sqrt
//! ```

use super::{Func, ScalarExpr};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num { value: f64, integer: Option<u32> },
    Var(usize),
    Func(Func),
    LParen,
    RParen,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(text: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer {
            src: text.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let end = tok == Tok::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn err(&self, at: usize, message: impl Into<String>) -> Error {
        Error::Syntax {
            position: at,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        let single = match c {
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += 1;
            return Ok((t, start));
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() {
            while self
                .src
                .get(self.pos)
                .is_some_and(|b| b.is_ascii_alphanumeric())
            {
                self.pos += 1;
            }
            let word = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            if let Some(f) = Func::from_name(word) {
                return Ok((Tok::Func(f), start));
            }
            if let Some(digits) = word.strip_prefix('x') {
                if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                    let idx: usize = digits
                        .parse()
                        .map_err(|_| self.err(start, "variable index too large"))?;
                    if idx == 0 {
                        return Err(self.err(start, "variable indices start at x1"));
                    }
                    return Ok((Tok::Var(idx - 1), start));
                }
            }
            return Err(self.err(start, format!("unknown identifier `{word}`")));
        }
        Err(self.err(start, format!("unexpected character `{}`", c as char)))
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize)> {
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.src.get(lx.pos).is_some_and(|b| b.is_ascii_digit()) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let int_len = digits(self);
        let mut integer = true;
        if self.src.get(self.pos) == Some(&b'.') {
            integer = false;
            self.pos += 1;
            let frac_len = digits(self);
            if int_len == 0 && frac_len == 0 {
                return Err(self.err(start, "malformed number"));
            }
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // `2exp(x1)` is not valid anyway; report at the exponent.
                return Err(self.err(save, "malformed exponent"));
            }
            integer = false;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let value: f64 = text
            .parse()
            .map_err(|_| self.err(start, format!("malformed number `{text}`")))?;
        let integer = if integer { text.parse::<u32>().ok() } else { None };
        Ok((Tok::Num { value, integer }, start))
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if t != Tok::End {
            self.at += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            position: self.pos(),
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<ScalarExpr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = ScalarExpr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = ScalarExpr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<ScalarExpr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = ScalarExpr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = ScalarExpr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<ScalarExpr> {
        let base = self.base()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        match self.peek().clone() {
            Tok::Num {
                integer: Some(n), ..
            } => {
                self.bump();
                Ok(ScalarExpr::Pow(Box::new(base), n))
            }
            _ => self.err("exponent must be a nonnegative integer literal"),
        }
    }

    fn base(&mut self) -> Result<ScalarExpr> {
        match self.bump() {
            Tok::Num { value, .. } => Ok(ScalarExpr::Const(value)),
            Tok::Var(i) => Ok(ScalarExpr::Var(i)),
            Tok::Func(f) => {
                self.expect(Tok::LParen, "`(` after function name")?;
                let arg = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(ScalarExpr::Func(f, Box::new(arg)))
            }
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Minus => Ok(ScalarExpr::Neg(Box::new(self.base()?))),
            Tok::End => {
                self.at = self.toks.len() - 1;
                self.err("unexpected end of input")
            }
            _ => {
                self.at -= 1;
                self.err("expected a number, variable, function or `(`")
            }
        }
    }
}

/// Parse `text` as an expression over `x1..xn`.
pub fn parse_expr(text: &str, n: usize) -> Result<ScalarExpr> {
    let toks = Lexer::tokens(text)?;
    let mut p = Parser { toks, at: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.err("unexpected trailing input");
    }
    e.check_dimension(n)?;
    Ok(e)
}
