//! Recursive-descent parser for the expression DSL.
//!
//! Precedence, loosest to tightest: `+ -`, `* /`, unary `-`, `^` (right
//! associative). Identifiers are `x1..xn`, `u1..um`, `s`, `t`, and the
//! function names `abs exp ln sqrt sin cos tanh min max`.

use super::{Ast, BinOp, Expression, Scope, UnaryOp, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("{}", v),
            Tok::Ident(s) => s.clone(),
            Tok::Plus => "+".into(),
            Tok::Minus => "-".into(),
            Tok::Star => "*".into(),
            Tok::Slash => "/".into(),
            Tok::Caret => "^".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::Comma => ",".into(),
            Tok::End => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn next_token(&mut self) -> Result<(Tok, usize)> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::End, start));
        }
        let c = self.src[self.pos];
        let simple = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = simple {
            self.pos += 1;
            return Ok((tok, start));
        }
        if c.is_ascii_digit() {
            return self.lex_number(start);
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.pos < self.src.len()
                && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
            {
                self.pos += 1;
            }
            let text = std::str::from_utf8(&self.src[start..self.pos])
                .unwrap()
                .to_string();
            return Ok((Tok::Ident(text), start));
        }
        Err(Error::Parse {
            position: start,
            expected: "a token".into(),
            found: (c as char).to_string(),
        })
    }

    fn lex_number(&mut self, start: usize) -> Result<(Tok, usize)> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len()
                && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
            {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // `2e` is `2` followed by an identifier; back off
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| Error::Parse {
            position: start,
            expected: "a number".into(),
            found: text.to_string(),
        })?;
        Ok((Tok::Num(value), start))
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    scope: Scope,
}

impl Parser {
    fn peek(&self) -> &(Tok, usize) {
        &self.toks[self.idx]
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.idx].clone();
        if self.idx + 1 < self.toks.len() {
            self.idx += 1;
        }
        t
    }

    fn err(&self, expected: &str) -> Error {
        let (tok, pos) = self.peek();
        Error::Parse {
            position: *pos,
            expected: expected.into(),
            found: tok.describe(),
        }
    }

    fn expect(&mut self, want: Tok, expected: &str) -> Result<()> {
        if self.peek().0 == want {
            self.bump();
            Ok(())
        } else {
            Err(self.err(expected))
        }
    }

    fn expr(&mut self) -> Result<Ast> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().0 {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Ast::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().0 {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Ast::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Ast> {
        if self.peek().0 == Tok::Minus {
            self.bump();
            let inner = self.unary()?;
            return Ok(Ast::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast> {
        let base = self.atom()?;
        if self.peek().0 == Tok::Caret {
            self.bump();
            // right associative; exponent may carry a unary minus
            let exponent = self.unary()?;
            return Ok(Ast::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Ast> {
        match self.peek().0.clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Ast::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, ")")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let (_, pos) = self.bump();
                self.ident(&name, pos)
            }
            _ => Err(self.err("a number, variable, function call, or `(`")),
        }
    }

    fn ident(&mut self, name: &str, pos: usize) -> Result<Ast> {
        let unary = match name {
            "abs" => Some(UnaryOp::Abs),
            "exp" => Some(UnaryOp::Exp),
            "ln" => Some(UnaryOp::Ln),
            "sqrt" => Some(UnaryOp::Sqrt),
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "tanh" => Some(UnaryOp::Tanh),
            _ => None,
        };
        if let Some(op) = unary {
            self.expect(Tok::LParen, "( after function name")?;
            let arg = self.expr()?;
            self.expect(Tok::RParen, ")")?;
            return Ok(Ast::Unary(op, Box::new(arg)));
        }
        if name == "min" || name == "max" {
            let op = if name == "min" {
                BinOp::Min
            } else {
                BinOp::Max
            };
            self.expect(Tok::LParen, "( after function name")?;
            let a = self.expr()?;
            self.expect(Tok::Comma, ", between the two arguments")?;
            let b = self.expr()?;
            self.expect(Tok::RParen, ")")?;
            return Ok(Ast::Binary(op, Box::new(a), Box::new(b)));
        }
        if name == "s" {
            return Ok(Ast::Var(Var::S));
        }
        if name == "t" {
            return Ok(Ast::Var(Var::T));
        }
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(k) = rest.parse::<usize>() {
                if k >= 1 && k <= self.scope.n_states {
                    return Ok(Ast::Var(Var::State(k - 1)));
                }
                return Err(Error::Parse {
                    position: pos,
                    expected: format!("state variable x1..x{}", self.scope.n_states),
                    found: name.to_string(),
                });
            }
        }
        if let Some(rest) = name.strip_prefix('u') {
            if let Ok(k) = rest.parse::<usize>() {
                if k >= 1 && k <= self.scope.n_inputs {
                    return Ok(Ast::Var(Var::Input(k - 1)));
                }
                return Err(Error::Parse {
                    position: pos,
                    expected: format!("input variable u1..u{}", self.scope.n_inputs),
                    found: name.to_string(),
                });
            }
        }
        Err(Error::Parse {
            position: pos,
            expected: "a known identifier".into(),
            found: name.to_string(),
        })
    }
}

/// Parse `src` against the declared dimensions.
pub fn parse(src: &str, scope: Scope) -> Result<Expression> {
    if src.trim().is_empty() {
        return Err(Error::Parse {
            position: 0,
            expected: "a nonempty expression".into(),
            found: "end of input".into(),
        });
    }
    let mut lexer = Lexer::new(src);
    let mut toks = Vec::new();
    loop {
        let (tok, pos) = lexer.next_token()?;
        let end = tok == Tok::End;
        toks.push((tok, pos));
        if end {
            break;
        }
    }
    let mut parser = Parser {
        toks,
        idx: 0,
        scope,
    };
    let ast = parser.expr()?;
    if parser.peek().0 != Tok::End {
        return Err(parser.err("end of input"));
    }
    Ok(Expression::new(ast, scope))
}
