//! Pratt parser for the infix expression language.
//!
//! Binding powers, loosest first: `+ -` (10), `* /` (20), unary `-` (25),
//! `^` (30, right associative). Exponents must fold to constants.

use std::sync::Arc;

use super::tree::{Expr, ExprTree, Func, ParamTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

/// Source location of an expression inside a larger document.
#[derive(Debug, Clone, Copy)]
pub struct Origin {
    pub line: usize,
    pub column: usize,
}

impl Default for Origin {
    fn default() -> Self {
        Origin { line: 1, column: 1 }
    }
}

fn lex(src: &str, origin: Origin) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |at: usize, message: String| Error::Syntax {
        line: origin.line,
        column: origin.column + at,
        message,
    };
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
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
            let v: f64 = text
                .parse()
                .map_err(|_| err(start, format!("malformed number `{text}`")))?;
            out.push(Token {
                tok: Tok::Num(v),
                offset: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                offset: start,
            });
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => return Err(err(start, format!("unexpected character `{c}`"))),
            };
            out.push(Token { tok, offset: start });
            i += 1;
        }
    }
    out.push(Token {
        tok: Tok::End,
        offset: src.len(),
    });
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
    params: &'a ParamTable,
    origin: Origin,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Syntax {
            line: self.origin.line,
            column: self.origin.column + offset,
            message: message.into(),
        }
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr> {
        let mut lhs = self.prefix()?;
        loop {
            let (op, offset) = match &self.peek().tok {
                Tok::Op(c) => (*c, self.peek().offset),
                Tok::End | Tok::RParen => break,
                other => {
                    let offset = self.peek().offset;
                    return Err(self.error(offset, format!("expected operator, found {other:?}")));
                }
            };
            let (lbp, rbp) = match op {
                '+' | '-' => (10, 11),
                '*' | '/' => (20, 21),
                '^' => (30, 30),
                _ => unreachable!(),
            };
            if lbp < min_bp {
                break;
            }
            self.next();
            if op == '^' {
                let exp_expr = self.expr(rbp)?;
                let p = self.fold(&exp_expr, offset)?;
                lhs = Expr::Pow(Box::new(lhs), p);
                continue;
            }
            let rhs = self.expr(rbp)?;
            let (a, b) = (Box::new(lhs), Box::new(rhs));
            lhs = match op {
                '+' => Expr::Add(a, b),
                '-' => Expr::Sub(a, b),
                '*' => Expr::Mul(a, b),
                '/' => Expr::Div(a, b),
                _ => unreachable!(),
            };
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr> {
        let t = self.next();
        match t.tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Op('-') => Ok(Expr::Neg(Box::new(self.expr(25)?))),
            Tok::Op('+') => self.expr(25),
            Tok::LParen => {
                let inner = self.expr(0)?;
                let close = self.next();
                if close.tok != Tok::RParen {
                    return Err(self.error(close.offset, "expected `)`"));
                }
                Ok(inner)
            }
            Tok::Ident(name) => self.identifier(&name, t.offset),
            Tok::End => Err(self.error(t.offset, "unexpected end of expression")),
            other => Err(self.error(t.offset, format!("unexpected token {other:?}"))),
        }
    }

    fn identifier(&mut self, name: &str, offset: usize) -> Result<Expr> {
        if let Some(func) = Func::from_name(name) {
            let open = self.next();
            if open.tok != Tok::LParen {
                return Err(self.error(open.offset, format!("expected `(` after `{name}`")));
            }
            let arg = self.expr(0)?;
            let close = self.next();
            if close.tok != Tok::RParen {
                return Err(self.error(close.offset, "expected `)`"));
            }
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        match name {
            "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
            "e" => return Ok(Expr::Const(std::f64::consts::E)),
            _ => {}
        }
        if let Some(i) = self.params.index_of(name) {
            return Ok(Expr::Param(i));
        }
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(k) = rest.parse::<usize>() {
                if k == 0 || k > self.dim {
                    return Err(Error::DimensionMismatch(format!(
                        "variable `{name}` out of range for dimension {} (line {}, column {})",
                        self.dim,
                        self.origin.line,
                        self.origin.column + offset
                    )));
                }
                return Ok(Expr::Var(k - 1));
            }
        }
        Err(Error::UnknownIdentifier(format!(
            "{name} (line {}, column {})",
            self.origin.line,
            self.origin.column + offset
        )))
    }

    fn fold(&self, e: &Expr, offset: usize) -> Result<f64> {
        let tree = ExprTree::new(e.clone(), usize::MAX, Arc::new(self.params.clone()))?;
        if !tree.is_constant() {
            return Err(self.error(offset, "exponent must be a constant expression"));
        }
        tree.eval_with::<f64>(&[])
    }
}

/// Parse one expression over `x1..x{dim}` and the given parameters.
pub fn parse_expr(src: &str, dim: usize, params: &Arc<ParamTable>, origin: Origin) -> Result<ExprTree> {
    let root = parse_root(src, dim, params, origin)?;
    ExprTree::new(root, dim, params.clone())
}

/// Parse and evaluate an expression that may not reference state variables.
pub fn parse_constant(src: &str, params: &ParamTable, origin: Origin) -> Result<f64> {
    let root = parse_root(src, 0, params, origin)?;
    ExprTree::new(root, 0, Arc::new(params.clone()))?.eval_with::<f64>(&[])
}

fn parse_root(src: &str, dim: usize, params: &ParamTable, origin: Origin) -> Result<Expr> {
    let tokens = lex(src, origin)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        dim,
        params,
        origin,
    };
    let root = p.expr(0)?;
    let t = p.peek().clone();
    if t.tok != Tok::End {
        return Err(p.error(t.offset, format!("unexpected trailing token {:?}", t.tok)));
    }
    Ok(root)
}
