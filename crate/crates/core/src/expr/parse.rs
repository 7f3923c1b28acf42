//! Infix expression syntax.
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := '-' unary | power
//! power    := atom ('^' exponent)?
//! exponent := '-'? INT | '(' '-'? INT ')'
//! atom     := NUMBER | IDENT '\''* | '(' expr ')'
//! ```
//!
//! Numbers are exact: `3`, `3/4` (a folded quotient), `0.25`. Trailing
//! apostrophes on an identifier select a derivative of a time-varying
//! parameter or an output.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, Pow};

use super::{Expr, ExprError, ExprKind, SymbolTable};

/// Parse failure with a 1-based position.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UndeclaredSymbol(String),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String, u32),
    Number(BigRational),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Equals,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s, n) => write!(f, "`{s}{}`", "'".repeat(*n as usize)),
            Tok::Number(n) => write!(f, "`{n}`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Caret => write!(f, "`^`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::Equals => write!(f, "`=`"),
        }
    }
}

pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        column,
        message: message.into(),
        kind: ParseErrorKind::Syntax,
    }
}

/// Splits one line into tokens with their 1-based columns.
pub(crate) fn tokenize(text: &str, line: usize) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '=' => Some(Tok::Equals),
            _ => None,
        };
        if let Some(t) = single {
            out.push((t, col));
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let name: String = chars[start..i].iter().collect();
            let mut primes = 0;
            while i < chars.len() && chars[i] == '\'' {
                primes += 1;
                i += 1;
            }
            out.push((Tok::Ident(name, primes), col));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let int_part: String = chars[start..i].iter().collect();
            let mut value = BigRational::from_integer(BigInt::from_str_radix(&int_part, 10).unwrap());
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                let fstart = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if fstart == i {
                    return Err(syntax(line, i + 1, "expected digits after decimal point"));
                }
                let frac: String = chars[fstart..i].iter().collect();
                let scale = Pow::pow(BigInt::from(10), (i - fstart) as u32);
                value += BigRational::new(BigInt::from_str_radix(&frac, 10).unwrap(), scale);
            }
            out.push((Tok::Number(value), col));
            continue;
        }
        return Err(syntax(line, col, format!("unexpected character `{c}`")));
    }
    Ok(out)
}

/// Recursive-descent parser over a token slice.
pub(crate) struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    line: usize,
    end_col: usize,
    table: &'a SymbolTable,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(
        toks: &'a [(Tok, usize)],
        line: usize,
        end_col: usize,
        table: &'a SymbolTable,
    ) -> Self {
        Parser {
            toks,
            pos: 0,
            line,
            end_col,
            table,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |(_, c)| *c)
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        syntax(self.line, self.col(), msg)
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        match self.peek() {
            Some(t) => self.err(format!("expected {wanted}, found {t}")),
            None => self.err(format!("expected {wanted}, found end of input")),
        }
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    pub(crate) fn finish(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected {t} after expression"))),
        }
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    acc = acc + self.term()?;
                }
                Some(Tok::Minus) => {
                    self.bump();
                    acc = acc - self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    acc = acc * self.unary()?;
                }
                Some(Tok::Slash) => {
                    self.bump();
                    let col = self.col();
                    let rhs = self.unary()?;
                    acc = Expr::quotient(acc, rhs)
                        .map_err(|_| syntax(self.line, col, "division by literal zero"))?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            return Ok(-self.unary()?);
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() != Some(&Tok::Caret) {
            return Ok(base);
        }
        self.bump();
        let col = self.col();
        let n = self.exponent()?;
        Expr::pow(base, n).map_err(|_| syntax(self.line, col, "zero raised to a negative power"))
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let paren = self.peek() == Some(&Tok::LParen);
        if paren {
            self.bump();
        }
        let neg = self.peek() == Some(&Tok::Minus);
        if neg {
            self.bump();
        }
        let col = self.col();
        let n = match self.bump() {
            Some(Tok::Number(n)) if n.is_integer() => n.to_integer(),
            _ => {
                self.pos -= 1;
                return Err(self.unexpected("an integer exponent"));
            }
        };
        let n: i32 = i32::try_from(n).map_err(|_| syntax(self.line, col, "exponent too large"))?;
        if paren {
            if self.peek() != Some(&Tok::RParen) {
                return Err(self.unexpected("`)`"));
            }
            self.bump();
        }
        Ok(if neg { -n } else { n })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Number(n)) => {
                self.bump();
                Ok(Expr::constant(n))
            }
            Some(Tok::Ident(name, primes)) => {
                self.bump();
                let s = self.table.resolve(&name, primes).map_err(|e| match e {
                    ExprError::UnknownSymbol(n) => ParseError {
                        line: self.line,
                        column: col,
                        message: format!("undeclared symbol `{n}`"),
                        kind: ParseErrorKind::UndeclaredSymbol(n),
                    },
                    other => syntax(self.line, col, other.to_string()),
                })?;
                Ok(Expr::symbol(&s))
            }
            Some(Tok::LParen) => {
                self.bump();
                let e = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.unexpected("`)`"));
                }
                self.bump();
                Ok(e)
            }
            _ => Err(self.unexpected("a number, symbol or `(`")),
        }
    }
}

/// Parses a single expression, resolving identifiers through `table`.
pub fn parse_expr(text: &str, table: &SymbolTable) -> Result<Expr, ParseError> {
    let toks = tokenize(text, 1)?;
    let mut p = Parser::new(&toks, 1, text.chars().count() + 1, table);
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

// Printing --------------------------------------------------------------

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e.kind() {
        ExprKind::Const(c) if c.is_integer() && !e.is_negative_const() => PREC_ATOM,
        ExprKind::Const(_) if e.is_negative_const() => PREC_UNARY,
        ExprKind::Const(_) => PREC_PRODUCT,
        ExprKind::Symbol(_) => PREC_ATOM,
        ExprKind::Sum(_) | ExprKind::Difference(..) => PREC_SUM,
        ExprKind::Product(f) if f[0].is_negative_const() => PREC_UNARY,
        ExprKind::Product(_) | ExprKind::Quotient(..) => PREC_PRODUCT,
        ExprKind::Power(..) => 4,
    }
}

fn write_at(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "(")?;
        write_expr(f, e)?;
        write!(f, ")")
    } else {
        write_expr(f, e)
    }
}

/// Writes a product whose leading constant is negative, without the sign.
fn write_negated_product(f: &mut fmt::Formatter<'_>, factors: &[Expr]) -> fmt::Result {
    let c = -factors[0].as_const().unwrap();
    let rest = &factors[1..];
    let mut first = true;
    if !num_traits::One::is_one(&c) {
        write_at(f, &Expr::constant(c), PREC_PRODUCT)?;
        first = false;
    }
    for x in rest {
        if !first {
            write!(f, " * ")?;
        }
        write_at(f, x, if first { PREC_PRODUCT } else { PREC_UNARY + 1 })?;
        first = false;
    }
    Ok(())
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e.kind() {
        ExprKind::Const(c) => write!(f, "{c}"),
        ExprKind::Symbol(s) => write!(f, "{s}"),
        ExprKind::Sum(terms) => {
            write_at(f, &terms[0], PREC_SUM)?;
            for t in &terms[1..] {
                match t.kind() {
                    ExprKind::Const(c) if t.is_negative_const() => {
                        write!(f, " - ")?;
                        write_at(f, &Expr::constant(-c), PREC_PRODUCT)?;
                    }
                    ExprKind::Product(fs) if fs[0].is_negative_const() => {
                        write!(f, " - ")?;
                        write_negated_product(f, fs)?;
                    }
                    _ => {
                        write!(f, " + ")?;
                        write_at(f, t, PREC_SUM)?;
                    }
                }
            }
            Ok(())
        }
        ExprKind::Difference(a, b) => {
            write_at(f, a, PREC_SUM)?;
            write!(f, " - ")?;
            write_at(f, b, PREC_PRODUCT)
        }
        ExprKind::Product(factors) => {
            if factors[0].is_negative_const() {
                write!(f, "-")?;
                return write_negated_product(f, factors);
            }
            write_at(f, &factors[0], PREC_PRODUCT)?;
            for x in &factors[1..] {
                write!(f, " * ")?;
                write_at(f, x, PREC_UNARY + 1)?;
            }
            Ok(())
        }
        ExprKind::Quotient(a, b) => {
            write_at(f, a, PREC_PRODUCT)?;
            write!(f, " / ")?;
            write_at(f, b, PREC_UNARY + 1)
        }
        ExprKind::Power(a, n) => {
            write_at(f, a, PREC_ATOM)?;
            if *n < 0 {
                write!(f, "^({n})")
            } else {
                write!(f, "^{n}")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}
