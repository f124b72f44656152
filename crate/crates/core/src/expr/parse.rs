//! Infix expression syntax.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | '+' unary | power
//! power   := atom ('^' exponent)?
//! exponent:= ['-'] integer | '(' ['-'] integer ')'
//! atom    := number | ident | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | sqrt
//! ident   := [a-zA-Z_][a-zA-Z0-9_]*
//! ```
//!
//! `pi` is a predefined constant. Exponents must be integers.

use std::fmt;

use thiserror::Error;

use super::Expr;

/// Parse failure with a 1-based line and column.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

impl ParseError {
    /// Shift a location found inside an embedded snippet so that it is
    /// relative to the enclosing document. `origin` is the 1-based position
    /// of the snippet's first character.
    pub fn offset_by(mut self, origin_line: usize, origin_column: usize) -> Self {
        if self.line == 1 {
            self.column += origin_column - 1;
        }
        self.line += origin_line - 1;
        self
    }
}

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
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

const MAX_DEPTH: usize = 256;

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            col += 1;
            i += 1;
            continue;
        }
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, line: tl, column: tc });
            i += 1;
            col += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
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
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text.parse().map_err(|_| ParseError {
                line: tl,
                column: tc,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token { tok: Tok::Num(value), line: tl, column: tc });
            col += i - start;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Token { tok: Tok::Ident(text), line: tl, column: tc });
            col += i - start;
            continue;
        }
        return Err(ParseError {
            line: tl,
            column: tc,
            message: format!("unexpected character `{c}`"),
        });
    }
    out.push(Token { tok: Tok::End, line, column: col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, tok: &Token, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { line: tok.line, column: tok.column, message: message.into() })
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            let t = self.peek().clone();
            return self.error(&t, "expression nested too deeply");
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let mut acc = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    acc = acc + self.term()?;
                }
                Tok::Minus => {
                    self.bump();
                    acc = acc - self.term()?;
                }
                _ => break,
            }
        }
        self.depth -= 1;
        Ok(acc)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    acc = acc * self.unary()?;
                }
                Tok::Slash => {
                    self.bump();
                    acc = acc / self.unary()?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let out = match self.peek().tok {
            Tok::Minus => {
                self.bump();
                -self.unary()?
            }
            Tok::Plus => {
                self.bump();
                self.unary()?
            }
            _ => self.power()?,
        };
        self.depth -= 1;
        Ok(out)
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let n = self.exponent()?;
        Ok(base.powi(n))
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let paren = self.peek().tok == Tok::LParen;
        if paren {
            self.bump();
        }
        let negative = self.peek().tok == Tok::Minus;
        if negative {
            self.bump();
        }
        let t = self.bump();
        let n = match t.tok {
            Tok::Num(v) if v.fract() == 0.0 && v.abs() <= 1e6 => v as i32,
            Tok::Num(_) => return self.error(&t, "exponent must be an integer"),
            _ => return self.error(&t, "expected integer exponent"),
        };
        if paren {
            let close = self.bump();
            if close.tok != Tok::RParen {
                return self.error(&close, "expected `)` after exponent");
            }
        }
        Ok(if negative { -n } else { n })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let t = self.bump();
        match &t.tok {
            Tok::Num(v) => Ok(Expr::constant(*v)),
            Tok::Ident(name) => {
                let func = matches!(name.as_str(), "sin" | "cos" | "exp" | "sqrt");
                if func {
                    let open = self.bump();
                    if open.tok != Tok::LParen {
                        return self.error(&open, format!("expected `(` after `{name}`"));
                    }
                    let arg = self.expr()?;
                    let close = self.bump();
                    if close.tok != Tok::RParen {
                        return self.error(&close, "expected `)`");
                    }
                    Ok(match name.as_str() {
                        "sin" => arg.sin(),
                        "cos" => arg.cos(),
                        "exp" => arg.exp(),
                        _ => arg.sqrt(),
                    })
                } else if name == "pi" {
                    Ok(Expr::constant(std::f64::consts::PI))
                } else {
                    Ok(Expr::var(name))
                }
            }
            Tok::LParen => {
                let inner = self.expr()?;
                let close = self.bump();
                if close.tok != Tok::RParen {
                    return self.error(&close, "expected `)`");
                }
                Ok(inner)
            }
            Tok::End => self.error(&t, "unexpected end of input"),
            other => self.error(&t, format!("unexpected token {other:?}")),
        }
    }
}

/// Parse an expression from text.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, depth: 0 };
    let e = p.expr()?;
    let t = p.peek().clone();
    if t.tok != Tok::End {
        return p.error(&t, format!("unexpected trailing token {:?}", t.tok));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, names: &[&str], vals: &[f64]) -> f64 {
        parse_expr(src).unwrap().eval_at(names, vals).unwrap()
    }

    #[test]
    fn precedence_and_powers() {
        assert_eq!(ev("x^2+y^2", &["x", "y"], &[1.0, 1.0]), 2.0);
        assert_eq!(ev("-x^2", &["x"], &[3.0]), -9.0);
        assert_eq!(ev("2*x^-1", &["x"], &[4.0]), 0.5);
        assert_eq!(ev("x^(-2)", &["x"], &[2.0]), 0.25);
        assert_eq!(ev("(x1^2+y1^2)^2", &["x1", "y1"], &[1.0, 1.0]), 4.0);
        assert_eq!(ev("1 - 2 - 3", &[], &[]), -4.0);
        assert_eq!(ev("8/2/2", &[], &[]), 2.0);
        assert_eq!(ev("x*-y", &["x", "y"], &[2.0, 3.0]), -6.0);
        assert!((ev("exp(-t)*q", &["t", "q"], &[1.0, 2.0]) - 2.0 / std::f64::consts::E).abs() < 1e-15);
        assert!((ev("sin(pi/2) + cos(0) + sqrt(4)", &[], &[]) - 4.0).abs() < 1e-15);
        assert_eq!(ev("1.5e-3*1e3", &[], &[]), 1.5);
    }

    #[test]
    fn located_errors() {
        let e = parse_expr("x + * y").unwrap_err();
        assert_eq!((e.line, e.column), (1, 5));
        let e = parse_expr("x^2.5").unwrap_err();
        assert_eq!((e.line, e.column), (1, 3));
        assert!(e.message.contains("integer"));
        let e = parse_expr("x +\n  $").unwrap_err();
        assert_eq!((e.line, e.column), (2, 3));
        let e = parse_expr("sin x").unwrap_err();
        assert_eq!((e.line, e.column), (1, 5));
        let e = parse_expr("(x + 1").unwrap_err();
        assert!(e.message.contains(")"));
        assert!(parse_expr("").is_err());
        assert!(parse_expr("x y").is_err());
    }

    #[test]
    fn deep_nesting_is_rejected_not_overflowed() {
        let src = "(".repeat(10_000) + "x" + &")".repeat(10_000);
        assert!(parse_expr(&src).is_err());
        let src = "-".repeat(10_000) + "x";
        assert!(parse_expr(&src).is_err());
    }

    #[test]
    fn offsets() {
        let e = ParseError { line: 1, column: 3, message: String::new() }.offset_by(4, 10);
        assert_eq!((e.line, e.column), (4, 12));
    }
}
