//! Concrete syntax for STL formulas.
//!
//! ```text
//! formula    := or_expr ( "U" "[" num "," num "]" or_expr )*
//! or_expr    := and_expr ( ("or" | "|") and_expr )*
//! and_expr   := unary ( ("and" | "&") unary )*
//! unary      := ("not" | "!") unary
//!             | "alw" "[" num "," num "]" unary
//!             | "ev"  "[" num "," num "]" unary
//!             | primary
//! primary    := comparison | "(" formula ")"
//! comparison := arith ("<" | "<=" | ">" | ">=") arith
//! arith      := term ( ("+" | "-") term )*
//! term       := factor ( "*" factor )*
//! factor     := number | name | "abs" "(" arith ")" | "(" arith ")" | "-" factor
//! ```
//!
//! Every comparison is normalized to the form `mu > 0`: `a > b` and
//! `a >= b` become `a - b > 0`; `a < b` and `a <= b` become `b - a > 0`.
//! Names resolve against the signal schema; `alw`, `ev`, `U`, `and`, `or`,
//! `not` and `abs` are reserved.

use super::{Expr, Formula, Interval, SignalSchema, StlError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Plus,
    Minus,
    Star,
    Lt,
    Le,
    Gt,
    Ge,
    Amp,
    Pipe,
    Bang,
}

struct Lexed {
    toks: Vec<(Tok, usize)>,
    end: usize,
}

fn lex(text: &str) -> Result<Lexed, StlError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let pos = i;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, pos));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, pos));
                i += 1;
            }
            '[' => {
                toks.push((Tok::LBracket, pos));
                i += 1;
            }
            ']' => {
                toks.push((Tok::RBracket, pos));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, pos));
                i += 1;
            }
            '+' => {
                toks.push((Tok::Plus, pos));
                i += 1;
            }
            '-' => {
                toks.push((Tok::Minus, pos));
                i += 1;
            }
            '*' => {
                toks.push((Tok::Star, pos));
                i += 1;
            }
            '&' => {
                toks.push((Tok::Amp, pos));
                i += 1;
            }
            '|' => {
                toks.push((Tok::Pipe, pos));
                i += 1;
            }
            '!' => {
                toks.push((Tok::Bang, pos));
                i += 1;
            }
            '<' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push((Tok::Le, pos));
                    i += 2;
                } else {
                    toks.push((Tok::Lt, pos));
                    i += 1;
                }
            }
            '>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push((Tok::Ge, pos));
                    i += 2;
                } else {
                    toks.push((Tok::Gt, pos));
                    i += 1;
                }
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| StlError::Syntax {
                    pos: start,
                    msg: format!("bad number `{s}`"),
                })?;
                toks.push((Tok::Num(v), start));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(StlError::Syntax { pos, msg: format!("unexpected character `{c}`") })
            }
        }
    }
    Ok(Lexed { toks, end: bytes.len() })
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    end: usize,
    schema: &'a SignalSchema,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), StlError> {
        let pos = self.here();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(StlError::Syntax { pos, msg: format!("expected {what}") }),
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, StlError> {
        Err(StlError::Syntax { pos: self.here(), msg: msg.into() })
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn parse_formula(&mut self) -> Result<Formula, StlError> {
        let mut lhs = self.parse_or()?;
        while self.is_kw("U") {
            self.bump();
            let iv = self.parse_interval()?;
            let rhs = self.parse_or()?;
            lhs = Formula::until(iv, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_or(&mut self) -> Result<Formula, StlError> {
        let mut lhs = self.parse_and()?;
        loop {
            if self.is_kw("or") || self.peek() == Some(&Tok::Pipe) {
                self.bump();
                let rhs = self.parse_and()?;
                lhs = Formula::or(lhs, rhs);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_and(&mut self) -> Result<Formula, StlError> {
        let mut lhs = self.parse_unary()?;
        loop {
            if self.is_kw("and") || self.peek() == Some(&Tok::Amp) {
                self.bump();
                let rhs = self.parse_unary()?;
                lhs = Formula::and(lhs, rhs);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Formula, StlError> {
        if self.is_kw("not") || self.peek() == Some(&Tok::Bang) {
            self.bump();
            return Ok(Formula::not(self.parse_unary()?));
        }
        if self.is_kw("alw") {
            self.bump();
            let iv = self.parse_interval()?;
            return Ok(Formula::always(iv, self.parse_unary()?));
        }
        if self.is_kw("ev") {
            self.bump();
            let iv = self.parse_interval()?;
            return Ok(Formula::eventually(iv, self.parse_unary()?));
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<Formula, StlError> {
        // A primary is either a comparison or a parenthesized formula.
        // Try the comparison first; backtrack on failure.
        let saved = self.pos;
        let cmp_err = match self.parse_comparison() {
            Ok(f) => return Ok(f),
            Err(e) => {
                self.pos = saved;
                e
            }
        };
        if self.peek() == Some(&Tok::LParen) {
            self.bump();
            let f = self.parse_formula()?;
            self.expect(Tok::RParen, "`)`")?;
            Ok(f)
        } else {
            Err(cmp_err)
        }
    }

    fn parse_comparison(&mut self) -> Result<Formula, StlError> {
        let lhs = self.parse_arith()?;
        let pos = self.here();
        let op = match self.bump() {
            Some(t @ (Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge)) => t,
            _ => {
                return Err(StlError::Syntax {
                    pos,
                    msg: "expected a comparison operator".into(),
                })
            }
        };
        let rhs = self.parse_arith()?;
        // Normalize to mu > 0.
        let mu = match op {
            Tok::Gt | Tok::Ge => Expr::Sub(Box::new(lhs), Box::new(rhs)),
            Tok::Lt | Tok::Le => Expr::Sub(Box::new(rhs), Box::new(lhs)),
            _ => unreachable!(),
        };
        Ok(Formula::pred(simplify(mu)))
    }

    fn parse_interval(&mut self) -> Result<Interval, StlError> {
        self.expect(Tok::LBracket, "`[`")?;
        let a = self.parse_signed_number()?;
        self.expect(Tok::Comma, "`,`")?;
        let b = self.parse_signed_number()?;
        self.expect(Tok::RBracket, "`]`")?;
        Interval::new(a, b)
    }

    fn parse_signed_number(&mut self) -> Result<f64, StlError> {
        let neg = if self.peek() == Some(&Tok::Minus) {
            self.bump();
            true
        } else {
            false
        };
        let pos = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(if neg { -v } else { v }),
            _ => Err(StlError::Syntax { pos, msg: "expected a number".into() }),
        }
    }

    fn parse_arith(&mut self) -> Result<Expr, StlError> {
        let mut lhs = self.parse_term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.parse_term()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.parse_term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr, StlError> {
        let mut lhs = self.parse_factor()?;
        while self.peek() == Some(&Tok::Star) {
            self.bump();
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.parse_factor()?));
        }
        Ok(lhs)
    }

    fn parse_factor(&mut self) -> Result<Expr, StlError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::Minus) => Ok(Expr::Neg(Box::new(self.parse_factor()?))),
            Some(Tok::LParen) => {
                let e = self.parse_arith()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) if name == "abs" => {
                self.expect(Tok::LParen, "`(` after abs")?;
                let e = self.parse_arith()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::Abs(Box::new(e)))
            }
            Some(Tok::Ident(name)) => {
                if matches!(name.as_str(), "alw" | "ev" | "U" | "and" | "or" | "not") {
                    return Err(StlError::Syntax {
                        pos,
                        msg: format!("`{name}` is an operator, not a signal"),
                    });
                }
                match self.schema.index_of(&name) {
                    Some(index) => Ok(Expr::Var { name, index }),
                    None => Err(StlError::UnknownSignal { name, pos }),
                }
            }
            _ => Err(StlError::Syntax { pos, msg: "expected an expression".into() }),
        }
    }
}

/// Light cleanup of the normalized `lhs - rhs` form so that printed
/// formulas (always `mu > 0`) re-parse to the identical AST: drop zero
/// constants introduced by the normalization, fold constant-constant.
fn simplify(e: Expr) -> Expr {
    if let Expr::Sub(a, b) = &e {
        match (a.as_ref(), b.as_ref()) {
            (Expr::Const(x), Expr::Const(y)) => return Expr::Const(x - y),
            (_, Expr::Const(c)) if *c == 0.0 => return (**a).clone(),
            (Expr::Const(c), _) if *c == 0.0 => return Expr::Neg(b.clone()),
            _ => {}
        }
    }
    e
}

/// Parse an STL formula, resolving signal names via `schema`.
pub fn parse_formula(text: &str, schema: &SignalSchema) -> Result<Formula, StlError> {
    let lexed = lex(text)?;
    let mut p = Parser { toks: &lexed.toks, pos: 0, end: lexed.end, schema };
    let f = p.parse_formula()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input after formula");
    }
    Ok(f)
}

pub(super) fn print_formula(f: &Formula) -> String {
    match f {
        Formula::Pred(e) => format!("{} > 0", print_expr(e, 1)),
        Formula::Not(g) => format!("!({})", print_formula(g)),
        Formula::And(a, b) => format!("({}) & ({})", print_formula(a), print_formula(b)),
        Formula::Or(a, b) => format!("({}) | ({})", print_formula(a), print_formula(b)),
        Formula::Until(iv, a, b) => format!(
            "({}) U[{},{}] ({})",
            print_formula(a),
            iv.start,
            iv.end,
            print_formula(b)
        ),
        Formula::Eventually(iv, g) => {
            format!("ev[{},{}] ({})", iv.start, iv.end, print_formula(g))
        }
        Formula::Always(iv, g) => {
            format!("alw[{},{}] ({})", iv.start, iv.end, print_formula(g))
        }
    }
}

// Precedence: 1 add/sub, 2 mul, 3 atoms. Right operands of `-`, `+` and `*`
// print one level tighter so associativity survives the round trip.
fn print_expr(e: &Expr, min_prec: u8) -> String {
    let (s, prec) = match e {
        Expr::Const(c) => (format!("{c}"), 3),
        Expr::Var { name, .. } => (name.clone(), 3),
        Expr::Abs(inner) => (format!("abs({})", print_expr(inner, 1)), 3),
        Expr::Neg(inner) => (format!("-{}", print_expr(inner, 3)), 2),
        Expr::Mul(a, b) => {
            (format!("{} * {}", print_expr(a, 2), print_expr(b, 3)), 2)
        }
        Expr::Add(a, b) => {
            (format!("{} + {}", print_expr(a, 1), print_expr(b, 2)), 1)
        }
        Expr::Sub(a, b) => {
            (format!("{} - {}", print_expr(a, 1), print_expr(b, 2)), 1)
        }
    };
    if prec < min_prec {
        format!("({s})")
    } else {
        s
    }
}
