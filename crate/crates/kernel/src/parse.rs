//! Text syntax for choreographies and endpoint programs.
//!
//! Choreography DSL, one instruction per line:
//!
//! ```text
//! p.e -> q.x
//! p -> q[L]
//! p.x := e
//! p.x := t(e)          # t must be a declared transaction name
//! if p.e { ... } else { ... }
//! ```
//!
//! Endpoint DSL:
//!
//! ```text
//! q ! e
//! p ? x
//! q (+) L
//! p & { L1: {...} L2: {...} }
//! x := e
//! x := t(e)
//! if e {...} else {...}
//! ```
//!
//! Names match `[A-Za-z_][A-Za-z0-9_]*`; expressions support integer
//! literals, `true`/`false`, double-quoted strings, and calls of
//! registered functions. `#` starts a line comment. Since the grammar
//! does not distinguish `x := t(e)` from `x := f(e)` lexically, the
//! parser takes the set of declared transaction names.

use crate::chor::{ChorInstr, Choreography};
use crate::expr::Expr;
use crate::net::{ProcInstr, ProcProgram};
use crate::state::{LabelName, ProcName, VarName};
use crate::txn::TransName;
use crate::value::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

impl ParseError {
    fn new(line: usize, msg: impl Into<String>) -> ParseError {
        ParseError {
            line,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Arrow,     // ->
    Squiggle,  // ~>  (runtime residuals, accepted for trace tooling)
    Assign,    // :=
    Colon,
    Dot,
    Comma,
    Bang,
    Question,
    Amp,
    SelectOp, // (+)
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    If,
    Else,
    True,
    False,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Arrow => write!(f, "`->`"),
            Tok::Squiggle => write!(f, "`~>`"),
            Tok::Assign => write!(f, "`:=`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::Dot => write!(f, "`.`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Bang => write!(f, "`!`"),
            Tok::Question => write!(f, "`?`"),
            Tok::Amp => write!(f, "`&`"),
            Tok::SelectOp => write!(f, "`(+)`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::If => write!(f, "`if`"),
            Tok::Else => write!(f, "`else`"),
            Tok::True => write!(f, "`true`"),
            Tok::False => write!(f, "`false`"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let mut toks = Vec::new();
    let mut line = 1usize;
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '#' => {
                for c in chars.by_ref() {
                    if c == '\n' {
                        line += 1;
                        break;
                    }
                }
            }
            '-' => {
                chars.next();
                match chars.peek() {
                    Some('>') => {
                        chars.next();
                        toks.push((Tok::Arrow, line));
                    }
                    Some(d) if d.is_ascii_digit() => {
                        let n = lex_int(&mut chars, line, true)?;
                        toks.push((Tok::Int(n), line));
                    }
                    _ => return Err(ParseError::new(line, "stray `-`")),
                }
            }
            '~' => {
                chars.next();
                if chars.peek() == Some(&'>') {
                    chars.next();
                    toks.push((Tok::Squiggle, line));
                } else {
                    return Err(ParseError::new(line, "stray `~`"));
                }
            }
            ':' => {
                chars.next();
                if chars.peek() == Some(&'=') {
                    chars.next();
                    toks.push((Tok::Assign, line));
                } else {
                    toks.push((Tok::Colon, line));
                }
            }
            '(' => {
                chars.next();
                // `(+)` is the selection operator.
                let mut look = chars.clone();
                if look.next() == Some('+') && look.next() == Some(')') {
                    chars.next();
                    chars.next();
                    toks.push((Tok::SelectOp, line));
                } else {
                    toks.push((Tok::LParen, line));
                }
            }
            ')' => {
                chars.next();
                toks.push((Tok::RParen, line));
            }
            '{' => {
                chars.next();
                toks.push((Tok::LBrace, line));
            }
            '}' => {
                chars.next();
                toks.push((Tok::RBrace, line));
            }
            '[' => {
                chars.next();
                toks.push((Tok::LBracket, line));
            }
            ']' => {
                chars.next();
                toks.push((Tok::RBracket, line));
            }
            '.' => {
                chars.next();
                toks.push((Tok::Dot, line));
            }
            ',' => {
                chars.next();
                toks.push((Tok::Comma, line));
            }
            '!' => {
                chars.next();
                toks.push((Tok::Bang, line));
            }
            '?' => {
                chars.next();
                toks.push((Tok::Question, line));
            }
            '&' => {
                chars.next();
                toks.push((Tok::Amp, line));
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => return Err(ParseError::new(line, "unterminated string")),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            other => {
                                return Err(ParseError::new(
                                    line,
                                    format!("bad escape {other:?}"),
                                ))
                            }
                        },
                        Some('\n') => return Err(ParseError::new(line, "unterminated string")),
                        Some(c) => s.push(c),
                    }
                }
                toks.push((Tok::Str(s), line));
            }
            c if c.is_ascii_digit() => {
                let n = lex_int(&mut chars, line, false)?;
                toks.push((Tok::Int(n), line));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                let tok = match s.as_str() {
                    "if" => Tok::If,
                    "else" => Tok::Else,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    _ => Tok::Ident(s),
                };
                toks.push((tok, line));
            }
            other => {
                return Err(ParseError::new(line, format!("unexpected character {other:?}")))
            }
        }
    }
    Ok(toks)
}

fn lex_int(
    chars: &mut std::iter::Peekable<std::str::Chars<'_>>,
    line: usize,
    negative: bool,
) -> Result<i64, ParseError> {
    let mut digits = String::new();
    while let Some(&c) = chars.peek() {
        if c.is_ascii_digit() {
            digits.push(c);
            chars.next();
        } else {
            break;
        }
    }
    let n: i64 = digits
        .parse()
        .map_err(|_| ParseError::new(line, format!("integer out of range: {digits}")))?;
    Ok(if negative { -n } else { n })
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    txns: &'a BTreeSet<String>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|(_, l)| *l)
            .unwrap_or(0)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        let line = self.line();
        match self.next() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(ParseError::new(line, format!("expected {want}, found {t}"))),
            None => Err(ParseError::new(line, format!("expected {want}, found end of input"))),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            Some(t) => Err(ParseError::new(line, format!("expected a name, found {t}"))),
            None => Err(ParseError::new(line, "expected a name, found end of input")),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Int(n)) => Ok(Expr::Lit(Value::Int(n))),
            Some(Tok::True) => Ok(Expr::Lit(Value::Bool(true))),
            Some(Tok::False) => Ok(Expr::Lit(Value::Bool(false))),
            Some(Tok::Str(s)) => Ok(Expr::Lit(Value::Str(s))),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.next();
                    let mut args = Vec::new();
                    if self.peek() != Some(&Tok::RParen) {
                        loop {
                            args.push(self.expr()?);
                            if self.peek() == Some(&Tok::Comma) {
                                self.next();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    Ok(Expr::Call(name, args))
                } else {
                    Ok(Expr::Var(VarName::new(name)))
                }
            }
            Some(t) => Err(ParseError::new(line, format!("expected an expression, found {t}"))),
            None => Err(ParseError::new(line, "expected an expression, found end of input")),
        }
    }

    /// Split `x := rhs` into an assignment or a transaction call based
    /// on the declared transaction names.
    fn assign_rhs(&mut self) -> Result<AssignRhs, ParseError> {
        let e = self.expr()?;
        if let Expr::Call(name, args) = &e {
            if self.txns.contains(name) {
                if args.len() != 1 {
                    return Err(ParseError::new(
                        self.line(),
                        format!("transaction `{name}` takes exactly one argument"),
                    ));
                }
                return Ok(AssignRhs::Txn(TransName::new(name.clone()), args[0].clone()));
            }
        }
        Ok(AssignRhs::Expr(e))
    }

    // ---- choreography statements ----

    fn chor_block(&mut self) -> Result<Vec<ChorInstr>, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut instrs = Vec::new();
        while self.peek() != Some(&Tok::RBrace) {
            if self.peek().is_none() {
                return Err(ParseError::new(self.line(), "unterminated block"));
            }
            instrs.push(self.chor_stmt()?);
        }
        self.expect(Tok::RBrace)?;
        Ok(instrs)
    }

    fn chor_stmt(&mut self) -> Result<ChorInstr, ParseError> {
        let line = self.line();
        if self.peek() == Some(&Tok::If) {
            self.next();
            let p = ProcName::new(self.ident()?);
            self.expect(Tok::Dot)?;
            let e = self.expr()?;
            let then_body = self.chor_block()?;
            self.expect(Tok::Else)?;
            let else_body = self.chor_block()?;
            return Ok(ChorInstr::Cond(
                p,
                e,
                Arc::new(Choreography::from_instrs(then_body)),
                Arc::new(Choreography::from_instrs(else_body)),
            ));
        }
        let p = ProcName::new(self.ident()?);
        match self.next() {
            Some(Tok::Dot) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::Arrow) => {
                        let q = ProcName::new(self.ident()?);
                        self.expect(Tok::Dot)?;
                        let x = VarName::new(self.ident()?);
                        Ok(ChorInstr::Send(p, e, q, x))
                    }
                    Some(Tok::Assign) => {
                        let Expr::Var(x) = e else {
                            return Err(ParseError::new(
                                line,
                                "left side of `:=` must be a variable",
                            ));
                        };
                        match self.assign_rhs()? {
                            AssignRhs::Expr(rhs) => Ok(ChorInstr::Assign(p, x, rhs)),
                            AssignRhs::Txn(t, arg) => Ok(ChorInstr::Trans(p, x, t, arg)),
                        }
                    }
                    other => Err(ParseError::new(
                        line,
                        format!(
                            "expected `->` or `:=` after `{p}.{e}`, found {}",
                            other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
                        ),
                    )),
                }
            }
            Some(Tok::Arrow) => {
                let q = ProcName::new(self.ident()?);
                self.expect(Tok::LBracket)?;
                let l = LabelName::new(self.ident()?);
                self.expect(Tok::RBracket)?;
                Ok(ChorInstr::SelSend(p, q, l))
            }
            Some(Tok::Squiggle) => {
                // Runtime residual forms, used when loading recorded
                // configurations: p ~> q.x and p ~> q[L].
                let q = ProcName::new(self.ident()?);
                match self.next() {
                    Some(Tok::Dot) => {
                        let x = VarName::new(self.ident()?);
                        Ok(ChorInstr::InFlight(p, q, x))
                    }
                    Some(Tok::LBracket) => {
                        let l = LabelName::new(self.ident()?);
                        self.expect(Tok::RBracket)?;
                        Ok(ChorInstr::SelInFlight(p, q, l))
                    }
                    _ => Err(ParseError::new(line, "expected `.x` or `[L]` after `~>`")),
                }
            }
            other => Err(ParseError::new(
                line,
                format!(
                    "expected `.`, `->`, or `~>` after `{p}`, found {}",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
                ),
            )),
        }
    }

    // ---- endpoint statements ----

    fn proc_block(&mut self) -> Result<ProcProgram, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut instrs = Vec::new();
        while self.peek() != Some(&Tok::RBrace) {
            if self.peek().is_none() {
                return Err(ParseError::new(self.line(), "unterminated block"));
            }
            instrs.push(self.proc_stmt()?);
        }
        self.expect(Tok::RBrace)?;
        Ok(ProcProgram::from_instrs(instrs))
    }

    fn proc_stmt(&mut self) -> Result<ProcInstr, ParseError> {
        let line = self.line();
        if self.peek() == Some(&Tok::If) {
            self.next();
            let e = self.expr()?;
            let then_body = self.proc_block()?;
            self.expect(Tok::Else)?;
            let else_body = self.proc_block()?;
            return Ok(ProcInstr::Cond(e, Arc::new(then_body), Arc::new(else_body)));
        }
        let name = self.ident()?;
        match self.next() {
            Some(Tok::Bang) => {
                let e = self.expr()?;
                Ok(ProcInstr::SendTo(ProcName::new(name), e))
            }
            Some(Tok::Question) => {
                let x = VarName::new(self.ident()?);
                Ok(ProcInstr::RecvFrom(ProcName::new(name), x))
            }
            Some(Tok::SelectOp) => {
                let l = LabelName::new(self.ident()?);
                Ok(ProcInstr::Select(ProcName::new(name), l))
            }
            Some(Tok::Amp) => {
                self.expect(Tok::LBrace)?;
                let mut arms = BTreeMap::new();
                while self.peek() != Some(&Tok::RBrace) {
                    let l = LabelName::new(self.ident()?);
                    self.expect(Tok::Colon)?;
                    let body = self.proc_block()?;
                    if arms.insert(l.clone(), body).is_some() {
                        return Err(ParseError::new(line, format!("duplicate branch label `{l}`")));
                    }
                }
                self.expect(Tok::RBrace)?;
                if arms.is_empty() {
                    return Err(ParseError::new(line, "branch needs at least one label"));
                }
                Ok(ProcInstr::Branch(ProcName::new(name), arms))
            }
            Some(Tok::Assign) => match self.assign_rhs()? {
                AssignRhs::Expr(rhs) => Ok(ProcInstr::Assign(VarName::new(name), rhs)),
                AssignRhs::Txn(t, arg) => Ok(ProcInstr::Trans(VarName::new(name), t, arg)),
            },
            other => Err(ParseError::new(
                line,
                format!(
                    "expected `!`, `?`, `(+)`, `&`, or `:=` after `{name}`, found {}",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
                ),
            )),
        }
    }
}

enum AssignRhs {
    Expr(Expr),
    Txn(TransName, Expr),
}

/// Parse a choreography. `txn_names` lists the declared transaction
/// names, which is how `p.x := t(e)` is told apart from a function
/// call assignment. Source programs may not contain runtime residuals.
pub fn parse_choreography(
    src: &str,
    txn_names: &BTreeSet<String>,
) -> Result<Choreography, ParseError> {
    let c = parse_choreography_runtime(src, txn_names)?;
    if c.has_runtime_terms() {
        return Err(ParseError::new(
            1,
            "source programs may not contain in-flight (`~>`) terms",
        ));
    }
    Ok(c)
}

/// Like `parse_choreography` but accepting runtime residual terms.
pub fn parse_choreography_runtime(
    src: &str,
    txn_names: &BTreeSet<String>,
) -> Result<Choreography, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        txns: txn_names,
    };
    let mut instrs = Vec::new();
    while p.peek().is_some() {
        instrs.push(p.chor_stmt()?);
    }
    Ok(Choreography::from_instrs(instrs))
}

/// Parse one endpoint program.
pub fn parse_proc_program(
    src: &str,
    txn_names: &BTreeSet<String>,
) -> Result<ProcProgram, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        txns: txn_names,
    };
    let mut instrs = Vec::new();
    while p.peek().is_some() {
        instrs.push(p.proc_stmt()?);
    }
    Ok(ProcProgram::from_instrs(instrs))
}

// ---- printers ----

fn fmt_expr(e: &Expr) -> String {
    e.to_string()
}

fn indent(depth: usize) -> String {
    "  ".repeat(depth)
}

/// Render a choreography in the DSL syntax, one instruction per line.
pub fn chor_to_dsl(c: &Choreography) -> String {
    let mut out = String::new();
    write_chor(c, 0, &mut out);
    out
}

fn write_chor(c: &Choreography, depth: usize, out: &mut String) {
    for i in c.instrs() {
        match i {
            ChorInstr::Cond(p, e, c1, c2) => {
                out.push_str(&format!("{}if {}.{} {{\n", indent(depth), p, fmt_expr(e)));
                write_chor(c1, depth + 1, out);
                out.push_str(&format!("{}}} else {{\n", indent(depth)));
                write_chor(c2, depth + 1, out);
                out.push_str(&format!("{}}}\n", indent(depth)));
            }
            other => out.push_str(&format!("{}{}\n", indent(depth), other)),
        }
    }
}

/// Render an endpoint program in the DSL syntax.
pub fn prog_to_dsl(p: &ProcProgram) -> String {
    let mut out = String::new();
    write_prog(p, 0, &mut out);
    out
}

fn write_prog(p: &ProcProgram, depth: usize, out: &mut String) {
    for i in p.instrs() {
        match i {
            ProcInstr::Cond(e, pt, pf) => {
                out.push_str(&format!("{}if {} {{\n", indent(depth), fmt_expr(e)));
                write_prog(pt, depth + 1, out);
                out.push_str(&format!("{}}} else {{\n", indent(depth)));
                write_prog(pf, depth + 1, out);
                out.push_str(&format!("{}}}\n", indent(depth)));
            }
            ProcInstr::Branch(from, arms) => {
                out.push_str(&format!("{}{} & {{\n", indent(depth), from));
                for (l, body) in arms {
                    out.push_str(&format!("{}{}: {{\n", indent(depth + 1), l));
                    write_prog(body, depth + 2, out);
                    out.push_str(&format!("{}}}\n", indent(depth + 1)));
                }
                out.push_str(&format!("{}}}\n", indent(depth)));
            }
            other => out.push_str(&format!("{}{}\n", indent(depth), other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn txns(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_send_and_assign() {
        let c = parse_choreography("p.1 -> q.x\nq.y := add(x, 2)\n", &txns(&[])).unwrap();
        let instrs: Vec<_> = c.instrs().cloned().collect();
        assert_eq!(instrs.len(), 2);
        assert!(matches!(instrs[0], ChorInstr::Send(..)));
        assert!(matches!(instrs[1], ChorInstr::Assign(..)));
    }

    #[test]
    fn parse_transaction_needs_declaration() {
        let src = "p.x := book(5)\n";
        let with = parse_choreography(src, &txns(&["book"])).unwrap();
        assert!(matches!(with.instrs().next(), Some(ChorInstr::Trans(..))));
        let without = parse_choreography(src, &txns(&[])).unwrap();
        assert!(matches!(without.instrs().next(), Some(ChorInstr::Assign(..))));
    }

    #[test]
    fn parse_conditional_with_selections() {
        let src = "if p.eq(x, 1) {\n  p -> q[L]\n  p.1 -> q.y\n} else {\n  p -> q[R]\n}\n";
        let c = parse_choreography(src, &txns(&[])).unwrap();
        assert_eq!(c.len(), 1);
        match c.instrs().next().unwrap() {
            ChorInstr::Cond(p, _, c1, c2) => {
                assert_eq!(p.as_str(), "p");
                assert_eq!(c1.len(), 2);
                assert_eq!(c2.len(), 1);
            }
            other => panic!("expected conditional, got {other}"),
        }
    }

    #[test]
    fn parse_rejects_inflight_in_source() {
        let err = parse_choreography("p ~> q.x\n", &txns(&[])).unwrap_err();
        assert!(err.msg.contains("in-flight"));
    }

    #[test]
    fn parse_endpoint_program() {
        let src = "q ! add(x, 1)\np ? y\nq (+) GO\np & { A: { x := 1 } B: { x := 2 } }\n";
        let prog = parse_proc_program(src, &txns(&[])).unwrap();
        let kinds: Vec<_> = prog.instrs().collect();
        assert_eq!(kinds.len(), 4);
        assert!(matches!(kinds[0], ProcInstr::SendTo(..)));
        assert!(matches!(kinds[1], ProcInstr::RecvFrom(..)));
        assert!(matches!(kinds[2], ProcInstr::Select(..)));
        assert!(matches!(kinds[3], ProcInstr::Branch(..)));
    }

    #[test]
    fn dsl_roundtrip_choreography() {
        let src = "p.1 -> q.x\nif q.eq(x, 1) {\n  q -> p[OK]\n  q.done := t1(x)\n} else {\n  q -> p[NO]\n}\n";
        let names = txns(&["t1"]);
        let c = parse_choreography(src, &names).unwrap();
        let printed = chor_to_dsl(&c);
        let again = parse_choreography(&printed, &names).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn dsl_roundtrip_endpoint() {
        let src = "q ! 5\np & { A: { q ! 1 } B: { x := t9(2) } }\nif eq(x, 2) { y := 1 } else { y := 2 }\n";
        let names = txns(&["t9"]);
        let p = parse_proc_program(src, &names).unwrap();
        let printed = prog_to_dsl(&p);
        let again = parse_proc_program(&printed, &names).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn error_carries_line_number() {
        let err = parse_choreography("p.1 -> q.x\np.x ->\n", &txns(&[])).unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn negative_literals_and_strings() {
        let c = parse_choreography("p.x := -5\np.s := \"hi\\nthere\"\n", &txns(&[])).unwrap();
        let instrs: Vec<_> = c.instrs().cloned().collect();
        assert!(matches!(
            &instrs[0],
            ChorInstr::Assign(_, _, Expr::Lit(Value::Int(-5)))
        ));
        assert!(matches!(
            &instrs[1],
            ChorInstr::Assign(_, _, Expr::Lit(Value::Str(s))) if s == "hi\nthere"
        ));
    }
}
