//! History shorthand.
//!
//! ```text
//! action  := op txn '[' target ']' | 'c' txn | 'a' txn
//! op      := 'r' | 'w' | 'rc' | 'wc'
//! target  := key [ '@' ver ] [ ' in P:' pred ] [ '=' int ] | 'P:' pred
//! ```
//!
//! Header lines (`universe {x,y}`, `init x=50`, `pred P = {x,y}`) precede the
//! actions. Lines starting with `#` are comments.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use super::{Action, ActionKind, History, HistoryError, HistoryHeader, ItemKey, PredicateDecl, Target, TxnId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("{0}")]
    Syntax(String),
    #[error(transparent)]
    Invalid(#[from] HistoryError),
}

/// Parse failure at a 1-based line and column.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn syntax(pos: Pos, msg: impl Into<String>) -> Self {
        ParseError {
            line: pos.line,
            column: pos.column,
            kind: ParseErrorKind::Syntax(msg.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

struct Cursor<'a> {
    chars: Vec<char>,
    at: usize,
    line: usize,
    _src: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Cursor {
            chars: src.chars().collect(),
            at: 0,
            line,
            _src: src,
        }
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            column: self.at + 1,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.at).copied()
    }

    fn peek_at(&self, off: usize) -> Option<char> {
        self.chars.get(self.at + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.at += 1;
        }
        c
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.at += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn eat_str(&mut self, s: &str) -> bool {
        let n = s.chars().count();
        if self.chars[self.at..].iter().take(n).copied().eq(s.chars()) {
            self.at += n;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(ParseError::syntax(self.pos(), format!("expected '{c}'")))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        let start = self.pos();
        let mut s = String::new();
        if let Some(c) = self.peek().filter(|c| c.is_ascii_alphabetic() || *c == '_') {
            s.push(c);
            self.at += 1;
        } else {
            return Err(ParseError::syntax(start, "expected identifier"));
        }
        while let Some(c) = self.peek().filter(|c| c.is_ascii_alphanumeric() || *c == '_') {
            s.push(c);
            self.at += 1;
        }
        Ok(s)
    }

    fn digits(&mut self) -> Result<u32, ParseError> {
        let start = self.pos();
        let mut s = String::new();
        while let Some(c) = self.peek().filter(char::is_ascii_digit) {
            s.push(c);
            self.at += 1;
        }
        s.parse()
            .map_err(|_| ParseError::syntax(start, "expected transaction number"))
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let start = self.pos();
        let mut s = String::new();
        if let Some(c) = self.peek().filter(|c| *c == '-' || *c == '+') {
            s.push(c);
            self.at += 1;
        }
        while let Some(c) = self.peek().filter(char::is_ascii_digit) {
            s.push(c);
            self.at += 1;
        }
        s.parse().map_err(|_| ParseError::syntax(start, "expected integer"))
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.peek().is_none()
    }

    fn key_set(&mut self) -> Result<BTreeSet<ItemKey>, ParseError> {
        self.skip_ws();
        self.expect('{')?;
        let mut keys = BTreeSet::new();
        self.skip_ws();
        if self.eat('}') {
            return Ok(keys);
        }
        loop {
            self.skip_ws();
            keys.insert(ItemKey::new(self.ident()?));
            self.skip_ws();
            if self.eat('}') {
                return Ok(keys);
            }
            self.expect(',')?;
        }
    }
}

pub fn parse_history(text: &str) -> Result<History, ParseError> {
    let mut header = HistoryHeader::default();
    let mut actions = Vec::new();
    let mut positions = Vec::new();
    let mut header_pos: Vec<(String, Pos)> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let indent = raw.len() - trimmed.len();
        let keyword = trimmed.split_whitespace().next().unwrap_or("");
        if matches!(keyword, "universe" | "init" | "pred") {
            let pos = Pos { line, column: indent + 1 };
            if !actions.is_empty() {
                return Err(ParseError::syntax(pos, "header line after actions"));
            }
            parse_header(raw, line, &mut header, &mut header_pos)?;
            continue;
        }
        let mut cur = Cursor::new(raw, line);
        while !cur.at_end() {
            positions.push(cur.pos());
            actions.push(parse_action(&mut cur)?);
        }
    }

    History::with_header(header, actions).map_err(|e| {
        let pos = match &e {
            HistoryError::DuplicatePredicate { name } => header_pos
                .iter()
                .rev()
                .find(|(n, _)| n == name)
                .map(|(_, p)| *p),
            _ => e.index().and_then(|i| positions.get(i).copied()),
        }
        .unwrap_or(Pos { line: 1, column: 1 });
        ParseError {
            line: pos.line,
            column: pos.column,
            kind: ParseErrorKind::Invalid(e),
        }
    })
}

fn parse_header(
    raw: &str,
    line: usize,
    header: &mut HistoryHeader,
    header_pos: &mut Vec<(String, Pos)>,
) -> Result<(), ParseError> {
    let mut cur = Cursor::new(raw, line);
    cur.skip_ws();
    let start = cur.pos();
    let keyword = cur.ident()?;
    match keyword.as_str() {
        "universe" => {
            let keys = cur.key_set()?;
            header.universe.get_or_insert_with(BTreeSet::new).extend(keys);
        }
        "init" => {
            cur.skip_ws();
            loop {
                let key = ItemKey::new(cur.ident()?);
                cur.skip_ws();
                cur.expect('=')?;
                cur.skip_ws();
                let v = cur.int()?;
                header.init.insert(key, v);
                if cur.at_end() {
                    break;
                }
                cur.eat(',');
                cur.skip_ws();
            }
        }
        "pred" => {
            cur.skip_ws();
            let name = cur.ident()?;
            cur.skip_ws();
            cur.expect('=')?;
            let covered = cur.key_set()?;
            header_pos.push((name.clone(), start));
            header.predicates.push(PredicateDecl { name, covered });
        }
        _ => unreachable!("caller checks keyword"),
    }
    if !cur.at_end() {
        return Err(ParseError::syntax(cur.pos(), "trailing input in header line"));
    }
    Ok(())
}

fn parse_action(cur: &mut Cursor<'_>) -> Result<Action, ParseError> {
    let start = cur.pos();
    let first = cur.bump();
    let cursor_op = cur.peek() == Some('c') && cur.peek_at(1).is_some_and(|c| c.is_ascii_digit());
    let kind = match first {
        Some('r') if cursor_op => {
            cur.bump();
            ActionKind::CursorRead
        }
        Some('w') if cursor_op => {
            cur.bump();
            ActionKind::CursorWrite
        }
        Some('r') => ActionKind::Read,
        Some('w') => ActionKind::Write,
        Some('c') => ActionKind::Commit,
        Some('a') => ActionKind::Abort,
        _ => return Err(ParseError::syntax(start, "expected r, w, rc, wc, c or a")),
    };
    let txn = TxnId(cur.digits()?);
    if matches!(kind, ActionKind::Commit | ActionKind::Abort) {
        return Ok(Action {
            kind,
            txn,
            target: None,
            value: None,
            version: None,
        });
    }
    cur.expect('[')?;
    cur.skip_ws();
    let target_pos = cur.pos();
    let mut action = if cur.eat_str("P:") {
        let name = cur.ident()?;
        if kind != ActionKind::Read {
            return Err(ParseError::syntax(target_pos, "only plain reads may target a predicate"));
        }
        Action::predicate_read(txn, name)
    } else {
        let key = ItemKey::new(cur.ident()?);
        let mut version = None;
        if cur.eat('@') {
            version = Some(TxnId(cur.digits()?));
        }
        cur.skip_ws();
        let target = if cur.eat_str("in") {
            cur.skip_ws();
            if !cur.eat_str("P:") {
                return Err(ParseError::syntax(cur.pos(), "expected P: after in"));
            }
            Target::ItemInPredicate {
                key,
                predicate: cur.ident()?,
            }
        } else {
            Target::Item(key)
        };
        cur.skip_ws();
        let value = if cur.eat('=') {
            cur.skip_ws();
            Some(cur.int()?)
        } else {
            None
        };
        Action {
            kind,
            txn,
            target: Some(target),
            value,
            version,
        }
    };
    cur.skip_ws();
    cur.expect(']')?;
    if action.kind == ActionKind::PredicateRead {
        action.value = None;
    }
    Ok(action)
}

/// Canonical text: header lines (universe, init, predicates) followed by the
/// actions on one line separated by single spaces.
pub fn format_history(h: &History) -> String {
    let mut lines = Vec::new();
    let header = h.header();
    if let Some(u) = &header.universe {
        lines.push(format!("universe {}", key_set(u.iter())));
    }
    for (k, v) in &header.init {
        lines.push(format!("init {k}={v}"));
    }
    for p in &header.predicates {
        lines.push(format!("pred {} = {}", p.name, key_set(p.covered.iter())));
    }
    if !h.actions().is_empty() {
        lines.push(
            h.actions()
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        );
    }
    lines.join("\n")
}

fn key_set<'a>(keys: impl Iterator<Item = &'a ItemKey>) -> String {
    let keys: Vec<_> = keys.map(ItemKey::as_str).collect();
    format!("{{{}}}", keys.join(","))
}
