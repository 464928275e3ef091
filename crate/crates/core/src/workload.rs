//! Transaction programs and schedules.
//!
//! A workload file is line oriented:
//!
//! ```text
//! name transfer
//! universe {x,y}
//! init x=50 y=50
//! pred accounts = {x,y}
//! constraint sum{x,y} = 100
//! schedule 1 1 2 2 2 1 1 1
//! txn 1: r[x] w[x=x-40] r[y] w[y=y+40] commit
//! txn 2: r[x] r[y] commit
//! ```
//!
//! Program steps are `r[x]`, `r[P:name]`, `w[x=expr]`, `open[P:name]`,
//! `fetch`, `wc[x=expr]`, `close` and `commit`. An `expr` is an integer, a key
//! (the value this transaction last saw for it) or a key plus or minus an
//! integer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::history::{ItemKey, PredicateDecl, TxnId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueExpr {
    Const(i64),
    /// Last value the transaction observed for `key`, plus `offset`.
    Var { key: ItemKey, offset: i64 },
}

impl ValueExpr {
    /// Keys the transaction saw as absent evaluate to 0.
    pub fn eval(&self, locals: &BTreeMap<ItemKey, i64>) -> i64 {
        match self {
            ValueExpr::Const(v) => *v,
            ValueExpr::Var { key, offset } => locals.get(key).copied().unwrap_or(0) + offset,
        }
    }
}

impl fmt::Display for ValueExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueExpr::Const(v) => write!(f, "{v}"),
            ValueExpr::Var { key, offset: 0 } => write!(f, "{key}"),
            ValueExpr::Var { key, offset } if *offset > 0 => write!(f, "{key}+{offset}"),
            ValueExpr::Var { key, offset } => write!(f, "{key}{offset}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Read(ItemKey),
    PredicateRead(String),
    Write(ItemKey, ValueExpr),
    OpenCursor(String),
    /// Advance the open cursor to the next present covered key, in key order.
    Fetch,
    /// Write the row under the cursor.
    CursorWrite(ItemKey, ValueExpr),
    CloseCursor,
    Commit,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Read(k) => write!(f, "r[{k}]"),
            Step::PredicateRead(p) => write!(f, "r[P:{p}]"),
            Step::Write(k, e) => write!(f, "w[{k}={e}]"),
            Step::OpenCursor(p) => write!(f, "open[P:{p}]"),
            Step::Fetch => f.write_str("fetch"),
            Step::CursorWrite(k, e) => write!(f, "wc[{k}={e}]"),
            Step::CloseCursor => f.write_str("close"),
            Step::Commit => f.write_str("commit"),
        }
    }
}

/// Ordered transaction slots; the engine runs the named transaction's next
/// step in each slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScheduleSpec(pub Vec<TxnId>);

impl ScheduleSpec {
    pub fn slots(&self) -> &[TxnId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Comma-separated form used in machine-readable records.
    pub fn compact(&self) -> String {
        self.0.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad schedule token {0:?}")]
pub struct ScheduleParseError(pub String);

impl FromStr for ScheduleSpec {
    type Err = ScheduleParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| match t.parse::<u32>() {
                Ok(n) if n > 0 => Ok(TxnId(n)),
                _ => Err(ScheduleParseError(t.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(ScheduleSpec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Const(i64),
    Key(ItemKey),
    Sum(Vec<ItemKey>),
    PredicateSum(String),
    PredicateCount(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(v) => write!(f, "{v}"),
            Term::Key(k) => write!(f, "{k}"),
            Term::Sum(keys) => {
                let keys: Vec<&str> = keys.iter().map(ItemKey::as_str).collect();
                write!(f, "sum{{{}}}", keys.join(","))
            }
            Term::PredicateSum(p) => write!(f, "sum(P:{p})"),
            Term::PredicateCount(p) => write!(f, "count(P:{p})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparison {
    const ALL: [(&'static str, Comparison); 6] = [
        ("=", Comparison::Eq),
        ("!=", Comparison::Ne),
        ("<", Comparison::Lt),
        ("<=", Comparison::Le),
        (">", Comparison::Gt),
        (">=", Comparison::Ge),
    ];

    fn symbol(self) -> &'static str {
        Self::ALL.iter().find(|(_, c)| *c == self).map(|(s, _)| *s).unwrap()
    }

    fn holds(self, a: i64, b: i64) -> bool {
        match self {
            Comparison::Eq => a == b,
            Comparison::Ne => a != b,
            Comparison::Lt => a < b,
            Comparison::Le => a <= b,
            Comparison::Gt => a > b,
            Comparison::Ge => a >= b,
        }
    }
}

/// Integrity constraint the workload's transactions each preserve when run
/// alone; checked against the final database state for reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub lhs: Term,
    pub op: Comparison,
    pub rhs: Term,
}

impl Constraint {
    /// Absent rows contribute nothing to predicate sums and counts; absent
    /// keys read as 0.
    pub fn holds(&self, state: &BTreeMap<ItemKey, i64>, preds: &[PredicateDecl]) -> bool {
        let eval = |t: &Term| -> i64 {
            let rows = |p: &str| -> Vec<i64> {
                preds
                    .iter()
                    .find(|d| d.name == p)
                    .map(|d| d.covered.iter().filter_map(|k| state.get(k).copied()).collect())
                    .unwrap_or_default()
            };
            match t {
                Term::Const(v) => *v,
                Term::Key(k) => state.get(k).copied().unwrap_or(0),
                Term::Sum(keys) => keys.iter().map(|k| state.get(k).copied().unwrap_or(0)).sum(),
                Term::PredicateSum(p) => rows(p).iter().sum(),
                Term::PredicateCount(p) => rows(p).len() as i64,
            }
        };
        self.op.holds(eval(&self.lhs), eval(&self.rhs))
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op.symbol(), self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("T{txn}: {message}")]
    Program { txn: TxnId, message: String },
    #[error("undeclared predicate {0}")]
    UndeclaredPredicate(String),
    #[error("key {0} is outside the declared universe")]
    UnknownKey(ItemKey),
    #[error("no transactions declared")]
    Empty,
}

/// Programs for a fixed set of transactions over a declared database.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub name: String,
    pub universe: BTreeSet<ItemKey>,
    pub init: BTreeMap<ItemKey, i64>,
    pub predicates: Vec<PredicateDecl>,
    pub programs: BTreeMap<TxnId, Vec<Step>>,
    pub constraint: Option<Constraint>,
    pub reference_schedule: Option<ScheduleSpec>,
}

impl Workload {
    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn txns(&self) -> impl Iterator<Item = TxnId> + '_ {
        self.programs.keys().copied()
    }

    pub fn total_steps(&self) -> usize {
        self.programs.values().map(Vec::len).sum()
    }

    pub fn uses_cursors(&self) -> bool {
        self.programs
            .values()
            .flatten()
            .any(|s| matches!(s, Step::Fetch | Step::CursorWrite(..)))
    }

    pub fn constraint_holds(&self, state: &BTreeMap<ItemKey, i64>) -> Option<bool> {
        self.constraint.as_ref().map(|c| c.holds(state, &self.predicates))
    }

    /// Checks keys and predicates are declared, programs end in their only
    /// commit, and every expression refers to a key the transaction has
    /// already touched.
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.programs.is_empty() {
            return Err(WorkloadError::Empty);
        }
        let key_ok = |k: &ItemKey| {
            if self.universe.contains(k) {
                Ok(())
            } else {
                Err(WorkloadError::UnknownKey(k.clone()))
            }
        };
        let pred = |p: &str| {
            self.predicate(p)
                .ok_or_else(|| WorkloadError::UndeclaredPredicate(p.to_string()))
        };
        for p in &self.predicates {
            p.covered.iter().try_for_each(key_ok)?;
        }
        self.init.keys().try_for_each(key_ok)?;
        for (txn, steps) in &self.programs {
            let err = |message: String| WorkloadError::Program { txn: *txn, message };
            let mut seen: BTreeSet<ItemKey> = BTreeSet::new();
            let mut cursor: Option<&PredicateDecl> = None;
            for (i, step) in steps.iter().enumerate() {
                let last = i + 1 == steps.len();
                if matches!(step, Step::Commit) != last {
                    return Err(err("program must end with its only commit".into()));
                }
                let check_expr = |e: &ValueExpr, seen: &BTreeSet<ItemKey>| match e {
                    ValueExpr::Var { key, .. } if !seen.contains(key) => {
                        Err(err(format!("expression uses {key} before reading it")))
                    }
                    _ => Ok(()),
                };
                match step {
                    Step::Read(k) => {
                        key_ok(k)?;
                        seen.insert(k.clone());
                    }
                    Step::PredicateRead(p) => seen.extend(pred(p)?.covered.iter().cloned()),
                    Step::Write(k, e) => {
                        key_ok(k)?;
                        check_expr(e, &seen)?;
                        seen.insert(k.clone());
                    }
                    Step::OpenCursor(p) => {
                        if cursor.is_some() {
                            return Err(err("a cursor is already open".into()));
                        }
                        cursor = Some(pred(p)?);
                    }
                    Step::Fetch => {
                        let c = cursor.ok_or_else(|| err("fetch without an open cursor".into()))?;
                        seen.extend(c.covered.iter().cloned());
                    }
                    Step::CursorWrite(k, e) => {
                        let c = cursor.ok_or_else(|| err("wc without an open cursor".into()))?;
                        if !c.covers(k) {
                            return Err(err(format!("wc on {k} outside the cursor's predicate")));
                        }
                        check_expr(e, &seen)?;
                    }
                    Step::CloseCursor => {
                        cursor
                            .take()
                            .ok_or_else(|| err("close without an open cursor".into()))?;
                    }
                    Step::Commit => {}
                }
            }
        }
        if let Some(s) = &self.reference_schedule {
            if let Some(t) = s.slots().iter().find(|t| !self.programs.contains_key(t)) {
                return Err(WorkloadError::Program {
                    txn: *t,
                    message: "reference schedule names an unknown transaction".into(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let set = |keys: &BTreeSet<ItemKey>| {
            let keys: Vec<&str> = keys.iter().map(ItemKey::as_str).collect();
            format!("{{{}}}", keys.join(","))
        };
        writeln!(f, "name {}", self.name)?;
        writeln!(f, "universe {}", set(&self.universe))?;
        if !self.init.is_empty() {
            let pairs: Vec<String> = self.init.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(f, "init {}", pairs.join(" "))?;
        }
        for p in &self.predicates {
            writeln!(f, "pred {} = {}", p.name, set(&p.covered))?;
        }
        if let Some(c) = &self.constraint {
            writeln!(f, "constraint {c}")?;
        }
        if let Some(s) = &self.reference_schedule {
            writeln!(f, "schedule {s}")?;
        }
        for (txn, steps) in &self.programs {
            let steps: Vec<String> = steps.iter().map(ToString::to_string).collect();
            writeln!(f, "txn {txn}: {}", steps.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for Workload {
    type Err = WorkloadError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        parse_workload(text)
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn ident(s: &str, line: usize) -> Result<String, WorkloadError> {
    let s = s.trim();
    if is_ident(s) {
        Ok(s.to_string())
    } else {
        Err(WorkloadError::Syntax {
            line,
            message: format!("expected identifier, got {s:?}"),
        })
    }
}

fn key_set(s: &str, line: usize) -> Result<BTreeSet<ItemKey>, WorkloadError> {
    let inner = s
        .trim()
        .strip_prefix('{')
        .and_then(|r| r.strip_suffix('}'))
        .ok_or_else(|| WorkloadError::Syntax {
            line,
            message: "expected {k1,k2,...}".into(),
        })?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .map(|k| ident(k, line).map(ItemKey::new))
        .collect()
}

fn value_expr(s: &str, line: usize) -> Result<ValueExpr, WorkloadError> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(ValueExpr::Const(v));
    }
    let split = s.find(['+', '-']);
    let (key, offset) = match split {
        Some(i) => {
            let off: i64 = s[i + 1..].trim().parse().map_err(|_| WorkloadError::Syntax {
                line,
                message: format!("bad offset in {s:?}"),
            })?;
            (&s[..i], if &s[i..i + 1] == "-" { -off } else { off })
        }
        None => (s, 0),
    };
    Ok(ValueExpr::Var {
        key: ItemKey::new(ident(key, line)?),
        offset,
    })
}

fn bracket<'a>(tok: &'a str, op: &str, line: usize) -> Result<&'a str, WorkloadError> {
    tok.strip_prefix(op)
        .and_then(|r| r.strip_prefix('['))
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| WorkloadError::Syntax {
            line,
            message: format!("malformed step {tok:?}"),
        })
}

fn step(tok: &str, line: usize) -> Result<Step, WorkloadError> {
    let assign = |inner: &str| -> Result<(ItemKey, ValueExpr), WorkloadError> {
        let (k, e) = inner.split_once('=').ok_or_else(|| WorkloadError::Syntax {
            line,
            message: format!("write needs key=value in {tok:?}"),
        })?;
        Ok((ItemKey::new(ident(k, line)?), value_expr(e, line)?))
    };
    let predicate = |inner: &str| -> Result<String, WorkloadError> {
        inner
            .trim()
            .strip_prefix("P:")
            .ok_or_else(|| WorkloadError::Syntax {
                line,
                message: format!("expected P:name in {tok:?}"),
            })
            .and_then(|p| ident(p, line))
    };
    Ok(match tok {
        "fetch" => Step::Fetch,
        "close" => Step::CloseCursor,
        "commit" => Step::Commit,
        t if t.starts_with("wc[") => {
            let (k, e) = assign(bracket(t, "wc", line)?)?;
            Step::CursorWrite(k, e)
        }
        t if t.starts_with("open[") => Step::OpenCursor(predicate(bracket(t, "open", line)?)?),
        t if t.starts_with("r[") => {
            let inner = bracket(t, "r", line)?;
            if inner.trim_start().starts_with("P:") {
                Step::PredicateRead(predicate(inner)?)
            } else {
                Step::Read(ItemKey::new(ident(inner, line)?))
            }
        }
        t if t.starts_with("w[") => {
            let (k, e) = assign(bracket(t, "w", line)?)?;
            Step::Write(k, e)
        }
        t => {
            return Err(WorkloadError::Syntax {
                line,
                message: format!("unknown step {t:?}"),
            })
        }
    })
}

fn term(s: &str, line: usize) -> Result<Term, WorkloadError> {
    if let Ok(v) = s.parse() {
        return Ok(Term::Const(v));
    }
    let pred_arg = |r: &str| -> Option<String> {
        r.strip_prefix("(P:")
            .and_then(|r| r.strip_suffix(')'))
            .filter(|p| is_ident(p))
            .map(str::to_string)
    };
    if let Some(r) = s.strip_prefix("sum") {
        if let Some(p) = pred_arg(r) {
            return Ok(Term::PredicateSum(p));
        }
        return Ok(Term::Sum(key_set(r, line)?.into_iter().collect()));
    }
    if let Some(p) = s.strip_prefix("count").and_then(pred_arg) {
        return Ok(Term::PredicateCount(p));
    }
    Ok(Term::Key(ItemKey::new(ident(s, line)?)))
}

fn constraint(s: &str, line: usize) -> Result<Constraint, WorkloadError> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    let [lhs, op, rhs] = parts[..] else {
        return Err(WorkloadError::Syntax {
            line,
            message: "constraint is `term op term`".into(),
        });
    };
    let op = Comparison::ALL
        .iter()
        .find(|(sym, _)| *sym == op)
        .map(|(_, c)| *c)
        .ok_or_else(|| WorkloadError::Syntax {
            line,
            message: format!("unknown comparison {op:?}"),
        })?;
    Ok(Constraint {
        lhs: term(lhs, line)?,
        op,
        rhs: term(rhs, line)?,
    })
}

pub fn parse_workload(text: &str) -> Result<Workload, WorkloadError> {
    let mut w = Workload {
        name: "workload".into(),
        universe: BTreeSet::new(),
        init: BTreeMap::new(),
        predicates: Vec::new(),
        programs: BTreeMap::new(),
        constraint: None,
        reference_schedule: None,
    };
    let mut declared_universe = false;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let (kw, rest) = s.split_once(char::is_whitespace).unwrap_or((s, ""));
        let rest = rest.trim();
        let syntax = |message: &str| WorkloadError::Syntax {
            line,
            message: message.to_string(),
        };
        match kw {
            "name" => w.name = rest.to_string(),
            "universe" => {
                declared_universe = true;
                w.universe.extend(key_set(rest, line)?);
            }
            "init" => {
                for pair in rest.split(|c: char| c.is_whitespace() || c == ',').filter(|p| !p.is_empty()) {
                    let (k, v) = pair.split_once('=').ok_or_else(|| syntax("init expects k=v"))?;
                    let v = v.parse().map_err(|_| syntax("init value must be an integer"))?;
                    w.init.insert(ItemKey::new(ident(k, line)?), v);
                }
            }
            "pred" => {
                let (name, set) = rest.split_once('=').ok_or_else(|| syntax("pred NAME = {...}"))?;
                w.predicates.push(PredicateDecl {
                    name: ident(name, line)?,
                    covered: key_set(set, line)?,
                });
            }
            "constraint" => w.constraint = Some(constraint(rest, line)?),
            "schedule" => {
                w.reference_schedule = Some(rest.parse().map_err(|e: ScheduleParseError| syntax(&e.to_string()))?)
            }
            "txn" => {
                let (id, body) = rest.split_once(':').ok_or_else(|| syntax("txn N: steps"))?;
                let id: u32 = id
                    .trim()
                    .parse()
                    .ok()
                    .filter(|n| *n > 0)
                    .ok_or_else(|| syntax("transaction ids are positive integers"))?;
                let steps = body
                    .split_whitespace()
                    .map(|t| step(t, line))
                    .collect::<Result<Vec<_>, _>>()?;
                if w.programs.insert(TxnId(id), steps).is_some() {
                    return Err(syntax("transaction declared twice"));
                }
            }
            _ => return Err(syntax(&format!("unknown directive {kw:?}"))),
        }
    }
    if !declared_universe {
        w.universe.extend(w.init.keys().cloned());
        for p in &w.predicates {
            w.universe.extend(p.covered.iter().cloned());
        }
        for s in w.programs.values().flatten() {
            if let Step::Read(k) | Step::Write(k, _) | Step::CursorWrite(k, _) = s {
                w.universe.insert(k.clone());
            }
        }
    }
    w.validate()?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRANSFER: &str = "name transfer\nuniverse {x,y}\ninit x=50 y=50\nconstraint sum{x,y} = 100\nschedule 1 1 2 2 2 1 1 1\ntxn 1: r[x] w[x=x-40] r[y] w[y=y+40] commit\ntxn 2: r[x] r[y] commit\n";

    #[test]
    fn parses_and_round_trips() {
        let w = parse_workload(TRANSFER).unwrap();
        assert_eq!(w.total_steps(), 8);
        assert_eq!(w.reference_schedule.as_ref().unwrap().len(), 8);
        assert_eq!(w.to_string(), TRANSFER);
        assert_eq!(parse_workload(&w.to_string()).unwrap(), w);
    }

    #[test]
    fn plain_step_list() {
        let w = parse_workload("txn 1: r[x] w[x=10] r[y] w[y=90] commit").unwrap();
        assert_eq!(w.universe, ["x".into(), "y".into()].into());
        assert_eq!(w.programs[&TxnId(1)][1], Step::Write("x".into(), ValueExpr::Const(10)));
    }

    #[test]
    fn expression_before_read_rejected() {
        let err = parse_workload("txn 1: w[x=x+1] commit").unwrap_err();
        assert!(matches!(err, WorkloadError::Program { .. }));
    }

    #[test]
    fn commit_must_be_last() {
        assert!(parse_workload("txn 1: commit r[x]").is_err());
        assert!(parse_workload("txn 1: r[x]").is_err());
    }

    #[test]
    fn constraint_evaluation() {
        let c = constraint("sum(P:tasks) <= 8", 1).unwrap();
        let preds = [PredicateDecl::new("tasks", ["a", "b", "c"])];
        let mut state: BTreeMap<ItemKey, i64> = [("a".into(), 4), ("b".into(), 3)].into();
        assert!(c.holds(&state, &preds));
        state.insert("c".into(), 2);
        assert!(!c.holds(&state, &preds));
        let count = constraint("count(P:tasks) = 3", 1).unwrap();
        assert!(count.holds(&state, &preds));
    }

    #[test]
    fn schedule_parsing() {
        let s: ScheduleSpec = "1 1 2 2 2 1 1".parse().unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!(s.to_string(), "1 1 2 2 2 1 1");
        assert_eq!("1,2".parse::<ScheduleSpec>().unwrap().compact(), "1,2");
        assert!("1 0".parse::<ScheduleSpec>().is_err());
    }

    #[test]
    fn cursor_programs() {
        let w = parse_workload("pred rows = {x}\ninit x=1\ntxn 1: open[P:rows] fetch wc[x=x+1] close commit").unwrap();
        assert!(w.uses_cursors());
        assert!(parse_workload("pred rows = {x}\ntxn 1: fetch commit").is_err());
    }
}
