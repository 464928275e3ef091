//! Histories: linear orderings of the actions of a set of transactions.
//!
//! A [`History`] is either single-version (reads and writes address the one
//! current value of an item) or multi-version (every item access names the
//! version it touched, identified by the writing transaction, `0` being the
//! initial version). The textual shorthand (`w1[x] r2[x] c1`) is handled by
//! [`parse_history`] and [`format_history`].

mod graph;
mod parse;

pub use graph::{
    action_conflicts, dependency_graph, histories_equivalent, is_serializable, DependencyGraph,
    DependencyKind, Edge, EdgeScope, GraphError, Serializability,
};
pub(crate) use graph::find_cycle;
pub use parse::{format_history, parse_history, ParseError, ParseErrorKind};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Transaction identifier. Real transactions are numbered from 1; `TxnId(0)`
/// only ever appears as a version marker naming the initial database state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId(pub u32);

impl TxnId {
    /// Writer of the initial version of every item.
    pub const INITIAL: TxnId = TxnId(0);
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Name of a data item.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemKey(String);

impl ItemKey {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        debug_assert!(!name.is_empty(), "item keys are nonempty");
        ItemKey(name)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ItemKey {
    fn from(s: &str) -> Self {
        ItemKey::new(s)
    }
}

impl fmt::Display for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A named predicate, represented by the finite set of keys it covers. The
/// set may include keys that have no row yet (phantoms).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub covered: BTreeSet<ItemKey>,
}

impl PredicateDecl {
    pub fn new<I, K>(name: impl Into<String>, keys: I) -> Self
    where
        I: IntoIterator<Item = K>,
        K: Into<ItemKey>,
    {
        PredicateDecl {
            name: name.into(),
            covered: keys.into_iter().map(Into::into).collect(),
        }
    }

    pub fn covers(&self, key: &ItemKey) -> bool {
        self.covered.contains(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionKind {
    Read,
    Write,
    PredicateRead,
    CursorRead,
    CursorWrite,
    Commit,
    Abort,
}

/// What a data action touches.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Item(ItemKey),
    Predicate(String),
    /// An item access annotated with a predicate it falls in (`w2[y in P:P]`).
    ItemInPredicate { key: ItemKey, predicate: String },
}

impl Target {
    pub fn item_key(&self) -> Option<&ItemKey> {
        match self {
            Target::Item(k) | Target::ItemInPredicate { key: k, .. } => Some(k),
            Target::Predicate(_) => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Item(k) => write!(f, "{k}"),
            Target::Predicate(p) => write!(f, "P:{p}"),
            Target::ItemInPredicate { key, predicate } => write!(f, "{key} in P:{predicate}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    pub kind: ActionKind,
    pub txn: TxnId,
    pub target: Option<Target>,
    pub value: Option<i64>,
    /// Writer of the version accessed; multi-version histories only.
    pub version: Option<TxnId>,
}

impl Action {
    fn data(kind: ActionKind, txn: TxnId, target: Target) -> Self {
        Action {
            kind,
            txn,
            target: Some(target),
            value: None,
            version: None,
        }
    }

    pub fn read(txn: TxnId, key: impl Into<ItemKey>) -> Self {
        Self::data(ActionKind::Read, txn, Target::Item(key.into()))
    }

    pub fn write(txn: TxnId, key: impl Into<ItemKey>) -> Self {
        Self::data(ActionKind::Write, txn, Target::Item(key.into()))
    }

    pub fn predicate_read(txn: TxnId, predicate: impl Into<String>) -> Self {
        Self::data(
            ActionKind::PredicateRead,
            txn,
            Target::Predicate(predicate.into()),
        )
    }

    pub fn cursor_read(txn: TxnId, key: impl Into<ItemKey>) -> Self {
        Self::data(ActionKind::CursorRead, txn, Target::Item(key.into()))
    }

    pub fn cursor_write(txn: TxnId, key: impl Into<ItemKey>) -> Self {
        Self::data(ActionKind::CursorWrite, txn, Target::Item(key.into()))
    }

    pub fn commit(txn: TxnId) -> Self {
        Action {
            kind: ActionKind::Commit,
            txn,
            target: None,
            value: None,
            version: None,
        }
    }

    pub fn abort(txn: TxnId) -> Self {
        Action {
            kind: ActionKind::Abort,
            txn,
            ..Action::commit(txn)
        }
    }

    pub fn with_value(mut self, value: i64) -> Self {
        self.value = Some(value);
        self
    }

    pub fn with_version(mut self, writer: TxnId) -> Self {
        self.version = Some(writer);
        self
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.kind, ActionKind::Commit | ActionKind::Abort)
    }

    pub fn is_write(&self) -> bool {
        matches!(self.kind, ActionKind::Write | ActionKind::CursorWrite)
    }

    /// Item reads, cursor reads and predicate reads.
    pub fn is_read(&self) -> bool {
        matches!(
            self.kind,
            ActionKind::Read | ActionKind::CursorRead | ActionKind::PredicateRead
        )
    }

    /// Reads of a single item (plain or through a cursor).
    pub fn is_item_read(&self) -> bool {
        matches!(self.kind, ActionKind::Read | ActionKind::CursorRead)
    }

    pub fn item_key(&self) -> Option<&ItemKey> {
        match self.kind {
            ActionKind::PredicateRead => None,
            _ => self.target.as_ref().and_then(Target::item_key),
        }
    }

    pub fn predicate(&self) -> Option<&str> {
        match (&self.kind, &self.target) {
            (ActionKind::PredicateRead, Some(Target::Predicate(p))) => Some(p),
            _ => None,
        }
    }

    fn op(&self) -> &'static str {
        match self.kind {
            ActionKind::Read | ActionKind::PredicateRead => "r",
            ActionKind::Write => "w",
            ActionKind::CursorRead => "rc",
            ActionKind::CursorWrite => "wc",
            ActionKind::Commit => "c",
            ActionKind::Abort => "a",
        }
    }

    /// The action without value or version, e.g. `r1[x]`. Used in reports.
    pub fn token(&self) -> String {
        match &self.target {
            None => format!("{}{}", self.op(), self.txn),
            Some(t) => format!("{}{}[{}]", self.op(), self.txn, t),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(target) = &self.target else {
            return write!(f, "{}{}", self.op(), self.txn);
        };
        write!(f, "{}{}[", self.op(), self.txn)?;
        match target {
            Target::Predicate(p) => write!(f, "P:{p}")?,
            Target::Item(key) | Target::ItemInPredicate { key, .. } => {
                write!(f, "{key}")?;
                if let Some(v) = self.version {
                    write!(f, "@{v}")?;
                }
                if let Target::ItemInPredicate { predicate, .. } = target {
                    write!(f, " in P:{predicate}")?;
                }
                if let Some(v) = self.value {
                    write!(f, "={v}")?;
                }
            }
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flavor {
    SingleVersion,
    MultiVersion,
}

/// Declarations preceding the actions of a history.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HistoryHeader {
    pub universe: Option<BTreeSet<ItemKey>>,
    pub init: BTreeMap<ItemKey, i64>,
    pub predicates: Vec<PredicateDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("transaction id 0 is reserved for the initial version (action {index})")]
    ReservedTxn { index: usize },
    #[error("action {index} of T{txn} follows its commit or abort")]
    ActionAfterTerminal { txn: TxnId, index: usize },
    #[error("T{txn} has a second terminal action at {index}")]
    DuplicateTerminal { txn: TxnId, index: usize },
    #[error("undeclared predicate {name}")]
    UndeclaredPredicate { name: String, index: Option<usize> },
    #[error("duplicate declaration of predicate {name}")]
    DuplicatePredicate { name: String },
    #[error("key {key} is outside the declared universe")]
    UnknownKey { key: ItemKey, index: Option<usize> },
    #[error("key {key} is not covered by predicate {predicate} (action {index})")]
    NotCovered {
        key: ItemKey,
        predicate: String,
        index: usize,
    },
    #[error("action {index} mixes versioned and unversioned item accesses")]
    MixedFlavor { index: usize },
    #[error("action {index} has an ill-formed target for its kind")]
    BadTarget { index: usize },
}

impl HistoryError {
    /// Index of the offending action, when the error is tied to one.
    pub fn index(&self) -> Option<usize> {
        match self {
            HistoryError::ReservedTxn { index }
            | HistoryError::ActionAfterTerminal { index, .. }
            | HistoryError::DuplicateTerminal { index, .. }
            | HistoryError::NotCovered { index, .. }
            | HistoryError::MixedFlavor { index }
            | HistoryError::BadTarget { index } => Some(*index),
            HistoryError::UndeclaredPredicate { index, .. }
            | HistoryError::UnknownKey { index, .. } => *index,
            HistoryError::DuplicatePredicate { .. } => None,
        }
    }
}

/// A validated history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct History {
    header: HistoryHeader,
    actions: Vec<Action>,
    flavor: Flavor,
}

impl History {
    pub fn empty() -> Self {
        History {
            header: HistoryHeader::default(),
            actions: Vec::new(),
            flavor: Flavor::SingleVersion,
        }
    }

    /// History with predicate declarations only.
    pub fn new(predicates: Vec<PredicateDecl>, actions: Vec<Action>) -> Result<Self, HistoryError> {
        Self::with_header(
            HistoryHeader {
                predicates,
                ..HistoryHeader::default()
            },
            actions,
        )
    }

    pub fn with_header(header: HistoryHeader, actions: Vec<Action>) -> Result<Self, HistoryError> {
        let flavor = validate(&header, &actions)?;
        Ok(History {
            header,
            actions,
            flavor,
        })
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn header(&self) -> &HistoryHeader {
        &self.header
    }

    pub fn predicates(&self) -> &[PredicateDecl] {
        &self.header.predicates
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.header.predicates.iter().find(|p| p.name == name)
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn txns(&self) -> BTreeSet<TxnId> {
        self.actions.iter().map(|a| a.txn).collect()
    }

    pub fn committed(&self) -> BTreeSet<TxnId> {
        self.terminals_of(ActionKind::Commit)
    }

    pub fn aborted(&self) -> BTreeSet<TxnId> {
        self.terminals_of(ActionKind::Abort)
    }

    fn terminals_of(&self, kind: ActionKind) -> BTreeSet<TxnId> {
        self.actions
            .iter()
            .filter(|a| a.kind == kind)
            .map(|a| a.txn)
            .collect()
    }

    /// Position and kind of the transaction's commit or abort.
    pub fn terminal(&self, txn: TxnId) -> Option<(usize, ActionKind)> {
        self.actions
            .iter()
            .position(|a| a.txn == txn && a.is_terminal())
            .map(|i| (i, self.actions[i].kind))
    }

    /// True when the actions of every transaction are contiguous.
    pub fn is_serial(&self) -> bool {
        let mut finished = BTreeSet::new();
        let mut current = None;
        for a in &self.actions {
            if current != Some(a.txn) {
                if finished.contains(&a.txn) {
                    return false;
                }
                if let Some(prev) = current {
                    finished.insert(prev);
                }
                current = Some(a.txn);
            }
        }
        true
    }

    /// Drops version markers, yielding the single-version reading of the
    /// same action sequence.
    pub fn without_versions(&self) -> History {
        History {
            header: self.header.clone(),
            actions: self
                .actions
                .iter()
                .cloned()
                .map(|mut a| {
                    a.version = None;
                    a
                })
                .collect(),
            flavor: Flavor::SingleVersion,
        }
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_history(self))
    }
}

fn validate(header: &HistoryHeader, actions: &[Action]) -> Result<Flavor, HistoryError> {
    let mut seen = BTreeSet::new();
    for p in &header.predicates {
        if !seen.insert(p.name.as_str()) {
            return Err(HistoryError::DuplicatePredicate {
                name: p.name.clone(),
            });
        }
        if let Some(universe) = &header.universe {
            if let Some(k) = p.covered.iter().find(|k| !universe.contains(*k)) {
                return Err(HistoryError::UnknownKey {
                    key: k.clone(),
                    index: None,
                });
            }
        }
    }
    if let Some(universe) = &header.universe {
        if let Some(k) = header.init.keys().find(|k| !universe.contains(*k)) {
            return Err(HistoryError::UnknownKey {
                key: k.clone(),
                index: None,
            });
        }
    }

    let lookup = |name: &str, index: usize| {
        header
            .predicates
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| HistoryError::UndeclaredPredicate {
                name: name.to_string(),
                index: Some(index),
            })
    };

    let mut terminated = BTreeSet::new();
    let mut versioned: Option<bool> = None;
    for (index, a) in actions.iter().enumerate() {
        if a.txn == TxnId::INITIAL {
            return Err(HistoryError::ReservedTxn { index });
        }
        if terminated.contains(&a.txn) {
            return Err(if a.is_terminal() {
                HistoryError::DuplicateTerminal { txn: a.txn, index }
            } else {
                HistoryError::ActionAfterTerminal { txn: a.txn, index }
            });
        }
        match (a.kind, &a.target) {
            (ActionKind::Commit | ActionKind::Abort, None) => {
                if a.value.is_some() || a.version.is_some() {
                    return Err(HistoryError::BadTarget { index });
                }
                terminated.insert(a.txn);
            }
            (ActionKind::PredicateRead, Some(Target::Predicate(name))) => {
                lookup(name, index)?;
                if a.value.is_some() || a.version.is_some() {
                    return Err(HistoryError::BadTarget { index });
                }
            }
            (
                ActionKind::Read | ActionKind::Write | ActionKind::CursorRead | ActionKind::CursorWrite,
                Some(t @ (Target::Item(_) | Target::ItemInPredicate { .. })),
            ) => {
                let key = t.item_key().expect("item target");
                if let Target::ItemInPredicate { predicate, .. } = t {
                    if !lookup(predicate, index)?.covers(key) {
                        return Err(HistoryError::NotCovered {
                            key: key.clone(),
                            predicate: predicate.clone(),
                            index,
                        });
                    }
                }
                if let Some(universe) = &header.universe {
                    if !universe.contains(key) {
                        return Err(HistoryError::UnknownKey {
                            key: key.clone(),
                            index: Some(index),
                        });
                    }
                }
                let has = a.version.is_some();
                match versioned {
                    None => versioned = Some(has),
                    Some(v) if v != has => return Err(HistoryError::MixedFlavor { index }),
                    _ => {}
                }
            }
            _ => return Err(HistoryError::BadTarget { index }),
        }
    }
    Ok(if versioned == Some(true) {
        Flavor::MultiVersion
    } else {
        Flavor::SingleVersion
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(n: u32) -> TxnId {
        TxnId(n)
    }

    #[test]
    fn rejects_action_after_commit() {
        let err = History::new(
            vec![],
            vec![Action::read(t(1), "x"), Action::commit(t(1)), Action::write(t(1), "y")],
        )
        .unwrap_err();
        assert_eq!(err, HistoryError::ActionAfterTerminal { txn: t(1), index: 2 });
    }

    #[test]
    fn rejects_second_terminal() {
        let err = History::new(vec![], vec![Action::commit(t(1)), Action::abort(t(1))]).unwrap_err();
        assert_eq!(err, HistoryError::DuplicateTerminal { txn: t(1), index: 1 });
    }

    #[test]
    fn rejects_mixed_versions() {
        let err = History::new(
            vec![],
            vec![
                Action::read(t(1), "x").with_version(TxnId::INITIAL),
                Action::write(t(1), "x"),
            ],
        )
        .unwrap_err();
        assert_eq!(err, HistoryError::MixedFlavor { index: 1 });
    }

    #[test]
    fn serial_detection() {
        let h = History::new(
            vec![],
            vec![Action::read(t(1), "x"), Action::commit(t(1)), Action::read(t(2), "x")],
        )
        .unwrap();
        assert!(h.is_serial());
        let h = History::new(
            vec![],
            vec![Action::read(t(1), "x"), Action::read(t(2), "x"), Action::commit(t(1))],
        )
        .unwrap();
        assert!(!h.is_serial());
    }

    #[test]
    fn token_strips_value_and_version() {
        let a = Action::write(t(2), "x").with_value(10).with_version(t(2));
        assert_eq!(a.to_string(), "w2[x@2=10]");
        assert_eq!(a.token(), "w2[x]");
    }
}
