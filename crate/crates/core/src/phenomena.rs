//! Subsequence detectors for isolation phenomena and anomalies, and level
//! admission by the phenomena each level prohibits.
//!
//! Every detector matches a template such as `r1[x]...w2[x]...(c1 or a1)`
//! against the action sequence of a single-version history. Each distinct
//! instantiation of the template (choice of the two transactions and of the
//! items involved) is reported once, at its leftmost match.
//!
//! | id   | template                                              |
//! |------|-------------------------------------------------------|
//! | P0   | `w1[x] .. w2[x] .. (c1 or a1)`                        |
//! | P1   | `w1[x] .. r2[x] .. (c1 or a1)` (r2 may also be a predicate read covering x) |
//! | P2   | `r1[x] .. w2[x] .. (c1 or a1)`                        |
//! | P3   | `r1[P] .. w2[y in P] .. (c1 or a1)`                   |
//! | A1   | `w1[x] .. r2[x] .. (a1 and c2 in any order)`          |
//! | A2   | `r1[x] .. w2[x] .. c2 .. r1[x] .. c1`                 |
//! | A3   | `r1[P] .. w2[y in P] .. c2 .. r1[P] .. c1`            |
//! | P4   | `r1[x] .. w2[x] .. w1[x] .. c1`                       |
//! | P4C  | `rc1[x] .. w2[x] .. w1[x] .. c1`                      |
//! | A5A  | `r1[x] .. w2[x] .. w2[y] .. c2 .. r1[y] .. (c1 or a1)`|
//! | A5B  | `r1[x] .. r2[y] .. w1[y] .. w2[x]`, c1 and c2 occur   |
//!
//! Reads of a single item match both plain and cursor reads; writes match both
//! plain and cursor writes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::history::{Action, ActionKind, History, ItemKey, Target, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PhenomenonId {
    P0,
    P1,
    P2,
    P3,
    A1,
    A2,
    A3,
    P4,
    P4C,
    A5A,
    A5B,
}

impl PhenomenonId {
    pub const ALL: [PhenomenonId; 11] = [
        PhenomenonId::P0,
        PhenomenonId::P1,
        PhenomenonId::P2,
        PhenomenonId::P3,
        PhenomenonId::A1,
        PhenomenonId::A2,
        PhenomenonId::A3,
        PhenomenonId::P4,
        PhenomenonId::P4C,
        PhenomenonId::A5A,
        PhenomenonId::A5B,
    ];

    /// The eight columns of the isolation-type matrix, in column order.
    pub const MATRIX: [PhenomenonId; 8] = [
        PhenomenonId::P0,
        PhenomenonId::P1,
        PhenomenonId::P4C,
        PhenomenonId::P4,
        PhenomenonId::P2,
        PhenomenonId::P3,
        PhenomenonId::A5A,
        PhenomenonId::A5B,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhenomenonId::P0 => "P0",
            PhenomenonId::P1 => "P1",
            PhenomenonId::P2 => "P2",
            PhenomenonId::P3 => "P3",
            PhenomenonId::A1 => "A1",
            PhenomenonId::A2 => "A2",
            PhenomenonId::A3 => "A3",
            PhenomenonId::P4 => "P4",
            PhenomenonId::P4C => "P4C",
            PhenomenonId::A5A => "A5A",
            PhenomenonId::A5B => "A5B",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            PhenomenonId::P0 => "Dirty Write",
            PhenomenonId::P1 | PhenomenonId::A1 => "Dirty Read",
            PhenomenonId::P2 | PhenomenonId::A2 => "Fuzzy Read",
            PhenomenonId::P3 | PhenomenonId::A3 => "Phantom",
            PhenomenonId::P4 => "Lost Update",
            PhenomenonId::P4C => "Cursor Lost Update",
            PhenomenonId::A5A => "Read Skew",
            PhenomenonId::A5B => "Write Skew",
        }
    }
}

impl fmt::Display for PhenomenonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown phenomenon {0:?}")]
pub struct UnknownPhenomenon(pub String);

impl FromStr for PhenomenonId {
    type Err = UnknownPhenomenon;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PhenomenonId::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownPhenomenon(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LevelId {
    Degree0,
    ReadUncommitted,
    ReadCommitted,
    CursorStability,
    RepeatableRead,
    Snapshot,
    /// Per-statement snapshot reads with first-writer-wins write locks. Not a
    /// row of the matrix; prohibits P0, P1 and P4C.
    ReadConsistency,
    Serializable,
}

impl LevelId {
    pub const ALL: [LevelId; 8] = [
        LevelId::Degree0,
        LevelId::ReadUncommitted,
        LevelId::ReadCommitted,
        LevelId::CursorStability,
        LevelId::RepeatableRead,
        LevelId::Snapshot,
        LevelId::ReadConsistency,
        LevelId::Serializable,
    ];

    /// Rows of the isolation-type matrix, in row order.
    pub const MATRIX: [LevelId; 6] = [
        LevelId::ReadUncommitted,
        LevelId::ReadCommitted,
        LevelId::CursorStability,
        LevelId::RepeatableRead,
        LevelId::Snapshot,
        LevelId::Serializable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LevelId::Degree0 => "degree0",
            LevelId::ReadUncommitted => "read-uncommitted",
            LevelId::ReadCommitted => "read-committed",
            LevelId::CursorStability => "cursor-stability",
            LevelId::RepeatableRead => "repeatable-read",
            LevelId::Snapshot => "snapshot",
            LevelId::ReadConsistency => "read-consistency",
            LevelId::Serializable => "serializable",
        }
    }

    /// Levels executed by the single-version lock scheduler.
    pub fn is_locking(self) -> bool {
        !matches!(self, LevelId::Snapshot | LevelId::ReadConsistency)
    }
}

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown level {0:?}")]
pub struct UnknownLevel(pub String);

impl FromStr for LevelId {
    type Err = UnknownLevel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LevelId::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| UnknownLevel(s.to_string()))
    }
}

/// A cell of the isolation-type matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Possibility {
    Possible,
    SometimesPossible,
    NotPossible,
}

impl Possibility {
    /// "Sometimes Possible" counts as possible.
    pub fn allows(self) -> bool {
        !matches!(self, Possibility::NotPossible)
    }
}

impl fmt::Display for Possibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Possibility::Possible => "Possible",
            Possibility::SometimesPossible => "Sometimes Possible",
            Possibility::NotPossible => "Not Possible",
        })
    }
}

/// The isolation-type matrix, row by row in [`PhenomenonId::MATRIX`] column
/// order. `None` for levels outside the matrix or phenomena outside its
/// columns.
pub fn table4(level: LevelId, p: PhenomenonId) -> Option<Possibility> {
    use Possibility::{NotPossible as N, Possible as Y, SometimesPossible as S};
    let row: [Possibility; 8] = match level {
        LevelId::ReadUncommitted => [N, Y, Y, Y, Y, Y, Y, Y],
        LevelId::ReadCommitted => [N, N, Y, Y, Y, Y, Y, Y],
        LevelId::CursorStability => [N, N, N, S, S, Y, Y, S],
        LevelId::RepeatableRead => [N, N, N, N, N, Y, N, N],
        LevelId::Snapshot => [N, N, N, N, N, S, N, Y],
        LevelId::Serializable => [N, N, N, N, N, N, N, N],
        LevelId::Degree0 | LevelId::ReadConsistency => return None,
    };
    let col = PhenomenonId::MATRIX.iter().position(|c| *c == p)?;
    Some(row[col])
}

/// Phenomena a level rules out.
pub fn prohibited(level: LevelId) -> Vec<PhenomenonId> {
    match level {
        LevelId::Degree0 => Vec::new(),
        LevelId::ReadConsistency => vec![PhenomenonId::P0, PhenomenonId::P1, PhenomenonId::P4C],
        _ => PhenomenonId::MATRIX
            .into_iter()
            .filter(|p| table4(level, *p) == Some(Possibility::NotPossible))
            .collect(),
    }
}

/// One match of a phenomenon template.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Witness {
    pub phenomenon: PhenomenonId,
    /// Positions of the matched actions, strictly increasing.
    pub action_indices: Vec<usize>,
    /// The template's T1 and T2.
    pub txns: (TxnId, TxnId),
    pub items: Vec<Target>,
}

impl Witness {
    /// `P2: r1[x]@0 w2[x]@2 c1@5`
    pub fn render(&self, h: &History) -> String {
        let tokens: Vec<String> = self
            .action_indices
            .iter()
            .map(|i| format!("{}@{}", h.actions()[*i].token(), i))
            .collect();
        format!("{}: {}", self.phenomenon, tokens.join(" "))
    }

    /// Line-oriented `key=value` record.
    pub fn record(&self) -> String {
        let items: Vec<String> = self.items.iter().map(ToString::to_string).collect();
        let idx: Vec<String> = self.action_indices.iter().map(ToString::to_string).collect();
        format!(
            "phenomenon={} t1={} t2={} items={} indices={}",
            self.phenomenon,
            self.txns.0,
            self.txns.1,
            items.join(","),
            idx.join(",")
        )
    }
}

type Matcher<'a> = Box<dyn Fn(&Action) -> bool + 'a>;

/// Leftmost greedy subsequence match starting at `from`.
fn leftmost(actions: &[Action], from: usize, pattern: &[Matcher<'_>]) -> Option<Vec<usize>> {
    let mut at = from;
    let mut out = Vec::with_capacity(pattern.len());
    for m in pattern {
        let i = at + actions[at..].iter().position(m)?;
        out.push(i);
        at = i + 1;
    }
    Some(out)
}

fn item_read<'a>(t: TxnId, x: &'a ItemKey) -> Matcher<'a> {
    Box::new(move |a| a.txn == t && a.is_item_read() && a.item_key() == Some(x))
}

fn cursor_read<'a>(t: TxnId, x: &'a ItemKey) -> Matcher<'a> {
    Box::new(move |a| a.txn == t && a.kind == ActionKind::CursorRead && a.item_key() == Some(x))
}

fn write<'a>(t: TxnId, x: &'a ItemKey) -> Matcher<'a> {
    Box::new(move |a| a.txn == t && a.is_write() && a.item_key() == Some(x))
}

fn pred_read<'a>(t: TxnId, p: &'a str) -> Matcher<'a> {
    Box::new(move |a| a.txn == t && a.predicate() == Some(p))
}

fn commit<'a>(t: TxnId) -> Matcher<'a> {
    Box::new(move |a| a.txn == t && a.kind == ActionKind::Commit)
}

fn terminal<'a>(t: TxnId) -> Matcher<'a> {
    Box::new(move |a| a.txn == t && a.is_terminal())
}

struct Universe<'h> {
    h: &'h History,
    txns: Vec<TxnId>,
    keys: Vec<ItemKey>,
    /// Predicates read somewhere in the history, with their covered keys.
    preds: Vec<(&'h str, Vec<ItemKey>)>,
}

impl<'h> Universe<'h> {
    fn of(h: &'h History) -> Self {
        let txns: Vec<TxnId> = h.txns().into_iter().collect();
        let keys: BTreeSet<ItemKey> = h.actions().iter().filter_map(|a| a.item_key().cloned()).collect();
        let read_preds: BTreeSet<&str> = h.actions().iter().filter_map(Action::predicate).collect();
        let preds = read_preds
            .into_iter()
            .map(|name| {
                let covered = h
                    .predicate(name)
                    .map(|p| p.covered.iter().cloned().collect())
                    .unwrap_or_default();
                (name, covered)
            })
            .collect();
        Universe {
            h,
            txns,
            keys: keys.into_iter().collect(),
            preds,
        }
    }

    fn pairs(&self) -> impl Iterator<Item = (TxnId, TxnId)> + '_ {
        self.txns
            .iter()
            .flat_map(move |a| self.txns.iter().filter(move |b| *b != a).map(move |b| (*a, *b)))
    }

    fn actions(&self) -> &'h [Action] {
        self.h.actions()
    }
}

fn item(k: &ItemKey) -> Target {
    Target::Item(k.clone())
}

fn pred(p: &str) -> Target {
    Target::Predicate(p.to_string())
}

/// All witnesses of `p` in a single-version history.
pub fn detect(h: &History, p: PhenomenonId) -> Vec<Witness> {
    let u = Universe::of(h);
    let acts = u.actions();
    let mut found: Vec<Witness> = Vec::new();
    let mut push = |txns: (TxnId, TxnId), mut idx: Vec<usize>, items: Vec<Target>| {
        idx.sort_unstable();
        idx.dedup();
        found.push(Witness {
            phenomenon: p,
            action_indices: idx,
            txns,
            items,
        });
    };

    for (t1, t2) in u.pairs() {
        match p {
            PhenomenonId::P0 | PhenomenonId::P1 | PhenomenonId::P2 => {
                for x in &u.keys {
                    let pattern = match p {
                        PhenomenonId::P0 => [write(t1, x), write(t2, x), terminal(t1)],
                        PhenomenonId::P1 => [write(t1, x), item_read(t2, x), terminal(t1)],
                        _ => [item_read(t1, x), write(t2, x), terminal(t1)],
                    };
                    if let Some(idx) = leftmost(acts, 0, &pattern) {
                        push((t1, t2), idx, vec![item(x)]);
                    }
                }
                if p == PhenomenonId::P1 {
                    // Dirty read through a predicate covering the written item.
                    for (name, covered) in &u.preds {
                        for x in covered {
                            let pattern = [write(t1, x), pred_read(t2, name), terminal(t1)];
                            if let Some(idx) = leftmost(acts, 0, &pattern) {
                                push((t1, t2), idx, vec![item(x), pred(name)]);
                            }
                        }
                    }
                }
            }
            PhenomenonId::P3 | PhenomenonId::A3 => {
                for (name, covered) in &u.preds {
                    for y in covered {
                        let found_idx = if p == PhenomenonId::P3 {
                            leftmost(acts, 0, &[pred_read(t1, name), write(t2, y), terminal(t1)])
                        } else {
                            leftmost(
                                acts,
                                0,
                                &[
                                    pred_read(t1, name),
                                    write(t2, y),
                                    commit(t2),
                                    pred_read(t1, name),
                                    commit(t1),
                                ],
                            )
                        };
                        if let Some(idx) = found_idx {
                            push((t1, t2), idx, vec![pred(name), item(y)]);
                        }
                    }
                }
            }
            PhenomenonId::A1 => {
                let (Some((a1, ActionKind::Abort)), Some((c2, ActionKind::Commit))) =
                    (h.terminal(t1), h.terminal(t2))
                else {
                    continue;
                };
                for x in &u.keys {
                    if let Some(mut idx) = leftmost(acts, 0, &[write(t1, x), item_read(t2, x)]) {
                        if a1 > idx[1] && c2 > idx[1] {
                            idx.extend([a1, c2]);
                            push((t1, t2), idx, vec![item(x)]);
                        }
                    }
                }
            }
            PhenomenonId::A2 | PhenomenonId::P4 | PhenomenonId::P4C => {
                for x in &u.keys {
                    let pattern: Vec<Matcher<'_>> = match p {
                        PhenomenonId::A2 => vec![
                            item_read(t1, x),
                            write(t2, x),
                            commit(t2),
                            item_read(t1, x),
                            commit(t1),
                        ],
                        PhenomenonId::P4 => vec![item_read(t1, x), write(t2, x), write(t1, x), commit(t1)],
                        _ => vec![cursor_read(t1, x), write(t2, x), write(t1, x), commit(t1)],
                    };
                    if let Some(idx) = leftmost(acts, 0, &pattern) {
                        push((t1, t2), idx, vec![item(x)]);
                    }
                }
            }
            PhenomenonId::A5A | PhenomenonId::A5B => {
                for x in &u.keys {
                    for y in u.keys.iter().filter(|y| *y != x) {
                        if p == PhenomenonId::A5A {
                            let pattern = [
                                item_read(t1, x),
                                write(t2, x),
                                write(t2, y),
                                commit(t2),
                                item_read(t1, y),
                                terminal(t1),
                            ];
                            if let Some(idx) = leftmost(acts, 0, &pattern) {
                                push((t1, t2), idx, vec![item(x), item(y)]);
                            }
                        } else {
                            let (Some((c1, ActionKind::Commit)), Some((c2, ActionKind::Commit))) =
                                (h.terminal(t1), h.terminal(t2))
                            else {
                                continue;
                            };
                            let pattern = [item_read(t1, x), item_read(t2, y), write(t1, y), write(t2, x)];
                            if let Some(mut idx) = leftmost(acts, 0, &pattern) {
                                idx.extend([c1, c2]);
                                push((t1, t2), idx, vec![item(x), item(y)]);
                            }
                        }
                    }
                }
            }
        }
    }
    found.sort();
    found.dedup();
    found
}

/// Every detector's witnesses, keyed by phenomenon.
pub fn classify(h: &History) -> BTreeMap<PhenomenonId, Vec<Witness>> {
    PhenomenonId::ALL.into_iter().map(|p| (p, detect(h, p))).collect()
}

/// True iff `h` exhibits none of the phenomena the level prohibits.
pub fn admits(level: LevelId, h: &History) -> bool {
    prohibited(level).into_iter().all(|p| detect(h, p).is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::parse_history;

    const H1: &str = "r1[x=50] w1[x=10] r2[x=10] r2[y=50] c2 r1[y=50] w1[y=90] c1";
    const H2: &str = "r1[x=50] r2[x=50] w2[x=10] r2[y=50] w2[y=90] c2 r1[y=90] c1";
    const H3: &str = "pred P = {y}\nr1[P:P] w2[y in P:P] r2[z] w2[z] c2 r1[z] c1";
    const H4: &str = "r1[x=100] r2[x=100] w2[x=120] c2 w1[x=130] c1";
    const H5: &str = "r1[x=50] r1[y=50] r2[x=50] r2[y=50] w1[y=-40] w2[x=-40] c1 c2";

    fn h(text: &str) -> History {
        parse_history(text).unwrap()
    }

    fn found(text: &str, p: PhenomenonId) -> bool {
        !detect(&h(text), p).is_empty()
    }

    #[test]
    fn h1_dirty_read_only() {
        let w = detect(&h(H1), PhenomenonId::P1);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].action_indices, vec![1, 2, 7]);
        assert_eq!(w[0].render(&h(H1)), "P1: w1[x]@1 r2[x]@2 c1@7");
        for p in [PhenomenonId::A1, PhenomenonId::A2, PhenomenonId::A3, PhenomenonId::P2] {
            assert!(!found(H1, p), "{p}");
        }
    }

    #[test]
    fn h2_fuzzy_not_strict() {
        assert!(found(H2, PhenomenonId::P2));
        assert!(!found(H2, PhenomenonId::A2));
        assert!(found(H2, PhenomenonId::A5A));
    }

    #[test]
    fn h3_phantom_not_strict() {
        assert!(found(H3, PhenomenonId::P3));
        assert!(!found(H3, PhenomenonId::A3));
    }

    #[test]
    fn h4_lost_update() {
        let c = classify(&h(H4));
        assert!(!c[&PhenomenonId::P4].is_empty());
        assert!(!c[&PhenomenonId::P2].is_empty());
        assert!(c[&PhenomenonId::P0].is_empty());
        assert!(c[&PhenomenonId::P1].is_empty());
        assert!(c[&PhenomenonId::P4C].is_empty());
    }

    #[test]
    fn h5_write_skew() {
        let w = detect(&h(H5), PhenomenonId::A5B);
        assert!(!w.is_empty());
        assert_eq!(w[0].action_indices, vec![0, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn write_skew_with_commit_between_writes() {
        assert!(found(
            "r1[x=50] r1[y=50] r2[x=50] r2[y=50] w1[y=-40] c1 w2[x=-40] c2",
            PhenomenonId::A5B
        ));
    }

    #[test]
    fn empty_history_has_nothing() {
        let e = History::empty();
        for p in PhenomenonId::ALL {
            assert!(detect(&e, p).is_empty());
        }
    }

    #[test]
    fn dirty_write() {
        assert!(found("w1[x] w2[x] w2[y] c2 w1[y] c1", PhenomenonId::P0));
        assert!(!found("w1[x] c1 w2[x] c2", PhenomenonId::P0));
    }

    #[test]
    fn strict_dirty_read_needs_abort_and_commit() {
        assert!(found("w1[x] r2[x] a1 c2", PhenomenonId::A1));
        assert!(found("w1[x] r2[x] c2 a1", PhenomenonId::A1));
        assert!(!found("w1[x] r2[x] c1 c2", PhenomenonId::A1));
    }

    #[test]
    fn strict_phantom() {
        assert!(found(
            "pred P = {y}\nr1[P:P] w2[y] c2 r1[P:P] c1",
            PhenomenonId::A3
        ));
    }

    #[test]
    fn dirty_predicate_read() {
        assert!(found("pred P = {y}\nw1[y=1] r2[P:P] c2 c1", PhenomenonId::P1));
    }

    #[test]
    fn cursor_lost_update() {
        let text = "rc1[x=100] r2[x=100] w2[x=120] c2 wc1[x=130] c1";
        assert!(found(text, PhenomenonId::P4C));
        assert!(found(text, PhenomenonId::P4));
        assert!(!found(H4, PhenomenonId::P4C));
    }

    #[test]
    fn serial_histories_are_clean() {
        let c = classify(&h("r1[x] w1[x] c1 r2[y] w2[y] c2"));
        assert!(c.values().all(Vec::is_empty));
    }

    #[test]
    fn admission_examples() {
        assert!(admits(LevelId::ReadCommitted, &h(H4)));
        assert!(!admits(LevelId::RepeatableRead, &h(H4)));
        assert!(!admits(LevelId::Serializable, &h(H4)));
        assert!(!admits(LevelId::ReadUncommitted, &h("w1[x] w2[x] c1 c2")));
        assert!(admits(LevelId::Degree0, &h("w1[x] w2[x] c1 c2")));
    }

    #[test]
    fn table_rows() {
        assert_eq!(
            prohibited(LevelId::Snapshot),
            vec![
                PhenomenonId::P0,
                PhenomenonId::P1,
                PhenomenonId::P4C,
                PhenomenonId::P4,
                PhenomenonId::P2,
                PhenomenonId::A5A
            ]
        );
        assert_eq!(prohibited(LevelId::ReadUncommitted), vec![PhenomenonId::P0]);
        assert_eq!(prohibited(LevelId::Serializable).len(), 8);
        assert_eq!(table4(LevelId::CursorStability, PhenomenonId::P4), Some(Possibility::SometimesPossible));
        assert_eq!(table4(LevelId::Snapshot, PhenomenonId::A1), None);
    }

    #[test]
    fn names_round_trip() {
        for p in PhenomenonId::ALL {
            assert_eq!(p.name().parse::<PhenomenonId>().unwrap(), p);
        }
        for l in LevelId::ALL {
            assert_eq!(l.name().parse::<LevelId>().unwrap(), l);
        }
    }
}
