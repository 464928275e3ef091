//! Multiversion engines: Snapshot Isolation and Read Consistency.

mod consistency;
mod mapping;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use consistency::run_read_consistency;
pub use mapping::{mv_to_sv, MappingError};

use crate::history::{Action, History, ItemKey, PredicateDecl, TxnId};
use crate::run::{check_schedule, header_for, AbortCause, EngineError, RunReport, TxnOutcome};
use crate::workload::{ScheduleSpec, Step, Workload};

/// Value of the engine clock; 0 stamps the initial versions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Version {
    pub key: ItemKey,
    /// `None` marks a key absent from the database at this version.
    pub value: Option<i64>,
    pub writer: TxnId,
    pub commit_ts: Timestamp,
}

/// Committed versions per key, in commit order.
#[derive(Debug, Clone, Default)]
pub struct VersionStore {
    versions: BTreeMap<ItemKey, Vec<Version>>,
}

impl VersionStore {
    /// One initial version per key of the universe.
    pub fn new(universe: &BTreeSet<ItemKey>, init: &BTreeMap<ItemKey, i64>) -> Self {
        let versions = universe
            .iter()
            .map(|k| {
                let v = Version {
                    key: k.clone(),
                    value: init.get(k).copied(),
                    writer: TxnId::INITIAL,
                    commit_ts: Timestamp(0),
                };
                (k.clone(), vec![v])
            })
            .collect();
        VersionStore { versions }
    }

    /// Latest version committed at or before `ts`.
    pub fn read_at(&self, key: &ItemKey, ts: Timestamp) -> Option<&Version> {
        self.versions.get(key)?.iter().rev().find(|v| v.commit_ts <= ts)
    }

    pub fn latest(&self, key: &ItemKey) -> Option<&Version> {
        self.versions.get(key)?.last()
    }

    pub fn install(&mut self, key: ItemKey, value: i64, writer: TxnId, commit_ts: Timestamp) {
        let chain = self.versions.entry(key.clone()).or_default();
        debug_assert!(chain.last().is_none_or(|v| v.commit_ts < commit_ts));
        chain.push(Version {
            key,
            value: Some(value),
            writer,
            commit_ts,
        });
    }

    pub fn versions(&self, key: &ItemKey) -> &[Version] {
        self.versions.get(key).map(Vec::as_slice).unwrap_or_default()
    }

    /// Present keys with their latest committed values.
    pub fn current_state(&self) -> BTreeMap<ItemKey, i64> {
        self.versions
            .iter()
            .filter_map(|(k, chain)| chain.last()?.value.map(|v| (k.clone(), v)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SnapshotStatus {
    Active,
    Committed(Timestamp),
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotTxn {
    pub txn: TxnId,
    pub start_ts: Timestamp,
    pub write_set: BTreeMap<ItemKey, i64>,
    pub status: SnapshotStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitResult {
    Committed(Timestamp),
    Aborted { conflicts: BTreeSet<ItemKey> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("T{0} has not begun")]
    NotBegun(TxnId),
    #[error("T{0} already began")]
    AlreadyBegun(TxnId),
    #[error("T{0} is no longer active")]
    NotActive(TxnId),
    #[error("unknown key {0}")]
    UnknownKey(ItemKey),
}

/// Snapshot Isolation: reads from the snapshot at the start timestamp,
/// buffered writes, and first-committer-wins validation at commit.
#[derive(Debug, Clone)]
pub struct SnapshotEngine {
    clock: u64,
    store: VersionStore,
    txns: BTreeMap<TxnId, SnapshotTxn>,
    issued: Vec<Timestamp>,
}

impl SnapshotEngine {
    pub fn new(universe: &BTreeSet<ItemKey>, init: &BTreeMap<ItemKey, i64>) -> Self {
        SnapshotEngine {
            clock: 0,
            store: VersionStore::new(universe, init),
            txns: BTreeMap::new(),
            issued: Vec::new(),
        }
    }

    fn tick(&mut self) -> Timestamp {
        self.clock += 1;
        let ts = Timestamp(self.clock);
        self.issued.push(ts);
        ts
    }

    /// Every start and commit timestamp handed out, in order.
    pub fn issued(&self) -> &[Timestamp] {
        &self.issued
    }

    pub fn store(&self) -> &VersionStore {
        &self.store
    }

    pub fn txn(&self, txn: TxnId) -> Option<&SnapshotTxn> {
        self.txns.get(&txn)
    }

    pub fn begin(&mut self, txn: TxnId) -> Result<Timestamp, SnapshotError> {
        if self.txns.contains_key(&txn) {
            return Err(SnapshotError::AlreadyBegun(txn));
        }
        let start_ts = self.tick();
        self.txns.insert(
            txn,
            SnapshotTxn {
                txn,
                start_ts,
                write_set: BTreeMap::new(),
                status: SnapshotStatus::Active,
            },
        );
        Ok(start_ts)
    }

    /// Drops a transaction that has begun but neither read nor written, so
    /// that it begins afresh later.
    pub(crate) fn forget(&mut self, txn: TxnId) {
        if self.txns.get(&txn).is_some_and(|t| t.status == SnapshotStatus::Active && t.write_set.is_empty()) {
            self.txns.remove(&txn);
        }
    }

    fn active(&self, txn: TxnId) -> Result<&SnapshotTxn, SnapshotError> {
        let t = self.txns.get(&txn).ok_or(SnapshotError::NotBegun(txn))?;
        match t.status {
            SnapshotStatus::Active => Ok(t),
            _ => Err(SnapshotError::NotActive(txn)),
        }
    }

    /// The transaction's own buffered write if any, else the snapshot value.
    /// Returns the value (absent keys give `None`) and the version's writer.
    pub fn read(&self, txn: TxnId, key: &ItemKey) -> Result<(Option<i64>, TxnId), SnapshotError> {
        let t = self.active(txn)?;
        if let Some(v) = t.write_set.get(key) {
            return Ok((Some(*v), txn));
        }
        let v = self
            .store
            .read_at(key, t.start_ts)
            .ok_or_else(|| SnapshotError::UnknownKey(key.clone()))?;
        Ok((v.value, v.writer))
    }

    /// Present covered rows as the transaction sees them.
    pub fn predicate_read(&self, txn: TxnId, pred: &PredicateDecl) -> Result<BTreeMap<ItemKey, i64>, SnapshotError> {
        let mut rows = BTreeMap::new();
        for k in &pred.covered {
            if let (Some(v), _) = self.read(txn, k)? {
                rows.insert(k.clone(), v);
            }
        }
        Ok(rows)
    }

    pub fn write(&mut self, txn: TxnId, key: ItemKey, value: i64) -> Result<(), SnapshotError> {
        self.active(txn)?;
        if self.store.versions(&key).is_empty() {
            return Err(SnapshotError::UnknownKey(key));
        }
        self.txns.get_mut(&txn).expect("active").write_set.insert(key, value);
        Ok(())
    }

    /// Aborts when a transaction that committed inside this one's execution
    /// interval wrote a key this one also wrote.
    pub fn commit(&mut self, txn: TxnId) -> Result<CommitResult, SnapshotError> {
        let start = self.active(txn)?.start_ts;
        let commit_ts = self.tick();
        let t = &self.txns[&txn];
        let conflicts: BTreeSet<ItemKey> = t
            .write_set
            .keys()
            .filter(|k| {
                self.store
                    .versions(k)
                    .iter()
                    .any(|v| v.writer != txn && v.commit_ts > start && v.commit_ts < commit_ts)
            })
            .cloned()
            .collect();
        let t = self.txns.get_mut(&txn).expect("active");
        if !conflicts.is_empty() {
            t.status = SnapshotStatus::Aborted;
            return Ok(CommitResult::Aborted { conflicts });
        }
        t.status = SnapshotStatus::Committed(commit_ts);
        for (k, v) in std::mem::take(&mut t.write_set) {
            self.store.install(k, v, txn, commit_ts);
        }
        Ok(CommitResult::Committed(commit_ts))
    }

    /// Intervals, write sets and outcomes of the transactions that finished.
    pub fn committed(&self) -> impl Iterator<Item = (&SnapshotTxn, Timestamp)> {
        self.txns.values().filter_map(|t| match t.status {
            SnapshotStatus::Committed(c) => Some((t, c)),
            _ => None,
        })
    }
}

struct Program {
    pc: usize,
    locals: BTreeMap<ItemKey, i64>,
    cursor: Option<(String, Option<ItemKey>, bool)>,
    written: BTreeSet<ItemKey>,
    done: Option<TxnOutcome>,
}

fn next_row<'a>(pred: &'a PredicateDecl, after: Option<&ItemKey>, present: impl Fn(&ItemKey) -> bool) -> Option<&'a ItemKey> {
    pred.covered
        .iter()
        .filter(|k| after.is_none_or(|a| *k > a))
        .find(|k| present(k))
}

/// Replays `schedule` under Snapshot Isolation. Reads never block; the
/// report carries the multiversion history and its single-version mapping.
pub fn run_si(workload: &Workload, schedule: &ScheduleSpec) -> Result<RunReport, EngineError> {
    check_schedule(workload, schedule.slots())?;
    let mut engine = SnapshotEngine::new(&workload.universe, &workload.init);
    let mut progs: BTreeMap<TxnId, Program> = workload
        .txns()
        .map(|t| {
            let p = Program {
                pc: 0,
                locals: BTreeMap::new(),
                cursor: None,
                written: BTreeSet::new(),
                done: None,
            };
            (t, p)
        })
        .collect();
    let mut actions: Vec<Action> = Vec::new();
    for &txn in schedule.slots() {
        let prog = progs.get_mut(&txn).expect("checked schedule");
        if prog.done.is_some() {
            continue;
        }
        let step = &workload.programs[&txn][prog.pc];
        prog.pc += 1;
        // The snapshot is taken at the first step that touches data, so it
        // coincides with the transaction's first action.
        let opens = matches!(step, Step::OpenCursor(_) | Step::CloseCursor);
        let began_here = !opens && engine.txn(txn).is_none();
        if began_here {
            engine.begin(txn)?;
        }
        let emitted = actions.len();
        match step {
            Step::Read(k) => {
                let (v, ver) = engine.read(txn, k)?;
                let mut a = Action::read(txn, k.clone()).with_version(ver);
                match v {
                    Some(v) => {
                        prog.locals.insert(k.clone(), v);
                        a = a.with_value(v);
                    }
                    None => {
                        prog.locals.remove(k);
                    }
                }
                actions.push(a);
            }
            Step::PredicateRead(p) => {
                let pred = workload.predicate(p).expect("validated predicate");
                let rows = engine.predicate_read(txn, pred)?;
                for k in &pred.covered {
                    match rows.get(k) {
                        Some(v) => prog.locals.insert(k.clone(), *v),
                        None => prog.locals.remove(k),
                    };
                }
                actions.push(Action::predicate_read(txn, p.clone()));
            }
            Step::Write(k, e) | Step::CursorWrite(k, e) => {
                let v = e.eval(&prog.locals);
                engine.write(txn, k.clone(), v)?;
                prog.locals.insert(k.clone(), v);
                prog.written.insert(k.clone());
                let a = match step {
                    Step::Write(..) => Action::write(txn, k.clone()),
                    _ => Action::cursor_write(txn, k.clone()),
                };
                actions.push(a.with_version(txn).with_value(v));
            }
            Step::OpenCursor(p) => prog.cursor = Some((p.clone(), None, false)),
            Step::Fetch => {
                let (p, row, exhausted) = prog.cursor.as_mut().expect("validated cursor");
                if *exhausted {
                    if began_here {
                        engine.forget(txn);
                    }
                    continue;
                }
                let pred = workload.predicate(p).expect("validated predicate");
                let present = |k: &ItemKey| matches!(engine.read(txn, k), Ok((Some(_), _)));
                match next_row(pred, row.as_ref(), present).cloned() {
                    Some(k) => {
                        let (v, ver) = engine.read(txn, &k)?;
                        let v = v.expect("present row");
                        *row = Some(k.clone());
                        prog.locals.insert(k.clone(), v);
                        actions.push(Action::cursor_read(txn, k).with_version(ver).with_value(v));
                    }
                    None => {
                        *row = None;
                        *exhausted = true;
                    }
                }
                if began_here && actions.len() == emitted {
                    engine.forget(txn);
                }
            }
            Step::CloseCursor => prog.cursor = None,
            Step::Commit => match engine.commit(txn)? {
                CommitResult::Committed(_) => {
                    prog.done = Some(TxnOutcome::Committed);
                    actions.push(Action::commit(txn));
                }
                CommitResult::Aborted { conflicts } => {
                    prog.done = Some(TxnOutcome::Aborted(AbortCause::FirstCommitterWins { keys: conflicts }));
                    actions.push(Action::abort(txn));
                }
            },
        }
    }
    let outcomes = progs
        .into_iter()
        .map(|(t, p)| (t, p.done.unwrap_or(TxnOutcome::Active)))
        .collect();
    let versioned = History::with_header(header_for(workload), actions)?;
    let history = mv_to_sv(&versioned)?;
    Ok(RunReport {
        history,
        versioned: Some(versioned),
        outcomes,
        final_state: engine.store().current_state(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::is_serializable;
    use crate::phenomena::{detect, PhenomenonId};
    use crate::run::body;
    use crate::workload::parse_workload;

    fn keys(ks: &[&str]) -> BTreeSet<ItemKey> {
        ks.iter().map(|k| ItemKey::new(*k)).collect()
    }

    fn engine() -> SnapshotEngine {
        let init = [("x".into(), 50), ("y".into(), 50)].into();
        SnapshotEngine::new(&keys(&["x", "y"]), &init)
    }

    #[test]
    fn begin_assigns_increasing_timestamps() {
        let mut e = engine();
        assert_eq!(e.begin(TxnId(1)).unwrap(), Timestamp(1));
        assert_eq!(e.begin(TxnId(2)).unwrap(), Timestamp(2));
        let mut e = engine();
        e.begin(TxnId(1)).unwrap();
        e.write(TxnId(1), "x".into(), 1).unwrap();
        e.begin(TxnId(2)).unwrap();
        e.begin(TxnId(3)).unwrap();
        e.begin(TxnId(4)).unwrap();
        assert_eq!(e.commit(TxnId(1)).unwrap(), CommitResult::Committed(Timestamp(5)));
        assert_eq!(e.begin(TxnId(5)).unwrap(), Timestamp(6));
    }

    #[test]
    fn snapshot_hides_uncommitted_and_shows_own_writes() {
        let mut e = engine();
        e.begin(TxnId(1)).unwrap();
        e.begin(TxnId(2)).unwrap();
        e.write(TxnId(1), "x".into(), 10).unwrap();
        assert_eq!(e.read(TxnId(2), &"x".into()).unwrap(), (Some(50), TxnId(0)));
        assert_eq!(e.read(TxnId(1), &"x".into()).unwrap(), (Some(10), TxnId(1)));
        e.write(TxnId(1), "x".into(), 11).unwrap();
        assert_eq!(e.read(TxnId(1), &"x".into()).unwrap().0, Some(11));
    }

    #[test]
    fn first_committer_wins() {
        let mut e = engine();
        e.begin(TxnId(1)).unwrap();
        e.begin(TxnId(2)).unwrap();
        e.write(TxnId(1), "x".into(), 130).unwrap();
        e.write(TxnId(2), "x".into(), 120).unwrap();
        assert!(matches!(e.commit(TxnId(2)).unwrap(), CommitResult::Committed(_)));
        assert_eq!(
            e.commit(TxnId(1)).unwrap(),
            CommitResult::Aborted {
                conflicts: keys(&["x"])
            }
        );
        e.begin(TxnId(3)).unwrap();
        assert!(matches!(e.commit(TxnId(3)).unwrap(), CommitResult::Committed(_)));
    }

    #[test]
    fn predicate_reread_sees_same_rows() {
        let mut e = SnapshotEngine::new(&keys(&["a", "b"]), &[("a".into(), 1)].into());
        let p = PredicateDecl::new("P", ["a", "b"]);
        e.begin(TxnId(1)).unwrap();
        let first = e.predicate_read(TxnId(1), &p).unwrap();
        e.begin(TxnId(2)).unwrap();
        e.write(TxnId(2), "b".into(), 5).unwrap();
        e.commit(TxnId(2)).unwrap();
        assert_eq!(e.predicate_read(TxnId(1), &p).unwrap(), first);
        let empty = PredicateDecl::new("E", Vec::<&str>::new());
        assert!(e.predicate_read(TxnId(1), &empty).unwrap().is_empty());
        e.write(TxnId(1), "b".into(), 7).unwrap();
        assert_eq!(e.predicate_read(TxnId(1), &p).unwrap().len(), 2);
    }

    const TRANSFER: &str = "init x=50 y=50\ntxn 1: r[x] w[x=x-40] r[y] w[y=y+40] commit\ntxn 2: r[x] r[y] commit\n";

    #[test]
    fn transfer_replays_h1_si() {
        let w = parse_workload(TRANSFER).unwrap();
        let r = run_si(&w, &"1 1 2 2 2 1 1 1".parse().unwrap()).unwrap();
        assert_eq!(
            body(r.versioned.as_ref().unwrap()),
            "r1[x@0=50] w1[x@1=10] r2[x@0=50] r2[y@0=50] c2 r1[y@0=50] w1[y@1=90] c1"
        );
        assert_eq!(body(&r.history), "r1[x=50] r1[y=50] r2[x=50] r2[y=50] c2 w1[x=10] w1[y=90] c1");
        assert!(is_serializable(&r.history).unwrap().is_serializable());
    }

    #[test]
    fn lost_update_aborts_later_committer() {
        let w = parse_workload("init x=100\ntxn 1: r[x] w[x=x+30] commit\ntxn 2: r[x] w[x=x+20] commit").unwrap();
        let r = run_si(&w, &"1 2 2 2 1 1".parse().unwrap()).unwrap();
        assert!(matches!(r.outcomes[&TxnId(1)], TxnOutcome::Aborted(AbortCause::FirstCommitterWins { .. })));
        assert_eq!(r.final_state[&ItemKey::new("x")], 120);
        assert!(detect(&r.history, PhenomenonId::P4).is_empty());
    }

    #[test]
    fn write_skew_commits_both() {
        let w = parse_workload(
            "init x=50 y=50\nconstraint sum{x,y} > 0\ntxn 1: r[x] r[y] w[y=y-90] commit\ntxn 2: r[x] r[y] w[x=x-90] commit",
        )
        .unwrap();
        let r = run_si(&w, &"1 1 2 2 1 2 1 2".parse().unwrap()).unwrap();
        assert!(r.all_committed());
        assert_eq!(r.constraint_holds(&w), Some(false));
        assert!(!detect(&r.history, PhenomenonId::A5B).is_empty());
        assert!(!is_serializable(&r.history).unwrap().is_serializable());
    }

    #[test]
    fn serial_schedule_reads_latest() {
        let w = parse_workload("init x=1\ntxn 1: w[x=2] commit\ntxn 2: r[x] commit").unwrap();
        let r = run_si(&w, &"1 1 2 2".parse().unwrap()).unwrap();
        assert_eq!(body(r.versioned.as_ref().unwrap()), "w1[x@1=2] c1 r2[x@1=2] c2");
    }
}
