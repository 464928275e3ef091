//! Read Consistency: every statement reads the latest committed data as of
//! its own start, while writes take long write locks and the first writer
//! wins.

use std::collections::{BTreeMap, BTreeSet};

use super::{Timestamp, VersionStore};
use crate::history::{Action, History, ItemKey, TxnId};
use crate::locking::{Grant, Lock, LockDuration, LockMode, LockScope, LockTable, ReleaseEvent};
use crate::run::{check_schedule, header_for, AbortCause, EngineError, RunReport, TxnOutcome};
use crate::workload::{ScheduleSpec, Step, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Active,
    Blocked,
    Committed,
    Aborted,
}

struct Cursor {
    ts: Timestamp,
    rows: Vec<(ItemKey, i64)>,
    next: usize,
}

struct Txn {
    pc: usize,
    status: Status,
    started: u64,
    locals: BTreeMap<ItemKey, i64>,
    writes: BTreeMap<ItemKey, i64>,
    cursor: Option<Cursor>,
    /// Writes and own-version reads, placed at commit.
    deferred: Vec<(u8, usize, Action)>,
}

type Placed = ((Timestamp, u8, usize), Action);

struct Engine<'w> {
    workload: &'w Workload,
    clock: u64,
    seq: usize,
    store: VersionStore,
    locks: LockTable,
    txns: BTreeMap<TxnId, Txn>,
    placed: Vec<Placed>,
    causes: BTreeMap<TxnId, AbortCause>,
}

impl<'w> Engine<'w> {
    fn tick(&mut self) -> Timestamp {
        self.clock += 1;
        Timestamp(self.clock)
    }

    fn next_seq(&mut self) -> usize {
        self.seq += 1;
        self.seq
    }

    fn value_at(&self, txn: TxnId, key: &ItemKey, ts: Timestamp) -> (Option<i64>, bool) {
        match self.txns[&txn].writes.get(key) {
            Some(v) => (Some(*v), true),
            None => (self.store.read_at(key, ts).and_then(|v| v.value), false),
        }
    }

    fn place(&mut self, ts: Timestamp, action: Action) {
        let seq = self.next_seq();
        self.placed.push(((ts, 0, seq), action));
    }

    fn defer(&mut self, txn: TxnId, phase: u8, action: Action) {
        let seq = self.next_seq();
        self.txns.get_mut(&txn).expect("known txn").deferred.push((phase, seq, action));
    }

    fn write_lock(txn: TxnId, key: &ItemKey) -> Lock {
        Lock::new(txn, LockScope::Item(key.clone()), LockMode::Write, LockDuration::Long)
    }

    /// Locks the step needs; an open cursor locks every row it selects.
    fn required(&self, txn: TxnId, step: &Step) -> Vec<Lock> {
        match step {
            Step::Write(k, _) | Step::CursorWrite(k, _) => vec![Self::write_lock(txn, k)],
            Step::OpenCursor(p) => {
                let ts = Timestamp(self.clock);
                let pred = self.workload.predicate(p).expect("validated predicate");
                pred.covered
                    .iter()
                    .filter(|k| self.value_at(txn, k, ts).0.is_some())
                    .map(|k| Self::write_lock(txn, k))
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    fn try_locks(&mut self, txn: TxnId, step: &Step) -> Grant {
        for lock in self.required(txn, step) {
            if self.locks.acquire(lock) == Grant::Blocked {
                return Grant::Blocked;
            }
        }
        Grant::Granted
    }

    fn step(&mut self, txn: TxnId) {
        let t = &self.txns[&txn];
        if matches!(t.status, Status::Committed | Status::Aborted) {
            return;
        }
        let step = self.workload.programs[&txn][t.pc].clone();
        if self.try_locks(txn, &step) == Grant::Granted {
            self.execute(txn, &step);
            return;
        }
        self.txns.get_mut(&txn).expect("known txn").status = Status::Blocked;
        if let Some(cycle) = self.locks.find_deadlock() {
            let victim = *cycle.iter().max_by_key(|t| self.txns[t].started).expect("nonempty cycle");
            self.abort(victim);
            if victim != txn && self.try_locks(txn, &step) == Grant::Granted {
                self.execute(txn, &step);
            }
        }
    }

    fn read_into_locals(&mut self, txn: TxnId, key: &ItemKey, v: Option<i64>) {
        let locals = &mut self.txns.get_mut(&txn).expect("known txn").locals;
        match v {
            Some(v) => locals.insert(key.clone(), v),
            None => locals.remove(key),
        };
    }

    fn execute(&mut self, txn: TxnId, step: &Step) {
        match step {
            Step::Read(k) => {
                let ts = self.tick();
                let (v, own) = self.value_at(txn, k, ts);
                self.read_into_locals(txn, k, v);
                let mut a = Action::read(txn, k.clone());
                if let Some(v) = v {
                    a = a.with_value(v);
                }
                if own {
                    self.defer(txn, 1, a);
                } else {
                    self.place(ts, a);
                }
            }
            Step::PredicateRead(p) => {
                let ts = self.tick();
                let pred = self.workload.predicate(p).expect("validated predicate");
                for k in &pred.covered {
                    let v = self.value_at(txn, k, ts).0;
                    self.read_into_locals(txn, k, v);
                }
                self.place(ts, Action::predicate_read(txn, p.clone()));
            }
            Step::Write(k, e) | Step::CursorWrite(k, e) => {
                let t = self.txns.get_mut(&txn).expect("known txn");
                let v = e.eval(&t.locals);
                t.locals.insert(k.clone(), v);
                t.writes.insert(k.clone(), v);
                let a = match step {
                    Step::Write(..) => Action::write(txn, k.clone()),
                    _ => Action::cursor_write(txn, k.clone()),
                };
                self.defer(txn, 0, a.with_value(v));
            }
            Step::OpenCursor(p) => {
                let ts = self.tick();
                let pred = self.workload.predicate(p).expect("validated predicate");
                let rows = pred
                    .covered
                    .iter()
                    .filter_map(|k| self.value_at(txn, k, ts).0.map(|v| (k.clone(), v)))
                    .collect();
                self.txns.get_mut(&txn).expect("known txn").cursor = Some(Cursor { ts, rows, next: 0 });
            }
            Step::Fetch => {
                let t = self.txns.get_mut(&txn).expect("known txn");
                let c = t.cursor.as_mut().expect("validated cursor");
                if let Some((k, v)) = c.rows.get(c.next).cloned() {
                    c.next += 1;
                    let ts = c.ts;
                    let own = t.writes.contains_key(&k);
                    let v = t.writes.get(&k).copied().unwrap_or(v);
                    t.locals.insert(k.clone(), v);
                    let a = Action::cursor_read(txn, k).with_value(v);
                    if own {
                        self.defer(txn, 1, a);
                    } else {
                        // A fetch reads as of the cursor's open.
                        self.place(ts, a);
                    }
                }
            }
            Step::CloseCursor => self.txns.get_mut(&txn).expect("known txn").cursor = None,
            Step::Commit => {
                let ts = self.tick();
                let t = self.txns.get_mut(&txn).expect("known txn");
                t.status = Status::Committed;
                let writes = std::mem::take(&mut t.writes);
                let deferred = std::mem::take(&mut t.deferred);
                for (k, v) in writes {
                    self.store.install(k, v, txn, ts);
                }
                for (phase, seq, a) in deferred {
                    self.placed.push(((ts, phase, seq), a));
                }
                let seq = self.next_seq();
                self.placed.push(((ts, 2, seq), Action::commit(txn)));
                self.locks.release(txn, &ReleaseEvent::Terminal);
            }
        }
        let t = self.txns.get_mut(&txn).expect("known txn");
        t.pc += 1;
        if t.status == Status::Blocked {
            t.status = Status::Active;
        }
    }

    fn abort(&mut self, txn: TxnId) {
        let ts = self.tick();
        let t = self.txns.get_mut(&txn).expect("known txn");
        t.status = Status::Aborted;
        t.writes.clear();
        t.deferred.clear();
        t.cursor = None;
        self.causes.insert(txn, AbortCause::Deadlock);
        let seq = self.next_seq();
        self.placed.push(((ts, 2, seq), Action::abort(txn)));
        self.locks.release(txn, &ReleaseEvent::Terminal);
    }
}

/// Replays `schedule` under Read Consistency. The history orders each read
/// at its statement's timestamp and each committed transaction's writes at
/// its commit.
pub fn run_read_consistency(workload: &Workload, schedule: &ScheduleSpec) -> Result<RunReport, EngineError> {
    check_schedule(workload, schedule.slots())?;
    let mut e = Engine {
        workload,
        clock: 0,
        seq: 0,
        store: VersionStore::new(&workload.universe, &workload.init),
        locks: LockTable::new(workload.predicates.clone()),
        txns: BTreeMap::new(),
        placed: Vec::new(),
        causes: BTreeMap::new(),
    };
    let mut started: BTreeSet<TxnId> = BTreeSet::new();
    for &txn in schedule.slots() {
        if started.insert(txn) {
            let started = started.len() as u64;
            e.txns.insert(
                txn,
                Txn {
                    pc: 0,
                    status: Status::Active,
                    started,
                    locals: BTreeMap::new(),
                    writes: BTreeMap::new(),
                    cursor: None,
                    deferred: Vec::new(),
                },
            );
        }
        e.step(txn);
    }
    let outcomes = workload
        .txns()
        .map(|t| {
            let o = match e.txns.get(&t).map(|x| x.status) {
                Some(Status::Committed) => TxnOutcome::Committed,
                Some(Status::Aborted) => TxnOutcome::Aborted(e.causes[&t].clone()),
                Some(Status::Blocked) => TxnOutcome::Blocked,
                Some(Status::Active) | None => TxnOutcome::Active,
            };
            (t, o)
        })
        .collect();
    let mut placed = std::mem::take(&mut e.placed);
    placed.sort_by_key(|(k, _)| *k);
    let history = History::with_header(header_for(workload), placed.into_iter().map(|(_, a)| a).collect())?;
    Ok(RunReport {
        history,
        versioned: None,
        outcomes,
        final_state: e.store.current_state(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phenomena::{detect, PhenomenonId};
    use crate::run::body;
    use crate::workload::parse_workload;

    fn run(w: &str, s: &str) -> RunReport {
        run_read_consistency(&parse_workload(w).unwrap(), &s.parse().unwrap()).unwrap()
    }

    const LOST_UPDATE: &str = "init x=100\ntxn 1: r[x] w[x=x+30] commit\ntxn 2: r[x] w[x=x+20] commit";

    #[test]
    fn plain_lost_update_is_possible() {
        let r = run(LOST_UPDATE, "1 2 2 2 1 1");
        assert_eq!(body(&r.history), "r1[x=100] r2[x=100] w2[x=120] c2 w1[x=130] c1");
        assert!(!detect(&r.history, PhenomenonId::P4).is_empty());
    }

    #[test]
    fn first_writer_wins_blocks_second_writer() {
        let r = run(LOST_UPDATE, "1 2 1 2 2 1");
        assert_eq!(r.outcomes[&TxnId(2)], TxnOutcome::Blocked);
        assert_eq!(body(&r.history), "r1[x=100] r2[x=100] w1[x=130] c1");
    }

    #[test]
    fn each_statement_sees_latest_commit() {
        let r = run(
            "init x=50 y=50\ntxn 1: r[x] r[y] commit\ntxn 2: w[x=10] w[y=90] commit",
            "1 2 2 2 1 1",
        );
        assert_eq!(body(&r.history), "r1[x=50] w2[x=10] w2[y=90] c2 r1[y=90] c1");
        assert!(!detect(&r.history, PhenomenonId::A5A).is_empty());
    }

    #[test]
    fn cursor_open_locks_selected_rows() {
        let w = "pred rows = {x}\ninit x=100\ntxn 1: open[P:rows] fetch wc[x=x+30] close commit\ntxn 2: r[x] w[x=x+20] commit";
        let r = run(w, "1 2 2 2 1 1 1 1");
        assert_eq!(r.outcomes[&TxnId(2)], TxnOutcome::Blocked);
        assert!(detect(&r.history, PhenomenonId::P4C).is_empty());
        let r = run(w, "1 1 1 1 1 2 2 2");
        assert_eq!(body(&r.history), "rc1[x=100] wc1[x=130] c1 r2[x=130] w2[x=150] c2");
    }

    #[test]
    fn own_reads_follow_own_writes() {
        let r = run("init x=1\ntxn 1: w[x=5] r[x] commit", "1 1 1");
        assert_eq!(body(&r.history), "w1[x=5] r1[x=5] c1");
    }
}
