//! Single-version lock scheduler for the lock-defined isolation levels.

mod table;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use table::{Grant, Lock, LockDuration, LockMode, LockScope, LockTable, ReleaseEvent, TraceEvent};

use crate::history::{Action, History, ItemKey, TxnId};
use crate::phenomena::LevelId;
use crate::run::{check_schedule, header_for, AbortCause, EngineError, RunReport, TxnOutcome};
use crate::workload::{ScheduleSpec, Step, Workload};

/// How reads of one kind are locked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadLocks {
    None,
    Short,
    /// Held on the row under a cursor until the cursor moves; plain reads
    /// take short locks.
    Cursor,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockPolicy {
    pub item_read: ReadLocks,
    pub pred_read: ReadLocks,
    /// Duration of write locks on items.
    pub write: LockDuration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0} is not defined by a locking policy")]
pub struct PolicyError(pub LevelId);

pub fn policy_for_level(level: LevelId) -> Result<LockPolicy, PolicyError> {
    use LockDuration::{Long, Short};
    let p = |item_read, pred_read, write| {
        Ok(LockPolicy {
            item_read,
            pred_read,
            write,
        })
    };
    match level {
        LevelId::Degree0 => p(ReadLocks::None, ReadLocks::None, Short),
        LevelId::ReadUncommitted => p(ReadLocks::None, ReadLocks::None, Long),
        LevelId::ReadCommitted => p(ReadLocks::Short, ReadLocks::Short, Long),
        LevelId::CursorStability => p(ReadLocks::Cursor, ReadLocks::Short, Long),
        LevelId::RepeatableRead => p(ReadLocks::Long, ReadLocks::Short, Long),
        LevelId::Serializable => p(ReadLocks::Long, ReadLocks::Long, Long),
        LevelId::Snapshot | LevelId::ReadConsistency => Err(PolicyError(level)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    /// The step ran; `action` is what it appended to the history, if anything.
    Executed { action: Option<Action> },
    /// The step waits on a lock and will be retried at the next slot.
    Blocked,
    /// The request closed a waits-for cycle and `victim` was aborted.
    /// `resumed` tells whether the requester's step then ran.
    DeadlockAborted { victim: TxnId, resumed: bool },
    /// The transaction has no step left to run.
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Active,
    Blocked,
    Committed,
    Aborted,
}

#[derive(Debug, Clone)]
struct Cursor {
    predicate: String,
    row: Option<ItemKey>,
    exhausted: bool,
}

#[derive(Debug, Clone)]
struct TxnState {
    pc: usize,
    status: Status,
    started: Option<u64>,
    locals: BTreeMap<ItemKey, i64>,
    cursor: Option<Cursor>,
    undo: Vec<(ItemKey, Option<i64>)>,
}

/// Replays programs one step at a time under a lock policy.
#[derive(Debug, Clone)]
pub struct LockingEngine<'w> {
    workload: &'w Workload,
    policy: LockPolicy,
    table: LockTable,
    db: BTreeMap<ItemKey, i64>,
    txns: BTreeMap<TxnId, TxnState>,
    actions: Vec<Action>,
    causes: BTreeMap<TxnId, AbortCause>,
    clock: u64,
}

impl<'w> LockingEngine<'w> {
    pub fn new(workload: &'w Workload, policy: LockPolicy) -> Self {
        let txns = workload
            .txns()
            .map(|t| {
                let st = TxnState {
                    pc: 0,
                    status: Status::Active,
                    started: None,
                    locals: BTreeMap::new(),
                    cursor: None,
                    undo: Vec::new(),
                };
                (t, st)
            })
            .collect();
        LockingEngine {
            workload,
            policy,
            table: LockTable::new(workload.predicates.clone()),
            db: workload.init.clone(),
            txns,
            actions: Vec::new(),
            causes: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn lock_table(&self) -> &LockTable {
        &self.table
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn database(&self) -> &BTreeMap<ItemKey, i64> {
        &self.db
    }

    fn next_row(&self, txn: TxnId) -> Option<ItemKey> {
        let cursor = self.txns[&txn].cursor.as_ref().filter(|c| !c.exhausted)?;
        let pred = self.workload.predicate(&cursor.predicate)?;
        pred.covered
            .iter()
            .filter(|k| cursor.row.as_ref().is_none_or(|r| *k > r))
            .find(|k| self.db.contains_key(*k))
            .cloned()
    }

    fn read_lock(&self, txn: TxnId, scope: LockScope, policy: ReadLocks, cursor: bool) -> Option<Lock> {
        let duration = match policy {
            ReadLocks::None => return None,
            ReadLocks::Short => LockDuration::Short,
            ReadLocks::Cursor if cursor => LockDuration::Cursor,
            ReadLocks::Cursor => LockDuration::Short,
            ReadLocks::Long => LockDuration::Long,
        };
        Some(Lock::new(txn, scope, LockMode::Read, duration))
    }

    /// Locks a well-formed execution of `step` needs before it runs.
    fn required_locks(&self, txn: TxnId, step: &Step) -> Vec<Lock> {
        let write = |k: &ItemKey| Lock::new(txn, LockScope::Item(k.clone()), LockMode::Write, self.policy.write);
        match step {
            Step::Read(k) => self
                .read_lock(txn, LockScope::Item(k.clone()), self.policy.item_read, false)
                .into_iter()
                .collect(),
            Step::PredicateRead(p) => self
                .read_lock(txn, LockScope::Predicate(p.clone()), self.policy.pred_read, false)
                .into_iter()
                .collect(),
            Step::Fetch => self
                .next_row(txn)
                .and_then(|k| self.read_lock(txn, LockScope::Item(k), self.policy.item_read, true))
                .into_iter()
                .collect(),
            Step::Write(k, _) | Step::CursorWrite(k, _) => vec![write(k)],
            Step::OpenCursor(_) | Step::CloseCursor | Step::Commit => Vec::new(),
        }
    }

    fn try_locks(&mut self, txn: TxnId, step: &Step) -> Grant {
        for lock in self.required_locks(txn, step) {
            if self.table.acquire(lock) == Grant::Blocked {
                return Grant::Blocked;
            }
        }
        Grant::Granted
    }

    /// Attempts the next program step of `txn`.
    pub fn step(&mut self, txn: TxnId) -> Result<StepOutcome, EngineError> {
        let st = self.txns.get_mut(&txn).ok_or(EngineError::UnknownTxn(txn))?;
        if matches!(st.status, Status::Committed | Status::Aborted) {
            return Ok(StepOutcome::Idle);
        }
        if st.started.is_none() {
            self.clock += 1;
            st.started = Some(self.clock);
        }
        let step = self.workload.programs[&txn][st.pc].clone();
        if self.try_locks(txn, &step) == Grant::Granted {
            return self.execute(txn, &step).map(|action| StepOutcome::Executed { action });
        }
        self.txns.get_mut(&txn).expect("known txn").status = Status::Blocked;
        let Some(cycle) = self.table.find_deadlock() else {
            return Ok(StepOutcome::Blocked);
        };
        let victim = *cycle
            .iter()
            .max_by_key(|t| self.txns[t].started)
            .expect("cycle is nonempty");
        self.abort(victim, AbortCause::Deadlock);
        let resumed = victim != txn && self.try_locks(txn, &step) == Grant::Granted;
        if resumed {
            self.execute(txn, &step)?;
        }
        Ok(StepOutcome::DeadlockAborted { victim, resumed })
    }

    fn emit(&mut self, action: Action) -> Action {
        self.table.note_executed(self.actions.len());
        self.actions.push(action.clone());
        action
    }

    fn write_value(&mut self, txn: TxnId, key: &ItemKey, value: i64) {
        let before = self.db.insert(key.clone(), value);
        let st = self.txns.get_mut(&txn).expect("known txn");
        st.undo.push((key.clone(), before));
        st.locals.insert(key.clone(), value);
    }

    fn execute(&mut self, txn: TxnId, step: &Step) -> Result<Option<Action>, EngineError> {
        let mut release = ReleaseEvent::ActionComplete;
        let action = match step {
            Step::Read(k) => {
                let v = self.db.get(k).copied();
                let st = self.txns.get_mut(&txn).expect("known txn");
                let mut a = Action::read(txn, k.clone());
                if let Some(v) = v {
                    st.locals.insert(k.clone(), v);
                    a = a.with_value(v);
                } else {
                    st.locals.remove(k);
                }
                Some(a)
            }
            Step::PredicateRead(p) => {
                let pred = self.workload.predicate(p).expect("validated predicate");
                let st = self.txns.get_mut(&txn).expect("known txn");
                for k in &pred.covered {
                    match self.db.get(k) {
                        Some(v) => st.locals.insert(k.clone(), *v),
                        None => st.locals.remove(k),
                    };
                }
                Some(Action::predicate_read(txn, p.clone()))
            }
            Step::Write(k, e) | Step::CursorWrite(k, e) => {
                let v = e.eval(&self.txns[&txn].locals);
                self.write_value(txn, k, v);
                Some(match step {
                    Step::Write(..) => Action::write(txn, k.clone()),
                    _ => Action::cursor_write(txn, k.clone()),
                }
                .with_value(v))
            }
            Step::OpenCursor(p) => {
                self.txns.get_mut(&txn).expect("known txn").cursor = Some(Cursor {
                    predicate: p.clone(),
                    row: None,
                    exhausted: false,
                });
                None
            }
            Step::Fetch => {
                let next = self.next_row(txn);
                let st = self.txns.get_mut(&txn).expect("known txn");
                let cursor = st.cursor.as_mut().expect("validated cursor");
                match next {
                    Some(k) => {
                        cursor.row = Some(k.clone());
                        let v = self.db[&k];
                        st.locals.insert(k.clone(), v);
                        release = ReleaseEvent::CursorMove {
                            keep: Some(LockScope::Item(k.clone())),
                        };
                        Some(Action::cursor_read(txn, k).with_value(v))
                    }
                    None => {
                        cursor.row = None;
                        cursor.exhausted = true;
                        release = ReleaseEvent::CursorMove { keep: None };
                        None
                    }
                }
            }
            Step::CloseCursor => {
                self.txns.get_mut(&txn).expect("known txn").cursor = None;
                release = ReleaseEvent::CursorMove { keep: None };
                None
            }
            Step::Commit => {
                self.txns.get_mut(&txn).expect("known txn").status = Status::Committed;
                release = ReleaseEvent::Terminal;
                Some(Action::commit(txn))
            }
        };
        let action = action.map(|a| self.emit(a));
        let st = self.txns.get_mut(&txn).expect("known txn");
        st.pc += 1;
        if st.status == Status::Blocked {
            st.status = Status::Active;
        }
        if release != ReleaseEvent::ActionComplete {
            // Short locks expire with every action, cursor moves included.
            self.table.release(txn, &ReleaseEvent::ActionComplete);
        }
        self.table.release(txn, &release);
        Ok(action)
    }

    /// Aborts `txn`, restoring the before-images of its writes.
    fn abort(&mut self, txn: TxnId, cause: AbortCause) {
        let st = self.txns.get_mut(&txn).expect("known txn");
        st.status = Status::Aborted;
        st.cursor = None;
        for (k, before) in std::mem::take(&mut st.undo).into_iter().rev() {
            match before {
                Some(v) => self.db.insert(k, v),
                None => self.db.remove(&k),
            };
        }
        self.causes.insert(txn, cause);
        self.emit(Action::abort(txn));
        self.table.release(txn, &ReleaseEvent::Terminal);
    }

    pub fn outcomes(&self) -> BTreeMap<TxnId, TxnOutcome> {
        self.txns
            .iter()
            .map(|(t, st)| {
                let o = match st.status {
                    Status::Committed => TxnOutcome::Committed,
                    Status::Aborted => TxnOutcome::Aborted(self.causes[t].clone()),
                    Status::Blocked => TxnOutcome::Blocked,
                    Status::Active => TxnOutcome::Active,
                };
                (*t, o)
            })
            .collect()
    }

    pub fn finish(self) -> Result<RunReport, EngineError> {
        let outcomes = self.outcomes();
        let history = History::with_header(header_for(self.workload), self.actions)?;
        Ok(RunReport {
            history,
            versioned: None,
            outcomes,
            final_state: self.db,
        })
    }
}

/// Replays `schedule` against the workload under the level's lock policy.
pub fn run_locking(workload: &Workload, level: LevelId, schedule: &ScheduleSpec) -> Result<RunReport, EngineError> {
    let policy = policy_for_level(level).map_err(|e| EngineError::UnsupportedLevel(e.0.to_string()))?;
    run_with_policy(workload, policy, schedule)
}

pub fn run_with_policy(workload: &Workload, policy: LockPolicy, schedule: &ScheduleSpec) -> Result<RunReport, EngineError> {
    check_schedule(workload, schedule.slots())?;
    let mut engine = LockingEngine::new(workload, policy);
    for t in schedule.slots() {
        engine.step(*t)?;
    }
    engine.finish()
}

/// Checks every executed action ran under the lock it needs, replaying the
/// engine's lock trace.
pub fn is_well_formed(report_actions: &[Action], trace: &[TraceEvent], policy: LockPolicy) -> bool {
    let mut held: Vec<Lock> = Vec::new();
    for ev in trace {
        match ev {
            TraceEvent::Granted(l) => held.push(l.clone()),
            TraceEvent::Released(l) => {
                if let Some(i) = held.iter().position(|h| h == l) {
                    held.remove(i);
                }
            }
            TraceEvent::Executed(i) => {
                let a = &report_actions[*i];
                let holds = |scope: LockScope, mode: LockMode| {
                    held.iter().any(|l| l.txn == a.txn && l.scope == scope && l.mode >= mode)
                };
                let ok = match a.kind {
                    crate::history::ActionKind::Write | crate::history::ActionKind::CursorWrite => {
                        holds(LockScope::Item(a.item_key().expect("item").clone()), LockMode::Write)
                    }
                    crate::history::ActionKind::Read | crate::history::ActionKind::CursorRead => {
                        policy.item_read == ReadLocks::None
                            || holds(LockScope::Item(a.item_key().expect("item").clone()), LockMode::Read)
                    }
                    crate::history::ActionKind::PredicateRead => {
                        policy.pred_read == ReadLocks::None
                            || holds(LockScope::Predicate(a.predicate().expect("pred").to_string()), LockMode::Read)
                    }
                    _ => true,
                };
                if !ok {
                    return false;
                }
            }
        }
    }
    true
}

/// True when no transaction acquires a lock after releasing one.
pub fn is_two_phase(trace: &[TraceEvent]) -> bool {
    let mut shrinking: BTreeSet<TxnId> = BTreeSet::new();
    for ev in trace {
        match ev {
            TraceEvent::Granted(l) if shrinking.contains(&l.txn) => return false,
            TraceEvent::Released(l) => {
                shrinking.insert(l.txn);
            }
            _ => {}
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::parse_workload;

    const TRANSFER: &str = "init x=50 y=50\ntxn 1: r[x] w[x=x-40] r[y] w[y=y+40] commit\ntxn 2: r[x] r[y] commit\n";

    fn sched(s: &str) -> ScheduleSpec {
        s.parse().unwrap()
    }

    fn tokens(r: &RunReport) -> String {
        crate::run::body(&r.history)
    }

    #[test]
    fn policies_follow_the_lock_table() {
        let rc = policy_for_level(LevelId::ReadCommitted).unwrap();
        assert_eq!((rc.item_read, rc.pred_read, rc.write), (ReadLocks::Short, ReadLocks::Short, LockDuration::Long));
        let ser = policy_for_level(LevelId::Serializable).unwrap();
        assert_eq!((ser.item_read, ser.pred_read), (ReadLocks::Long, ReadLocks::Long));
        let rr = policy_for_level(LevelId::RepeatableRead).unwrap();
        assert_eq!((rr.item_read, rr.pred_read), (ReadLocks::Long, ReadLocks::Short));
        assert_eq!(policy_for_level(LevelId::Degree0).unwrap().write, LockDuration::Short);
        assert_eq!(policy_for_level(LevelId::CursorStability).unwrap().item_read, ReadLocks::Cursor);
        assert!(policy_for_level(LevelId::Snapshot).is_err());
    }

    #[test]
    fn transfer_at_read_uncommitted_replays_h1() {
        let w = parse_workload(TRANSFER).unwrap();
        let r = run_locking(&w, LevelId::ReadUncommitted, &sched("1 1 2 2 2 1 1 1")).unwrap();
        assert_eq!(tokens(&r), "r1[x=50] w1[x=10] r2[x=10] r2[y=50] c2 r1[y=50] w1[y=90] c1");
        assert!(r.all_committed());
    }

    #[test]
    fn transfer_at_serializable_blocks_reader() {
        let w = parse_workload(TRANSFER).unwrap();
        let r = run_locking(&w, LevelId::Serializable, &sched("1 1 2 2 2 1 1 1")).unwrap();
        assert_eq!(r.outcomes[&TxnId(2)], TxnOutcome::Blocked);
        assert!(crate::history::is_serializable(&r.history).unwrap().is_serializable());
        assert!(!r.history.actions().iter().any(|a| a.txn == TxnId(2)));
    }

    #[test]
    fn serializable_read_lock_blocks_writer() {
        let w = parse_workload("init x=1\ntxn 1: r[x] commit\ntxn 2: w[x=2] commit").unwrap();
        let mut e = LockingEngine::new(&w, policy_for_level(LevelId::Serializable).unwrap());
        assert!(matches!(e.step(TxnId(1)).unwrap(), StepOutcome::Executed { .. }));
        assert_eq!(e.step(TxnId(2)).unwrap(), StepOutcome::Blocked);
        e.step(TxnId(1)).unwrap();
        let out = e.step(TxnId(2)).unwrap();
        assert!(matches!(out, StepOutcome::Executed { action: Some(_) }));
    }

    #[test]
    fn read_committed_short_read_lock() {
        let w = parse_workload("init x=1\ntxn 1: r[x] commit\ntxn 2: w[x=2] commit").unwrap();
        let mut e = LockingEngine::new(&w, policy_for_level(LevelId::ReadCommitted).unwrap());
        e.step(TxnId(1)).unwrap();
        assert!(matches!(e.step(TxnId(2)).unwrap(), StepOutcome::Executed { .. }));
    }

    #[test]
    fn degree0_allows_dirty_write() {
        let w = parse_workload("txn 1: w[x=1] w[x=3] commit\ntxn 2: w[x=2] commit").unwrap();
        let r = run_locking(&w, LevelId::Degree0, &sched("1 2 1 1 2")).unwrap();
        assert_eq!(tokens(&r), "w1[x=1] w2[x=2] w1[x=3] c1 c2");
        let r = run_locking(&w, LevelId::ReadUncommitted, &sched("1 2 1 1 2 2")).unwrap();
        assert_eq!(tokens(&r), "w1[x=1] w1[x=3] c1 w2[x=2] c2");
    }

    #[test]
    fn deadlock_aborts_youngest() {
        let w = parse_workload("init x=0 y=0\ntxn 1: w[x=1] w[y=1] commit\ntxn 2: w[y=2] w[x=2] commit").unwrap();
        let mut e = LockingEngine::new(&w, policy_for_level(LevelId::Serializable).unwrap());
        e.step(TxnId(1)).unwrap();
        e.step(TxnId(2)).unwrap();
        assert_eq!(e.step(TxnId(1)).unwrap(), StepOutcome::Blocked);
        assert_eq!(
            e.step(TxnId(2)).unwrap(),
            StepOutcome::DeadlockAborted {
                victim: TxnId(2),
                resumed: false
            }
        );
        assert_eq!(e.database()[&ItemKey::new("y")], 0);
        e.step(TxnId(1)).unwrap();
        e.step(TxnId(1)).unwrap();
        let r = e.finish().unwrap();
        assert_eq!(tokens(&r), "w1[x=1] w2[y=2] a2 w1[y=1] c1");
        assert_eq!(r.outcomes[&TxnId(2)], TxnOutcome::Aborted(AbortCause::Deadlock));
    }

    #[test]
    fn deadlock_victim_other_than_requester_resumes_it() {
        let w = parse_workload("init x=0 y=0\ntxn 1: w[x=1] w[y=1] commit\ntxn 2: w[y=2] w[x=2] commit").unwrap();
        let mut e = LockingEngine::new(&w, policy_for_level(LevelId::Serializable).unwrap());
        e.step(TxnId(1)).unwrap();
        e.step(TxnId(2)).unwrap();
        assert_eq!(e.step(TxnId(2)).unwrap(), StepOutcome::Blocked);
        assert_eq!(
            e.step(TxnId(1)).unwrap(),
            StepOutcome::DeadlockAborted {
                victim: TxnId(2),
                resumed: true
            }
        );
    }

    #[test]
    fn cursor_stability_blocks_cursor_lost_update() {
        let w = parse_workload(
            "pred rows = {x}\ninit x=100\ntxn 1: open[P:rows] fetch wc[x=x+30] close commit\ntxn 2: r[x] w[x=x+20] commit",
        )
        .unwrap();
        let s = sched("1 1 2 2 2 1 1 1");
        let cs = run_locking(&w, LevelId::CursorStability, &s).unwrap();
        assert!(!crate::phenomena::detect(&cs.history, crate::phenomena::PhenomenonId::P4C)
            .iter()
            .any(|_| true));
        let rc = run_locking(&w, LevelId::ReadCommitted, &s).unwrap();
        assert_eq!(tokens(&rc), "rc1[x=100] r2[x=100] w2[x=120] c2 wc1[x=130] c1");
    }

    #[test]
    fn single_transaction_runs_in_program_order() {
        let w = parse_workload(TRANSFER).unwrap();
        let r = run_locking(&w, LevelId::Serializable, &sched("2 2 2")).unwrap();
        assert_eq!(tokens(&r), "r2[x=50] r2[y=50] c2");
        assert_eq!(r.outcomes[&TxnId(1)], TxnOutcome::Active);
    }

    #[test]
    fn trace_is_well_formed_and_two_phase() {
        let w = parse_workload(TRANSFER).unwrap();
        let policy = policy_for_level(LevelId::Serializable).unwrap();
        let mut e = LockingEngine::new(&w, policy);
        for t in sched("1 2 1 2 1 2 1 1 2 2").slots() {
            e.step(*t).unwrap();
            assert!(e.lock_table().is_consistent());
        }
        assert!(is_well_formed(e.actions(), e.lock_table().trace(), policy));
        assert!(is_two_phase(e.lock_table().trace()));
    }

    #[test]
    fn unknown_txn_in_schedule() {
        let w = parse_workload(TRANSFER).unwrap();
        assert_eq!(
            run_locking(&w, LevelId::ReadCommitted, &sched("3")),
            Err(EngineError::UnknownTxn(TxnId(3)))
        );
    }
}
