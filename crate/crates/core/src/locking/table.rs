use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::history::{find_cycle, ItemKey, PredicateDecl, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockMode {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockScope {
    Item(ItemKey),
    Predicate(String),
}

impl fmt::Display for LockScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LockScope::Item(k) => write!(f, "{k}"),
            LockScope::Predicate(p) => write!(f, "P:{p}"),
        }
    }
}

/// Ordered by how long the lock is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockDuration {
    /// Released when the action that took it completes.
    Short,
    /// Released when the cursor moves off the row or closes.
    Cursor,
    /// Released at commit or abort.
    Long,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Lock {
    pub txn: TxnId,
    pub scope: LockScope,
    pub mode: LockMode,
    pub duration: LockDuration,
}

impl Lock {
    pub fn new(txn: TxnId, scope: LockScope, mode: LockMode, duration: LockDuration) -> Self {
        Lock {
            txn,
            scope,
            mode,
            duration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grant {
    Granted,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReleaseEvent {
    ActionComplete,
    /// The cursor moved; cursor locks other than the one on `keep` expire.
    CursorMove { keep: Option<LockScope> },
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Granted(Lock),
    Released(Lock),
    /// The engine executed the history action at this index.
    Executed(usize),
}

/// Held locks plus a FIFO queue of requests waiting on a conflict.
#[derive(Debug, Clone)]
pub struct LockTable {
    predicates: Vec<PredicateDecl>,
    held: Vec<Lock>,
    queue: VecDeque<Lock>,
    trace: Vec<TraceEvent>,
}

impl LockTable {
    pub fn new(predicates: Vec<PredicateDecl>) -> Self {
        LockTable {
            predicates,
            held: Vec::new(),
            queue: VecDeque::new(),
            trace: Vec::new(),
        }
    }

    pub fn held(&self) -> &[Lock] {
        &self.held
    }

    pub fn waiting(&self) -> impl Iterator<Item = &Lock> {
        self.queue.iter()
    }

    pub fn is_waiting(&self, txn: TxnId) -> bool {
        self.queue.iter().any(|l| l.txn == txn)
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub(crate) fn note_executed(&mut self, index: usize) {
        self.trace.push(TraceEvent::Executed(index));
    }

    fn covered(&self, name: &str) -> Option<&BTreeSet<ItemKey>> {
        self.predicates.iter().find(|p| p.name == name).map(|p| &p.covered)
    }

    /// An item is a predicate naming one record; predicates overlap when
    /// their covered sets intersect.
    pub fn overlaps(&self, a: &LockScope, b: &LockScope) -> bool {
        match (a, b) {
            (LockScope::Item(x), LockScope::Item(y)) => x == y,
            (LockScope::Item(k), LockScope::Predicate(p)) | (LockScope::Predicate(p), LockScope::Item(k)) => {
                self.covered(p).is_some_and(|c| c.contains(k))
            }
            (LockScope::Predicate(p), LockScope::Predicate(q)) => match (self.covered(p), self.covered(q)) {
                (Some(c), Some(d)) => !c.is_disjoint(d),
                _ => false,
            },
        }
    }

    pub fn conflicts(&self, a: &Lock, b: &Lock) -> bool {
        a.txn != b.txn
            && (a.mode == LockMode::Write || b.mode == LockMode::Write)
            && self.overlaps(&a.scope, &b.scope)
    }

    fn blocked_by_holder(&self, req: &Lock) -> bool {
        self.held.iter().any(|h| self.conflicts(h, req))
    }

    /// Grants immediately unless another transaction holds a conflicting
    /// lock, in which case the request joins the queue. A lock the requester
    /// already holds in an equal or stronger mode is extended instead.
    pub fn acquire(&mut self, req: Lock) -> Grant {
        if let Some(own) = self
            .held
            .iter_mut()
            .find(|h| h.txn == req.txn && h.scope == req.scope && h.mode >= req.mode)
        {
            own.duration = own.duration.max(req.duration);
            return Grant::Granted;
        }
        if self.blocked_by_holder(&req) {
            let queued = self
                .queue
                .iter_mut()
                .find(|q| q.txn == req.txn && q.scope == req.scope && q.mode == req.mode);
            match queued {
                Some(q) => q.duration = q.duration.max(req.duration),
                None => self.queue.push_back(req),
            }
            return Grant::Blocked;
        }
        self.queue
            .retain(|q| !(q.txn == req.txn && q.scope == req.scope && q.mode <= req.mode));
        self.trace.push(TraceEvent::Granted(req.clone()));
        self.held.push(req);
        Grant::Granted
    }

    /// Drops the locks of `txn` whose duration expires at `event`, then
    /// grants queued requests in FIFO order. Returns the requests granted.
    pub fn release(&mut self, txn: TxnId, event: &ReleaseEvent) -> Vec<Lock> {
        let expires = |l: &Lock| {
            l.txn == txn
                && match event {
                    ReleaseEvent::ActionComplete => l.duration == LockDuration::Short,
                    ReleaseEvent::CursorMove { keep } => {
                        l.duration == LockDuration::Cursor && keep.as_ref() != Some(&l.scope)
                    }
                    ReleaseEvent::Terminal => true,
                }
        };
        let (gone, kept): (Vec<Lock>, Vec<Lock>) = self.held.drain(..).partition(expires);
        self.held = kept;
        self.trace.extend(gone.into_iter().map(TraceEvent::Released));
        if *event == ReleaseEvent::Terminal {
            self.queue.retain(|q| q.txn != txn);
        }
        self.grant_waiting()
    }

    fn grant_waiting(&mut self) -> Vec<Lock> {
        let mut granted = Vec::new();
        let mut remaining = VecDeque::new();
        while let Some(req) = self.queue.pop_front() {
            if self.blocked_by_holder(&req) {
                remaining.push_back(req);
            } else {
                self.trace.push(TraceEvent::Granted(req.clone()));
                self.held.push(req.clone());
                granted.push(req);
            }
        }
        self.queue = remaining;
        granted
    }

    /// Edges from each waiting transaction to every holder it conflicts with.
    pub fn waits_for(&self) -> BTreeMap<TxnId, BTreeSet<TxnId>> {
        let mut g: BTreeMap<TxnId, BTreeSet<TxnId>> = BTreeMap::new();
        for req in &self.queue {
            for h in self.held.iter().filter(|h| self.conflicts(h, req)) {
                g.entry(req.txn).or_default().insert(h.txn);
            }
        }
        g
    }

    pub fn find_deadlock(&self) -> Option<Vec<TxnId>> {
        find_cycle(&self.waits_for())
    }

    /// True when no two held locks conflict and every queued request is
    /// blocked by some holder.
    pub fn is_consistent(&self) -> bool {
        let safe = self
            .held
            .iter()
            .enumerate()
            .all(|(i, a)| self.held[i + 1..].iter().all(|b| !self.conflicts(a, b)));
        safe && self.queue.iter().all(|q| self.blocked_by_holder(q))
    }
}
