//! Results shared by every engine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::history::{History, HistoryError, HistoryHeader, ItemKey, TxnId};
use crate::workload::Workload;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AbortCause {
    Deadlock,
    FirstCommitterWins { keys: BTreeSet<ItemKey> },
}

impl fmt::Display for AbortCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbortCause::Deadlock => f.write_str("deadlock victim"),
            AbortCause::FirstCommitterWins { keys } => {
                let keys: Vec<&str> = keys.iter().map(ItemKey::as_str).collect();
                write!(f, "first-committer-wins on {}", keys.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxnOutcome {
    Committed,
    Aborted(AbortCause),
    /// Waiting on a lock when the schedule ran out.
    Blocked,
    /// Steps remained when the schedule ran out.
    Active,
}

impl TxnOutcome {
    pub fn is_terminated(&self) -> bool {
        matches!(self, TxnOutcome::Committed | TxnOutcome::Aborted(_))
    }
}

impl fmt::Display for TxnOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TxnOutcome::Committed => f.write_str("committed"),
            TxnOutcome::Aborted(c) => write!(f, "aborted ({c})"),
            TxnOutcome::Blocked => f.write_str("blocked"),
            TxnOutcome::Active => f.write_str("active"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("schedule names T{0}, which the workload does not define")]
    UnknownTxn(TxnId),
    #[error("{0} is not run by this engine")]
    UnsupportedLevel(String),
    #[error("engine emitted an invalid history: {0}")]
    History(#[from] HistoryError),
    #[error(transparent)]
    Mapping(#[from] crate::mvcc::MappingError),
    #[error(transparent)]
    Snapshot(#[from] crate::mvcc::SnapshotError),
}

/// What one replay of a schedule produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    /// Single-version history used for analysis.
    pub history: History,
    /// The multiversion history, for engines that keep versions.
    pub versioned: Option<History>,
    pub outcomes: BTreeMap<TxnId, TxnOutcome>,
    pub final_state: BTreeMap<ItemKey, i64>,
}

impl RunReport {
    /// False when some transaction was still blocked or active at the end.
    pub fn is_complete(&self) -> bool {
        self.outcomes.values().all(TxnOutcome::is_terminated)
    }

    pub fn all_committed(&self) -> bool {
        self.outcomes.values().all(|o| *o == TxnOutcome::Committed)
    }

    pub fn aborted(&self) -> impl Iterator<Item = TxnId> + '_ {
        self.outcomes
            .iter()
            .filter(|(_, o)| matches!(o, TxnOutcome::Aborted(_)))
            .map(|(t, _)| *t)
    }

    pub fn constraint_holds(&self, workload: &Workload) -> Option<bool> {
        workload.constraint_holds(&self.final_state)
    }

    /// Text block: the history, one outcome line per transaction, then the
    /// final state.
    pub fn render(&self, workload: &Workload) -> String {
        let mut out = String::new();
        if let Some(mv) = &self.versioned {
            out.push_str(&format!("versions: {}\n", body(mv)));
        }
        out.push_str(&format!("history: {}\n", body(&self.history)));
        for (t, o) in &self.outcomes {
            out.push_str(&format!("T{t}: {o}\n"));
        }
        let state: Vec<String> = self.final_state.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.push_str(&format!("state: {}\n", state.join(" ")));
        if let Some(ok) = self.constraint_holds(workload) {
            let c = workload.constraint.as_ref().expect("constraint present");
            out.push_str(&format!("constraint {c}: {}\n", if ok { "holds" } else { "violated" }));
        }
        if !self.is_complete() {
            out.push_str("incomplete: schedule ended before every transaction finished\n");
        }
        out
    }
}

/// Actions only, without the header lines.
pub fn body(h: &History) -> String {
    h.actions().iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub(crate) fn header_for(workload: &Workload) -> HistoryHeader {
    HistoryHeader {
        universe: Some(workload.universe.clone()),
        init: workload.init.clone(),
        predicates: workload.predicates.clone(),
    }
}

pub(crate) fn check_schedule(workload: &Workload, slots: &[TxnId]) -> Result<(), EngineError> {
    match slots.iter().find(|t| !workload.programs.contains_key(t)) {
        Some(t) => Err(EngineError::UnknownTxn(*t)),
        None => Ok(()),
    }
}
