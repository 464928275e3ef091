//! Built-in scenarios, exhaustive schedule search, the anomaly matrix and
//! level comparison.

mod builtin;
mod compare;
mod matrix;
mod schedule;

pub use builtin::{builtin_workload, builtin_workloads};
pub use compare::{compare_in, compare_levels, Corpus, CorpusEntry, LevelOrder, Relation};
pub use matrix::{build_matrix, MatrixCell, MatrixResult};
pub use schedule::{enumerate_schedules, multinomial, Schedules};

use crate::history::History;
use crate::locking::run_locking;
use crate::mvcc::{run_read_consistency, run_si};
use crate::phenomena::{detect, LevelId, PhenomenonId, Witness};
use crate::run::{EngineError, RunReport};
use crate::workload::{ScheduleSpec, Workload};

/// Schedule length searched when none is given.
pub const DEFAULT_BOUND: usize = 14;

/// Runs the engine that implements `level`. Snapshot runs report the
/// single-version mapping of their history.
pub fn run_level(workload: &Workload, level: LevelId, schedule: &ScheduleSpec) -> Result<RunReport, EngineError> {
    match level {
        LevelId::Snapshot => run_si(workload, schedule),
        LevelId::ReadConsistency => run_read_consistency(workload, schedule),
        _ => run_locking(workload, level, schedule),
    }
}

/// The reference schedule (when it fits the bound) followed by the full
/// enumeration without it.
pub fn search_schedules(workload: &Workload, bound: usize) -> impl Iterator<Item = ScheduleSpec> + '_ {
    let reference = workload.reference_schedule.clone().filter(|s| s.len() <= bound);
    let skip = reference.clone();
    reference
        .into_iter()
        .chain(enumerate_schedules(workload, bound).filter(move |s| Some(s) != skip.as_ref()))
}

/// An emitted history exhibiting a phenomenon, with what reproduces it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoundWitness {
    pub level: LevelId,
    pub workload: String,
    pub schedule: ScheduleSpec,
    pub history: History,
    pub witness: Witness,
}

impl FoundWitness {
    /// Re-runs the schedule and checks the detector still fires on the
    /// same history.
    pub fn replays(&self, workloads: &[Workload]) -> bool {
        let Some(w) = workloads.iter().find(|w| w.name == self.workload) else {
            return false;
        };
        match run_level(w, self.level, &self.schedule) {
            Ok(r) => r.history == self.history && detect(&r.history, self.witness.phenomenon).contains(&self.witness),
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchResult {
    Found(Box<FoundWitness>),
    /// No emitted history within the bound exhibits the phenomenon.
    Exhausted { bound: usize, schedules: usize },
}

impl SearchResult {
    pub fn found(&self) -> Option<&FoundWitness> {
        match self {
            SearchResult::Found(f) => Some(f),
            SearchResult::Exhausted { .. } => None,
        }
    }
}

/// First emitted history, over workloads in order and their schedules, in
/// which `p` is detected.
pub fn witness_search(
    level: LevelId,
    p: PhenomenonId,
    workloads: &[Workload],
    bound: usize,
) -> Result<SearchResult, EngineError> {
    let mut tried = 0;
    for w in workloads {
        for s in search_schedules(w, bound) {
            tried += 1;
            let r = run_level(w, level, &s)?;
            if let Some(witness) = detect(&r.history, p).into_iter().next() {
                return Ok(SearchResult::Found(Box::new(FoundWitness {
                    level,
                    workload: w.name.clone(),
                    schedule: s,
                    history: r.history,
                    witness,
                })));
            }
        }
    }
    Ok(SearchResult::Exhausted { bound, schedules: tried })
}
