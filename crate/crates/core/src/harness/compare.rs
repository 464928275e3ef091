use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;

use super::{run_level, search_schedules};
use crate::history::{is_serializable, History};
use crate::phenomena::{admits, LevelId};
use crate::run::{body, EngineError, RunReport};
use crate::workload::{ScheduleSpec, Workload};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub level: LevelId,
    pub workload: String,
    pub schedule: ScheduleSpec,
    pub report: RunReport,
}

/// Every engine run of every workload schedule within a bound.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    pub bound: usize,
}

impl Corpus {
    pub fn collect(levels: &[LevelId], workloads: &[Workload], bound: usize) -> Result<Corpus, EngineError> {
        let jobs: Vec<(LevelId, &Workload)> = levels
            .iter()
            .flat_map(|l| workloads.iter().map(move |w| (*l, w)))
            .collect();
        let chunks = jobs
            .par_iter()
            .map(|&(level, w)| {
                search_schedules(w, bound)
                    .map(|s| {
                        run_level(w, level, &s).map(|report| CorpusEntry {
                            level,
                            workload: w.name.clone(),
                            schedule: s,
                            report,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Corpus {
            entries: chunks.into_iter().flatten().collect(),
            bound,
        })
    }

    pub fn at(&self, level: LevelId) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.level == level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Weaker,
    Stronger,
    Equivalent,
    Incomparable,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Weaker => "weaker",
            Relation::Stronger => "stronger",
            Relation::Equivalent => "equivalent",
            Relation::Incomparable => "incomparable",
        })
    }
}

/// A non-serializable history one level allows and the other does not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneSided {
    pub history: History,
    /// One engine run that emitted it.
    pub origin: (LevelId, String, ScheduleSpec),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelOrder {
    pub l1: LevelId,
    pub l2: LevelId,
    pub relation: Relation,
    pub only_l1: Vec<OneSided>,
    pub only_l2: Vec<OneSided>,
}

impl LevelOrder {
    pub fn render(&self) -> String {
        let link = match self.relation {
            Relation::Weaker => "weaker than",
            Relation::Stronger => "stronger than",
            Relation::Equivalent => "equivalent to",
            Relation::Incomparable => "incomparable with",
        };
        let mut out = format!("{} is {link} {}\n", self.l1, self.l2);
        for (level, side) in [(self.l1, &self.only_l1), (self.l2, &self.only_l2)] {
            out.push_str(&format!("only {level}: {} histories\n", side.len()));
            if let Some(w) = side.first() {
                let (l, name, s) = &w.origin;
                out.push_str(&format!("  {}  ({l} {name}:{})\n", body(&w.history), s.compact()));
            }
        }
        out
    }
}

/// Phenomenon-defined levels occur where `admits` holds; Snapshot and Read
/// Consistency occur where their engine emitted the history.
fn occurs(level: LevelId, h: &History, reachable: &BTreeMap<LevelId, BTreeSet<String>>) -> bool {
    if level.is_locking() {
        admits(level, h)
    } else {
        reachable.get(&level).is_some_and(|set| set.contains(&h.to_string()))
    }
}

/// Classifies two levels over the non-serializable histories in `corpus`.
pub fn compare_in(corpus: &Corpus, l1: LevelId, l2: LevelId) -> LevelOrder {
    let mut reachable: BTreeMap<LevelId, BTreeSet<String>> = BTreeMap::new();
    let mut universe: BTreeMap<String, OneSided> = BTreeMap::new();
    for e in &corpus.entries {
        let text = e.report.history.to_string();
        reachable.entry(e.level).or_default().insert(text.clone());
        let nonserializable = is_serializable(&e.report.history).is_ok_and(|s| !s.is_serializable());
        if nonserializable {
            universe.entry(text).or_insert_with(|| OneSided {
                history: e.report.history.clone(),
                origin: (e.level, e.workload.clone(), e.schedule.clone()),
            });
        }
    }
    let mut only_l1 = Vec::new();
    let mut only_l2 = Vec::new();
    for h in universe.into_values() {
        match (occurs(l1, &h.history, &reachable), occurs(l2, &h.history, &reachable)) {
            (true, false) => only_l1.push(h),
            (false, true) => only_l2.push(h),
            _ => {}
        }
    }
    let relation = match (only_l1.is_empty(), only_l2.is_empty()) {
        (true, true) => Relation::Equivalent,
        (false, true) => Relation::Weaker,
        (true, false) => Relation::Stronger,
        (false, false) => Relation::Incomparable,
    };
    LevelOrder {
        l1,
        l2,
        relation,
        only_l1,
        only_l2,
    }
}

/// Builds the corpus of every engine's runs, then classifies the pair.
pub fn compare_levels(l1: LevelId, l2: LevelId, workloads: &[Workload], bound: usize) -> Result<LevelOrder, EngineError> {
    let corpus = Corpus::collect(&LevelId::ALL, workloads, bound)?;
    Ok(compare_in(&corpus, l1, l2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{builtin_workloads, DEFAULT_BOUND};
    use crate::phenomena::{detect, PhenomenonId};

    fn corpus() -> Corpus {
        Corpus::collect(&LevelId::ALL, &builtin_workloads(), DEFAULT_BOUND).unwrap()
    }

    #[test]
    fn comparisons() {
        let c = corpus();
        let rc_rr = compare_in(&c, LevelId::ReadCommitted, LevelId::RepeatableRead);
        assert_eq!(rc_rr.relation, Relation::Weaker);
        assert!(rc_rr
            .only_l1
            .iter()
            .any(|w| !detect(&w.history, PhenomenonId::P4).is_empty()));

        let rr_si = compare_in(&c, LevelId::RepeatableRead, LevelId::Snapshot);
        assert_eq!(rr_si.relation, Relation::Incomparable);
        assert!(rr_si.only_l1.iter().any(|w| !detect(&w.history, PhenomenonId::A3).is_empty()));
        assert!(rr_si.only_l2.iter().any(|w| !detect(&w.history, PhenomenonId::A5B).is_empty()));

        assert_eq!(compare_in(&c, LevelId::Snapshot, LevelId::Snapshot).relation, Relation::Equivalent);
        assert_eq!(
            compare_in(&c, LevelId::Serializable, LevelId::ReadCommitted).relation,
            Relation::Stronger
        );
    }
}
