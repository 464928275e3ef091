use rayon::prelude::*;

use super::{witness_search, SearchResult};
use crate::phenomena::{table4, LevelId, PhenomenonId, Possibility};
use crate::run::EngineError;
use crate::workload::Workload;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixCell {
    pub level: LevelId,
    pub phenomenon: PhenomenonId,
    /// Golden value; "sometimes possible" counts as possible.
    pub expected: Option<Possibility>,
    pub result: SearchResult,
}

impl MatrixCell {
    pub fn observed_possible(&self) -> bool {
        self.result.found().is_some()
    }

    /// True when there is no golden value to compare against.
    pub fn matches(&self) -> bool {
        self.expected.is_none_or(|e| e.allows() == self.observed_possible())
    }

    /// `level phenomenon verdict workload:schedule`
    pub fn record(&self) -> String {
        let verdict = if self.observed_possible() { "possible" } else { "not-possible" };
        let origin = match self.result.found() {
            Some(f) => format!("{}:{}", f.workload, f.schedule.compact()),
            None => "-".into(),
        };
        format!("{} {} {verdict} {origin}", self.level, self.phenomenon)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixResult {
    pub levels: Vec<LevelId>,
    pub phenomena: Vec<PhenomenonId>,
    pub cells: Vec<MatrixCell>,
    pub workloads: Vec<String>,
    pub bound: usize,
}

impl MatrixResult {
    pub fn cell(&self, level: LevelId, p: PhenomenonId) -> Option<&MatrixCell> {
        self.cells.iter().find(|c| c.level == level && c.phenomenon == p)
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &MatrixCell> {
        self.cells.iter().filter(|c| !c.matches())
    }

    /// Fixed-width table; a `*` marks a cell that disagrees with its golden
    /// value.
    pub fn render_table(&self) -> String {
        const W: usize = 14;
        let width = self.levels.iter().map(|l| l.to_string().len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:width$}", "level");
        for p in &self.phenomena {
            out.push_str(&format!(" {:>W$}", p.name()));
        }
        out.push('\n');
        for l in &self.levels {
            out.push_str(&format!("{:width$}", l.to_string()));
            for p in &self.phenomena {
                let c = self.cell(*l, *p).expect("every cell searched");
                let mut text = if c.observed_possible() { "Possible" } else { "Not Possible" }.to_string();
                if !c.matches() {
                    text.push('*');
                }
                out.push_str(&format!(" {text:>W$}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn records(&self) -> Vec<String> {
        self.cells.iter().map(MatrixCell::record).collect()
    }
}

/// One witness search per cell, run in parallel; cells come back in
/// level-major order.
pub fn build_matrix(
    levels: &[LevelId],
    phenomena: &[PhenomenonId],
    workloads: &[Workload],
    bound: usize,
) -> Result<MatrixResult, EngineError> {
    let pairs: Vec<(LevelId, PhenomenonId)> = levels
        .iter()
        .flat_map(|l| phenomena.iter().map(move |p| (*l, *p)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(level, phenomenon)| {
            witness_search(level, phenomenon, workloads, bound).map(|result| MatrixCell {
                level,
                phenomenon,
                expected: table4(level, phenomenon),
                result,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MatrixResult {
        levels: levels.to_vec(),
        phenomena: phenomena.to_vec(),
        cells,
        workloads: workloads.iter().map(|w| w.name.clone()).collect(),
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{builtin_workloads, DEFAULT_BOUND};

    fn cell(level: LevelId, p: PhenomenonId) -> MatrixCell {
        build_matrix(&[level], &[p], &builtin_workloads(), DEFAULT_BOUND)
            .unwrap()
            .cells
            .remove(0)
    }

    #[test]
    fn repeatable_read_prevents_read_skew() {
        let c = cell(LevelId::RepeatableRead, PhenomenonId::A5A);
        assert!(!c.observed_possible());
        assert!(c.matches());
        assert_eq!(c.record(), "repeatable-read A5A not-possible -");
    }

    #[test]
    fn cursor_stability_prevents_cursor_lost_update() {
        assert!(!cell(LevelId::CursorStability, PhenomenonId::P4C).observed_possible());
    }

    #[test]
    fn read_uncommitted_allows_dirty_read() {
        let c = cell(LevelId::ReadUncommitted, PhenomenonId::P1);
        assert!(c.observed_possible() && c.matches());
        assert_eq!(c.record(), "read-uncommitted P1 possible transfer:1,1,2,2,2,1,1,1");
    }

    #[test]
    fn table_layout() {
        let m = build_matrix(
            &[LevelId::ReadCommitted, LevelId::Serializable],
            &[PhenomenonId::P1, PhenomenonId::P2],
            &builtin_workloads(),
            DEFAULT_BOUND,
        )
        .unwrap();
        let t = m.render_table();
        assert_eq!(t.lines().count(), 3);
        assert!(t.lines().nth(1).unwrap().starts_with("read-committed"));
        assert_eq!(m.mismatches().count(), 0);
    }
}
