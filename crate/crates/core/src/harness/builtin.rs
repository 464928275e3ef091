use crate::workload::{parse_workload, Workload};

const TRANSFER: &str = "\
# T1 moves 40 from x to y while T2 reads both.
name transfer
init x=50 y=50
constraint sum{x,y} = 100
schedule 1 1 2 2 2 1 1 1
txn 1: r[x] w[x=x-40] r[y] w[y=y+40] commit
txn 2: r[x] r[y] commit
";

const INCONSISTENT_ANALYSIS: &str = "\
# The reader sees x before and y after the transfer.
name inconsistent-analysis
init x=50 y=50
constraint sum{x,y} = 100
schedule 1 2 2 2 2 2 1 1
txn 1: r[x] r[y] commit
txn 2: r[x] w[x=x-40] r[y] w[y=y+40] commit
";

const PHANTOM: &str = "\
# T1 lists active employees and reads the head count z; T2 hires y.
name phantom
universe {e1,y,z}
init e1=1 z=1
pred active = {e1,y}
constraint count(P:active) = z
schedule 1 2 2 2 2 1 1
txn 1: r[P:active] r[z] commit
txn 2: w[y=1] r[z] w[z=z+1] commit
";

const PHANTOM_REREAD: &str = "\
name phantom-reread
universe {e1,y}
init e1=1
pred active = {e1,y}
schedule 1 2 2 1 1
txn 1: r[P:active] r[P:active] commit
txn 2: w[y=1] commit
";

const LOST_UPDATE: &str = "\
name lost-update
init x=100
schedule 1 2 2 2 1 1
txn 1: r[x] w[x=x+30] commit
txn 2: r[x] w[x=x+20] commit
";

const CURSOR_LOST_UPDATE: &str = "\
# T1 updates x through a cursor.
name cursor-lost-update
init x=100
pred rows = {x}
schedule 1 1 2 2 2 1 1 1
txn 1: open[P:rows] fetch wc[x=x+30] close commit
txn 2: r[x] w[x=x+20] commit
";

const WRITE_SKEW: &str = "\
# Each withdrawal keeps x+y positive on its own.
name write-skew
init x=50 y=50
constraint sum{x,y} > 0
schedule 1 1 2 2 1 2 1 2
txn 1: r[x] r[y] w[y=y-90] commit
txn 2: r[x] r[y] w[x=x-90] commit
";

const READ_SKEW: &str = "\
name read-skew
init x=50 y=50
constraint sum{x,y} = 100
schedule 1 2 2 2 1 1
txn 1: r[x] r[y] commit
txn 2: w[x=10] w[y=90] commit
";

const JOB_TASKS: &str = "\
# Tasks for one job may not exceed 8 hours in total.
name job-tasks
universe {t1,t2,t3,t4}
init t1=4 t2=3
pred tasks = {t1,t2,t3,t4}
constraint sum(P:tasks) <= 8
schedule 1 2 1 2 1 2
txn 1: r[P:tasks] w[t3=1] commit
txn 2: r[P:tasks] w[t4=1] commit
";

const DIRTY_WRITE: &str = "\
name dirty-write
init x=0 y=0
constraint x = y
schedule 1 2 2 2 1 1
txn 1: w[x=1] w[y=1] commit
txn 2: w[x=2] w[y=2] commit
";

const SOURCES: [&str; 10] = [
    TRANSFER,
    INCONSISTENT_ANALYSIS,
    PHANTOM,
    PHANTOM_REREAD,
    LOST_UPDATE,
    CURSOR_LOST_UPDATE,
    WRITE_SKEW,
    READ_SKEW,
    JOB_TASKS,
    DIRTY_WRITE,
];

/// The scenario workloads, each with its reference schedule.
pub fn builtin_workloads() -> Vec<Workload> {
    SOURCES
        .iter()
        .map(|s| parse_workload(s).expect("built-in workloads parse"))
        .collect()
}

pub fn builtin_workload(name: &str) -> Option<Workload> {
    builtin_workloads().into_iter().find(|w| w.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{is_serializable, TxnId};
    use crate::locking::run_locking;
    use crate::mvcc::run_si;
    use crate::phenomena::{detect, LevelId, PhenomenonId};
    use crate::run::{body, TxnOutcome};

    fn reference(name: &str) -> (Workload, crate::workload::ScheduleSpec) {
        let w = builtin_workload(name).unwrap();
        let s = w.reference_schedule.clone().unwrap();
        (w, s)
    }

    #[test]
    fn every_builtin_has_a_full_reference_schedule() {
        let all = builtin_workloads();
        assert_eq!(all.len(), 10);
        for w in &all {
            assert_eq!(w.reference_schedule.as_ref().unwrap().len(), w.total_steps(), "{}", w.name);
        }
    }

    #[test]
    fn transfer_reference_emits_h1() {
        let (w, s) = reference("transfer");
        let r = run_locking(&w, LevelId::ReadUncommitted, &s).unwrap();
        assert_eq!(body(&r.history), "r1[x=50] w1[x=10] r2[x=10] r2[y=50] c2 r1[y=50] w1[y=90] c1");
    }

    #[test]
    fn inconsistent_analysis_reference_emits_h2() {
        let (w, s) = reference("inconsistent-analysis");
        let r = run_locking(&w, LevelId::ReadCommitted, &s).unwrap();
        assert_eq!(body(&r.history), "r1[x=50] r2[x=50] w2[x=10] r2[y=50] w2[y=90] c2 r1[y=90] c1");
    }

    #[test]
    fn phantom_reference_emits_h3() {
        let (w, s) = reference("phantom");
        let r = run_locking(&w, LevelId::RepeatableRead, &s).unwrap();
        assert_eq!(body(&r.history), "r1[P:active] w2[y=1] r2[z=1] w2[z=2] c2 r1[z=2] c1");
        assert!(!detect(&r.history, PhenomenonId::P3).is_empty());
        assert_eq!(r.constraint_holds(&w), Some(true));
    }

    #[test]
    fn lost_update_reference_emits_h4_at_read_committed() {
        let (w, s) = reference("lost-update");
        let r = run_locking(&w, LevelId::ReadCommitted, &s).unwrap();
        assert_eq!(body(&r.history), "r1[x=100] r2[x=100] w2[x=120] c2 w1[x=130] c1");
    }

    #[test]
    fn write_skew_reference_under_si_violates_constraint() {
        let (w, s) = reference("write-skew");
        let r = run_si(&w, &s).unwrap();
        assert!(r.all_committed());
        assert_eq!(r.constraint_holds(&w), Some(false));
        assert!(!is_serializable(&r.history).unwrap().is_serializable());
    }

    #[test]
    fn job_tasks_under_si_commits_both() {
        let (w, s) = reference("job-tasks");
        let r = run_si(&w, &s).unwrap();
        assert_eq!(r.outcomes[&TxnId(1)], TxnOutcome::Committed);
        assert_eq!(r.outcomes[&TxnId(2)], TxnOutcome::Committed);
        assert_eq!(r.constraint_holds(&w), Some(false));
        assert!(!detect(&r.history, PhenomenonId::P3).is_empty());
    }
}
