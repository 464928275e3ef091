use crate::history::TxnId;
use crate::workload::{ScheduleSpec, Workload};

/// Number of interleavings of sequences with the given lengths.
pub fn multinomial(counts: &[usize]) -> u128 {
    let mut total: u128 = 1;
    let mut n: u128 = 0;
    for &c in counts {
        for k in 1..=c as u128 {
            n += 1;
            total = total * n / k;
        }
    }
    total
}

/// Interleavings of the workload's programs in lexicographic order of
/// transaction ids.
///
/// When the programs have more steps in total than `bound`, the schedules
/// cover every interleaving of program prefixes with `bound` steps, and
/// [`Schedules::truncated`] is set.
#[derive(Debug, Clone)]
pub struct Schedules {
    txns: Vec<TxnId>,
    caps: Vec<usize>,
    len: usize,
    current: Option<Vec<usize>>,
    started: bool,
    truncated: bool,
}

impl Schedules {
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    fn fill(&self, used: &mut [usize], out: &mut Vec<usize>) {
        while out.len() < self.len {
            let j = (0..self.caps.len())
                .find(|&j| used[j] < self.caps[j])
                .expect("length never exceeds total steps");
            used[j] += 1;
            out.push(j);
        }
    }

    fn advance(&mut self) -> Option<Vec<usize>> {
        if !self.started {
            self.started = true;
            let mut used = vec![0; self.caps.len()];
            let mut first = Vec::with_capacity(self.len);
            self.fill(&mut used, &mut first);
            return Some(first);
        }
        let mut cur = self.current.take()?;
        let mut used = vec![0; self.caps.len()];
        for &j in &cur {
            used[j] += 1;
        }
        while let Some(last) = cur.pop() {
            used[last] -= 1;
            if let Some(j) = (last + 1..self.caps.len()).find(|&j| used[j] < self.caps[j]) {
                used[j] += 1;
                cur.push(j);
                self.fill(&mut used, &mut cur);
                return Some(cur);
            }
        }
        None
    }
}

impl Iterator for Schedules {
    type Item = ScheduleSpec;

    fn next(&mut self) -> Option<ScheduleSpec> {
        let next = self.advance()?;
        self.current = Some(next.clone());
        Some(ScheduleSpec(next.into_iter().map(|j| self.txns[j]).collect()))
    }
}

pub fn enumerate_schedules(workload: &Workload, bound: usize) -> Schedules {
    let txns: Vec<TxnId> = workload.txns().collect();
    let caps: Vec<usize> = txns.iter().map(|t| workload.programs[t].len()).collect();
    let total: usize = caps.iter().sum();
    Schedules {
        txns,
        caps,
        len: total.min(bound),
        current: None,
        started: false,
        truncated: total > bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::parse_workload;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn workload(lengths: &[usize]) -> Workload {
        let mut text = String::new();
        for (i, n) in lengths.iter().enumerate() {
            let mut steps = vec!["r[x]"; n - 1];
            steps.push("commit");
            text.push_str(&format!("txn {}: {}\n", i + 1, steps.join(" ")));
        }
        parse_workload(&text).unwrap()
    }

    #[test]
    fn small_counts() {
        assert_eq!(enumerate_schedules(&workload(&[1, 1]), 14).count(), 2);
        assert_eq!(enumerate_schedules(&workload(&[2, 2]), 14).count(), 6);
        assert_eq!(enumerate_schedules(&workload(&[1, 1, 1]), 14).count(), 6);
    }

    #[test]
    fn lexicographic_order() {
        let all: Vec<String> = enumerate_schedules(&workload(&[2, 2]), 14).map(|s| s.to_string()).collect();
        assert_eq!(all, ["1 1 2 2", "1 2 1 2", "1 2 2 1", "2 1 1 2", "2 1 2 1", "2 2 1 1"]);
    }

    #[test]
    fn truncation_is_flagged() {
        let s = enumerate_schedules(&workload(&[2, 2]), 3);
        assert!(s.truncated());
        let all: Vec<ScheduleSpec> = s.collect();
        assert!(all.iter().all(|s| s.len() == 3));
        assert_eq!(all.len(), 6);
        assert!(!enumerate_schedules(&workload(&[2, 2]), 4).truncated());
    }

    proptest! {
        #[test]
        fn count_is_multinomial_and_distinct(lengths in prop::collection::vec(1usize..4, 1..4)) {
            let w = workload(&lengths);
            let all: Vec<ScheduleSpec> = enumerate_schedules(&w, 14).collect();
            prop_assert_eq!(all.len() as u128, multinomial(&lengths));
            let distinct: BTreeSet<&ScheduleSpec> = all.iter().collect();
            prop_assert_eq!(distinct.len(), all.len());
            let mut sorted = all.clone();
            sorted.sort();
            prop_assert_eq!(sorted, all.clone());
            for s in &all {
                for (i, n) in lengths.iter().enumerate() {
                    let id = TxnId(i as u32 + 1);
                    prop_assert_eq!(s.slots().iter().filter(|t| **t == id).count(), *n);
                }
            }
        }
    }
}
