use std::collections::BTreeMap;

use thiserror::Error;

use crate::history::{Action, ActionKind, Flavor, History, HistoryError, TxnId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("history carries no version markers")]
    NotMultiVersion,
    #[error("action {index} reads a version outside its transaction's snapshot")]
    SnapshotViolation { index: usize },
    #[error(transparent)]
    Invalid(#[from] HistoryError),
}

/// Rewrites a snapshot-consistent multiversion history as a single-version
/// one with the same dataflow.
///
/// A transaction's snapshot reads move to its first action, as one block in
/// start order. Its writes, then its reads of its own versions, move to just
/// before its commit. Writes and own-version reads of transactions that did
/// not commit are dropped.
pub fn mv_to_sv(mv: &History) -> Result<History, MappingError> {
    let acts = mv.actions();
    if mv.flavor() == Flavor::SingleVersion && acts.iter().any(|a| a.item_key().is_some()) {
        return Err(MappingError::NotMultiVersion);
    }
    let mut first: BTreeMap<TxnId, usize> = BTreeMap::new();
    let mut end: BTreeMap<TxnId, (usize, ActionKind)> = BTreeMap::new();
    for (i, a) in acts.iter().enumerate() {
        first.entry(a.txn).or_insert(i);
        if a.is_terminal() {
            end.insert(a.txn, (i, a.kind));
        }
    }
    let committed_at = |t: TxnId| match end.get(&t) {
        Some((i, ActionKind::Commit)) => Some(*i),
        _ => None,
    };

    check_snapshot_reads(mv, &first, &committed_at)?;

    // (anchor position, phase, original index)
    let mut placed: Vec<((usize, u8, usize), Action)> = Vec::new();
    for (i, a) in acts.iter().enumerate() {
        let own_version = a.is_read() && a.version == Some(a.txn);
        let slot = if a.is_terminal() {
            Some((i, 2))
        } else if a.is_write() || own_version {
            committed_at(a.txn).map(|c| (c, if a.is_write() { 0 } else { 1 }))
        } else {
            Some((first[&a.txn], 0))
        };
        if let Some((anchor, phase)) = slot {
            let mut a = a.clone();
            a.version = None;
            placed.push(((anchor, phase, i), a));
        }
    }
    placed.sort_by_key(|(k, _)| *k);
    let actions = placed.into_iter().map(|(_, a)| a).collect();
    Ok(History::with_header(mv.header().clone(), actions)?)
}

/// Every read sees its own write, or the latest version committed before
/// its transaction's first action.
fn check_snapshot_reads(
    mv: &History,
    first: &BTreeMap<TxnId, usize>,
    committed_at: &dyn Fn(TxnId) -> Option<usize>,
) -> Result<(), MappingError> {
    let acts = mv.actions();
    for (i, a) in acts.iter().enumerate() {
        let (Some(key), Some(ver)) = (a.item_key(), a.version) else {
            continue;
        };
        if !a.is_read() {
            continue;
        }
        let ok = if ver == a.txn {
            acts[..i].iter().any(|w| w.txn == a.txn && w.is_write() && w.item_key() == Some(key))
        } else {
            let start = first[&a.txn];
            let latest = acts
                .iter()
                .filter(|w| w.is_write() && w.item_key() == Some(key) && w.txn != a.txn)
                .filter_map(|w| committed_at(w.txn).filter(|c| *c < start).map(|c| (c, w.txn)))
                .max()
                .map_or(TxnId::INITIAL, |(_, t)| t);
            ver == latest
        };
        if !ok {
            return Err(MappingError::SnapshotViolation { index: i });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{is_serializable, parse_history};
    use crate::phenomena::{detect, PhenomenonId};
    use crate::run::body;

    fn sv(text: &str) -> String {
        body(&mv_to_sv(&parse_history(text).unwrap()).unwrap())
    }

    #[test]
    fn h1_si_maps_to_serial_dataflow() {
        let out = sv("r1[x@0=50] w1[x@1=10] r2[x@0=50] r2[y@0=50] c2 r1[y@0=50] w1[y@1=90] c1");
        assert_eq!(out, "r1[x=50] r1[y=50] r2[x=50] r2[y=50] c2 w1[x=10] w1[y=90] c1");
    }

    #[test]
    fn single_transaction_reads_first() {
        assert_eq!(sv("r1[x@0] w1[y@1=2] r1[z@0] c1"), "r1[x] r1[z] w1[y=2] c1");
    }

    #[test]
    fn own_reads_follow_writes() {
        assert_eq!(sv("w1[x@1=2] r1[x@1=2] r1[y@0] c1"), "r1[y] w1[x=2] r1[x=2] c1");
    }

    #[test]
    fn aborted_writes_dropped_reads_kept() {
        assert_eq!(
            sv("r1[x@0=1] r2[x@0=1] w2[x@2=2] c2 w1[x@1=3] r1[x@1=3] a1"),
            "r1[x=1] r2[x=1] w2[x=2] c2 a1"
        );
    }

    #[test]
    fn write_skew_maps_to_a5b() {
        let h = mv_to_sv(
            &parse_history("r1[x@0=50] r1[y@0=50] r2[x@0=50] r2[y@0=50] w1[y@1=-40] w2[x@2=-40] c1 c2").unwrap(),
        )
        .unwrap();
        assert_eq!(
            body(&h),
            "r1[x=50] r1[y=50] r2[x=50] r2[y=50] w1[y=-40] c1 w2[x=-40] c2"
        );
        assert!(!detect(&h, PhenomenonId::A5B).is_empty());
        assert!(!is_serializable(&h).unwrap().is_serializable());
    }

    #[test]
    fn stale_snapshot_read_rejected() {
        let h = parse_history("w1[x@1=1] c1 r2[x@0] c2").unwrap();
        assert_eq!(mv_to_sv(&h), Err(MappingError::SnapshotViolation { index: 2 }));
        let h = parse_history("r2[x@1] w1[x@1=1] c1 c2").unwrap();
        assert!(mv_to_sv(&h).is_err());
    }

    #[test]
    fn single_version_input_rejected() {
        let h = parse_history("r1[x] c1").unwrap();
        assert_eq!(mv_to_sv(&h), Err(MappingError::NotMultiVersion));
    }
}
