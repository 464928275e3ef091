use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use super::{Action, Flavor, History, ItemKey, PredicateDecl, TxnId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("dependency graphs are defined on single-version histories; map the history first")]
    MultiVersion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DependencyKind {
    Ww,
    Wr,
    Rw,
}

impl fmt::Display for DependencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DependencyKind::Ww => "ww",
            DependencyKind::Wr => "wr",
            DependencyKind::Rw => "rw",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeScope {
    Item(ItemKey),
    Predicate(String),
}

impl fmt::Display for EdgeScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeScope::Item(k) => write!(f, "{k}"),
            EdgeScope::Predicate(p) => write!(f, "P:{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: TxnId,
    pub to: TxnId,
    pub kind: DependencyKind,
    pub scope: EdgeScope,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependencyGraph {
    nodes: BTreeSet<TxnId>,
    edges: BTreeSet<Edge>,
}

impl DependencyGraph {
    pub fn nodes(&self) -> &BTreeSet<TxnId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    fn successors(&self) -> BTreeMap<TxnId, BTreeSet<TxnId>> {
        let mut succ: BTreeMap<TxnId, BTreeSet<TxnId>> =
            self.nodes.iter().map(|n| (*n, BTreeSet::new())).collect();
        for e in &self.edges {
            succ.entry(e.from).or_default().insert(e.to);
        }
        succ
    }

    /// One cycle, listed from its first node, if the graph has any.
    pub fn find_cycle(&self) -> Option<Vec<TxnId>> {
        find_cycle(&self.successors())
    }

    /// Graphviz rendering.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph dependencies {\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  \"T{n}\";");
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  \"T{}\" -> \"T{}\" [label=\"{} {}\"];",
                e.from, e.to, e.kind, e.scope
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Cycle search over an adjacency map; nodes visited in ascending order so
/// the reported cycle is deterministic.
pub(crate) fn find_cycle(succ: &BTreeMap<TxnId, BTreeSet<TxnId>>) -> Option<Vec<TxnId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        OnStack,
        Done,
    }
    let mut marks: BTreeMap<TxnId, Mark> = BTreeMap::new();
    for (n, targets) in succ {
        marks.insert(*n, Mark::Fresh);
        for t in targets {
            marks.entry(*t).or_insert(Mark::Fresh);
        }
    }
    let empty = BTreeSet::new();
    let roots: Vec<TxnId> = marks.keys().copied().collect();
    for root in roots {
        if marks[&root] != Mark::Fresh {
            continue;
        }
        let mut path = vec![root];
        let mut iters = vec![succ.get(&root).unwrap_or(&empty).iter()];
        marks.insert(root, Mark::OnStack);
        while let Some(it) = iters.last_mut() {
            match it.next() {
                Some(&next) => match marks[&next] {
                    Mark::OnStack => {
                        let start = path.iter().position(|n| *n == next).expect("on stack");
                        return Some(path[start..].to_vec());
                    }
                    Mark::Fresh => {
                        marks.insert(next, Mark::OnStack);
                        path.push(next);
                        iters.push(succ.get(&next).unwrap_or(&empty).iter());
                    }
                    Mark::Done => {}
                },
                None => {
                    let done = path.pop().expect("path tracks iterators");
                    marks.insert(done, Mark::Done);
                    iters.pop();
                }
            }
        }
    }
    None
}

fn covered<'a>(preds: &'a [PredicateDecl], name: &str) -> Option<&'a BTreeSet<ItemKey>> {
    preds.iter().find(|p| p.name == name).map(|p| &p.covered)
}

fn targets_overlap(a: &Action, b: &Action, preds: &[PredicateDecl]) -> bool {
    match (a.item_key(), a.predicate(), b.item_key(), b.predicate()) {
        (Some(x), _, Some(y), _) => x == y,
        (Some(k), _, _, Some(p)) | (_, Some(p), Some(k), _) => {
            covered(preds, p).is_some_and(|c| c.contains(k))
        }
        (_, Some(p), _, Some(q)) => match (covered(preds, p), covered(preds, q)) {
            (Some(c), Some(d)) => !c.is_disjoint(d),
            _ => false,
        },
        _ => false,
    }
}

/// Two data actions conflict when they belong to different transactions, at
/// least one writes, and their targets overlap (same item, or an item covered
/// by a predicate the other reads).
pub fn action_conflicts(a: &Action, b: &Action, preds: &[PredicateDecl]) -> bool {
    a.txn != b.txn
        && !a.is_terminal()
        && !b.is_terminal()
        && (a.is_write() || b.is_write())
        && targets_overlap(a, b, preds)
}

fn edge_for(first: &Action, second: &Action) -> Edge {
    let kind = match (first.is_write(), second.is_write()) {
        (true, true) => DependencyKind::Ww,
        (true, false) => DependencyKind::Wr,
        _ => DependencyKind::Rw,
    };
    let scope = match first.predicate().or(second.predicate()) {
        Some(p) => EdgeScope::Predicate(p.to_string()),
        None => EdgeScope::Item(first.item_key().expect("item action").clone()),
    };
    Edge {
        from: first.txn,
        to: second.txn,
        kind,
        scope,
    }
}

pub fn dependency_graph(h: &History) -> Result<DependencyGraph, GraphError> {
    if h.flavor() == Flavor::MultiVersion {
        return Err(GraphError::MultiVersion);
    }
    let nodes = h.committed();
    let acts: Vec<&Action> = h
        .actions()
        .iter()
        .filter(|a| !a.is_terminal() && nodes.contains(&a.txn))
        .collect();
    let mut edges = BTreeSet::new();
    for (i, a) in acts.iter().enumerate() {
        for b in &acts[i + 1..] {
            if action_conflicts(a, b, h.predicates()) {
                edges.insert(edge_for(a, b));
            }
        }
    }
    Ok(DependencyGraph { nodes, edges })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Serializability {
    Serializable,
    NotSerializable { cycle: Vec<TxnId> },
}

impl Serializability {
    pub fn is_serializable(&self) -> bool {
        matches!(self, Serializability::Serializable)
    }

    pub fn cycle(&self) -> Option<&[TxnId]> {
        match self {
            Serializability::Serializable => None,
            Serializability::NotSerializable { cycle } => Some(cycle),
        }
    }
}

pub fn is_serializable(h: &History) -> Result<Serializability, GraphError> {
    Ok(match dependency_graph(h)?.find_cycle() {
        None => Serializability::Serializable,
        Some(cycle) => Serializability::NotSerializable { cycle },
    })
}

/// Same committed transactions and the same labeled dependency graph.
pub fn histories_equivalent(a: &History, b: &History) -> Result<bool, GraphError> {
    Ok(dependency_graph(a)? == dependency_graph(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::parse_history;

    fn h(text: &str) -> History {
        parse_history(text).unwrap()
    }

    fn edge(from: u32, to: u32, kind: DependencyKind, scope: EdgeScope) -> Edge {
        Edge {
            from: TxnId(from),
            to: TxnId(to),
            kind,
            scope,
        }
    }

    fn item(k: &str) -> EdgeScope {
        EdgeScope::Item(ItemKey::new(k))
    }

    const H1: &str = "r1[x=50] w1[x=10] r2[x=10] r2[y=50] c2 r1[y=50] w1[y=90] c1";

    #[test]
    fn conflict_examples() {
        let preds = [PredicateDecl::new("P", ["y", "z"])];
        let t = |n| TxnId(n);
        assert!(action_conflicts(&Action::write(t(1), "x"), &Action::read(t(2), "x"), &preds));
        assert!(!action_conflicts(&Action::read(t(1), "x"), &Action::read(t(2), "x"), &preds));
        assert!(action_conflicts(
            &Action::predicate_read(t(1), "P"),
            &Action::write(t(2), "y"),
            &preds
        ));
        assert!(!action_conflicts(&Action::write(t(1), "x"), &Action::write(t(2), "y"), &preds));
        assert!(!action_conflicts(&Action::write(t(1), "x"), &Action::write(t(1), "x"), &preds));
    }

    #[test]
    fn h1_graph_is_a_two_cycle() {
        let g = dependency_graph(&h(H1)).unwrap();
        let expected: BTreeSet<Edge> = [
            edge(1, 2, DependencyKind::Wr, item("x")),
            edge(2, 1, DependencyKind::Rw, item("y")),
        ]
        .into();
        assert_eq!(g.edges(), &expected);
        assert!(!is_serializable(&h(H1)).unwrap().is_serializable());
    }

    #[test]
    fn serial_history_single_edge() {
        let g = dependency_graph(&h("r1[x] w1[x] c1 r2[x] c2")).unwrap();
        let expected: BTreeSet<Edge> = [edge(1, 2, DependencyKind::Wr, item("x"))].into();
        assert_eq!(g.edges(), &expected);
        assert!(g.find_cycle().is_none());
    }

    #[test]
    fn h3_cycle_through_predicate() {
        let g = dependency_graph(&h(
            "pred P = {y}\nr1[P:P] w2[y in P:P] r2[z] w2[z] c2 r1[z] c1",
        ))
        .unwrap();
        let expected: BTreeSet<Edge> = [
            edge(1, 2, DependencyKind::Rw, EdgeScope::Predicate("P".into())),
            edge(2, 1, DependencyKind::Wr, item("z")),
        ]
        .into();
        assert_eq!(g.edges(), &expected);
        assert_eq!(g.find_cycle(), Some(vec![TxnId(1), TxnId(2)]));
    }

    #[test]
    fn nodes_are_committed_only() {
        let g = dependency_graph(&h("w1[x] r2[x] a1 c2")).unwrap();
        assert_eq!(g.nodes(), &[TxnId(2)].into());
        assert!(g.edges().is_empty());
    }

    #[test]
    fn serializability_examples() {
        assert!(!is_serializable(&h("r1[x=50] r1[y=50] r2[x=50] r2[y=50] w1[y=-40] w2[x=-40] c1 c2"))
            .unwrap()
            .is_serializable());
        assert!(is_serializable(&h("r1[x=50] r1[y=50] r2[x=50] r2[y=50] c2 w1[x=10] w1[y=90] c1"))
            .unwrap()
            .is_serializable());
        assert!(is_serializable(&h("r1[x] w1[x] w1[y] r1[y] c1")).unwrap().is_serializable());
    }

    #[test]
    fn mv_input_rejected() {
        assert_eq!(
            dependency_graph(&h("r1[x@0=1] c1")).unwrap_err(),
            GraphError::MultiVersion
        );
    }

    #[test]
    fn equivalence_examples() {
        let sv = h("r1[x=50] r1[y=50] r2[x=50] r2[y=50] c2 w1[x=10] w1[y=90] c1");
        let serial_21 = h("r2[x=50] r2[y=50] c2 r1[x=50] r1[y=50] w1[x=10] w1[y=90] c1");
        let serial_12 = h("r1[x=50] w1[x=10] r1[y=50] w1[y=90] c1 r2[x=10] r2[y=90] c2");
        assert!(histories_equivalent(&sv, &sv).unwrap());
        assert!(histories_equivalent(&sv, &serial_21).unwrap());
        assert!(!histories_equivalent(&h(H1), &serial_12).unwrap());
    }

    #[test]
    fn three_cycle_found() {
        let succ: BTreeMap<TxnId, BTreeSet<TxnId>> = [
            (TxnId(1), [TxnId(2)].into()),
            (TxnId(2), [TxnId(3)].into()),
            (TxnId(3), [TxnId(1)].into()),
        ]
        .into();
        assert_eq!(find_cycle(&succ), Some(vec![TxnId(1), TxnId(2), TxnId(3)]));
    }

    #[test]
    fn dot_lists_edges() {
        let dot = dependency_graph(&h("r1[x] w1[x] c1 r2[x] c2")).unwrap().to_dot();
        assert!(dot.contains("\"T1\" -> \"T2\" [label=\"wr x\"];"));
    }
}
