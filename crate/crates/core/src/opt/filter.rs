use std::collections::HashSet;

use serde::Serialize;

use super::ConstraintSet;
use crate::layout::EdgeKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    SelfEdge,
    OutOfRange,
    Duplicate,
    Cycle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Removed {
    pub kind: EdgeKind,
    pub src: usize,
    pub dst: usize,
    pub reason: RemovalReason,
}

/// Drops edges the optimizer cannot use. Adjacency cycles are broken by
/// removing, while any cycle remains, the latest generated edge that lies
/// on one.
pub fn filter_constraints(cs: &ConstraintSet) -> (ConstraintSet, Vec<Removed>) {
    let n = cs.len();
    let mut out = cs.clone();
    let mut removed = Vec::new();
    for kind in [EdgeKind::HorizontalAdjacency, EdgeKind::VerticalAdjacency] {
        let kept = clean(cs.adjacency(kind).iter().copied(), n, kind, &mut removed);
        let kept = break_cycles(kept, n, kind, &mut removed);
        *out.adjacency_mut(kind) = kept;
    }
    let mut seen = HashSet::new();
    out.descriptive.retain(|e| {
        let reason = if e.src == e.dst {
            Some(RemovalReason::SelfEdge)
        } else if e.src >= n || e.dst >= n {
            Some(RemovalReason::OutOfRange)
        } else if !seen.insert((e.src, e.dst, e.kind)) {
            Some(RemovalReason::Duplicate)
        } else {
            None
        };
        if let Some(reason) = reason {
            removed.push(Removed {
                kind: e.kind,
                src: e.src,
                dst: e.dst,
                reason,
            });
        }
        reason.is_none()
    });
    (out, removed)
}

fn clean(
    edges: impl Iterator<Item = (usize, usize)>,
    n: usize,
    kind: EdgeKind,
    removed: &mut Vec<Removed>,
) -> Vec<(usize, usize)> {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for (src, dst) in edges {
        let reason = if src == dst {
            Some(RemovalReason::SelfEdge)
        } else if src >= n || dst >= n {
            Some(RemovalReason::OutOfRange)
        } else if !seen.insert((src, dst)) {
            Some(RemovalReason::Duplicate)
        } else {
            None
        };
        match reason {
            Some(reason) => removed.push(Removed {
                kind,
                src,
                dst,
                reason,
            }),
            None => kept.push((src, dst)),
        }
    }
    kept
}

fn reaches(n: usize, edges: &[(usize, usize)], from: usize, to: usize) -> bool {
    let mut succ = vec![Vec::new(); n];
    for &(a, b) in edges {
        succ[a].push(b);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        if !std::mem::replace(&mut seen[v], true) {
            stack.extend(&succ[v]);
        }
    }
    false
}

fn break_cycles(
    mut edges: Vec<(usize, usize)>,
    n: usize,
    kind: EdgeKind,
    removed: &mut Vec<Removed>,
) -> Vec<(usize, usize)> {
    while super::topological_order(n, &edges).is_none() {
        let on_cycle = (0..edges.len())
            .rev()
            .find(|&k| reaches(n, &edges, edges[k].1, edges[k].0))
            .expect("a cyclic graph has an edge on a cycle");
        let (src, dst) = edges.remove(on_cycle);
        removed.push(Removed {
            kind,
            src,
            dst,
            reason: RemovalReason::Cycle,
        });
    }
    edges
}
