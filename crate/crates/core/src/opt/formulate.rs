use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{ConstraintSet, FormulationError};
use crate::layout::EdgeKind;
use crate::lp::{LinearProgram, Relation};

/// The perimeter program of one constraint set. Variables are
/// `(x_i, y_i, w_i, h_i)` per element, then `W`, then `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Formulation {
    pub lp: LinearProgram,
    pub n: usize,
    /// Element whose right side defines `W`.
    pub last_h: usize,
    /// Element whose top defines `H`.
    pub last_v: usize,
}

impl Formulation {
    pub fn x(i: usize) -> usize {
        4 * i
    }

    pub fn y(i: usize) -> usize {
        4 * i + 1
    }

    pub fn w(i: usize) -> usize {
        4 * i + 2
    }

    pub fn h(i: usize) -> usize {
        4 * i + 3
    }

    pub fn width(&self) -> usize {
        4 * self.n
    }

    pub fn height(&self) -> usize {
        4 * self.n + 1
    }
}

/// Kahn order of `0..n` under `edges`, always taking the smallest ready
/// index. `None` if the edges contain a cycle.
pub fn topological_order(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut succ = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for &(a, b) in edges {
        succ[a].push(b);
        indeg[b] += 1;
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &j in &succ[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    (order.len() == n).then_some(order)
}

pub fn formulate(cs: &ConstraintSet) -> Result<Formulation, FormulationError> {
    let n = cs.len();
    if n == 0 {
        return Err(FormulationError::Empty);
    }
    if !(cs.epsilon > 0.0 && cs.epsilon < 1.0) {
        return Err(FormulationError::Epsilon(cs.epsilon));
    }
    let mut last = [0; 2];
    for (slot, kind) in [EdgeKind::HorizontalAdjacency, EdgeKind::VerticalAdjacency]
        .into_iter()
        .enumerate()
    {
        let edges = cs.adjacency(kind);
        if let Some(&(src, dst)) = edges.iter().find(|&&(a, b)| a == b || a >= n || b >= n) {
            return Err(FormulationError::InvalidEdge { src, dst, kind });
        }
        let order = topological_order(n, edges).ok_or(FormulationError::CyclicAdjacency(kind))?;
        last[slot] = order[n - 1];
    }

    let (lo, hi) = cs.bounds;
    let mut lp = LinearProgram::new(4 * n + 2, lo, hi);
    let range = |lp: &mut LinearProgram, var: usize, v: f64| {
        lp.add_row(vec![(var, 1.0)], Relation::Ge, v * (1.0 - cs.epsilon));
        lp.add_row(vec![(var, 1.0)], Relation::Le, v * (1.0 + cs.epsilon));
    };
    for (i, t) in cs.targets.iter().enumerate() {
        let vals = [t.x, t.y, Some(t.w), Some(t.h)];
        if vals.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) || t.w <= 0.0 || t.h <= 0.0 {
            return Err(FormulationError::Target(i));
        }
        for (k, v) in vals.into_iter().enumerate() {
            if let Some(v) = v {
                range(&mut lp, 4 * i + k, v);
            }
        }
    }
    for &(a, b) in &cs.horizontal {
        lp.add_row(
            vec![
                (Formulation::x(a), 1.0),
                (Formulation::w(a), 1.0),
                (Formulation::x(b), -1.0),
            ],
            Relation::Eq,
            0.0,
        );
    }
    for &(a, b) in &cs.vertical {
        lp.add_row(
            vec![
                (Formulation::y(a), 1.0),
                (Formulation::h(a), 1.0),
                (Formulation::y(b), -1.0),
            ],
            Relation::Eq,
            0.0,
        );
    }
    let [last_h, last_v] = last;
    let (wv, hv) = (4 * n, 4 * n + 1);
    lp.add_row(
        vec![
            (wv, 1.0),
            (Formulation::x(last_h), -1.0),
            (Formulation::w(last_h), -1.0),
        ],
        Relation::Eq,
        0.0,
    );
    lp.add_row(
        vec![
            (hv, 1.0),
            (Formulation::y(last_v), -1.0),
            (Formulation::h(last_v), -1.0),
        ],
        Relation::Eq,
        0.0,
    );
    lp.objective[wv] = 1.0;
    lp.objective[hv] = 1.0;
    Ok(Formulation {
        lp,
        n,
        last_h,
        last_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{LayoutMode, TypeSchema};
    use crate::opt::ElementTarget;

    fn set(sizes: &[(f64, f64)]) -> ConstraintSet {
        ConstraintSet::new(
            LayoutMode::FloorPlan,
            TypeSchema::floorplan(),
            sizes
                .iter()
                .map(|&(w, h)| ElementTarget::sized(1, w, h))
                .collect(),
        )
    }

    #[test]
    fn kahn_prefers_small_indices() {
        assert_eq!(
            topological_order(4, &[(2, 0), (3, 1)]),
            Some(vec![2, 0, 3, 1])
        );
        assert_eq!(topological_order(3, &[]), Some(vec![0, 1, 2]));
        assert_eq!(topological_order(2, &[(0, 1), (1, 0)]), None);
    }

    #[test]
    fn layout_of_variables_and_rows() {
        let mut cs = set(&[(2.0, 2.0), (2.0, 2.0)]);
        cs.horizontal.push((0, 1));
        let f = formulate(&cs).unwrap();
        assert_eq!(f.lp.n_vars(), 10);
        // 4 range rows per element, 1 adjacency, W and H.
        assert_eq!(f.lp.rows.len(), 11);
        assert_eq!((f.last_h, f.last_v), (1, 1));
        assert_eq!(f.lp.objective[8..], [1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_sets() {
        assert_eq!(formulate(&set(&[])), Err(FormulationError::Empty));
        let mut cs = set(&[(2.0, 2.0), (2.0, 2.0)]);
        cs.horizontal = vec![(0, 1), (1, 0)];
        assert_eq!(
            formulate(&cs),
            Err(FormulationError::CyclicAdjacency(
                EdgeKind::HorizontalAdjacency
            ))
        );
        cs.horizontal = vec![(0, 2)];
        assert!(matches!(
            formulate(&cs),
            Err(FormulationError::InvalidEdge { .. })
        ));
        cs.horizontal.clear();
        cs.epsilon = 1.0;
        assert_eq!(formulate(&cs), Err(FormulationError::Epsilon(1.0)));
    }
}
