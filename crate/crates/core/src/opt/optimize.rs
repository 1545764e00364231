use serde::Serialize;
use thiserror::Error;

use super::{formulate, ConstraintSet, Formulation, FormulationError, CHECK_TOL};
use crate::layout::{Edge, EdgeKind, Element, Layout, TOUCH_TOL};
use crate::lp::{self, LinearProgram, LpError, Relation, Status};

/// Why a constraint set produced no layout.
#[derive(Clone, Debug, PartialEq, Error, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    #[error("formulation: {0}")]
    Formulation(#[serde(serialize_with = "as_string")] FormulationError),
    #[error("infeasible")]
    Infeasible,
    #[error("unbounded")]
    Unbounded,
    #[error("solver stalled after {iterations} pivots")]
    Stalled { iterations: usize },
    #[error("element {element} extends past W")]
    DegenerateWidth { element: usize },
    #[error("element {element} extends past H")]
    DegenerateHeight { element: usize },
    #[error("recheck failed: {what} off by {amount}")]
    ConstraintViolation { what: String, amount: f64 },
    #[error("element {element} overlaps boundary rectangle {boundary}")]
    BoundaryOverlap { element: usize, boundary: usize },
}

fn as_string<S: serde::Serializer>(e: &FormulationError, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&e.to_string())
}

impl Rejection {
    /// Stable short code for reports.
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::Formulation(FormulationError::CyclicAdjacency(_)) => "cyclic_adjacency",
            Rejection::Formulation(_) => "formulation",
            Rejection::Infeasible => "infeasible",
            Rejection::Unbounded => "unbounded",
            Rejection::Stalled { .. } => "solver_stalled",
            Rejection::DegenerateWidth { .. } => "degenerate_width",
            Rejection::DegenerateHeight { .. } => "degenerate_height",
            Rejection::ConstraintViolation { .. } => "constraint_violation",
            Rejection::BoundaryOverlap { .. } => "boundary_overlap",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimized {
    /// Generated elements first, then any boundary rectangles.
    pub layout: Layout,
    /// Optimal `W + H` of the perimeter program.
    pub perimeter: f64,
    /// Wall and door edges dropped because their elements do not touch.
    pub dropped_descriptive: usize,
    pub pivots: usize,
}

fn solve(lp: &LinearProgram) -> Result<(Vec<f64>, f64, usize), Rejection> {
    let sol = lp::solve(lp).map_err(|e| match e {
        LpError::Stalled { iterations } => Rejection::Stalled { iterations },
        LpError::Malformed(m) => Rejection::ConstraintViolation {
            what: format!("malformed program: {m}"),
            amount: f64::NAN,
        },
    })?;
    match sol.status {
        Status::Optimal => Ok((sol.values, sol.objective, sol.iterations)),
        Status::Infeasible => Err(Rejection::Infeasible),
        Status::Unbounded => Err(Rejection::Unbounded),
    }
}

/// Minimizes `W + H`, then among those optima minimizes the sum of all
/// element coordinates and sizes so that unconstrained elements settle
/// at their smallest admissible extent.
fn solve_lexicographic(
    f: &Formulation,
    lp: &LinearProgram,
) -> Result<(Vec<f64>, f64, usize), Rejection> {
    let (first, z, it1) = solve(lp)?;
    let mut second = lp.clone();
    second.add_row(
        vec![(f.width(), 1.0), (f.height(), 1.0)],
        Relation::Le,
        z + 1e-9 * z.abs().max(1.0),
    );
    second.objective = vec![1.0; lp.n_vars()];
    second.objective[f.width()] = 0.0;
    second.objective[f.height()] = 0.0;
    match solve(&second) {
        Ok((values, _, it2)) => Ok((values, z, it1 + it2)),
        Err(_) => Ok((first, z, it1)),
    }
}

fn element_at(v: &[f64], i: usize) -> (f64, f64, f64, f64) {
    (
        v[Formulation::x(i)],
        v[Formulation::y(i)],
        v[Formulation::w(i)],
        v[Formulation::h(i)],
    )
}

/// Rows keeping every generated element inside the bounding box of the
/// boundary rectangles.
fn containment_rows(f: &Formulation, boundary: &[Element], lp: &mut LinearProgram) {
    let Some(b0) = boundary.first() else { return };
    let init = (b0.x, b0.y, b0.right(), b0.top());
    let (x0, y0, x1, y1) = boundary.iter().fold(init, |(a, b, c, d), e| {
        (a.min(e.x), b.min(e.y), c.max(e.right()), d.max(e.top()))
    });
    for i in 0..f.n {
        let (x, y, w, h) = (
            Formulation::x(i),
            Formulation::y(i),
            Formulation::w(i),
            Formulation::h(i),
        );
        lp.add_row(vec![(x, 1.0)], Relation::Ge, x0);
        lp.add_row(vec![(y, 1.0)], Relation::Ge, y0);
        lp.add_row(vec![(x, 1.0), (w, 1.0)], Relation::Le, x1);
        lp.add_row(vec![(y, 1.0), (h, 1.0)], Relation::Le, y1);
    }
}

/// Row keeping element `i` on one side of `b`: 0 left, 1 right, 2 below, 3 above.
fn separation_row(i: usize, b: &Element, side: usize) -> (Vec<(usize, f64)>, Relation, f64) {
    let (x, y, w, h) = (
        Formulation::x(i),
        Formulation::y(i),
        Formulation::w(i),
        Formulation::h(i),
    );
    match side {
        0 => (vec![(x, 1.0), (w, 1.0)], Relation::Le, b.x),
        1 => (vec![(x, 1.0)], Relation::Ge, b.right()),
        2 => (vec![(y, 1.0), (h, 1.0)], Relation::Le, b.y),
        _ => (vec![(y, 1.0)], Relation::Ge, b.top()),
    }
}

/// Adds separation rows lazily: while some element overlaps a boundary
/// rectangle, the deepest overlap gets a row on the side needing the
/// smallest move that keeps the program feasible. Each pair is separated
/// at most once, so this ends after at most `n * boundary.len()` rounds.
fn separate_from_boundary(
    f: &Formulation,
    boundary: &[Element],
    lp: &mut LinearProgram,
) -> Result<(Vec<f64>, f64, usize), Rejection> {
    let mut pivots = 0;
    loop {
        let (values, z, it) = solve_lexicographic(f, lp)?;
        pivots += it;
        let mut deepest: Option<(f64, usize, usize, [f64; 4])> = None;
        for i in 0..f.n {
            let (x, y, w, h) = element_at(&values, i);
            for (k, b) in boundary.iter().enumerate() {
                let moves = [x + w - b.x, b.right() - x, y + h - b.y, b.top() - y];
                let depth = moves.iter().cloned().fold(f64::INFINITY, f64::min);
                if depth > CHECK_TOL && deepest.map_or(true, |d| depth > d.0) {
                    deepest = Some((depth, i, k, moves));
                }
            }
        }
        let Some((_, i, k, moves)) = deepest else {
            return Ok((values, z, pivots));
        };
        let mut sides = [0, 1, 2, 3];
        sides.sort_by(|&a, &b| moves[a].total_cmp(&moves[b]));
        let mut placed = false;
        for side in sides {
            let (coeffs, rel, rhs) = separation_row(i, &boundary[k], side);
            let mut trial = lp.clone();
            trial.add_row(coeffs, rel, rhs);
            match solve(&trial) {
                Ok((_, _, it)) => {
                    pivots += it;
                    *lp = trial;
                    placed = true;
                    break;
                }
                Err(Rejection::Infeasible) => continue,
                Err(e) => return Err(e),
            }
        }
        if !placed {
            return Err(Rejection::Infeasible);
        }
    }
}

/// Solves the perimeter program of `cs` and rechecks the result directly
/// against the constraint set.
pub fn optimize(cs: &ConstraintSet) -> Result<Optimized, Rejection> {
    let f = formulate(cs).map_err(Rejection::Formulation)?;
    let mut lp = f.lp.clone();
    let (values, perimeter, pivots) = if cs.boundary.is_empty() {
        solve_lexicographic(&f, &lp)?
    } else {
        containment_rows(&f, &cs.boundary, &mut lp);
        separate_from_boundary(&f, &cs.boundary, &mut lp)?
    };

    let worst = lp.max_violation(&values);
    if worst > CHECK_TOL {
        return Err(Rejection::ConstraintViolation {
            what: "program row".into(),
            amount: worst,
        });
    }
    recheck(cs, &f, &values)?;

    let mut layout = Layout::new(cs.mode, cs.types.clone());
    for (i, t) in cs.targets.iter().enumerate() {
        let (x, y, w, h) = element_at(&values, i);
        layout.elements.push(Element {
            elem_type: t.elem_type,
            x,
            y,
            w,
            h,
            alpha: t.alpha,
        });
    }
    for (b_idx, b) in cs.boundary.iter().enumerate() {
        for (i, e) in layout.elements.iter().enumerate() {
            if e.overlaps(b) {
                return Err(Rejection::BoundaryOverlap {
                    element: i,
                    boundary: b_idx,
                });
            }
        }
    }
    layout.elements.extend(cs.boundary.iter().copied());
    layout.edges.extend(
        cs.horizontal
            .iter()
            .map(|&(a, b)| Edge::new(a, b, EdgeKind::HorizontalAdjacency)),
    );
    layout.edges.extend(
        cs.vertical
            .iter()
            .map(|&(a, b)| Edge::new(a, b, EdgeKind::VerticalAdjacency)),
    );
    let mut dropped_descriptive = 0;
    for e in &cs.descriptive {
        let (a, b) = (&layout.elements[e.src], &layout.elements[e.dst]);
        if a.shared_boundary(b) > TOUCH_TOL {
            layout.edges.push(*e);
        } else {
            dropped_descriptive += 1;
        }
    }
    Ok(Optimized {
        layout,
        perimeter,
        dropped_descriptive,
        pivots,
    })
}

/// Independent recheck of adjacency, ranges, bounds and the W/H chains.
fn recheck(cs: &ConstraintSet, f: &Formulation, v: &[f64]) -> Result<(), Rejection> {
    let fail = |what: String, amount: f64| Err(Rejection::ConstraintViolation { what, amount });
    let el = |i| element_at(v, i);
    for &(a, b) in &cs.horizontal {
        let ((xa, _, wa, _), (xb, ..)) = (el(a), el(b));
        let gap = (xa + wa - xb).abs();
        if gap > CHECK_TOL {
            return fail(format!("horizontal adjacency ({a}, {b})"), gap);
        }
    }
    for &(a, b) in &cs.vertical {
        let ((_, ya, _, ha), (_, yb, ..)) = (el(a), el(b));
        let gap = (ya + ha - yb).abs();
        if gap > CHECK_TOL {
            return fail(format!("vertical adjacency ({a}, {b})"), gap);
        }
    }
    let eps = cs.epsilon;
    let (lo, hi) = cs.bounds;
    for (i, t) in cs.targets.iter().enumerate() {
        let (x, y, w, h) = el(i);
        for (name, got, want) in [
            ("x", x, t.x),
            ("y", y, t.y),
            ("w", w, Some(t.w)),
            ("h", h, Some(t.h)),
        ] {
            if let Some(want) = want {
                let off = (want * (1.0 - eps) - got).max(got - want * (1.0 + eps));
                if off > CHECK_TOL {
                    return fail(format!("{name} range of element {i}"), off);
                }
            }
            let out = (lo - got).max(got - hi);
            if out > CHECK_TOL {
                return fail(format!("{name} bound of element {i}"), out);
            }
        }
    }
    let (w_tot, h_tot) = (v[f.width()], v[f.height()]);
    for i in 0..f.n {
        let (x, y, w, h) = el(i);
        if x + w > w_tot + CHECK_TOL {
            return Err(Rejection::DegenerateWidth { element: i });
        }
        if y + h > h_tot + CHECK_TOL {
            return Err(Rejection::DegenerateHeight { element: i });
        }
    }
    Ok(())
}
