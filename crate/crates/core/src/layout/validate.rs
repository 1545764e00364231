use serde::Serialize;

use super::{EdgeKind, Layout, LayoutMode, TOUCH_TOL, WORLD_MAX, WORLD_MIN};

/// Structural problem found in a layout. Violations are data, not errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Violation {
    /// Non-positive width or height.
    DegenerateElement(usize),
    /// Element extends outside the world box.
    OutOfBounds(usize),
    /// `alpha` present in a floor plan or missing in a furniture layout.
    OrientationMismatch(usize),
    /// Edge endpoint is not a valid element index, or the edge is a self-edge.
    InvalidEdgeIndex {
        src: usize,
        dst: usize,
        kind: EdgeKind,
    },
    /// Adjacency edge whose geometry fails the touch test.
    InvalidAdjacencyEdge {
        src: usize,
        dst: usize,
        kind: EdgeKind,
    },
    /// Wall or door edge between elements that share no boundary segment.
    InvalidDescriptiveEdge {
        src: usize,
        dst: usize,
        kind: EdgeKind,
    },
    /// Constraining edge in a furniture layout.
    ConstrainingEdgeInFurniture { src: usize, dst: usize },
    /// Element interiors intersect.
    Overlap(usize, usize),
    /// Grid cells inside the bounding region that no element covers.
    Holes { cells: usize },
}

pub fn validate_layout(layout: &Layout) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = layout.len();
    for (i, e) in layout.elements.iter().enumerate() {
        if !(e.w > 0.0 && e.h > 0.0) {
            out.push(Violation::DegenerateElement(i));
        }
        let lo = WORLD_MIN - TOUCH_TOL;
        let hi = WORLD_MAX + TOUCH_TOL;
        if e.x < lo || e.y < lo || e.right() > hi || e.top() > hi {
            out.push(Violation::OutOfBounds(i));
        }
        if e.alpha.is_some() != (layout.mode == LayoutMode::Furniture) {
            out.push(Violation::OrientationMismatch(i));
        }
    }

    for edge in &layout.edges {
        let (src, dst, kind) = (edge.src, edge.dst, edge.kind);
        if src >= n || dst >= n || src == dst {
            out.push(Violation::InvalidEdgeIndex { src, dst, kind });
            continue;
        }
        if layout.mode == LayoutMode::Furniture && kind.is_adjacency() {
            out.push(Violation::ConstrainingEdgeInFurniture { src, dst });
            continue;
        }
        let (a, b) = (&layout.elements[src], &layout.elements[dst]);
        let ok = match kind {
            EdgeKind::HorizontalAdjacency => {
                (a.right() - b.x).abs() <= TOUCH_TOL && a.overlap_y(b) > TOUCH_TOL
            }
            EdgeKind::VerticalAdjacency => {
                (a.top() - b.y).abs() <= TOUCH_TOL && a.overlap_x(b) > TOUCH_TOL
            }
            EdgeKind::Wall | EdgeKind::Door => a.shared_boundary(b) > TOUCH_TOL,
        };
        if !ok {
            out.push(if kind.is_adjacency() {
                Violation::InvalidAdjacencyEdge { src, dst, kind }
            } else {
                Violation::InvalidDescriptiveEdge { src, dst, kind }
            });
        }
    }

    for i in 0..n {
        for j in i + 1..n {
            if layout.elements[i].overlaps(&layout.elements[j]) {
                out.push(Violation::Overlap(i, j));
            }
        }
    }

    if layout.mode == LayoutMode::FloorPlan {
        let cells = hole_cells(layout);
        if cells > 0 {
            out.push(Violation::Holes { cells });
        }
    }
    out
}

/// Counts unit cells of the 64x64 grid inside the bounding box of the
/// elements whose centers no element covers.
fn hole_cells(layout: &Layout) -> usize {
    let Some((x0, y0, x1, y1)) = layout.bounds() else {
        return 0;
    };
    let size = (WORLD_MAX - WORLD_MIN) as usize;
    let mut covered = vec![false; size * size];
    for e in &layout.elements {
        let cx0 = (e.x - 0.5).ceil().max(0.0) as usize;
        let cy0 = (e.y - 0.5).ceil().max(0.0) as usize;
        let cx1 = ((e.right() - 0.5).floor() + 1.0).clamp(0.0, size as f64) as usize;
        let cy1 = ((e.top() - 0.5).floor() + 1.0).clamp(0.0, size as f64) as usize;
        for cy in cy0..cy1 {
            for cx in cx0..cx1 {
                covered[cy * size + cx] = true;
            }
        }
    }
    let mut holes = 0;
    for cy in 0..size {
        let yc = cy as f64 + 0.5;
        if yc < y0 || yc > y1 {
            continue;
        }
        for cx in 0..size {
            let xc = cx as f64 + 0.5;
            if xc < x0 || xc > x1 {
                continue;
            }
            if !covered[cy * size + cx] {
                holes += 1;
            }
        }
    }
    holes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Edge, Element, TypeSchema};

    fn fp(elements: Vec<Element>, edges: Vec<Edge>) -> Layout {
        Layout {
            mode: LayoutMode::FloorPlan,
            types: TypeSchema::floorplan(),
            elements,
            edges,
        }
    }

    #[test]
    fn empty_layout_is_valid() {
        assert!(validate_layout(&Layout::floorplan()).is_empty());
    }

    #[test]
    fn overlap_by_one_unit() {
        // intersection rectangle [3,4]x[0,4] has area 4 > 0
        let l = fp(
            vec![
                Element::new(1, 0., 0., 4., 4.),
                Element::new(2, 3., 0., 4., 4.),
            ],
            vec![],
        );
        assert_eq!(validate_layout(&l), vec![Violation::Overlap(0, 1)]);
    }

    #[test]
    fn door_between_distant_elements() {
        // 3 units apart: shared boundary length 0, and the gap between is a hole
        let l = fp(
            vec![
                Element::new(1, 0., 0., 4., 4.),
                Element::new(2, 7., 0., 4., 4.),
            ],
            vec![Edge::new(0, 1, EdgeKind::Door)],
        );
        let v = validate_layout(&l);
        assert!(v.contains(&Violation::InvalidDescriptiveEdge {
            src: 0,
            dst: 1,
            kind: EdgeKind::Door
        }));
        assert!(v.contains(&Violation::Holes { cells: 12 }));
    }

    #[test]
    fn adjacency_geometry() {
        let mut l = fp(
            vec![
                Element::new(1, 0., 0., 4., 4.),
                Element::new(2, 4., 0., 4., 4.),
            ],
            vec![Edge::new(0, 1, EdgeKind::HorizontalAdjacency)],
        );
        assert!(validate_layout(&l).is_empty());
        l.edges = vec![Edge::new(0, 1, EdgeKind::VerticalAdjacency)];
        assert_eq!(validate_layout(&l).len(), 1);
        l.edges = vec![Edge::new(1, 0, EdgeKind::HorizontalAdjacency)];
        assert_eq!(validate_layout(&l).len(), 1);
        l.edges = vec![Edge::new(1, 1, EdgeKind::Wall)];
        assert!(matches!(
            validate_layout(&l)[0],
            Violation::InvalidEdgeIndex { .. }
        ));
    }

    #[test]
    fn furniture_rules() {
        let l = Layout {
            mode: LayoutMode::Furniture,
            types: TypeSchema::furniture(),
            elements: vec![
                Element::new(0, 0., 0., 2., 2.).with_alpha(0.0),
                Element::new(1, 2., 0., 2., 2.),
            ],
            edges: vec![Edge::new(0, 1, EdgeKind::HorizontalAdjacency)],
        };
        let v = validate_layout(&l);
        assert!(v.contains(&Violation::OrientationMismatch(1)));
        assert!(v.contains(&Violation::ConstrainingEdgeInFurniture { src: 0, dst: 1 }));
    }
}
