//! Layout graphs: typed rectangular elements plus typed relationship edges.
//!
//! A [`Layout`] is the common currency of every other module. Floor plans
//! carry `(type, x, y, w, h)` elements that tile their bounding rectangle;
//! furniture layouts add an orientation angle per element and carry no
//! constraining edges.

mod graph;
mod json;
mod quantize;
mod validate;

pub(crate) use graph::bfs;
pub use graph::{door_graph, merge_rooms, RoomGraph, UnionFind};
pub use json::LayoutDoc;
pub use quantize::{Quantizer, RangeError};
pub use validate::{validate_layout, Violation};

use serde::{Deserialize, Serialize};

/// Lower edge of the world box in length units.
pub const WORLD_MIN: f64 = 0.0;
/// Upper edge of the world box in length units.
pub const WORLD_MAX: f64 = 64.0;
/// Geometry tolerance used for every "touching" test.
pub const TOUCH_TOL: f64 = 1e-6;

/// Name reserved for the outside of a floor plan.
pub const EXTERIOR: &str = "exterior";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayoutMode {
    #[serde(rename = "floorplan")]
    FloorPlan,
    #[serde(rename = "furniture")]
    Furniture,
}

/// A type id together with its label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElementType {
    pub id: usize,
    pub name: String,
}

/// The ordered list of element type labels used by a layout or corpus.
///
/// Ids are dense `0..len`. In floor-plan schemas exactly one label is
/// [`EXTERIOR`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeSchema {
    names: Vec<String>,
}

impl TypeSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    /// Default floor-plan vocabulary.
    pub fn floorplan() -> Self {
        Self::new([
            EXTERIOR, "bedroom", "bathroom", "kitchen", "living", "balcony", "corridor",
        ])
    }

    /// Default furniture vocabulary.
    pub fn furniture() -> Self {
        Self::new([
            "bed",
            "wardrobe",
            "nightstand",
            "desk",
            "chair",
            "sofa",
            "table",
            "shelf",
        ])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn get(&self, id: usize) -> Option<ElementType> {
        self.name(id).map(|n| ElementType {
            id,
            name: n.to_string(),
        })
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn exterior_id(&self) -> Option<usize> {
        self.id_of(EXTERIOR)
    }
}

/// One rectangular element. `(x, y)` is the lower-left corner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Element {
    pub elem_type: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    /// Orientation in radians, furniture layouts only.
    pub alpha: Option<f64>,
}

impl Element {
    pub fn new(elem_type: usize, x: f64, y: f64, w: f64, h: f64) -> Self {
        Self {
            elem_type,
            x,
            y,
            w,
            h,
            alpha: None,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn top(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Length of the overlap of the two x-extents (negative when disjoint).
    pub fn overlap_x(&self, other: &Element) -> f64 {
        self.right().min(other.right()) - self.x.max(other.x)
    }

    /// Length of the overlap of the two y-extents (negative when disjoint).
    pub fn overlap_y(&self, other: &Element) -> f64 {
        self.top().min(other.top()) - self.y.max(other.y)
    }

    /// Length of the boundary segment shared by two touching rectangles,
    /// or 0 when they do not touch along a side.
    pub fn shared_boundary(&self, other: &Element) -> f64 {
        let mut len: f64 = 0.0;
        if (self.right() - other.x).abs() <= TOUCH_TOL
            || (other.right() - self.x).abs() <= TOUCH_TOL
        {
            len = len.max(self.overlap_y(other));
        }
        if (self.top() - other.y).abs() <= TOUCH_TOL || (other.top() - self.y).abs() <= TOUCH_TOL {
            len = len.max(self.overlap_x(other));
        }
        len.max(0.0)
    }

    /// True when the interiors intersect with positive area.
    pub fn overlaps(&self, other: &Element) -> bool {
        self.overlap_x(other) > TOUCH_TOL && self.overlap_y(other) > TOUCH_TOL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeGroup {
    Constraining,
    Descriptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    #[serde(rename = "hadj")]
    HorizontalAdjacency,
    #[serde(rename = "vadj")]
    VerticalAdjacency,
    #[serde(rename = "wall")]
    Wall,
    #[serde(rename = "door")]
    Door,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [
        EdgeKind::HorizontalAdjacency,
        EdgeKind::VerticalAdjacency,
        EdgeKind::Wall,
        EdgeKind::Door,
    ];

    pub fn group(self) -> EdgeGroup {
        match self {
            EdgeKind::HorizontalAdjacency | EdgeKind::VerticalAdjacency => EdgeGroup::Constraining,
            EdgeKind::Wall | EdgeKind::Door => EdgeGroup::Descriptive,
        }
    }

    pub fn is_adjacency(self) -> bool {
        self.group() == EdgeGroup::Constraining
    }

    /// Short code used in files and on the command line.
    pub fn code(self) -> &'static str {
        match self {
            EdgeKind::HorizontalAdjacency => "hadj",
            EdgeKind::VerticalAdjacency => "vadj",
            EdgeKind::Wall => "wall",
            EdgeKind::Door => "door",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

/// Edge type as a (kind, group) pair. The group is implied by the kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EdgeType {
    pub kind: EdgeKind,
    pub group: EdgeGroup,
}

impl From<EdgeKind> for EdgeType {
    fn from(kind: EdgeKind) -> Self {
        Self {
            kind,
            group: kind.group(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn new(src: usize, dst: usize, kind: EdgeKind) -> Self {
        Self { src, dst, kind }
    }

    pub fn edge_type(&self) -> EdgeType {
        self.kind.into()
    }

    /// Unordered endpoint pair, smaller index first.
    pub fn pair(&self) -> (usize, usize) {
        (self.src.min(self.dst), self.src.max(self.dst))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub mode: LayoutMode,
    pub types: TypeSchema,
    pub elements: Vec<Element>,
    pub edges: Vec<Edge>,
}

impl Layout {
    pub fn new(mode: LayoutMode, types: TypeSchema) -> Self {
        Self {
            mode,
            types,
            elements: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn floorplan() -> Self {
        Self::new(LayoutMode::FloorPlan, TypeSchema::floorplan())
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn edges_of(&self, kind: EdgeKind) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    pub fn has_edge_between(&self, a: usize, b: usize, kind: EdgeKind) -> bool {
        self.edges_of(kind)
            .any(|e| (e.src == a && e.dst == b) || (e.src == b && e.dst == a))
    }

    pub fn is_exterior(&self, idx: usize) -> bool {
        self.mode == LayoutMode::FloorPlan
            && self.types.exterior_id() == Some(self.elements[idx].elem_type)
    }

    /// Axis-aligned bounding box `(x0, y0, x1, y1)` of all elements.
    pub fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.elements.first()?;
        let init = (first.x, first.y, first.right(), first.top());
        Some(self.elements.iter().fold(init, |(x0, y0, x1, y1), e| {
            (x0.min(e.x), y0.min(e.y), x1.max(e.right()), y1.max(e.top()))
        }))
    }

    /// Bounding-box perimeter term `W + H`.
    pub fn perimeter(&self) -> f64 {
        self.bounds()
            .map(|(x0, y0, x1, y1)| (x1 - x0) + (y1 - y0))
            .unwrap_or(0.0)
    }

    /// Returns a copy with elements translated by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Layout {
        let mut out = self.clone();
        for e in &mut out.elements {
            e.x += dx;
            e.y += dy;
        }
        out
    }

    /// Returns a copy whose elements are stored in `order`, with edges remapped.
    pub fn permuted(&self, order: &[usize]) -> Layout {
        let mut inv = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        let mut out = self.clone();
        out.elements = order.iter().map(|&i| self.elements[i]).collect();
        out.edges = self
            .edges
            .iter()
            .map(|e| Edge::new(inv[e.src], inv[e.dst], e.kind))
            .collect();
        out
    }
}
