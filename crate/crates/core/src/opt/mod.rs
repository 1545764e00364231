//! Turns element constraints and adjacency edges into a linear program,
//! solves it, and rechecks the resulting layout.

mod filter;
mod formulate;
mod optimize;

pub use filter::{filter_constraints, RemovalReason, Removed};
pub use formulate::{formulate, topological_order, Formulation};
pub use optimize::{optimize, Optimized, Rejection};

use thiserror::Error;

use crate::codec::{canonicalize, Codec, CodecError, ElementConstraint};
use crate::layout::{
    Edge, EdgeKind, Element, Layout, LayoutMode, Quantizer, RangeError, TypeSchema, WORLD_MAX,
    WORLD_MIN,
};

/// Relative slack of every range row.
pub const EPSILON: f64 = 0.1;
/// Tolerance of every post-solve recheck.
pub const CHECK_TOL: f64 = 1e-6;

/// Continuous target values of one element. `x` and `y` are only present
/// in furniture layouts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementTarget {
    pub elem_type: usize,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub w: f64,
    pub h: f64,
    pub alpha: Option<f64>,
}

impl ElementTarget {
    pub fn sized(elem_type: usize, w: f64, h: f64) -> Self {
        Self {
            elem_type,
            x: None,
            y: None,
            w,
            h,
            alpha: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    pub mode: LayoutMode,
    pub types: TypeSchema,
    pub targets: Vec<ElementTarget>,
    /// `(i, j)`: the right side of `i` touches the left side of `j`.
    pub horizontal: Vec<(usize, usize)>,
    /// `(i, j)`: the top of `i` touches the bottom of `j`.
    pub vertical: Vec<(usize, usize)>,
    /// Wall and door edges, carried into the output only.
    pub descriptive: Vec<Edge>,
    pub epsilon: f64,
    pub bounds: (f64, f64),
    /// Fixed exterior rectangles the generated elements must not overlap.
    pub boundary: Vec<Element>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulationError {
    #[error("empty constraint set")]
    Empty,
    #[error("cyclic {0:?} edges")]
    CyclicAdjacency(EdgeKind),
    #[error("{kind:?} edge ({src}, {dst}) is a self-edge or out of range")]
    InvalidEdge {
        src: usize,
        dst: usize,
        kind: EdgeKind,
    },
    #[error("epsilon {0} outside (0, 1)")]
    Epsilon(f64),
    #[error("element {0} has a non-finite or non-positive target")]
    Target(usize),
}

impl ConstraintSet {
    pub fn new(mode: LayoutMode, types: TypeSchema, targets: Vec<ElementTarget>) -> Self {
        Self {
            mode,
            types,
            targets,
            horizontal: Vec::new(),
            vertical: Vec::new(),
            descriptive: Vec::new(),
            epsilon: EPSILON,
            bounds: (WORLD_MIN, WORLD_MAX),
            boundary: Vec::new(),
        }
    }

    /// Builds a set from quantized tuples, dequantizing each bin to its
    /// center, and sorts `edges` into the adjacency and descriptive lists.
    pub fn from_constraints(
        mode: LayoutMode,
        types: TypeSchema,
        constraints: &[ElementConstraint],
        edges: &[Edge],
    ) -> Result<Self, RangeError> {
        let q = Quantizer::coord();
        let qa = Quantizer::angle();
        let c = |b: u16| q.dequantize(b as u32);
        let targets = constraints
            .iter()
            .map(|k| {
                Ok(match mode {
                    LayoutMode::FloorPlan => {
                        ElementTarget::sized(k.elem_type, c(k.values[0])?, c(k.values[1])?)
                    }
                    LayoutMode::Furniture => ElementTarget {
                        elem_type: k.elem_type,
                        x: Some(c(k.values[0])?),
                        y: Some(c(k.values[1])?),
                        w: c(k.values[2])?,
                        h: c(k.values[3])?,
                        alpha: Some(qa.dequantize(k.values[4] as u32)?),
                    },
                })
            })
            .collect::<Result<Vec<_>, RangeError>>()?;
        let mut cs = Self::new(mode, types, targets);
        for e in edges {
            match e.kind {
                EdgeKind::HorizontalAdjacency => cs.horizontal.push((e.src, e.dst)),
                EdgeKind::VerticalAdjacency => cs.vertical.push((e.src, e.dst)),
                EdgeKind::Wall | EdgeKind::Door => cs.descriptive.push(*e),
            }
        }
        Ok(cs)
    }

    /// Quantized constraints and exact edges of an existing layout, in
    /// canonical element order.
    pub fn from_layout(layout: &Layout) -> Result<Self, CodecError> {
        let canon = canonicalize(layout);
        let cons = Codec::for_layout(&canon).constraints_of(&canon)?;
        Ok(Self::from_constraints(
            canon.mode,
            canon.types.clone(),
            &cons,
            &canon.edges,
        )?)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn adjacency(&self, kind: EdgeKind) -> &[(usize, usize)] {
        match kind {
            EdgeKind::HorizontalAdjacency => &self.horizontal,
            EdgeKind::VerticalAdjacency => &self.vertical,
            _ => &[],
        }
    }

    pub(crate) fn adjacency_mut(&mut self, kind: EdgeKind) -> &mut Vec<(usize, usize)> {
        match kind {
            EdgeKind::HorizontalAdjacency => &mut self.horizontal,
            EdgeKind::VerticalAdjacency => &mut self.vertical,
            _ => unreachable!("not an adjacency kind"),
        }
    }

    /// Scales every target value (not the bounds).
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.targets {
            t.w *= s;
            t.h *= s;
            t.x = t.x.map(|v| v * s);
            t.y = t.y.map(|v| v * s);
        }
        out
    }
}
