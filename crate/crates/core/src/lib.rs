//! Constraint-graph layout generation.
//!
//! Layouts are generated in three stages: an autoregressive model proposes
//! per-element constraints, pointer models propose relationship edges
//! between them, and a linear program solves for the final geometry. The
//! crate also contains the synthetic corpus generator and the statistics
//! used to compare generated corpora against a reference.

pub mod codec;
pub mod layout;
pub mod lp;
pub mod model;
pub mod opt;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod tensor;

pub use layout::{
    door_graph, merge_rooms, validate_layout, Edge, EdgeGroup, EdgeKind, EdgeType, Element,
    ElementType, Layout, LayoutMode, Quantizer, TypeSchema, Violation,
};
