//! Invertible flattening of element constraints and edge lists into token
//! sequences.
//!
//! Element tokens live in a single id space: value bins `[0, 64)`, then one
//! id per element type, then the specials `START`, `STOP`, `GROUP_END` and
//! `PAD`. The type channel (slot index inside the constraint tuple) decides
//! which ids are legal at each position.
//!
//! Edge sequences are lists of element indices. Adjacency edges use the
//! shortened grouped style (a source index once, its targets, then
//! `GROUP_END`); descriptive edges use plain `(src, dst)` pairs.

mod cache;

pub use cache::{read_token_cache, write_token_cache, CacheError, CachedLayout};

use thiserror::Error;

use crate::layout::{Edge, EdgeKind, Layout, LayoutMode, Quantizer, RangeError};

/// Number of coordinate bins (6-bit quantization).
pub const VALUE_BINS: u16 = 64;

/// Type channel values for edge tokens.
pub const EDGE_SRC: u8 = 0;
pub const EDGE_DST: u8 = 1;
pub const EDGE_SPECIAL: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("sequence of {len} tokens exceeds capacity {max}")]
    Capacity { len: usize, max: usize },
    #[error("decode error at offset {offset}: {reason}")]
    Decode { offset: usize, reason: DecodeReason },
    #[error(transparent)]
    Range(#[from] RangeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeReason {
    /// Token is not legal for the slot it occupies.
    InvalidToken,
    /// The sequence ends inside a tuple, a pair or a group.
    Truncated,
    /// STOP is missing.
    MissingStop,
    /// Tokens other than PAD follow STOP.
    TrailingTokens,
    /// An edge points from an element to itself.
    SelfEdge,
    /// A source element is followed directly by GROUP_END or STOP.
    DanglingSource,
    /// Element index is not smaller than the element count.
    IndexOutOfRange,
}

impl std::fmt::Display for DecodeReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DecodeReason::InvalidToken => "invalid token for slot",
            DecodeReason::Truncated => "truncated",
            DecodeReason::MissingStop => "missing stop token",
            DecodeReason::TrailingTokens => "tokens after stop",
            DecodeReason::SelfEdge => "self-edge",
            DecodeReason::DanglingSource => "source without targets",
            DecodeReason::IndexOutOfRange => "element index out of range",
        };
        f.write_str(s)
    }
}

fn decode_err(offset: usize, reason: DecodeReason) -> CodecError {
    CodecError::Decode { offset, reason }
}

/// Kind of value expected in a tuple slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Type,
    Coord,
    Angle,
}

/// Quantized per-element targets. `values` excludes the type, so it holds
/// `(w, h)` for floor plans and `(x, y, w, h, alpha)` for furniture.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ElementConstraint {
    pub elem_type: usize,
    pub values: Vec<u16>,
}

impl ElementConstraint {
    pub fn floorplan(elem_type: usize, w_bin: u16, h_bin: u16) -> Self {
        Self {
            elem_type,
            values: vec![w_bin, h_bin],
        }
    }

    fn w_index(&self) -> usize {
        if self.values.len() == 2 {
            0
        } else {
            2
        }
    }

    /// Width bin (floor-plan and furniture tuples alike).
    pub fn w_bin(&self) -> u16 {
        self.values[self.w_index()]
    }

    pub fn h_bin(&self) -> u16 {
        self.values[self.w_index() + 1]
    }
}

/// Flattened token sequence with position and type channels.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub values: Vec<u16>,
    /// 1-based sequence index of each token.
    pub positions: Vec<u16>,
    /// Slot index inside the tuple (elements) or source/target marker (edges).
    pub types: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: u16, ty: u8) {
        self.values.push(value);
        self.positions.push(self.values.len() as u16);
        self.types.push(ty);
    }
}

/// One token of an edge sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeToken {
    Element(usize),
    GroupEnd,
    Stop,
}

/// Edge sequence with its source/target type channel.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct EdgeSequence {
    pub tokens: Vec<EdgeToken>,
    pub types: Vec<u8>,
}

impl EdgeSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> {
        1..=self.tokens.len()
    }

    fn push(&mut self, t: EdgeToken, ty: u8) {
        self.tokens.push(t);
        self.types.push(ty);
    }
}

/// Whether an edge kind uses the shortened grouped style by default.
pub fn shortened_style(kind: EdgeKind) -> bool {
    kind.is_adjacency()
}

/// Element token vocabulary and sequence limits for one schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Codec {
    pub mode: LayoutMode,
    pub n_types: usize,
    pub max_element_len: usize,
    pub max_edge_len: usize,
}

impl Codec {
    pub fn new(mode: LayoutMode, n_types: usize) -> Self {
        Self {
            mode,
            n_types,
            max_element_len: 256,
            max_edge_len: 512,
        }
    }

    pub fn for_layout(layout: &Layout) -> Self {
        Self::new(layout.mode, layout.types.len())
    }

    /// Tuple arity `k`.
    pub fn arity(&self) -> usize {
        match self.mode {
            LayoutMode::FloorPlan => 3,
            LayoutMode::Furniture => 6,
        }
    }

    pub fn slot(&self, index: usize) -> Slot {
        match (self.mode, index) {
            (_, 0) => Slot::Type,
            (LayoutMode::Furniture, 5) => Slot::Angle,
            _ => Slot::Coord,
        }
    }

    pub fn type_token(&self, elem_type: usize) -> u16 {
        VALUE_BINS + elem_type as u16
    }

    pub fn start(&self) -> u16 {
        VALUE_BINS + self.n_types as u16
    }

    pub fn stop(&self) -> u16 {
        self.start() + 1
    }

    pub fn group_end(&self) -> u16 {
        self.start() + 2
    }

    pub fn pad(&self) -> u16 {
        self.start() + 3
    }

    pub fn vocab_size(&self) -> usize {
        self.pad() as usize + 1
    }

    /// Whether `token` may appear at tuple slot `slot`. STOP is legal only
    /// where a new tuple would start.
    pub fn token_allowed(&self, token: u16, slot: usize) -> bool {
        match self.slot(slot) {
            Slot::Type => {
                token == self.stop()
                    || (VALUE_BINS..VALUE_BINS + self.n_types as u16).contains(&token)
            }
            Slot::Coord => token < VALUE_BINS,
            Slot::Angle => token < Quantizer::angle().levels() as u16,
        }
    }

    /// Constraint tuples of `layout` in canonical element order.
    pub fn constraints_of(&self, layout: &Layout) -> Result<Vec<ElementConstraint>, CodecError> {
        let q = Quantizer::coord();
        let qa = Quantizer::angle();
        order_elements(layout)
            .into_iter()
            .map(|i| {
                let e = &layout.elements[i];
                let values = match self.mode {
                    LayoutMode::FloorPlan => vec![q.quantize(e.w)?, q.quantize(e.h)?],
                    LayoutMode::Furniture => vec![
                        q.quantize(e.x)?,
                        q.quantize(e.y)?,
                        q.quantize(e.w)?,
                        q.quantize(e.h)?,
                        qa.quantize(e.alpha.unwrap_or(0.0))?,
                    ],
                };
                Ok(ElementConstraint {
                    elem_type: e.elem_type,
                    values: values.into_iter().map(|b| b as u16).collect(),
                })
            })
            .collect()
    }

    pub fn encode_constraints(
        &self,
        cs: &[ElementConstraint],
    ) -> Result<TokenSequence, CodecError> {
        let len = cs.len() * self.arity() + 1;
        if len > self.max_element_len {
            return Err(CodecError::Capacity {
                len,
                max: self.max_element_len,
            });
        }
        let mut seq = TokenSequence::default();
        for c in cs {
            seq.push(self.type_token(c.elem_type), 0);
            for (slot, &v) in c.values.iter().enumerate() {
                seq.push(v, slot as u8 + 1);
            }
        }
        seq.push(self.stop(), 0);
        Ok(seq)
    }

    /// Encodes the element constraints of `layout` (canonical order, STOP last).
    pub fn encode_elements(&self, layout: &Layout) -> Result<TokenSequence, CodecError> {
        self.encode_constraints(&self.constraints_of(layout)?)
    }

    pub fn decode_elements(
        &self,
        seq: &TokenSequence,
    ) -> Result<Vec<ElementConstraint>, CodecError> {
        self.decode_element_tokens(&seq.values)
    }

    pub fn decode_element_tokens(
        &self,
        tokens: &[u16],
    ) -> Result<Vec<ElementConstraint>, CodecError> {
        let k = self.arity();
        let mut out = Vec::new();
        let mut offset = 0;
        loop {
            let Some(&tok) = tokens.get(offset) else {
                return Err(decode_err(offset, DecodeReason::MissingStop));
            };
            if tok == self.stop() {
                if tokens[offset + 1..].iter().any(|&t| t != self.pad()) {
                    return Err(decode_err(offset + 1, DecodeReason::TrailingTokens));
                }
                return Ok(out);
            }
            if !self.token_allowed(tok, 0) {
                return Err(decode_err(offset, DecodeReason::InvalidToken));
            }
            let mut values = Vec::with_capacity(k - 1);
            for slot in 1..k {
                let at = offset + slot;
                match tokens.get(at) {
                    None => return Err(decode_err(at, DecodeReason::Truncated)),
                    Some(&v) if !self.token_allowed(v, slot) => {
                        return Err(decode_err(at, DecodeReason::InvalidToken))
                    }
                    Some(&v) => values.push(v),
                }
            }
            out.push(ElementConstraint {
                elem_type: (tok - VALUE_BINS) as usize,
                values,
            });
            offset += k;
        }
    }
}

/// Canonical element order: left to right, then bottom to top, with
/// `(w, h, type)` breaking remaining ties. Returns the permutation.
pub fn order_elements(layout: &Layout) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..layout.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ea, eb) = (&layout.elements[a], &layout.elements[b]);
        ea.x.total_cmp(&eb.x)
            .then(ea.y.total_cmp(&eb.y))
            .then(ea.w.total_cmp(&eb.w))
            .then(ea.h.total_cmp(&eb.h))
            .then(ea.elem_type.cmp(&eb.elem_type))
    });
    idx
}

/// Returns `layout` with elements stored in canonical order.
pub fn canonicalize(layout: &Layout) -> Layout {
    layout.permuted(&order_elements(layout))
}

/// Encodes the edges of one kind. Element indices must already be canonical.
pub fn encode_edges(layout: &Layout, kind: EdgeKind, shortened: bool) -> EdgeSequence {
    let mut pairs: Vec<(usize, usize)> = layout.edges_of(kind).map(|e| (e.src, e.dst)).collect();
    encode_edge_pairs(&mut pairs, shortened)
}

pub fn encode_edge_pairs(pairs: &mut Vec<(usize, usize)>, shortened: bool) -> EdgeSequence {
    pairs.sort_unstable();
    pairs.dedup();
    let mut seq = EdgeSequence::default();
    if shortened {
        let mut i = 0;
        while i < pairs.len() {
            let src = pairs[i].0;
            seq.push(EdgeToken::Element(src), EDGE_SRC);
            while i < pairs.len() && pairs[i].0 == src {
                seq.push(EdgeToken::Element(pairs[i].1), EDGE_DST);
                i += 1;
            }
            seq.push(EdgeToken::GroupEnd, EDGE_SPECIAL);
        }
    } else {
        for &(s, d) in pairs.iter() {
            seq.push(EdgeToken::Element(s), EDGE_SRC);
            seq.push(EdgeToken::Element(d), EDGE_DST);
        }
    }
    seq.push(EdgeToken::Stop, EDGE_SPECIAL);
    seq
}

/// Type channel value for the token following `prefix`.
pub fn next_edge_type(prefix: &[EdgeToken], shortened: bool) -> u8 {
    if shortened {
        match prefix.last() {
            None | Some(EdgeToken::GroupEnd) | Some(EdgeToken::Stop) => EDGE_SRC,
            Some(EdgeToken::Element(_)) => EDGE_DST,
        }
    } else {
        let elems = prefix
            .iter()
            .filter(|t| matches!(t, EdgeToken::Element(_)))
            .count();
        if elems % 2 == 0 {
            EDGE_SRC
        } else {
            EDGE_DST
        }
    }
}

/// Type channel for a whole token list, as produced by the encoder.
pub fn edge_types_for(tokens: &[EdgeToken], shortened: bool) -> Vec<u8> {
    (0..tokens.len())
        .map(|i| match tokens[i] {
            EdgeToken::GroupEnd | EdgeToken::Stop => EDGE_SPECIAL,
            EdgeToken::Element(_) => next_edge_type(&tokens[..i], shortened),
        })
        .collect()
}

/// Strict inverse of [`encode_edges`].
pub fn decode_edges(
    tokens: &[EdgeToken],
    kind: EdgeKind,
    shortened: bool,
    n_elements: usize,
) -> Result<Vec<Edge>, CodecError> {
    let mut edges = Vec::new();
    let check = |offset: usize, i: usize| {
        if i >= n_elements {
            Err(decode_err(offset, DecodeReason::IndexOutOfRange))
        } else {
            Ok(i)
        }
    };
    let mut offset = 0;
    if shortened {
        loop {
            match tokens.get(offset) {
                None => return Err(decode_err(offset, DecodeReason::MissingStop)),
                Some(EdgeToken::Stop) => break,
                Some(EdgeToken::GroupEnd) => {
                    return Err(decode_err(offset, DecodeReason::InvalidToken))
                }
                Some(&EdgeToken::Element(s)) => {
                    let src = check(offset, s)?;
                    offset += 1;
                    let mut n_targets = 0;
                    loop {
                        match tokens.get(offset) {
                            None => return Err(decode_err(offset, DecodeReason::Truncated)),
                            Some(EdgeToken::Element(d)) => {
                                let dst = check(offset, *d)?;
                                if dst == src {
                                    return Err(decode_err(offset, DecodeReason::SelfEdge));
                                }
                                edges.push(Edge::new(src, dst, kind));
                                n_targets += 1;
                                offset += 1;
                            }
                            Some(EdgeToken::GroupEnd) if n_targets > 0 => {
                                offset += 1;
                                break;
                            }
                            Some(EdgeToken::GroupEnd) => {
                                return Err(decode_err(offset, DecodeReason::DanglingSource))
                            }
                            Some(EdgeToken::Stop) => {
                                let reason = if n_targets == 0 {
                                    DecodeReason::DanglingSource
                                } else {
                                    DecodeReason::Truncated
                                };
                                return Err(decode_err(offset, reason));
                            }
                        }
                    }
                }
            }
        }
    } else {
        loop {
            match (tokens.get(offset), tokens.get(offset + 1)) {
                (None, _) => return Err(decode_err(offset, DecodeReason::MissingStop)),
                (Some(EdgeToken::Stop), _) => break,
                (Some(&EdgeToken::Element(s)), Some(&EdgeToken::Element(d))) => {
                    let src = check(offset, s)?;
                    let dst = check(offset + 1, d)?;
                    if src == dst {
                        return Err(decode_err(offset + 1, DecodeReason::SelfEdge));
                    }
                    edges.push(Edge::new(src, dst, kind));
                    offset += 2;
                }
                (Some(EdgeToken::Element(_)), None) => {
                    return Err(decode_err(offset + 1, DecodeReason::Truncated))
                }
                (Some(EdgeToken::Element(_)), Some(EdgeToken::Stop)) => {
                    return Err(decode_err(offset + 1, DecodeReason::DanglingSource))
                }
                (Some(EdgeToken::Element(_)), Some(EdgeToken::GroupEnd)) => {
                    return Err(decode_err(offset + 1, DecodeReason::InvalidToken))
                }
                (Some(EdgeToken::GroupEnd), _) => {
                    return Err(decode_err(offset, DecodeReason::InvalidToken))
                }
            }
        }
    }
    if offset + 1 != tokens.len() {
        return Err(decode_err(offset + 1, DecodeReason::TrailingTokens));
    }
    Ok(edges)
}

/// Permissive decode used on model samples: invalid edges (self-edges,
/// out-of-range indices, sources without targets) are dropped instead of
/// failing the whole sequence. Returns the kept edges and the drop count.
pub fn decode_edges_filtered(
    tokens: &[EdgeToken],
    kind: EdgeKind,
    shortened: bool,
    n_elements: usize,
) -> (Vec<Edge>, usize) {
    let mut edges = Vec::new();
    let mut dropped = 0;
    let valid = |s: usize, d: usize| s < n_elements && d < n_elements && s != d;
    let body = match tokens.iter().position(|t| *t == EdgeToken::Stop) {
        Some(p) => &tokens[..p],
        None => tokens,
    };
    if shortened {
        let mut src: Option<usize> = None;
        let mut n_targets = 0;
        for t in body {
            match (*t, src) {
                (EdgeToken::Element(s), None) => {
                    src = Some(s);
                    n_targets = 0;
                }
                (EdgeToken::Element(d), Some(s)) => {
                    n_targets += 1;
                    if valid(s, d) {
                        edges.push(Edge::new(s, d, kind));
                    } else {
                        dropped += 1;
                    }
                }
                (EdgeToken::GroupEnd, Some(_)) => {
                    if n_targets == 0 {
                        dropped += 1;
                    }
                    src = None;
                }
                (EdgeToken::GroupEnd, None) => dropped += 1,
                (EdgeToken::Stop, _) => unreachable!(),
            }
        }
        if src.is_some() && n_targets == 0 {
            dropped += 1;
        }
    } else {
        let elems: Vec<Option<usize>> = body
            .iter()
            .map(|t| match t {
                EdgeToken::Element(i) => Some(*i),
                _ => None,
            })
            .collect();
        let mut chunks = elems.chunks_exact(2);
        for pair in &mut chunks {
            match (pair[0], pair[1]) {
                (Some(s), Some(d)) if valid(s, d) => edges.push(Edge::new(s, d, kind)),
                _ => dropped += 1,
            }
        }
        dropped += chunks.remainder().len();
    }
    let before = edges.len();
    edges.sort_unstable();
    edges.dedup();
    dropped += before - edges.len();
    (edges, dropped)
}
