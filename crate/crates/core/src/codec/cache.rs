//! Binary token cache for datasets.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "LGTOKv1\0"
//! mode       u32      0 = floor plan, 1 = furniture
//! n_types    u32
//! n_records  u32
//! record     5 x (u32 length, length x u16 token)
//!            element tokens, then hadj, vadj, wall, door edge tokens
//! ```
//!
//! Edge tokens store the element index directly; `GROUP_END` is `0xFFFE`
//! and `STOP` is `0xFFFF`.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::EdgeToken;
use crate::layout::LayoutMode;

const MAGIC: &[u8; 8] = b"LGTOKv1\0";
const EDGE_GROUP_END: u16 = 0xFFFE;
const EDGE_STOP: u16 = 0xFFFF;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a token cache file")]
    BadMagic,
    #[error("corrupt token cache: {0}")]
    Corrupt(String),
}

/// Token sequences of one layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CachedLayout {
    pub elements: Vec<u16>,
    /// Edge tokens in `EdgeKind::ALL` order.
    pub edges: [Vec<EdgeToken>; 4],
}

fn edge_to_u16(t: EdgeToken) -> u16 {
    match t {
        EdgeToken::Element(i) => i as u16,
        EdgeToken::GroupEnd => EDGE_GROUP_END,
        EdgeToken::Stop => EDGE_STOP,
    }
}

fn edge_from_u16(v: u16) -> EdgeToken {
    match v {
        EDGE_GROUP_END => EdgeToken::GroupEnd,
        EDGE_STOP => EdgeToken::Stop,
        i => EdgeToken::Element(i as usize),
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_tokens(w: &mut impl Write, tokens: impl ExactSizeIterator<Item = u16>) -> io::Result<()> {
    write_u32(w, tokens.len() as u32)?;
    for t in tokens {
        w.write_all(&t.to_le_bytes())?;
    }
    Ok(())
}

fn read_tokens(r: &mut impl Read) -> Result<Vec<u16>, CacheError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(CacheError::Corrupt(format!("sequence length {len}")));
    }
    let mut buf = vec![0u8; len * 2];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

pub fn write_token_cache(
    w: &mut impl Write,
    mode: LayoutMode,
    n_types: usize,
    records: &[CachedLayout],
) -> io::Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, matches!(mode, LayoutMode::Furniture) as u32)?;
    write_u32(w, n_types as u32)?;
    write_u32(w, records.len() as u32)?;
    for rec in records {
        write_tokens(w, rec.elements.iter().copied())?;
        for edges in &rec.edges {
            write_tokens(w, edges.iter().map(|&t| edge_to_u16(t)))?;
        }
    }
    Ok(())
}

pub fn read_token_cache(
    r: &mut impl Read,
) -> Result<(LayoutMode, usize, Vec<CachedLayout>), CacheError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CacheError::BadMagic);
    }
    let mode = match read_u32(r)? {
        0 => LayoutMode::FloorPlan,
        1 => LayoutMode::Furniture,
        m => return Err(CacheError::Corrupt(format!("mode {m}"))),
    };
    let n_types = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let elements = read_tokens(r)?;
        let mut edges: [Vec<EdgeToken>; 4] = Default::default();
        for e in &mut edges {
            *e = read_tokens(r)?.into_iter().map(edge_from_u16).collect();
        }
        out.push(CachedLayout { elements, edges });
    }
    Ok((mode, n_types, out))
}
