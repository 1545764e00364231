//! Procedural floor plans and furniture arrangements used as training and
//! evaluation corpora.

mod corpus;

pub use corpus::{load_corpus, save_corpus, split_indices, write_splits, LoadError, Split};

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::canonicalize;
use crate::layout::{
    merge_rooms, Edge, EdgeKind, Element, Layout, LayoutMode, TypeSchema, UnionFind, WORLD_MAX,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub n_layouts: usize,
    pub mode: LayoutMode,
    /// Inclusive element count range, exterior pieces included.
    pub min_elements: usize,
    pub max_elements: usize,
    /// Smallest element side in world units (one unit is one bin).
    pub min_size: u32,
    /// Inclusive range of the outer rectangle's sides.
    pub min_extent: u32,
    pub max_extent: u32,
    /// Chance that a leaf on the outer border becomes exterior.
    pub exterior_prob: f64,
    /// Relative weights of the non-exterior floor-plan types, in schema order.
    pub type_weights: Vec<f64>,
    /// Chance of a wall between two touching same-type elements.
    pub wall_prob: f64,
    /// Chance of an extra door on each room-graph edge outside the tree.
    pub extra_door_prob: f64,
    /// Rooms left without any door.
    pub inaccessible_rooms: usize,
    /// Furniture pieces per room, inclusive.
    pub min_pieces: usize,
    pub max_pieces: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_layouts: 1000,
            mode: LayoutMode::FloorPlan,
            min_elements: 8,
            max_elements: 16,
            min_size: 5,
            min_extent: 28,
            max_extent: 56,
            exterior_prob: 0.3,
            type_weights: vec![3.0, 2.0, 1.5, 1.5, 0.5, 0.8],
            wall_prob: 0.5,
            extra_door_prob: 0.1,
            inaccessible_rooms: 0,
            min_pieces: 3,
            max_pieces: 8,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("cannot split a {w}x{h} rectangle into {count} elements of side >= {min_size}")]
    Unsatisfiable {
        count: usize,
        w: u32,
        h: u32,
        min_size: u32,
    },
}

impl GenConfig {
    pub fn from_toml(s: &str) -> Result<Self, GenError> {
        let cfg: Self = toml::from_str(s).map_err(|e| GenError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.to_string()));
        if self.min_size < 2 {
            return bad("min_size must be at least 2");
        }
        if self.min_elements < 1 || self.min_elements > self.max_elements {
            return bad("element count range must be non-empty and start at 1 or more");
        }
        if self.min_extent < self.min_size
            || self.min_extent > self.max_extent
            || self.max_extent as f64 > WORLD_MAX
        {
            return bad("extent range must lie within [min_size, 64]");
        }
        if self.mode == LayoutMode::FloorPlan
            && self.type_weights.len() != TypeSchema::floorplan().len() - 1
        {
            return bad("type_weights needs one weight per non-exterior type");
        }
        if self.type_weights.iter().any(|w| !(*w >= 0.0))
            || self.type_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("type_weights must be non-negative with a positive sum");
        }
        for p in [self.exterior_prob, self.wall_prob, self.extra_door_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if self.min_pieces > self.max_pieces {
            return bad("piece range must be non-empty");
        }
        Ok(())
    }
}

/// Integer rectangle of the guillotine tree.
#[derive(Clone, Copy, Debug)]
struct Cell {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

fn guillotine(count: usize, w: u32, h: u32, min: u32, rng: &mut impl Rng) -> Option<Vec<Cell>> {
    let mut cells = vec![Cell { x: 0, y: 0, w, h }];
    while cells.len() < count {
        let splittable: Vec<usize> = (0..cells.len())
            .filter(|&i| cells[i].w >= 2 * min || cells[i].h >= 2 * min)
            .collect();
        let weights: Vec<u32> = splittable
            .iter()
            .map(|&i| cells[i].w * cells[i].h)
            .collect();
        let total: u32 = weights.iter().sum();
        if total == 0 {
            return None;
        }
        let mut pick = rng.gen_range(0..total);
        let mut at = 0;
        while pick >= weights[at] {
            pick -= weights[at];
            at += 1;
        }
        let c = cells.swap_remove(splittable[at]);
        let can_v = c.w >= 2 * min;
        let can_h = c.h >= 2 * min;
        let vertical = match (can_v, can_h) {
            (true, true) => rng.gen_bool(c.w as f64 / (c.w + c.h) as f64),
            (v, _) => v,
        };
        if vertical {
            let cut = rng.gen_range(min..=c.w - min);
            cells.push(Cell { w: cut, ..c });
            cells.push(Cell {
                x: c.x + cut,
                w: c.w - cut,
                ..c
            });
        } else {
            let cut = rng.gen_range(min..=c.h - min);
            cells.push(Cell { h: cut, ..c });
            cells.push(Cell {
                y: c.y + cut,
                h: c.h - cut,
                ..c
            });
        }
    }
    Some(cells)
}

/// Exact horizontal and vertical adjacency edges of a tiling.
pub fn adjacency_edges(elements: &[Element]) -> Vec<Edge> {
    let tol = crate::layout::TOUCH_TOL;
    let mut out = Vec::new();
    for (i, a) in elements.iter().enumerate() {
        for (j, b) in elements.iter().enumerate() {
            if i == j {
                continue;
            }
            if (a.right() - b.x).abs() <= tol && a.overlap_y(b) > tol {
                out.push(Edge::new(i, j, EdgeKind::HorizontalAdjacency));
            }
            if (a.top() - b.y).abs() <= tol && a.overlap_x(b) > tol {
                out.push(Edge::new(i, j, EdgeKind::VerticalAdjacency));
            }
        }
    }
    out
}

fn room_type(cfg: &GenConfig, area: u32, rng: &mut impl Rng) -> usize {
    // Schema order after exterior: bedroom, bathroom, kitchen, living, balcony, corridor.
    let boost: [f64; 6] = if area < 40 {
        [0.3, 3.0, 1.0, 0.2, 3.0, 3.0]
    } else if area > 150 {
        [2.0, 0.2, 0.7, 3.0, 0.2, 0.3]
    } else {
        [1.0; 6]
    };
    let w: Vec<f64> = cfg
        .type_weights
        .iter()
        .zip(boost)
        .map(|(a, b)| a * b)
        .collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, wk) in w.iter().enumerate() {
        if u < *wk {
            return k + 1;
        }
        u -= wk;
    }
    w.len()
}

/// One floor plan: a guillotine tiling of an integer rectangle at the
/// origin, with border leaves turned exterior, walls between some
/// same-type neighbours and doors along a random spanning tree of the room
/// graph rooted at the exterior.
pub fn generate_floorplan(cfg: &GenConfig, rng: &mut impl Rng) -> Result<Layout, GenError> {
    let count = rng.gen_range(cfg.min_elements..=cfg.max_elements);
    let mut attempt = 0;
    let (w, h, cells) = loop {
        let w = rng.gen_range(cfg.min_extent..=cfg.max_extent);
        let h = rng.gen_range(cfg.min_extent..=cfg.max_extent);
        if let Some(c) = guillotine(count, w, h, cfg.min_size, rng) {
            break (w, h, c);
        }
        attempt += 1;
        if attempt == 50 {
            return Err(GenError::Unsatisfiable {
                count,
                w: cfg.max_extent,
                h: cfg.max_extent,
                min_size: cfg.min_size,
            });
        }
    };

    let schema = TypeSchema::floorplan();
    let ext = schema
        .exterior_id()
        .expect("floor-plan schema has an exterior type");
    let mut layout = Layout::new(LayoutMode::FloorPlan, schema);
    let on_border = |c: &Cell| c.x == 0 || c.y == 0 || c.x + c.w == w || c.y + c.h == h;
    for c in &cells {
        let t = room_type(cfg, c.w * c.h, rng);
        layout.elements.push(Element::new(
            t, c.x as f64, c.y as f64, c.w as f64, c.h as f64,
        ));
    }
    if cells.len() > 1 {
        let border: Vec<usize> = (0..cells.len()).filter(|&i| on_border(&cells[i])).collect();
        let mut ext_set: Vec<usize> = border
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(cfg.exterior_prob))
            .collect();
        // Every side gets an exterior leaf where that still leaves a room,
        // so the exterior rectangles alone span the outer rectangle.
        let sides: [&dyn Fn(&Cell) -> bool; 4] =
            [&|c| c.x == 0, &|c| c.y == 0, &|c| c.x + c.w == w, &|c| {
                c.y + c.h == h
            }];
        for side in sides {
            if ext_set.iter().any(|&i| side(&cells[i])) {
                continue;
            }
            let options: Vec<usize> = (0..cells.len()).filter(|&i| side(&cells[i])).collect();
            let pick = *options.choose(rng).expect("every side has a leaf");
            if ext_set.len() + 1 < cells.len() {
                ext_set.push(pick);
            }
        }
        ext_set.sort_unstable();
        if ext_set.len() == cells.len() {
            ext_set.pop();
        }
        for i in ext_set {
            layout.elements[i].elem_type = ext;
        }
    }
    let mut layout = canonicalize(&layout);
    layout.edges = adjacency_edges(&layout.elements);
    add_walls_and_doors(cfg, &mut layout, rng);
    Ok(layout)
}

fn add_walls_and_doors(cfg: &GenConfig, layout: &mut Layout, rng: &mut impl Rng) {
    let n = layout.len();
    let touching: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| {
            layout.elements[i].shared_boundary(&layout.elements[j]) > crate::layout::TOUCH_TOL
        })
        .collect();
    let adjacent: BTreeSet<(usize, usize)> = layout
        .edges
        .iter()
        .map(|e| (e.src.min(e.dst), e.src.max(e.dst)))
        .collect();

    for &(i, j) in &touching {
        let (a, b) = (&layout.elements[i], &layout.elements[j]);
        if a.elem_type == b.elem_type
            && !layout.is_exterior(i)
            && adjacent.contains(&(i, j))
            && rng.gen_bool(cfg.wall_prob)
        {
            // Walls carry the direction of the adjacency edge so that
            // merge_rooms sees the same pair.
            let e = layout
                .edges
                .iter()
                .find(|e| e.pair() == (i, j) || e.pair() == (j, i))
                .expect("adjacent");
            layout.edges.push(Edge::new(e.src, e.dst, EdgeKind::Wall));
        }
    }

    // Room graph with every exterior element collapsed into node 0.
    let rooms = merge_rooms(layout);
    let mut node_of = vec![0; n];
    let mut n_nodes = 1;
    for members in &rooms {
        if layout.is_exterior(members[0]) {
            continue;
        }
        for &i in members {
            node_of[i] = n_nodes;
        }
        n_nodes += 1;
    }
    let has_exterior = (0..n).any(|i| layout.is_exterior(i));
    if !has_exterior {
        return;
    }
    let mut links: Vec<(usize, usize)> = touching
        .iter()
        .copied()
        .filter(|&(i, j)| node_of[i] != node_of[j])
        .collect();
    links.shuffle(rng);

    // Randomized Kruskal over a shuffled link list is a random spanning tree.
    let mut uf = UnionFind::new(n_nodes);
    let mut tree = Vec::new();
    let mut extra = Vec::new();
    for &(i, j) in &links {
        if uf.union(node_of[i], node_of[j]) {
            tree.push((i, j));
        } else {
            extra.push((i, j));
        }
    }
    let mut cut_off = BTreeSet::new();
    if cfg.inaccessible_rooms > 0 {
        let mut candidates: Vec<usize> = (1..n_nodes).collect();
        candidates.shuffle(rng);
        cut_off.extend(candidates.into_iter().take(cfg.inaccessible_rooms));
    }
    let mut seen = BTreeSet::new();
    for (i, j) in tree {
        if cut_off.contains(&node_of[i]) || cut_off.contains(&node_of[j]) {
            continue;
        }
        seen.insert((node_of[i].min(node_of[j]), node_of[i].max(node_of[j])));
        layout.edges.push(Edge::new(i, j, EdgeKind::Door));
    }
    for (i, j) in extra {
        let key = (node_of[i].min(node_of[j]), node_of[i].max(node_of[j]));
        if cut_off.contains(&node_of[i]) || cut_off.contains(&node_of[j]) || seen.contains(&key) {
            continue;
        }
        if rng.gen_bool(cfg.extra_door_prob) {
            seen.insert(key);
            layout.edges.push(Edge::new(i, j, EdgeKind::Door));
        }
    }
}

/// Typical `(w, h)` ranges per furniture type, in schema order.
const PIECE_SIZES: [((u32, u32), (u32, u32)); 8] = [
    ((5, 7), (6, 8)),
    ((4, 6), (2, 2)),
    ((2, 2), (2, 2)),
    ((4, 6), (2, 3)),
    ((2, 2), (2, 2)),
    ((5, 8), (2, 3)),
    ((3, 5), (3, 5)),
    ((3, 5), (2, 2)),
];

/// One furniture arrangement: non-overlapping integer boxes inside a room
/// rectangle at the origin, each facing one of four axis directions.
pub fn generate_furniture(cfg: &GenConfig, rng: &mut impl Rng) -> Result<Layout, GenError> {
    let w = rng.gen_range(cfg.min_extent..=cfg.max_extent).min(40);
    let h = rng.gen_range(cfg.min_extent..=cfg.max_extent).min(40);
    let target = rng.gen_range(cfg.min_pieces..=cfg.max_pieces);
    let mut layout = Layout::new(LayoutMode::Furniture, TypeSchema::furniture());
    let mut tries = 0;
    while layout.len() < target && tries < 200 * target.max(1) {
        tries += 1;
        let t = rng.gen_range(0..PIECE_SIZES.len());
        let ((w0, w1), (h0, h1)) = PIECE_SIZES[t];
        let (mut pw, mut ph) = (rng.gen_range(w0..=w1), rng.gen_range(h0..=h1));
        let facing = rng.gen_range(0..4u32);
        if facing % 2 == 1 {
            std::mem::swap(&mut pw, &mut ph);
        }
        if pw > w || ph > h {
            continue;
        }
        let x = rng.gen_range(0..=w - pw);
        let y = rng.gen_range(0..=h - ph);
        let e = Element::new(t, x as f64, y as f64, pw as f64, ph as f64)
            .with_alpha(facing as f64 * FRAC_PI_2);
        if layout.elements.iter().all(|o| !o.overlaps(&e)) {
            layout.elements.push(e);
        }
    }
    Ok(canonicalize(&layout))
}

/// Per-layout random stream `i` of the master seed.
pub fn layout_rng(seed: u64, i: usize) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// `cfg.n_layouts` layouts, generated in parallel, one stream each.
pub fn generate_corpus(cfg: &GenConfig) -> Result<Vec<Layout>, GenError> {
    cfg.validate()?;
    (0..cfg.n_layouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = layout_rng(cfg.seed, i);
            match cfg.mode {
                LayoutMode::FloorPlan => generate_floorplan(cfg, &mut rng),
                LayoutMode::Furniture => generate_furniture(cfg, &mut rng),
            }
        })
        .collect()
}
