use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use super::{Family, Histogram, SchemaError, Stat, StatSet, StatValue};
use crate::layout::bfs;
use crate::layout::{door_graph, Layout, LayoutMode, TypeSchema};

/// Radius of the furniture neighbour graph, as a fraction of the diagonal.
pub const RNN_RADIUS: f64 = 0.15;

const ALIGN_NAMES: [&str; 5] = ["center_dx", "center_dy", "gap", "axis_center", "side"];

/// Undirected graph linking pieces whose centers are at most
/// `r_frac` times the bounding-box diagonal apart.
pub fn rnn_graph(layout: &Layout, r_frac: f64) -> Vec<BTreeSet<usize>> {
    let n = layout.len();
    let mut adj = vec![BTreeSet::new(); n];
    let Some((x0, y0, x1, y1)) = layout.bounds() else {
        return adj;
    };
    let r = r_frac * (x1 - x0).hypot(y1 - y0);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (layout.elements[i].center(), layout.elements[j].center());
            if (a.0 - b.0).hypot(a.1 - b.1) <= r {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
    }
    adj
}

/// Graph the topological statistics run on. Floor plans use merged rooms
/// plus one exterior node; furniture uses the r-NN graph over pieces.
struct TopoGraph {
    node_type: Vec<usize>,
    adj: Vec<BTreeSet<usize>>,
    /// Node standing for the outside, if any. It is not counted as a room.
    exterior: Option<usize>,
}

fn topo_graph(l: &Layout) -> TopoGraph {
    match l.mode {
        LayoutMode::Furniture => TopoGraph {
            node_type: l.elements.iter().map(|e| e.elem_type).collect(),
            adj: rnn_graph(l, RNN_RADIUS),
            exterior: None,
        },
        LayoutMode::FloorPlan => {
            let g = door_graph(l);
            let rooms: Vec<usize> = g.interior_rooms().collect();
            let mut node_of = vec![usize::MAX; g.node_count()];
            for (k, &r) in rooms.iter().enumerate() {
                node_of[r] = k;
            }
            let ext = rooms.len();
            node_of[g.exterior()] = ext;
            let mut adj = vec![BTreeSet::new(); ext + 1];
            for (u, nbrs) in g.adj.iter().enumerate() {
                for &v in nbrs {
                    if node_of[u] != usize::MAX && node_of[v] != usize::MAX {
                        adj[node_of[u]].insert(node_of[v]);
                    }
                }
            }
            let mut node_type: Vec<usize> = rooms.iter().map(|&r| g.room_type[r]).collect();
            node_type.push(l.types.exterior_id().unwrap_or(0));
            TopoGraph {
                node_type,
                adj,
                exterior: Some(ext),
            }
        }
    }
}

fn pair_index(a: usize, b: usize, t: usize) -> usize {
    let (a, b) = (a.min(b), a.max(b));
    a * (2 * t - a + 1) / 2 + (b - a)
}

/// Everything one layout contributes to the statistics.
struct Samples {
    count: Vec<f64>,
    degree: Vec<Vec<f64>>,
    connections: Vec<f64>,
    dist_sum: Vec<f64>,
    dist_n: Vec<f64>,
    ext_dist: Vec<f64>,
    inaccessible: Vec<f64>,
    center: Vec<Vec<(f64, f64)>>,
    area: Vec<f64>,
    aspect: Vec<f64>,
    orientation: Vec<f64>,
    /// `[all pairs, descriptive pairs][ALIGN_NAMES]`.
    align: [[Vec<f64>; 5]; 2],
    /// Orientation, width and height differences of furniture pairs.
    furniture: [Vec<f64>; 3],
}

fn align_values(a: &crate::layout::Element, b: &crate::layout::Element) -> [f64; 5] {
    let (ca, cb) = (a.center(), b.center());
    let (dx, dy) = ((ca.0 - cb.0).abs(), (ca.1 - cb.1).abs());
    let sep_x = (b.x - a.right()).max(a.x - b.right());
    let sep_y = (b.y - a.top()).max(a.y - b.top());
    let side = [
        (a.x - b.x).abs(),
        (a.right() - b.right()).abs(),
        (a.y - b.y).abs(),
        (a.top() - b.top()).abs(),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    [dx, dy, sep_x.max(sep_y), dx.min(dy), side]
}

fn samples(l: &Layout, t: usize) -> Samples {
    let pairs = t * (t + 1) / 2;
    let mut s = Samples {
        count: vec![0.0; t],
        degree: vec![Vec::new(); t],
        connections: vec![0.0; pairs],
        dist_sum: vec![0.0; pairs],
        dist_n: vec![0.0; pairs],
        ext_dist: Vec::new(),
        inaccessible: vec![0.0; t],
        center: vec![Vec::new(); t],
        area: Vec::new(),
        aspect: Vec::new(),
        orientation: Vec::new(),
        align: Default::default(),
        furniture: Default::default(),
    };

    let g = topo_graph(l);
    let nodes = g.node_type.len();
    let from_ext = g.exterior.map(|e| bfs(&g.adj, e));
    for u in 0..nodes {
        let ty = g.node_type[u];
        if Some(u) != g.exterior {
            s.count[ty] += 1.0;
            s.degree[ty].push(g.adj[u].len() as f64);
            if let Some(d) = &from_ext {
                match d[u] {
                    Some(k) => s.ext_dist.push(k as f64),
                    None => s.inaccessible[ty] += 1.0,
                }
            }
        }
        for &v in g.adj[u].iter().filter(|&&v| v > u) {
            s.connections[pair_index(ty, g.node_type[v], t)] += 1.0;
        }
        let d = bfs(&g.adj, u);
        for v in u + 1..nodes {
            if let Some(k) = d[v] {
                let p = pair_index(ty, g.node_type[v], t);
                s.dist_sum[p] += k as f64;
                s.dist_n[p] += 1.0;
            }
        }
    }

    let kept: Vec<usize> = (0..l.len()).filter(|&i| !l.is_exterior(i)).collect();
    for &i in &kept {
        let e = &l.elements[i];
        s.center[e.elem_type].push(e.center());
        s.area.push(e.area());
        s.aspect.push(e.w / e.h);
        if let Some(a) = e.alpha {
            s.orientation.push(a);
        }
    }
    for (k, &i) in kept.iter().enumerate() {
        for &j in &kept[k + 1..] {
            let (a, b) = (&l.elements[i], &l.elements[j]);
            for (slot, v) in align_values(a, b).into_iter().enumerate() {
                s.align[0][slot].push(v);
            }
            if let (Some(x), Some(y)) = (a.alpha, b.alpha) {
                let d = (x - y).rem_euclid(TAU);
                s.furniture[0].push(d.min(TAU - d));
                s.furniture[1].push((a.w - b.w).abs());
                s.furniture[2].push((a.h - b.h).abs());
            }
        }
    }
    for e in l.edges.iter().filter(|e| !e.kind.is_adjacency()) {
        if e.src < l.len() && e.dst < l.len() && !l.is_exterior(e.src) && !l.is_exterior(e.dst) {
            let v = align_values(&l.elements[e.src], &l.elements[e.dst]);
            for (slot, v) in v.into_iter().enumerate() {
                s.align[1][slot].push(v);
            }
        }
    }
    s
}

fn hist(lo: f64, hi: f64, values: impl IntoIterator<Item = f64>) -> StatValue {
    let mut h = Histogram::schema(lo, hi);
    for v in values {
        h.add(v);
    }
    StatValue::Histogram(h)
}

fn build(mode: LayoutMode, types: &TypeSchema, all: &[Samples]) -> Vec<Stat> {
    let t = types.len();
    let floor = mode == LayoutMode::FloorPlan;
    let counted: Vec<usize> = (0..t)
        .filter(|&k| !floor || Some(k) != types.exterior_id())
        .collect();
    let n = all.len().max(1) as f64;
    let name = |k: usize| types.name(k).unwrap_or("?").to_string();
    let mut out = Vec::new();
    let mut push = |name: String, family: Family, value: StatValue| {
        out.push(Stat {
            name,
            family,
            value,
        })
    };
    let mean_of = |f: &dyn Fn(&Samples) -> &Vec<f64>, len: usize| -> Vec<f64> {
        let mut acc = vec![0.0; len];
        for s in all {
            for (a, v) in acc.iter_mut().zip(f(s)) {
                *a += v;
            }
        }
        acc.iter().map(|a| a / n).collect()
    };

    use Family::*;
    let counts = mean_of(&|s| &s.count, t);
    push(
        "t.count_mean".into(),
        Topological,
        StatValue::Scalars(counted.iter().map(|&k| counts[k]).collect()),
    );
    for &k in &counted {
        push(
            format!("t.count.{}", name(k)),
            Topological,
            hist(0.0, 32.0, all.iter().map(|s| s.count[k])),
        );
    }
    let pairs = t * (t + 1) / 2;
    push(
        "t.connections".into(),
        Topological,
        StatValue::Scalars(mean_of(&|s| &s.connections, pairs)),
    );
    let (sum, cnt) = (
        mean_of(&|s| &s.dist_sum, pairs),
        mean_of(&|s| &s.dist_n, pairs),
    );
    let dist = sum
        .iter()
        .zip(&cnt)
        .map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 })
        .collect();
    push("t.distance".into(), Topological, StatValue::Scalars(dist));
    if floor {
        push(
            "t.exterior_distance".into(),
            Topological,
            hist(
                0.0,
                32.0,
                all.iter().flat_map(|s| s.ext_dist.iter().copied()),
            ),
        );
    }
    for &k in &counted {
        push(
            format!("t.degree.{}", name(k)),
            Topological,
            hist(
                0.0,
                32.0,
                all.iter().flat_map(|s| s.degree[k].iter().copied()),
            ),
        );
    }
    if floor {
        let inacc = mean_of(&|s| &s.inaccessible, t);
        push(
            "t.inaccessible".into(),
            Topological,
            StatValue::Scalars(counted.iter().map(|&k| inacc[k]).collect()),
        );
    }

    for &k in &counted {
        push(
            format!("r.center_x.{}", name(k)),
            Shape,
            hist(
                0.0,
                64.0,
                all.iter().flat_map(|s| s.center[k].iter().map(|c| c.0)),
            ),
        );
        push(
            format!("r.center_y.{}", name(k)),
            Shape,
            hist(
                0.0,
                64.0,
                all.iter().flat_map(|s| s.center[k].iter().map(|c| c.1)),
            ),
        );
    }
    push(
        "r.area".into(),
        Shape,
        hist(0.0, 1024.0, all.iter().flat_map(|s| s.area.iter().copied())),
    );
    push(
        "r.aspect".into(),
        Shape,
        hist(0.0, 8.0, all.iter().flat_map(|s| s.aspect.iter().copied())),
    );
    if !floor {
        push(
            "r.orientation".into(),
            Shape,
            hist(
                0.0,
                TAU,
                all.iter().flat_map(|s| s.orientation.iter().copied()),
            ),
        );
    }

    let groups: &[(usize, &str)] = if floor {
        &[(0, "all"), (1, "desc")]
    } else {
        &[(0, "all")]
    };
    for &(g, prefix) in groups {
        for (slot, stat) in ALIGN_NAMES.iter().enumerate() {
            let lo = if *stat == "gap" { -64.0 } else { 0.0 };
            push(
                format!("a.{prefix}.{stat}"),
                Alignment,
                hist(
                    lo,
                    64.0,
                    all.iter().flat_map(|s| s.align[g][slot].iter().copied()),
                ),
            );
        }
    }
    if !floor {
        for (slot, (stat, hi)) in [
            ("orientation_diff", PI),
            ("width_diff", 64.0),
            ("height_diff", 64.0),
        ]
        .into_iter()
        .enumerate()
        {
            push(
                format!("a.all.{stat}"),
                Alignment,
                hist(
                    0.0,
                    hi,
                    all.iter().flat_map(|s| s.furniture[slot].iter().copied()),
                ),
            );
        }
    }
    out
}

/// All three statistic families of a corpus.
pub fn compute_stats(
    mode: LayoutMode,
    types: &TypeSchema,
    corpus: &[Layout],
) -> Result<StatSet, SchemaError> {
    if let Some(i) = corpus.iter().position(|l| l.mode != mode) {
        return Err(SchemaError::Mode(i));
    }
    let t = types.len();
    for (layout, l) in corpus.iter().enumerate() {
        if let Some(e) = l.elements.iter().find(|e| e.elem_type >= t) {
            return Err(SchemaError::Type {
                layout,
                elem_type: e.elem_type,
            });
        }
    }
    let all: Vec<Samples> = corpus.par_iter().map(|l| samples(l, t)).collect();
    Ok(StatSet {
        mode,
        n_layouts: corpus.len(),
        stats: build(mode, types, &all),
    })
}

fn family(
    mode: LayoutMode,
    types: &TypeSchema,
    corpus: &[Layout],
    f: Family,
) -> Result<Vec<Stat>, SchemaError> {
    let set = compute_stats(mode, types, corpus)?;
    Ok(set.stats.into_iter().filter(|s| s.family == f).collect())
}

pub fn topo_stats(
    mode: LayoutMode,
    types: &TypeSchema,
    corpus: &[Layout],
) -> Result<Vec<Stat>, SchemaError> {
    family(mode, types, corpus, Family::Topological)
}

pub fn shape_stats(
    mode: LayoutMode,
    types: &TypeSchema,
    corpus: &[Layout],
) -> Result<Vec<Stat>, SchemaError> {
    family(mode, types, corpus, Family::Shape)
}

pub fn align_stats(
    mode: LayoutMode,
    types: &TypeSchema,
    corpus: &[Layout],
) -> Result<Vec<Stat>, SchemaError> {
    family(mode, types, corpus, Family::Alignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Element;

    #[test]
    fn pair_indices_are_dense() {
        let t = 5;
        let mut seen: Vec<usize> = (0..t)
            .flat_map(|a| (a..t).map(move |b| pair_index(a, b, t)))
            .collect();
        seen.sort();
        assert_eq!(seen, (0..t * (t + 1) / 2).collect::<Vec<_>>());
        assert_eq!(pair_index(3, 1, t), pair_index(1, 3, t));
    }

    #[test]
    fn gap_of_overlapping_squares() {
        let a = Element::new(1, 0.0, 0.0, 1.0, 1.0);
        let b = Element::new(1, 0.5, 0.0, 1.0, 1.0);
        assert_eq!(align_values(&a, &b)[2], -0.5);
        let c = Element::new(1, 1.0, 0.0, 1.0, 1.0);
        let v = align_values(&a, &c);
        assert_eq!((v[2], v[4]), (0.0, 0.0));
    }
}
