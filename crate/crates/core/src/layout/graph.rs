use std::collections::{BTreeSet, VecDeque};

use super::{EdgeKind, Layout};

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(len: usize) -> Self {
        Self {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Sets as sorted index lists, ordered by their smallest member.
    pub fn sets(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut slot = vec![usize::MAX; n];
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let r = self.find(i);
            if slot[r] == usize::MAX {
                slot[r] = out.len();
                out.push(Vec::new());
            }
            out[slot[r]].push(i);
        }
        out
    }
}

/// Groups elements into rooms: same-type elements joined by an adjacency
/// edge and not separated by a wall edge belong to one room.
pub fn merge_rooms(layout: &Layout) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(layout.len());
    let walls: BTreeSet<(usize, usize)> =
        layout.edges_of(EdgeKind::Wall).map(|e| e.pair()).collect();
    for e in layout.edges.iter().filter(|e| e.kind.is_adjacency()) {
        if e.src >= layout.len() || e.dst >= layout.len() {
            continue;
        }
        let same_type = layout.elements[e.src].elem_type == layout.elements[e.dst].elem_type;
        if same_type && !walls.contains(&e.pair()) {
            uf.union(e.src, e.dst);
        }
    }
    uf.sets()
}

/// Door connectivity over rooms plus a single exterior node.
///
/// Node `i < rooms.len()` is room `i`; node `rooms.len()` is the exterior.
/// Door edges touching exterior-type elements attach to the exterior node,
/// so rooms made of exterior elements stay isolated.
#[derive(Clone, Debug)]
pub struct RoomGraph {
    pub rooms: Vec<Vec<usize>>,
    pub room_of: Vec<usize>,
    pub room_type: Vec<usize>,
    pub room_is_exterior: Vec<bool>,
    pub adj: Vec<BTreeSet<usize>>,
}

impl RoomGraph {
    pub fn exterior(&self) -> usize {
        self.rooms.len()
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Breadth-first hop counts from `start`; `None` when unreachable.
    pub fn bfs(&self, start: usize) -> Vec<Option<usize>> {
        bfs(&self.adj, start)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adj[node].len()
    }

    /// Non-exterior rooms.
    pub fn interior_rooms(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.rooms.len()).filter(|&r| !self.room_is_exterior[r])
    }
}

pub(crate) fn bfs(adj: &[BTreeSet<usize>], start: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    dist[start] = Some(0);
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap_or(0);
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

pub fn door_graph(layout: &Layout) -> RoomGraph {
    let rooms = merge_rooms(layout);
    let mut room_of = vec![0; layout.len()];
    for (r, members) in rooms.iter().enumerate() {
        for &i in members {
            room_of[i] = r;
        }
    }
    let room_type: Vec<usize> = rooms
        .iter()
        .map(|m| layout.elements[m[0]].elem_type)
        .collect();
    let room_is_exterior: Vec<bool> = rooms.iter().map(|m| layout.is_exterior(m[0])).collect();
    let exterior = rooms.len();
    let node_of = |i: usize| {
        if layout.is_exterior(i) {
            exterior
        } else {
            room_of[i]
        }
    };
    let mut adj = vec![BTreeSet::new(); rooms.len() + 1];
    for e in layout.edges_of(EdgeKind::Door) {
        if e.src >= layout.len() || e.dst >= layout.len() {
            continue;
        }
        let (a, b) = (node_of(e.src), node_of(e.dst));
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    RoomGraph {
        rooms,
        room_of,
        room_type,
        room_is_exterior,
        adj,
    }
}
