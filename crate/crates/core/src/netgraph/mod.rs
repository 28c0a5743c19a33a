//! Road network, capacity-normalized movement graph and all-pairs travel costs.
//!
//! Nodes of the movement graph are the links of the road network. An edge
//! `i -> j` exists when a vehicle leaving link `i` can enter link `j`, and its
//! weight is the mean of the two links' capacity-normalized traversal times,
//! `½ (l_i / (v_i n_i) + l_j / (v_j n_j))`.

mod grid;
mod io;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{generate_grid_network, generate_ring_core_network};
pub use io::{
    parse_network, read_distance_matrix, read_network, write_distance_matrix, write_network,
};

pub type LinkId = usize;
pub type NodeId = u64;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("link {id}: {reason}")]
    InvalidLink { id: LinkId, reason: String },
    #[error("link ids must be exactly 0..{n} (missing or duplicate id {id})")]
    NonContiguousIds { n: usize, id: LinkId },
    #[error("movement graph is not strongly connected: link {to} cannot be reached from link {from}")]
    NotStronglyConnected { from: LinkId, to: LinkId },
    #[error("no path from link {from} to link {to}")]
    Unreachable { from: LinkId, to: LinkId },
    #[error("link id {id} out of range for {n} links")]
    OutOfRange { id: LinkId, n: usize },
    #[error("grid must have at least 2 rows and 2 columns (got {rows}x{cols})")]
    DegenerateGrid { rows: usize, cols: usize },
    #[error("invalid grid parameter: {0}")]
    InvalidGridParameter(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("distance matrix file: {0}")]
    MatrixFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A directed road segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub from_node: NodeId,
    pub to_node: NodeId,
    /// Meters.
    pub length: f64,
    /// Meters per second.
    pub speed: f64,
    pub lanes: u32,
    /// Geometric midpoint, used by coordinate-space clustering baselines.
    pub midpoint: [f64; 2],
}

impl Link {
    /// Capacity-normalized traversal cost `l / (v n)` in seconds.
    pub fn normalized_cost(&self) -> f64 {
        self.length / (self.speed * self.lanes as f64)
    }

    fn validate(&self) -> Result<(), NetworkError> {
        let bad = |reason: &str| {
            Err(NetworkError::InvalidLink {
                id: self.id,
                reason: reason.to_string(),
            })
        };
        if !(self.length.is_finite() && self.length > 0.0) {
            return bad("length must be positive");
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return bad("speed must be positive");
        }
        if self.lanes < 1 {
            return bad("lanes must be at least 1");
        }
        if !(self.midpoint[0].is_finite() && self.midpoint[1].is_finite()) {
            return bad("midpoint must be finite");
        }
        Ok(())
    }
}

/// Links indexed by id, plus explicitly banned movements.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadNetwork {
    links: Vec<Link>,
    banned: HashSet<(LinkId, LinkId)>,
}

impl RoadNetwork {
    /// Links may be given in any order but their ids must be exactly `0..n`.
    pub fn new(mut links: Vec<Link>) -> Result<Self, NetworkError> {
        links.sort_by_key(|l| l.id);
        let n = links.len();
        for (pos, link) in links.iter().enumerate() {
            if link.id != pos {
                return Err(NetworkError::NonContiguousIds { n, id: pos });
            }
            link.validate()?;
        }
        Ok(Self {
            links,
            banned: HashSet::new(),
        })
    }

    pub fn ban_movement(&mut self, from: LinkId, to: LinkId) -> Result<(), NetworkError> {
        for id in [from, to] {
            if id >= self.links.len() {
                return Err(NetworkError::OutOfRange {
                    id,
                    n: self.links.len(),
                });
            }
        }
        self.banned.insert((from, to));
        Ok(())
    }

    pub fn is_banned(&self, from: LinkId, to: LinkId) -> bool {
        self.banned.contains(&(from, to))
    }

    pub fn banned_movements(&self) -> Vec<(LinkId, LinkId)> {
        let mut bans: Vec<_> = self.banned.iter().copied().collect();
        bans.sort_unstable();
        bans
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> Option<&Link> {
        self.links.get(id)
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Appends a link; its id is assigned as the next free index.
    pub fn push_link(&mut self, mut link: Link) -> Result<LinkId, NetworkError> {
        link.id = self.links.len();
        link.validate()?;
        self.links.push(link);
        Ok(self.links.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MovementOptions {
    /// Permit a vehicle on link `i` to enter the link running the opposite
    /// direction between the same two nodes.
    pub allow_u_turns: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Movement {
    pub to: LinkId,
    pub weight: f64,
}

/// Link-to-link movement graph. Always strongly connected once built.
#[derive(Debug, Clone)]
pub struct MovementGraph {
    out: Vec<Vec<Movement>>,
    // Half of each link's own length, so a move i -> j covers ½(l_i + l_j).
    half_lengths: Vec<f64>,
}

impl MovementGraph {
    /// Builds a graph from raw weighted edges without a road network behind it.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (LinkId, LinkId, f64)>,
    ) -> Result<Self, NetworkError> {
        let mut out = vec![Vec::new(); n];
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(NetworkError::OutOfRange { id: i.max(j), n });
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(NetworkError::InvalidLink {
                    id: i,
                    reason: format!("movement weight to {j} must be positive, got {w}"),
                });
            }
            out[i].push(Movement { to: j, weight: w });
        }
        for edges in &mut out {
            edges.sort_by_key(|m| m.to);
        }
        let graph = Self {
            out,
            half_lengths: vec![0.0; n],
        };
        graph.check_strongly_connected()?;
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.out.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn movements(&self, from: LinkId) -> &[Movement] {
        &self.out[from]
    }

    pub fn weight(&self, from: LinkId, to: LinkId) -> Option<f64> {
        self.out
            .get(from)?
            .iter()
            .find(|m| m.to == to)
            .map(|m| m.weight)
    }

    /// Physical distance in meters covered by the move `from -> to`.
    pub fn movement_length(&self, from: LinkId, to: LinkId) -> f64 {
        self.half_lengths[from] + self.half_lengths[to]
    }

    pub fn edges(&self) -> impl Iterator<Item = (LinkId, LinkId, f64)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, ms)| ms.iter().map(move |m| (i, m.to, m.weight)))
    }

    fn check_strongly_connected(&self) -> Result<(), NetworkError> {
        let n = self.out.len();
        if n == 0 {
            return Ok(());
        }
        let mut reverse = vec![Vec::new(); n];
        for (i, ms) in self.out.iter().enumerate() {
            for m in ms {
                reverse[m.to].push(i);
            }
        }
        let forward: Vec<Vec<usize>> = self
            .out
            .iter()
            .map(|ms| ms.iter().map(|m| m.to).collect())
            .collect();
        if let Some(missing) = first_unreached(&forward, 0) {
            return Err(NetworkError::NotStronglyConnected {
                from: 0,
                to: missing,
            });
        }
        if let Some(missing) = first_unreached(&reverse, 0) {
            return Err(NetworkError::NotStronglyConnected {
                from: missing,
                to: 0,
            });
        }
        Ok(())
    }
}

fn first_unreached(adj: &[Vec<usize>], start: usize) -> Option<usize> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.iter().position(|s| !s)
}

/// Builds the movement graph: `i -> j` whenever link `j` starts where link `i`
/// ends, unless the movement is banned or is a U-turn (when disallowed).
pub fn build_movement_graph(
    network: &RoadNetwork,
    options: MovementOptions,
) -> Result<MovementGraph, NetworkError> {
    let links = network.links();
    let mut by_from: std::collections::HashMap<NodeId, Vec<LinkId>> =
        std::collections::HashMap::new();
    for link in links {
        by_from.entry(link.from_node).or_default().push(link.id);
    }
    let mut out = Vec::with_capacity(links.len());
    for li in links {
        let mut moves = Vec::new();
        if let Some(next) = by_from.get(&li.to_node) {
            for &j in next {
                let lj = &links[j];
                if j == li.id || network.is_banned(li.id, j) {
                    continue;
                }
                if !options.allow_u_turns && lj.to_node == li.from_node {
                    continue;
                }
                moves.push(Movement {
                    to: j,
                    weight: 0.5 * (li.normalized_cost() + lj.normalized_cost()),
                });
            }
        }
        moves.sort_by_key(|m| m.to);
        out.push(moves);
    }
    let graph = MovementGraph {
        out,
        half_lengths: links.iter().map(|l| 0.5 * l.length).collect(),
    };
    graph.check_strongly_connected()?;
    Ok(graph)
}

/// Dense row-major matrix of shortest travel costs in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, NetworkError> {
        let n = rows.len();
        let mut d = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(NetworkError::MatrixFormat(format!(
                    "row of length {} in {n}x{n} matrix",
                    row.len()
                )));
            }
            d.extend(row);
        }
        Self::from_flat(n, d)
    }

    pub fn from_flat(n: usize, d: Vec<f64>) -> Result<Self, NetworkError> {
        if d.len() != n * n {
            return Err(NetworkError::MatrixFormat(format!(
                "expected {} entries, got {}",
                n * n,
                d.len()
            )));
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

/// Shortest travel costs between links. Out-of-range ids are an error.
pub fn travel_time(from: LinkId, to: LinkId, matrix: &DistanceMatrix) -> Result<f64, NetworkError> {
    let n = matrix.len();
    for id in [from, to] {
        if id >= n {
            return Err(NetworkError::OutOfRange { id, n });
        }
    }
    Ok(matrix.get(from, to))
}

/// Distances plus the first hop of each shortest path, for routing vehicles.
#[derive(Debug, Clone)]
pub struct ShortestPaths {
    pub distances: DistanceMatrix,
    next_hop: Vec<u32>,
}

impl ShortestPaths {
    /// The link to enter next when travelling from `from` toward `to`.
    /// Returns `to` itself when the two are adjacent, and `from` when equal.
    pub fn next_hop(&self, from: LinkId, to: LinkId) -> LinkId {
        self.next_hop[from * self.distances.len() + to] as LinkId
    }

    /// Full link sequence from `from` to `to`, excluding `from`.
    pub fn path(&self, from: LinkId, to: LinkId) -> Vec<LinkId> {
        let mut path = Vec::new();
        let mut at = from;
        while at != to {
            at = self.next_hop(at, to);
            path.push(at);
        }
        path
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra returning (distances, first hop per target).
fn dijkstra(graph: &MovementGraph, source: usize) -> (Vec<f64>, Vec<u32>) {
    let n = graph.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut first = vec![u32::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    first[source] = source as u32;
    heap.push(HeapEntry {
        cost: 0.0,
        node: source,
    });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for m in graph.movements(node) {
            let next = cost + m.weight;
            if next < dist[m.to] {
                dist[m.to] = next;
                first[m.to] = if node == source {
                    m.to as u32
                } else {
                    first[node]
                };
                heap.push(HeapEntry {
                    cost: next,
                    node: m.to,
                });
            }
        }
    }
    (dist, first)
}

/// Dijkstra from every source, run in parallel.
pub fn all_pairs_shortest_paths(graph: &MovementGraph) -> Result<ShortestPaths, NetworkError> {
    let n = graph.node_count();
    let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..n).into_par_iter().map(|s| dijkstra(graph, s)).collect();
    let mut d = Vec::with_capacity(n * n);
    let mut next_hop = Vec::with_capacity(n * n);
    for (from, (dist, first)) in rows.into_iter().enumerate() {
        if let Some(to) = dist.iter().position(|x| !x.is_finite()) {
            return Err(NetworkError::Unreachable { from, to });
        }
        d.extend(dist);
        next_hop.extend(first);
    }
    Ok(ShortestPaths {
        distances: DistanceMatrix { n, d },
        next_hop,
    })
}

pub fn all_pairs_distances(graph: &MovementGraph) -> Result<DistanceMatrix, NetworkError> {
    all_pairs_shortest_paths(graph).map(|sp| sp.distances)
}
