//! Road network, parking spots, the edge-based action space and routing.
//!
//! An action targets a directed edge that hosts at least one parking spot;
//! executing it walks the officer to the *end* of that edge along the
//! minimum-travel-time route. Routes are deterministic: among equal-cost
//! routes the lexicographically smallest sequence of file edge ids wins.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SPEED_KMH: f64 = 5.0;

/// Spot max duration assigned by [`synth_grid`].
pub const SYNTH_MAX_DURATION_S: f64 = 3600.0;

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: u64,
    pub from: usize,
    pub to: usize,
    pub travel_time: f64,
}

/// Directed road graph. Vertices and edges keep their file ids; internally
/// everything is addressed by dense index.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    vertex_index: HashMap<u64, usize>,
    edge_index: HashMap<u64, usize>,
}

/// Edge as written in a graph file, referencing vertices by file id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeRecord {
    pub id: u64,
    pub from: u64,
    pub to: u64,
    pub travel_time: f64,
}

impl RoadGraph {
    pub fn from_records(vertices: Vec<Vertex>, edge_records: &[EdgeRecord]) -> Result<Self> {
        let mut vertex_index = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if vertex_index.insert(v.id, i).is_some() {
                return Err(Error::DanglingReference(format!("duplicate vertex id {}", v.id)));
            }
        }
        let mut edges = Vec::with_capacity(edge_records.len());
        let mut edge_index = HashMap::with_capacity(edge_records.len());
        for r in edge_records {
            let from = *vertex_index.get(&r.from).ok_or_else(|| {
                Error::DanglingReference(format!("edge {} references missing vertex {}", r.id, r.from))
            })?;
            let to = *vertex_index.get(&r.to).ok_or_else(|| {
                Error::DanglingReference(format!("edge {} references missing vertex {}", r.id, r.to))
            })?;
            if !(r.travel_time.is_finite() && r.travel_time > 0.0) {
                return Err(Error::Config(format!(
                    "edge {} has non-positive travel time {}",
                    r.id, r.travel_time
                )));
            }
            if edge_index.insert(r.id, edges.len()).is_some() {
                return Err(Error::DanglingReference(format!("duplicate edge id {}", r.id)));
            }
            edges.push(Edge {
                id: r.id,
                from,
                to,
                travel_time: r.travel_time,
            });
        }
        let mut out_edges = vec![Vec::new(); vertices.len()];
        let mut in_edges = vec![Vec::new(); vertices.len()];
        for (i, e) in edges.iter().enumerate() {
            out_edges[e.from].push(i);
            in_edges[e.to].push(i);
        }
        for list in out_edges.iter_mut().chain(in_edges.iter_mut()) {
            list.sort_by_key(|&e| edges[e].id);
        }
        Ok(RoadGraph {
            vertices,
            edges,
            out_edges,
            in_edges,
            vertex_index,
            edge_index,
        })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    pub fn vertex(&self, idx: usize) -> &Vertex {
        &self.vertices[idx]
    }

    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.out_edges[v]
    }

    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.in_edges[v]
    }

    pub fn vertex_by_id(&self, id: u64) -> Option<usize> {
        self.vertex_index.get(&id).copied()
    }

    pub fn edge_by_id(&self, id: u64) -> Option<usize> {
        self.edge_index.get(&id).copied()
    }

    /// Point at `offset` in [0,1] along an edge.
    pub fn point_on_edge(&self, edge: usize, offset: f64) -> (f64, f64) {
        let e = &self.edges[edge];
        let (a, b) = (&self.vertices[e.from], &self.vertices[e.to]);
        (a.x + offset * (b.x - a.x), a.y + offset * (b.y - a.y))
    }

    /// (min_x, min_y, max_x, max_y) over all vertices.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), v| (a.min(v.x), b.min(v.y), c.max(v.x), d.max(v.y)),
        )
    }

    /// Travel time from every vertex to `target` (infinite when unreachable).
    pub fn distances_to(&self, target: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.vertices.len()];
        let mut heap = BinaryHeap::new();
        dist[target] = 0.0;
        heap.push(HeapEntry(0.0, target));
        while let Some(HeapEntry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &e in &self.in_edges[u] {
                let edge = &self.edges[e];
                let nd = d + edge.travel_time;
                if nd < dist[edge.from] {
                    dist[edge.from] = nd;
                    heap.push(HeapEntry(nd, edge.from));
                }
            }
        }
        dist
    }

    fn reachable(&self, start: usize, forward: bool) -> Vec<bool> {
        let mut seen = vec![false; self.vertices.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            let adj = if forward { &self.out_edges[u] } else { &self.in_edges[u] };
            for &e in adj {
                let edge = &self.edges[e];
                let w = if forward { edge.to } else { edge.from };
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen
    }
}

/// Min-heap entry keyed on distance.
struct HeapEntry(f64, usize);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParkingSpot {
    /// Dense index in 0..|P|.
    pub id: usize,
    /// Dense index of the host edge.
    pub edge: usize,
    pub offset: f64,
    pub x: f64,
    pub y: f64,
    pub max_duration: f64,
}

/// Ordered spot-hosting edges. Actions are sorted by file edge id.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    edges: Vec<usize>,
    spots: Vec<Vec<usize>>,
    spot_action: Vec<usize>,
    edge_slot: Vec<Option<usize>>,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Dense edge index targeted by action `a`.
    pub fn edge(&self, a: usize) -> usize {
        self.edges[a]
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    /// Spots on the target edge of action `a`.
    pub fn spots(&self, a: usize) -> &[usize] {
        &self.spots[a]
    }

    pub fn action_of_spot(&self, spot: usize) -> usize {
        self.spot_action[spot]
    }

    pub fn action_of_edge(&self, edge: usize) -> Option<usize> {
        self.edge_slot.get(edge).copied().flatten()
    }
}

pub fn derive_actions(graph: &RoadGraph, spots: &[ParkingSpot]) -> Result<ActionSpace> {
    if spots.is_empty() {
        return Err(Error::EmptyActionSpace);
    }
    let mut hosting: Vec<usize> = spots.iter().map(|s| s.edge).collect();
    hosting.sort_by_key(|&e| graph.edge(e).id);
    hosting.dedup();
    let mut edge_slot = vec![None; graph.edges().len()];
    for (a, &e) in hosting.iter().enumerate() {
        edge_slot[e] = Some(a);
    }
    let mut per_action = vec![Vec::new(); hosting.len()];
    let mut spot_action = vec![0; spots.len()];
    for s in spots {
        let a = edge_slot[s.edge].expect("hosting edge");
        per_action[a].push(s.id);
        spot_action[s.id] = a;
    }
    for list in &mut per_action {
        list.sort_unstable();
    }
    Ok(ActionSpace {
        edges: hosting,
        spots: per_action,
        spot_action,
        edge_slot,
    })
}

/// Every vertex touching a spot-hosting edge must reach every other one.
/// A single hosting edge has nothing to reach and always passes.
pub fn check_routable_core(graph: &RoadGraph, spots: &[ParkingSpot]) -> Result<()> {
    let mut hosting: Vec<usize> = spots.iter().map(|s| s.edge).collect();
    hosting.sort_unstable();
    hosting.dedup();
    if hosting.len() < 2 {
        return Ok(());
    }
    let mut core: Vec<usize> = spots
        .iter()
        .flat_map(|s| {
            let e = graph.edge(s.edge);
            [e.from, e.to]
        })
        .collect();
    core.sort_unstable();
    core.dedup();
    let Some(&root) = core.first() else {
        return Ok(());
    };
    for forward in [true, false] {
        let seen = graph.reachable(root, forward);
        if let Some(&v) = core.iter().find(|&&v| !seen[v]) {
            let (a, b) = if forward { (root, v) } else { (v, root) };
            return Err(Error::Disconnected(format!(
                "vertex {} cannot reach vertex {}",
                graph.vertex(a).id,
                graph.vertex(b).id
            )));
        }
    }
    Ok(())
}

/// Where a route starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Position {
    Vertex(usize),
    /// At the end vertex of an edge the officer just walked.
    EndOfEdge(usize),
    /// Partway along an edge, `offset` in [0,1].
    OnEdge { edge: usize, offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassBy {
    pub spot: usize,
    /// Travel time from the route origin to the spot, seconds.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub origin: Position,
    pub target: usize,
    /// Dense edge indices; the first one may be partial for `OnEdge` origins.
    pub edges: Vec<usize>,
    pub duration: f64,
    pub pass_by: Vec<PassBy>,
}

impl Route {
    /// Route that stays on the target edge end (no movement).
    pub fn is_stationary(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Graph, spots and action space bundled for routing.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub graph: RoadGraph,
    pub spots: Vec<ParkingSpot>,
    pub actions: ActionSpace,
    /// Spots per dense edge index, ordered by offset then id.
    spots_on_edge: Vec<Vec<usize>>,
}

impl RoadNetwork {
    pub fn new(graph: RoadGraph, spots: Vec<ParkingSpot>) -> Result<Self> {
        check_routable_core(&graph, &spots)?;
        let actions = derive_actions(&graph, &spots)?;
        let mut spots_on_edge = vec![Vec::new(); graph.edges().len()];
        for s in &spots {
            spots_on_edge[s.edge].push(s.id);
        }
        for list in &mut spots_on_edge {
            list.sort_by(|&a, &b| {
                spots[a]
                    .offset
                    .total_cmp(&spots[b].offset)
                    .then(a.cmp(&b))
            });
        }
        Ok(RoadNetwork {
            graph,
            spots,
            actions,
            spots_on_edge,
        })
    }

    pub fn spots_on_edge(&self, edge: usize) -> &[usize] {
        &self.spots_on_edge[edge]
    }

    /// Vertex the route search starts from plus the optional partial-edge prefix.
    fn describe(&self, source: Position) -> String {
        match source {
            Position::Vertex(v) => format!("vertex {}", self.graph.vertex(v).id),
            Position::EndOfEdge(e) => format!("end of edge {}", self.graph.edge(e).id),
            Position::OnEdge { edge, offset } => {
                format!("edge {} at offset {offset}", self.graph.edge(edge).id)
            }
        }
    }

    /// Route to action `target` given travel times to the start vertex of
    /// its edge (from [`RoadGraph::distances_to`]).
    pub fn route_with(&self, dist_to_start: &[f64], source: Position, target: usize) -> Result<Route> {
        let target_edge = self.actions.edge(target);
        let mut edges = Vec::new();
        let mut pass_by = Vec::new();
        let mut elapsed = 0.0;
        let walk_from = match source {
            Position::EndOfEdge(e) if e == target_edge => {
                return Ok(Route {
                    origin: source,
                    target,
                    edges,
                    duration: 0.0,
                    pass_by: self
                        .actions
                        .spots(target)
                        .iter()
                        .map(|&spot| PassBy { spot, time: 0.0 })
                        .collect(),
                });
            }
            Position::EndOfEdge(e) => self.graph.edge(e).to,
            Position::Vertex(v) => v,
            Position::OnEdge { edge, offset } => {
                let offset = offset.clamp(0.0, 1.0);
                let tt = self.graph.edge(edge).travel_time;
                for &s in &self.spots_on_edge[edge] {
                    let so = self.spots[s].offset;
                    if so >= offset {
                        pass_by.push(PassBy {
                            spot: s,
                            time: (so - offset) * tt,
                        });
                    }
                }
                edges.push(edge);
                elapsed = (1.0 - offset) * tt;
                if edge == target_edge {
                    return Ok(Route {
                        origin: source,
                        target,
                        edges,
                        duration: elapsed,
                        pass_by,
                    });
                }
                self.graph.edge(edge).to
            }
        };
        let goal = self.graph.edge(target_edge).from;
        if !dist_to_start[walk_from].is_finite() {
            return Err(Error::Unreachable {
                source_desc: self.describe(source),
                target,
            });
        }
        let mut u = walk_from;
        while u != goal {
            let du = dist_to_start[u];
            let tol = 1e-9 * du.max(1.0);
            // Out-edges are sorted by file id, so the first tight edge is the
            // lexicographically smallest continuation.
            let next = self.graph.out_edges(u).iter().copied().find(|&e| {
                let edge = self.graph.edge(e);
                let dw = dist_to_start[edge.to];
                dw.is_finite() && (edge.travel_time + dw - du).abs() <= tol
            });
            let Some(e) = next else {
                return Err(Error::Unreachable {
                    source_desc: self.describe(source),
                    target,
                });
            };
            self.push_edge(e, &mut edges, &mut pass_by, &mut elapsed);
            u = self.graph.edge(e).to;
        }
        self.push_edge(target_edge, &mut edges, &mut pass_by, &mut elapsed);
        Ok(Route {
            origin: source,
            target,
            edges,
            duration: elapsed,
            pass_by,
        })
    }

    fn push_edge(&self, e: usize, edges: &mut Vec<usize>, pass_by: &mut Vec<PassBy>, elapsed: &mut f64) {
        let tt = self.graph.edge(e).travel_time;
        for &s in &self.spots_on_edge[e] {
            pass_by.push(PassBy {
                spot: s,
                time: *elapsed + self.spots[s].offset * tt,
            });
        }
        edges.push(e);
        *elapsed += tt;
    }
}

/// Minimum-travel-time route from `source` to the end of action `target`'s edge.
pub fn shortest_path(net: &RoadNetwork, source: Position, target: usize) -> Result<Route> {
    let goal = net.graph.edge(net.actions.edge(target)).from;
    let dist = net.graph.distances_to(goal);
    net.route_with(&dist, source, target)
}

/// Precomputed routes from every post-action position to every action, plus
/// a lazily filled table for other start vertices.
#[derive(Debug)]
pub struct PathCache {
    net: Arc<RoadNetwork>,
    dist_to_action: Vec<Vec<f64>>,
    after_action: Vec<Arc<Vec<Route>>>,
    from_vertex: RwLock<HashMap<usize, Arc<Vec<Route>>>>,
}

impl PathCache {
    pub fn build(net: Arc<RoadNetwork>, extra_vertices: &[usize]) -> Result<Self> {
        let n = net.actions.len();
        let dist_to_action: Vec<Vec<f64>> = (0..n)
            .map(|a| net.graph.distances_to(net.graph.edge(net.actions.edge(a)).from))
            .collect();
        let mut after_action = Vec::with_capacity(n);
        for a in 0..n {
            let origin = Position::EndOfEdge(net.actions.edge(a));
            let routes = (0..n)
                .map(|t| net.route_with(&dist_to_action[t], origin, t))
                .collect::<Result<Vec<_>>>()?;
            after_action.push(Arc::new(routes));
        }
        let cache = PathCache {
            net,
            dist_to_action,
            after_action,
            from_vertex: RwLock::new(HashMap::new()),
        };
        for &v in extra_vertices {
            cache.routes_from(Position::Vertex(v))?;
        }
        Ok(cache)
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.net
    }

    /// Number of cached (origin, action) routes.
    pub fn len(&self) -> usize {
        let n = self.net.actions.len();
        let extra = self.from_vertex.read().map(|m| m.len()).unwrap_or(0);
        (self.after_action.len() + extra) * n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Routes to every action from `origin`. `OnEdge` origins are computed
    /// on demand and not cached.
    pub fn routes_from(&self, origin: Position) -> Result<Arc<Vec<Route>>> {
        let vertex = match origin {
            Position::EndOfEdge(e) => {
                if let Some(a) = self.net.actions.action_of_edge(e) {
                    return Ok(Arc::clone(&self.after_action[a]));
                }
                self.net.graph.edge(e).to
            }
            Position::Vertex(v) => v,
            Position::OnEdge { .. } => {
                let routes = (0..self.net.actions.len())
                    .map(|t| self.net.route_with(&self.dist_to_action[t], origin, t))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(Arc::new(routes));
            }
        };
        if let Some(r) = self.from_vertex.read().expect("path cache lock").get(&vertex) {
            return Ok(Arc::clone(r));
        }
        let routes = (0..self.net.actions.len())
            .map(|t| {
                self.net
                    .route_with(&self.dist_to_action[t], Position::Vertex(vertex), t)
            })
            .collect::<Result<Vec<_>>>()?;
        let routes = Arc::new(routes);
        self.from_vertex
            .write()
            .expect("path cache lock")
            .entry(vertex)
            .or_insert_with(|| Arc::clone(&routes));
        Ok(routes)
    }

    pub fn route(&self, origin: Position, target: usize) -> Result<Route> {
        Ok(self.routes_from(origin)?[target].clone())
    }

    pub fn after_action(&self, a: usize) -> &Arc<Vec<Route>> {
        &self.after_action[a]
    }
}

/// Travel time and spot count between action targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeInfoMatrix {
    n: usize,
    travel: Vec<f64>,
    spots: Vec<usize>,
}

impl EdgeInfoMatrix {
    pub fn build(cache: &PathCache) -> Self {
        let n = cache.network().actions.len();
        let mut travel = Vec::with_capacity(n * n);
        let mut spots = Vec::with_capacity(n * n);
        for a in 0..n {
            for route in cache.after_action(a).iter() {
                travel.push(route.duration);
                spots.push(route.pass_by.len());
            }
        }
        EdgeInfoMatrix { n, travel, spots }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn travel_time(&self, a: usize, b: usize) -> f64 {
        self.travel[a * self.n + b]
    }

    pub fn spot_count(&self, a: usize, b: usize) -> usize {
        self.spots[a * self.n + b]
    }
}

/// Build a `rows x cols` grid with bidirectional edges and at most one spot
/// per directed edge, placed with probability `spot_probability`.
pub fn synth_grid(
    rows: usize,
    cols: usize,
    edge_time: f64,
    spot_probability: f64,
    seed: u64,
) -> Result<(RoadGraph, Vec<ParkingSpot>)> {
    if rows < 2 || cols < 2 {
        return Err(Error::Config("grid needs at least 2 rows and 2 columns".into()));
    }
    if !(spot_probability > 0.0 && spot_probability <= 1.0) {
        return Err(Error::Config("spot probability must lie in (0, 1]".into()));
    }
    let spacing = edge_time * kmh_to_mps(DEFAULT_SPEED_KMH);
    let vertices: Vec<Vertex> = (0..rows * cols)
        .map(|i| Vertex {
            id: i as u64,
            x: (i % cols) as f64 * spacing,
            y: (i / cols) as f64 * spacing,
        })
        .collect();
    let mut records = Vec::new();
    let mut push = |from: usize, to: usize| {
        let id = records.len() as u64;
        records.push(EdgeRecord {
            id,
            from: from as u64,
            to: to as u64,
            travel_time: edge_time,
        });
    };
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                push(v, v + 1);
                push(v + 1, v);
            }
            if r + 1 < rows {
                push(v, v + cols);
                push(v + cols, v);
            }
        }
    }
    let graph = RoadGraph::from_records(vertices, &records)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spots = Vec::new();
    for e in 0..graph.edges().len() {
        let place = rng.gen::<f64>() < spot_probability;
        let offset: f64 = rng.gen_range(0.05..0.95);
        if place {
            let (x, y) = graph.point_on_edge(e, offset);
            spots.push(ParkingSpot {
                id: spots.len(),
                edge: e,
                offset,
                x,
                y,
                max_duration: SYNTH_MAX_DURATION_S,
            });
        }
    }
    Ok((graph, spots))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Officer speed used when edges carry `length_m` instead of travel time.
    pub speed_kmh: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            speed_kmh: DEFAULT_SPEED_KMH,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Vertices,
    Edges,
}

fn fields<'a>(line: &'a str) -> Vec<&'a str> {
    line.split(',').map(str::trim).collect()
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} `{s}`")))
}

/// Parse the sectioned graph file. Edges carry either `travel_time_s` or
/// `length_m` (converted at `opts.speed_kmh`).
pub fn parse_graph(path: &Path, text: &str, opts: &LoadOptions) -> Result<RoadGraph> {
    let mut section = Section::None;
    let mut need_header = false;
    let mut length_based = false;
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    let speed = kmh_to_mps(opts.speed_kmh);
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim().trim_start_matches('\u{feff}');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "[vertices]" => {
                section = Section::Vertices;
                need_header = true;
                continue;
            }
            "[edges]" => {
                section = Section::Edges;
                need_header = true;
                continue;
            }
            _ => {}
        }
        let f = fields(line);
        if need_header {
            need_header = false;
            match section {
                Section::Vertices if f == ["id", "x", "y"] => {}
                Section::Edges if f == ["id", "from", "to", "travel_time_s"] => length_based = false,
                Section::Edges if f == ["id", "from", "to", "length_m"] => length_based = true,
                _ => return Err(Error::parse(path, line_no, format!("unexpected header `{line}`"))),
            }
            continue;
        }
        match section {
            Section::None => {
                return Err(Error::parse(path, line_no, "data before a [vertices] or [edges] section"))
            }
            Section::Vertices => {
                if f.len() != 3 {
                    return Err(Error::parse(path, line_no, "expected 3 fields: id,x,y"));
                }
                vertices.push(Vertex {
                    id: num(path, line_no, "vertex id", f[0])?,
                    x: num(path, line_no, "x", f[1])?,
                    y: num(path, line_no, "y", f[2])?,
                });
            }
            Section::Edges => {
                if f.len() != 4 {
                    return Err(Error::parse(path, line_no, "expected 4 fields: id,from,to,time"));
                }
                let value: f64 = num(path, line_no, "edge cost", f[3])?;
                let travel_time = if length_based { value / speed } else { value };
                if !(travel_time.is_finite() && travel_time > 0.0) {
                    return Err(Error::parse(path, line_no, "edge cost must be positive"));
                }
                edges.push(EdgeRecord {
                    id: num(path, line_no, "edge id", f[0])?,
                    from: num(path, line_no, "from vertex", f[1])?,
                    to: num(path, line_no, "to vertex", f[2])?,
                    travel_time,
                });
            }
        }
    }
    RoadGraph::from_records(vertices, &edges)
}

/// Parse `spot_id,edge_id,offset,max_duration_s`. Spot ids must cover 0..n.
pub fn parse_spots(path: &Path, text: &str, graph: &RoadGraph) -> Result<Vec<ParkingSpot>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim().trim_start_matches('\u{feff}');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        if !header_seen {
            if f != ["spot_id", "edge_id", "offset", "max_duration_s"] {
                return Err(Error::parse(path, line_no, format!("unexpected header `{line}`")));
            }
            header_seen = true;
            continue;
        }
        if f.len() != 4 {
            return Err(Error::parse(path, line_no, "expected 4 fields"));
        }
        let id: usize = num(path, line_no, "spot id", f[0])?;
        let edge_id: u64 = num(path, line_no, "edge id", f[1])?;
        let offset: f64 = num(path, line_no, "offset", f[2])?;
        let max_duration: f64 = num(path, line_no, "max duration", f[3])?;
        let edge = graph.edge_by_id(edge_id).ok_or_else(|| {
            Error::DanglingReference(format!("spot {id} (line {line_no}) references missing edge {edge_id}"))
        })?;
        if !(0.0..=1.0).contains(&offset) {
            return Err(Error::parse(path, line_no, "offset must lie in [0,1]"));
        }
        if !(max_duration.is_finite() && max_duration > 0.0) {
            return Err(Error::parse(path, line_no, "max duration must be positive"));
        }
        let (x, y) = graph.point_on_edge(edge, offset);
        rows.push((line_no, ParkingSpot {
            id,
            edge,
            offset,
            x,
            y,
            max_duration,
        }));
    }
    if !header_seen {
        return Err(Error::parse(path, 1, "missing header"));
    }
    let n = rows.len();
    let mut spots: Vec<Option<ParkingSpot>> = vec![None; n];
    for (line_no, s) in rows {
        if s.id >= n || spots[s.id].is_some() {
            return Err(Error::parse(
                path,
                line_no,
                format!("spot ids must be unique and dense in 0..{n}, got {}", s.id),
            ));
        }
        let id = s.id;
        spots[id] = Some(s);
    }
    Ok(spots.into_iter().map(|s| s.expect("dense ids")).collect())
}

/// Load a graph file and its spot file, validating the routable core.
pub fn load_graph(
    graph_path: &Path,
    spot_path: &Path,
    opts: &LoadOptions,
) -> Result<(RoadGraph, Vec<ParkingSpot>)> {
    let graph = parse_graph(graph_path, &fs::read_to_string(graph_path)?, opts)?;
    let spots = parse_spots(spot_path, &fs::read_to_string(spot_path)?, &graph)?;
    check_routable_core(&graph, &spots)?;
    Ok((graph, spots))
}

pub fn graph_to_string(graph: &RoadGraph) -> String {
    let mut out = String::from("[vertices]\nid,x,y\n");
    for v in graph.vertices() {
        let _ = writeln!(out, "{},{},{}", v.id, v.x, v.y);
    }
    out.push_str("[edges]\nid,from,to,travel_time_s\n");
    for e in graph.edges() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.id,
            graph.vertex(e.from).id,
            graph.vertex(e.to).id,
            e.travel_time
        );
    }
    out
}

pub fn spots_to_string(graph: &RoadGraph, spots: &[ParkingSpot]) -> String {
    let mut out = String::from("spot_id,edge_id,offset,max_duration_s\n");
    for s in spots {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.id,
            graph.edge(s.edge).id,
            s.offset,
            s.max_duration
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_graph(times: &[f64]) -> RoadGraph {
        let vertices = (0..=times.len())
            .map(|i| Vertex { id: i as u64, x: i as f64, y: 0.0 })
            .collect();
        let mut recs = Vec::new();
        for (i, &t) in times.iter().enumerate() {
            recs.push(EdgeRecord { id: 2 * i as u64, from: i as u64, to: i as u64 + 1, travel_time: t });
            recs.push(EdgeRecord { id: 2 * i as u64 + 1, from: i as u64 + 1, to: i as u64, travel_time: t });
        }
        RoadGraph::from_records(vertices, &recs).unwrap()
    }

    fn spot(graph: &RoadGraph, id: usize, edge: usize, offset: f64) -> ParkingSpot {
        let (x, y) = graph.point_on_edge(edge, offset);
        ParkingSpot { id, edge, offset, x, y, max_duration: 3600.0 }
    }

    #[test]
    fn single_edge_route_from_edge_start() {
        let g = line_graph(&[60.0]);
        let s = vec![spot(&g, 0, 0, 0.5)];
        let net = RoadNetwork::new(g, s).unwrap();
        let r = shortest_path(&net, Position::Vertex(0), 0).unwrap();
        assert_eq!(r.edges, vec![0]);
        assert_eq!(r.duration, 60.0);
        assert_eq!(r.pass_by, vec![PassBy { spot: 0, time: 30.0 }]);
    }

    #[test]
    fn diamond_tie_prefers_smaller_edge_ids() {
        // 0 -> 1 -> 3 and 0 -> 2 -> 3, equal cost; target edge 3 -> 0.
        let vertices = (0..4).map(|i| Vertex { id: i, x: 0.0, y: 0.0 }).collect();
        let recs = [
            EdgeRecord { id: 10, from: 0, to: 2, travel_time: 5.0 },
            EdgeRecord { id: 11, from: 0, to: 1, travel_time: 5.0 },
            EdgeRecord { id: 12, from: 1, to: 3, travel_time: 5.0 },
            EdgeRecord { id: 13, from: 2, to: 3, travel_time: 5.0 },
            EdgeRecord { id: 20, from: 3, to: 0, travel_time: 7.0 },
        ];
        let g = RoadGraph::from_records(vertices, &recs).unwrap();
        let e20 = g.edge_by_id(20).unwrap();
        let s = vec![spot(&g, 0, e20, 0.5)];
        let net = RoadNetwork::new(g, s).unwrap();
        let r = shortest_path(&net, Position::Vertex(0), 0).unwrap();
        let ids: Vec<u64> = r.edges.iter().map(|&e| net.graph.edge(e).id).collect();
        assert_eq!(ids, vec![10, 13, 20]);
        assert_eq!(r.duration, 17.0);
    }

    #[test]
    fn self_route_is_stationary_and_lists_target_spots() {
        let g = line_graph(&[60.0, 30.0]);
        let s = vec![spot(&g, 0, 0, 0.2), spot(&g, 1, 0, 0.7), spot(&g, 2, 3, 0.5)];
        let net = RoadNetwork::new(g, s).unwrap();
        let a = net.actions.action_of_edge(0).unwrap();
        let r = shortest_path(&net, Position::EndOfEdge(0), a).unwrap();
        assert!(r.is_stationary());
        assert_eq!(r.duration, 0.0);
        assert_eq!(r.pass_by.len(), 2);
        // From the same vertex without having walked the edge, the officer
        // must loop back around to its start.
        let r = shortest_path(&net, Position::Vertex(1), a).unwrap();
        assert_eq!(r.duration, 120.0);
    }

    #[test]
    fn on_edge_origin_prorates_first_edge() {
        let g = line_graph(&[100.0, 50.0]);
        let s = vec![spot(&g, 0, 0, 0.2), spot(&g, 1, 0, 0.8), spot(&g, 2, 2, 0.5)];
        let net = RoadNetwork::new(g, s).unwrap();
        let a = net.actions.action_of_edge(2).unwrap();
        let r = shortest_path(&net, Position::OnEdge { edge: 0, offset: 0.5 }, a).unwrap();
        assert_eq!(r.duration, 50.0 + 50.0);
        let got: Vec<(usize, f64)> = r.pass_by.iter().map(|p| (p.spot, p.time)).collect();
        assert_eq!(got.len(), 2);
        for ((s, t), (es, et)) in got.into_iter().zip([(1, 30.0), (2, 75.0)]) {
            assert_eq!(s, es);
            assert!((t - et).abs() < 1e-9);
        }
    }

    #[test]
    fn actions_group_spots_by_edge() {
        let g = line_graph(&[10.0, 10.0]);
        let s = vec![spot(&g, 0, 1, 0.1), spot(&g, 1, 2, 0.4), spot(&g, 2, 1, 0.9)];
        let actions = derive_actions(&g, &s).unwrap();
        assert_eq!(actions.len(), 2);
        let mut sizes: Vec<usize> = (0..2).map(|a| actions.spots(a).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 2]);
        assert!(matches!(derive_actions(&g, &[]), Err(Error::EmptyActionSpace)));
    }

    #[test]
    fn unreachable_core_is_rejected() {
        let vertices = (0..3).map(|i| Vertex { id: i, x: 0.0, y: 0.0 }).collect();
        let recs = [
            EdgeRecord { id: 0, from: 0, to: 1, travel_time: 1.0 },
            EdgeRecord { id: 1, from: 1, to: 2, travel_time: 1.0 },
        ];
        let g = RoadGraph::from_records(vertices, &recs).unwrap();
        let s = vec![spot(&g, 0, 0, 0.5), spot(&g, 1, 1, 0.5)];
        assert!(matches!(check_routable_core(&g, &s), Err(Error::Disconnected(_))));
    }

    #[test]
    fn grid_counts_and_determinism() {
        let (g, s) = synth_grid(2, 2, 60.0, 1.0, 3).unwrap();
        assert_eq!(g.vertices().len(), 4);
        assert_eq!(g.edges().len(), 8);
        assert_eq!(s.len(), 8);
        let a = synth_grid(5, 5, 60.0, 0.3, 11).unwrap();
        let b = synth_grid(5, 5, 60.0, 0.3, 11).unwrap();
        assert_eq!(graph_to_string(&a.0), graph_to_string(&b.0));
        assert_eq!(spots_to_string(&a.0, &a.1), spots_to_string(&b.0, &b.1));
    }

    #[test]
    fn graph_parse_errors_carry_line_numbers() {
        let text = "[vertices]\nid,x,y\n0,0,0\n1,oops,0\n";
        let err = parse_graph(Path::new("g.txt"), text, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");

        let text = "[vertices]\nid,x,y\n0,0,0\n1,1,0\n[edges]\nid,from,to,travel_time_s\n0,0,99,5\n";
        let err = parse_graph(Path::new("g.txt"), text, &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("vertex 99"), "{err}");
    }

    #[test]
    fn length_based_edges_use_speed() {
        let text = "[vertices]\nid,x,y\n0,0,0\n1,50,0\n[edges]\nid,from,to,length_m\n0,0,1,50\n";
        let g = parse_graph(Path::new("g"), text, &LoadOptions { speed_kmh: 5.0 }).unwrap();
        assert!((g.edge(0).travel_time - 36.0).abs() < 1e-12);
    }
}
