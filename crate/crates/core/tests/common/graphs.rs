//! Random small graphs and exhaustive path enumeration.

use rand::seq::SliceRandom;
use rand::Rng;
use topsim::roadnet::{EdgeRecord, ParkingSpot, RoadGraph, RoadNetwork, Vertex};

/// Strongly connected graph: a ring through all vertices plus random extra
/// edges, integer travel times and shuffled file ids. Roughly a third of the
/// edges host one or two spots.
pub fn random_network<R: Rng>(rng: &mut R, n_vertices: usize) -> RoadNetwork {
    let vertices: Vec<Vertex> = (0..n_vertices)
        .map(|i| Vertex {
            id: 100 + i as u64,
            x: rng.gen_range(0.0..500.0),
            y: rng.gen_range(0.0..500.0),
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..n_vertices).map(|i| (i, (i + 1) % n_vertices)).collect();
    let extra = rng.gen_range(0..=n_vertices + 2);
    for _ in 0..extra {
        let a = rng.gen_range(0..n_vertices);
        let b = rng.gen_range(0..n_vertices);
        if a != b {
            pairs.push((a, b));
        }
    }
    let mut ids: Vec<u64> = (0..pairs.len() as u64).map(|i| 1000 + 7 * i).collect();
    ids.shuffle(rng);
    let records: Vec<EdgeRecord> = pairs
        .iter()
        .zip(&ids)
        .map(|(&(a, b), &id)| EdgeRecord {
            id,
            from: vertices[a].id,
            to: vertices[b].id,
            travel_time: rng.gen_range(1..=20) as f64,
        })
        .collect();
    let graph = RoadGraph::from_records(vertices, &records).expect("graph");
    let mut spots = Vec::new();
    for e in 0..graph.edges().len() {
        if spots.is_empty() || rng.gen_bool(0.35) {
            for _ in 0..rng.gen_range(1..=2) {
                let offset = rng.gen_range(0.05..0.95);
                let (x, y) = graph.point_on_edge(e, offset);
                spots.push(ParkingSpot {
                    id: spots.len(),
                    edge: e,
                    offset,
                    x,
                    y,
                    max_duration: 3600.0,
                });
            }
        }
    }
    RoadNetwork::new(graph, spots).expect("network")
}

/// Cheapest walk from `from` to the end of `target_edge`, found by listing
/// every vertex-simple path. Ties go to the smaller sequence of file edge
/// ids. Returns (duration, dense edge indices).
pub fn brute_force_route(graph: &RoadGraph, from: usize, target_edge: usize) -> Option<(f64, Vec<usize>)> {
    let goal = graph.edge(target_edge).from;
    let mut best: Option<(f64, Vec<u64>, Vec<usize>)> = None;
    let mut on_path = vec![false; graph.vertices().len()];
    let mut path = Vec::new();
    fn dfs(
        graph: &RoadGraph,
        u: usize,
        goal: usize,
        target_edge: usize,
        cost: f64,
        on_path: &mut Vec<bool>,
        path: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<u64>, Vec<usize>)>,
    ) {
        if u == goal {
            let mut edges = path.clone();
            edges.push(target_edge);
            let total = cost + graph.edge(target_edge).travel_time;
            let ids: Vec<u64> = edges.iter().map(|&e| graph.edge(e).id).collect();
            let better = match best {
                None => true,
                Some((c, bid, _)) => total < *c || (total == *c && ids < *bid),
            };
            if better {
                *best = Some((total, ids, edges));
            }
            return;
        }
        on_path[u] = true;
        for &e in graph.out_edges(u) {
            let v = graph.edge(e).to;
            if !on_path[v] {
                path.push(e);
                dfs(graph, v, goal, target_edge, cost + graph.edge(e).travel_time, on_path, path, best);
                path.pop();
            }
        }
        on_path[u] = false;
    }
    dfs(graph, from, goal, target_edge, 0.0, &mut on_path, &mut path, &mut best);
    best.map(|(c, _, e)| (c, e))
}

/// Pass-by times along an edge sequence starting at the first edge's tail.
pub fn pass_times(net: &RoadNetwork, edges: &[usize]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut elapsed = 0.0;
    for &e in edges {
        let tt = net.graph.edge(e).travel_time;
        let mut here: Vec<usize> = net.spots.iter().filter(|s| s.edge == e).map(|s| s.id).collect();
        here.sort_by(|&a, &b| net.spots[a].offset.total_cmp(&net.spots[b].offset).then(a.cmp(&b)));
        for s in here {
            out.push((s, elapsed + net.spots[s].offset * tt));
        }
        elapsed += tt;
    }
    out
}

/// Graph and spot files with the size of the Docklands area: 1,435
/// vertices, 4,307 directed edges, 487 spots on 166 edges.
pub fn docklands_like_files<R: Rng>(rng: &mut R) -> (String, String) {
    const V: usize = 1435;
    const E: usize = 4307;
    const SPOTS: usize = 487;
    const HOSTS: usize = 166;
    let coords: Vec<(f64, f64)> = (0..V)
        .map(|i| ((i % 41) as f64 * 40.0 + rng.gen_range(0.0..10.0), (i / 41) as f64 * 40.0))
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..V).map(|i| (i, (i + 1) % V)).collect();
    while pairs.len() < E {
        let a = rng.gen_range(0..V);
        let b = (a + rng.gen_range(1..60)) % V;
        pairs.push((a, b));
    }
    let mut graph = String::from("[vertices]\nid,x,y\n");
    for (i, (x, y)) in coords.iter().enumerate() {
        graph.push_str(&format!("{i},{x},{y}\n"));
    }
    graph.push_str("[edges]\nid,from,to,length_m\n");
    for (id, &(a, b)) in pairs.iter().enumerate() {
        let (dx, dy) = (coords[a].0 - coords[b].0, coords[a].1 - coords[b].1);
        graph.push_str(&format!("{id},{a},{b},{}\n", (dx * dx + dy * dy).sqrt().max(1.0)));
    }
    let mut hosts: Vec<usize> = (0..E).collect();
    hosts.shuffle(rng);
    hosts.truncate(HOSTS);
    let mut spot_edges: Vec<usize> = hosts.clone();
    while spot_edges.len() < SPOTS {
        spot_edges.push(hosts[rng.gen_range(0..HOSTS)]);
    }
    let mut spots = String::from("spot_id,edge_id,offset,max_duration_s\n");
    for (id, e) in spot_edges.iter().enumerate() {
        spots.push_str(&format!("{id},{e},{:.3},{}\n", rng.gen_range(0.0..1.0), 3600));
    }
    (graph, spots)
}
