use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::EpisodeError;
use crate::math::Vec2;
use crate::scene::{line_of_sight, SceneMap, AGENT_RADIUS};

#[derive(Clone, Debug, PartialEq)]
pub struct NavGraph {
    pub vertices: Vec<Vec2>,
    /// `(i, j, length)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl NavGraph {
    pub fn from_edges(vertices: Vec<Vec2>, edges: Vec<(usize, usize, f64)>) -> Self {
        let mut adj = vec![Vec::new(); vertices.len()];
        for &(i, j, w) in &edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        for a in &mut adj {
            a.sort_by_key(|&(j, _)| j);
        }
        NavGraph {
            vertices,
            edges,
            adj,
        }
    }

    pub fn neighbours(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Single-source shortest distances; unreachable vertices are infinite.
    pub fn distances_from(&self, s: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.len()];
        let mut heap = BinaryHeap::new();
        dist[s] = 0.0;
        heap.push(Entry(0.0, s));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &self.adj[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Entry(nd, v));
                }
            }
        }
        dist
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // min-heap on distance, then on index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Edges between samples no farther than `r_edge` apart whose connecting
/// capsule of the agent radius is free.
pub fn build_graph(scene: &SceneMap, samples: &[Vec2], r_edge: f64) -> NavGraph {
    build_graph_with_radius(scene, samples, r_edge, AGENT_RADIUS)
}

/// As `build_graph` with an explicit (at least agent-sized) capsule radius.
pub fn build_graph_with_radius(
    scene: &SceneMap,
    samples: &[Vec2],
    r_edge: f64,
    radius: f64,
) -> NavGraph {
    let radius = radius.max(AGENT_RADIUS);
    let mut edges = Vec::new();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let d = samples[i].dist(samples[j]);
            if d <= r_edge && line_of_sight(scene, samples[i], samples[j], radius) {
                edges.push((i, j, d));
            }
        }
    }
    NavGraph::from_edges(samples.to_vec(), edges)
}

/// Minimum-length vertex sequence from `s` to `t`. Among equal-length paths
/// the lexicographically smallest index sequence wins.
pub fn shortest_path(graph: &NavGraph, s: usize, t: usize) -> Result<Vec<usize>, EpisodeError> {
    let n = graph.len();
    if s >= n || t >= n {
        return Err(EpisodeError::InvalidParam("vertex index out of range"));
    }
    let to_t = graph.distances_from(t);
    if !to_t[s].is_finite() {
        return Err(EpisodeError::NoPath { from: s, to: t });
    }
    let mut path = vec![s];
    let mut u = s;
    while u != t {
        let tol = 1e-9 * (1.0 + to_t[u]);
        let next = graph
            .neighbours(u)
            .iter()
            .find(|&&(v, w)| to_t[v] < to_t[u] && (w + to_t[v] - to_t[u]).abs() <= tol)
            .map(|&(v, _)| v)
            .ok_or(EpisodeError::NoPath { from: s, to: t })?;
        path.push(next);
        u = next;
    }
    Ok(path)
}

pub fn path_length(graph: &NavGraph, path: &[usize]) -> f64 {
    path.windows(2)
        .map(|w| graph.vertices[w[0]].dist(graph.vertices[w[1]]))
        .sum()
}
