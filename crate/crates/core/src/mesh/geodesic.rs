use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{dist, TriMesh};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Copy, Clone, PartialEq)]
struct State {
    cost: f64,
    vertex: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn edge_graph(mesh: &TriMesh) -> Vec<Vec<(usize, f64)>> {
    let mut adj = vec![Vec::new(); mesh.n_vertices()];
    for (a, b) in mesh.edges() {
        let w = dist(&mesh.vertices()[a], &mesh.vertices()[b]);
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    adj
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    d[source] = 0.0;
    heap.push(State {
        cost: 0.0,
        vertex: source,
    });
    while let Some(State { cost, vertex }) = heap.pop() {
        if cost > d[vertex] {
            continue;
        }
        for &(next, w) in &adj[vertex] {
            let c = cost + w;
            if c < d[next] {
                d[next] = c;
                heap.push(State { cost: c, vertex: next });
            }
        }
    }
    d
}

/// Shortest edge-path distances from each source to every vertex (`|sources| x n`).
///
/// Unreachable vertices get `+inf`.
pub fn geodesic_distances(mesh: &TriMesh, sources: &[usize]) -> Result<Tensor> {
    let n = mesh.n_vertices();
    if let Some(&bad) = sources.iter().find(|&&s| s >= n) {
        return Err(Error::arg(format!("source {bad} out of range (n = {n})")));
    }
    let adj = edge_graph(mesh);
    let mut out = Tensor::zeros(sources.len(), n);
    for (r, &s) in sources.iter().enumerate() {
        out.row_mut(r).copy_from_slice(&dijkstra(&adj, s));
    }
    Ok(out)
}

/// Distance rows for a single source, for callers that iterate lazily.
pub fn geodesic_distances_from(mesh: &TriMesh, source: usize) -> Result<Vec<f64>> {
    Ok(geodesic_distances(mesh, &[source])?.into_vec())
}
