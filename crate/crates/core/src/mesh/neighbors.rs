use std::collections::BTreeSet;

use super::TriMesh;
use crate::error::{Error, Result};

/// Fixed-width 1-ring neighborhoods.
///
/// Row `i` starts with `i` itself, followed by its distinct 1-ring neighbors in
/// ascending order; short rows are padded with `i`. `valid` marks slot 0 and the
/// real neighbors, padding slots are `false`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborTable {
    width: usize,
    indices: Vec<usize>,
    valid: Vec<bool>,
}

impl NeighborTable {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_rows(&self) -> usize {
        self.indices.len() / self.width
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.width..(i + 1) * self.width]
    }

    pub fn valid_row(&self, i: usize) -> &[bool] {
        &self.valid[i * self.width..(i + 1) * self.width]
    }

    /// Row-major flattened indices (`n * width`).
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Builds a table from explicit rows (each must start with its own index).
    pub fn from_rows(rows: &[Vec<usize>], width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::arg("neighbor width must be at least 1"));
        }
        let mut indices = Vec::with_capacity(rows.len() * width);
        let mut valid = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.iter().enumerate() {
            if r.first() != Some(&i) {
                return Err(Error::arg(format!("neighbor row {i} must start with {i}")));
            }
            for slot in 0..width {
                match r.get(slot) {
                    Some(&j) => {
                        indices.push(j);
                        valid.push(true);
                    }
                    None => {
                        indices.push(i);
                        valid.push(false);
                    }
                }
            }
        }
        Ok(NeighborTable {
            width,
            indices,
            valid,
        })
    }

    /// Applies a vertex relabeling `perm[old] = new` consistently to rows and entries.
    pub fn permuted(&self, perm: &[usize]) -> NeighborTable {
        let n = self.n_rows();
        let mut indices = vec![0; n * self.width];
        let mut valid = vec![false; n * self.width];
        for old in 0..n {
            let new = perm[old];
            for s in 0..self.width {
                indices[new * self.width + s] = perm[self.row(old)[s]];
                valid[new * self.width + s] = self.valid_row(old)[s];
            }
        }
        NeighborTable {
            width: self.width,
            indices,
            valid,
        }
    }
}

/// Self-loop plus the sorted 1-ring of every vertex, truncated or padded to `k_nb`.
///
/// When a vertex has more than `k_nb - 1` neighbors the lowest-index ones are kept.
pub fn one_ring_neighbors(mesh: &TriMesh, k_nb: usize) -> Result<NeighborTable> {
    if k_nb == 0 {
        return Err(Error::arg("k_nb must be at least 1"));
    }
    let mut ring: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); mesh.n_vertices()];
    for f in mesh.faces() {
        for a in 0..3 {
            let (i, j) = (f[a], f[(a + 1) % 3]);
            ring[i].insert(j);
            ring[j].insert(i);
        }
    }
    let rows: Vec<Vec<usize>> = ring
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            std::iter::once(i)
                .chain(nb.iter().copied().filter(|&j| j != i))
                .take(k_nb)
                .collect()
        })
        .collect();
    NeighborTable::from_rows(&rows, k_nb)
}
