//! Triangle meshes: representation, file I/O, adjacency and graph geodesics.

mod geodesic;
mod io;
mod neighbors;
mod primitives;

pub use geodesic::{geodesic_distances, geodesic_distances_from};
pub use io::{load_mesh, load_mesh_auto, save_mesh, MeshFormat};
pub use neighbors::{one_ring_neighbors, NeighborTable};
pub use primitives::{icosphere, regular_tetrahedron};

use std::hash::Hasher;

use crate::error::{Error, Result};

/// Faces with area below this (in squared input units) are rejected.
pub const DEGENERATE_AREA_EPS: f64 = 1e-12;

pub type Vec3 = [f64; 3];

/// Indexed triangle mesh with counter-clockwise faces.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Validates indices, face non-degeneracy and minimum sizes.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidMesh(format!("{} vertices, need at least 3", vertices.len())));
        }
        if faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no faces".into()));
        }
        if let Some(v) = vertices.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {v} has a non-finite coordinate")));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(Error::DegenerateFace {
                    face: fi,
                    msg: format!("vertex index {bad} out of range (n = {n})"),
                });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace {
                    face: fi,
                    msg: "repeated vertex index".into(),
                });
            }
            let area = triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            if !(area > DEGENERATE_AREA_EPS) {
                return Err(Error::DegenerateFace {
                    face: fi,
                    msg: format!("area {area:.3e} below {DEGENERATE_AREA_EPS:e}"),
                });
            }
        }
        Ok(TriMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        triangle_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    /// Sum of triangle areas.
    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn mean_edge_length(&self) -> f64 {
        let e = self.edges();
        e.iter()
            .map(|&(a, b)| dist(&self.vertices[a], &self.vertices[b]))
            .sum::<f64>()
            / e.len() as f64
    }

    /// Same mesh with every vertex transformed by `f`; faces are kept.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<TriMesh> {
        TriMesh::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }

    /// Uniformly scaled copy with unit total area.
    pub fn normalized_to_unit_area(&self) -> TriMesh {
        let s = 1.0 / self.total_area().sqrt();
        TriMesh {
            vertices: self.vertices.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect(),
            faces: self.faces.clone(),
        }
    }

    /// FNV-1a hash over the little-endian vertex coordinates and face indices.
    pub fn content_hash(&self) -> u64 {
        let mut h = fnv::FnvHasher::default();
        h.write(&(self.vertices.len() as u64).to_le_bytes());
        for p in &self.vertices {
            for c in p {
                h.write(&c.to_le_bytes());
            }
        }
        h.write(&(self.faces.len() as u64).to_le_bytes());
        for f in &self.faces {
            for &i in f {
                h.write(&(i as u64).to_le_bytes());
            }
        }
        h.finish()
    }
}

#[inline]
pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub(crate) fn dist(a: &Vec3, b: &Vec3) -> f64 {
    norm3(&sub(a, b))
}

pub(crate) fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * norm3(&cross(&sub(b, a), &sub(c, a)))
}
