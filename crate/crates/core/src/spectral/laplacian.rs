use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::{cross, dot3, norm3, sub, TriMesh};

/// Cotangent stiffness matrix and lumped (barycentric) vertex areas.
///
/// The stiffness is positive semi-definite: off-diagonal entries are
/// `-(cot a + cot b) / 2` for the two angles opposite an edge and each diagonal
/// entry is the negated sum of its row, so constants lie in the kernel.
pub fn cotan_laplacian(mesh: &TriMesh) -> Result<(CsrMatrix, Vec<f64>)> {
    let n = mesh.n_vertices();
    let v = mesh.vertices();
    let mut triplets = Vec::with_capacity(mesh.n_faces() * 12);
    let mut mass = vec![0.0; n];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let area = mesh.face_area(fi);
        for corner in 0..3 {
            let k = f[corner];
            let i = f[(corner + 1) % 3];
            let j = f[(corner + 2) % 3];
            let e1 = sub(&v[i], &v[k]);
            let e2 = sub(&v[j], &v[k]);
            let cot = dot3(&e1, &e2) / norm3(&cross(&e1, &e2));
            if !cot.is_finite() {
                return Err(Error::DegenerateFace {
                    face: fi,
                    msg: "non-finite cotangent weight".into(),
                });
            }
            let w = 0.5 * cot;
            triplets.push((i, j, -w));
            triplets.push((j, i, -w));
            triplets.push((i, i, w));
            triplets.push((j, j, w));
        }
        for &i in f {
            mass[i] += area / 3.0;
        }
    }
    Ok((CsrMatrix::from_triplets(n, n, &triplets), mass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, regular_tetrahedron};

    #[test]
    fn rows_sum_to_zero() {
        let (w, _) = cotan_laplacian(&icosphere(2)).unwrap();
        for r in 0..w.nrows() {
            let s: f64 = w.row_entries(r).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-12, "row {r} sums to {s}");
        }
        assert!(w.is_symmetric(1e-14));
    }

    #[test]
    fn right_angle_contributes_nothing_across_hypotenuse() {
        let m = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let (w, mass) = cotan_laplacian(&m).unwrap();
        assert!(w.get(1, 2).abs() < 1e-15);
        // the 45 degree corners give cot = 1 on the two legs
        assert!((w.get(0, 1) + 0.5).abs() < 1e-15);
        assert!((w.get(0, 2) + 0.5).abs() < 1e-15);
        for a in mass {
            assert!((a - 0.5 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn regular_tetrahedron_by_hand() {
        // every angle is 60 degrees and every edge borders two faces
        let (w, mass) = cotan_laplacian(&regular_tetrahedron(1.0)).unwrap();
        let off = -1.0 / 3f64.sqrt();
        let diag = 3f64.sqrt();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { diag } else { off };
                assert!((w.get(i, j) - want).abs() < 1e-12);
            }
            assert!((mass[i] - 3f64.sqrt() / 4.0).abs() < 1e-12);
        }
    }

    /// Cotangent from side lengths: `cot C = (a^2 + b^2 - c^2) / (4 * area)`.
    fn cot_from_lengths(a: f64, b: f64, c: f64) -> f64 {
        let s = (a + b + c) / 2.0;
        let area = (s * (s - a) * (s - b) * (s - c)).sqrt();
        (a * a + b * b - c * c) / (4.0 * area)
    }

    #[test]
    fn irregular_tetrahedron_matches_law_of_cosines() {
        let v = vec![
            [0.1, -0.2, 0.0],
            [1.3, 0.1, 0.2],
            [0.2, 0.9, -0.1],
            [0.4, 0.3, 1.1],
        ];
        let faces = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
        let m = TriMesh::new(v.clone(), faces.clone()).unwrap();
        let (w, _) = cotan_laplacian(&m).unwrap();
        let len = |a: usize, b: usize| crate::mesh::dist(&v[a], &v[b]);
        let mut dense = [[0.0f64; 4]; 4];
        for f in &faces {
            for c in 0..3 {
                let (k, i, j) = (f[c], f[(c + 1) % 3], f[(c + 2) % 3]);
                let cot = cot_from_lengths(len(k, i), len(k, j), len(i, j));
                dense[i][j] -= cot / 2.0;
                dense[j][i] -= cot / 2.0;
            }
        }
        for i in 0..4 {
            dense[i][i] = -(0..4).filter(|&j| j != i).map(|j| dense[i][j]).sum::<f64>();
        }
        for i in 0..4 {
            for j in 0..4 {
                assert!((w.get(i, j) - dense[i][j]).abs() < 1e-12, "entry ({i},{j})");
            }
        }
    }
}
