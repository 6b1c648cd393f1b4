//! Correspondence metrics: geodesic error, PCK with AUC and conformal distortion.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{geodesic_distances, TriMesh};

/// Upper end of the PCK threshold range.
pub const PCK_MAX: f64 = 0.2;
/// Value reported for triangles whose image is degenerate.
pub const DISTORTION_CAP: f64 = 100.0;

pub const SUMMARY_HEADER: &str = "metric,value";
pub const PCK_HEADER: &str = "threshold,pck";
pub const HISTOGRAM_HEADER: &str = "bin_lo,bin_hi,count";

fn check_map(map: &[usize], n_src: usize, n_tgt: usize, what: &str) -> Result<()> {
    if map.len() != n_src {
        return Err(Error::shape("eval", format!("{what} has {} entries for {n_src} vertices", map.len())));
    }
    if let Some(&j) = map.iter().find(|&&j| j >= n_tgt) {
        return Err(Error::arg(format!("{what} index {j} out of range for {n_tgt} targets")));
    }
    Ok(())
}

/// Per-vertex geodesic errors on `target`, divided by `sqrt(area(target))`.
pub fn geodesic_errors(pred: &[usize], gt: &[usize], target: &TriMesh) -> Result<Vec<f64>> {
    let n = target.n_vertices();
    check_map(pred, gt.len(), n, "prediction")?;
    check_map(gt, gt.len(), n, "ground truth")?;
    let mut sources: Vec<usize> = gt.to_vec();
    sources.sort_unstable();
    sources.dedup();
    let dist = geodesic_distances(target, &sources)?;
    let row: BTreeMap<usize, usize> = sources.iter().enumerate().map(|(r, &s)| (s, r)).collect();
    let norm = target.total_area().sqrt();
    gt.iter()
        .zip(pred)
        .map(|(&g, &p)| {
            let d = dist.get(row[&g], p);
            if d.is_finite() {
                Ok(d / norm)
            } else {
                Err(Error::InvalidMesh("target mesh is disconnected".into()))
            }
        })
        .collect()
}

pub fn mean_geodesic_error(pred: &[usize], gt: &[usize], target: &TriMesh) -> Result<f64> {
    let e = geodesic_errors(pred, gt, target)?;
    Ok(e.iter().sum::<f64>() / e.len().max(1) as f64)
}

/// `n` evenly spaced thresholds on `[0, PCK_MAX]`.
pub fn default_thresholds(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| PCK_MAX * i as f64 / (n - 1) as f64).collect()
}

/// Fraction of errors at or below each threshold and the trapezoidal AUC
/// over `[0, PCK_MAX]` divided by `PCK_MAX`.
pub fn pck_curve(errors: &[f64], thresholds: &[f64]) -> Result<(Vec<f64>, f64)> {
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::arg("thresholds must be ascending"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    let curve: Vec<f64> = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect();
    let mut area = 0.0;
    for i in 1..thresholds.len() {
        let (a, b) = (thresholds[i - 1].min(PCK_MAX), thresholds[i].min(PCK_MAX));
        area += 0.5 * (curve[i - 1] + curve[i]) * (b - a);
    }
    Ok((curve, area / PCK_MAX))
}

/// Two edge vectors of a triangle in an orthonormal frame of its plane.
fn local_frame(p: [[f64; 3]; 3]) -> Option<[[f64; 2]; 2]> {
    let e1 = crate::mesh::sub(&p[1], &p[0]);
    let e2 = crate::mesh::sub(&p[2], &p[0]);
    let l1 = crate::mesh::norm3(&e1);
    let nrm = crate::mesh::cross(&e1, &e2);
    let area2 = crate::mesh::norm3(&nrm);
    if l1 <= 0.0 || area2 <= 1e-14 * l1 * l1 {
        return None;
    }
    let x = [e1[0] / l1, e1[1] / l1, e1[2] / l1];
    let nz = [nrm[0] / area2, nrm[1] / area2, nrm[2] / area2];
    let y = crate::mesh::cross(&nz, &x);
    Some([[l1, 0.0], [crate::mesh::dot3(&e2, &x), crate::mesh::dot3(&e2, &y)]])
}

fn singular_values_2x2(m: [[f64; 2]; 2]) -> (f64, f64) {
    let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    let s1 = a * a + b * b + c * c + d * d;
    let det = (a * d - b * c).abs();
    let disc = (s1 * s1 - 4.0 * det * det).max(0.0).sqrt();
    let hi = ((s1 + disc) / 2.0).sqrt();
    let lo = if hi > 0.0 { det / hi } else { 0.0 };
    (hi, lo)
}

/// Per-triangle `s1/s2 + s2/s1 - 2` of the affine map from each source
/// triangle to its image, and the mean. Degenerate images get [`DISTORTION_CAP`].
pub fn conformal_distortion(map: &[usize], src: &TriMesh, tgt: &TriMesh) -> Result<(Vec<f64>, f64)> {
    check_map(map, src.n_vertices(), tgt.n_vertices(), "map")?;
    let (sv, tv) = (src.vertices(), tgt.vertices());
    let values: Vec<f64> = src
        .faces()
        .iter()
        .map(|f| {
            let s = local_frame([sv[f[0]], sv[f[1]], sv[f[2]]]);
            let t = local_frame([tv[map[f[0]]], tv[map[f[1]]], tv[map[f[2]]]]);
            let (Some(s), Some(t)) = (s, t) else {
                return DISTORTION_CAP;
            };
            // rows are edge vectors: J maps s-edges to t-edges, J = S^{-1} T in row form
            let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
            let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
            let j = [
                [
                    inv[0][0] * t[0][0] + inv[0][1] * t[1][0],
                    inv[0][0] * t[0][1] + inv[0][1] * t[1][1],
                ],
                [
                    inv[1][0] * t[0][0] + inv[1][1] * t[1][0],
                    inv[1][0] * t[0][1] + inv[1][1] * t[1][1],
                ],
            ];
            let (hi, lo) = singular_values_2x2(j);
            if !(lo > 1e-12 * hi) {
                return DISTORTION_CAP;
            }
            (hi / lo + lo / hi - 2.0).clamp(0.0, DISTORTION_CAP)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    Ok((values, mean))
}

/// All metrics of one predicted map.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub errors: Vec<f64>,
    pub mean_geodesic_error: f64,
    pub thresholds: Vec<f64>,
    pub pck: Vec<f64>,
    pub auc: f64,
    pub distortion: Vec<f64>,
    pub mean_distortion: f64,
}

pub fn evaluate(pred: &[usize], gt: &[usize], src: &TriMesh, tgt: &TriMesh, thresholds: &[f64]) -> Result<EvalReport> {
    let errors = geodesic_errors(pred, gt, tgt)?;
    let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    let (pck, auc) = pck_curve(&errors, thresholds)?;
    let (distortion, mean_distortion) = conformal_distortion(pred, src, tgt)?;
    Ok(EvalReport {
        errors,
        mean_geodesic_error: mean,
        thresholds: thresholds.to_vec(),
        pck,
        auc,
        distortion,
        mean_distortion,
    })
}

/// Histogram of distortion values over `bins` equal bins on `[0, DISTORTION_CAP]`.
pub fn distortion_histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let w = DISTORTION_CAP / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = ((v / w) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * w, (i + 1) as f64 * w, c))
        .collect()
}

/// CSV contents `(summary, pck, histogram)`.
pub fn report_csv(r: &EvalReport) -> (String, String, String) {
    let mut summary = format!("{SUMMARY_HEADER}\n");
    writeln!(summary, "mean_geodesic_error,{}", r.mean_geodesic_error).unwrap();
    writeln!(summary, "auc,{}", r.auc).unwrap();
    writeln!(summary, "mean_conformal_distortion,{}", r.mean_distortion).unwrap();
    let mut pck = format!("{PCK_HEADER}\n");
    for (t, v) in r.thresholds.iter().zip(&r.pck) {
        writeln!(pck, "{t},{v}").unwrap();
    }
    let mut hist = format!("{HISTOGRAM_HEADER}\n");
    for (lo, hi, c) in distortion_histogram(&r.distortion, 50) {
        writeln!(hist, "{lo},{hi},{c}").unwrap();
    }
    (summary, pck, hist)
}

/// Writes `summary.csv`, `pck.csv` and `distortion_hist.csv` into `dir`.
pub fn emit_report(r: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (s, p, h) = report_csv(r);
    for (name, body) in [("summary.csv", s), ("pck.csv", p), ("distortion_hist.csv", h)] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::mesh::{icosphere, one_ring_neighbors};

    fn identity(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn identity_map_is_perfect() {
        let m = icosphere(2);
        let id = identity(m.n_vertices());
        let r = evaluate(&id, &id, &m, &m, &default_thresholds(41)).unwrap();
        assert_eq!(r.mean_geodesic_error, 0.0);
        assert_eq!(r.auc, 1.0);
        assert!(r.mean_distortion.abs() < 1e-9);
    }

    #[test]
    fn neighbor_shift_error_matches_edge_length() {
        let m = icosphere(2);
        let nb = one_ring_neighbors(&m, 2).unwrap();
        let pred: Vec<usize> = (0..m.n_vertices()).map(|i| nb.row(i)[1]).collect();
        let gt = identity(m.n_vertices());
        let err = mean_geodesic_error(&pred, &gt, &m).unwrap();
        let expected = m.mean_edge_length() / (4.0 * std::f64::consts::PI).sqrt();
        let e_sq = expected * (4.0 * std::f64::consts::PI / m.total_area()).sqrt();
        assert!((err / e_sq - 1.0).abs() < 0.1, "{err} vs {e_sq}");
    }

    #[test]
    fn pck_extremes() {
        let t = default_thresholds(21);
        let (c, auc) = pck_curve(&[0.0; 10], &t).unwrap();
        assert!(c.iter().all(|&v| v == 1.0));
        assert_eq!(auc, 1.0);
        let (c, auc) = pck_curve(&[0.5; 10], &t).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        assert_eq!(auc, 0.0);
        assert!(pck_curve(&[0.1], &[0.2, 0.1]).is_err());
    }

    #[test]
    fn pck_auc_oracle() {
        // errors uniform on the grid points: curve(t) = fraction <= t
        let errors = [0.05, 0.1, 0.15, 0.3];
        let t = [0.0, 0.05, 0.1, 0.15, 0.2];
        let (c, auc) = pck_curve(&errors, &t).unwrap();
        assert_eq!(c, vec![0.0, 0.25, 0.5, 0.75, 0.75]);
        let area = 0.05 * (0.125 + 0.375 + 0.625 + 0.75);
        assert!((auc - area / 0.2).abs() < 1e-12);
    }

    fn planar_triangle() -> TriMesh {
        TriMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.3, 0.8, 0.0]], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn distortion_hand_values() {
        let m = planar_triangle();
        let id = identity(3);
        let scaled = m.map_vertices(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).unwrap();
        assert!(conformal_distortion(&id, &m, &scaled).unwrap().1.abs() < 1e-12);
        let stretched = m.map_vertices(|p| [2.0 * p[0], p[1], p[2]]).unwrap();
        assert!((conformal_distortion(&id, &m, &stretched).unwrap().1 - 0.5).abs() < 1e-12);
        let collapsed = vec![0, 0, 2];
        assert_eq!(conformal_distortion(&collapsed, &m, &m).unwrap().1, DISTORTION_CAP);
    }

    #[test]
    fn geodesic_error_is_rigid_invariant() {
        let m = icosphere(1);
        let n = m.n_vertices();
        let pred: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let gt = identity(n);
        let a = mean_geodesic_error(&pred, &gt, &m).unwrap();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let moved = m.map_vertices(|p| [c * p[0] - s * p[1] + 4.0, s * p[0] + c * p[1], p[2] - 1.0]).unwrap();
        let b = mean_geodesic_error(&pred, &gt, &moved).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn disconnected_target_is_an_error() {
        let t = TriMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [5.0, 0.0, 0.0],
                [6.0, 0.0, 0.0],
                [5.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        assert!(mean_geodesic_error(&[3, 1, 2, 3, 4, 5], &identity(6), &t).is_err());
    }

    #[test]
    fn report_files_have_documented_headers() {
        let m = icosphere(1);
        let id = identity(m.n_vertices());
        let t = default_thresholds(11);
        let r = evaluate(&id, &id, &m, &m, &t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        let pck = std::fs::read_to_string(dir.path().join("pck.csv")).unwrap();
        assert_eq!(pck.lines().next(), Some(PCK_HEADER));
        assert_eq!(pck.lines().count(), t.len() + 1);
        let back: Vec<f64> = pck.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(back, r.pck);
        let s = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(s.lines().next(), Some(SUMMARY_HEADER));
        let h = std::fs::read_to_string(dir.path().join("distortion_hist.csv")).unwrap();
        assert_eq!(h.lines().next(), Some(HISTOGRAM_HEADER));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pck_is_monotone_and_auc_bounded(errs in proptest::collection::vec(0.0f64..0.4, 1..60)) {
            let (c, auc) = pck_curve(&errs, &default_thresholds(33)).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((0.0..=1.0).contains(&auc));
        }

        #[test]
        fn distortion_is_similarity_invariant(seed in any::<u64>(), s in 0.1f64..10.0, ang in 0.0f64..std::f64::consts::TAU) {
            let m = icosphere(1);
            let n = m.n_vertices();
            let map: Vec<usize> = (0..n).map(|i| ((i as u64 * 31 + seed % 97) % n as u64) as usize).collect();
            let (c, sn) = (ang.cos(), ang.sin());
            let moved = m.map_vertices(|p| [s * (c * p[0] - sn * p[2]) + 1.0, s * p[1], s * (sn * p[0] + c * p[2])]).unwrap();
            let (a, _) = conformal_distortion(&map, &m, &m).unwrap();
            let (b, _) = conformal_distortion(&map, &m, &moved).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(*x >= 0.0);
                prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0));
            }
        }
    }
}
