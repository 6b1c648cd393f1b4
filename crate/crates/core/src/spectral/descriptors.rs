use super::{FeatureField, FeatureTag, SpectralBasis};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_WKS_ENERGIES: usize = 100;
pub const DEFAULT_WKS_SIGMA_SCALE: f64 = 7.0;

/// `Phi exp(-tau Lambda) Phi^T M F` on a raw tensor.
pub fn heat_diffuse_tensor(basis: &SpectralBasis, f: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau >= 0.0) {
        return Err(Error::arg(format!("diffusion time must be nonnegative, got {tau}")));
    }
    if f.rows() != basis.n() {
        return Err(Error::shape(
            "heat_diffuse",
            format!("{} feature rows for a {}-vertex basis", f.rows(), basis.n()),
        ));
    }
    let mut coeffs = basis.pinv().matmul(f)?;
    for (j, &l) in basis.lambda().iter().enumerate() {
        let g = (-tau * l).exp();
        coeffs.row_mut(j).iter_mut().for_each(|v| *v *= g);
    }
    basis.phi().matmul(&coeffs)
}

/// Spectral heat diffusion of a feature field; the result is tagged `Diffused`.
pub fn heat_diffuse(basis: &SpectralBasis, f: &FeatureField, tau: f64) -> Result<FeatureField> {
    FeatureField::new(heat_diffuse_tensor(basis, f.values(), tau)?, FeatureTag::Diffused)
}

/// Wave kernel signature with `n_energies` log-energy bands.
///
/// The zero eigenvalue is skipped. Band centers are spaced uniformly on
/// `[log lambda_2, log lambda_k]` after shrinking both ends by `2 sigma`, with
/// `sigma = sigma_scale * (log lambda_k - log lambda_2) / n_energies`.
pub fn wks(basis: &SpectralBasis, n_energies: usize, sigma_scale: f64) -> Result<FeatureField> {
    let k = basis.k();
    if k < 3 {
        return Err(Error::arg(format!("WKS needs at least 3 eigenpairs, got {k}")));
    }
    if n_energies == 0 || !(sigma_scale > 0.0) {
        return Err(Error::arg("WKS needs n_energies >= 1 and sigma_scale > 0"));
    }
    let lambda = basis.lambda();
    if !(lambda[1] > 1e-9 * lambda[k - 1]) {
        return Err(Error::arg(
            "second eigenvalue is not positive; WKS requires a connected mesh",
        ));
    }
    let log_l: Vec<f64> = lambda[1..].iter().map(|l| l.ln()).collect();
    let (lo, hi) = (log_l[0], log_l[k - 2]);
    let sigma = sigma_scale * (hi - lo) / n_energies as f64;
    let (e_min, e_max) = (lo + 2.0 * sigma, hi - 2.0 * sigma);
    let energies: Vec<f64> = (0..n_energies)
        .map(|t| {
            if n_energies == 1 {
                e_min
            } else {
                e_min + (e_max - e_min) * t as f64 / (n_energies - 1) as f64
            }
        })
        .collect();
    // coef[t][j] for eigenpair j + 1
    let coef: Vec<Vec<f64>> = energies
        .iter()
        .map(|e| {
            log_l
                .iter()
                .map(|l| (-(e - l) * (e - l) / (2.0 * sigma * sigma)).exp())
                .collect()
        })
        .collect();
    let norms: Vec<f64> = coef.iter().map(|c| c.iter().sum()).collect();
    let phi = basis.phi();
    let out = Tensor::from_fn(basis.n(), n_energies, |i, t| {
        let s: f64 = (0..k - 1)
            .map(|j| {
                let p = phi.get(i, j + 1);
                coef[t][j] * p * p
            })
            .sum();
        s / norms[t]
    });
    FeatureField::new(out, FeatureTag::Geo)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mesh::{icosphere, TriMesh};
    use crate::spectral::{cotan_laplacian, eigendecompose};

    fn setup(mesh: &TriMesh, k: usize) -> (crate::linalg::CsrMatrix, SpectralBasis) {
        let (w, mass) = cotan_laplacian(mesh).unwrap();
        let b = eigendecompose(&w, &mass, k).unwrap();
        (w, b)
    }

    fn random_field(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn tau_zero_reproduces_fields_in_the_span() {
        let (_, b) = setup(&icosphere(2), 20);
        let coeffs = random_field(20, 3, 1);
        let f = b.phi().matmul(&coeffs).unwrap();
        let z = heat_diffuse_tensor(&b, &f, 0.0).unwrap();
        assert!(z.max_abs_diff(&f) < 1e-8);
    }

    #[test]
    fn constants_survive_any_tau() {
        let (_, b) = setup(&icosphere(2), 20);
        let f = Tensor::filled(b.n(), 2, 3.5);
        for tau in [0.0, 1e-3, 0.1, 10.0] {
            let z = heat_diffuse_tensor(&b, &f, tau).unwrap();
            assert!(z.max_abs_diff(&f) < 1e-8, "tau {tau}");
        }
    }

    #[test]
    fn long_time_limit_is_the_weighted_mean() {
        let (_, b) = setup(&icosphere(2), 20);
        let f = random_field(b.n(), 2, 2);
        let proj = heat_diffuse_tensor(&b, &f, 0.0).unwrap();
        let area: f64 = b.mass().iter().sum();
        let z = heat_diffuse_tensor(&b, &f, 1e6).unwrap();
        for c in 0..2 {
            let mean: f64 =
                (0..b.n()).map(|r| b.mass()[r] * proj.get(r, c)).sum::<f64>() / area;
            for r in 0..b.n() {
                assert!((z.get(r, c) - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn negative_tau_is_rejected() {
        let (_, b) = setup(&icosphere(1), 10);
        assert!(heat_diffuse_tensor(&b, &Tensor::zeros(b.n(), 1), -1.0).is_err());
    }

    #[test]
    fn dirichlet_energy_does_not_increase_with_tau() {
        let (w, b) = setup(&icosphere(2), 30);
        let f = random_field(b.n(), 4, 3);
        let mut last = f64::INFINITY;
        for tau in [0.0, 1e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0, 10.0] {
            let z = heat_diffuse_tensor(&b, &f, tau).unwrap();
            let wz = w.mul_dense(&z).unwrap();
            let e: f64 = z.data().iter().zip(wz.data()).map(|(a, c)| a * c).sum();
            assert!(e <= last + 1e-12, "tau {tau}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn diffusion_is_linear() {
        let (_, b) = setup(&icosphere(2), 20);
        let f = random_field(b.n(), 3, 4);
        let z1 = heat_diffuse_tensor(&b, &f.scale(-2.5), 0.05).unwrap();
        let z2 = heat_diffuse_tensor(&b, &f, 0.05).unwrap().scale(-2.5);
        assert!(z1.max_abs_diff(&z2) < 1e-10);
    }

    #[test]
    fn wks_columns_and_normalization() {
        let (_, b) = setup(&icosphere(2), 30);
        let d = wks(&b, DEFAULT_WKS_ENERGIES, DEFAULT_WKS_SIGMA_SCALE).unwrap();
        assert_eq!(d.width(), 100);
        assert_eq!(d.n(), b.n());
        assert!(d.values().data().iter().all(|&v| v >= 0.0));
        // with phi replaced by M-normalized constants the weights must average to 1
        let area: f64 = b.mass().iter().sum();
        let flat = Tensor::filled(b.n(), 30, 1.0 / area.sqrt());
        let flat_basis = SpectralBasis::new(flat, b.lambda().to_vec(), b.mass().to_vec()).unwrap();
        let d = wks(&flat_basis, 16, 7.0).unwrap();
        for v in d.values().data() {
            assert!((v - 1.0 / area).abs() < 1e-12);
        }
    }

    #[test]
    fn wks_is_rotation_invariant() {
        // k = 16 ends on a complete cluster (1 + 3 + 5 + 7)
        let m = icosphere(2);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rotated = m
            .map_vertices(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
            .unwrap();
        let rotated = rotated
            .map_vertices(|p| [p[0], c * p[1] - s * p[2], s * p[1] + c * p[2]])
            .unwrap();
        let (_, b0) = setup(&m, 16);
        let (_, b1) = setup(&rotated, 16);
        let d0 = wks(&b0, 100, 7.0).unwrap();
        let d1 = wks(&b1, 100, 7.0).unwrap();
        assert!(d0.values().max_abs_diff(d1.values()) <= 1e-6);
    }

    #[test]
    fn wks_rejects_disconnected_input() {
        let lambda = vec![0.0, 0.0, 1.0, 2.0];
        let b = SpectralBasis::new(Tensor::zeros(5, 4), lambda, vec![1.0; 5]).unwrap();
        assert!(wks(&b, 10, 7.0).is_err());
    }
}
