//! Laplace-Beltrami discretization, truncated eigenbases, heat diffusion and WKS.
//!
//! Meshes are expected to be normalized to unit total area before they reach
//! this module so that eigenvalues and diffusion times are comparable across
//! shapes.

mod descriptors;
mod eigen;
mod laplacian;

pub use descriptors::{heat_diffuse, heat_diffuse_tensor, wks, DEFAULT_WKS_ENERGIES, DEFAULT_WKS_SIGMA_SCALE};
pub use eigen::{eigendecompose, eigendecompose_with, EigenSolver, DENSE_LIMIT, EIGEN_RESIDUAL_TOL};
pub use laplacian::cotan_laplacian;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Truncated generalized eigenbasis of one shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    phi: Tensor,
    lambda: Vec<f64>,
    mass: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(phi: Tensor, lambda: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        let (n, k) = phi.shape();
        if lambda.len() != k || mass.len() != n {
            return Err(Error::shape(
                "SpectralBasis",
                format!("phi {n}x{k}, {} eigenvalues, {} masses", lambda.len(), mass.len()),
            ));
        }
        if lambda.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::arg("eigenvalues must be nondecreasing"));
        }
        if !phi.is_finite() || lambda.iter().chain(&mass).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "SpectralBasis" });
        }
        Ok(SpectralBasis { phi, lambda, mass })
    }

    /// Eigenfunctions as columns (`n x k`).
    pub fn phi(&self) -> &Tensor {
        &self.phi
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Lumped vertex areas.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn n(&self) -> usize {
        self.phi.rows()
    }

    pub fn k(&self) -> usize {
        self.phi.cols()
    }

    /// `Phi^T diag(mass)` (`k x n`), the left inverse of `Phi`.
    pub fn pinv(&self) -> Tensor {
        let (n, k) = self.phi.shape();
        Tensor::from_fn(k, n, |c, r| self.phi.get(r, c) * self.mass[r])
    }

    /// First `k` eigenpairs.
    pub fn truncated(&self, k: usize) -> Result<SpectralBasis> {
        if k == 0 || k > self.k() {
            return Err(Error::arg(format!("cannot truncate a {}-basis to {k}", self.k())));
        }
        let phi = Tensor::from_fn(self.n(), k, |r, c| self.phi.get(r, c));
        Ok(SpectralBasis {
            phi,
            lambda: self.lambda[..k].to_vec(),
            mass: self.mass.clone(),
        })
    }

    /// `max |Phi^T M Phi - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.pinv().matmul(&self.phi).expect("shapes agree");
        gram.max_abs_diff(&Tensor::eye(self.k()))
    }

    /// Relative residual of each eigenpair against the stiffness matrix.
    pub fn residuals(&self, w: &CsrMatrix) -> Result<Vec<f64>> {
        if w.nrows() != self.n() || w.ncols() != self.n() {
            return Err(Error::shape("residuals", "stiffness size differs from basis"));
        }
        let w_norm = eigen::inf_norm(w);
        Ok((0..self.k())
            .map(|c| {
                let col: Vec<f64> = (0..self.n()).map(|r| self.phi.get(r, c)).collect();
                eigen::relative_residual(w, w_norm, &self.mass, &col, self.lambda[c])
            })
            .collect())
    }
}

/// Semantic role of a per-vertex feature matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureTag {
    Geo,
    Sem,
    Fused,
    Diffused,
    SpectralCoeff,
}

/// Per-vertex feature matrix (`n x D`) with all entries finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    values: Tensor,
    tag: FeatureTag,
}

impl FeatureField {
    pub fn new(values: Tensor, tag: FeatureTag) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::NonFinite { op: "FeatureField" });
        }
        Ok(FeatureField { values, tag })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn tag(&self) -> FeatureTag {
        self.tag
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }
}
