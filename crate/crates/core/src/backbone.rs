//! Learnable per-vertex geometric feature extractor.
//!
//! A linear input projection followed by residual blocks. Each block diffuses
//! every channel over the surface with its own learnable time, then applies a
//! pointwise two-layer MLP: `y = D(x) + s * MLP(D(x))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{add_linear, linear, Bound, ParamStore};
use crate::spectral::SpectralBasis;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Raw descriptor width (WKS energies or 3 for coordinates).
    pub in_dim: usize,
    /// Output width `D^g`.
    pub width: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub tau_init: f64,
    pub residual_scale: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            in_dim: 100,
            width: 256,
            hidden: 256,
            blocks: 4,
            tau_init: 1e-2,
            residual_scale: 1.0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self, errs: &mut Vec<String>) {
        if self.in_dim == 0 {
            errs.push("backbone.in_dim must be >= 1".into());
        }
        if self.width == 0 || self.hidden == 0 {
            errs.push("backbone.width and backbone.hidden must be >= 1".into());
        }
        if !(self.tau_init > 0.0) {
            errs.push("backbone.tau_init must be > 0".into());
        }
        if !self.residual_scale.is_finite() {
            errs.push("backbone.residual_scale must be finite".into());
        }
    }
}

/// Parameters under the `geo.` prefix.
pub fn init_backbone(cfg: &BackboneConfig, rng: &mut impl Rng) -> ParamStore {
    let mut s = ParamStore::new();
    add_linear(&mut s, rng, "geo.in", cfg.in_dim, cfg.width);
    for b in 0..cfg.blocks {
        s.insert(
            format!("geo.block{b}.log_tau"),
            Tensor::filled(1, cfg.width, cfg.tau_init.ln()),
        );
        add_linear(&mut s, rng, &format!("geo.block{b}.mlp1"), cfg.width, cfg.hidden);
        add_linear(&mut s, rng, &format!("geo.block{b}.mlp2"), cfg.hidden, cfg.width);
    }
    s
}

/// Basis matrices of one shape recorded as tape constants.
#[derive(Clone, Copy, Debug)]
pub struct BasisVars {
    pub phi: Var,
    /// `Phi^T M` (`k x n`).
    pub pinv: Var,
    /// Eigenvalues as a `k x 1` column.
    pub lambda: Var,
}

impl BasisVars {
    pub fn new(tape: &mut Tape, basis: &SpectralBasis) -> Self {
        BasisVars {
            phi: tape.constant(basis.phi().clone()),
            pinv: tape.constant(basis.pinv()),
            lambda: tape.constant(Tensor::column(basis.lambda().to_vec())),
        }
    }
}

/// Per-channel spectral diffusion `Phi (exp(-lambda tau^T) .* (Phi^T M x))` with
/// `tau` a `1 x D` row of (differentiable) times.
pub fn diffuse_channels(tape: &mut Tape, b: &BasisVars, x: Var, tau: Var) -> Result<Var> {
    let coeffs = tape.matmul(b.pinv, x)?;
    let lt = tape.matmul(b.lambda, tau)?;
    let neg = tape.scale(lt, -1.0)?;
    let gain = tape.exp(neg)?;
    let filtered = tape.mul(coeffs, gain)?;
    tape.matmul(b.phi, filtered)
}

/// Geometric features `F_geo` (`n x width`) from raw descriptors (`n x in_dim`).
pub fn extract_geo_features(
    tape: &mut Tape,
    p: &Bound,
    cfg: &BackboneConfig,
    basis: &BasisVars,
    raw: Var,
) -> Result<Var> {
    let (_, cols) = tape.shape(raw);
    if cols != cfg.in_dim {
        return Err(Error::shape(
            "extract_geo_features",
            format!("raw width {cols}, projection expects {}", cfg.in_dim),
        ));
    }
    let mut x = linear(tape, p, "geo.in", raw)?;
    for b in 0..cfg.blocks {
        let tau = tape.exp(p.var(&format!("geo.block{b}.log_tau"))?)?;
        let d = diffuse_channels(tape, basis, x, tau)?;
        let h = linear(tape, p, &format!("geo.block{b}.mlp1"), d)?;
        let h = tape.relu(h)?;
        let h = linear(tape, p, &format!("geo.block{b}.mlp2"), h)?;
        let h = tape.scale(h, cfg.residual_scale)?;
        x = tape.add(d, h)?;
    }
    Ok(x)
}
