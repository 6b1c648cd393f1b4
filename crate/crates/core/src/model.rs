//! Preprocessed shapes and the full forward pipeline for a shape pair.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::backbone::{extract_geo_features, init_backbone, BackboneConfig, BasisVars};
use crate::cfm::{cfm_direction, init_velocity, CfmConfig, VelocityConfig};
use crate::error::{Error, Result};
use crate::fmap::{
    couple_loss, hard_pointwise_map, normalize_rows, normalize_rows_tensor, soft_pointwise_map,
    solve_fmap, spectral_coeffs, struct_terms, RegMask,
};
use crate::linalg::CsrMatrix;
use crate::mesh::{one_ring_neighbors, NeighborTable, TriMesh};
use crate::nn::{Bound, ParamStore};
use crate::sglca::{fuse, init_sglca, SglcaConfig};
use crate::spectral::{cotan_laplacian, eigendecompose, wks, SpectralBasis, DEFAULT_WKS_SIGMA_SCALE};

const NORMALIZE_EPS: f64 = 1e-12;

/// Per-vertex input fed to the geometric backbone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descriptor {
    /// Wave kernel signature with `backbone.in_dim` energies.
    #[default]
    Wks,
    /// Vertex coordinates (`in_dim = 3`).
    Xyz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Laplace-Beltrami basis size.
    pub k: usize,
    /// Neighborhood width including the self slot.
    pub k_nb: usize,
    pub tau_t: f64,
    pub lambda_reg: f64,
    pub reg_mask: RegMask,
    pub descriptor: Descriptor,
    /// L2-normalize fused features before the soft and hard maps.
    pub normalize_features: bool,
    pub backbone: BackboneConfig,
    pub sglca: SglcaConfig,
    pub velocity: VelocityConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 30,
            k_nb: 32,
            tau_t: crate::fmap::DEFAULT_TEMPERATURE,
            lambda_reg: crate::fmap::DEFAULT_LAMBDA_REG,
            reg_mask: RegMask::Laplacian,
            descriptor: Descriptor::Wks,
            normalize_features: true,
            backbone: BackboneConfig::default(),
            sglca: SglcaConfig::default(),
            velocity: VelocityConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, errs: &mut Vec<String>) {
        if self.k < 3 {
            errs.push("model.k must be >= 3".into());
        }
        if self.k_nb == 0 {
            errs.push("model.k_nb must be >= 1".into());
        }
        if !(self.tau_t > 0.0) {
            errs.push("model.tau_t must be > 0".into());
        }
        if !(self.lambda_reg >= 0.0) {
            errs.push("model.lambda_reg must be >= 0".into());
        }
        if self.descriptor == Descriptor::Xyz && self.backbone.in_dim != 3 {
            errs.push("model.backbone.in_dim must be 3 for the xyz descriptor".into());
        }
        if self.sglca.geo_dim != self.backbone.width {
            errs.push(format!(
                "model.sglca.geo_dim ({}) must equal model.backbone.width ({})",
                self.sglca.geo_dim, self.backbone.width
            ));
        }
        if self.velocity.width != self.sglca.fused_width() {
            errs.push(format!(
                "model.velocity.width ({}) must equal the fused width ({})",
                self.velocity.width,
                self.sglca.fused_width()
            ));
        }
        self.backbone.validate(errs);
        self.sglca.validate(errs);
        self.velocity.validate(errs);
    }

    /// Copy with dependent widths made consistent with `backbone.width`.
    pub fn with_width(mut self, width: usize) -> Self {
        self.backbone.width = width;
        self.backbone.hidden = width;
        self.sglca.geo_dim = width;
        self.sglca.attn_dim = width;
        self.velocity.width = self.sglca.fused_width();
        self
    }
}

/// Every learnable tensor of the pipeline.
pub fn init_params(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore {
    let mut p = init_backbone(&cfg.backbone, rng);
    p.extend(init_sglca(&cfg.sglca, rng));
    p.extend(init_velocity(&cfg.velocity, rng));
    p
}

/// A mesh with everything the pipeline needs precomputed.
#[derive(Clone, Debug)]
pub struct Shape {
    pub mesh: TriMesh,
    pub basis: SpectralBasis,
    pub stiffness: Arc<CsrMatrix>,
    pub neighbors: NeighborTable,
    /// Semantic features (`n x D^s`), if available.
    pub semantic: Option<Tensor>,
}

impl Shape {
    /// Builds the Laplacian, basis and neighbor table of `mesh`.
    pub fn prepare(mesh: TriMesh, k: usize, k_nb: usize, semantic: Option<Tensor>) -> Result<Self> {
        let (w, mass) = cotan_laplacian(&mesh)?;
        let basis = eigendecompose(&w, &mass, k)?;
        Self::from_parts(mesh, basis, w, semantic, k_nb)
    }

    pub fn from_parts(
        mesh: TriMesh,
        basis: SpectralBasis,
        stiffness: CsrMatrix,
        semantic: Option<Tensor>,
        k_nb: usize,
    ) -> Result<Self> {
        let n = mesh.n_vertices();
        if basis.n() != n || stiffness.nrows() != n {
            return Err(Error::shape("Shape", "basis or stiffness does not match the mesh"));
        }
        if let Some(s) = &semantic {
            if s.rows() != n {
                return Err(Error::shape(
                    "Shape",
                    format!("{} semantic rows for {n} vertices", s.rows()),
                ));
            }
        }
        Ok(Shape {
            neighbors: one_ring_neighbors(&mesh, k_nb)?,
            mesh,
            basis,
            stiffness: Arc::new(stiffness),
            semantic,
        })
    }

    pub fn n(&self) -> usize {
        self.mesh.n_vertices()
    }

    /// Backbone input under `descriptor`.
    pub fn raw_descriptor(&self, cfg: &ModelConfig) -> Result<Tensor> {
        match cfg.descriptor {
            Descriptor::Wks => Ok(wks(&self.basis, cfg.backbone.in_dim, DEFAULT_WKS_SIGMA_SCALE)?.into_values()),
            Descriptor::Xyz => Ok(Tensor::from_fn(self.n(), 3, |r, c| self.mesh.vertices()[r][c])),
        }
    }
}

/// Tape handles for one shape's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ShapeVars {
    pub basis: BasisVars,
    pub fused: Var,
}

/// Raw descriptor to fused features.
pub fn forward_shape(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    shape: &Shape,
    raw: &Tensor,
) -> Result<ShapeVars> {
    if shape.basis.k() < cfg.k {
        return Err(Error::arg(format!(
            "shape has {} eigenpairs, config needs k = {}",
            shape.basis.k(),
            cfg.k
        )));
    }
    let basis = if shape.basis.k() == cfg.k {
        BasisVars::new(tape, &shape.basis)
    } else {
        BasisVars::new(tape, &shape.basis.truncated(cfg.k)?)
    };
    let raw = tape.constant(raw.clone());
    let geo = extract_geo_features(tape, p, &cfg.backbone, &basis, raw)?;
    let sem = if cfg.sglca.mode.uses_semantics() {
        let s = shape
            .semantic
            .as_ref()
            .ok_or_else(|| Error::arg("semantic features required by the fusion mode"))?;
        Some(tape.constant(s.clone()))
    } else {
        None
    };
    let fused = fuse(tape, p, &cfg.sglca, geo, sem, &shape.neighbors)?;
    Ok(ShapeVars { basis, fused })
}

fn map_features(tape: &mut Tape, cfg: &ModelConfig, f: Var) -> Result<Var> {
    if cfg.normalize_features {
        normalize_rows(tape, f, NORMALIZE_EPS)
    } else {
        Ok(f)
    }
}

/// Loss weights of the unsupervised objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub bij: f64,
    pub orth: f64,
    pub couple: f64,
    pub cfm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            bij: 1.0,
            orth: 1.0,
            couple: 1.0,
            cfm: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, errs: &mut Vec<String>) {
        for (k, v) in [("bij", self.bij), ("orth", self.orth), ("couple", self.couple), ("cfm", self.cfm)] {
            if !(v >= 0.0) || !v.is_finite() {
                errs.push(format!("loss.{k} must be finite and >= 0"));
            }
        }
    }
}

/// Unweighted loss terms and the weighted total, all on the tape.
#[derive(Clone, Copy, Debug)]
pub struct PairLosses {
    pub bij: Var,
    pub orth: Var,
    pub couple: Var,
    pub cfm: Var,
    pub total: Var,
    pub pi_xy: Var,
    pub pi_yx: Var,
}

/// Records the complete pairwise objective on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn pair_losses(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    cfm: &CfmConfig,
    w: &LossWeights,
    x: (&Shape, &Tensor),
    y: (&Shape, &Tensor),
    rng: &mut impl Rng,
) -> Result<PairLosses> {
    let vx = forward_shape(tape, p, cfg, x.0, x.1)?;
    let vy = forward_shape(tape, p, cfg, y.0, y.1)?;
    let lx = &x.0.basis.lambda()[..cfg.k];
    let ly = &y.0.basis.lambda()[..cfg.k];

    let a = spectral_coeffs(tape, &vx.basis, vx.fused)?;
    let b = spectral_coeffs(tape, &vy.basis, vy.fused)?;
    let c_xy = solve_fmap(tape, a, b, lx, ly, cfg.lambda_reg, cfg.reg_mask)?;
    let c_yx = solve_fmap(tape, b, a, ly, lx, cfg.lambda_reg, cfg.reg_mask)?;

    let fx = map_features(tape, cfg, vx.fused)?;
    let fy = map_features(tape, cfg, vy.fused)?;
    let pi_xy = soft_pointwise_map(tape, fx, fy, cfg.tau_t)?;
    let pi_yx = soft_pointwise_map(tape, fy, fx, cfg.tau_t)?;

    let (bij, orth) = struct_terms(tape, c_xy, c_yx)?;
    let couple = couple_loss(tape, c_xy, c_yx, pi_xy, pi_yx, &vx.basis, &vy.basis)?;

    let cfm_term = if w.cfm > 0.0 {
        let zx = diffused(tape, cfm, &vx)?;
        let zy = diffused(tape, cfm, &vy)?;
        let z1x = tape.matmul(pi_xy, zy)?;
        let z1y = tape.matmul(pi_yx, zx)?;
        let l1 = cfm_direction(tape, p, &cfg.velocity, cfm, zx, z1x, &x.0.stiffness, rng)?;
        let l2 = cfm_direction(tape, p, &cfg.velocity, cfm, zy, z1y, &y.0.stiffness, rng)?;
        let s = tape.add(l1, l2)?;
        tape.scale(s, 0.5)?
    } else {
        tape.constant(Tensor::scalar(0.0))
    };

    let mut total = tape.scale(bij, w.bij)?;
    for (term, weight) in [(orth, w.orth), (couple, w.couple), (cfm_term, w.cfm)] {
        let t = tape.scale(term, weight)?;
        total = tape.add(total, t)?;
    }
    Ok(PairLosses {
        bij,
        orth,
        couple,
        cfm: cfm_term,
        total,
        pi_xy,
        pi_yx,
    })
}

fn diffused(tape: &mut Tape, cfm: &CfmConfig, v: &ShapeVars) -> Result<Var> {
    if !cfm.heat_diffusion {
        return Ok(v.fused);
    }
    let width = tape.shape(v.fused).1;
    let tau = tape.constant(Tensor::filled(1, width, cfm.tau_diff));
    crate::backbone::diffuse_channels(tape, &v.basis, v.fused, tau)
}

/// Fused features of one shape under fixed parameters.
pub fn fused_features(params: &ParamStore, cfg: &ModelConfig, shape: &Shape) -> Result<Tensor> {
    let raw = shape.raw_descriptor(cfg)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let v = forward_shape(&mut tape, &p, cfg, shape, &raw)?;
    Ok(tape.value(v.fused).clone())
}

/// Hard correspondence `X -> Y` from the learned features.
pub fn match_shapes(params: &ParamStore, cfg: &ModelConfig, x: &Shape, y: &Shape) -> Result<Vec<usize>> {
    let mut fx = fused_features(params, cfg, x)?;
    let mut fy = fused_features(params, cfg, y)?;
    if cfg.normalize_features {
        fx = normalize_rows_tensor(&fx, NORMALIZE_EPS);
        fy = normalize_rows_tensor(&fy, NORMALIZE_EPS);
    }
    hard_pointwise_map(&fx, &fy)
}
