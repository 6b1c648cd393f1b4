//! Semantic-guided fusion of geometric and semantic per-vertex features.
//!
//! The default mode gates geometric channels with projected semantic features
//! and then runs single-head cross-attention restricted to each vertex's
//! 1-ring (queries from geometry, keys and values from semantics). The other
//! modes are fusion baselines used for ablations.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mesh::NeighborTable;
use crate::nn::{add_linear, init_linear, linear, Bound, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Gating followed by local cross-attention.
    Sglca,
    /// Local cross-attention on ungated geometric features.
    NoGate,
    /// Geometric features only; semantic input is ignored.
    GeoOnly,
    /// Projected semantic features only.
    SemOnly,
    /// `F_geo + phi(F_sem)`.
    Add,
    /// `[F_geo, F_sem]` without any projection.
    Concat,
    /// Two-layer MLP over `[F_geo, F_sem]` back to the geometric width.
    ConcatMlp,
}

impl FusionMode {
    pub fn uses_semantics(self) -> bool {
        self != FusionMode::GeoOnly
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SglcaConfig {
    /// Semantic feature width `D^s`.
    pub sem_dim: usize,
    /// Geometric feature width `D^g`.
    pub geo_dim: usize,
    /// Attention embedding width `d`.
    pub attn_dim: usize,
    pub mode: FusionMode,
    /// Give padded self-slots zero attention weight.
    pub mask_duplicates: bool,
    pub alpha_gate_init: f64,
    pub ln_eps: f64,
}

impl Default for SglcaConfig {
    fn default() -> Self {
        SglcaConfig {
            sem_dim: 768,
            geo_dim: 256,
            attn_dim: 256,
            mode: FusionMode::Sglca,
            mask_duplicates: false,
            alpha_gate_init: 0.0,
            ln_eps: 1e-5,
        }
    }
}

impl SglcaConfig {
    /// Width of the fused features produced under the configured mode.
    pub fn fused_width(&self) -> usize {
        match self.mode {
            FusionMode::Concat => self.geo_dim + self.sem_dim,
            _ => self.geo_dim,
        }
    }

    pub fn validate(&self, errs: &mut Vec<String>) {
        if self.sem_dim == 0 || self.geo_dim == 0 || self.attn_dim == 0 {
            errs.push("sglca widths must be >= 1".into());
        }
        if !(self.ln_eps > 0.0) {
            errs.push("sglca.ln_eps must be > 0".into());
        }
        if !self.alpha_gate_init.is_finite() {
            errs.push("sglca.alpha_gate_init must be finite".into());
        }
    }

    fn attends(&self) -> bool {
        matches!(self.mode, FusionMode::Sglca | FusionMode::NoGate)
    }
}

/// Parameters under the `sglca.` prefix; only those the mode uses are created.
pub fn init_sglca(cfg: &SglcaConfig, rng: &mut impl Rng) -> ParamStore {
    let mut s = ParamStore::new();
    let (dg, ds, d) = (cfg.geo_dim, cfg.sem_dim, cfg.attn_dim);
    if matches!(
        cfg.mode,
        FusionMode::Sglca | FusionMode::NoGate | FusionMode::SemOnly | FusionMode::Add
    ) {
        add_linear(&mut s, rng, "sglca.phi", ds, dg);
    }
    if cfg.mode == FusionMode::Sglca {
        add_linear(&mut s, rng, "sglca.gate1", dg, dg);
        add_linear(&mut s, rng, "sglca.gate2", dg, dg);
        s.insert("sglca.alpha_gate", Tensor::scalar(cfg.alpha_gate_init));
    }
    if cfg.attends() {
        for name in ["sglca.wq", "sglca.wk", "sglca.wv"] {
            s.insert(name, init_linear(rng, dg, d).0);
        }
        if d != dg {
            s.insert("sglca.wo", init_linear(rng, d, dg).0);
        }
        s.insert("sglca.ln.gain", Tensor::filled(1, dg, 1.0));
        s.insert("sglca.ln.bias", Tensor::zeros(1, dg));
    }
    if cfg.mode == FusionMode::ConcatMlp {
        add_linear(&mut s, rng, "sglca.cat1", dg + ds, dg);
        add_linear(&mut s, rng, "sglca.cat2", dg, dg);
    }
    s
}

fn check_widths(tape: &Tape, cfg: &SglcaConfig, f_geo: Var, f_sem: Option<Var>) -> Result<()> {
    let (n, g) = tape.shape(f_geo);
    if g != cfg.geo_dim {
        return Err(Error::shape("sglca", format!("geometric width {g}, expected {}", cfg.geo_dim)));
    }
    if let Some(s) = f_sem {
        let (ns, w) = tape.shape(s);
        if w != cfg.sem_dim || ns != n {
            return Err(Error::shape(
                "sglca",
                format!("semantic features {ns}x{w}, expected {n}x{}", cfg.sem_dim),
            ));
        }
    }
    Ok(())
}

/// `phi(F_sem)`, then `F_geo * (1 + alpha * sigmoid(MLP(phi(F_sem))))`.
pub fn semantic_gate(
    tape: &mut Tape,
    p: &Bound,
    cfg: &SglcaConfig,
    f_geo: Var,
    f_sem: Var,
) -> Result<(Var, Var)> {
    check_widths(tape, cfg, f_geo, Some(f_sem))?;
    let sem_t = linear(tape, p, "sglca.phi", f_sem)?;
    let h = linear(tape, p, "sglca.gate1", sem_t)?;
    let h = tape.relu(h)?;
    let h = linear(tape, p, "sglca.gate2", h)?;
    let gate = tape.sigmoid(h)?;
    let modulated = tape.mul(f_geo, gate)?;
    let scaled = tape.scale_by(modulated, p.var("sglca.alpha_gate")?)?;
    let geo_t = tape.add(f_geo, scaled)?;
    Ok((geo_t, sem_t))
}

/// Flat neighbor indices and, for each slot, the row it belongs to.
fn slot_indices(nb: &NeighborTable) -> (Arc<Vec<usize>>, Arc<Vec<usize>>) {
    let owners = (0..nb.n_rows())
        .flat_map(|i| std::iter::repeat(i).take(nb.width()))
        .collect();
    (Arc::new(nb.indices().to_vec()), Arc::new(owners))
}

/// Attention weights `omega` (`n x k_nb`) over each neighbor slot.
pub fn attention_weights(
    tape: &mut Tape,
    p: &Bound,
    cfg: &SglcaConfig,
    geo_t: Var,
    sem_t: Var,
    nb: &NeighborTable,
) -> Result<Var> {
    let (n, _) = tape.shape(geo_t);
    if nb.n_rows() != n {
        return Err(Error::shape(
            "local_cross_attention",
            format!("{} neighbor rows for {n} vertices", nb.n_rows()),
        ));
    }
    let (idx, owners) = slot_indices(nb);
    let q = tape.matmul(geo_t, p.var("sglca.wq")?)?;
    let k = tape.matmul(sem_t, p.var("sglca.wk")?)?;
    let q_slots = tape.gather_rows(q, owners)?;
    let k_slots = tape.gather_rows(k, idx)?;
    let prod = tape.mul(q_slots, k_slots)?;
    let logits = tape.row_sum(prod)?;
    let logits = tape.scale(logits, 1.0 / (cfg.attn_dim as f64).sqrt())?;
    let logits = tape.reshape(logits, n, nb.width())?;
    let mask = cfg.mask_duplicates.then(|| nb.valid());
    tape.row_softmax_masked(logits, mask)
}

/// `F_fuse_i = geo_t_i + LN(sum_j omega_ij V_j)` with `V = sem_t W_V`.
pub fn local_cross_attention(
    tape: &mut Tape,
    p: &Bound,
    cfg: &SglcaConfig,
    geo_t: Var,
    sem_t: Var,
    nb: &NeighborTable,
) -> Result<Var> {
    let (n, _) = tape.shape(geo_t);
    let omega = attention_weights(tape, p, cfg, geo_t, sem_t, nb)?;
    let (idx, owners) = slot_indices(nb);
    let v = tape.matmul(sem_t, p.var("sglca.wv")?)?;
    let v_slots = tape.gather_rows(v, idx)?;
    let w_col = tape.reshape(omega, n * nb.width(), 1)?;
    let weighted = tape.mul_col(v_slots, w_col)?;
    let mut agg = tape.scatter_add_rows(weighted, owners, n)?;
    if p.has("sglca.wo") {
        agg = tape.matmul(agg, p.var("sglca.wo")?)?;
    }
    let normed = tape.layer_norm(agg, cfg.ln_eps)?;
    let normed = tape.mul_row(normed, p.var("sglca.ln.gain")?)?;
    let normed = tape.add_row(normed, p.var("sglca.ln.bias")?)?;
    tape.add(geo_t, normed)
}

fn concat_cols(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let at = tape.transpose(a)?;
    let bt = tape.transpose(b)?;
    let c = tape.concat_rows(&[at, bt])?;
    tape.transpose(c)
}

/// Fused features under the configured mode.
pub fn fuse(
    tape: &mut Tape,
    p: &Bound,
    cfg: &SglcaConfig,
    f_geo: Var,
    f_sem: Option<Var>,
    nb: &NeighborTable,
) -> Result<Var> {
    if cfg.mode == FusionMode::GeoOnly {
        check_widths(tape, cfg, f_geo, None)?;
        return Ok(f_geo);
    }
    let f_sem = f_sem.ok_or_else(|| Error::arg("semantic features required by fusion mode"))?;
    check_widths(tape, cfg, f_geo, Some(f_sem))?;
    match cfg.mode {
        FusionMode::Sglca => {
            let (geo_t, sem_t) = semantic_gate(tape, p, cfg, f_geo, f_sem)?;
            local_cross_attention(tape, p, cfg, geo_t, sem_t, nb)
        }
        FusionMode::NoGate => {
            let sem_t = linear(tape, p, "sglca.phi", f_sem)?;
            local_cross_attention(tape, p, cfg, f_geo, sem_t, nb)
        }
        FusionMode::SemOnly => linear(tape, p, "sglca.phi", f_sem),
        FusionMode::Add => {
            let sem_t = linear(tape, p, "sglca.phi", f_sem)?;
            tape.add(f_geo, sem_t)
        }
        FusionMode::Concat => concat_cols(tape, f_geo, f_sem),
        FusionMode::ConcatMlp => {
            let c = concat_cols(tape, f_geo, f_sem)?;
            let h = linear(tape, p, "sglca.cat1", c)?;
            let h = tape.relu(h)?;
            linear(tape, p, "sglca.cat2", h)
        }
        FusionMode::GeoOnly => unreachable!(),
    }
}
