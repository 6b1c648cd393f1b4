//! Regularized functional maps, structural and coupling losses, and
//! point-wise map recovery.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::backbone::BasisVars;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA_REG: f64 = 1e-3;
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Eigenvalue-difference penalty used by the functional-map regularizer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMask {
    /// `(lambda_tgt_i - lambda_src_j)^2 / max_eig^2` (Laplacian commutativity).
    #[default]
    Laplacian,
    /// Resolvent commutativity mask with exponent 1/2.
    Resolvent,
}

/// Penalty matrix `Delta` (`k_tgt x k_src`).
pub fn reg_mask(lambda_src: &[f64], lambda_tgt: &[f64], kind: RegMask) -> Tensor {
    let max = lambda_src
        .iter()
        .chain(lambda_tgt)
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(f64::MIN_POSITIVE);
    match kind {
        RegMask::Laplacian => Tensor::from_fn(lambda_tgt.len(), lambda_src.len(), |i, j| {
            let d = (lambda_tgt[i] - lambda_src[j]) / max;
            d * d
        }),
        RegMask::Resolvent => {
            let g = |l: f64| (l.max(0.0) / max).sqrt();
            Tensor::from_fn(lambda_tgt.len(), lambda_src.len(), |i, j| {
                let (t, s) = (g(lambda_tgt[i]), g(lambda_src[j]));
                let re = t / (t * t + 1.0) - s / (s * s + 1.0);
                let im = 1.0 / (t * t + 1.0) - 1.0 / (s * s + 1.0);
                re * re + im * im
            })
        }
    }
}

/// Spectral coefficients `Phi^T M F` (`k x D`).
pub fn spectral_coeffs(tape: &mut Tape, basis: &BasisVars, f: Var) -> Result<Var> {
    tape.matmul(basis.pinv, f)
}

/// Functional map `C` (`k_tgt x k_src`) minimizing
/// `|C A - B|^2 + lambda_reg * sum_ij Delta_ij C_ij^2`.
///
/// Row `i` solves `(A A^T + lambda_reg diag(Delta_i)) c_i^T = A B_i^T`.
pub fn solve_fmap(
    tape: &mut Tape,
    a_src: Var,
    b_tgt: Var,
    lambda_src: &[f64],
    lambda_tgt: &[f64],
    lambda_reg: f64,
    kind: RegMask,
) -> Result<Var> {
    let (ks, d) = tape.shape(a_src);
    let (kt, db) = tape.shape(b_tgt);
    if d != db || ks != lambda_src.len() || kt != lambda_tgt.len() {
        return Err(Error::shape(
            "solve_fmap",
            format!(
                "A {ks}x{d}, B {kt}x{db}, {} / {} eigenvalues",
                lambda_src.len(),
                lambda_tgt.len()
            ),
        ));
    }
    if !(lambda_reg >= 0.0) {
        return Err(Error::arg("lambda_reg must be nonnegative"));
    }
    let mask = reg_mask(lambda_src, lambda_tgt, kind);
    let gram = tape.matmul_t(a_src, false, a_src, true)?;
    let rhs = tape.matmul_t(a_src, false, b_tgt, true)?;
    let mut rows = Vec::with_capacity(kt);
    for i in 0..kt {
        let mut diag = Tensor::zeros(ks, ks);
        for j in 0..ks {
            diag.set(j, j, lambda_reg * mask.get(i, j));
        }
        let sys = tape.add_const(gram, &diag)?;
        let r = tape.slice_cols(rhs, i, 1)?;
        let c = tape.linear_solve(sys, r)?;
        rows.push(tape.transpose(c)?);
    }
    tape.concat_rows(&rows)
}

/// `l_bij * (|C_xy C_yx - I|^2 + |C_yx C_xy - I|^2)
///  + l_orth * (|C_xy^T C_xy - I|^2 + |C_yx^T C_yx - I|^2)`, returned as
/// `(bijectivity, orthogonality)` before weighting.
pub fn struct_terms(tape: &mut Tape, c_xy: Var, c_yx: Var) -> Result<(Var, Var)> {
    let (a, b) = tape.shape(c_xy);
    if tape.shape(c_yx) != (b, a) {
        return Err(Error::shape("struct_loss", "maps are not mutually transposed in shape"));
    }
    let dev = |tape: &mut Tape, p: Var, ta: bool, q: Var| -> Result<Var> {
        let prod = tape.matmul_t(p, ta, q, false)?;
        let n = tape.shape(prod).0;
        let shifted = tape.add_const(prod, &Tensor::eye(n).scale(-1.0))?;
        tape.frobenius_norm_sq(shifted)
    };
    let b1 = dev(tape, c_xy, false, c_yx)?;
    let b2 = dev(tape, c_yx, false, c_xy)?;
    let o1 = dev(tape, c_xy, true, c_xy)?;
    let o2 = dev(tape, c_yx, true, c_yx)?;
    Ok((tape.add(b1, b2)?, tape.add(o1, o2)?))
}

pub fn struct_loss(tape: &mut Tape, c_xy: Var, c_yx: Var, w_bij: f64, w_orth: f64) -> Result<Var> {
    let (bij, orth) = struct_terms(tape, c_xy, c_yx)?;
    let bij = tape.scale(bij, w_bij)?;
    let orth = tape.scale(orth, w_orth)?;
    tape.add(bij, orth)
}

/// Row-wise L2 normalization `x_i / sqrt(|x_i|^2 + eps)`.
pub fn normalize_rows(tape: &mut Tape, x: Var, eps: f64) -> Result<Var> {
    let sq = tape.mul(x, x)?;
    let s = tape.row_sum(sq)?;
    let s = tape.add_scalar(s, eps)?;
    let l = tape.log(s)?;
    let l = tape.scale(l, -0.5)?;
    let inv = tape.exp(l)?;
    tape.mul_col(x, inv)
}

/// Row-stochastic soft map `softmax(F_x F_y^T / tau_t)` (`n_x x n_y`).
pub fn soft_pointwise_map(tape: &mut Tape, f_x: Var, f_y: Var, tau_t: f64) -> Result<Var> {
    if !(tau_t > 0.0) {
        return Err(Error::arg(format!("temperature must be positive, got {tau_t}")));
    }
    let sim = tape.matmul_t(f_x, false, f_y, true)?;
    let sim = tape.scale(sim, 1.0 / tau_t)?;
    tape.row_softmax(sim)
}

/// `|C_xy - Phi_y^+ Pi_yx Phi_x|^2 + |C_yx - Phi_x^+ Pi_xy Phi_y|^2`.
pub fn couple_loss(
    tape: &mut Tape,
    c_xy: Var,
    c_yx: Var,
    pi_xy: Var,
    pi_yx: Var,
    bx: &BasisVars,
    by: &BasisVars,
) -> Result<Var> {
    let term = |tape: &mut Tape, c: Var, pinv_t: Var, pi: Var, phi_s: Var| -> Result<Var> {
        let pm = tape.matmul(pi, phi_s)?;
        let induced = tape.matmul(pinv_t, pm)?;
        let diff = tape.sub(c, induced)?;
        tape.frobenius_norm_sq(diff)
    };
    let a = term(tape, c_xy, by.pinv, pi_yx, bx.phi)?;
    let b = term(tape, c_yx, bx.pinv, pi_xy, by.phi)?;
    tape.add(a, b)
}

/// Target index of the largest inner product for every source row; ties go to
/// the lowest index.
pub fn hard_pointwise_map(f_x: &Tensor, f_y: &Tensor) -> Result<Vec<usize>> {
    if f_x.cols() != f_y.cols() {
        return Err(Error::shape(
            "hard_pointwise_map",
            format!("widths {} and {}", f_x.cols(), f_y.cols()),
        ));
    }
    if f_y.rows() == 0 {
        return Err(Error::arg("target has no vertices"));
    }
    let sim = f_x.matmul_nt(f_y)?;
    Ok((0..sim.rows())
        .map(|i| {
            let row = sim.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Row-wise L2 normalization of a plain tensor, matching [`normalize_rows`].
pub fn normalize_rows_tensor(x: &Tensor, eps: f64) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let s = 1.0 / (x.row(r).iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
        out.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    out
}
