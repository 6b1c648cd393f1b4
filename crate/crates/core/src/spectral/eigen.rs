use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SpectralBasis;
use crate::autodiff::{dot, Tensor};
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Relative residual bound every returned eigenpair must satisfy.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-6;

/// Problems up to this size go through the dense solver under `EigenSolver::Auto`.
pub const DENSE_LIMIT: usize = 1500;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EigenSolver {
    #[default]
    Auto,
    Dense,
    Lanczos,
}

/// `k` smallest generalized eigenpairs of `W phi = lambda diag(mass) phi`.
pub fn eigendecompose(w: &CsrMatrix, mass: &[f64], k: usize) -> Result<SpectralBasis> {
    eigendecompose_with(w, mass, k, EigenSolver::Auto)
}

pub fn eigendecompose_with(
    w: &CsrMatrix,
    mass: &[f64],
    k: usize,
    solver: EigenSolver,
) -> Result<SpectralBasis> {
    let n = w.nrows();
    if w.ncols() != n || mass.len() != n {
        return Err(Error::shape(
            "eigendecompose",
            format!("{}x{} stiffness with {} masses", n, w.ncols(), mass.len()),
        ));
    }
    if k == 0 || k >= n {
        return Err(Error::arg(format!("k < n required (k = {k}, n = {n})")));
    }
    if mass.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::arg("mass entries must be positive and finite"));
    }
    if !w.is_symmetric(1e-12 * max_abs_entry(w).max(1.0)) {
        return Err(Error::arg("stiffness matrix is not symmetric"));
    }
    let use_dense = match solver {
        EigenSolver::Auto => n <= DENSE_LIMIT,
        EigenSolver::Dense => true,
        EigenSolver::Lanczos => false,
    };
    let (lambda, mut phi) = if use_dense {
        dense_pairs(w, mass, k)?
    } else {
        lanczos_pairs(w, mass, k)?
    };
    fix_signs(&mut phi);
    let lambda: Vec<f64> = lambda.into_iter().map(|l| l.max(0.0)).collect();
    let basis = SpectralBasis::new(phi, lambda, mass.to_vec())?;
    let worst = basis.residuals(w)?.into_iter().fold(0.0, f64::max);
    if worst > EIGEN_RESIDUAL_TOL {
        return Err(Error::NoConvergence { residual: worst });
    }
    Ok(basis)
}

/// Relative residual `|W phi - lambda M phi| / max(|W phi|, floor)` for one pair.
///
/// The floor `1e-3 * |W|_inf * |phi|` keeps kernel modes, where `W phi` vanishes,
/// from dividing by zero.
pub(crate) fn relative_residual(
    w: &CsrMatrix,
    w_norm: f64,
    mass: &[f64],
    phi: &[f64],
    lambda: f64,
) -> f64 {
    let mut wphi = vec![0.0; phi.len()];
    w.matvec(phi, &mut wphi);
    let mut res = 0.0;
    for i in 0..phi.len() {
        let r = wphi[i] - lambda * mass[i] * phi[i];
        res += r * r;
    }
    let denom = dot(&wphi, &wphi)
        .sqrt()
        .max(1e-3 * w_norm * dot(phi, phi).sqrt());
    res.sqrt() / denom
}

pub(crate) fn inf_norm(w: &CsrMatrix) -> f64 {
    (0..w.nrows())
        .map(|r| w.row_entries(r).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn max_abs_entry(w: &CsrMatrix) -> f64 {
    (0..w.nrows())
        .flat_map(|r| w.row_entries(r).map(|(_, v)| v.abs()))
        .fold(0.0, f64::max)
}

/// Flips each column so its first entry above a small relative threshold is positive.
fn fix_signs(phi: &mut Tensor) {
    let (n, k) = phi.shape();
    for c in 0..k {
        let scale = (0..n).map(|r| phi.get(r, c).abs()).fold(0.0, f64::max);
        let first = (0..n)
            .map(|r| phi.get(r, c))
            .find(|v| v.abs() > 1e-8 * scale);
        if matches!(first, Some(v) if v < 0.0) {
            for r in 0..n {
                phi.set(r, c, -phi.get(r, c));
            }
        }
    }
}

/// Symmetric reduction `M^-1/2 W M^-1/2` solved densely.
fn dense_pairs(w: &CsrMatrix, mass: &[f64], k: usize) -> Result<(Vec<f64>, Tensor)> {
    let n = w.nrows();
    let d: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut s = faer::Mat::<f64>::zeros(n, n);
    for r in 0..n {
        for (c, v) in w.row_entries(r) {
            s[(r, c)] = v * d[r] * d[c];
        }
    }
    let eig = s
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::arg(format!("dense eigensolver failed: {e:?}")))?;
    let (vals, vecs) = (eig.S().column_vector(), eig.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let lambda = order[..k].iter().map(|&i| vals[i]).collect();
    let phi = Tensor::from_fn(n, k, |r, c| d[r] * vecs[(r, order[c])]);
    Ok((lambda, phi))
}

/// Jacobi-preconditioned conjugate gradients for `(W + sigma M) x = b`.
struct ShiftedSystem<'a> {
    w: &'a CsrMatrix,
    mass: &'a [f64],
    sigma: f64,
    inv_diag: Vec<f64>,
}

impl<'a> ShiftedSystem<'a> {
    fn new(w: &'a CsrMatrix, mass: &'a [f64], sigma: f64) -> Self {
        let inv_diag = w
            .diagonal()
            .iter()
            .zip(mass)
            .map(|(d, m)| 1.0 / (d + sigma * m))
            .collect();
        ShiftedSystem {
            w,
            mass,
            sigma,
            inv_diag,
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.w.matvec(x, y);
        for i in 0..x.len() {
            y[i] += self.sigma * self.mass[i] * x[i];
        }
    }

    fn solve(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let bnorm = dot(b, b).sqrt();
        if bnorm == 0.0 {
            return Ok(x);
        }
        for _ in 0..(20 * n).max(1000) {
            self.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rnorm = dot(&r, &r).sqrt();
            if rnorm <= tol * bnorm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * self.inv_diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let mut res = vec![0.0; n];
        self.apply(&x, &mut res);
        let rel = res
            .iter()
            .zip(b)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            .sqrt()
            / bnorm;
        Err(Error::NoConvergence { residual: rel })
    }
}

fn m_dot(mass: &[f64], a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(mass).map(|((x, y), m)| x * y * m).sum()
}

type Pair = (f64, Vec<f64>);

/// Shift-invert Lanczos in the mass inner product with full reorthogonalization.
///
/// A first run collects `k` converged pairs. Single-vector Lanczos can miss
/// members of tight eigenvalue clusters, so further runs restricted to the
/// complement of the accepted vectors look for anything below the largest
/// accepted eigenvalue and swap it in until none is found.
fn lanczos_pairs(w: &CsrMatrix, mass: &[f64], k: usize) -> Result<(Vec<f64>, Tensor)> {
    let n = w.nrows();
    let scale = w.diagonal().iter().sum::<f64>() / mass.iter().sum::<f64>();
    let sigma = 1e-3 * scale;
    let sys = ShiftedSystem::new(w, mass, sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut found = lanczos_run(&sys, &[], k, &mut rng)?;
    for _ in 0..n {
        if found.len() == n - 1 {
            break;
        }
        let locked: Vec<Vec<f64>> = found.iter().map(|p| p.1.clone()).collect();
        let extra = lanczos_run(&sys, &locked, 1, &mut rng)?.remove(0);
        let top = found[k - 1].0;
        if extra.0 >= top - 1e-10 * top.abs().max(scale * 1e-6) {
            break;
        }
        debug!("lanczos: recovered missed eigenvalue {:.6e} below {:.6e}", extra.0, top);
        found.push(extra);
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        found.truncate(k);
    }
    let lambda = found.iter().map(|p| p.0).collect();
    let phi = Tensor::from_fn(n, k, |r, c| found[c].1[r]);
    Ok((lambda, phi))
}

/// `count` smallest converged pairs in the mass-orthogonal complement of `locked`.
fn lanczos_run(
    sys: &ShiftedSystem,
    locked: &[Vec<f64>],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Pair>> {
    let (w, mass) = (sys.w, sys.mass);
    let n = w.nrows();
    let dim = n - locked.len();
    let w_norm = inf_norm(w);
    let mut random_unit = |basis: &[Vec<f64>]| -> Vec<f64> {
        let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            reorthogonalize(mass, locked, &mut q);
            reorthogonalize(mass, basis, &mut q);
        }
        let nrm = m_dot(mass, &q, &q).sqrt();
        q.iter_mut().for_each(|v| *v /= nrm);
        q
    };

    let mut qs: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut q = random_unit(&qs);
    let mut worst = f64::INFINITY;
    let check_every = 10;
    while qs.len() < dim {
        let mq: Vec<f64> = q.iter().zip(mass).map(|(a, m)| a * m).collect();
        let mut v = sys.solve(&mq, 1e-13)?;
        let a = dot(&v, &mq);
        for i in 0..n {
            v[i] -= a * q[i];
        }
        if let (Some(prev), Some(&b)) = (qs.last(), beta.last()) {
            for i in 0..n {
                v[i] -= b * prev[i];
            }
        }
        qs.push(q);
        alpha.push(a);
        for _ in 0..2 {
            reorthogonalize(mass, locked, &mut v);
            reorthogonalize(mass, &qs, &mut v);
        }
        let b = m_dot(mass, &v, &v).sqrt();

        let m = qs.len();
        let done = m == dim;
        if m >= count && (m % check_every == 0 || done) {
            let pairs = ritz_pairs(w, mass, &qs, &alpha, &beta, count, sys.sigma)?;
            worst = pairs
                .iter()
                .map(|(l, x)| relative_residual(w, w_norm, mass, x, *l))
                .fold(0.0, f64::max);
            debug!("lanczos: krylov dim {m}, worst residual {worst:.3e}");
            if worst <= 0.1 * EIGEN_RESIDUAL_TOL || done {
                return Ok(pairs);
            }
        }
        if b <= 1e-12 * a.abs().max(f64::MIN_POSITIVE) {
            // invariant subspace found; restart in its complement
            beta.push(0.0);
            q = random_unit(&qs);
        } else {
            beta.push(b);
            q = v.iter().map(|x| x / b).collect();
        }
    }
    Err(Error::NoConvergence { residual: worst })
}

fn reorthogonalize(mass: &[f64], basis: &[Vec<f64>], v: &mut [f64]) {
    let mv: Vec<f64> = v.iter().zip(mass).map(|(a, m)| a * m).collect();
    let coeffs: Vec<f64> = basis.iter().map(|q| dot(q, &mv)).collect();
    for (q, c) in basis.iter().zip(coeffs) {
        for i in 0..v.len() {
            v[i] -= c * q[i];
        }
    }
}

/// Ritz pairs for the `count` largest eigenvalues of the Lanczos tridiagonal,
/// returned as Rayleigh quotients of the original pencil in ascending order.
fn ritz_pairs(
    w: &CsrMatrix,
    mass: &[f64],
    qs: &[Vec<f64>],
    alpha: &[f64],
    beta: &[f64],
    count: usize,
    sigma: f64,
) -> Result<Vec<Pair>> {
    let m = qs.len();
    let n = w.nrows();
    let mut t = faer::Mat::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = t
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::arg(format!("tridiagonal eigensolver failed: {e:?}")))?;
    let (vals, vecs) = (eig.S().column_vector(), eig.U());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut pairs: Vec<Pair> = order[..count]
        .iter()
        .map(|&j| {
            let mut x = vec![0.0; n];
            for (i, q) in qs.iter().enumerate() {
                let s = vecs[(i, j)];
                for r in 0..n {
                    x[r] += s * q[r];
                }
            }
            let mut wx = vec![0.0; n];
            w.matvec(&x, &mut wx);
            let rq = dot(&x, &wx) / m_dot(mass, &x, &x);
            let guess = 1.0 / vals[j] - sigma;
            (if rq.is_finite() { rq } else { guess }, x)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}
