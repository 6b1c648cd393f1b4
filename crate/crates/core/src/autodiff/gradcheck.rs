use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compares `d f / d x` from the tape against central differences with step `h`.
///
/// The relative error of coordinate `i` is
/// `|a_i - n_i| / max(|a_i|, |n_i|, 1e-2 * max_j |n_j|, 1e-8)`, so coordinates
/// that are tiny compared with the overall gradient scale are judged on an
/// absolute footing instead of amplifying finite-difference round-off.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    if tape.shape(out) != (1, 1) {
        return Err(Error::shape("grad_check", "function must return a scalar"));
    }
    let grads = tape.backward(out)?;
    let analytic = grads.wrt(xv, x.shape()).into_vec();

    let eval = |p: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(p.clone());
        let o = f(&mut t, v)?;
        Ok(t.value(o).item())
    };
    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((fp - fm) / (2.0 * h));
    }

    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rel_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| {
            let denom = a.abs().max(n.abs()).max(1e-2 * scale).max(1e-8);
            (a - n).abs() / denom
        })
        .collect();
    let max_rel_error = rel_errors.iter().fold(0.0f64, |m, &e| m.max(e));
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        tol,
        passed: max_rel_error <= tol,
    })
}
