//! Conditional flow matching over transported per-vertex features.
//!
//! Source features `z0` and transported target features `z1` define straight
//! paths `z_t = (1 - t) z0 + t z1`. A time-conditioned velocity network is
//! trained to predict `z1 - z0` at confidence-sampled vertices.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::nn::{add_linear, linear, Bound, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfmLoss {
    #[default]
    Charbonnier,
    Mse,
    /// Static smoothing `tr(z1^T W z1)` instead of flow matching.
    Laplacian,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Confidence,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfmConfig {
    /// Concentration of the confidence weights.
    pub alpha_conf: f64,
    /// Charbonnier constant.
    pub epsilon: f64,
    /// Heat-diffusion time applied to fused features before transport.
    pub tau_diff: f64,
    /// Skip heat diffusion entirely (raw fused features).
    pub heat_diffusion: bool,
    /// Number of sampled vertices per direction, capped at the vertex count.
    pub sample_count: usize,
    pub loss: CfmLoss,
    pub sampling: Sampling,
}

impl Default for CfmConfig {
    fn default() -> Self {
        CfmConfig {
            alpha_conf: 2.0,
            epsilon: 1e-3,
            tau_diff: 1e-2,
            heat_diffusion: true,
            sample_count: 1024,
            loss: CfmLoss::Charbonnier,
            sampling: Sampling::Confidence,
        }
    }
}

impl CfmConfig {
    pub fn validate(&self, errs: &mut Vec<String>) {
        if !(self.epsilon > 0.0) {
            errs.push("cfm.epsilon must be > 0".into());
        }
        if self.sample_count == 0 {
            errs.push("cfm.sample_count must be >= 1".into());
        }
        if !(self.tau_diff >= 0.0) {
            errs.push("cfm.tau_diff must be >= 0".into());
        }
        if !self.alpha_conf.is_finite() {
            errs.push("cfm.alpha_conf must be finite".into());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VelocityConfig {
    /// Feature width handled by the network (input and output).
    pub width: usize,
    pub hidden: usize,
    /// Number of FiLM-modulated hidden layers.
    pub layers: usize,
    /// Sinusoidal embedding width; must be even.
    pub time_dim: usize,
    /// Multiplier on the time argument before the sinusoids.
    pub time_scale: f64,
}

impl Default for VelocityConfig {
    fn default() -> Self {
        VelocityConfig {
            width: 256,
            hidden: 256,
            layers: 3,
            time_dim: 128,
            time_scale: 1000.0,
        }
    }
}

impl VelocityConfig {
    pub fn validate(&self, errs: &mut Vec<String>) {
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            errs.push("velocity.time_dim must be even and positive".into());
        }
        if self.width == 0 || self.hidden == 0 || self.layers == 0 {
            errs.push("velocity.width, hidden and layers must be >= 1".into());
        }
        if !(self.time_scale > 0.0) {
            errs.push("velocity.time_scale must be > 0".into());
        }
    }
}

/// Linear path sample: `z_t = (1 - t) z0 + t z1` and `v = z1 - z0`.
pub fn flow_sample(z0: &Tensor, z1: &Tensor, t: f64) -> Result<(Tensor, Tensor)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::arg(format!("t must lie in [0, 1], got {t}")));
    }
    if z0.shape() != z1.shape() {
        return Err(Error::shape("flow_sample", "endpoint shapes differ"));
    }
    let zt = z0.zip_map(z1, |a, b| (1.0 - t) * a + t * b);
    let v = z1.zip_map(z0, |b, a| b - a);
    Ok((zt, v))
}

/// `[sin(w_l t), cos(w_l t)]` with `w_l = scale * 10000^(-2l/d)`, sines first.
pub fn time_embed(t: f64, d: usize, scale: f64) -> Result<Vec<f64>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::arg(format!("embedding width must be even, got {d}")));
    }
    let half = d / 2;
    let mut out = vec![0.0; d];
    for l in 0..half {
        let w = scale * 10000f64.powf(-2.0 * l as f64 / d as f64);
        out[l] = (w * t).sin();
        out[half + l] = (w * t).cos();
    }
    Ok(out)
}

/// One embedding row per time value.
pub fn time_embed_rows(ts: &[f64], d: usize, scale: f64) -> Result<Tensor> {
    let mut data = Vec::with_capacity(ts.len() * d);
    for &t in ts {
        data.extend(time_embed(t, d, scale)?);
    }
    Tensor::from_vec(ts.len(), d, data)
}

/// Parameters under the `vel.` prefix. FiLM heads start at `gamma = 1`, `beta = 0`.
pub fn init_velocity(cfg: &VelocityConfig, rng: &mut impl Rng) -> ParamStore {
    let mut s = ParamStore::new();
    add_linear(&mut s, rng, "vel.embed", cfg.time_dim, cfg.hidden);
    let mut fan_in = cfg.width;
    for l in 0..cfg.layers {
        add_linear(&mut s, rng, &format!("vel.trunk{l}"), fan_in, cfg.hidden);
        s.insert(format!("vel.film{l}.gamma.w"), Tensor::zeros(cfg.hidden, cfg.hidden));
        s.insert(format!("vel.film{l}.gamma.b"), Tensor::filled(1, cfg.hidden, 1.0));
        s.insert(format!("vel.film{l}.beta.w"), Tensor::zeros(cfg.hidden, cfg.hidden));
        s.insert(format!("vel.film{l}.beta.b"), Tensor::zeros(1, cfg.hidden));
        fan_in = cfg.hidden;
    }
    add_linear(&mut s, rng, "vel.out", cfg.hidden, cfg.width);
    s
}

/// Predicted velocity for every row of `z_t`, with `emb` the matching rows of
/// time embeddings.
pub fn velocity_net(
    tape: &mut Tape,
    p: &Bound,
    cfg: &VelocityConfig,
    z_t: Var,
    emb: Var,
) -> Result<Var> {
    let (m, w) = tape.shape(z_t);
    if w != cfg.width || tape.shape(emb) != (m, cfg.time_dim) {
        return Err(Error::shape(
            "velocity_net",
            format!("z_t {m}x{w}, embedding {:?}, width {}", tape.shape(emb), cfg.width),
        ));
    }
    let u = linear(tape, p, "vel.embed", emb)?;
    let u = tape.relu(u)?;
    let mut h = z_t;
    for l in 0..cfg.layers {
        let gamma = linear(tape, p, &format!("vel.film{l}.gamma"), u)?;
        let beta = linear(tape, p, &format!("vel.film{l}.beta"), u)?;
        let a = linear(tape, p, &format!("vel.trunk{l}"), h)?;
        let a = tape.relu(a)?;
        let a = tape.mul(gamma, a)?;
        h = tape.add(a, beta)?;
    }
    linear(tape, p, "vel.out", h)
}

/// `w_i = exp(alpha * cos(z0_i, z1_i))`; rows with zero norm count as cosine 0.
pub fn confidence_weights(z0: &Tensor, z1: &Tensor, alpha: f64) -> Result<Vec<f64>> {
    if z0.shape() != z1.shape() {
        return Err(Error::shape("confidence_weights", "endpoint shapes differ"));
    }
    Ok((0..z0.rows())
        .map(|i| {
            let (a, b) = (z0.row(i), z1.row(i));
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos = if na > 0.0 && nb > 0.0 {
                a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
            } else {
                0.0
            };
            (alpha * cos).exp()
        })
        .collect())
}

/// `m` distinct indices drawn one at a time with probability proportional to
/// the remaining weights.
pub fn sample_subset(w: &[f64], m: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let n = w.len();
    if m > n {
        return Err(Error::arg(format!("cannot sample {m} of {n} vertices")));
    }
    if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::arg("sampling weights must be positive and finite"));
    }
    let mut remaining = w.to_vec();
    let mut total: f64 = remaining.iter().sum();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let r = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &x) in remaining.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            acc += x;
            pick = Some(i);
            if r < acc {
                break;
            }
        }
        let i = pick.expect("at least one weight remains");
        total -= remaining[i];
        remaining[i] = 0.0;
        // guard against drift in the running total
        if total <= 0.0 {
            total = remaining.iter().sum();
        }
        out.push(i);
    }
    Ok(out)
}

/// Charbonnier `mean sqrt(|r_i|^2 + eps^2)` or MSE `mean |r_i|^2` over rows.
pub fn cfm_loss(tape: &mut Tape, v_pred: Var, v_target: Var, epsilon: f64, loss: CfmLoss) -> Result<Var> {
    let r = tape.sub(v_pred, v_target)?;
    let sq = tape.mul(r, r)?;
    let per_row = tape.row_sum(sq)?;
    match loss {
        CfmLoss::Charbonnier => {
            if !(epsilon > 0.0) {
                return Err(Error::arg("Charbonnier epsilon must be positive"));
            }
            let s = tape.add_scalar(per_row, epsilon * epsilon)?;
            let s = tape.sqrt(s)?;
            tape.mean(s)
        }
        CfmLoss::Mse => tape.mean(per_row),
        CfmLoss::Laplacian => Err(Error::arg("the Laplacian variant has no velocity residual")),
    }
}

/// `tr(z1^T W z1)` with the source stiffness matrix.
pub fn laplacian_smooth_loss(tape: &mut Tape, z1: Var, w: Arc<CsrMatrix>) -> Result<Var> {
    let wz = tape.sparse_matmul(w, z1)?;
    let p = tape.mul(z1, wz)?;
    tape.sum(p)
}

/// One transport direction: samples vertices, builds paths and returns the loss.
///
/// `z0` and `z1` stay on the tape so the loss reaches the features and the
/// soft map; sampling and times are drawn from `rng`.
pub fn cfm_direction(
    tape: &mut Tape,
    p: &Bound,
    vcfg: &VelocityConfig,
    cfg: &CfmConfig,
    z0: Var,
    z1: Var,
    stiffness: &Arc<CsrMatrix>,
    rng: &mut impl Rng,
) -> Result<Var> {
    if cfg.loss == CfmLoss::Laplacian {
        return laplacian_smooth_loss(tape, z1, stiffness.clone());
    }
    let (n, _) = tape.shape(z0);
    let weights = match cfg.sampling {
        Sampling::Confidence => confidence_weights(tape.value(z0), tape.value(z1), cfg.alpha_conf)?,
        Sampling::Uniform => vec![1.0; n],
    };
    let m = cfg.sample_count.min(n);
    let idx = Arc::new(sample_subset(&weights, m, rng)?);
    let ts: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
    let a = tape.gather_rows(z0, idx.clone())?;
    let b = tape.gather_rows(z1, idx)?;
    let v_target = tape.sub(b, a)?;
    let tcol = tape.constant(Tensor::column(ts.clone()));
    let step = tape.mul_col(v_target, tcol)?;
    let z_t = tape.add(a, step)?;
    let emb = tape.constant(time_embed_rows(&ts, vcfg.time_dim, vcfg.time_scale)?);
    let v_pred = velocity_net(tape, p, vcfg, z_t, emb)?;
    cfm_loss(tape, v_pred, v_target, cfg.epsilon, cfg.loss)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::grad_check;
    use crate::mesh::icosphere;
    use crate::spectral::{cotan_laplacian, eigendecompose};

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        crate::nn::uniform(rng, r, c, 1.0)
    }

    #[test]
    fn path_endpoints_and_midpoint() {
        let z0 = Tensor::from_fn(2, 2, |r, c| (r * 2 + c) as f64);
        let z1 = Tensor::from_fn(2, 2, |r, c| (10 + r * 2 + c * 4) as f64);
        assert_eq!(flow_sample(&z0, &z1, 0.0).unwrap().0, z0);
        assert_eq!(flow_sample(&z0, &z1, 1.0).unwrap().0, z1);
        let (mid, v) = flow_sample(&z0, &z1, 0.5).unwrap();
        assert_eq!(mid.data(), &[5.0, 7.5, 7.0, 9.5]);
        assert_eq!(v.data(), &[10.0, 13.0, 10.0, 13.0]);
        let (zt, v) = flow_sample(&z0, &z0, 0.3).unwrap();
        assert!(zt.max_abs_diff(&z0) < 1e-15);
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert!(flow_sample(&z0, &z1, 1.5).is_err());
    }

    #[test]
    fn embedding_identities() {
        let e = time_embed(0.0, 8, 1000.0).unwrap();
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
        for t in [0.0, 0.13, 0.5, 1.0] {
            let e = time_embed(t, 16, 1000.0).unwrap();
            let n2: f64 = e.iter().map(|v| v * v).sum();
            assert!((n2 - 8.0).abs() < 1e-12);
        }
        assert!(time_embed(0.5, 7, 1.0).is_err());
    }

    #[test]
    fn distinct_times_give_distinct_embeddings() {
        let grid: Vec<Vec<f64>> = (0..100)
            .map(|i| time_embed(i as f64 / 99.0, 128, 1000.0).unwrap())
            .collect();
        let mut min = f64::INFINITY;
        for a in 0..100 {
            for b in a + 1..100 {
                let d: f64 = grid[a].iter().zip(&grid[b]).map(|(x, y)| (x - y).powi(2)).sum();
                min = min.min(d.sqrt());
            }
        }
        assert!(min > 0.0, "min pairwise distance {min}");
    }

    fn small_vcfg() -> VelocityConfig {
        VelocityConfig {
            width: 8,
            hidden: 6,
            layers: 2,
            time_dim: 4,
            time_scale: 1000.0,
        }
    }

    fn run_net(store: &ParamStore, cfg: &VelocityConfig, z: &Tensor, ts: &[f64]) -> Tensor {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let e = tape.constant(time_embed_rows(ts, cfg.time_dim, cfg.time_scale).unwrap());
        let v = velocity_net(&mut tape, &p, cfg, zv, e).unwrap();
        tape.value(v).clone()
    }

    #[test]
    fn zero_output_layer_gives_zero_velocity() {
        let cfg = small_vcfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = init_velocity(&cfg, &mut rng);
        for name in ["vel.out.w", "vel.out.b"] {
            let t = store.get_mut(name).unwrap();
            *t = Tensor::zeros(t.rows(), t.cols());
        }
        let z = random(&mut rng, 5, 8);
        for t in [0.0, 0.4, 1.0] {
            assert!(run_net(&store, &cfg, &z, &[t; 5]).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn initial_film_makes_output_time_independent() {
        let cfg = small_vcfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let store = init_velocity(&cfg, &mut rng);
        let z = random(&mut rng, 5, 8);
        let a = run_net(&store, &cfg, &z, &[0.1; 5]);
        let b = run_net(&store, &cfg, &z, &[0.9, 0.2, 0.3, 0.7, 0.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn velocity_net_passes_gradient_check() {
        let cfg = small_vcfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = init_velocity(&cfg, &mut rng);
        // move FiLM heads off their identity init so every path is exercised
        for (_, t) in store.iter_mut() {
            *t = crate::nn::uniform(&mut rng, t.rows(), t.cols(), 0.7);
        }
        let z = random(&mut rng, 5, 8);
        let target = random(&mut rng, 5, 8);
        let ts = [0.05, 0.3, 0.5, 0.77, 0.95];
        let emb = time_embed_rows(&ts, cfg.time_dim, 1.0).unwrap();
        let x0 = Tensor::from_vec(1, store.n_scalars(), store.flatten()).unwrap();
        let report = grad_check(
            |tape, flat| {
                let p = store.bind_flat(tape, flat)?;
                let zv = tape.constant(z.clone());
                let e = tape.constant(emb.clone());
                let v = velocity_net(tape, &p, &cfg, zv, e)?;
                let tv = tape.constant(target.clone());
                cfm_loss(tape, v, tv, 1e-3, CfmLoss::Charbonnier)
            },
            &x0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{:.3e}", report.max_rel_error);
    }

    #[test]
    fn charbonnier_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random(&mut rng, 6, 3);
        let report = grad_check(
            |tape, x| {
                let z = tape.constant(Tensor::zeros(6, 3));
                cfm_loss(tape, x, z, 1e-3, CfmLoss::Charbonnier)
            },
            &r,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed);
    }

    #[test]
    fn confidence_weight_values() {
        let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 3.0], vec![-1.0, 0.5]]).unwrap();
        let w = confidence_weights(&z, &z, 2.0).unwrap();
        for x in &w {
            assert!((x - 2f64.exp()).abs() < 1e-12);
        }
        let o = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![0.0, 4.0]]).unwrap();
        assert!((confidence_weights(&o, &p, 2.0).unwrap()[0] - 1.0).abs() < 1e-15);
        let w = confidence_weights(&o, &o.scale(-3.0), 2.0).unwrap();
        assert!((w[0] - (-2f64).exp()).abs() < 1e-12);
        let zero = Tensor::zeros(1, 2);
        assert_eq!(confidence_weights(&zero, &o, 2.0).unwrap()[0], 1.0);
    }

    #[test]
    fn exhaustive_sample_covers_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = [0.1, 5.0, 2.0, 1e-3, 7.0];
        let mut s = sample_subset(&w, 5, &mut rng).unwrap();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
        assert!(sample_subset(&w, 6, &mut rng).is_err());
    }

    #[test]
    fn heavy_weight_dominates_draws() {
        let mut w = vec![1.0; 20];
        w[7] = 1e9;
        let mut hits = 0;
        for trial in 0..10_000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            if sample_subset(&w, 1, &mut rng).unwrap()[0] == 7 {
                hits += 1;
            }
        }
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let w: Vec<f64> = (0..50).map(|i| 1.0 + (i % 7) as f64).collect();
        let a = sample_subset(&w, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_subset(&w, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let mut d = a.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 20);
    }

    fn eval_loss(r: &Tensor, eps: f64, kind: CfmLoss) -> f64 {
        let mut tape = Tape::new();
        let a = tape.constant(r.clone());
        let z = tape.constant(Tensor::zeros(r.rows(), r.cols()));
        let l = cfm_loss(&mut tape, a, z, eps, kind).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn charbonnier_floor_and_asymptote() {
        assert!((eval_loss(&Tensor::zeros(4, 3), 1e-3, CfmLoss::Charbonnier) - 1e-3).abs() < 1e-18);
        for r in [1.0, 10.0, 100.0] {
            let l = eval_loss(&Tensor::filled(1, 1, r), 1e-3, CfmLoss::Charbonnier);
            assert!((l - r) / r <= 1e-6 / (2.0 * r * r) + 1e-15);
        }
    }

    #[test]
    fn losses_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = random(&mut rng, 7, 4);
        let norms: Vec<f64> = (0..7).map(|i| r.row(i).iter().map(|v| v * v).sum()).collect();
        let ch = norms.iter().map(|s| (s + 1e-6).sqrt()).sum::<f64>() / 7.0;
        let mse = norms.iter().sum::<f64>() / 7.0;
        assert!((eval_loss(&r, 1e-3, CfmLoss::Charbonnier) - ch).abs() < 1e-12);
        assert!((eval_loss(&r, 1e-3, CfmLoss::Mse) - mse).abs() < 1e-12);
    }

    #[test]
    fn charbonnier_is_monotone_in_the_residual() {
        let mut last = 0.0;
        for i in 0..200 {
            let r = i as f64 * 0.05;
            let l = eval_loss(&Tensor::filled(1, 1, r), 1e-3, CfmLoss::Charbonnier);
            assert!(l >= 1e-3 && l >= last);
            assert!(l - r <= 1e-3 + 1e-15);
            last = l;
        }
    }

    #[test]
    fn laplacian_smoothing_values() {
        let m = icosphere(2);
        let (w, mass) = cotan_laplacian(&m).unwrap();
        let b = eigendecompose(&w, &mass, 10).unwrap();
        let w = Arc::new(w);
        let eval = |z: Tensor| {
            let mut tape = Tape::new();
            let zv = tape.constant(z);
            let l = laplacian_smooth_loss(&mut tape, zv, w.clone()).unwrap();
            tape.value(l).item()
        };
        assert!(eval(Tensor::filled(m.n_vertices(), 3, 1.7)).abs() < 1e-10);
        for j in 1..10 {
            let col = Tensor::from_fn(m.n_vertices(), 1, |r, _| b.phi().get(r, j));
            assert!((eval(col) - b.lambda()[j]).abs() < 1e-6 * b.lambda()[j].max(1.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            assert!(eval(random(&mut rng, m.n_vertices(), 2)) >= 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn weights_ignore_positive_row_scaling(seed in any::<u64>(), s in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, 6, 5);
            let b = random(&mut rng, 6, 5);
            let w1 = confidence_weights(&a, &b, 2.0).unwrap();
            let w2 = confidence_weights(&a.scale(s), &b, 2.0).unwrap();
            for (x, y) in w1.iter().zip(&w2) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn charbonnier_never_below_epsilon(seed in any::<u64>(), eps in 1e-4f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random(&mut rng, 4, 3);
            prop_assert!(eval_loss(&r, eps, CfmLoss::Charbonnier) >= eps);
        }
    }
}
