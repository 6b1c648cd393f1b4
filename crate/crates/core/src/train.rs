//! Unsupervised training: optimizer, schedule, augmentation, pair steps,
//! the training loop and checkpoints.

use std::collections::BTreeMap;
use std::fs::File;
use std::hash::Hasher;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::cfm::CfmConfig;
use crate::config::DataConfig;
use crate::error::{Error, Result, ResultExt};
use crate::mesh::TriMesh;
use crate::model::{init_params, pair_losses, Descriptor, LossWeights, ModelConfig, Shape};
use crate::nn::ParamStore;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SCK1";
/// Header of the per-step metrics log.
pub const METRICS_HEADER: &str = "step,lr,l_bij,l_orth,l_couple,l_cfm,l_total";

/// RNG stream used for parameter initialization.
const INIT_STREAM: u64 = u64::MAX;
/// Base RNG stream for per-epoch pair shuffles.
const SHUFFLE_STREAM: u64 = 1 << 63;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Random rotation of the input coordinates (only affects `xyz` descriptors).
    pub rotation: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { rotation: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub lr: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub loss: LossWeights,
    pub model: ModelConfig,
    pub cfm: CfmConfig,
    pub augment: AugmentConfig,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            steps: 500,
            lr: 1e-3,
            grad_clip: 10.0,
            checkpoint_every: 0,
            loss: LossWeights::default(),
            model: ModelConfig::default(),
            cfm: CfmConfig::default(),
            augment: AugmentConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Reduced preset: `k = 30`, `D^g = 64`, 500 steps, seed 42.
    pub fn desk_preset() -> Self {
        let mut model = ModelConfig::default().with_width(64);
        model.k = 30;
        model.backbone.in_dim = 64;
        model.k_nb = 8;
        model.velocity.hidden = 64;
        model.velocity.time_dim = 32;
        TrainConfig {
            model,
            ..Default::default()
        }
    }

    pub fn validate(&self, errs: &mut Vec<String>) {
        if self.steps == 0 {
            errs.push("steps must be >= 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            errs.push("lr must be finite and > 0".into());
        }
        if !(self.grad_clip >= 0.0) {
            errs.push("grad_clip must be >= 0".into());
        }
        self.loss.validate(errs);
        self.model.validate(errs);
        self.cfm.validate(errs);
        self.data.validate(errs);
    }

    /// FNV-1a hash of the serialized configuration.
    pub fn hash(&self) -> u64 {
        let text = toml::to_string(self).expect("config serializes");
        let mut h = fnv::FnvHasher::default();
        h.write(text.as_bytes());
        h.finish()
    }
}

/// `lr0 * (1 + cos(pi * step / total)) / 2`.
pub fn cosine_schedule(step: u64, total: u64, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let s = step.min(total) as f64 / total as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments plus the step count.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
}

/// One bias-corrected Adam update. Nothing changes if any gradient is non-finite.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    hp: AdamParams,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("gradient of {name} has the wrong shape")));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "adam_step" }).context(format!("gradient of {name}"));
        }
    }
    state.t += 1;
    let c1 = 1.0 - hp.beta1.powi(state.t as i32);
    let c2 = 1.0 - hp.beta2.powi(state.t as i32);
    for (name, g) in grads {
        let p = params.get_mut(name)?;
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
        for i in 0..g.len() {
            let gi = g.data()[i];
            let mi = hp.beta1 * m.data()[i] + (1.0 - hp.beta1) * gi;
            let vi = hp.beta2 * v.data()[i] + (1.0 - hp.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            p.data_mut()[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::frobenius_sq).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

/// Uniform random rotation from the QR factorization of a Gaussian matrix.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let g = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..3 {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

pub fn random_rotation_augment(mesh: &TriMesh, rng: &mut impl Rng) -> Result<TriMesh> {
    let r = random_rotation(rng);
    mesh.map_vertices(|p| {
        let v = r * nalgebra::Vector3::new(p[0], p[1], p[2]);
        [v.x, v.y, v.z]
    })
}

/// Preprocessed shapes, their backbone inputs and the training pairs.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub shapes: Vec<Shape>,
    pub raw: Vec<Tensor>,
    pub pairs: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn new(shapes: Vec<Shape>, pairs: Vec<(usize, usize)>, model: &ModelConfig) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::arg("dataset has no pairs"));
        }
        if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= shapes.len() || b >= shapes.len()) {
            return Err(Error::arg(format!("pair ({a}, {b}) refers to a missing shape")));
        }
        let raw = shapes
            .iter()
            .map(|s| s.raw_descriptor(model))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { shapes, raw, pairs })
    }
}

/// Loss values recorded for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    pub bij: f64,
    pub orth: f64,
    pub couple: f64,
    pub cfm: f64,
    pub total: f64,
}

impl StepReport {
    /// One metrics row; floats print in shortest round-trip form.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.lr, self.bij, self.orth, self.couple, self.cfm, self.total
        )
    }
}

/// Generator for step `step`; independent of every other step.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Forward, backward and one optimizer update on the pair `(x, y)`.
#[allow(clippy::too_many_arguments)]
pub fn train_pair_step(
    params: &mut ParamStore,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    x: (&Shape, &Tensor),
    y: (&Shape, &Tensor),
    step: u64,
    rng: &mut impl Rng,
) -> Result<StepReport> {
    let lr = cosine_schedule(step, cfg.steps, cfg.lr);
    let rotate = cfg.augment.rotation && cfg.model.descriptor == Descriptor::Xyz;
    let (rx, ry) = if rotate {
        (rotated_xyz(x.1, rng), rotated_xyz(y.1, rng))
    } else {
        (x.1.clone(), y.1.clone())
    };
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let l = pair_losses(
        &mut tape,
        &p,
        &cfg.model,
        &cfg.cfm,
        &cfg.loss,
        (x.0, &rx),
        (y.0, &ry),
        rng,
    )
    .context("pair forward")?;
    let report = StepReport {
        step,
        lr,
        bij: tape.value(l.bij).item(),
        orth: tape.value(l.orth).item(),
        couple: tape.value(l.couple).item(),
        cfm: tape.value(l.cfm).item(),
        total: tape.value(l.total).item(),
    };
    if !report.total.is_finite() {
        return Err(Error::NonFinite { op: "pair loss" });
    }
    let grads = tape.backward(l.total)?;
    let mut g = p.collect(&grads, params)?;
    clip_global_norm(&mut g, cfg.grad_clip);
    adam_step(params, &g, adam, lr, AdamParams::default())?;
    Ok(report)
}

fn rotated_xyz(raw: &Tensor, rng: &mut impl Rng) -> Tensor {
    let r = random_rotation(rng);
    Tensor::from_fn(raw.rows(), 3, |i, c| {
        (0..3).map(|k| r[(c, k)] * raw.get(i, k)).sum()
    })
}

/// Everything needed to resume training exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParamStore,
    pub adam: AdamState,
    /// Number of completed steps.
    pub step: u64,
    pub config_hash: u64,
    /// Seed of the counter-based generator; with `step` this is the full RNG state.
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        bincode::serialize_into(&mut out, self).map_err(|e| Error::Format(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        bincode::deserialize(&bytes[4..]).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).context(path.display().to_string())
    }

    /// FNV-1a hash of the serialized bytes.
    pub fn content_hash(&self) -> Result<u64> {
        let mut h = fnv::FnvHasher::default();
        h.write(&self.to_bytes()?);
        Ok(h.finish())
    }
}

/// Training state owned by the loop.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: ParamStore,
    pub adam: AdamState,
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        let mut errs = Vec::new();
        cfg.validate(&mut errs);
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let mut rng = step_rng(cfg.seed, INIT_STREAM);
        let params = init_params(&cfg.model, &mut rng);
        Ok(Trainer {
            cfg,
            params,
            adam: AdamState::default(),
            step: 0,
        })
    }

    /// Continues from `ck`; the configuration must hash to the recorded value.
    pub fn resume(cfg: TrainConfig, ck: Checkpoint) -> Result<Self> {
        if cfg.hash() != ck.config_hash {
            return Err(Error::arg("checkpoint was written under a different config"));
        }
        Ok(Trainer {
            cfg,
            params: ck.params,
            adam: ck.adam,
            step: ck.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.cfg.model.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            step: self.step,
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
        }
    }

    /// Pair scheduled for `step`: epochs visit every pair once in a seeded order.
    pub fn pair_for_step(&self, n_pairs: usize, step: u64) -> usize {
        let epoch = step / n_pairs as u64;
        let mut order: Vec<usize> = (0..n_pairs).collect();
        order.shuffle(&mut step_rng(self.cfg.seed, SHUFFLE_STREAM + epoch));
        order[(step % n_pairs as u64) as usize]
    }

    /// Runs one step and advances the counter.
    pub fn step_once(&mut self, data: &Dataset) -> Result<StepReport> {
        let pair = data.pairs[self.pair_for_step(data.pairs.len(), self.step)];
        let (a, b) = pair;
        let mut rng = step_rng(self.cfg.seed, self.step);
        let r = train_pair_step(
            &mut self.params,
            &mut self.adam,
            &self.cfg,
            (&data.shapes[a], &data.raw[a]),
            (&data.shapes[b], &data.raw[b]),
            self.step,
            &mut rng,
        )
        .context(format!("step {} on pair ({a}, {b})", self.step))?;
        self.step += 1;
        Ok(r)
    }

    /// Trains until `cfg.steps`, calling `on_step` after every step and
    /// `on_checkpoint` at the configured interval.
    pub fn run(
        &mut self,
        data: &Dataset,
        mut on_step: impl FnMut(&StepReport) -> Result<()>,
        mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
    ) -> Result<()> {
        self.run_until(data, self.cfg.steps, &mut on_step, &mut on_checkpoint)
    }

    pub fn run_until(
        &mut self,
        data: &Dataset,
        until: u64,
        on_step: &mut impl FnMut(&StepReport) -> Result<()>,
        on_checkpoint: &mut impl FnMut(&Checkpoint) -> Result<()>,
    ) -> Result<()> {
        if data.pairs.is_empty() {
            return Err(Error::arg("dataset has no pairs"));
        }
        while self.step < until.min(self.cfg.steps) {
            let r = self.step_once(data)?;
            on_step(&r)?;
            let every = self.cfg.checkpoint_every;
            if every > 0 && self.step % every == 0 && self.step < self.cfg.steps {
                on_checkpoint(&self.checkpoint())?;
            }
        }
        Ok(())
    }
}

/// Full training run. With `out_dir`, writes `metrics.csv`, periodic
/// `checkpoint_<step>.bin` files and the final `checkpoint.bin`.
pub fn train_loop(cfg: TrainConfig, data: &Dataset, out_dir: Option<&Path>) -> Result<(Checkpoint, Vec<StepReport>)> {
    let mut trainer = Trainer::new(cfg)?;
    let mut reports = Vec::new();
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.csv");
            let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    trainer.run(
        data,
        |r| {
            reports.push(*r);
            if let Some((f, path)) = log.as_mut() {
                writeln!(f, "{}", r.csv_line()).map_err(|e| Error::io(&*path, e))?;
            }
            if r.step % 50 == 0 {
                log::info!("step {} total {:.6} cfm {:.6}", r.step, r.total, r.cfm);
            }
            Ok(())
        },
        |ck| match out_dir {
            Some(dir) => ck.save(&dir.join(format!("checkpoint_{}.bin", ck.step))),
            None => Ok(()),
        },
    )?;
    if let Some((mut f, path)) = log {
        f.flush().map_err(|e| Error::io(&path, e))?;
    }
    let ck = trainer.checkpoint();
    if let Some(dir) = out_dir {
        ck.save(&dir.join("checkpoint.bin"))?;
    }
    Ok((ck, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_schedule(0, 100, 1e-3), 1e-3);
        assert!(cosine_schedule(100, 100, 1e-3).abs() < 1e-18);
        assert!((cosine_schedule(50, 100, 1e-3) - 5e-4).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for s in 0..=100 {
            let lr = cosine_schedule(s, 100, 1.0);
            assert!(lr <= last);
            last = lr;
        }
    }

    fn scalar_store(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::scalar(v));
        p
    }

    fn grad(v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("x".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = scalar_store(0.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &grad(3.7), &mut s, 1e-3, AdamParams::default()).unwrap();
        assert!((p.get("x").unwrap().item() + 1e-3).abs() < 1e-11);
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut p = scalar_store(1.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &grad(2.0), &mut s, 1e-3, AdamParams::default()).unwrap();
        let before = p.get("x").unwrap().item();
        let (m0, v0) = (s.m["x"].item(), s.v["x"].item());
        // decayed moments still move the parameter, so only the moments are checked here
        adam_step(&mut p, &grad(0.0), &mut s, 1e-3, AdamParams::default()).unwrap();
        assert_eq!(s.m["x"].item(), 0.9 * m0);
        assert_eq!(s.v["x"].item(), 0.999 * v0);
        let mut q = scalar_store(before);
        let mut fresh = AdamState::default();
        adam_step(&mut q, &grad(0.0), &mut fresh, 1e-3, AdamParams::default()).unwrap();
        assert_eq!(q.get("x").unwrap().item(), before);
    }

    #[test]
    fn adam_constant_gradient_reaches_lr_steps() {
        let mut p = scalar_store(0.0);
        let mut s = AdamState::default();
        let mut prev = 0.0;
        let mut delta = 0.0;
        for _ in 0..10_000 {
            adam_step(&mut p, &grad(-0.25), &mut s, 1e-3, AdamParams::default()).unwrap();
            let x = p.get("x").unwrap().item();
            delta = x - prev;
            prev = x;
        }
        assert!((delta - 1e-3).abs() < 1e-5, "{delta}");
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut p = scalar_store(1.0);
        let mut s = AdamState::default();
        assert!(adam_step(&mut p, &grad(f64::NAN), &mut s, 1e-3, AdamParams::default()).is_err());
        assert_eq!(p.get("x").unwrap().item(), 1.0);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = BTreeMap::from([
            ("a".to_string(), Tensor::from_vec(1, 2, vec![30.0, 40.0]).unwrap()),
            ("b".to_string(), Tensor::scalar(0.0)),
        ]);
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((g["a"].get(0, 0) - 6.0).abs() < 1e-12);
        assert!((g["a"].get(0, 1) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn rotations_are_proper_and_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = icosphere(1);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        }
        let rm = random_rotation_augment(&m, &mut rng).unwrap();
        assert!((rm.total_area() / m.total_area() - 1.0).abs() < 1e-9);
        for (i, j) in m.edges() {
            let a = crate::mesh::dist(&m.vertices()[i], &m.vertices()[j]);
            let b = crate::mesh::dist(&rm.vertices()[i], &rm.vertices()[j]);
            assert!((a / b - 1.0).abs() < 1e-9);
        }
        assert_eq!(rm.faces(), m.faces());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let t = Trainer::new(TrainConfig::desk_preset()).unwrap();
        let mut ck = t.checkpoint();
        ck.adam.m.insert("x".into(), Tensor::scalar(0.1 + 0.2));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = TrainConfig::desk_preset();
        assert!(Dataset::new(Vec::new(), Vec::new(), &cfg.model).is_err());
    }

    #[test]
    fn shuffles_visit_every_pair_each_epoch() {
        let t = Trainer::new(TrainConfig::desk_preset()).unwrap();
        for epoch in 0..3u64 {
            let mut seen: Vec<usize> = (0..5).map(|i| t.pair_for_step(5, epoch * 5 + i)).collect();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
    }
}
