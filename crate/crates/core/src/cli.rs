//! Command implementations behind the `shapecorr` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use clap::{Args, Parser, Subcommand};

use crate::autodiff::Tensor;
use crate::config::{build_dataset, load_config, load_shape};
use crate::error::{Error, Result, ResultExt};
use crate::eval::{default_thresholds, emit_report, evaluate, EvalReport};
use crate::formats::{read_correspondence, read_features, write_correspondence, write_features, SpectralCache};
use crate::mesh::{load_mesh_auto, one_ring_neighbors, save_mesh, MeshFormat};
use crate::model::{init_params, match_shapes, ModelConfig};
use crate::spectral::{wks, DEFAULT_WKS_ENERGIES, DEFAULT_WKS_SIGMA_SCALE};
use crate::synth::{generate, SyntheticConfig};
use crate::train::{train_loop, Checkpoint, Trainer, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "shapecorr", version, about = "Unsupervised non-rigid shape correspondence")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Compute and cache Laplacian spectra, neighbor tables and WKS descriptors.
    Preprocess(PreprocessArgs),
    /// Train from a TOML config.
    Train(TrainArgs),
    /// Write the hard correspondence between two meshes.
    Match(MatchArgs),
    /// Score a correspondence against ground truth and write CSV reports.
    Eval(EvalArgs),
    /// Produce semantic features for a mesh (external extractor or fixture).
    ExtractFeatures(ExtractArgs),
    /// Write the synthetic benchmark (meshes, features, ground truth, config).
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input meshes (.off, .obj or .ply).
    #[arg(long = "mesh", required = true, num_args = 1..)]
    pub meshes: Vec<PathBuf>,
    /// Number of eigenpairs.
    #[arg(long, default_value_t = 30)]
    pub k: usize,
    /// Neighborhood width including the self slot.
    #[arg(long, default_value_t = 32)]
    pub k_nb: usize,
    /// Cache directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the original scale instead of normalizing to unit area.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for metrics.csv and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Semantic features of the source (SGF1).
    #[arg(long)]
    pub source_features: Option<PathBuf>,
    /// Semantic features of the target (SGF1).
    #[arg(long)]
    pub target_features: Option<PathBuf>,
    /// Config whose model section must agree with the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted correspondence file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth correspondence file.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Output directory for the CSV reports.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of PCK thresholds on [0, 0.2].
    #[arg(long, default_value_t = 101)]
    pub thresholds: usize,
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub views: usize,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// Existing SGF1 file to validate against the mesh and copy to `out`.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// External extractor program; receives the same flags.
    #[arg(long, env = "SHAPECORR_EXTRACTOR")]
    pub extractor: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub pairs: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Preprocess(a) => cmd_preprocess(&a).map(|_| ()),
        Cmd::Train(a) => {
            let hash = cmd_train(&a.config, &a.out, a.resume.as_deref())?;
            println!("checkpoint {} hash {hash:016x}", a.out.join("checkpoint.bin").display());
            Ok(())
        }
        Cmd::Match(a) => cmd_match(&a).map(|_| ()),
        Cmd::Eval(a) => {
            let r = cmd_eval(&a)?;
            println!(
                "mean_geodesic_error {} auc {} mean_conformal_distortion {}",
                r.mean_geodesic_error, r.auc, r.mean_distortion
            );
            Ok(())
        }
        Cmd::ExtractFeatures(a) => cmd_extract_features(&a),
        Cmd::Synth(a) => cmd_synth(&a).map(|_| ()),
    }
}

/// Returns, per mesh, whether its cache was reused.
pub fn cmd_preprocess(a: &PreprocessArgs) -> Result<Vec<bool>> {
    let mut hits = Vec::with_capacity(a.meshes.len());
    for path in &a.meshes {
        let mut mesh = load_mesh_auto(path)?;
        if !a.no_normalize {
            mesh = mesh.normalized_to_unit_area();
        }
        let (cache, hit) = SpectralCache::load_or_compute(&a.out, &mesh, a.k).context(path.display().to_string())?;
        let wks_path = a.out.join(format!("{:016x}_k{}_wks.sgf", cache.mesh_hash, a.k));
        if !hit || !wks_path.exists() {
            let d = wks(&cache.basis, DEFAULT_WKS_ENERGIES, DEFAULT_WKS_SIGMA_SCALE)?;
            write_features(&wks_path, d.values())?;
        }
        let nb = one_ring_neighbors(&mesh, a.k_nb)?;
        log::info!("{}: {} vertices, neighbor width {}", path.display(), mesh.n_vertices(), nb.width());
        hits.push(hit);
    }
    Ok(hits)
}

/// Trains and returns the content hash of the final checkpoint.
pub fn cmd_train(config: &Path, out: &Path, resume: Option<&Path>) -> Result<u64> {
    let cfg = load_config(config)?;
    let (data, names) = build_dataset(&cfg)?;
    log::info!("{} shapes, {} pairs", names.len(), data.pairs.len());
    let ck = match resume {
        None => train_loop(cfg, &data, Some(out))?.0,
        Some(path) => resume_training(cfg, &data, Checkpoint::load(path)?, out)?,
    };
    ck.content_hash()
}

fn resume_training(cfg: TrainConfig, data: &crate::train::Dataset, ck: Checkpoint, out: &Path) -> Result<Checkpoint> {
    use std::io::Write;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("metrics.csv");
    let exists = path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    if !exists {
        writeln!(f, "{}", crate::train::METRICS_HEADER).map_err(|e| Error::io(&path, e))?;
    }
    let mut trainer = Trainer::resume(cfg, ck)?;
    trainer.run(
        data,
        |r| writeln!(f, "{}", r.csv_line()).map_err(|e| Error::io(&path, e)),
        |ck| ck.save(&out.join(format!("checkpoint_{}.bin", ck.step))),
    )?;
    let ck = trainer.checkpoint();
    ck.save(&out.join("checkpoint.bin"))?;
    Ok(ck)
}

fn check_compatible(ck: &Checkpoint, other: &ModelConfig) -> Result<()> {
    let mut errs = Vec::new();
    if ck.model.k != other.k {
        errs.push(format!("k: checkpoint {}, config {}", ck.model.k, other.k));
    }
    if ck.model.backbone.width != other.backbone.width {
        errs.push(format!(
            "backbone width: checkpoint {}, config {}",
            ck.model.backbone.width, other.backbone.width
        ));
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::arg(format!("checkpoint does not match config ({})", errs.join("; "))))
    }
}

/// Parameter names and shapes must be exactly those the model config creates.
fn check_params(ck: &Checkpoint) -> Result<()> {
    let expected = init_params(&ck.model, &mut crate::train::step_rng(0, 0));
    let same = expected.len() == ck.params.len()
        && expected
            .iter()
            .all(|(k, t)| ck.params.get(k).map(|p| p.shape() == t.shape()).unwrap_or(false));
    if same {
        Ok(())
    } else {
        Err(Error::Format("checkpoint parameters do not match its model config".into()))
    }
}

pub fn cmd_match(a: &MatchArgs) -> Result<Vec<usize>> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    check_params(&ck)?;
    if let Some(c) = &a.config {
        check_compatible(&ck, &load_config(c)?.model)?;
    }
    let mut cfg = TrainConfig {
        model: ck.model.clone(),
        ..Default::default()
    };
    cfg.data.normalize_area = !a.no_normalize;
    let needs_sem = cfg.model.sglca.mode.uses_semantics();
    let sem = |p: &Option<PathBuf>, which: &str| -> Result<Option<Tensor>> {
        match (needs_sem, p) {
            (false, _) => Ok(None),
            (true, Some(p)) => read_features(p).map(Some),
            (true, None) => Err(Error::arg(format!("--{which}-features is required by the fusion mode"))),
        }
    };
    let x = load_shape(&a.source, sem(&a.source_features, "source")?, &cfg).context("source")?;
    let y = load_shape(&a.target, sem(&a.target_features, "target")?, &cfg).context("target")?;
    let map = match_shapes(&ck.params, &ck.model, &x, &y)?;
    write_correspondence(&a.out, &map, y.n())?;
    Ok(map)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let (pred, n_pred) = read_correspondence(&a.pred)?;
    let (gt, n_gt) = read_correspondence(&a.gt)?;
    if pred.len() != gt.len() || n_pred != n_gt {
        return Err(Error::shape(
            "eval",
            format!("prediction {}x{n_pred}, ground truth {}x{n_gt}", pred.len(), gt.len()),
        ));
    }
    let mut src = load_mesh_auto(&a.source)?;
    let mut tgt = load_mesh_auto(&a.target)?;
    if !a.no_normalize {
        src = src.normalized_to_unit_area();
        tgt = tgt.normalized_to_unit_area();
    }
    let r = evaluate(&pred, &gt, &src, &tgt, &default_thresholds(a.thresholds))?;
    emit_report(&r, &a.out)?;
    Ok(r)
}

pub fn cmd_extract_features(a: &ExtractArgs) -> Result<()> {
    let mesh = load_mesh_auto(&a.mesh)?;
    if let Some(fx) = &a.fixture {
        let f = read_features(fx)?;
        if f.rows() != mesh.n_vertices() {
            return Err(Error::shape(
                "extract-features",
                format!("fixture has {} rows for {} vertices", f.rows(), mesh.n_vertices()),
            ));
        }
        return write_features(&a.out, &f);
    }
    let Some(prog) = &a.extractor else {
        return Err(Error::arg(
            "no feature extractor configured: pass --extractor (or set SHAPECORR_EXTRACTOR) or --fixture",
        ));
    };
    let status = Command::new(prog)
        .arg("--mesh")
        .arg(&a.mesh)
        .arg("--out")
        .arg(&a.out)
        .arg("--views")
        .arg(a.views.to_string())
        .arg("--size")
        .arg(a.size.to_string())
        .status()
        .map_err(|e| Error::io(prog, e))?;
    if !status.success() {
        return Err(Error::arg(format!("extractor exited with {status}")));
    }
    let f = read_features(&a.out)?;
    if f.rows() != mesh.n_vertices() {
        return Err(Error::shape("extract-features", "extractor output does not match the mesh"));
    }
    Ok(())
}

/// Writes meshes, features, identity ground truth and a ready-to-run config.
pub fn cmd_synth(a: &SynthArgs) -> Result<PathBuf> {
    let syn = SyntheticConfig {
        pairs: a.pairs,
        seed: a.seed,
        ..Default::default()
    };
    let shapes = generate(&syn)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut cfg = TrainConfig::desk_preset();
    cfg.model.sglca.sem_dim = syn.sem_dim;
    cfg.data.cache_dir = Some(PathBuf::from("cache"));
    for (i, s) in shapes.iter().enumerate() {
        let mesh = format!("shape_{i:02}.off");
        let sem = format!("shape_{i:02}.sgf");
        save_mesh(&s.mesh, a.out.join(&mesh), MeshFormat::Off)?;
        write_features(&a.out.join(&sem), &s.semantic)?;
        cfg.data.shapes.push(crate::config::ShapeEntry {
            name: format!("shape_{i:02}"),
            mesh: mesh.into(),
            semantic: Some(sem.into()),
        });
    }
    for p in 0..a.pairs {
        let (x, y) = (format!("shape_{:02}", 2 * p), format!("shape_{:02}", 2 * p + 1));
        let n = shapes[2 * p].mesh.n_vertices();
        let id: Vec<usize> = (0..n).collect();
        write_correspondence(&a.out.join(format!("gt_{x}_{y}.txt")), &id, n)?;
        cfg.data.pairs.push([x, y]);
    }
    let path = a.out.join("config.toml");
    let text = toml::to_string(&cfg).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
