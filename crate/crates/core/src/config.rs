//! TOML configuration loading, key validation and dataset assembly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::formats::{read_features, SpectralCache};
use crate::mesh::load_mesh_auto;
use crate::model::Shape;
use crate::synth::{generate, SyntheticConfig};
use crate::train::{Dataset, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeEntry {
    pub name: String,
    pub mesh: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub shapes: Vec<ShapeEntry>,
    /// Pairs of shape names; empty means every unordered pair.
    pub pairs: Vec<[String; 2]>,
    /// Generated benchmark used instead of `shapes`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    /// Directory for spectral caches; none disables caching.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Rescale loaded meshes to unit surface area.
    pub normalize_area: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            shapes: Vec::new(),
            pairs: Vec::new(),
            synthetic: None,
            cache_dir: None,
            normalize_area: true,
        }
    }
}

impl DataConfig {
    pub fn validate(&self, errs: &mut Vec<String>) {
        if self.synthetic.is_some() && !self.shapes.is_empty() {
            errs.push("data.synthetic and data.shapes are mutually exclusive".into());
        }
        if let Some(s) = &self.synthetic {
            s.validate(errs);
        }
        let names: Vec<&str> = self.shapes.iter().map(|s| s.name.as_str()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                errs.push(format!("data.shapes: duplicate name `{n}`"));
            }
        }
        for [a, b] in &self.pairs {
            for n in [a, b] {
                if !names.contains(&n.as_str()) {
                    errs.push(format!("data.pairs: unknown shape `{n}`"));
                }
            }
        }
    }
}

/// Template with every optional section present, used to detect unknown keys.
fn key_template() -> toml::Value {
    let mut cfg = TrainConfig::default();
    cfg.data.synthetic = Some(SyntheticConfig::default());
    cfg.data.cache_dir = Some(PathBuf::new());
    cfg.data.shapes.push(ShapeEntry {
        name: String::new(),
        mesh: PathBuf::new(),
        semantic: Some(PathBuf::new()),
    });
    toml::Value::try_from(cfg).expect("config serializes")
}

fn unknown_keys(value: &toml::Value, template: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match (value, template) {
        (toml::Value::Table(t), toml::Value::Table(k)) => {
            for (key, v) in t {
                let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
                match k.get(key) {
                    Some(kv) => unknown_keys(v, kv, &path, out),
                    None => out.push(format!("unknown key `{path}`")),
                }
            }
        }
        (toml::Value::Array(items), toml::Value::Array(k)) => {
            if let Some(first) = k.first() {
                for (i, v) in items.iter().enumerate() {
                    unknown_keys(v, first, &format!("{prefix}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

/// Parses and validates a configuration; every problem is reported at once.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let value: toml::Value = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    let mut errs = Vec::new();
    unknown_keys(&value, &key_template(), "", &mut errs);
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let cfg: TrainConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    cfg.validate(&mut errs);
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

/// Reads a config file; relative data paths are resolved against its directory.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text).context(path.display().to_string())?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for s in &mut cfg.data.shapes {
        resolve(&mut s.mesh);
        if let Some(p) = s.semantic.as_mut() {
            resolve(p);
        }
    }
    if let Some(p) = cfg.data.cache_dir.as_mut() {
        resolve(p);
    }
    Ok(cfg)
}

/// Loads or generates every shape and resolves the pair list.
pub fn build_dataset(cfg: &TrainConfig) -> Result<(Dataset, Vec<String>)> {
    let model = &cfg.model;
    let needs_sem = model.sglca.mode.uses_semantics();
    if let Some(syn) = &cfg.data.synthetic {
        if needs_sem && syn.sem_dim != model.sglca.sem_dim {
            return Err(Error::Config(vec![format!(
                "data.synthetic.sem_dim ({}) must equal model.sglca.sem_dim ({})",
                syn.sem_dim, model.sglca.sem_dim
            )]));
        }
        let generated = generate(syn)?;
        let names = (0..generated.len()).map(|i| format!("synthetic_{i}")).collect();
        let shapes = generated
            .into_iter()
            .map(|s| Shape::prepare(s.mesh, model.k, model.k_nb, Some(s.semantic)))
            .collect::<Result<Vec<_>>>()?;
        let pairs = (0..syn.pairs).map(|i| (2 * i, 2 * i + 1)).collect();
        return Ok((Dataset::new(shapes, pairs, model)?, names));
    }
    if cfg.data.shapes.is_empty() {
        return Err(Error::arg("data has neither shapes nor a synthetic section"));
    }
    let mut shapes = Vec::with_capacity(cfg.data.shapes.len());
    for entry in &cfg.data.shapes {
        let semantic = if needs_sem {
            let path = entry.semantic.as_ref().ok_or_else(|| {
                Error::arg(format!(
                    "shape `{}` has no semantic feature file but the fusion mode needs one",
                    entry.name
                ))
            })?;
            if !path.exists() {
                return Err(Error::arg(format!("semantic feature file not found: {}", path.display())));
            }
            let s = read_features(path)?;
            if s.cols() != model.sglca.sem_dim {
                return Err(Error::shape(
                    "semantic features",
                    format!("{} has {} columns, config expects {}", path.display(), s.cols(), model.sglca.sem_dim),
                ));
            }
            Some(s)
        } else {
            None
        };
        shapes.push(load_shape(&entry.mesh, semantic, cfg).context(format!("shape `{}`", entry.name))?);
    }
    let names: Vec<String> = cfg.data.shapes.iter().map(|s| s.name.clone()).collect();
    let index = |n: &str| names.iter().position(|m| m == n).ok_or_else(|| Error::arg(format!("unknown shape `{n}`")));
    let pairs = if cfg.data.pairs.is_empty() {
        (0..names.len())
            .flat_map(|i| (i + 1..names.len()).map(move |j| (i, j)))
            .collect()
    } else {
        cfg.data
            .pairs
            .iter()
            .map(|[a, b]| Ok((index(a)?, index(b)?)))
            .collect::<Result<Vec<_>>>()?
    };
    Ok((Dataset::new(shapes, pairs, model)?, names))
}

/// Loads one mesh, normalizes it if configured and attaches its spectral data.
pub fn load_shape(mesh_path: &Path, semantic: Option<crate::autodiff::Tensor>, cfg: &TrainConfig) -> Result<Shape> {
    let mut mesh = load_mesh_auto(mesh_path)?;
    if cfg.data.normalize_area {
        mesh = mesh.normalized_to_unit_area();
    }
    let cache = match &cfg.data.cache_dir {
        Some(dir) => SpectralCache::load_or_compute(dir, &mesh, cfg.model.k)?.0,
        None => SpectralCache::compute(&mesh, cfg.model.k)?,
    };
    Shape::from_parts(mesh, cache.basis, cache.stiffness, semantic, cfg.model.k_nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let text = "
            stepz = 3
            [model]
            kk = 4
            [model.backbone]
            widht = 3
            [[data.shapes]]
            name = 'a'
            mesh = 'a.off'
            colour = 'red'
        ";
        let Error::Config(errs) = parse_config(text).unwrap_err() else {
            panic!("expected a config error")
        };
        assert_eq!(errs.len(), 4, "{errs:?}");
        for k in ["stepz", "model.kk", "model.backbone.widht", "data.shapes[0].colour"] {
            assert!(errs.iter().any(|e| e.contains(k)), "{k} missing from {errs:?}");
        }
    }

    #[test]
    fn every_bad_value_is_listed() {
        let text = "steps = 0\nlr = -1.0\n[loss]\ncfm = -2.0\n";
        let Error::Config(errs) = parse_config(text).unwrap_err() else {
            panic!("expected a config error")
        };
        assert!(errs.len() >= 3, "{errs:?}");
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = parse_config(
            "seed = 7\n[model]\nk = 20\n[model.sglca]\nmode = 'geo_only'\n[cfm]\nloss = 'mse'\n[data.synthetic]\npairs = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.k, 20);
        assert_eq!(cfg.model.sglca.mode, crate::sglca::FusionMode::GeoOnly);
        assert_eq!(cfg.cfm.loss, crate::cfm::CfmLoss::Mse);
        assert_eq!(cfg.data.synthetic.unwrap().pairs, 2);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = TrainConfig::desk_preset();
        cfg.data.synthetic = Some(SyntheticConfig::default());
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn missing_semantic_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = dir.path().join("a.off");
        crate::mesh::save_mesh(&crate::mesh::icosphere(1), &mesh, crate::mesh::MeshFormat::Off).unwrap();
        let mut cfg = TrainConfig::desk_preset();
        cfg.model.k = 10;
        let missing = dir.path().join("nope.sgf");
        cfg.data.shapes = vec![ShapeEntry {
            name: "a".into(),
            mesh: mesh.clone(),
            semantic: Some(missing.clone()),
        }];
        cfg.data.pairs = vec![["a".into(), "a".into()]];
        let err = build_dataset(&cfg).unwrap_err().to_string();
        assert!(err.contains(&missing.display().to_string()), "{err}");
        cfg.model.sglca.mode = crate::sglca::FusionMode::GeoOnly;
        let (d, names) = build_dataset(&cfg).unwrap();
        assert_eq!(names, vec!["a"]);
        assert_eq!(d.pairs, vec![(0, 0)]);
    }
}
