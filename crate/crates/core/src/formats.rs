//! On-disk formats: SGF1 feature files, correspondence files and the spectral cache.

use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result, ResultExt};
use crate::linalg::CsrMatrix;
use crate::mesh::TriMesh;
use crate::spectral::{cotan_laplacian, eigendecompose, SpectralBasis};

pub const FEATURE_MAGIC: &[u8; 4] = b"SGF1";
pub const DTYPE_F32: u8 = 0;
const FEATURE_HEADER_LEN: usize = 4 + 1 + 8 + 8;
const CACHE_MAGIC: &[u8; 4] = b"SCS1";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// SGF1 bytes for a row-major `f32` matrix.
pub fn encode_features(values: &Tensor) -> Vec<u8> {
    let mut payload = Vec::with_capacity(values.len() * 4);
    for &v in values.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + payload.len() + 8);
    out.extend_from_slice(FEATURE_MAGIC);
    out.push(DTYPE_F32);
    out.extend_from_slice(&(values.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(values.cols() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
    out
}

/// Parses and verifies SGF1 bytes.
pub fn decode_features(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < FEATURE_HEADER_LEN + 8 {
        return Err(Error::Format("feature file is truncated".into()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format("bad feature file magic".into()));
    }
    if bytes[4] != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {}", bytes[4])));
    }
    let rows = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes"));
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| n as usize == bytes.len() - FEATURE_HEADER_LEN - 8)
        .ok_or_else(|| {
            Error::Format(format!(
                "payload of {} bytes does not hold {rows}x{cols} f32 values",
                bytes.len() - FEATURE_HEADER_LEN - 8
            ))
        })? as usize;
    let payload = &bytes[FEATURE_HEADER_LEN..FEATURE_HEADER_LEN + len];
    let stored = u64::from_le_bytes(bytes[FEATURE_HEADER_LEN + len..].try_into().expect("8 bytes"));
    if stored != fnv1a64(payload) {
        return Err(Error::Format("feature file checksum mismatch".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::from_vec(rows as usize, cols as usize, data)
}

pub fn write_features(path: &Path, values: &Tensor) -> Result<()> {
    fs::write(path, encode_features(values)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).context(path.display().to_string())
}

/// Text form: a `n_x n_y` header, then one 0-based target index per line.
pub fn format_correspondence(map: &[usize], n_target: usize) -> String {
    let mut s = format!("{} {}\n", map.len(), n_target);
    for j in map {
        s.push_str(&j.to_string());
        s.push('\n');
    }
    s
}

/// Parses a correspondence file into `(map, n_target)`.
pub fn parse_correspondence(text: &str) -> Result<(Vec<usize>, usize)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "missing header".into() })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse { line: 1, msg: format!("bad header: {e}") })?;
    let [n_src, n_tgt] = dims[..] else {
        return Err(Error::Parse { line: 1, msg: "header must be `n_x n_y`".into() });
    };
    let mut map = Vec::with_capacity(n_src);
    for (i, l) in lines {
        let j: usize = l.trim().parse().map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("bad index: {e}"),
        })?;
        if j >= n_tgt {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("index {j} out of range for {n_tgt} targets"),
            });
        }
        map.push(j);
    }
    if map.len() != n_src {
        return Err(Error::Parse {
            line: map.len() + 2,
            msg: format!("expected {n_src} indices, found {}", map.len()),
        });
    }
    Ok((map, n_tgt))
}

pub fn write_correspondence(path: &Path, map: &[usize], n_target: usize) -> Result<()> {
    fs::write(path, format_correspondence(map, n_target)).map_err(|e| Error::io(path, e))
}

pub fn read_correspondence(path: &Path) -> Result<(Vec<usize>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_correspondence(&text).context(path.display().to_string())
}

/// Cached spectral data of one mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralCache {
    pub mesh_hash: u64,
    pub basis: SpectralBasis,
    pub stiffness: CsrMatrix,
}

impl SpectralCache {
    pub fn compute(mesh: &TriMesh, k: usize) -> Result<Self> {
        let (stiffness, mass) = cotan_laplacian(mesh)?;
        let basis = eigendecompose(&stiffness, &mass, k)?;
        Ok(SpectralCache {
            mesh_hash: mesh.content_hash(),
            basis,
            stiffness,
        })
    }

    pub fn path(dir: &Path, mesh_hash: u64, k: usize) -> PathBuf {
        dir.join(format!("{mesh_hash:016x}_k{k}.spc"))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = CACHE_MAGIC.to_vec();
        bincode::serialize_into(&mut out, self).map_err(|e| Error::Format(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CACHE_MAGIC {
            return Err(Error::Format("not a spectral cache (bad magic)".into()));
        }
        let c: SpectralCache =
            bincode::deserialize(&bytes[4..]).map_err(|e| Error::Format(e.to_string()))?;
        let b = c.basis;
        let basis = SpectralBasis::new(b.phi().clone(), b.lambda().to_vec(), b.mass().to_vec())?;
        Ok(SpectralCache { basis, ..c })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).context(path.display().to_string())
    }

    /// Reads the cache for `mesh` from `dir` or computes and writes it. The
    /// flag reports whether the cache was reused.
    pub fn load_or_compute(dir: &Path, mesh: &TriMesh, k: usize) -> Result<(Self, bool)> {
        let hash = mesh.content_hash();
        let path = Self::path(dir, hash, k);
        if path.exists() {
            match Self::load(&path) {
                Ok(c) if c.mesh_hash == hash && c.basis.k() == k && c.basis.n() == mesh.n_vertices() => {
                    log::info!("cache hit: {}", path.display());
                    return Ok((c, true));
                }
                Ok(_) => log::warn!("stale cache {}, recomputing", path.display()),
                Err(e) => log::warn!("unreadable cache {}: {e}, recomputing", path.display()),
            }
        }
        let c = Self::compute(mesh, k)?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        c.save(&path)?;
        log::info!("cache miss: wrote {}", path.display());
        Ok((c, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn feature_layout_is_byte_exact() {
        let t = Tensor::from_vec(2, 1, vec![1.0, -2.5]).unwrap();
        let b = encode_features(&t);
        assert_eq!(&b[..4], b"SGF1");
        assert_eq!(b[4], 0);
        assert_eq!(&b[5..13], &2u64.to_le_bytes());
        assert_eq!(&b[13..21], &1u64.to_le_bytes());
        assert_eq!(&b[21..25], &1.0f32.to_le_bytes());
        assert_eq!(&b[25..29], &(-2.5f32).to_le_bytes());
        assert_eq!(b.len(), 21 + 8 + 8);
        assert_eq!(decode_features(&b).unwrap(), t);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn corrupted_features_are_rejected() {
        let t = Tensor::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.25);
        let mut b = encode_features(&t);
        b[30] ^= 1;
        assert!(decode_features(&b).unwrap_err().to_string().contains("checksum"));
        let b = encode_features(&t);
        assert!(decode_features(&b[..b.len() - 3]).is_err());
        let mut c = b.clone();
        c[4] = 1;
        assert!(decode_features(&c).is_err());
    }

    #[test]
    fn correspondence_round_trip() {
        let m = vec![3, 0, 2, 2];
        let s = format_correspondence(&m, 5);
        assert_eq!(s.lines().count(), m.len() + 1);
        assert_eq!(parse_correspondence(&s).unwrap(), (m, 5));
        assert!(parse_correspondence("2 3\n0\n").is_err());
        assert!(parse_correspondence("1 3\n7\n").is_err());
        assert!(parse_correspondence("").is_err());
    }

    #[test]
    fn cache_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let m = icosphere(1);
        let (a, hit) = SpectralCache::load_or_compute(dir.path(), &m, 6).unwrap();
        assert!(!hit);
        let (b, hit) = SpectralCache::load_or_compute(dir.path(), &m, 6).unwrap();
        assert!(hit);
        assert_eq!(a, b);
        let err = SpectralCache::compute(&crate::mesh::regular_tetrahedron(1.0), 30).unwrap_err();
        assert!(err.to_string().contains("k < n required"));
    }
}
