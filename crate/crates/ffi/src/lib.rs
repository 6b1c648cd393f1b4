//! C ABI for the shape-correspondence library.
//!
//! Objects cross the boundary as opaque handles created and destroyed by this
//! library. Every fallible call returns an [`ScStatus`]; on failure the message
//! is kept per thread and can be read with [`sc_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use shapecorr::autodiff::Tensor;
use shapecorr::eval::{conformal_distortion, mean_geodesic_error};
use shapecorr::mesh::{load_mesh_auto, TriMesh};
use shapecorr::model::{match_shapes, Shape};
use shapecorr::spectral::{cotan_laplacian, eigendecompose};
use shapecorr::train::Checkpoint;
use shapecorr::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Panic = 6,
}

/// Triangle mesh handle.
pub struct ScMesh {
    mesh: TriMesh,
}

/// Trained model handle.
pub struct ScModel {
    ck: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> ScStatus {
    match e {
        Error::Io { .. } => ScStatus::Io,
        Error::Parse { .. } | Error::Format(_) => ScStatus::Format,
        Error::NonFinite { .. } | Error::NotSpd(_) | Error::NoConvergence { .. } => ScStatus::Numeric,
        Error::Context { source, .. } => status_of(source),
        _ => ScStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (ScStatus, String)>) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ScStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            ScStatus::Panic
        }
    }
}

fn lib<T>(r: shapecorr::Result<T>) -> Result<T, (ScStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (ScStatus, String) {
    (ScStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (ScStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ScStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (ScStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a mesh from `n_vertices * 3` coordinates and `n_faces * 3` indices.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_mesh_new(
    vertices: *const f64,
    n_vertices: usize,
    faces: *const u32,
    n_faces: usize,
    out: *mut *mut ScMesh,
) -> ScStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let v = slice(vertices, n_vertices * 3, "vertices")?;
        let f = slice(faces, n_faces * 3, "faces")?;
        let verts = v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let tris = f
            .chunks_exact(3)
            .map(|c| [c[0] as usize, c[1] as usize, c[2] as usize])
            .collect();
        let mesh = lib(TriMesh::new(verts, tris))?;
        *out = Box::into_raw(Box::new(ScMesh { mesh }));
        Ok(())
    })
}

/// Loads an OFF, OBJ or PLY mesh.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_mesh_load(path: *const c_char, out: *mut *mut ScMesh) -> ScStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mesh = lib(load_mesh_auto(path_arg(path)?))?;
        *out = Box::into_raw(Box::new(ScMesh { mesh }));
        Ok(())
    })
}

/// # Safety
/// `mesh` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_mesh_free(mesh: *mut ScMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Vertex count, or 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_mesh_vertex_count(mesh: *const ScMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.n_vertices())
}

/// Writes the `k` smallest Laplace-Beltrami eigenvalues of the unit-area mesh.
///
/// # Safety
/// `mesh` must be a live handle and `out_lambda` must hold `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn sc_mesh_spectrum(mesh: *const ScMesh, k: usize, out_lambda: *mut f64) -> ScStatus {
    guard(|| {
        let m = mesh.as_ref().ok_or_else(|| null("mesh"))?;
        if out_lambda.is_null() {
            return Err(null("out_lambda"));
        }
        let unit = m.mesh.normalized_to_unit_area();
        let (w, mass) = lib(cotan_laplacian(&unit))?;
        let b = lib(eigendecompose(&w, &mass, k))?;
        std::slice::from_raw_parts_mut(out_lambda, k).copy_from_slice(b.lambda());
        Ok(())
    })
}

/// Loads a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_model_load(path: *const c_char, out: *mut *mut ScModel) -> ScStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = lib(Checkpoint::load(&path_arg(path)?))?;
        *out = Box::into_raw(Box::new(ScModel { ck }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_model_free(model: *mut ScModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn features(p: *const f32, rows: usize, cols: usize) -> Result<Option<Tensor>, (ScStatus, String)> {
    if p.is_null() {
        return Ok(None);
    }
    let s = slice(p, rows * cols, "features")?;
    Ok(Some(lib(Tensor::from_vec(rows, cols, s.iter().map(|&v| v as f64).collect()))?))
}

/// Hard correspondence from `source` to `target` under `model`.
///
/// Semantic features are row-major `n x sem_cols` floats and may be null when
/// the model does not use them. `out_map` must hold one entry per source vertex.
///
/// # Safety
/// Handles must be live; arrays must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn sc_match(
    model: *const ScModel,
    source: *const ScMesh,
    source_features: *const f32,
    target: *const ScMesh,
    target_features: *const f32,
    sem_cols: usize,
    out_map: *mut usize,
) -> ScStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = source.as_ref().ok_or_else(|| null("source"))?;
        let y = target.as_ref().ok_or_else(|| null("target"))?;
        if out_map.is_null() {
            return Err(null("out_map"));
        }
        let cfg = &m.ck.model;
        let prep = |mesh: &TriMesh, f: *const f32| -> Result<Shape, (ScStatus, String)> {
            let sem = features(f, mesh.n_vertices(), sem_cols)?;
            lib(Shape::prepare(mesh.normalized_to_unit_area(), cfg.k, cfg.k_nb, sem))
        };
        let sx = prep(&x.mesh, source_features)?;
        let sy = prep(&y.mesh, target_features)?;
        let map = lib(match_shapes(&m.ck.params, cfg, &sx, &sy))?;
        std::slice::from_raw_parts_mut(out_map, map.len()).copy_from_slice(&map);
        Ok(())
    })
}

/// Mean geodesic error of `pred` against `gt` on the unit-area `target`.
///
/// # Safety
/// `pred` and `gt` must hold `n` entries; `target` must be live.
#[no_mangle]
pub unsafe extern "C" fn sc_mean_geodesic_error(
    pred: *const usize,
    gt: *const usize,
    n: usize,
    target: *const ScMesh,
    out: *mut f64,
) -> ScStatus {
    guard(|| {
        let t = target.as_ref().ok_or_else(|| null("target"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = slice(pred, n, "pred")?;
        let g = slice(gt, n, "gt")?;
        *out = lib(mean_geodesic_error(p, g, &t.mesh.normalized_to_unit_area()))?;
        Ok(())
    })
}

/// Mean conformal distortion of `map` from `source` to `target`.
///
/// # Safety
/// `map` must hold one entry per source vertex; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn sc_conformal_distortion(
    map: *const usize,
    source: *const ScMesh,
    target: *const ScMesh,
    out_mean: *mut f64,
) -> ScStatus {
    guard(|| {
        let x = source.as_ref().ok_or_else(|| null("source"))?;
        let y = target.as_ref().ok_or_else(|| null("target"))?;
        if out_mean.is_null() {
            return Err(null("out_mean"));
        }
        let m = slice(map, x.mesh.n_vertices(), "map")?;
        *out_mean = lib(conformal_distortion(m, &x.mesh, &y.mesh))?.1;
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
