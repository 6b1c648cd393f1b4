//! ASCII OFF, OBJ (`v`/`f` records) and binary little-endian PLY.

use std::fs;
use std::io::{BufRead, BufReader, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{TriMesh, Vec3};
use crate::error::{Error, Result, ResultExt};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("off") => Ok(MeshFormat::Off),
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::arg(format!(
                "cannot infer mesh format from {}",
                path.display()
            ))),
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Loads a mesh in the declared format. Vertex and face order follow the file.
pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = match format {
        MeshFormat::Off => parse_off(&bytes),
        MeshFormat::Obj => parse_obj(&bytes),
        MeshFormat::Ply => parse_ply(&bytes),
    };
    parsed.context(path.display().to_string())
}

/// Loads a mesh, inferring the format from the file extension.
pub fn load_mesh_auto(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    load_mesh(path, MeshFormat::from_path(path)?)
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>, format: MeshFormat) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    match format {
        MeshFormat::Off => write_off(mesh, &mut buf),
        MeshFormat::Obj => write_obj(mesh, &mut buf),
        MeshFormat::Ply => write_ply(mesh, &mut buf),
    }
    .map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Lines with comments stripped, paired with their 1-based line numbers.
fn content_lines(bytes: &[u8]) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line.map_err(|e| parse_err(i + 1, e.to_string()))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            out.push((i + 1, body.to_string()));
        }
    }
    Ok(out)
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("expected a number, found {tok:?}")))
}

fn parse_off(bytes: &[u8]) -> Result<TriMesh> {
    let lines = content_lines(bytes)?;
    let mut it = lines.iter();
    let (ln, header) = it.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut rest = header.as_str();
    if !rest.starts_with("OFF") {
        return Err(parse_err(*ln, "missing OFF header"));
    }
    rest = rest[3..].trim();
    let counts_line = if rest.is_empty() {
        it.next().ok_or_else(|| parse_err(*ln, "missing counts line"))?.clone()
    } else {
        (*ln, rest.to_string())
    };
    let counts: Vec<usize> = counts_line
        .1
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| parse_err(counts_line.0, "bad counts")))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(parse_err(counts_line.0, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = it.next().ok_or_else(|| parse_err(0, "unexpected end of file in vertices"))?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(*l, "vertex needs 3 coordinates"));
        }
        verts.push([parse_f64(toks[0], *l)?, parse_f64(toks[1], *l)?, parse_f64(toks[2], *l)?]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, s) = it.next().ok_or_else(|| parse_err(0, "unexpected end of file in faces"))?;
        let toks: Vec<usize> = s
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| parse_err(*l, format!("bad face index {t:?}"))))
            .collect::<Result<_>>()?;
        if toks.first() != Some(&3) || toks.len() < 4 {
            return Err(parse_err(*l, "only triangular faces are supported"));
        }
        let f = [toks[1], toks[2], toks[3]];
        if let Some(&bad) = f.iter().find(|&&i| i >= nv) {
            return Err(parse_err(*l, format!("index out of range: {bad}")));
        }
        faces.push(f);
    }
    TriMesh::new(verts, faces)
}

fn parse_obj(bytes: &[u8]) -> Result<TriMesh> {
    let mut verts: Vec<Vec3> = Vec::new();
    let mut raw_faces: Vec<(usize, [i64; 3])> = Vec::new();
    for (l, s) in content_lines(bytes)? {
        let mut toks = s.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<&str> = toks.collect();
                if c.len() < 3 {
                    return Err(parse_err(l, "vertex needs 3 coordinates"));
                }
                verts.push([parse_f64(c[0], l)?, parse_f64(c[1], l)?, parse_f64(c[2], l)?]);
            }
            Some("f") => {
                let idx: Vec<i64> = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<i64>()
                            .map_err(|_| parse_err(l, format!("bad face index {t:?}")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(parse_err(l, "only triangular faces are supported"));
                }
                raw_faces.push((l, [idx[0], idx[1], idx[2]]));
            }
            _ => {}
        }
    }
    let nv = verts.len() as i64;
    let mut faces = Vec::with_capacity(raw_faces.len());
    for (l, f) in raw_faces {
        let mut out = [0usize; 3];
        for (o, &i) in out.iter_mut().zip(&f) {
            // 1-based, negative values count back from the end
            let abs = if i > 0 { i - 1 } else if i < 0 { nv + i } else { -1 };
            if abs < 0 || abs >= nv {
                return Err(parse_err(l, format!("index out of range: {i}")));
            }
            *o = abs as usize;
        }
        faces.push(out);
    }
    TriMesh::new(verts, faces)
}

#[derive(Clone, Copy, Debug)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => PlyScalar::I8,
            "uchar" | "uint8" => PlyScalar::U8,
            "short" | "int16" => PlyScalar::I16,
            "ushort" | "uint16" => PlyScalar::U16,
            "int" | "int32" => PlyScalar::I32,
            "uint" | "uint32" => PlyScalar::U32,
            "float" | "float32" => PlyScalar::F32,
            "double" | "float64" => PlyScalar::F64,
            _ => return None,
        })
    }

    fn read(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            PlyScalar::I8 => r.read_i8()? as f64,
            PlyScalar::U8 => r.read_u8()? as f64,
            PlyScalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            PlyScalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            PlyScalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            PlyScalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            PlyScalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            PlyScalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug)]
enum PlyProperty {
    Scalar(String, PlyScalar),
    List(String, PlyScalar, PlyScalar),
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

fn parse_ply(bytes: &[u8]) -> Result<TriMesh> {
    let mut cursor = Cursor::new(bytes);
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut line_no = 0;
    let mut format_ok = false;
    loop {
        let mut line = String::new();
        line_no += 1;
        let read = cursor
            .read_line(&mut line)
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        if read == 0 {
            return Err(parse_err(line_no, "header not terminated"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(parse_err(1, "missing ply magic")),
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, _] => {
                return Err(parse_err(line_no, format!("unsupported PLY format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(line_no, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_no, "property before element"))?;
                let ct = PlyScalar::parse(ct).ok_or_else(|| parse_err(line_no, "bad list count type"))?;
                let it = PlyScalar::parse(it).ok_or_else(|| parse_err(line_no, "bad list index type"))?;
                el.props.push(PlyProperty::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_no, "property before element"))?;
                let ty = PlyScalar::parse(ty).ok_or_else(|| parse_err(line_no, "bad property type"))?;
                el.props.push(PlyProperty::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            [] => {}
            _ => return Err(parse_err(line_no, format!("unrecognized header line {:?}", line.trim()))),
        }
    }
    if !format_ok {
        return Err(parse_err(line_no, "missing binary_little_endian format line"));
    }
    let mut verts: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let eof = |_| parse_err(line_no, "unexpected end of binary payload");
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [f64::NAN; 3];
            for p in &el.props {
                match p {
                    PlyProperty::Scalar(name, ty) => {
                        let v = ty.read(&mut cursor).map_err(eof)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                _ => {}
                            }
                        }
                    }
                    PlyProperty::List(name, ct, it) => {
                        let count = ct.read(&mut cursor).map_err(eof)? as usize;
                        let mut idx = Vec::with_capacity(count);
                        for _ in 0..count {
                            idx.push(it.read(&mut cursor).map_err(eof)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if count != 3 {
                                return Err(Error::Format(format!(
                                    "face {} has {count} vertices; only triangles are supported",
                                    faces.len()
                                )));
                            }
                            let mut f = [0usize; 3];
                            for (o, &i) in f.iter_mut().zip(&idx) {
                                if i < 0.0 {
                                    return Err(Error::Format(format!("index out of range: {i}")));
                                }
                                *o = i as usize;
                            }
                            faces.push(f);
                        }
                    }
                }
            }
            if el.name == "vertex" {
                verts.push(xyz);
            }
        }
    }
    let nv = verts.len();
    if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
        return Err(Error::Format(format!("index out of range in face {f:?}")));
    }
    TriMesh::new(verts, faces)
}

fn write_off(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "OFF")?;
    writeln!(w, "{} {} 0", mesh.n_vertices(), mesh.n_faces())?;
    for p in mesh.vertices() {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    for f in mesh.faces() {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}

fn write_obj(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    for p in mesh.vertices() {
        writeln!(w, "v {} {} {}", p[0], p[1], p[2])?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

fn write_ply(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.n_vertices(),
        mesh.n_faces()
    )?;
    for p in mesh.vertices() {
        for &c in p {
            w.write_f32::<LittleEndian>(c as f32)?;
        }
    }
    for f in mesh.faces() {
        w.write_u8(3)?;
        for &i in f {
            w.write_i32::<LittleEndian>(i as i32)?;
        }
    }
    Ok(())
}
