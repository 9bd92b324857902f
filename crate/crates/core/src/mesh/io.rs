//! OBJ and PLY readers/writers.
//!
//! OBJ texture coordinates are resolved to one UV per vertex: a position
//! referenced with two different `vt` indices is duplicated, so seams become
//! vertex splits.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mesh = match format {
        MeshFormat::Obj => read_obj(&mut reader)?,
        MeshFormat::Ply => read_ply(&mut reader)?,
    };
    Ok(mesh.with_source(path.display().to_string()))
}

fn parse_index(token: &str, count: usize, line: usize) -> Result<Option<usize>> {
    if token.is_empty() {
        return Ok(None);
    }
    let raw: i64 = token
        .parse()
        .map_err(|_| Error::parse(line, format!("bad index `{token}`")))?;
    let idx = match raw {
        0 => return Err(Error::parse(line, "index 0 is invalid (OBJ indices are one-based)")),
        r if r > 0 => (r - 1) as usize,
        r => {
            let back = (-r) as usize;
            if back > count {
                return Err(Error::parse(line, format!("relative index {r} out of range")));
            }
            count - back
        }
    };
    if idx >= count {
        return Err(Error::parse(
            line,
            format!("index {raw} out of range ({count} available)"),
        ));
    }
    Ok(Some(idx))
}

fn parse_floats<const K: usize>(rest: &[&str], line: usize) -> Result<[f64; K]> {
    if rest.len() < K {
        return Err(Error::parse(line, format!("expected {K} coordinates")));
    }
    let mut out = [0.0f64; K];
    for (o, t) in out.iter_mut().zip(rest) {
        *o = t
            .parse()
            .map_err(|_| Error::parse(line, format!("bad number `{t}`")))?;
        if !o.is_finite() {
            return Err(Error::parse(line, "non-finite coordinate"));
        }
    }
    Ok(out)
}

pub fn read_obj(reader: &mut impl BufRead) -> Result<TriangleMesh> {
    let mut positions: Vec<[f64; 3]> = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    // (position, vt) corner references, one triple per triangle.
    let mut corners: Vec<[(usize, Option<usize>); 3]> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let line = line.split('#').next().unwrap_or("");
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        match tag {
            "v" => positions.push(parse_floats::<3>(&rest, lineno)?),
            "vt" => texcoords.push(parse_floats::<2>(&rest, lineno)?),
            "f" => {
                if rest.len() < 3 {
                    return Err(Error::parse(lineno, "face needs at least 3 vertices"));
                }
                let mut poly = Vec::with_capacity(rest.len());
                for t in &rest {
                    let mut parts = t.split('/');
                    let v = parse_index(parts.next().unwrap_or(""), positions.len(), lineno)?
                        .ok_or_else(|| Error::parse(lineno, "missing vertex index"))?;
                    let vt = parse_index(parts.next().unwrap_or(""), texcoords.len(), lineno)?;
                    poly.push((v, vt));
                }
                for k in 1..poly.len() - 1 {
                    corners.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }

    let with_vt = corners.iter().flatten().filter(|c| c.1.is_some()).count();
    if with_vt != 0 && with_vt != corners.len() * 3 {
        return Err(Error::parse(0, "faces mix corners with and without texture coordinates"));
    }
    if with_vt == 0 {
        let faces = corners.iter().map(|c| [c[0].0, c[1].0, c[2].0]).collect();
        return TriangleMesh::new(positions, faces, None);
    }

    let mut vertices = positions.clone();
    let mut uv: Vec<Option<[f64; 2]>> = vec![None; positions.len()];
    let mut assigned_vt: Vec<Option<usize>> = vec![None; positions.len()];
    let mut split: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces = Vec::with_capacity(corners.len());
    for tri in &corners {
        let mut face = [0; 3];
        for (slot, &(v, vt)) in face.iter_mut().zip(tri) {
            let vt = vt.expect("checked above");
            *slot = match assigned_vt[v] {
                None => {
                    assigned_vt[v] = Some(vt);
                    uv[v] = Some(texcoords[vt]);
                    v
                }
                Some(existing) if existing == vt => v,
                Some(_) => *split.entry((v, vt)).or_insert_with(|| {
                    vertices.push(positions[v]);
                    uv.push(Some(texcoords[vt]));
                    vertices.len() - 1
                }),
            };
        }
        faces.push(face);
    }
    let uv = uv.into_iter().map(|t| t.unwrap_or([0.0, 0.0])).collect();
    TriangleMesh::new(vertices, faces, Some(uv))
}

pub fn write_obj(mesh: &TriangleMesh, out: &mut impl Write) -> std::io::Result<()> {
    for p in &mesh.vertices {
        writeln!(out, "v {} {} {}", p[0], p[1], p[2])?;
    }
    if let Some(uv) = &mesh.uv {
        for t in uv {
            writeln!(out, "vt {} {}", t[0], t[1])?;
        }
        for f in &mesh.faces {
            let (a, b, c) = (f[0] + 1, f[1] + 1, f[2] + 1);
            writeln!(out, "f {a}/{a} {b}/{b} {c}/{c}")?;
        }
    } else {
        for f in &mesh.faces {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
    }
    Ok(())
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_obj(mesh, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes a PLY with float32 positions, optional uint8 colors and
/// `uchar`-counted `int` face lists.
pub fn write_ply(
    mesh: &TriangleMesh,
    colors: Option<&[[u8; 3]]>,
    encoding: PlyEncoding,
    out: &mut impl Write,
) -> std::io::Result<()> {
    if let Some(c) = colors {
        assert_eq!(c.len(), mesh.n_vertices(), "one color per vertex");
    }
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply")?;
    writeln!(out, "format {format} 1.0")?;
    writeln!(out, "element vertex {}", mesh.n_vertices())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    if colors.is_some() {
        writeln!(out, "property uchar red")?;
        writeln!(out, "property uchar green")?;
        writeln!(out, "property uchar blue")?;
    }
    writeln!(out, "element face {}", mesh.n_faces())?;
    writeln!(out, "property list uchar int vertex_indices")?;
    writeln!(out, "end_header")?;
    match encoding {
        PlyEncoding::Ascii => {
            for (i, p) in mesh.vertices.iter().enumerate() {
                write!(out, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)?;
                if let Some(c) = colors {
                    write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2])?;
                }
                writeln!(out)?;
            }
            for f in &mesh.faces {
                writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for (i, p) in mesh.vertices.iter().enumerate() {
                for k in 0..3 {
                    out.write_all(&(p[k] as f32).to_le_bytes())?;
                }
                if let Some(c) = colors {
                    out.write_all(&c[i])?;
                }
            }
            for f in &mesh.faces {
                out.write_all(&[3u8])?;
                for &v in f {
                    out.write_all(&(v as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str, line: usize) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::parse(line, format!("unknown PLY type `{other}`"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Reads ASCII or binary little-endian PLY; only positions and triangle
/// (or fan-triangulated polygon) faces are kept.
pub fn read_ply(reader: &mut impl BufRead) -> Result<TriangleMesh> {
    let mut line = String::new();
    let mut lineno = 0;
    let mut next_line = |reader: &mut dyn BufRead, line: &mut String| -> Result<usize> {
        line.clear();
        lineno += 1;
        let read = reader
            .read_line(line)
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        if read == 0 {
            return Err(Error::parse(lineno, "unexpected end of PLY header"));
        }
        Ok(lineno)
    };

    next_line(reader, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::parse(1, "missing `ply` magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let ln = next_line(reader, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => {
                return Err(Error::parse(ln, format!("unsupported PLY format `{other}`")))
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(ln, "bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse(ln, "property before element"))?
                .properties
                .push(Property::List(
                    name.to_string(),
                    Scalar::parse(count_ty, ln)?,
                    Scalar::parse(item_ty, ln)?,
                )),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse(ln, "property before element"))?
                .properties
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty, ln)?)),
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(Error::parse(ln, format!("unexpected header line `{}`", line.trim()))),
        }
    }
    let binary = binary.ok_or_else(|| Error::parse(lineno, "missing format line"))?;

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut ascii_tokens: Vec<String> = Vec::new();
    let mut ascii_pos = 0;
    if !binary {
        let mut rest = String::new();
        reader
            .read_to_string(&mut rest)
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        ascii_tokens = rest.split_whitespace().map(str::to_owned).collect();
    }
    let mut read_value = |ty: Scalar, reader: &mut dyn BufRead| -> Result<f64> {
        if binary {
            let mut buf = [0u8; 8];
            reader
                .read_exact(&mut buf[..ty.size()])
                .map_err(|_| Error::parse(0, "truncated PLY body"))?;
            Ok(ty.decode_le(&buf))
        } else {
            let tok = ascii_tokens
                .get(ascii_pos)
                .ok_or_else(|| Error::parse(0, "truncated PLY body"))?;
            ascii_pos += 1;
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(0, format!("bad PLY value `{tok}`")))?;
            Ok(match ty {
                Scalar::F32 => v as f32 as f64,
                _ => v,
            })
        }
    };

    for el in &elements {
        for _ in 0..el.count {
            let mut pos = [0.0f64; 3];
            let mut poly: Vec<usize> = Vec::new();
            for prop in &el.properties {
                match prop {
                    Property::Scalar(name, ty) => {
                        let val = read_value(*ty, reader)?;
                        match name.as_str() {
                            "x" => pos[0] = val,
                            "y" => pos[1] = val,
                            "z" => pos[2] = val,
                            _ => {}
                        }
                    }
                    Property::List(name, count_ty, item_ty) => {
                        let count = read_value(*count_ty, reader)? as usize;
                        let mut items = Vec::with_capacity(count);
                        for _ in 0..count {
                            items.push(read_value(*item_ty, reader)?);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            for v in items {
                                if v < 0.0 {
                                    return Err(Error::parse(0, "negative face index"));
                                }
                                poly.push(v as usize);
                            }
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => vertices.push(pos),
                "face" => {
                    if poly.len() < 3 {
                        return Err(Error::parse(0, "face with fewer than 3 vertices"));
                    }
                    for k in 1..poly.len() - 1 {
                        faces.push([poly[0], poly[k], poly[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    if let Some(f) = faces.iter().find(|f| f.iter().any(|&v| v >= vertices.len())) {
        return Err(Error::parse(0, format!("face {f:?} index out of range")));
    }
    TriangleMesh::new(vertices, faces, None)
}
