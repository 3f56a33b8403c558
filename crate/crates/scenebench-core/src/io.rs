//! Minimal PLY and OBJ readers/writers.
//!
//! PLY supports ascii and binary_little_endian vertex clouds with `x y z`
//! positions and optional `nx ny nz` normals. Vertex data is written as
//! `double`, so binary files round-trip floats exactly. OBJ handles `v` and
//! `f` records only; polygonal faces are fan-triangulated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geom::{GeomError, PointCloud, SpaceTag, TriangleMesh};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<ScalarType> {
        match s {
            "float" | "float32" => Some(ScalarType::F32),
            "double" | "float64" => Some(ScalarType::F64),
            _ => None,
        }
    }

    fn byte_len(self) -> usize {
        match self {
            ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }
}

struct PlyHeader {
    format: PlyFormat,
    vertex_count: usize,
    properties: Vec<(String, ScalarType)>,
    data_offset: usize,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_ply_header(path: &Path, bytes: &[u8]) -> Result<PlyHeader, IoError> {
    let mut format = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut in_vertex_element = false;
    let mut offset = 0usize;
    let mut line_no = 0usize;

    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(path, line_no, "missing end_header"))?;
        let raw = &rest[..nl];
        offset += nl + 1;
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| parse_err(path, line_no, "non-utf8 header line"))?
            .trim_end_matches('\r')
            .trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("ply") | Some("comment") | None => {}
            Some("format") => {
                format = match tokens.next() {
                    Some("ascii") => Some(PlyFormat::Ascii),
                    Some("binary_little_endian") => Some(PlyFormat::BinaryLittleEndian),
                    other => {
                        return Err(parse_err(
                            path,
                            line_no,
                            format!("unsupported format {other:?}"),
                        ))
                    }
                };
            }
            Some("element") => {
                let name = tokens.next().unwrap_or("");
                let count: usize = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, line_no, "bad element count"))?;
                if name == "vertex" {
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else if count > 0 {
                    return Err(IoError::Unsupported(format!(
                        "PLY element '{name}' is not supported"
                    )));
                } else {
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                let ty = tokens.next().unwrap_or("");
                let name = tokens.next().unwrap_or("");
                let scalar = ScalarType::parse(ty).ok_or_else(|| {
                    IoError::Unsupported(format!("PLY property type '{ty}'"))
                })?;
                properties.push((name.to_string(), scalar));
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(path, line_no, format!("unknown keyword '{other}'")))
            }
        }
    }

    let format = format.ok_or_else(|| parse_err(path, 0, "missing format line"))?;
    let vertex_count =
        vertex_count.ok_or_else(|| parse_err(path, 0, "missing vertex element"))?;
    Ok(PlyHeader {
        format,
        vertex_count,
        properties,
        data_offset: offset,
    })
}

/// Read a point cloud (tagged `Raw`) from a minimal PLY file.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud, IoError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let header = parse_ply_header(path, &bytes)?;

    let idx = |name: &str| header.properties.iter().position(|(n, _)| n == name);
    let (xi, yi, zi) = match (idx("x"), idx("y"), idx("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(path, 0, "vertex element lacks x/y/z")),
    };
    let normal_idx = match (idx("nx"), idx("ny"), idx("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(header.vertex_count);
    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(&bytes[header.data_offset..])
                .map_err(|_| parse_err(path, 0, "non-utf8 ascii body"))?;
            for (ln, line) in text.lines().enumerate() {
                if rows.len() == header.vertex_count {
                    break;
                }
                let vals: Result<Vec<f64>, _> =
                    line.split_whitespace().map(str::parse::<f64>).collect();
                let vals =
                    vals.map_err(|e| parse_err(path, ln + 1, format!("bad float: {e}")))?;
                if vals.len() != header.properties.len() {
                    return Err(parse_err(
                        path,
                        ln + 1,
                        format!(
                            "expected {} values, got {}",
                            header.properties.len(),
                            vals.len()
                        ),
                    ));
                }
                rows.push(vals);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let row_len: usize = header.properties.iter().map(|(_, t)| t.byte_len()).sum();
            let body = &bytes[header.data_offset..];
            if body.len() < row_len * header.vertex_count {
                return Err(parse_err(path, 0, "binary body truncated"));
            }
            for r in 0..header.vertex_count {
                let mut cursor = r * row_len;
                let mut vals = Vec::with_capacity(header.properties.len());
                for (_, ty) in &header.properties {
                    let v = match ty {
                        ScalarType::F32 => {
                            let arr: [u8; 4] =
                                body[cursor..cursor + 4].try_into().unwrap();
                            f32::from_le_bytes(arr) as f64
                        }
                        ScalarType::F64 => {
                            let arr: [u8; 8] =
                                body[cursor..cursor + 8].try_into().unwrap();
                            f64::from_le_bytes(arr)
                        }
                    };
                    cursor += ty.byte_len();
                    vals.push(v);
                }
                rows.push(vals);
            }
        }
    }
    if rows.len() != header.vertex_count {
        return Err(parse_err(
            path,
            0,
            format!("expected {} vertices, got {}", header.vertex_count, rows.len()),
        ));
    }

    let points: Vec<Vector3<f64>> = rows
        .iter()
        .map(|r| Vector3::new(r[xi], r[yi], r[zi]))
        .collect();
    let cloud = match normal_idx {
        Some((a, b, c)) => {
            let normals = rows.iter().map(|r| Vector3::new(r[a], r[b], r[c])).collect();
            PointCloud::with_normals(points, normals, SpaceTag::Raw)?
        }
        None => PointCloud::new(points, SpaceTag::Raw)?,
    };
    Ok(cloud)
}

/// Write a point cloud as PLY with `double` properties.
pub fn write_ply(
    path: impl AsRef<Path>,
    cloud: &PointCloud,
    format: PlyFormat,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    let fmt_name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {fmt_name} 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    if cloud.normals().is_some() {
        for axis in ["nx", "ny", "nz"] {
            writeln!(w, "property double {axis}")?;
        }
    }
    writeln!(w, "end_header")?;

    let normals = cloud.normals();
    for (i, p) in cloud.points().iter().enumerate() {
        let mut row = vec![p.x, p.y, p.z];
        if let Some(ns) = normals {
            row.extend([ns[i].x, ns[i].y, ns[i].z]);
        }
        match format {
            PlyFormat::Ascii => {
                let text: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", text.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in row {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a triangle mesh from an OBJ file (`v`/`f` records only).
pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh, IoError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Result<Vec<f64>, _> = tokens.take(3).map(str::parse).collect();
                let coords =
                    coords.map_err(|e| parse_err(path, ln + 1, format!("bad vertex: {e}")))?;
                if coords.len() != 3 {
                    return Err(parse_err(path, ln + 1, "vertex needs 3 coordinates"));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|e| parse_err(path, ln + 1, format!("bad face index: {e}")))?;
                    if i < 1 {
                        return Err(parse_err(
                            path,
                            ln + 1,
                            "only positive 1-based face indices are supported",
                        ));
                    }
                    idx.push((i - 1) as usize);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, ln + 1, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            // vn/vt/usemtl/o/g/s/mtllib and comments are ignored
            _ => {}
        }
    }
    Ok(TriangleMesh::new(vertices, faces)?)
}

/// Write a triangle mesh as OBJ (`v`/`f` records).
pub fn write_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64, with_normals: bool) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        if with_normals {
            let ns = (0..n)
                .map(|_| {
                    let v = Vector3::new(
                        rng.random_range(-1.0..1.0f64),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    v / v.norm()
                })
                .collect();
            PointCloud::with_normals(pts, ns, SpaceTag::Raw).unwrap()
        } else {
            PointCloud::new(pts, SpaceTag::Raw).unwrap()
        }
    }

    #[test]
    fn binary_ply_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.ply");
        for with_normals in [false, true] {
            let cloud = random_cloud(117, 4, with_normals);
            write_ply(&path, &cloud, PlyFormat::BinaryLittleEndian).unwrap();
            let back = read_ply(&path).unwrap();
            assert_eq!(cloud.points(), back.points());
            assert_eq!(cloud.normals(), back.normals());
        }
    }

    #[test]
    fn ascii_ply_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud_ascii.ply");
        let cloud = random_cloud(63, 9, true);
        write_ply(&path, &cloud, PlyFormat::Ascii).unwrap();
        let back = read_ply(&path).unwrap();
        assert_eq!(cloud.points(), back.points());
        assert_eq!(cloud.normals(), back.normals());
    }

    #[test]
    fn reads_float32_ply() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.ply");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        );
        for v in [0.5f32, -1.0, 2.0, 4.5, 0.25, -0.125] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let cloud = read_ply(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points()[0], Vector3::new(0.5, -1.0, 2.0));
        assert_eq!(cloud.points()[1], Vector3::new(4.5, 0.25, -0.125));
    }

    #[test]
    fn parse_error_carries_line_context() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n0.0 oops 1.0\n",
        )
        .unwrap();
        let err = read_ply(&path).unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn obj_round_trip_and_fan_triangulation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.obj");
        std::fs::write(
            &path,
            "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n",
        )
        .unwrap();
        let mesh = read_obj(&path).unwrap();
        assert_eq!(mesh.vertices().len(), 4);
        assert_eq!(mesh.faces(), &[[0, 1, 2], [0, 2, 3]]);

        let out = dir.path().join("out.obj");
        write_obj(&out, &mesh).unwrap();
        let back = read_obj(&out).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn obj_bad_index_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");
        std::fs::write(&path, "v 0 0 0\nf 1 2 x\n").unwrap();
        assert!(matches!(
            read_obj(&path),
            Err(IoError::Parse { line: 2, .. })
        ));
    }
}
