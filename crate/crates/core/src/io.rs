//! PLY, OBJ and label-file reading and writing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ply_rs_bw::parser::Parser;
use ply_rs_bw::ply::{
    Addable, DefaultElement, ElementDef, Encoding, Ply, Property, PropertyDef, PropertyType,
    ScalarType,
};
use ply_rs_bw::writer::Writer;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, TriMesh, Vector};
use crate::segmentation::SegmentLabels;

const CORE_VERTEX_PROPERTIES: [&str; 6] = ["x", "y", "z", "nx", "ny", "nz"];

/// Payload encodings this crate writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

impl From<PlyEncoding> for Encoding {
    fn from(e: PlyEncoding) -> Self {
        match e {
            PlyEncoding::Ascii => Encoding::Ascii,
            PlyEncoding::BinaryLittleEndian => Encoding::BinaryLittleEndian,
        }
    }
}

/// A PLY file read as a point cloud.
#[derive(Debug, Clone)]
pub struct PlyCloud {
    pub cloud: PointCloud,
    /// Faces of a `face` element, fan-triangulated; empty for pure clouds.
    pub faces: Vec<[u32; 3]>,
    /// Vertex properties other than position and normal, in header order.
    pub extra: Vec<(String, Vec<Property>)>,
}

impl PlyCloud {
    /// Values of the `part_id` vertex property, when present.
    pub fn part_ids(&self) -> Option<Vec<u32>> {
        let (_, values) = self.extra.iter().find(|(name, _)| name == "part_id")?;
        values.iter().map(property_as_u32).collect()
    }

    pub fn mesh(&self) -> Result<TriMesh> {
        TriMesh::new(self.cloud.positions().to_vec(), self.faces.clone())
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PlyCloud> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    read_ply_from(&mut reader).map_err(|e| with_path(e, path))
}

pub fn read_ply_from(reader: &mut impl Read) -> Result<PlyCloud> {
    let ply = Parser::<DefaultElement>::new().read_ply(reader).map_err(|e| Error::Parse {
        path: None,
        line: e.line().unwrap_or(0),
        message: e.to_string(),
    })?;
    let vertex_def = ply
        .header
        .elements
        .get("vertex")
        .ok_or_else(|| Error::parse(0, "missing vertex element"))?;
    let vertices = ply.payload.get("vertex").map(Vec::as_slice).unwrap_or_default();
    let scalar = |element: &DefaultElement, key: &str| -> Result<f64> {
        element
            .get(key)
            .and_then(property_as_f64)
            .ok_or_else(|| Error::parse(0, format!("vertex property {key} missing or not a scalar")))
    };
    let mut positions = Vec::with_capacity(vertices.len());
    for v in vertices {
        positions.push(Point::new(scalar(v, "x")?, scalar(v, "y")?, scalar(v, "z")?));
    }
    let has_normals = ["nx", "ny", "nz"].iter().all(|k| vertex_def.properties.contains_key(*k));
    let normals = if has_normals {
        let mut normals = Vec::with_capacity(vertices.len());
        for v in vertices {
            normals.push(Vector::new(scalar(v, "nx")?, scalar(v, "ny")?, scalar(v, "nz")?));
        }
        Some(normals)
    } else {
        None
    };
    let extra = vertex_def
        .properties
        .keys()
        .filter(|k| !CORE_VERTEX_PROPERTIES.contains(&k.as_str()))
        .map(|k| (k.clone(), vertices.iter().map(|v| v[k].clone()).collect()))
        .collect();

    let mut faces = Vec::new();
    for (i, f) in ply.payload.get("face").map(Vec::as_slice).unwrap_or_default().iter().enumerate() {
        let indices = f
            .get("vertex_indices")
            .or_else(|| f.get("vertex_index"))
            .and_then(Property::to_u32_list)
            .ok_or_else(|| Error::parse(0, format!("face {i} has no vertex index list")))?;
        if indices.len() < 3 {
            return Err(Error::parse(0, format!("face {i} has fewer than 3 vertices")));
        }
        faces.extend(indices[1..].windows(2).map(|w| [indices[0], w[0], w[1]]));
    }
    Ok(PlyCloud {
        cloud: PointCloud::new(positions, normals)?,
        faces,
        extra,
    })
}

/// Writes positions and, when present, normals as doubles.
pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_ply_to(&mut out, cloud, None, encoding)?;
    out.flush()?;
    Ok(())
}

/// Writes a cloud with an integer `part_id` property and a per-part color.
pub fn write_labeled_ply(
    path: impl AsRef<Path>,
    cloud: &PointCloud,
    labels: &SegmentLabels,
    encoding: PlyEncoding,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_ply_to(&mut out, cloud, Some(labels), encoding)?;
    out.flush()?;
    Ok(())
}

pub fn write_ply_to(
    out: &mut impl Write,
    cloud: &PointCloud,
    labels: Option<&SegmentLabels>,
    encoding: PlyEncoding,
) -> Result<()> {
    if let Some(labels) = labels {
        if labels.len() != cloud.len() {
            return Err(Error::InvalidParameter(format!(
                "{} labels for {} points",
                labels.len(),
                cloud.len()
            )));
        }
    }
    let mut ply = Ply::<DefaultElement>::new();
    ply.header.encoding = encoding.into();
    let mut vertex = ElementDef::new("vertex".into());
    let mut names: Vec<&str> = vec!["x", "y", "z"];
    if cloud.has_normals() {
        names.extend(["nx", "ny", "nz"]);
    }
    for name in &names {
        vertex.properties.add(PropertyDef::new(
            (*name).into(),
            PropertyType::Scalar(ScalarType::Double),
        ));
    }
    if labels.is_some() {
        vertex.properties.add(PropertyDef::new("part_id".into(), PropertyType::Scalar(ScalarType::Int)));
        for c in ["red", "green", "blue"] {
            vertex.properties.add(PropertyDef::new(c.into(), PropertyType::Scalar(ScalarType::UChar)));
        }
    }
    vertex.count = cloud.len();
    ply.header.elements.add(vertex);

    let mut rows = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.positions().iter().enumerate() {
        let mut row = DefaultElement::new();
        for (k, name) in ["x", "y", "z"].iter().enumerate() {
            row.insert((*name).into(), Property::Double(p[k]));
        }
        if let Some(normals) = cloud.normals() {
            for (k, name) in ["nx", "ny", "nz"].iter().enumerate() {
                row.insert((*name).into(), Property::Double(normals[i][k]));
            }
        }
        if let Some(labels) = labels {
            let id = labels.labels()[i];
            row.insert("part_id".into(), Property::Int(id as i32));
            for (c, v) in ["red", "green", "blue"].iter().zip(part_color(id)) {
                row.insert((*c).into(), Property::UChar(v));
            }
        }
        rows.push(row);
    }
    ply.payload.insert("vertex".into(), rows);
    Writer::new().write_ply(out, &mut ply)?;
    Ok(())
}

/// Stable, well-separated color for a part id; unassigned (0) is gray.
pub fn part_color(id: u32) -> [u8; 3] {
    if id == 0 {
        return [128, 128, 128];
    }
    // Golden-angle hue walk at full saturation.
    let hue = (id as f64 * 137.507_764).rem_euclid(360.0) / 60.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|c: f64| (c * 255.0).round() as u8)
}

fn property_as_f64(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v.into(),
        Property::UChar(v) => v.into(),
        Property::Short(v) => v.into(),
        Property::UShort(v) => v.into(),
        Property::Int(v) => v.into(),
        Property::UInt(v) => v.into(),
        Property::Float(v) => v.into(),
        Property::Double(v) => v,
        _ => return None,
    })
}

fn property_as_u32(p: &Property) -> Option<u32> {
    let v = property_as_f64(p)?;
    (v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(v as u32)
}

/// Reads the triangles of every object and group into one mesh.
/// Polygons are fan-triangulated; points and lines are ignored.
pub fn read_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    read_obj_from(&mut reader).map_err(|e| with_path(e, path))
}

pub fn read_obj_from(reader: &mut impl BufRead) -> Result<TriMesh> {
    let options = tobj::LoadOptions {
        triangulate: true,
        ignore_points: true,
        ignore_lines: true,
        ..Default::default()
    };
    let (models, _) = tobj::load_obj_buf(reader, &options, |_| Err(tobj::LoadError::OpenFileFailed))
        .map_err(|e| Error::parse(0, e.to_string()))?;
    let mut mesh = TriMesh::new(Vec::new(), Vec::new())?;
    for model in models {
        let m = &model.mesh;
        let vertices = m.positions.chunks_exact(3).map(|c| Point::new(c[0], c[1], c[2])).collect();
        let faces = m.indices.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        mesh.append(&TriMesh::new(vertices, faces)?);
    }
    Ok(mesh)
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_obj_to(&mut out, mesh)?;
    out.flush()?;
    Ok(())
}

/// Writes `v`, area-weighted per-vertex `vn` and `f a//a b//b c//c` records.
/// Floats use the shortest representation that reads back exactly.
pub fn write_obj_to(out: &mut impl Write, mesh: &TriMesh) -> Result<()> {
    let normals = vertex_normals(mesh);
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for n in &normals {
        writeln!(out, "vn {} {} {}", n.x, n.y, n.z)?;
    }
    for f in mesh.faces() {
        let [a, b, c] = f.map(|i| i + 1);
        writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}")?;
    }
    Ok(())
}

/// Area-weighted average of adjacent face normals; isolated vertices get +z.
pub fn vertex_normals(mesh: &TriMesh) -> Vec<Vector> {
    let mut acc = vec![Vector::zeros(); mesh.vertices().len()];
    for (f, face) in mesh.faces().iter().enumerate() {
        let [a, b, c] = mesh.triangle(f);
        // Cross product length is twice the area, so this is area-weighted.
        let n = (b - a).cross(&(c - a));
        for &i in face {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| n.try_normalize(0.0).unwrap_or_else(Vector::z))
        .collect()
}

/// Reads a mesh from `.obj` or `.ply` by extension.
pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "ply" => read_ply(path)?.mesh(),
        _ => read_obj(path),
    }
}

/// Reads a point cloud from `.ply` or, for `.obj`, the mesh vertices.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "obj" => PointCloud::from_positions(read_obj(path)?.vertices().to_vec()),
        _ => Ok(read_ply(path)?.cloud),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<SegmentLabels> {
    let path = path.as_ref();
    serde_json::from_reader(BufReader::new(File::open(path)?)).map_err(|e| Error::Parse {
        path: Some(path.to_path_buf()),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_labels(path: impl AsRef<Path>, labels: &SegmentLabels) -> Result<()> {
    write_json(path, labels)
}

pub fn write_json(path: impl AsRef<Path>, value: &impl serde::Serialize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: Some(path.to_path_buf()),
            line,
            message,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_surface;
    use crate::synth;

    fn cloud_with_normals() -> PointCloud {
        sample_surface(&synth::uv_sphere(0.5, 12, 6), 50, 1).unwrap()
    }

    fn roundtrip(cloud: &PointCloud, encoding: PlyEncoding) -> PlyCloud {
        let mut buf = Vec::new();
        write_ply_to(&mut buf, cloud, None, encoding).unwrap();
        read_ply_from(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn ply_roundtrip_is_exact_in_both_encodings() {
        let cloud = cloud_with_normals();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let back = roundtrip(&cloud, enc);
            assert_eq!(back.cloud.positions(), cloud.positions());
            let (a, b) = (back.cloud.normals().unwrap(), cloud.normals().unwrap());
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).norm() < 1e-15);
            }
            assert!(back.extra.is_empty() && back.faces.is_empty());
        }
    }

    #[test]
    fn ply_without_normals() {
        let cloud = PointCloud::from_positions(vec![Point::new(1.0, 2.0, 3.0)]).unwrap();
        let back = roundtrip(&cloud, PlyEncoding::Ascii);
        assert!(!back.cloud.has_normals());
        assert!(matches!(back.cloud.require_normals(), Err(Error::NoNormals)));
    }

    #[test]
    fn unknown_properties_are_preserved_and_faces_triangulated() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n\
                    property float z\nproperty uchar red\nproperty float confidence\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    0 0 0 255 0.5\n1 0 0 0 0.25\n1 1 0 7 1\n0 1 0 9 0\n4 0 1 2 3\n";
        let ply = read_ply_from(&mut text.as_bytes()).unwrap();
        assert_eq!(ply.cloud.len(), 4);
        let names: Vec<&str> = ply.extra.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["red", "confidence"]);
        assert_eq!(ply.extra[0].1[3], Property::UChar(9));
        assert_eq!(ply.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!((ply.mesh().unwrap().surface_area() - 1.0).abs() < 1e-12);
        // Dropped on write.
        let back = roundtrip(&ply.cloud, PlyEncoding::Ascii);
        assert!(back.extra.is_empty());
    }

    #[test]
    fn labeled_ply_carries_part_ids() {
        let cloud = cloud_with_normals();
        let labels = SegmentLabels::new((0..cloud.len()).map(|i| (i % 2) as u32 + 1).collect(), 2).unwrap();
        let mut buf = Vec::new();
        write_ply_to(&mut buf, &cloud, Some(&labels), PlyEncoding::BinaryLittleEndian).unwrap();
        let back = read_ply_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.part_ids().unwrap(), labels.labels());
        assert_eq!(back.extra.len(), 4);
    }

    #[test]
    fn malformed_ply_is_a_parse_error() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n";
        assert!(matches!(read_ply_from(&mut text.as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(read_ply_from(&mut "not a ply".as_bytes()), Err(Error::Parse { .. })));
    }

    fn triangles(mesh: &TriMesh) -> Vec<[[u64; 3]; 3]> {
        let mut t: Vec<_> = (0..mesh.faces().len())
            .map(|f| mesh.triangle(f).map(|p| [p.x, p.y, p.z].map(f64::to_bits)))
            .collect();
        t.sort();
        t
    }

    #[test]
    fn obj_roundtrip_preserves_triangles_exactly() {
        let mesh = synth::translated(&synth::torus(0.5, 0.2, 12, 8), Vector::new(0.1, -1.0 / 3.0, 2.0));
        let mut buf = Vec::new();
        write_obj_to(&mut buf, &mesh).unwrap();
        let back = read_obj_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.vertices().len(), mesh.vertices().len());
        assert_eq!(triangles(&back), triangles(&mesh));
    }

    #[test]
    fn obj_reader_handles_slashes_negatives_polygons_and_groups() {
        let text = "# square\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\n\
                    o a\nf 1/1/1 2/1/1 3/1/1 4/1/1\no b\nv 0 0 1\nv 1 0 1\nv 0 1 1\nf -3 -2 -1\nl 1 2\n";
        let mesh = read_obj_from(&mut text.as_bytes()).unwrap();
        assert_eq!(mesh.faces().len(), 3);
        assert!((mesh.surface_area() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn obj_with_bad_index_is_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nf 1 2 3\n";
        assert!(read_obj_from(&mut text.as_bytes()).is_err());
    }

    #[test]
    fn labels_json_roundtrip_via_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.json");
        let labels = SegmentLabels::new(vec![1, 2, 3, 0], 3).unwrap();
        write_labels(&path, &labels).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);
        assert!(matches!(read_labels(dir.path().join("missing.json")), Err(Error::Io(_))));
    }

    #[test]
    fn distinct_part_colors() {
        let colors: Vec<_> = (1..=8).map(part_color).collect();
        for i in 0..colors.len() {
            for j in 0..i {
                assert_ne!(colors[i], colors[j]);
            }
        }
    }
}
