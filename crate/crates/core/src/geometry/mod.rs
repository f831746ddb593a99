//! Geometric primitives shared by every stage of the pipeline.
//!
//! [`PointCloud`] is the exchange representation between segmentation,
//! generation and registration; [`TriMesh`] is what generators return and
//! what gets assembled. Both are immutable once validated and can be shared
//! freely across threads.

mod fps;
mod index;
mod sampling;
mod transform;
mod triangle_index;

pub use fps::{farthest_point_sample, farthest_point_sample_from};
pub use index::NeighborIndex;
pub use sampling::{sample_surface, sample_surface_with_faces};
pub use transform::AffineTransform;
pub use triangle_index::{closest_point_on_triangle, TriangleIndex};

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

pub type Point = Point3<f64>;
pub type Vector = Vector3<f64>;

const NORMAL_TOLERANCE: f64 = 1e-6;

/// Positions with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point>,
    normals: Option<Vec<Vector>>,
}

impl PointCloud {
    /// Builds a cloud, normalizing the supplied normals to unit length.
    ///
    /// Fails on non-finite coordinates, length mismatch, or a zero normal.
    pub fn new(positions: Vec<Point>, normals: Option<Vec<Vector>>) -> Result<Self> {
        if let Some(bad) = positions.iter().position(|p| !is_finite(p)) {
            return Err(Error::InvalidGeometry(format!(
                "non-finite position at index {bad}"
            )));
        }
        let normals = match normals {
            None => None,
            Some(ns) => {
                if ns.len() != positions.len() {
                    return Err(Error::InvalidGeometry(format!(
                        "{} normals for {} positions",
                        ns.len(),
                        positions.len()
                    )));
                }
                let mut unit = Vec::with_capacity(ns.len());
                for (i, n) in ns.into_iter().enumerate() {
                    let len = n.norm();
                    if !len.is_finite() || len < 1e-12 {
                        return Err(Error::InvalidGeometry(format!(
                            "zero or non-finite normal at index {i}"
                        )));
                    }
                    unit.push(if (len - 1.0).abs() <= NORMAL_TOLERANCE {
                        n
                    } else {
                        n / len
                    });
                }
                Some(unit)
            }
        };
        Ok(Self { positions, normals })
    }

    pub fn from_positions(positions: Vec<Point>) -> Result<Self> {
        Self::new(positions, None)
    }

    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[Vector]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Normals, or [`Error::NoNormals`].
    pub fn require_normals(&self) -> Result<&[Vector]> {
        self.normals().ok_or(Error::NoNormals)
    }

    pub fn into_parts(self) -> (Vec<Point>, Option<Vec<Vector>>) {
        (self.positions, self.normals)
    }

    pub fn aabb(&self) -> Result<Aabb> {
        Aabb::from_points(&self.positions)
    }

    /// Sub-cloud made of the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        }
    }

    /// Concatenation; the result has normals only if both inputs do.
    pub fn concat(&self, other: &Self) -> Self {
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let normals = match (&self.normals, &other.normals) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Self { positions, normals }
    }
}

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    vertices: Vec<Point>,
    faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point>, faces: Vec<[u32; 3]>) -> Result<Self> {
        if let Some(bad) = vertices.iter().position(|p| !is_finite(p)) {
            return Err(Error::InvalidGeometry(format!(
                "non-finite vertex at index {bad}"
            )));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(Error::InvalidGeometry(format!(
                    "face {fi} references a vertex out of range ({n} vertices)"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidGeometry(format!(
                    "face {fi} repeats a vertex index"
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn aabb(&self) -> Result<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    pub fn triangle(&self, face: usize) -> [Point; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Unit face normal, `None` for zero-area faces.
    pub fn face_normal(&self, face: usize) -> Option<Vector> {
        let [a, b, c] = self.triangle(face);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        (len > 0.0).then(|| n / len)
    }

    /// Appends `other`, offsetting its face indices.
    pub fn append(&mut self, other: &TriMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(
            other
                .faces
                .iter()
                .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
        );
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a TriMesh>) -> TriMesh {
        let mut out = TriMesh::default();
        for part in parts {
            out.append(part);
        }
        out
    }
}

/// Axis-aligned box stored as center and full extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub center: Point,
    pub extents: Vector,
}

impl Aabb {
    pub fn from_min_max(min: Point, max: Point) -> Self {
        Self {
            center: nalgebra::center(&min, &max),
            extents: max - min,
        }
    }

    pub fn from_points(points: &[Point]) -> Result<Self> {
        let first = points
            .first()
            .ok_or(Error::EmptyGeometry("bounding box of zero points"))?;
        let (min, max) = points.iter().fold((*first, *first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        });
        Ok(Self::from_min_max(min, max))
    }

    pub fn min(&self) -> Point {
        self.center - self.extents * 0.5
    }

    pub fn max(&self) -> Point {
        self.center + self.extents * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extents.norm()
    }

    pub fn longest_side(&self) -> f64 {
        self.extents.max()
    }
}

/// Bounding box of any point set. Fails with [`Error::EmptyGeometry`] on an
/// empty slice.
pub fn compute_aabb(points: &[Point]) -> Result<Aabb> {
    Aabb::from_points(points)
}

/// Geometry that can be mapped by an affine transform.
pub trait Transformable: Sized {
    fn positions(&self) -> &[Point];

    fn transformed(&self, t: &AffineTransform) -> Result<Self>;
}

impl Transformable for PointCloud {
    fn positions(&self) -> &[Point] {
        &self.positions
    }

    fn transformed(&self, t: &AffineTransform) -> Result<Self> {
        if t.is_identity() {
            return Ok(self.clone());
        }
        let normal_map = t.normal_matrix()?;
        let positions = self.positions.iter().map(|p| t.apply_point(p)).collect();
        let normals = self.normals.as_ref().map(|ns| {
            ns.iter()
                .map(|n| {
                    let m = normal_map * n;
                    m / m.norm()
                })
                .collect()
        });
        Ok(Self { positions, normals })
    }
}

impl Transformable for TriMesh {
    fn positions(&self) -> &[Point] {
        &self.vertices
    }

    fn transformed(&self, t: &AffineTransform) -> Result<Self> {
        if t.is_identity() {
            return Ok(self.clone());
        }
        t.normal_matrix()?;
        Ok(Self {
            vertices: self.vertices.iter().map(|p| t.apply_point(p)).collect(),
            faces: self.faces.clone(),
        })
    }
}

/// Maps positions by the homogeneous matrix and normals by the
/// inverse-transpose of its linear block.
pub fn apply_transform<G: Transformable>(t: &AffineTransform, g: &G) -> Result<G> {
    g.transformed(t)
}

/// Centers `g` at its AABB center and scales it uniformly so the longest
/// side is 1. Returns the normalized geometry and the transform mapping the
/// normalized frame back to the original one.
pub fn normalize_geometry<G: Transformable>(g: &G) -> Result<(G, AffineTransform)> {
    let aabb = Aabb::from_points(g.positions())?;
    let longest = aabb.longest_side();
    if longest <= 0.0 {
        return Err(Error::DegenerateExtent);
    }
    let to_normalized = AffineTransform::uniform_scaling(1.0 / longest)
        * AffineTransform::translation(-aabb.center.coords);
    let back = AffineTransform::translation(aabb.center.coords)
        * AffineTransform::uniform_scaling(longest);
    Ok((g.transformed(&to_normalized)?, back))
}

fn is_finite(p: &Point) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cube_points(lo: f64, hi: f64) -> Vec<Point> {
        let mut pts = Vec::new();
        for &x in &[lo, hi] {
            for &y in &[lo, hi] {
                for &z in &[lo, hi] {
                    pts.push(Point::new(x, y, z));
                }
            }
        }
        pts
    }

    #[test]
    fn aabb_of_unit_cube() {
        let aabb = compute_aabb(&cube_points(0.0, 1.0)).unwrap();
        assert_eq!(aabb.center, Point::new(0.5, 0.5, 0.5));
        assert_eq!(aabb.extents, Vector::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn aabb_of_single_point() {
        let aabb = compute_aabb(&[Point::new(2.0, 3.0, 4.0)]).unwrap();
        assert_eq!(aabb.center, Point::new(2.0, 3.0, 4.0));
        assert_eq!(aabb.extents, Vector::zeros());
    }

    #[test]
    fn aabb_of_three_points() {
        let pts = [
            Point::new(-1.0, 0.0, 0.0),
            Point::new(1.0, 2.0, 0.0),
            Point::new(0.0, 1.0, 3.0),
        ];
        let aabb = compute_aabb(&pts).unwrap();
        assert_eq!(aabb.center, Point::new(0.0, 1.0, 1.5));
        assert_eq!(aabb.extents, Vector::new(2.0, 2.0, 3.0));
    }

    #[test]
    fn aabb_of_nothing_fails() {
        assert!(matches!(compute_aabb(&[]), Err(Error::EmptyGeometry(_))));
    }

    #[test]
    fn identity_is_bitwise() {
        let cloud = PointCloud::new(
            vec![Point::new(-0.0, 1.0 / 3.0, 1e300)],
            Some(vec![Vector::new(0.0, 0.0, 1.0)]),
        )
        .unwrap();
        let out = apply_transform(&AffineTransform::identity(), &cloud).unwrap();
        assert_eq!(out.positions()[0].x.to_bits(), (-0.0f64).to_bits());
        assert_eq!(out, cloud);
    }

    #[test]
    fn translation_keeps_normals() {
        let cloud = PointCloud::new(
            vec![Point::origin()],
            Some(vec![Vector::new(0.0, 1.0, 0.0)]),
        )
        .unwrap();
        let t = AffineTransform::translation(Vector::new(1.0, 0.0, 0.0));
        let out = apply_transform(&t, &cloud).unwrap();
        assert_eq!(out.positions()[0], Point::new(1.0, 0.0, 0.0));
        assert_eq!(out.normals().unwrap()[0], Vector::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn nonuniform_scale_uses_inverse_transpose() {
        let s = 0.5f64.sqrt();
        let cloud =
            PointCloud::new(vec![Point::origin()], Some(vec![Vector::new(s, s, 0.0)])).unwrap();
        let t = AffineTransform::scaling(Vector::new(2.0, 1.0, 1.0));
        let n = apply_transform(&t, &cloud).unwrap().normals().unwrap()[0];
        // diag(1/2, 1, 1) * (1,1,0) = (0.5, 1, 0), renormalized
        let expected = Vector::new(0.5, 1.0, 0.0).normalize();
        assert_relative_eq!(n, expected, epsilon = 1e-12);
        assert_relative_eq!(n.x, 0.4472, epsilon = 1e-4);
        assert_relative_eq!(n.y, 0.8944, epsilon = 1e-4);
    }

    #[test]
    fn singular_transform_is_rejected() {
        let cloud = PointCloud::from_positions(vec![Point::origin()]).unwrap();
        let mut m = nalgebra::Matrix4::identity();
        m[(2, 2)] = 0.0;
        let t = AffineTransform::from_matrix_unchecked(m);
        assert!(matches!(
            apply_transform(&t, &cloud),
            Err(Error::SingularTransform)
        ));
    }

    #[test]
    fn normalize_cube() {
        let cloud = PointCloud::from_positions(cube_points(0.0, 2.0)).unwrap();
        let (norm, back) = normalize_geometry(&cloud).unwrap();
        let aabb = norm.aabb().unwrap();
        assert_relative_eq!(aabb.min(), Point::new(-0.5, -0.5, -0.5), epsilon = 1e-15);
        assert_relative_eq!(aabb.max(), Point::new(0.5, 0.5, 0.5), epsilon = 1e-15);
        let expected = AffineTransform::translation(Vector::new(1.0, 1.0, 1.0))
            * AffineTransform::uniform_scaling(2.0);
        assert_relative_eq!(back.matrix(), expected.matrix(), epsilon = 1e-15);
    }

    #[test]
    fn normalize_already_normalized_is_identity() {
        let cloud = PointCloud::from_positions(cube_points(-0.5, 0.5)).unwrap();
        let (_, back) = normalize_geometry(&cloud).unwrap();
        assert_relative_eq!(
            back.matrix(),
            AffineTransform::identity().matrix(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn normalize_flat_rectangle() {
        let pts = vec![
            Point::new(0.0, 0.0, 1.0),
            Point::new(4.0, 0.0, 1.0),
            Point::new(4.0, 2.0, 1.0),
            Point::new(0.0, 2.0, 1.0),
        ];
        let cloud = PointCloud::from_positions(pts).unwrap();
        let (norm, back) = normalize_geometry(&cloud).unwrap();
        let aabb = norm.aabb().unwrap();
        assert_relative_eq!(aabb.extents, Vector::new(1.0, 0.5, 0.0), epsilon = 1e-15);
        assert_relative_eq!(back.matrix()[(0, 0)], 4.0);
    }

    #[test]
    fn normalize_point_is_degenerate() {
        let cloud = PointCloud::from_positions(vec![Point::new(1.0, 1.0, 1.0); 3]).unwrap();
        assert!(matches!(
            normalize_geometry(&cloud),
            Err(Error::DegenerateExtent)
        ));
    }

    #[test]
    fn mesh_rejects_bad_faces() {
        let v = vec![Point::origin(), Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0)];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 2]]).is_ok());
    }

    #[test]
    fn cloud_rejects_mismatch_and_nan() {
        assert!(PointCloud::new(vec![Point::origin()], Some(vec![])).is_err());
        assert!(PointCloud::from_positions(vec![Point::new(f64::NAN, 0.0, 0.0)]).is_err());
        let c = PointCloud::new(vec![Point::origin()], Some(vec![Vector::new(0.0, 0.0, 3.0)]))
            .unwrap();
        assert_eq!(c.normals().unwrap()[0], Vector::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn append_offsets_indices() {
        let v = vec![Point::origin(), Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0)];
        let tri = TriMesh::new(v, vec![[0, 1, 2]]).unwrap();
        let both = TriMesh::concat([&tri, &tri]);
        assert_eq!(both.faces(), &[[0, 1, 2], [3, 4, 5]]);
    }
}
