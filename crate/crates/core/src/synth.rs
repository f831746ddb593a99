//! Procedural meshes and multi-part scenes used as fixtures and by the
//! oracle backend tests.

use std::f64::consts::PI;

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{
    sample_surface_with_faces, AffineTransform, Point, PointCloud, Transformable, TriMesh, Vector,
};
use crate::segmentation::SegmentLabels;

/// Axis-aligned box with the given full extents, centered at the origin.
pub fn cuboid(extents: Vector) -> TriMesh {
    let h = extents * 0.5;
    let v: Vec<Point> = (0..8)
        .map(|i| {
            Point::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    let faces = vec![
        [0, 2, 1], [1, 2, 3], // -z
        [4, 5, 6], [5, 7, 6], // +z
        [0, 1, 4], [1, 5, 4], // -y
        [2, 6, 3], [3, 6, 7], // +y
        [0, 4, 2], [2, 4, 6], // -x
        [1, 3, 5], [3, 7, 5], // +x
    ];
    TriMesh::new(v, faces).expect("valid cuboid")
}

/// Closed cylinder along z, centered at the origin.
pub fn cylinder(radius: f64, height: f64, segments: u32) -> TriMesh {
    let mut v = Vec::new();
    let hz = height * 0.5;
    for i in 0..segments {
        let a = 2.0 * PI * i as f64 / segments as f64;
        v.push(Point::new(radius * a.cos(), radius * a.sin(), -hz));
        v.push(Point::new(radius * a.cos(), radius * a.sin(), hz));
    }
    let bottom = v.len() as u32;
    v.push(Point::new(0.0, 0.0, -hz));
    let top = bottom + 1;
    v.push(Point::new(0.0, 0.0, hz));
    let mut f = Vec::new();
    for i in 0..segments {
        let j = (i + 1) % segments;
        let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        f.push([b0, b1, t0]);
        f.push([t0, b1, t1]);
        f.push([bottom, b1, b0]);
        f.push([top, t0, t1]);
    }
    TriMesh::new(v, f).expect("valid cylinder")
}

/// Latitude/longitude sphere centered at the origin.
pub fn uv_sphere(radius: f64, segments: u32, rings: u32) -> TriMesh {
    let mut v = vec![Point::new(0.0, 0.0, radius)];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            v.push(Point::new(
                radius * theta.sin() * phi.cos(),
                radius * theta.sin() * phi.sin(),
                radius * theta.cos(),
            ));
        }
    }
    let south = v.len() as u32;
    v.push(Point::new(0.0, 0.0, -radius));
    let ring = |r: u32, s: u32| 1 + (r - 1) * segments + s % segments;
    let mut f = Vec::new();
    for s in 0..segments {
        f.push([0, ring(1, s), ring(1, s + 1)]);
        f.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
            f.push([a, c, b]);
            f.push([b, c, d]);
        }
    }
    TriMesh::new(v, f).expect("valid sphere")
}

/// Torus around the z axis.
pub fn torus(major: f64, minor: f64, segments: u32, sides: u32) -> TriMesh {
    let mut v = Vec::new();
    for i in 0..segments {
        let u = 2.0 * PI * i as f64 / segments as f64;
        for j in 0..sides {
            let w = 2.0 * PI * j as f64 / sides as f64;
            let r = major + minor * w.cos();
            v.push(Point::new(r * u.cos(), r * u.sin(), minor * w.sin()));
        }
    }
    let idx = |i: u32, j: u32| (i % segments) * sides + j % sides;
    let mut f = Vec::new();
    for i in 0..segments {
        for j in 0..sides {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            f.push([a, b, c]);
            f.push([c, b, d]);
        }
    }
    TriMesh::new(v, f).expect("valid torus")
}

pub fn translated(mesh: &TriMesh, offset: Vector) -> TriMesh {
    mesh.transformed(&AffineTransform::translation(offset))
        .expect("translation is invertible")
}

/// Random rotation of at most `max_angle` radians about a random axis.
pub fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Rotation3<f64> {
    let axis = loop {
        let v = Vector::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let angle = rng.gen_range(0.0..=max_angle);
    Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), angle)
}

/// A multi-part object with per-part ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub parts: Vec<TriMesh>,
}

impl Scene {
    pub fn mesh(&self) -> TriMesh {
        TriMesh::concat(&self.parts)
    }

    /// Area-weighted sample of the whole scene with the ground-truth part
    /// label (1-based) of every point.
    pub fn sample(&self, n: usize, seed: u64) -> (PointCloud, SegmentLabels) {
        let mesh = self.mesh();
        let mut face_part = Vec::with_capacity(mesh.faces().len());
        for (i, part) in self.parts.iter().enumerate() {
            face_part.extend(std::iter::repeat_n(i as u32 + 1, part.faces().len()));
        }
        let (cloud, faces) =
            sample_surface_with_faces(&mesh, n, seed).expect("scene has positive area");
        let labels = faces.iter().map(|&f| face_part[f]).collect();
        (
            cloud,
            SegmentLabels::new(labels, self.parts.len() as u32).expect("labels in range"),
        )
    }
}

/// Random primitive drawn from `kinds` with size roughly `size`.
fn primitive(rng: &mut impl Rng, kind: PrimitiveKind, size: f64) -> TriMesh {
    match kind {
        PrimitiveKind::Cuboid => cuboid(Vector::new(
            size * rng.gen_range(0.5..1.0),
            size * rng.gen_range(0.5..1.0),
            size * rng.gen_range(0.5..1.0),
        )),
        PrimitiveKind::Cylinder => cylinder(
            size * rng.gen_range(0.25..0.5),
            size * rng.gen_range(0.5..1.0),
            32,
        ),
        PrimitiveKind::Sphere => uv_sphere(size * rng.gen_range(0.3..0.5), 32, 16),
        PrimitiveKind::Ellipsoid => uv_sphere(1.0, 32, 16)
            .transformed(&AffineTransform::scaling(Vector::new(
                size * rng.gen_range(0.3..0.5),
                size * rng.gen_range(0.3..0.5),
                size * rng.gen_range(0.3..0.5),
            )))
            .expect("scaling is invertible"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    Cuboid,
    Cylinder,
    Sphere,
    Ellipsoid,
}

/// `n_parts` primitives on a jittered grid with gaps of at least `gap`
/// between their bounding spheres.
pub fn scattered_scene(n_parts: usize, kinds: &[PrimitiveKind], gap: f64, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 0.5;
    // Bounding radius of any primitive at this size is below size * 0.87.
    let pitch = 2.0 * 0.87 * size + gap;
    let cols = (n_parts as f64).sqrt().ceil() as usize;
    let parts = (0..n_parts)
        .map(|i| {
            let kind = kinds[rng.gen_range(0..kinds.len())];
            let mesh = primitive(&mut rng, kind, size);
            let offset = Vector::new(
                (i % cols) as f64 * pitch,
                (i / cols) as f64 * pitch,
                rng.gen_range(-0.1..0.1),
            );
            translated(&mesh, offset)
        })
        .collect();
    Scene { parts }
}

/// A table-like object: slab top, legs and a few extra blocks, all boxes
/// and cylinders separated by small gaps.
pub fn assembly_scene(n_parts: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::with_capacity(n_parts);
    let top = cuboid(Vector::new(
        rng.gen_range(1.0..1.4),
        rng.gen_range(0.7..1.0),
        rng.gen_range(0.06..0.12),
    ));
    let top_aabb = top.aabb().expect("nonempty");
    let half = top_aabb.extents * 0.5;
    parts.push(translated(&top, Vector::new(0.0, 0.0, 0.5)));
    let corners = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
    let mut i = 1;
    while parts.len() < n_parts {
        let part = if i <= 4 {
            let (sx, sy) = corners[i - 1];
            let leg = if rng.gen_bool(0.5) {
                cylinder(rng.gen_range(0.04..0.07), 0.8, 24)
            } else {
                let w = rng.gen_range(0.07..0.12);
                cuboid(Vector::new(w, w, 0.8))
            };
            translated(
                &leg,
                Vector::new(sx * (half.x - 0.1), sy * (half.y - 0.1), 0.5 - half.z - 0.42),
            )
        } else {
            let k = (i - 5) as f64;
            let block = if rng.gen_bool(0.5) {
                cuboid(Vector::new(
                    rng.gen_range(0.15..0.3),
                    rng.gen_range(0.15..0.3),
                    rng.gen_range(0.1..0.25),
                ))
            } else {
                cylinder(rng.gen_range(0.06..0.12), rng.gen_range(0.15..0.3), 24)
            };
            let h = block.aabb().expect("nonempty").extents.z * 0.5;
            translated(
                &block,
                Vector::new(
                    -half.x + 0.25 + 0.4 * k,
                    rng.gen_range(-0.2..0.2),
                    0.5 + half.z + h + 0.02,
                ),
            )
        };
        parts.push(part);
        i += 1;
    }
    Scene { parts }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_are_closed_and_outward() {
        for mesh in [
            cuboid(Vector::new(1.0, 2.0, 3.0)),
            cylinder(0.5, 1.0, 16),
            uv_sphere(1.0, 16, 8),
            torus(1.0, 0.3, 24, 12),
        ] {
            // Divergence theorem: positive volume for outward winding.
            let volume: f64 = (0..mesh.faces().len())
                .map(|f| {
                    let [a, b, c] = mesh.triangle(f);
                    a.coords.dot(&b.coords.cross(&c.coords)) / 6.0
                })
                .sum();
            assert!(volume > 0.0);
        }
        let vol = |m: &TriMesh| -> f64 {
            (0..m.faces().len())
                .map(|f| {
                    let [a, b, c] = m.triangle(f);
                    a.coords.dot(&b.coords.cross(&c.coords)) / 6.0
                })
                .sum()
        };
        assert!((vol(&cuboid(Vector::new(1.0, 2.0, 3.0))) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn scene_labels_follow_parts() {
        let scene = scattered_scene(3, &[PrimitiveKind::Sphere], 0.3, 1);
        let (cloud, labels) = scene.sample(3000, 2);
        assert_eq!(labels.n_parts(), 3);
        for (p, &l) in cloud.positions().iter().zip(labels.labels()) {
            let aabb = scene.parts[l as usize - 1].aabb().unwrap();
            assert!((p - aabb.center).abs().iter().zip(aabb.extents.iter()).all(|(d, e)| *d <= e * 0.5 + 1e-9));
        }
    }

    #[test]
    fn assembly_parts_are_disjoint() {
        let scene = assembly_scene(6, 3);
        assert_eq!(scene.parts.len(), 6);
        for (i, a) in scene.parts.iter().enumerate() {
            for b in &scene.parts[i + 1..] {
                let (a, b) = (a.aabb().unwrap(), b.aabb().unwrap());
                let overlap = (0..3).all(|k| {
                    (a.center[k] - b.center[k]).abs() < 0.5 * (a.extents[k] + b.extents[k])
                });
                assert!(!overlap);
            }
        }
    }
}
