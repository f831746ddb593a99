use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Point, PointCloud, TriMesh};
use crate::error::{Error, Result};

/// Area-weighted uniform surface sample with face normals.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    sample_surface_with_faces(mesh, n, seed).map(|(cloud, _)| cloud)
}

/// Like [`sample_surface`], also returning the source face of every point.
pub fn sample_surface_with_faces(
    mesh: &TriMesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 {
        return Err(Error::BadCount {
            count: 0,
            available: mesh.faces().len(),
        });
    }
    let mut cdf = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if total.is_nan() || total <= 0.0 {
        return Err(Error::EmptyGeometry("mesh has zero surface area"));
    }
    let last_positive = (0..cdf.len())
        .rposition(|f| mesh.face_area(f) > 0.0)
        .unwrap_or(0);
    let normals: Vec<_> = (0..mesh.faces().len()).map(|f| mesh.face_normal(f)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    let mut point_normals = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        let face = cdf.partition_point(|&c| c <= u).min(last_positive);
        let [a, b, c] = mesh.triangle(face);
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let s = r1.sqrt();
        let p = Point::from(a.coords * (1.0 - s) + b.coords * (s * (1.0 - r2)) + c.coords * (s * r2));
        positions.push(p);
        point_normals.push(normals[face].expect("selected face has positive area"));
        faces.push(face);
    }
    Ok((PointCloud::new(positions, Some(point_normals))?, faces))
}
