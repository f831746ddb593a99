use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MaskCandidate;
use crate::geometry::{Point, PointCloud, Vector};

/// Samples used by the Monte-Carlo IoU estimate.
pub const OBB_IOU_SAMPLES: usize = 4096;

/// Oriented box: `axes` columns are orthonormal directions, `half_extents`
/// the half side lengths along them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Point,
    pub axes: Matrix3<f64>,
    pub half_extents: Vector,
}

impl Obb {
    /// Box aligned with the principal axes of `points`. Flat directions get
    /// a thickness of 1e-3 of the longest side so the volume stays positive.
    pub fn from_points(points: &[Point]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let n = points.len() as f64;
        let mean = points.iter().fold(Vector::zeros(), |acc, p| acc + p.coords) / n;
        let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
            let d = p.coords - mean;
            acc + d * d.transpose()
        }) / n;
        let axes = SymmetricEigen::new(cov).eigenvectors;
        let (mut lo, mut hi) = (Vector::repeat(f64::INFINITY), Vector::repeat(f64::NEG_INFINITY));
        for p in points {
            let local = axes.transpose() * (p.coords - mean);
            lo = lo.inf(&local);
            hi = hi.sup(&local);
        }
        let mid = (lo + hi) * 0.5;
        let mut half = (hi - lo) * 0.5;
        let floor = (half.max() * 1e-3).max(1e-9);
        half.apply(|h| *h = h.max(floor));
        Some(Self {
            center: Point::from(mean + axes * mid),
            axes,
            half_extents: half,
        })
    }

    pub fn axis_aligned(center: Point, extents: Vector) -> Self {
        Self {
            center,
            axes: Matrix3::identity(),
            half_extents: extents * 0.5,
        }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn contains(&self, p: &Point) -> bool {
        let local = self.axes.transpose() * (p - self.center);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i])
    }

    /// `n` jittered-stratified samples: one per cell of a near-cubic grid,
    /// with any remainder drawn uniformly.
    fn samples(&self, n: usize, rng: &mut impl Rng) -> Vec<Point> {
        let nx = ((n as f64).cbrt().round() as usize).max(1);
        let ny = (((n / nx) as f64).sqrt().round() as usize).max(1);
        let nz = (n / (nx * ny)).max(1);
        let mut out = Vec::with_capacity(n);
        let mut unit = |cell: [usize; 3], counts: [usize; 3], rng: &mut dyn rand::RngCore| {
            let local = Vector::from_fn(|i, _| {
                let u = (cell[i] as f64 + rng.gen::<f64>()) / counts[i] as f64;
                (2.0 * u - 1.0) * self.half_extents[i]
            });
            out.push(self.center + self.axes * local);
        };
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if i * ny * nz + j * nz + k < n {
                        unit([i, j, k], [nx, ny, nz], rng);
                    }
                }
            }
        }
        for _ in (nx * ny * nz).min(n)..n {
            unit([0, 0, 0], [1, 1, 1], rng);
        }
        out
    }
}

/// Monte-Carlo IoU of two oriented boxes.
///
/// Half of the samples are drawn inside each box (stratified); the fraction of one box's
/// samples that fall in the other estimates the intersection volume.
pub fn obb_iou(a: &Obb, b: &Obb, samples: usize, seed: u64) -> f64 {
    let (va, vb) = (a.volume(), b.volume());
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (samples / 2).max(1);
    let in_b = a.samples(half, &mut rng).iter().filter(|p| b.contains(p)).count();
    let in_a = b.samples(half, &mut rng).iter().filter(|p| a.contains(p)).count();
    let inter = 0.5 * (in_b as f64 / half as f64 * va + in_a as f64 / half as f64 * vb);
    let union = va + vb - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub(crate) fn union_mask(candidates: &[MaskCandidate], members: &[usize], n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &m in members {
        for (dst, &src) in mask.iter_mut().zip(&candidates[m].mask) {
            *dst |= src;
        }
    }
    mask
}

/// Merges clusters whose union-mask OBBs overlap with IoU above
/// `tau_merge`, repeating until no pair qualifies.
pub fn merge_by_obb_iou(
    clusters: Vec<Vec<usize>>,
    candidates: &[MaskCandidate],
    cloud: &PointCloud,
    tau_merge: f64,
    seed: u64,
) -> Vec<Vec<usize>> {
    let obb_of = |members: &[usize]| {
        let mask = union_mask(candidates, members, cloud.len());
        let pts: Vec<Point> = cloud
            .positions()
            .iter()
            .zip(&mask)
            .filter_map(|(p, &m)| m.then_some(*p))
            .collect();
        Obb::from_points(&pts)
    };
    let mut clusters = clusters;
    let mut boxes: Vec<Option<Obb>> = clusters.iter().map(|c| obb_of(c)).collect();
    'outer: loop {
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let (Some(a), Some(b)) = (&boxes[i], &boxes[j]) else {
                    continue;
                };
                if obb_iou(a, b, OBB_IOU_SAMPLES, seed) > tau_merge {
                    let absorbed = clusters.remove(j);
                    boxes.remove(j);
                    clusters[i].extend(absorbed);
                    clusters[i].sort_unstable();
                    boxes[i] = obb_of(&clusters[i]);
                    continue 'outer;
                }
            }
        }
        return clusters;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact IoU of two axis-aligned boxes.
    fn aabb_iou(a: &Obb, b: &Obb) -> f64 {
        let mut inter = 1.0;
        for k in 0..3 {
            let lo = (a.center[k] - a.half_extents[k]).max(b.center[k] - b.half_extents[k]);
            let hi = (a.center[k] + a.half_extents[k]).min(b.center[k] + b.half_extents[k]);
            inter *= (hi - lo).max(0.0);
        }
        inter / (a.volume() + b.volume() - inter)
    }

    #[test]
    fn half_overlap_boxes() {
        let a = Obb::axis_aligned(Point::new(0.0, 0.0, 0.0), Vector::new(2.0, 1.0, 1.0));
        let b = Obb::axis_aligned(Point::new(1.0, 0.0, 0.0), Vector::new(2.0, 1.0, 1.0));
        let exact = aabb_iou(&a, &b);
        assert!((exact - 1.0 / 3.0).abs() < 1e-15);
        for seed in 0..10 {
            let est = obb_iou(&a, &b, OBB_IOU_SAMPLES, seed);
            assert!((est - exact).abs() < 0.02, "seed {seed}: {est}");
        }
    }

    #[test]
    fn random_axis_aligned_pairs_agree_with_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut rand_box = || {
                Obb::axis_aligned(
                    Point::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0),
                    Vector::new(rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5), 1.0),
                )
            };
            let (a, b) = (rand_box(), rand_box());
            let (est, exact) = (obb_iou(&a, &b, OBB_IOU_SAMPLES, 1), aabb_iou(&a, &b));
            assert!((est - exact).abs() < 0.02, "{est} vs {exact}");
        }
    }

    #[test]
    fn identical_and_disjoint() {
        let a = Obb::axis_aligned(Point::origin(), Vector::new(1.0, 1.0, 1.0));
        let far = Obb::axis_aligned(Point::new(5.0, 0.0, 0.0), Vector::new(1.0, 1.0, 1.0));
        assert_eq!(obb_iou(&a, &a, OBB_IOU_SAMPLES, 0), 1.0);
        assert_eq!(obb_iou(&a, &far, OBB_IOU_SAMPLES, 0), 0.0);
    }

    #[test]
    fn pca_box_of_rotated_rectangle() {
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, 0.2, 0.7);
        let mut pts = Vec::new();
        for i in 0..=20 {
            for j in 0..=10 {
                for k in 0..=2 {
                    let local = Vector::new(i as f64 * 0.2, j as f64 * 0.1, k as f64 * 0.05);
                    pts.push(Point::from(rot * local));
                }
            }
        }
        let obb = Obb::from_points(&pts).unwrap();
        let mut h: Vec<f64> = obb.half_extents.iter().copied().collect();
        h.sort_by(f64::total_cmp);
        assert!((h[0] - 0.05).abs() < 1e-9 && (h[1] - 0.5).abs() < 1e-9 && (h[2] - 2.0).abs() < 1e-9);
        assert!(pts.iter().all(|p| {
            let local = obb.axes.transpose() * (p - obb.center);
            (0..3).all(|i| local[i].abs() <= obb.half_extents[i] + 1e-9)
        }));
    }

    fn cand(mask: Vec<bool>) -> MaskCandidate {
        MaskCandidate {
            mask,
            score: 1.0,
            prompt_index: 0,
        }
    }

    #[test]
    fn merge_same_region_and_keep_separate_regions() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point::new(i as f64 * 0.1, j as f64 * 0.1, (i * j % 3) as f64 * 0.05));
            }
        }
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point::new(5.0 + i as f64 * 0.1, j as f64 * 0.1, (i + j) as f64 * 0.01));
            }
        }
        let cloud = PointCloud::from_positions(pts).unwrap();
        let first: Vec<bool> = (0..200).map(|i| i < 100).collect();
        let second: Vec<bool> = (0..200).map(|i| i >= 100).collect();
        let cands = vec![
            cand(first.clone()),
            cand(first),
            cand(second.clone()),
            cand(second),
        ];
        let merged = merge_by_obb_iou(vec![vec![0], vec![1], vec![2], vec![3]], &cands, &cloud, 0.5, 0);
        assert_eq!(merged, vec![vec![0, 1], vec![2, 3]]);
    }
}
