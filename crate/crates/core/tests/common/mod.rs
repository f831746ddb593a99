#![allow(dead_code)]

use meshrag_core::geometry::{Point, PointCloud, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random cloud of `n` points in the unit cube with random unit normals.
pub fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let positions = (0..n)
        .map(|_| Point::new(rng.gen(), rng.gen(), rng.gen()))
        .collect();
    let normals = (0..n)
        .map(|_| {
            let v = Vector::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if v.norm() < 1e-6 {
                Vector::z()
            } else {
                v.normalize()
            }
        })
        .collect();
    PointCloud::new(positions, Some(normals)).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// All-pairs metrics: `[cd_l1, cd_l2, hd, nc, f1]`.
pub fn brute_metrics(a: &PointCloud, b: &PointCloud, tau: f64) -> [f64; 5] {
    let nearest = |from: &PointCloud, to: &PointCloud| -> Vec<(usize, f64)> {
        from.positions()
            .iter()
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for (j, q) in to.positions().iter().enumerate() {
                    let d2 = (p - q).norm_squared();
                    if d2 < best.1 {
                        best = (j, d2);
                    }
                }
                (best.0, best.1.sqrt())
            })
            .collect()
    };
    let ab = nearest(a, b);
    let ba = nearest(b, a);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let dists = |d: &[(usize, f64)]| d.iter().map(|e| e.1).collect::<Vec<_>>();
    let sq = |d: &[(usize, f64)]| d.iter().map(|e| e.1 * e.1).collect::<Vec<_>>();
    let cd_l1 = 0.5 * (mean(&dists(&ab)) + mean(&dists(&ba)));
    let cd_l2 = 0.5 * (mean(&sq(&ab)).sqrt() + mean(&sq(&ba)).sqrt());
    let hd = dists(&ab).into_iter().chain(dists(&ba)).fold(0.0, f64::max);
    let (na, nb) = (a.normals().unwrap(), b.normals().unwrap());
    let nc_dir = |d: &[(usize, f64)], from: &[Vector], to: &[Vector]| {
        mean(&d.iter().enumerate().map(|(i, &(j, _))| from[i].dot(&to[j]).abs()).collect::<Vec<_>>())
    };
    let nc = 0.5 * (nc_dir(&ab, na, nb) + nc_dir(&ba, nb, na));
    let share = |d: &[(usize, f64)]| d.iter().filter(|e| e.1 <= tau).count() as f64 / d.len() as f64;
    let (p, r) = (share(&ab), share(&ba));
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    [cd_l1, cd_l2, hd, nc, f1]
}

pub fn fast_metrics(a: &PointCloud, b: &PointCloud, tau: f64) -> [f64; 5] {
    use meshrag_core::metrics::*;
    let (l1, l2) = chamfer(a, b).unwrap();
    [
        l1,
        l2,
        hausdorff(a, b).unwrap(),
        normal_consistency(a, b).unwrap(),
        fscore(a, b, tau).unwrap(),
    ]
}

/// For each ground-truth part, the IoU with the predicted part that
/// overlaps it most.
pub fn part_ious(pred: &[u32], truth: &[u32], n_truth: u32, n_pred: u32) -> Vec<f64> {
    let mut overlap = vec![vec![0usize; n_pred as usize + 1]; n_truth as usize + 1];
    let mut pred_size = vec![0usize; n_pred as usize + 1];
    let mut truth_size = vec![0usize; n_truth as usize + 1];
    for (&p, &t) in pred.iter().zip(truth) {
        overlap[t as usize][p as usize] += 1;
        pred_size[p as usize] += 1;
        truth_size[t as usize] += 1;
    }
    (1..=n_truth as usize)
        .map(|t| {
            (1..=n_pred as usize)
                .map(|p| {
                    let inter = overlap[t][p] as f64;
                    inter / ((truth_size[t] + pred_size[p]) as f64 - inter)
                })
                .fold(0.0, f64::max)
        })
        .collect()
}
