use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Point;
use crate::error::{Error, Result};

/// Greedy max-min subset of `k` indices; the first index is drawn from `seed`.
pub fn farthest_point_sample(points: &[Point], k: usize, seed: u64) -> Result<Vec<usize>> {
    check_count(points.len(), k)?;
    let start = ChaCha8Rng::seed_from_u64(seed).gen_range(0..points.len());
    farthest_point_sample_from(points, k, start)
}

/// Greedy max-min subset starting at `start`. Ties go to the lowest index.
pub fn farthest_point_sample_from(points: &[Point], k: usize, start: usize) -> Result<Vec<usize>> {
    check_count(points.len(), k)?;
    if start >= points.len() {
        return Err(Error::InvalidParameter(format!(
            "start index {start} out of range"
        )));
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut current = start;
    loop {
        selected.push(current);
        if selected.len() == k {
            break;
        }
        min_d2[current] = f64::NEG_INFINITY;
        let anchor = points[current];
        let mut best = usize::MAX;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if min_d2[i] == f64::NEG_INFINITY {
                continue;
            }
            let d2 = (p - anchor).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best_d2 {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

fn check_count(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::BadCount {
            count: k,
            available: n,
        });
    }
    Ok(())
}
