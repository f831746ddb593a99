use super::obb::union_mask;
use super::{MaskCandidate, SegmentLabels};

/// Points not covered by any cluster's union mask.
pub fn unassigned_mask(clusters: &[Vec<usize>], candidates: &[MaskCandidate], n: usize) -> Vec<bool> {
    let mut u = vec![true; n];
    for c in clusters {
        for (slot, covered) in u.iter_mut().zip(union_mask(candidates, c, n)) {
            if covered {
                *slot = false;
            }
        }
    }
    u
}

/// Reinstates discarded candidates that mostly cover unassigned points.
///
/// Candidates outside every cluster are visited in index (score) order; one
/// whose unassigned fraction exceeds `tau_recover` becomes a singleton
/// cluster and its points are marked assigned before the next candidate is
/// evaluated.
pub fn recover_unassigned(
    clusters: Vec<Vec<usize>>,
    candidates: &[MaskCandidate],
    tau_recover: f64,
) -> Vec<Vec<usize>> {
    let n = candidates.first().map_or(0, |c| c.mask.len());
    let mut u = unassigned_mask(&clusters, candidates, n);
    let mut in_cluster = vec![false; candidates.len()];
    for &m in clusters.iter().flatten() {
        in_cluster[m] = true;
    }
    let mut clusters = clusters;
    for (i, cand) in candidates.iter().enumerate() {
        if in_cluster[i] {
            continue;
        }
        let size = cand.mask.iter().filter(|&&m| m).count();
        if size == 0 {
            continue;
        }
        let free = cand.mask.iter().zip(&u).filter(|(&m, &f)| m && f).count();
        if free as f64 / size as f64 > tau_recover {
            clusters.push(vec![i]);
            for (slot, &m) in u.iter_mut().zip(&cand.mask) {
                if m {
                    *slot = false;
                }
            }
        }
    }
    clusters
}

/// Writes clusters into a label field in descending area (point count)
/// order, so smaller clusters win contested points, then compacts the
/// surviving ids to `1..=n_parts`. Label 0 marks unassigned points.
pub fn assign_labels(clusters: &[Vec<usize>], candidates: &[MaskCandidate], n: usize) -> SegmentLabels {
    let masks: Vec<Vec<bool>> = clusters.iter().map(|c| union_mask(candidates, c, n)).collect();
    let mut order: Vec<usize> = (0..masks.len()).collect();
    let area = |m: &Vec<bool>| m.iter().filter(|&&b| b).count();
    order.sort_by_key(|&c| std::cmp::Reverse(area(&masks[c])));
    let mut labels = vec![0u32; n];
    for (rank, &c) in order.iter().enumerate() {
        for (slot, &m) in labels.iter_mut().zip(&masks[c]) {
            if m {
                *slot = rank as u32 + 1;
            }
        }
    }
    SegmentLabels::compact(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(points: &[usize], n: usize) -> MaskCandidate {
        let mut mask = vec![false; n];
        for &p in points {
            mask[p] = true;
        }
        MaskCandidate {
            mask,
            score: 0.5,
            prompt_index: 0,
        }
    }

    #[test]
    fn fully_assigned_mask_not_reinstated() {
        let cands = vec![cand(&[0, 1, 2, 3], 10), cand(&[1, 2], 10)];
        assert_eq!(recover_unassigned(vec![vec![0]], &cands, 0.7), vec![vec![0]]);
    }

    #[test]
    fn fully_unassigned_mask_reinstated() {
        let cands = vec![cand(&[0, 1, 2, 3], 10), cand(&[6, 7], 10)];
        assert_eq!(
            recover_unassigned(vec![vec![0]], &cands, 0.7),
            vec![vec![0], vec![1]]
        );
    }

    #[test]
    fn sequential_update_of_unassigned_set() {
        // Cluster covers {0,1,2}; candidate 1 covers all ten points, seven
        // of them free (0.7 > 0.6). Candidate 2 ⊂ candidate 1 is fully free
        // initially but fully covered once candidate 1 is reinstated.
        let cands = vec![
            cand(&[0, 1, 2], 10),
            cand(&(0..10).collect::<Vec<_>>(), 10),
            cand(&[5, 6, 7, 8, 9], 10),
        ];
        let out = recover_unassigned(vec![vec![0]], &cands, 0.6);
        assert_eq!(out, vec![vec![0], vec![1]]);
        // Against a stale u the second candidate would have qualified.
        let u = unassigned_mask(&[vec![0]], &cands, 10);
        assert!((5..10).all(|i| u[i]));
        assert!(unassigned_mask(&out, &cands, 10).iter().all(|&f| !f));
    }

    #[test]
    fn single_cluster_labels_everything() {
        let cands = vec![cand(&(0..5).collect::<Vec<_>>(), 5)];
        let labels = assign_labels(&[vec![0]], &cands, 5);
        assert_eq!(labels.n_parts(), 1);
        assert!(labels.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn disjoint_clusters_partition() {
        let cands = vec![cand(&[0, 1, 2], 6), cand(&[3, 4, 5], 6)];
        let labels = assign_labels(&[vec![0], vec![1]], &cands, 6);
        assert_eq!(labels.n_parts(), 2);
        assert_eq!(labels.labels(), &[1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn smaller_cluster_wins_contested_points() {
        let n = 115;
        let big = cand(&(0..100).collect::<Vec<_>>(), n);
        let small = cand(&(95..115).collect::<Vec<_>>(), n);
        // Small cluster listed first to show the write order is by area.
        let labels = assign_labels(&[vec![1], vec![0]], &[big, small], n);
        let l = labels.labels();
        assert_eq!(labels.n_parts(), 2);
        assert!((95..100).all(|i| l[i] == l[110]));
        assert!((0..95).all(|i| l[i] == l[0]));
        assert_ne!(l[0], l[110]);
    }

    #[test]
    fn fully_overwritten_cluster_disappears() {
        let cands = vec![cand(&[0, 1, 2, 3], 4), cand(&[0, 1, 2, 3], 4)];
        let labels = assign_labels(&[vec![0], vec![1]], &cands, 4);
        assert_eq!(labels.n_parts(), 1);
    }
}
