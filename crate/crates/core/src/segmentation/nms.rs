use super::MaskCandidate;

/// Intersection over union of two boolean masks; 0 when both are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Greedy non-maximum suppression over score-sorted candidates.
///
/// Each candidate joins the first cluster whose representative (its first,
/// highest-scoring member) overlaps it with IoU above `tau_nms`; otherwise
/// it starts a new cluster.
pub fn nms_cluster(candidates: &[MaskCandidate], tau_nms: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, cand) in candidates.iter().enumerate() {
        let home = clusters
            .iter()
            .position(|c| mask_iou(&candidates[c[0]].mask, &cand.mask) > tau_nms);
        match home {
            Some(c) => clusters[c].push(i),
            None => clusters.push(vec![i]),
        }
    }
    clusters
}

/// Drops clusters with two or fewer members.
pub fn filter_small_clusters(clusters: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    clusters.into_iter().filter(|c| c.len() > 2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(bits: &[u8], score: f64) -> MaskCandidate {
        MaskCandidate {
            mask: bits.iter().map(|&b| b == 1).collect(),
            score,
            prompt_index: 0,
        }
    }

    #[test]
    fn identical_masks_share_a_cluster() {
        let c = [cand(&[1, 1, 0, 0], 0.9), cand(&[1, 1, 0, 0], 0.8)];
        assert_eq!(nms_cluster(&c, 0.5), vec![vec![0, 1]]);
    }

    #[test]
    fn disjoint_masks_split() {
        let c = [cand(&[1, 1, 0, 0], 0.9), cand(&[0, 0, 1, 1], 0.8)];
        assert_eq!(nms_cluster(&c, 0.5), vec![vec![0], vec![1]]);
    }

    #[test]
    fn nested_masks_depend_on_threshold() {
        // |A| = 10, B ⊂ A with |B| = 6, IoU = 0.6.
        let a = cand(&[1; 10], 0.9);
        let b = cand(&[1, 1, 1, 1, 1, 1, 0, 0, 0, 0], 0.8);
        assert!((mask_iou(&a.mask, &b.mask) - 0.6).abs() < 1e-15);
        let c = [a, b];
        assert_eq!(nms_cluster(&c, 0.5).len(), 1);
        assert_eq!(nms_cluster(&c, 0.7).len(), 2);
    }

    #[test]
    fn small_clusters_filtered() {
        let clusters = vec![vec![0], vec![1, 2], vec![3, 4, 5], vec![6, 7, 8, 9, 10]];
        let kept = filter_small_clusters(clusters);
        assert_eq!(kept.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 5]);
        assert!(filter_small_clusters(vec![vec![0], vec![1]]).is_empty());
    }

    proptest! {
        #[test]
        fn clusters_partition_candidates(
            masks in prop::collection::vec(prop::collection::vec(any::<bool>(), 12), 0..30),
            tau in 0.05f64..0.95,
        ) {
            let cands: Vec<_> = masks
                .into_iter()
                .enumerate()
                .map(|(i, m)| MaskCandidate { mask: m, score: 1.0 - i as f64 * 0.01, prompt_index: i })
                .collect();
            let clusters = nms_cluster(&cands, tau);
            let mut seen: Vec<usize> = clusters.iter().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..cands.len()).collect::<Vec<_>>());
            for c in &clusters {
                prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
