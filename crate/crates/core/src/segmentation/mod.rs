//! Automatic part segmentation of a point cloud.
//!
//! Prompts are chosen by farthest point sampling, each prompt is sent to a
//! [`SegmenterBackend`] and the best of its three masks is kept. The masks
//! are then clustered by NMS, tiny clusters dropped, overlapping clusters
//! merged by oriented-box IoU, uncovered regions recovered from discarded
//! masks, and finally rasterized into per-point labels.

mod backend;
mod nms;
mod obb;
mod recovery;

pub use backend::{GeometricSegmenter, SegmenterBackend};
pub use nms::{filter_small_clusters, mask_iou, nms_cluster};
pub use obb::{merge_by_obb_iou, obb_iou, Obb, OBB_IOU_SAMPLES};
pub use recovery::{assign_labels, recover_unassigned, unassigned_mask};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, normalize_geometry, NeighborIndex, PointCloud};

/// One prompt's mask with its predicted quality.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCandidate {
    pub mask: Vec<bool>,
    pub score: f64,
    pub prompt_index: usize,
}

/// Per-point part ids; 0 means unassigned, parts are `1..=n_parts`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabels")]
pub struct SegmentLabels {
    n_parts: u32,
    labels: Vec<u32>,
}

#[derive(Deserialize)]
struct RawLabels {
    n_parts: u32,
    labels: Vec<u32>,
}

impl TryFrom<RawLabels> for SegmentLabels {
    type Error = Error;

    fn try_from(raw: RawLabels) -> Result<Self> {
        Self::new(raw.labels, raw.n_parts)
    }
}

impl SegmentLabels {
    pub fn new(labels: Vec<u32>, n_parts: u32) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l > n_parts) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} exceeds n_parts {n_parts}"
            )));
        }
        Ok(Self { n_parts, labels })
    }

    /// Renumbers the distinct nonzero ids to `1..=k`, preserving their order.
    pub fn compact(labels: Vec<u32>) -> Self {
        let mut present: Vec<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
        present.sort_unstable();
        present.dedup();
        let labels = labels
            .into_iter()
            .map(|l| {
                if l == 0 {
                    0
                } else {
                    present.binary_search(&l).expect("present") as u32 + 1
                }
            })
            .collect();
        Self {
            n_parts: present.len() as u32,
            labels,
        }
    }

    pub fn n_parts(&self) -> u32 {
        self.n_parts
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn unassigned_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 0).count()
    }

    /// Point indices of each part; entry `i` holds part `i + 1`.
    pub fn part_indices(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.n_parts as usize];
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                parts[l as usize - 1].push(i);
            }
        }
        parts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    pub n_prompts: usize,
    pub tau_nms: f64,
    pub tau_merge: f64,
    pub tau_recover: f64,
    pub seed: u64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            n_prompts: 64,
            tau_nms: 0.5,
            tau_merge: 0.5,
            tau_recover: 0.7,
            seed: 0,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        if self.n_prompts == 0 {
            return Err(Error::InvalidParameter("n_prompts must be at least 1".into()));
        }
        unit("tau_nms", self.tau_nms)?;
        unit("tau_merge", self.tau_merge)?;
        unit("tau_recover", self.tau_recover)
    }
}

/// Counters describing one segmentation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SegmentationStats {
    pub n_prompts: usize,
    pub nms_clusters: usize,
    pub after_filter: usize,
    pub after_merge: usize,
    pub recovered: usize,
    pub unassigned_before_recovery: usize,
    pub unassigned_after_recovery: usize,
}

/// Output of [`segment_auto`].
#[derive(Debug, Clone)]
pub struct Segmentation {
    /// Final labels with residual unassigned points attached to their
    /// nearest labeled neighbor.
    pub labels: SegmentLabels,
    /// Labels straight from cluster rasterization, 0 where uncovered.
    pub raw_labels: SegmentLabels,
    /// Candidate masks after best-of-three selection, sorted by score.
    pub candidates: Vec<MaskCandidate>,
    pub clusters: Vec<Vec<usize>>,
    pub stats: SegmentationStats,
}

impl Segmentation {
    pub fn part_indices(&self) -> Vec<Vec<usize>> {
        self.labels.part_indices()
    }

    /// The sub-clouds of each part, in part order.
    pub fn split(&self, cloud: &PointCloud) -> Vec<PointCloud> {
        split_cloud(cloud, &self.labels)
    }
}

/// Sub-clouds per part (entry `i` is part `i + 1`).
pub fn split_cloud(cloud: &PointCloud, labels: &SegmentLabels) -> Vec<PointCloud> {
    labels
        .part_indices()
        .iter()
        .map(|idx| cloud.select(idx))
        .collect()
}

/// Runs the full automatic segmentation.
pub fn segment_auto(
    cloud: &PointCloud,
    backend: &dyn SegmenterBackend,
    params: &SegmentationParams,
) -> Result<Segmentation> {
    params.validate()?;
    cloud.require_normals()?;
    let (normalized, _) = normalize_geometry(cloud)?;
    let n = normalized.len();
    let prompts = farthest_point_sample(normalized.positions(), params.n_prompts.min(n), params.seed)?;

    let mut candidates = prompts
        .par_iter()
        .map(|&p| best_candidate(&normalized, backend, p))
        .collect::<Result<Vec<_>>>()?;
    // Stable: equal scores keep prompt order.
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut stats = SegmentationStats {
        n_prompts: prompts.len(),
        ..Default::default()
    };
    let clusters = nms_cluster(&candidates, params.tau_nms);
    stats.nms_clusters = clusters.len();
    let clusters = filter_small_clusters(clusters);
    stats.after_filter = clusters.len();
    let clusters = merge_by_obb_iou(clusters, &candidates, &normalized, params.tau_merge, params.seed);
    stats.after_merge = clusters.len();
    stats.unassigned_before_recovery = count(&unassigned_mask(&clusters, &candidates, n));
    let clusters = recover_unassigned(clusters, &candidates, params.tau_recover);
    stats.recovered = clusters.len() - stats.after_merge;
    stats.unassigned_after_recovery = count(&unassigned_mask(&clusters, &candidates, n));

    let raw_labels = assign_labels(&clusters, &candidates, n);
    if raw_labels.n_parts() == 0 {
        return Err(Error::EmptySegmentation);
    }
    let labels = fill_unassigned(&normalized, &raw_labels);
    Ok(Segmentation {
        labels,
        raw_labels,
        candidates,
        clusters,
        stats,
    })
}

/// Single segment covering the whole cloud; the fallback when automatic
/// segmentation yields nothing.
pub fn single_segment(n: usize) -> SegmentLabels {
    SegmentLabels {
        n_parts: u32::from(n > 0),
        labels: vec![1; n],
    }
}

fn best_candidate(cloud: &PointCloud, backend: &dyn SegmenterBackend, prompt: usize) -> Result<MaskCandidate> {
    let fail = |msg: String| Error::backend(format!("prompt {prompt}"), msg);
    let masks = backend
        .segment_prompt(cloud, prompt)
        .map_err(|e| match e {
            Error::BackendFailure { message, .. } => fail(message),
            other => fail(other.to_string()),
        })?;
    if masks.len() != 3 {
        return Err(fail(format!("expected 3 masks, got {}", masks.len())));
    }
    for m in &masks {
        if m.mask.len() != cloud.len() {
            return Err(fail(format!(
                "mask of length {} for {} points",
                m.mask.len(),
                cloud.len()
            )));
        }
        if !(0.0..=1.0).contains(&m.score) {
            return Err(fail(format!("score {} outside [0, 1]", m.score)));
        }
    }
    // First maximum wins ties.
    let best = masks
        .into_iter()
        .reduce(|best, m| if m.score > best.score { m } else { best })
        .expect("three masks");
    Ok(MaskCandidate {
        prompt_index: prompt,
        ..best
    })
}

/// Gives every 0-labeled point the label of its nearest labeled point.
fn fill_unassigned(cloud: &PointCloud, labels: &SegmentLabels) -> SegmentLabels {
    let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels.labels[i] != 0).collect();
    if labeled.len() == labels.len() || labeled.is_empty() {
        return labels.clone();
    }
    let pts: Vec<_> = labeled.iter().map(|&i| cloud.positions()[i]).collect();
    let index = NeighborIndex::build(&pts);
    let filled = labels
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l != 0 {
                l
            } else {
                let (j, _) = index.nearest(&cloud.positions()[i]).expect("nonempty");
                labels.labels[labeled[j]]
            }
        })
        .collect();
    SegmentLabels {
        n_parts: labels.n_parts,
        labels: filled,
    }
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&m| m).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_json_shape() {
        let labels = SegmentLabels::new(vec![0, 1, 2, 2], 2).unwrap();
        let json = serde_json::to_string(&labels).unwrap();
        assert_eq!(json, r#"{"n_parts":2,"labels":[0,1,2,2]}"#);
        let back: SegmentLabels = serde_json::from_str(&json).unwrap();
        assert_eq!(back, labels);
        assert!(serde_json::from_str::<SegmentLabels>(r#"{"n_parts":1,"labels":[2]}"#).is_err());
    }

    #[test]
    fn compact_renumbers() {
        let l = SegmentLabels::compact(vec![0, 7, 3, 7, 0, 9]);
        assert_eq!(l.labels(), &[0, 2, 1, 2, 0, 3]);
        assert_eq!(l.n_parts(), 3);
        assert_eq!(l.part_indices(), vec![vec![2], vec![1, 3], vec![5]]);
    }

    #[test]
    fn params_validation() {
        assert!(SegmentationParams::default().validate().is_ok());
        let bad = SegmentationParams {
            tau_nms: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
