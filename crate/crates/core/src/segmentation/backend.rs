use std::collections::{HashMap, VecDeque};
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use super::MaskCandidate;
use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, PointCloud};

/// A promptable point-cloud segmenter: given a prompt point, returns three
/// candidate masks with predicted-quality scores in `[0, 1]`.
pub trait SegmenterBackend: Send + Sync {
    fn segment_prompt(&self, cloud: &PointCloud, prompt_index: usize) -> Result<Vec<MaskCandidate>>;
}

impl<T: SegmenterBackend + ?Sized> SegmenterBackend for Arc<T> {
    fn segment_prompt(&self, cloud: &PointCloud, prompt_index: usize) -> Result<Vec<MaskCandidate>> {
        (**self).segment_prompt(cloud, prompt_index)
    }
}

/// Deterministic region-growing segmenter used when no neural backend is
/// configured.
///
/// Grows from the prompt over the k-nearest-neighbor graph at three scales,
/// crossing an edge only when the two normals differ by less than
/// `max_angle_deg` and the edge is shorter than `radius_factor` times the
/// mean k-th-neighbor distance. The score is the mean `|n_i · n_j|` over
/// the edges the region grew through.
#[derive(Debug)]
pub struct GeometricSegmenter {
    pub scales: [usize; 3],
    pub max_angle_deg: f64,
    pub radius_factor: f64,
    cache: Mutex<HashMap<u64, Arc<Graph>>>,
}

#[derive(Debug)]
struct Graph {
    /// Neighbors of each point at the largest scale, nearest first, self excluded.
    neighbors: Vec<Vec<(usize, f64)>>,
    radius: [f64; 3],
}

impl Default for GeometricSegmenter {
    fn default() -> Self {
        Self::new([8, 16, 32], 35.0, 2.0)
    }
}

impl Clone for GeometricSegmenter {
    fn clone(&self) -> Self {
        Self::new(self.scales, self.max_angle_deg, self.radius_factor)
    }
}

impl GeometricSegmenter {
    pub fn new(scales: [usize; 3], max_angle_deg: f64, radius_factor: f64) -> Self {
        Self {
            scales,
            max_angle_deg,
            radius_factor,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn graph(&self, cloud: &PointCloud) -> Arc<Graph> {
        let key = fingerprint(cloud);
        // Held across the build so concurrent prompts on one cloud share it.
        let mut cache = self.cache.lock().expect("cache lock");
        if let Some(g) = cache.get(&key) {
            return g.clone();
        }
        let index = NeighborIndex::build(cloud.positions());
        let kmax = *self.scales.iter().max().unwrap_or(&1);
        let neighbors: Vec<Vec<(usize, f64)>> = cloud
            .positions()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                index
                    .knn(p, kmax + 1)
                    .into_iter()
                    .filter(|&(j, _)| j != i)
                    .take(kmax)
                    .map(|(j, d2)| (j, d2.sqrt()))
                    .collect()
            })
            .collect();
        let mut radius = [0.0; 3];
        for (slot, &k) in radius.iter_mut().zip(&self.scales) {
            let (sum, count) = neighbors
                .iter()
                .filter_map(|nb| nb.get(k.saturating_sub(1)).or(nb.last()))
                .fold((0.0, 0usize), |(s, c), &(_, d)| (s + d, c + 1));
            *slot = if count == 0 {
                0.0
            } else {
                self.radius_factor * sum / count as f64
            };
        }
        let graph = Arc::new(Graph { neighbors, radius });
        if cache.len() > 8 {
            cache.clear();
        }
        cache.insert(key, graph.clone());
        graph
    }

    fn grow(&self, cloud: &PointCloud, graph: &Graph, scale: usize, seed: usize) -> (Vec<bool>, f64) {
        let normals = cloud.normals().expect("checked by caller");
        let k = self.scales[scale];
        let radius = graph.radius[scale];
        let cos_limit = self.max_angle_deg.to_radians().cos();
        let mut mask = vec![false; cloud.len()];
        mask[seed] = true;
        let mut queue = VecDeque::from([seed]);
        let (mut coherence, mut edges) = (0.0, 0usize);
        while let Some(i) = queue.pop_front() {
            for &(j, d) in graph.neighbors[i].iter().take(k) {
                if d > radius {
                    break;
                }
                let c = normals[i].dot(&normals[j]).abs();
                if c < cos_limit {
                    continue;
                }
                if !mask[j] {
                    mask[j] = true;
                    queue.push_back(j);
                }
                coherence += c;
                edges += 1;
            }
        }
        let score = if edges == 0 { 0.0 } else { coherence / edges as f64 };
        (mask, score.clamp(0.0, 1.0))
    }
}

impl SegmenterBackend for GeometricSegmenter {
    fn segment_prompt(&self, cloud: &PointCloud, prompt_index: usize) -> Result<Vec<MaskCandidate>> {
        cloud.require_normals()?;
        if prompt_index >= cloud.len() {
            return Err(Error::InvalidParameter(format!(
                "prompt {prompt_index} outside a cloud of {} points",
                cloud.len()
            )));
        }
        let graph = self.graph(cloud);
        Ok((0..3)
            .map(|s| {
                let (mask, score) = self.grow(cloud, &graph, s, prompt_index);
                MaskCandidate {
                    mask,
                    score,
                    prompt_index,
                }
            })
            .collect())
    }
}

fn fingerprint(cloud: &PointCloud) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    cloud.len().hash(&mut h);
    for p in cloud.positions() {
        for c in p.iter() {
            c.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_surface, Point, Vector};
    use crate::synth;

    fn plane(z: f64, n: usize) -> (Vec<Point>, Vec<Vector>) {
        let side = (n as f64).sqrt() as usize;
        let mut p = Vec::new();
        for i in 0..side {
            for j in 0..side {
                p.push(Point::new(i as f64 * 0.02, j as f64 * 0.02, z));
            }
        }
        let nn = vec![Vector::z(); p.len()];
        (p, nn)
    }

    #[test]
    fn flat_plane_is_one_region_at_every_scale() {
        let (p, n) = plane(0.0, 900);
        let cloud = PointCloud::new(p, Some(n)).unwrap();
        let masks = GeometricSegmenter::default().segment_prompt(&cloud, 17).unwrap();
        assert_eq!(masks.len(), 3);
        for m in masks {
            assert!(m.mask.iter().all(|&b| b));
            assert_eq!(m.score, 1.0);
        }
    }

    #[test]
    fn parallel_planes_stay_apart() {
        let (mut p, mut n) = plane(0.0, 900);
        let (p2, n2) = plane(1.0, 900);
        p.extend(p2);
        n.extend(n2);
        let cloud = PointCloud::new(p, Some(n)).unwrap();
        let masks = GeometricSegmenter::default().segment_prompt(&cloud, 5).unwrap();
        for m in masks {
            assert!(m.mask[..900].iter().all(|&b| b));
            assert!(m.mask[900..].iter().all(|&b| !b));
        }
    }

    #[test]
    fn cube_prompt_stays_on_face() {
        let mesh = synth::cuboid(Vector::new(1.0, 1.0, 1.0));
        let cloud = sample_surface(&mesh, 6000, 1).unwrap();
        let normals = cloud.normals().unwrap();
        let prompt = (0..cloud.len())
            .find(|&i| normals[i].z > 0.99 && cloud.positions()[i].x.abs() < 0.2 && cloud.positions()[i].y.abs() < 0.2)
            .unwrap();
        let masks = GeometricSegmenter::default().segment_prompt(&cloud, prompt).unwrap();
        let fine = &masks[0];
        let on_top = |i: usize| normals[i].z > 0.99;
        assert!(fine.mask.iter().enumerate().all(|(i, &m)| !m || on_top(i)));
        let top_count = (0..cloud.len()).filter(|&i| on_top(i)).count();
        let covered = fine.mask.iter().filter(|&&m| m).count();
        assert!(covered as f64 > 0.95 * top_count as f64);
        assert!(masks.iter().all(|m| fine.score >= m.score));
    }

    #[test]
    fn requires_normals() {
        let cloud = PointCloud::from_positions(vec![Point::origin(); 3]).unwrap();
        assert!(matches!(
            GeometricSegmenter::default().segment_prompt(&cloud, 0),
            Err(Error::NoNormals)
        ));
    }
}
