use std::collections::{BTreeMap, BTreeSet};
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GenerationJob, GenerationResult, GeneratorBackend};
use crate::error::{Error, Result};
use crate::geometry::{
    normalize_geometry, AffineTransform, PointCloud, Transformable, TriMesh, TriangleIndex, Vector,
};
use crate::synth::random_rotation;

/// How the oracle picks the library part for a job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// The library entry keyed by the job's part id.
    #[default]
    ById,
    /// The library part whose normalized surface lies closest to the
    /// normalized prompt, for prompts whose ids carry no meaning.
    ByShape,
}

/// Seeded perturbation of returned meshes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Jitter {
    pub max_rotation_deg: f64,
    pub noise_sigma: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            max_rotation_deg: 5.0,
            noise_sigma: 0.001,
        }
    }
}

struct LibraryPart {
    normalized: TriMesh,
    index: TriangleIndex,
}

/// A deterministic stand-in generator returning normalized ground-truth parts.
pub struct MockOracleBackend {
    library: BTreeMap<u32, LibraryPart>,
    mode: MatchMode,
    jitter: Option<Jitter>,
    failing: BTreeSet<u32>,
    latency: Duration,
}

impl MockOracleBackend {
    pub fn new(parts: impl IntoIterator<Item = (u32, TriMesh)>) -> Result<Self> {
        let library = parts
            .into_iter()
            .map(|(id, mesh)| {
                let (normalized, _) = normalize_geometry(&mesh)?;
                let index = TriangleIndex::build(&normalized);
                Ok((id, LibraryPart { normalized, index }))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            library,
            mode: MatchMode::ById,
            jitter: None,
            failing: BTreeSet::new(),
            latency: Duration::ZERO,
        })
    }

    /// Library keyed `1..=n` in the given order.
    pub fn from_parts<'a>(parts: impl IntoIterator<Item = &'a TriMesh>) -> Result<Self> {
        Self::new(parts.into_iter().enumerate().map(|(i, m)| (i as u32 + 1, m.clone())))
    }

    pub fn with_mode(mut self, mode: MatchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_jitter(mut self, jitter: Option<Jitter>) -> Self {
        self.jitter = jitter;
        self
    }

    /// Jobs for these part ids fail with a backend error.
    pub fn with_failures(mut self, part_ids: impl IntoIterator<Item = u32>) -> Self {
        self.failing = part_ids.into_iter().collect();
        self
    }

    /// Fixed delay added to every request.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn len(&self) -> usize {
        self.library.len()
    }

    pub fn is_empty(&self) -> bool {
        self.library.is_empty()
    }

    fn pick(&self, job: &GenerationJob) -> Result<&LibraryPart> {
        match self.mode {
            MatchMode::ById => self.library.get(&job.part_id).ok_or(Error::UnknownPart(job.part_id)),
            MatchMode::ByShape => {
                let probe = probe_points(&job.prompt_cloud);
                self.library
                    .values()
                    .map(|part| {
                        let d = probe.iter().map(|&i| part.index.distance(&job.prompt_cloud.positions()[i])).sum::<f64>();
                        (d, part)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(_, part)| part)
                    .ok_or(Error::UnknownPart(job.part_id))
            }
        }
    }

    fn perturb(&self, mesh: &TriMesh, jitter: &Jitter, seed: u64) -> Result<TriMesh> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rotation = random_rotation(&mut rng, jitter.max_rotation_deg.to_radians());
        let rotated = mesh.transformed(&AffineTransform::rotation(&rotation))?;
        if jitter.noise_sigma <= 0.0 {
            return Ok(rotated);
        }
        let noise = Normal::new(0.0, jitter.noise_sigma)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let vertices = rotated
            .vertices()
            .iter()
            .map(|v| v + Vector::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        TriMesh::new(vertices, rotated.faces().to_vec())
    }
}

/// At most 512 evenly strided prompt indices.
fn probe_points(cloud: &PointCloud) -> Vec<usize> {
    let step = cloud.len().div_ceil(512).max(1);
    (0..cloud.len()).step_by(step).collect()
}

impl GeneratorBackend for MockOracleBackend {
    fn generate(&self, job: &GenerationJob) -> Result<GenerationResult> {
        let started = Instant::now();
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        if self.failing.contains(&job.part_id) {
            return Err(Error::backend(format!("part {}", job.part_id), "injected failure"));
        }
        let part = self.pick(job)?;
        let mesh = match &self.jitter {
            Some(j) => self.perturb(&part.normalized, j, job.seed)?,
            None => part.normalized.clone(),
        };
        Ok(GenerationResult {
            part_id: job.part_id,
            mesh,
            backend_latency: started.elapsed(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_surface;
    use crate::synth;

    fn library() -> Vec<TriMesh> {
        vec![
            synth::translated(&synth::cuboid(Vector::new(2.0, 1.0, 0.5)), Vector::new(3.0, 0.0, 0.0)),
            synth::uv_sphere(0.7, 24, 12),
            synth::torus(0.5, 0.1, 24, 12),
        ]
    }

    fn job_for(mesh: &TriMesh, part_id: u32, seed: u64) -> GenerationJob {
        let cloud = sample_surface(mesh, 2000, seed).unwrap();
        GenerationJob {
            part_id,
            prompt_cloud: normalize_geometry(&cloud).unwrap().0,
            seed,
        }
    }

    #[test]
    fn returns_normalized_parts() {
        let lib = library();
        let oracle = MockOracleBackend::from_parts(&lib).unwrap();
        for id in 1..=3 {
            let r = oracle.generate(&job_for(&lib[id as usize - 1], id, 0)).unwrap();
            assert!((r.mesh.aabb().unwrap().longest_side() - 1.0).abs() < 1e-6);
            assert_eq!(r.part_id, id);
        }
        assert!(matches!(oracle.generate(&job_for(&lib[0], 9, 0)), Err(Error::UnknownPart(9))));
    }

    #[test]
    fn jitter_is_deterministic_and_bounded() {
        let lib = library();
        let oracle = MockOracleBackend::from_parts(&lib).unwrap().with_jitter(Some(Jitter::default()));
        let job = job_for(&lib[0], 1, 5);
        let (a, b) = (oracle.generate(&job).unwrap(), oracle.generate(&job).unwrap());
        assert_eq!(a.mesh, b.mesh);
        let plain = MockOracleBackend::from_parts(&lib).unwrap().generate(&job).unwrap();
        assert_ne!(a.mesh, plain.mesh);
        let moved = a
            .mesh
            .vertices()
            .iter()
            .zip(plain.mesh.vertices())
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        // 5° about the center moves a unit-box vertex by at most 0.866·2·sin(2.5°), plus noise.
        assert!(moved > 0.0 && moved < 0.08, "{moved}");
    }

    #[test]
    fn shape_matching_ignores_ids() {
        let lib = library();
        let oracle = MockOracleBackend::from_parts(&lib).unwrap().with_mode(MatchMode::ByShape);
        for (k, mesh) in lib.iter().enumerate() {
            let r = oracle.generate(&job_for(mesh, 40 + k as u32, 1)).unwrap();
            let expected = normalize_geometry(mesh).unwrap().0;
            assert_eq!(r.mesh, expected);
            assert_eq!(r.part_id, 40 + k as u32);
        }
    }

    #[test]
    fn injected_failures_and_latency() {
        let lib = library();
        let oracle = MockOracleBackend::from_parts(&lib)
            .unwrap()
            .with_failures([2])
            .with_latency(Duration::from_millis(20));
        assert!(matches!(oracle.generate(&job_for(&lib[1], 2, 0)), Err(Error::BackendFailure { .. })));
        let r = oracle.generate(&job_for(&lib[0], 1, 0)).unwrap();
        assert!(r.backend_latency >= Duration::from_millis(20));
    }
}
