//! The parallel generation pipeline: split a labeled cloud into parts,
//! normalize each part, dispatch batches of jobs to a generator backend,
//! put every generated mesh back in place and assemble the result.

mod mock;
pub mod wire;

pub use mock::{Jitter, MatchMode, MockOracleBackend};

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_geometry, AffineTransform, PointCloud, Transformable, TriMesh};
use crate::retrieval::{prepare_part, refine_part, IcpParams, RegistrationTarget, Retrieval};
use crate::segmentation::{segment_auto, SegmentLabels, SegmentationParams, SegmenterBackend};

#[derive(Debug, Clone)]
pub struct GenerationJob {
    pub part_id: u32,
    /// The normalized segment.
    pub prompt_cloud: PointCloud,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub part_id: u32,
    /// A mesh in the normalized frame of its prompt.
    pub mesh: TriMesh,
    pub backend_latency: Duration,
}

/// A mesh generator behind the part-wise pipeline.
///
/// Calls for different jobs may run concurrently.
pub trait GeneratorBackend: Send + Sync {
    fn generate(&self, job: &GenerationJob) -> Result<GenerationResult>;
}

impl<T: GeneratorBackend + ?Sized> GeneratorBackend for Arc<T> {
    fn generate(&self, job: &GenerationJob) -> Result<GenerationResult> {
        (**self).generate(job)
    }
}

impl<T: GeneratorBackend + ?Sized> GeneratorBackend for &T {
    fn generate(&self, job: &GenerationJob) -> Result<GenerationResult> {
        (**self).generate(job)
    }
}

/// Per-part seed derived from the root seed.
pub fn part_seed(root_seed: u64, part_id: u32) -> u64 {
    root_seed ^ u64::from(part_id)
}

/// Splits jobs, sorted by part id, into consecutive batches of at most
/// `batch_size`.
pub fn plan_batches(mut jobs: Vec<GenerationJob>, batch_size: usize) -> Result<Vec<Vec<GenerationJob>>> {
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
    }
    jobs.sort_by_key(|j| j.part_id);
    let mut batches = Vec::with_capacity(jobs.len().div_ceil(batch_size));
    let mut rest = jobs.into_iter().peekable();
    while rest.peek().is_some() {
        batches.push(rest.by_ref().take(batch_size).collect());
    }
    Ok(batches)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub batch_size: usize,
    pub icp: IcpParams,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            batch_size: 8,
            icp: IcpParams::default(),
            seed: 0,
        }
    }
}

/// Wall time per pipeline stage, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub segmentation: f64,
    /// Splitting, normalization and target indexing.
    pub preparation: f64,
    pub generation: f64,
    pub coarse_alignment: f64,
    pub icp_refinement: f64,
    pub assembly: f64,
}

impl StageTimes {
    pub fn sum(&self) -> f64 {
        self.segmentation
            + self.preparation
            + self.generation
            + self.coarse_alignment
            + self.icp_refinement
            + self.assembly
    }

    /// The four stages of the ablation table, with their row labels.
    pub fn table_rows(&self) -> [(&'static str, f64); 4] {
        [
            ("PC Seg.", self.segmentation),
            ("Mesh Gen.", self.generation),
            ("Coarse Align.", self.coarse_alignment),
            ("ICP Refine.", self.icp_refinement),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PartStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartRecord {
    pub part_id: u32,
    pub points: usize,
    #[serde(flatten)]
    pub status: PartStatus,
    pub backend_latency: Option<f64>,
    pub rmse: Option<f64>,
    pub icp_iterations: Option<usize>,
    pub converged: Option<bool>,
    pub refinement_rounds: Option<usize>,
    pub final_transform: Option<AffineTransform>,
    pub vertices: usize,
    pub faces: usize,
}

impl PartRecord {
    fn new(part_id: u32, points: usize) -> Self {
        Self {
            part_id,
            points,
            status: PartStatus::Ok,
            backend_latency: None,
            rmse: None,
            icp_iterations: None,
            converged: None,
            refinement_rounds: None,
            final_transform: None,
            vertices: 0,
            faces: 0,
        }
    }

    fn fail(&mut self, reason: impl ToString) {
        self.status = PartStatus::Failed {
            reason: reason.to_string(),
        };
    }

    pub fn is_ok(&self) -> bool {
        self.status == PartStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub batch_size: usize,
    pub batches: usize,
    pub stages: StageTimes,
    /// Measured end-to-end wall time in seconds.
    pub total_time: f64,
    pub parts_submitted: usize,
    pub parts_succeeded: usize,
    pub parts_failed: usize,
    pub total_vertices: usize,
    pub total_faces: usize,
    pub parts: Vec<PartRecord>,
}

impl PipelineReport {
    pub fn failed_parts(&self) -> Vec<u32> {
        self.parts.iter().filter(|p| !p.is_ok()).map(|p| p.part_id).collect()
    }
}

struct PartState {
    record: PartRecord,
    job: Option<GenerationJob>,
    target: Option<RegistrationTarget>,
    mesh: Option<TriMesh>,
    retrieval: Option<Retrieval>,
}

/// Generates and assembles one mesh per labeled part.
///
/// Every part is normalized into its own unit frame, generated there, and
/// put back with the transform retrieved against the original segment.
/// A part whose generation or retrieval fails is left out of the mesh and
/// marked in the report; an unreachable backend aborts the run.
pub fn generate_parallel(
    cloud: &PointCloud,
    labels: &SegmentLabels,
    backend: &dyn GeneratorBackend,
    params: &PipelineParams,
) -> Result<(TriMesh, PipelineReport)> {
    generate_inner(cloud, labels, backend, params, Instant::now(), 0.0)
}

/// Automatic segmentation followed by [`generate_parallel`].
pub fn run_pipeline(
    cloud: &PointCloud,
    segmenter: &dyn SegmenterBackend,
    segmentation: &SegmentationParams,
    generator: &dyn GeneratorBackend,
    params: &PipelineParams,
) -> Result<(TriMesh, PipelineReport)> {
    let started = Instant::now();
    let seg = segment_auto(cloud, segmenter, segmentation)?;
    let seg_time = started.elapsed().as_secs_f64();
    generate_inner(cloud, &seg.labels, generator, params, started, seg_time)
}

fn generate_inner(
    cloud: &PointCloud,
    labels: &SegmentLabels,
    backend: &dyn GeneratorBackend,
    params: &PipelineParams,
    started: Instant,
    segmentation: f64,
) -> Result<(TriMesh, PipelineReport)> {
    params.icp.validate()?;
    if params.batch_size == 0 {
        return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
    }
    if labels.len() != cloud.len() {
        return Err(Error::InvalidParameter(format!(
            "{} labels for {} points",
            labels.len(),
            cloud.len()
        )));
    }
    cloud.require_normals()?;
    let mut stages = StageTimes {
        segmentation,
        ..Default::default()
    };

    let t = Instant::now();
    let mut states: Vec<PartState> = labels
        .part_indices()
        .into_par_iter()
        .enumerate()
        .filter(|(_, idx)| !idx.is_empty())
        .map(|(k, idx)| prepare_state(cloud, k as u32 + 1, &idx, params.seed))
        .collect();
    stages.preparation = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let jobs: Vec<GenerationJob> = states.iter().filter_map(|s| s.job.clone()).collect();
    let batches = plan_batches(jobs, params.batch_size)?;
    let n_batches = batches.len();
    for batch in batches {
        let outcomes: Vec<(u32, Result<GenerationResult>)> = thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|job| (job.part_id, scope.spawn(move || backend.generate(job))))
                .collect();
            handles
                .into_iter()
                .map(|(id, h)| {
                    let r = h.join().unwrap_or_else(|_| {
                        Err(Error::backend(format!("part {id}"), "generator panicked"))
                    });
                    (id, r)
                })
                .collect()
        });
        for (id, outcome) in outcomes {
            let state = states.iter_mut().find(|s| s.record.part_id == id).expect("submitted part");
            match outcome {
                Ok(result) if result.part_id != id => {
                    state.record.fail(format!("backend answered for part {}", result.part_id))
                }
                Ok(result) => {
                    state.record.backend_latency = Some(result.backend_latency.as_secs_f64());
                    state.mesh = Some(result.mesh);
                }
                Err(e @ Error::BackendUnreachable { .. }) => return Err(e),
                Err(e) => state.record.fail(e),
            }
        }
    }
    stages.generation = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let prepared: Vec<Option<Result<_>>> = states
        .par_iter()
        .map(|s| {
            let (mesh, target, job) = (s.mesh.as_ref()?, s.target.as_ref()?, s.job.as_ref()?);
            Some(prepare_part(mesh, target, &params.icp, job.seed))
        })
        .collect();
    stages.coarse_alignment = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let refined: Vec<Option<Result<Retrieval>>> = states
        .par_iter()
        .zip(prepared)
        .map(|(s, p)| {
            let target = s.target.as_ref()?;
            Some(p?.and_then(|p| refine_part(&p, target, &params.icp)))
        })
        .collect();
    stages.icp_refinement = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut assembled = TriMesh::new(Vec::new(), Vec::new())?;
    for (state, outcome) in states.iter_mut().zip(refined) {
        match outcome {
            Some(Ok(r)) => state.retrieval = Some(r),
            Some(Err(e)) => state.record.fail(e),
            None => {}
        }
        let (Some(mesh), Some(r)) = (&state.mesh, &state.retrieval) else {
            continue;
        };
        let placed = mesh.transformed(&r.final_transform)?;
        let rec = &mut state.record;
        rec.rmse = Some(r.icp.rmse);
        rec.icp_iterations = Some(r.icp.iterations_used);
        rec.converged = Some(r.icp.converged);
        rec.refinement_rounds = Some(r.rounds);
        rec.final_transform = Some(r.final_transform);
        rec.vertices = placed.vertices().len();
        rec.faces = placed.faces().len();
        assembled.append(&placed);
    }
    let parts: Vec<PartRecord> = states.into_iter().map(|s| s.record).collect();
    let succeeded = parts.iter().filter(|p| p.is_ok()).count();
    stages.assembly = t.elapsed().as_secs_f64();
    if succeeded == 0 {
        return Err(Error::PipelineEmpty);
    }
    let report = PipelineReport {
        batch_size: params.batch_size,
        batches: n_batches,
        stages,
        total_time: started.elapsed().as_secs_f64(),
        parts_submitted: parts.len(),
        parts_succeeded: succeeded,
        parts_failed: parts.len() - succeeded,
        total_vertices: assembled.vertices().len(),
        total_faces: assembled.faces().len(),
        parts,
    };
    Ok((assembled, report))
}

fn prepare_state(cloud: &PointCloud, part_id: u32, idx: &[usize], root_seed: u64) -> PartState {
    let segment = cloud.select(idx);
    let mut record = PartRecord::new(part_id, segment.len());
    let prepared = normalize_geometry(&segment).and_then(|(normalized, _)| {
        Ok((normalized, RegistrationTarget::new(segment)?))
    });
    match prepared {
        Ok((prompt_cloud, target)) => PartState {
            record,
            job: Some(GenerationJob {
                part_id,
                prompt_cloud,
                seed: part_seed(root_seed, part_id),
            }),
            target: Some(target),
            mesh: None,
            retrieval: None,
        },
        Err(e) => {
            record.fail(e);
            PartState {
                record,
                job: None,
                target: None,
                mesh: None,
                retrieval: None,
            }
        }
    }
}
