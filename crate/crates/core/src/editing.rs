//! Incremental editing: register an existing mesh to an edited point
//! cloud, subtract the geometry it already explains, and generate only what
//! is left.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, AffineTransform, PointCloud, Transformable, TriMesh, TriangleIndex};
use crate::orchestration::{generate_parallel, GeneratorBackend, PipelineParams, PipelineReport};
use crate::retrieval::{icp_point_to_plane, IcpParams, RegistrationResult, RegistrationTarget};
use crate::segmentation::{segment_auto, SegmentationParams, SegmenterBackend};

/// Default subtraction threshold as a fraction of the edited cloud's
/// bounding-box diagonal.
pub const DEFAULT_RESIDUAL_FRACTION: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct EditRequest {
    pub initial_mesh: TriMesh,
    pub edited_cloud: PointCloud,
    /// Subtraction threshold in model units; `None` uses
    /// [`DEFAULT_RESIDUAL_FRACTION`] of the edited cloud's diagonal.
    pub residual_threshold: Option<f64>,
    pub icp: IcpParams,
}

impl EditRequest {
    pub fn new(initial_mesh: TriMesh, edited_cloud: PointCloud) -> Self {
        Self {
            initial_mesh,
            edited_cloud,
            residual_threshold: None,
            icp: IcpParams::default(),
        }
    }

    pub fn residual_threshold(&self) -> Result<f64> {
        let eps = match self.residual_threshold {
            Some(eps) => eps,
            None => DEFAULT_RESIDUAL_FRACTION * self.edited_cloud.aabb()?.diagonal(),
        };
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::InvalidParameter(format!("residual threshold must be positive, got {eps}")));
        }
        Ok(eps)
    }
}

/// Rigid registration of the initial mesh onto the edited cloud.
///
/// ICP starts from the identity: both inputs share a frame, and the edited
/// cloud's bounding box includes new parts, so a box match would be skewed.
/// Pairs are found from mesh samples to the cloud, so points of new parts
/// attract nothing.
pub fn align_initial(
    initial_mesh: &TriMesh,
    edited_cloud: &PointCloud,
    icp: &IcpParams,
    seed: u64,
) -> Result<RegistrationResult> {
    if initial_mesh.is_empty() || edited_cloud.is_empty() {
        return Err(Error::EmptyGeometry("edit input"));
    }
    let source = sample_surface(initial_mesh, icp.sample_count, seed)?;
    let target = RegistrationTarget::new(edited_cloud.clone())?;
    icp_point_to_plane(&source, &target, icp)
}

/// Split of the edited cloud by distance to the aligned initial surface.
#[derive(Debug, Clone)]
pub struct Residual {
    /// Points farther than the threshold from the surface.
    pub cloud: PointCloud,
    /// Their indices in the edited cloud, ascending.
    pub indices: Vec<usize>,
    /// Indices of the points explained by the surface, ascending.
    pub explained: Vec<usize>,
}

/// Keeps the edited-cloud points whose unsigned distance to the mesh
/// surface exceeds `eps_res`.
pub fn extract_residual(edited_cloud: &PointCloud, aligned_mesh: &TriMesh, eps_res: f64) -> Result<Residual> {
    if eps_res.is_nan() || eps_res <= 0.0 {
        return Err(Error::InvalidParameter(format!("residual threshold must be positive, got {eps_res}")));
    }
    let index = TriangleIndex::build(aligned_mesh);
    let far: Vec<bool> = edited_cloud
        .positions()
        .par_iter()
        .map(|p| index.distance(p) > eps_res)
        .collect();
    let (indices, explained): (Vec<usize>, Vec<usize>) = (0..far.len()).partition(|&i| far[i]);
    if indices.is_empty() {
        return Err(Error::EmptyResidual);
    }
    Ok(Residual {
        cloud: edited_cloud.select(&indices),
        indices,
        explained,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EditReport {
    pub alignment: AffineTransform,
    pub alignment_rmse: f64,
    pub alignment_iterations: usize,
    pub residual_threshold: f64,
    pub residual_points: usize,
    pub generated_parts: usize,
    /// True when nothing was left to generate.
    pub no_changes: bool,
    pub alignment_time: f64,
    pub residual_time: f64,
    pub pipeline: Option<PipelineReport>,
    pub total_time: f64,
}

/// Aligns, subtracts, segments the residual, generates the new parts and
/// appends them to the aligned initial mesh.
///
/// The aligned initial mesh comes first in the output, vertex for vertex.
/// An empty residual returns it unchanged with `no_changes` set.
pub fn edit_incremental(
    req: &EditRequest,
    segmenter: &dyn SegmenterBackend,
    segmentation: &SegmentationParams,
    generator: &dyn GeneratorBackend,
    params: &PipelineParams,
) -> Result<(TriMesh, EditReport)> {
    let started = Instant::now();
    let eps = req.residual_threshold()?;
    req.edited_cloud.require_normals()?;

    let t = Instant::now();
    let alignment = align_initial(&req.initial_mesh, &req.edited_cloud, &req.icp, params.seed)?;
    let aligned = req.initial_mesh.transformed(&alignment.transform)?;
    let alignment_time = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let residual = match extract_residual(&req.edited_cloud, &aligned, eps) {
        Ok(r) => Some(r),
        Err(Error::EmptyResidual) => None,
        Err(e) => return Err(e),
    };
    let residual_time = t.elapsed().as_secs_f64();
    let mut report = EditReport {
        alignment: alignment.transform,
        alignment_rmse: alignment.rmse,
        alignment_iterations: alignment.iterations_used,
        residual_threshold: eps,
        residual_points: residual.as_ref().map_or(0, |r| r.indices.len()),
        generated_parts: 0,
        no_changes: true,
        alignment_time,
        residual_time,
        pipeline: None,
        total_time: 0.0,
    };
    let Some(residual) = residual else {
        report.total_time = started.elapsed().as_secs_f64();
        return Ok((aligned, report));
    };

    let seg_started = Instant::now();
    let seg = segment_auto(&residual.cloud, segmenter, segmentation)?;
    let seg_time = seg_started.elapsed().as_secs_f64();
    let (new_parts, mut pipeline) = generate_parallel(&residual.cloud, &seg.labels, generator, params)?;
    pipeline.stages.segmentation = seg_time;
    pipeline.total_time += seg_time;

    let mut merged = aligned;
    merged.append(&new_parts);
    report.generated_parts = pipeline.parts_succeeded;
    report.no_changes = false;
    report.pipeline = Some(pipeline);
    report.total_time = started.elapsed().as_secs_f64();
    Ok((merged, report))
}
