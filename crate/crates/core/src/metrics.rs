//! Geometric fidelity metrics between a predicted and a reference shape.
//!
//! All point-set metrics share one nearest-neighbor pass per direction.
//! Chamfer-L1 averages the mean nearest distance of both directions,
//! Chamfer-L2 the root-mean-square one; Hausdorff takes the worst case.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    normalize_geometry, sample_surface, NeighborIndex, Point, PointCloud, TriMesh, TriangleIndex,
};

/// Per-point nearest neighbor in the other set: `(index, distance)`.
#[derive(Debug, Clone)]
pub struct NearestPairs {
    pub a_to_b: Vec<(usize, f64)>,
    pub b_to_a: Vec<(usize, f64)>,
}

impl NearestPairs {
    pub fn compute(a: &PointCloud, b: &PointCloud) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptyGeometry("metric input cloud"));
        }
        Ok(Self {
            a_to_b: nearest_all(a.positions(), &NeighborIndex::build(b.positions())),
            b_to_a: nearest_all(b.positions(), &NeighborIndex::build(a.positions())),
        })
    }
}

fn nearest_all(points: &[Point], index: &NeighborIndex) -> Vec<(usize, f64)> {
    points
        .par_iter()
        .map(|p| {
            let (j, d2) = index.nearest(p).expect("nonempty index");
            (j, d2.sqrt())
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn dir_mean(d: &[(usize, f64)]) -> f64 {
    mean(d.iter().map(|e| e.1))
}

fn dir_rms(d: &[(usize, f64)]) -> f64 {
    mean(d.iter().map(|e| e.1 * e.1)).sqrt()
}

fn dir_max(d: &[(usize, f64)]) -> f64 {
    d.iter().map(|e| e.1).fold(0.0, f64::max)
}

/// `(cd_l1, cd_l2)`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<(f64, f64)> {
    Ok(chamfer_from(&NearestPairs::compute(a, b)?))
}

fn chamfer_from(nn: &NearestPairs) -> (f64, f64) {
    (
        0.5 * (dir_mean(&nn.a_to_b) + dir_mean(&nn.b_to_a)),
        0.5 * (dir_rms(&nn.a_to_b) + dir_rms(&nn.b_to_a)),
    )
}

pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let nn = NearestPairs::compute(a, b)?;
    Ok(dir_max(&nn.a_to_b).max(dir_max(&nn.b_to_a)))
}

/// Mean absolute normal dot product over nearest pairs, averaged over
/// both directions.
pub fn normal_consistency(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let nn = NearestPairs::compute(a, b)?;
    normal_consistency_from(a, b, &nn)
}

fn normal_consistency_from(a: &PointCloud, b: &PointCloud, nn: &NearestPairs) -> Result<f64> {
    let (na, nb) = (a.require_normals()?, b.require_normals()?);
    let ab = mean(nn.a_to_b.iter().enumerate().map(|(i, &(j, _))| na[i].dot(&nb[j]).abs()));
    let ba = mean(nn.b_to_a.iter().enumerate().map(|(i, &(j, _))| nb[i].dot(&na[j]).abs()));
    Ok((0.5 * (ab + ba)).clamp(0.0, 1.0))
}

/// Harmonic mean of precision (share of `a` within `tau` of `b`) and recall
/// (share of `b` within `tau` of `a`).
pub fn fscore(a: &PointCloud, b: &PointCloud, tau: f64) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidParameter(format!("F-score tau must be positive, got {tau}")));
    }
    Ok(fscore_from(&NearestPairs::compute(a, b)?, tau))
}

fn fscore_from(nn: &NearestPairs, tau: f64) -> f64 {
    let within = |d: &[(usize, f64)]| d.iter().filter(|e| e.1 <= tau).count() as f64 / d.len() as f64;
    let (p, r) = (within(&nn.a_to_b), within(&nn.b_to_a));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Points whose normal deviates from some of their `k` nearest neighbors'
/// normals by more than `angle_threshold_deg` (orientation ignored).
pub fn extract_edges(cloud: &PointCloud, k: usize, angle_threshold_deg: f64) -> Result<PointCloud> {
    let normals = cloud.require_normals()?;
    if k < 2 {
        return Err(Error::InvalidParameter(format!("edge neighborhood k must be at least 2, got {k}")));
    }
    let cos_limit = angle_threshold_deg.to_radians().cos();
    let index = NeighborIndex::build(cloud.positions());
    let keep: Vec<usize> = (0..cloud.len())
        .into_par_iter()
        .filter(|&i| {
            index
                .knn(&cloud.positions()[i], k + 1)
                .iter()
                .filter(|&&(j, _)| j != i)
                .take(k)
                .any(|&(j, _)| normals[i].dot(&normals[j]).abs() < cos_limit)
        })
        .collect();
    Ok(cloud.select(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsParams {
    pub sample_count: usize,
    pub tau_f1: f64,
    pub edge_k: usize,
    pub edge_angle_deg: f64,
    pub seed: u64,
    /// Normalize each mesh to the unit box before sampling.
    pub normalize: bool,
}

impl Default for MetricsParams {
    fn default() -> Self {
        Self {
            sample_count: 8192,
            tau_f1: 0.02,
            edge_k: 10,
            edge_angle_deg: 30.0,
            seed: 0,
            normalize: true,
        }
    }
}

/// Diagonal of the unit cube, the edge-Chamfer value when an edge set is empty.
pub const EMPTY_EDGE_CHAMFER: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub hd: f64,
    pub nc: f64,
    pub f1: f64,
    pub ecd: f64,
    pub ef1: f64,
    pub sample_count: usize,
    pub tau_f1: f64,
    pub edge_k: usize,
    pub edge_angle_deg: f64,
    pub pred_edge_points: usize,
    pub gt_edge_points: usize,
    /// Set when an edge set was empty and ECD/EF1 took their fallback values.
    pub edge_fallback: bool,
    pub pred_faces: usize,
    pub gt_faces: usize,
}

/// Samples both meshes and computes every metric.
///
/// Both meshes are sampled with the same seed, so identical inputs give
/// identical samples and exactly zero distances.
pub fn evaluate_all(pred: &TriMesh, gt: &TriMesh, params: &MetricsParams) -> Result<MetricsReport> {
    let (pred_n, gt_n) = if params.normalize {
        (normalize_geometry(pred)?.0, normalize_geometry(gt)?.0)
    } else {
        (pred.clone(), gt.clone())
    };
    let a = sample_surface(&pred_n, params.sample_count, params.seed)?;
    let b = sample_surface(&gt_n, params.sample_count, params.seed)?;
    let nn = NearestPairs::compute(&a, &b)?;
    let (cd_l1, cd_l2) = chamfer_from(&nn);
    let hd = dir_max(&nn.a_to_b).max(dir_max(&nn.b_to_a));
    let nc = normal_consistency_from(&a, &b, &nn)?;
    let f1 = fscore_from(&nn, params.tau_f1);

    let ea = extract_edges(&a, params.edge_k, params.edge_angle_deg)?;
    let eb = extract_edges(&b, params.edge_k, params.edge_angle_deg)?;
    let edge_fallback = ea.is_empty() || eb.is_empty();
    let (ecd, ef1) = if edge_fallback {
        (EMPTY_EDGE_CHAMFER, 0.0)
    } else {
        let enn = NearestPairs::compute(&ea, &eb)?;
        (chamfer_from(&enn).0, fscore_from(&enn, params.tau_f1))
    };
    Ok(MetricsReport {
        cd_l1,
        cd_l2,
        hd,
        nc,
        f1,
        ecd,
        ef1,
        sample_count: params.sample_count,
        tau_f1: params.tau_f1,
        edge_k: params.edge_k,
        edge_angle_deg: params.edge_angle_deg,
        pred_edge_points: ea.len(),
        gt_edge_points: eb.len(),
        edge_fallback,
        pred_faces: pred.faces().len(),
        gt_faces: gt.faces().len(),
    })
}

/// Symmetric point-to-surface Chamfer between two meshes: points sampled
/// on each mesh are measured against the exact surface of the other.
/// Returns `(l1, l2)` with the same mean/RMS convention as [`chamfer`].
pub fn surface_chamfer(a: &TriMesh, b: &TriMesh, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let one_way = |from: &TriMesh, to: &TriMesh| -> Result<(f64, f64)> {
        let pts = sample_surface(from, samples, seed)?;
        let index = TriangleIndex::build(to);
        let d: Vec<f64> = pts.positions().par_iter().map(|p| index.distance(p)).collect();
        Ok((mean(d.iter().copied()), mean(d.iter().map(|v| v * v)).sqrt()))
    };
    let (ab1, ab2) = one_way(a, b)?;
    let (ba1, ba2) = one_way(b, a)?;
    Ok((0.5 * (ab1 + ba1), 0.5 * (ab2 + ba2)))
}

pub const CSV_HEADER: &str = "object,cd_l1,cd_l2,hd,nc,f1,ecd,ef1,t";

/// One CSV row; `t` is left empty when unknown.
pub fn csv_row(name: &str, r: &MetricsReport, t: Option<f64>) -> String {
    let mut row = format!(
        "{name},{},{},{},{},{},{},{},",
        r.cd_l1, r.cd_l2, r.hd, r.nc, r.f1, r.ecd, r.ef1
    );
    if let Some(t) = t {
        let _ = write!(row, "{t}");
    }
    row
}

/// Column means over a dataset, in the order of [`CSV_HEADER`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub count: usize,
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub hd: f64,
    pub nc: f64,
    pub f1: f64,
    pub ecd: f64,
    pub ef1: f64,
    pub t: Option<f64>,
}

pub fn aggregate(rows: &[(MetricsReport, Option<f64>)]) -> Option<AggregateMetrics> {
    if rows.is_empty() {
        return None;
    }
    let m = |f: fn(&MetricsReport) -> f64| mean(rows.iter().map(|(r, _)| f(r)));
    let times: Vec<f64> = rows.iter().filter_map(|(_, t)| *t).collect();
    Some(AggregateMetrics {
        count: rows.len(),
        cd_l1: m(|r| r.cd_l1),
        cd_l2: m(|r| r.cd_l2),
        hd: m(|r| r.hd),
        nc: m(|r| r.nc),
        f1: m(|r| r.f1),
        ecd: m(|r| r.ecd),
        ef1: m(|r| r.ef1),
        t: (!times.is_empty()).then(|| mean(times.into_iter())),
    })
}
