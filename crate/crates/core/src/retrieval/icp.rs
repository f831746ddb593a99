use nalgebra::{Matrix3, Matrix6, Rotation3, Vector6, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RegistrationTarget;
use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, Point, PointCloud, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Correspondence cutoff as a fraction of the target AABB diagonal.
    pub max_correspondence_distance: f64,
    /// Stop when the relative RMSE decrease falls below this.
    pub convergence_tol: f64,
    /// Points sampled from a mesh to form the ICP source.
    pub sample_count: usize,
    /// Extra rounds that re-fit the axis-aligned scale in the frame found by
    /// ICP; 0 runs the plain coarse-then-ICP pass.
    pub refinement_rounds: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_correspondence_distance: 0.1,
            convergence_tol: 1e-6,
            sample_count: 8192,
            refinement_rounds: 3,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.sample_count == 0 {
            return Err(Error::InvalidParameter(
                "ICP iteration and sample counts must be positive".into(),
            ));
        }
        if self.max_correspondence_distance.is_nan() || self.max_correspondence_distance <= 0.0 {
            return Err(Error::InvalidParameter(
                "max_correspondence_distance must be positive".into(),
            ));
        }
        if !(self.convergence_tol > 0.0 && self.convergence_tol < 1.0) {
            return Err(Error::InvalidParameter(
                "convergence_tol must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistrationResult {
    pub transform: AffineTransform,
    pub rmse: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Point-to-plane RMSE at every accepted iterate, nonincreasing.
    pub rmse_trace: Vec<f64>,
    pub correspondences: usize,
}

/// Point-to-plane ICP from the identity.
///
/// Each iteration pairs every source point with its nearest target point
/// (dropping pairs beyond the cutoff), solves the small-angle linearization
/// of `Σ((R s + t − q)·n_q)²` as a 6×6 least-squares problem, projects the
/// rotation back onto SO(3) and composes. A step that would raise the RMSE
/// is rejected and ends the run.
pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &RegistrationTarget,
    params: &IcpParams,
) -> Result<RegistrationResult> {
    params.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyGeometry("ICP source"));
    }
    let max_d2 = (params.max_correspondence_distance * target.aabb().diagonal()).powi(2);
    let mut current = AffineTransform::identity();
    let mut previous = current;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut pairs_used = 0;

    for iteration in 0..params.max_iterations {
        let moved: Vec<Point> = source.positions().iter().map(|p| current.apply_point(p)).collect();
        let pairs = correspond(&moved, target, max_d2);
        if pairs.is_empty() {
            if trace.is_empty() {
                return Err(Error::NoCorrespondences);
            }
            current = previous;
            break;
        }
        let rmse = (pairs.iter().map(|p| p.residual * p.residual).sum::<f64>() / pairs.len() as f64).sqrt();
        if let Some(&last) = trace.last() {
            if rmse > last {
                current = previous;
                converged = true;
                break;
            }
            trace.push(rmse);
            pairs_used = pairs.len();
            if last - rmse <= params.convergence_tol * last {
                converged = true;
                break;
            }
        } else {
            trace.push(rmse);
            pairs_used = pairs.len();
            if rmse == 0.0 {
                converged = true;
                break;
            }
        }
        if iteration + 1 == params.max_iterations {
            break;
        }
        let step = solve_step_with(&moved, &pairs, target.normals());
        previous = current;
        current = orthonormalized(&(step * current));
    }

    Ok(RegistrationResult {
        transform: current,
        rmse: *trace.last().expect("at least one iterate"),
        iterations_used: trace.len(),
        converged,
        rmse_trace: trace,
        correspondences: pairs_used,
    })
}

struct Pair {
    source: usize,
    target: usize,
    residual: f64,
}

fn correspond(moved: &[Point], target: &RegistrationTarget, max_d2: f64) -> Vec<Pair> {
    let normals = target.normals();
    let positions = target.cloud().positions();
    moved
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (j, d2) = target.index().nearest(p)?;
            (d2 <= max_d2).then(|| Pair {
                source: i,
                target: j,
                residual: (p - positions[j]).dot(&normals[j]),
            })
        })
        .collect()
}

/// One Gauss-Newton step about the centroid of the matched source points.
fn solve_step_with(moved: &[Point], pairs: &[Pair], normals: &[Vector]) -> AffineTransform {
    let centroid = pairs
        .iter()
        .fold(Vector::zeros(), |acc, p| acc + moved[p.source].coords)
        / pairs.len() as f64;
    let mut ata = Matrix6::<f64>::zeros();
    let mut atb = Vector6::<f64>::zeros();
    for pair in pairs {
        let n = normals[pair.target];
        let arm = moved[pair.source].coords - centroid;
        let c = arm.cross(&n);
        let row = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
        ata += row * row.transpose();
        atb -= row * pair.residual;
    }
    let x = solve_least_squares(&ata, &atb);
    let omega = Vector::new(x[0], x[1], x[2]);
    let tau = Vector::new(x[3], x[4], x[5]);
    let linearized = Matrix3::identity() + omega.cross_matrix();
    let rotation = project_to_so3(&linearized);
    AffineTransform::translation(centroid + tau)
        * AffineTransform::from_linear_translation(rotation, Vector::zeros())
        * AffineTransform::translation(-centroid)
}

/// Minimum-norm solution; directions the data leaves unconstrained (e.g.
/// rotation about a symmetry axis) get no motion.
fn solve_least_squares(a: &Matrix6<f64>, b: &Vector6<f64>) -> Vector6<f64> {
    let svd = SVD::new(*a, true, true);
    let cutoff = svd.singular_values.max() * 1e-10;
    svd.solve(b, cutoff).unwrap_or_else(|_| Vector6::zeros())
}

/// Nearest rotation in the Frobenius sense.
pub(crate) fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut fix = Matrix3::identity();
        fix[(2, 2)] = -1.0;
        r = u * fix * v_t;
    }
    r
}

fn orthonormalized(t: &AffineTransform) -> AffineTransform {
    AffineTransform::from_linear_translation(project_to_so3(&t.linear()), t.translation_part())
}

/// Angle in radians of the rotation block of a rigid transform.
pub fn rotation_angle(t: &AffineTransform) -> f64 {
    Rotation3::from_matrix_unchecked(project_to_so3(&t.linear())).angle()
}
