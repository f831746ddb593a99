//! Puts a normalized generated part back into the frame of its source
//! segment.
//!
//! The coarse stage matches axis-aligned boxes with a translate-scale-
//! translate affine map and deliberately ignores rotation; point-to-plane
//! ICP then removes the small residual rigid misalignment. The final
//! transform is the ICP rigid motion composed after the coarse map.

mod icp;

pub use icp::{icp_point_to_plane, rotation_angle, IcpParams, RegistrationResult};

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    sample_surface, Aabb, AffineTransform, NeighborIndex, Point, PointCloud, Transformable, TriMesh,
    Vector,
};

/// A registration target: a cloud with normals and its spatial index.
#[derive(Debug, Clone)]
pub struct RegistrationTarget {
    cloud: PointCloud,
    index: NeighborIndex,
    aabb: Aabb,
}

impl RegistrationTarget {
    pub fn new(cloud: PointCloud) -> Result<Self> {
        cloud.require_normals()?;
        let aabb = cloud.aabb()?;
        let index = NeighborIndex::build(cloud.positions());
        Ok(Self { cloud, index, aabb })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub(crate) fn normals(&self) -> &[Vector] {
        self.cloud.normals().expect("checked at construction")
    }
}

/// `T(c_target) · S(s) · T(−c_mesh)` with `s` the per-axis extent ratio.
/// Axes where either extent is zero keep a scale of 1.
pub fn coarse_align(mesh_aabb: &Aabb, target_aabb: &Aabb) -> AffineTransform {
    let scale = Vector::from_fn(|i, _| {
        let (m, t) = (mesh_aabb.extents[i], target_aabb.extents[i]);
        if m > 0.0 && t > 0.0 {
            t / m
        } else {
            1.0
        }
    });
    AffineTransform::translation(target_aabb.center.coords)
        * AffineTransform::scaling(scale)
        * AffineTransform::translation(-mesh_aabb.center.coords)
}

/// Everything recovered for one part.
#[derive(Debug, Clone, Serialize)]
pub struct Retrieval {
    /// `icp.transform · restore`.
    pub final_transform: AffineTransform,
    /// Axis-aligned affine part of the final transform.
    pub restore: AffineTransform,
    /// The first coarse estimate, from the raw boxes alone.
    pub coarse: AffineTransform,
    /// Accumulated rigid refinement.
    pub icp: RegistrationResult,
    pub rounds: usize,
    #[serde(serialize_with = "secs")]
    pub coarse_time: Duration,
    #[serde(serialize_with = "secs")]
    pub icp_time: Duration,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// The coarse stage of a retrieval: sampled source and box match.
#[derive(Debug, Clone)]
pub struct PreparedPart {
    pub source: PointCloud,
    pub source_aabb: Aabb,
    pub coarse: AffineTransform,
    pub coarse_time: Duration,
}

/// Samples `sample_count` surface points of the mesh with `seed` and
/// matches the box of those samples to the target box.
///
/// The box is taken over as many samples as the target has points, so both
/// sides of the match carry the same sampling shrinkage.
pub fn prepare_part(
    part_mesh: &TriMesh,
    target: &RegistrationTarget,
    params: &IcpParams,
    seed: u64,
) -> Result<PreparedPart> {
    params.validate()?;
    let started = Instant::now();
    if part_mesh.is_empty() || part_mesh.aabb()?.longest_side() <= 0.0 {
        return Err(Error::DegenerateExtent);
    }
    let source = sample_surface(part_mesh, params.sample_count, seed)?;
    // Samples are i.i.d., so a prefix as large as the target is an equally
    // dense sample of the mesh.
    let matched = source.len().min(target.cloud().len());
    let source_aabb = Aabb::from_points(&source.positions()[..matched])?;
    let coarse = coarse_align(&source_aabb, target.aabb());
    Ok(PreparedPart {
        source,
        source_aabb,
        coarse,
        coarse_time: started.elapsed(),
    })
}

/// Recovers `T_final = T_ICP · T_restore` for a generated part.
pub fn retrieve_transform(
    part_mesh: &TriMesh,
    target: &RegistrationTarget,
    params: &IcpParams,
    seed: u64,
) -> Result<Retrieval> {
    refine_part(&prepare_part(part_mesh, target, params, seed)?, target, params)
}

/// The ICP stage of a retrieval.
///
/// After the first ICP pass, up to `refinement_rounds` further rounds
/// re-fit the box match against the target expressed in the frame ICP
/// found, then re-run ICP. This removes the scale bias a rotated part's
/// inflated bounding box puts into the first pass.
pub fn refine_part(
    prepared: &PreparedPart,
    target: &RegistrationTarget,
    params: &IcpParams,
) -> Result<Retrieval> {
    params.validate()?;
    let started = Instant::now();
    let (source, mesh_aabb, coarse) = (&prepared.source, &prepared.source_aabb, prepared.coarse);
    let mut restore = coarse;
    let mut rigid = AffineTransform::identity();
    let mut trace = Vec::new();
    let mut last = None;
    let mut rounds = 0;
    for round in 0..=params.refinement_rounds {
        if round > 0 {
            let to_mesh_frame = rigid.inverse()?;
            let local: Vec<Point> = target
                .cloud()
                .positions()
                .iter()
                .map(|p| to_mesh_frame.apply_point(p))
                .collect();
            let refit = coarse_align(mesh_aabb, &Aabb::from_points(&local)?);
            let shift = max_abs_difference(&refit, &restore);
            restore = refit;
            if shift < 1e-9 * (1.0 + target.aabb().diagonal()) {
                break;
            }
        }
        let pre_aligned = source.transformed(&(rigid * restore))?;
        let step = icp_point_to_plane(&pre_aligned, target, params)?;
        rigid = step.transform * rigid;
        trace.extend_from_slice(&step.rmse_trace);
        rounds = round + 1;
        last = Some(step);
    }
    let mut icp = last.expect("at least one round");
    icp.transform = rigid;
    icp.iterations_used = trace.len();
    icp.rmse_trace = trace;
    Ok(Retrieval {
        final_transform: rigid * restore,
        restore,
        coarse,
        icp,
        rounds,
        coarse_time: prepared.coarse_time,
        icp_time: started.elapsed(),
    })
}

fn max_abs_difference(a: &AffineTransform, b: &AffineTransform) -> f64 {
    (a.matrix() - b.matrix()).abs().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn coarse_identical_boxes() {
        let a = Aabb::from_min_max(Point::new(-1.0, 0.0, 2.0), Point::new(1.0, 3.0, 2.5));
        assert_relative_eq!(
            coarse_align(&a, &a).matrix(),
            AffineTransform::identity().matrix(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn coarse_translate_and_scale() {
        let mesh = Aabb {
            center: Point::origin(),
            extents: Vector::new(1.0, 1.0, 1.0),
        };
        let target = Aabb {
            center: Point::new(2.0, 0.0, 0.0),
            extents: Vector::new(2.0, 2.0, 2.0),
        };
        let expected = AffineTransform::translation(Vector::new(2.0, 0.0, 0.0))
            * AffineTransform::uniform_scaling(2.0);
        assert_relative_eq!(
            coarse_align(&mesh, &target).matrix(),
            expected.matrix(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn coarse_flat_axis_keeps_unit_scale() {
        let mesh = Aabb {
            center: Point::new(0.1, 0.2, 0.0),
            extents: Vector::new(1.0, 0.5, 0.0),
        };
        let target = Aabb {
            center: Point::new(3.0, 1.0, -1.0),
            extents: Vector::new(2.0, 1.5, 0.5),
        };
        let t = coarse_align(&mesh, &target);
        assert_eq!(t.matrix()[(2, 2)], 1.0);
        let mapped = Aabb::from_min_max(t.apply_point(&mesh.min()), t.apply_point(&mesh.max()));
        assert_relative_eq!(mapped.center, target.center, epsilon = 1e-12);
        assert_relative_eq!(mapped.extents.x, 2.0, epsilon = 1e-12);
        assert_relative_eq!(mapped.extents.y, 1.5, epsilon = 1e-12);
    }

    use crate::geometry::normalize_geometry;
    use crate::metrics::surface_chamfer;
    use crate::synth;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn part() -> TriMesh {
        // Unequal axes and an off-center bump break every symmetry.
        let body = synth::cuboid(Vector::new(0.8, 0.5, 0.3));
        let knob = synth::translated(&synth::uv_sphere(0.12, 16, 8), Vector::new(0.25, 0.1, 0.2));
        TriMesh::concat([&body, &knob])
    }

    fn posed_part() -> TriMesh {
        let pose = AffineTransform::translation(Vector::new(1.5, -0.4, 0.7))
            * AffineTransform::scaling(Vector::new(0.6, 0.9, 0.45));
        part().transformed(&pose).unwrap()
    }

    fn target_of(mesh: &TriMesh, seed: u64) -> RegistrationTarget {
        RegistrationTarget::new(sample_surface(mesh, 8192, seed).unwrap()).unwrap()
    }

    #[test]
    fn part_in_place_gives_identity() {
        let mesh = posed_part();
        let r = retrieve_transform(&mesh, &target_of(&mesh, 7), &IcpParams::default(), 7).unwrap();
        let err = (r.final_transform.matrix() - nalgebra::Matrix4::identity()).abs().max();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn undoes_normalization() {
        let gt = posed_part();
        let (normalized, _) = normalize_geometry(&gt).unwrap();
        let r = retrieve_transform(&normalized, &target_of(&gt, 3), &IcpParams::default(), 4).unwrap();
        let placed = normalized.transformed(&r.final_transform).unwrap();
        let (_, l2) = surface_chamfer(&placed, &gt, 8192, 5).unwrap();
        assert!(l2 <= 1e-3, "chamfer-l2 {l2}");
    }

    #[test]
    fn undoes_normalization_with_rotation() {
        let gt = posed_part();
        let (normalized, _) = normalize_geometry(&gt).unwrap();
        let tilt = AffineTransform::rotation(&Rotation3::from_euler_angles(
            3f64.to_radians(),
            -2f64.to_radians(),
            3f64.to_radians(),
        ));
        assert!((rotation_angle(&tilt).to_degrees() - 5.0).abs() < 0.5);
        let rotated = normalized.transformed(&tilt).unwrap();
        let target = target_of(&gt, 3);
        let r = retrieve_transform(&rotated, &target, &IcpParams::default(), 4).unwrap();
        let coarse_only = rotated.transformed(&r.coarse).unwrap();
        let placed = rotated.transformed(&r.final_transform).unwrap();
        let (_, coarse_l2) = surface_chamfer(&coarse_only, &gt, 8192, 5).unwrap();
        let (_, l2) = surface_chamfer(&placed, &gt, 8192, 5).unwrap();
        assert!(coarse_l2 > 2e-3, "coarse alone {coarse_l2}");
        assert!(l2 <= 2e-3, "chamfer-l2 {l2}");
    }

    #[test]
    fn final_transform_is_exact_composition() {
        let gt = posed_part();
        let (normalized, _) = normalize_geometry(&gt).unwrap();
        let r = retrieve_transform(&normalized, &target_of(&gt, 1), &IcpParams::default(), 2).unwrap();
        let product = r.icp.transform * r.restore;
        assert!((product.matrix() - r.final_transform.matrix()).abs().max() <= 1e-12);
        assert!(r.icp.rmse_trace.windows(2).all(|w| w[1] <= w[0]) || r.rounds > 1);
    }

    #[test]
    fn empty_mesh_is_degenerate() {
        let target = target_of(&posed_part(), 1);
        let empty = TriMesh::new(Vec::new(), Vec::new()).unwrap();
        assert!(matches!(
            retrieve_transform(&empty, &target, &IcpParams::default(), 0),
            Err(Error::DegenerateExtent)
        ));
    }

    #[test]
    fn target_without_normals_is_rejected() {
        let cloud = PointCloud::from_positions(vec![Point::origin()]).unwrap();
        assert!(matches!(RegistrationTarget::new(cloud), Err(Error::NoNormals)));
    }

    fn arb_box() -> impl Strategy<Value = Aabb> {
        (
            prop::array::uniform3(-5.0f64..5.0),
            prop::array::uniform3(prop_oneof![Just(0.0), 0.01f64..4.0]),
        )
            .prop_map(|(c, e)| Aabb {
                center: Point::from(c),
                extents: Vector::from(e),
            })
    }

    proptest! {
        #[test]
        fn coarse_reproduces_target_box(mesh in arb_box(), target in arb_box()) {
            let t = coarse_align(&mesh, &target);
            let mapped = Aabb::from_min_max(t.apply_point(&mesh.min()), t.apply_point(&mesh.max()));
            prop_assert!((mapped.center - target.center).norm() <= 1e-9);
            for i in 0..3 {
                if mesh.extents[i] > 0.0 && target.extents[i] > 0.0 {
                    prop_assert!((mapped.extents[i] - target.extents[i]).abs() <= 1e-9);
                }
            }
        }
    }
}
