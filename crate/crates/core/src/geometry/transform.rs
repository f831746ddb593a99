use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Point, Vector};
use crate::error::{Error, Result};

/// 4×4 homogeneous transform with bottom row `(0, 0, 0, 1)`.
///
/// Serialized as a row-major array of 16 numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform(Matrix4<f64>);

impl AffineTransform {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    /// Validates the bottom row and invertibility of the linear block.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if m.row(3) != Matrix4::<f64>::identity().row(3) {
            return Err(Error::InvalidParameter(
                "affine transform bottom row must be (0, 0, 0, 1)".into(),
            ));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite transform entry".into()));
        }
        let t = Self(m);
        if t.linear().determinant() == 0.0 {
            return Err(Error::SingularTransform);
        }
        Ok(t)
    }

    /// No invertibility check; the bottom row is still forced.
    pub fn from_matrix_unchecked(mut m: Matrix4<f64>) -> Self {
        m.set_row(3, &Matrix4::<f64>::identity().row(3));
        Self(m)
    }

    pub fn from_linear_translation(linear: Matrix3<f64>, translation: Vector) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&linear);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self(m)
    }

    pub fn translation(v: Vector) -> Self {
        Self(Matrix4::new_translation(&v))
    }

    pub fn scaling(s: Vector) -> Self {
        Self(Matrix4::new_nonuniform_scaling(&s))
    }

    pub fn uniform_scaling(s: f64) -> Self {
        Self::scaling(Vector3::repeat(s))
    }

    pub fn rotation(r: &Rotation3<f64>) -> Self {
        Self::from_linear_translation(*r.matrix(), Vector::zeros())
    }

    /// Rotation by `r` about `center`.
    pub fn rotation_about(r: &Rotation3<f64>, center: &Point) -> Self {
        Self::translation(center.coords) * Self::rotation(r) * Self::translation(-center.coords)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn linear(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_part(&self) -> Vector {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn is_identity(&self) -> bool {
        self.0 == Matrix4::identity()
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        let l = self.0.fixed_view::<3, 3>(0, 0);
        Point::from(l * p.coords + self.0.fixed_view::<3, 1>(0, 3))
    }

    pub fn apply_vector(&self, v: &Vector) -> Vector {
        self.0.fixed_view::<3, 3>(0, 0) * v
    }

    /// Inverse-transpose of the linear block.
    pub fn normal_matrix(&self) -> Result<Matrix3<f64>> {
        self.linear()
            .try_inverse()
            .map(|inv| inv.transpose())
            .ok_or(Error::SingularTransform)
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv_linear = self.linear().try_inverse().ok_or(Error::SingularTransform)?;
        Ok(Self::from_linear_translation(
            inv_linear,
            -(inv_linear * self.translation_part()),
        ))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64; 16]) -> Result<Self> {
        Self::from_matrix(Matrix4::from_row_slice(values))
    }
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for AffineTransform {
    type Output = AffineTransform;

    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

impl Mul<&AffineTransform> for &AffineTransform {
    type Output = AffineTransform;

    fn mul(self, rhs: &AffineTransform) -> AffineTransform {
        AffineTransform(self.0 * rhs.0)
    }
}

impl Serialize for AffineTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AffineTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let values = <[f64; 16]>::deserialize(deserializer)?;
        Self::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}
