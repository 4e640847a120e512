use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// One of the six rigid-body degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dof {
    X,
    Y,
    Z,
    Alpha,
    Beta,
    Gamma,
}

impl Dof {
    pub const ALL: [Dof; 6] = [Dof::X, Dof::Y, Dof::Z, Dof::Alpha, Dof::Beta, Dof::Gamma];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Dof::Alpha | Dof::Beta | Dof::Gamma)
    }
}

/// Body configuration in the lab frame.
///
/// Positions are the geometric center in mm. Orientation uses the intrinsic
/// Z-Y'-X'' Tait-Bryan sequence: yaw `gamma`, then pitch `beta`, then roll
/// `alpha`, all in radians. Negative pitch lifts the nose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            x,
            y,
            z,
            alpha: normalize_angle(alpha),
            beta: normalize_angle(beta),
            gamma: normalize_angle(gamma),
        }
    }

    /// Same as [`Pose::new`] with the three angles given in degrees.
    pub fn from_degrees(x: f64, y: f64, z: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self::new(x, y, z, alpha.to_radians(), beta.to_radians(), gamma.to_radians())
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x, self.y, self.z, self.alpha, self.beta, self.gamma];
        if all.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(invalid("pose", "all coordinates must be finite"))
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Body-to-lab rotation `Rz(gamma) * Ry(beta) * Rx(alpha)`.
    pub fn rotation(&self) -> Mat3 {
        pose_rotation(self)
    }

    pub fn to_lab(&self, body: &Vec3) -> Vec3 {
        self.rotation() * body + self.position()
    }

    pub fn to_body(&self, lab: &Vec3) -> Vec3 {
        self.rotation().transpose() * (lab - self.position())
    }

    pub fn get(&self, dof: Dof) -> f64 {
        match dof {
            Dof::X => self.x,
            Dof::Y => self.y,
            Dof::Z => self.z,
            Dof::Alpha => self.alpha,
            Dof::Beta => self.beta,
            Dof::Gamma => self.gamma,
        }
    }

    /// Returns a copy shifted by `delta` along one degree of freedom.
    pub fn perturbed(&self, dof: Dof, delta: f64) -> Pose {
        let mut p = *self;
        match dof {
            Dof::X => p.x += delta,
            Dof::Y => p.y += delta,
            Dof::Z => p.z += delta,
            Dof::Alpha => p.alpha = normalize_angle(p.alpha + delta),
            Dof::Beta => p.beta = normalize_angle(p.beta + delta),
            Dof::Gamma => p.gamma = normalize_angle(p.gamma + delta),
        }
        p
    }

    /// Mirror image through the lab x-z plane: `y -> -y`, roll and yaw flip sign.
    pub fn mirrored(&self) -> Pose {
        Pose::new(self.x, -self.y, self.z, -self.alpha, self.beta, -self.gamma)
    }

    /// Body roll axis X'' expressed in the lab frame.
    pub fn roll_axis(&self) -> Vec3 {
        self.rotation().column(0).into_owned()
    }

    /// Body pitch axis Y'' expressed in the lab frame.
    pub fn body_pitch_axis(&self) -> Vec3 {
        self.rotation().column(1).into_owned()
    }

    /// Intermediate pitch axis Y' (after yaw only) in the lab frame.
    pub fn intermediate_pitch_axis(&self) -> Vec3 {
        Vec3::new(-self.gamma.sin(), self.gamma.cos(), 0.0)
    }

    /// Body yaw axis Z'' in the lab frame.
    pub fn yaw_axis(&self) -> Vec3 {
        self.rotation().column(2).into_owned()
    }
}

pub fn pose_rotation(pose: &Pose) -> Mat3 {
    let (sa, ca) = pose.alpha.sin_cos();
    let (sb, cb) = pose.beta.sin_cos();
    let (sg, cg) = pose.gamma.sin_cos();
    let rz = Mat3::new(cg, -sg, 0.0, sg, cg, 0.0, 0.0, 0.0, 1.0);
    let ry = Mat3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    rz * ry * rx
}

/// Mass properties of the body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyParams {
    /// Mass in kg.
    pub mass: f64,
    /// Distance of the center of mass below the geometric center along body -z'' (mm).
    pub com_offset: f64,
    /// Gravitational acceleration in mm/s^2.
    pub gravity: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            mass: 0.53,
            com_offset: 8.0,
            gravity: 9810.0,
        }
    }
}

impl BodyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(invalid("body.mass", "must be > 0"));
        }
        if !(self.com_offset >= 0.0) {
            return Err(invalid("body.com_offset", "must be >= 0"));
        }
        if !(self.gravity > 0.0) {
            return Err(invalid("body.gravity", "must be > 0"));
        }
        Ok(())
    }

    /// Weight in N (kg * mm/s^2 is mN).
    pub fn weight(&self) -> f64 {
        self.mass * self.gravity * 1e-3
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_rotation_at_zero_angles() {
        let r = Pose::default_at_origin().rotation();
        assert_abs_diff_eq!(r, Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn roll_90_maps_body_y_to_lab_z() {
        let r = Pose::from_degrees(0.0, 0.0, 0.0, 90.0, 0.0, 0.0).rotation();
        assert_abs_diff_eq!(r * Vec3::y(), Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn negative_pitch_lifts_the_nose() {
        let r = Pose::from_degrees(0.0, 0.0, 0.0, 0.0, -30.0, 0.0).rotation();
        let nose = r * Vec3::x();
        let c = 30f64.to_radians().cos();
        let s = 30f64.to_radians().sin();
        assert_abs_diff_eq!(nose, Vec3::new(c, 0.0, s), epsilon = 1e-12);
    }

    #[test]
    fn angles_wrap_into_half_open_interval() {
        assert_abs_diff_eq!(normalize_angle(PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_body_params_rejected() {
        let mut b = BodyParams::default();
        b.mass = 0.0;
        assert!(b.validate().is_err());
    }

    impl Pose {
        fn default_at_origin() -> Pose {
            Pose::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        }
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(a in -4.0f64..4.0, b in -4.0f64..4.0, g in -4.0f64..4.0) {
            let r = Pose::new(0.0, 0.0, 0.0, a, b, g).rotation();
            let err = (r * r.transpose() - Mat3::identity()).abs().max();
            prop_assert!(err < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn lab_body_round_trip(x in -300.0f64..300.0, a in -1.5f64..1.5, b in -1.5f64..1.5,
                               px in -100.0f64..100.0, pz in -100.0f64..100.0) {
            let pose = Pose::new(x, -6.0, 138.0, a, b, 0.1);
            let p = Vec3::new(px, 10.0, pz);
            let back = pose.to_body(&pose.to_lab(&p));
            prop_assert!((back - p).norm() < 1e-9);
        }
    }
}
