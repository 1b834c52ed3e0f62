//! Rotations, interaction tensors and field vectors in the (D1, D2, b) frame.

use std::ops::Neg;

use nalgebra::{Matrix3, Vector3};

/// Intrinsic Z-Y-Z Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub const IDENTITY: EulerAngles = EulerAngles {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        EulerAngles { alpha, beta, gamma }
    }

    pub fn from_degrees(alpha: f64, beta: f64, gamma: f64) -> Self {
        EulerAngles::new(alpha.to_radians(), beta.to_radians(), gamma.to_radians())
    }
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// R = Rz(α) Ry(β) Rz(γ). Columns are the principal axes expressed in the lab frame.
pub fn rotation_from_euler(e: EulerAngles) -> Matrix3<f64> {
    rot_z(e.alpha) * rot_y(e.beta) * rot_z(e.gamma)
}

/// Rank-2 symmetric interaction tensor: principal values plus the
/// orientation of its principal axes in the lab frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorSpec {
    pub principal_values: [f64; 3],
    pub orientation: EulerAngles,
}

impl TensorSpec {
    pub fn new(principal_values: [f64; 3], orientation: EulerAngles) -> Self {
        TensorSpec {
            principal_values,
            orientation,
        }
    }

    pub fn diagonal(principal_values: [f64; 3]) -> Self {
        TensorSpec::new(principal_values, EulerAngles::IDENTITY)
    }

    pub fn isotropic(value: f64) -> Self {
        TensorSpec::diagonal([value; 3])
    }

    pub fn to_lab(&self) -> Matrix3<f64> {
        tensor_to_lab(self)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_euler(self.orientation)
    }
}

/// R · diag(v) · Rᵀ, symmetrized to remove rounding asymmetry.
pub fn tensor_to_lab(t: &TensorSpec) -> Matrix3<f64> {
    let r = rotation_from_euler(t.orientation);
    let d = Matrix3::from_diagonal(&Vector3::from(t.principal_values));
    let m = r * d * r.transpose();
    (m + m.transpose()) * 0.5
}

/// Magnetic field in tesla, components along (D1, D2, b).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldVector(pub Vector3<f64>);

impl FieldVector {
    pub fn new(d1: f64, d2: f64, b: f64) -> Self {
        FieldVector(Vector3::new(d1, d2, b))
    }

    pub fn zero() -> Self {
        FieldVector(Vector3::zeros())
    }

    /// Field of `magnitude` tesla along the direction (θ, φ), radians.
    pub fn from_polar(magnitude: f64, theta: f64, phi: f64) -> Self {
        FieldVector(direction_unit_vector(theta, phi) * magnitude)
    }

    pub fn from_polar_deg(magnitude: f64, theta_deg: f64, phi_deg: f64) -> Self {
        Self::from_polar(magnitude, theta_deg.to_radians(), phi_deg.to_radians())
    }

    pub fn vec(&self) -> Vector3<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn offset(&self, axis: usize, delta: f64) -> FieldVector {
        let mut v = self.0;
        v[axis] += delta;
        FieldVector(v)
    }
}

impl Neg for FieldVector {
    type Output = FieldVector;
    fn neg(self) -> FieldVector {
        FieldVector(-self.0)
    }
}

/// Unit vector (cosθ cosφ, cosθ sinφ, sinθ); θ = 0 is the D1-D2 plane and
/// θ = ±π/2 points along ±b.
pub fn direction_unit_vector(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(ct * cp, ct * sp, st)
}

/// Inverse of [`direction_unit_vector`]: (θ, φ) in radians for a nonzero vector.
pub fn polar_angles(v: &Vector3<f64>) -> (f64, f64) {
    let n = v.norm();
    let theta = (v.z / n).clamp(-1.0, 1.0).asin();
    let phi = v.y.atan2(v.x);
    (theta, phi)
}
