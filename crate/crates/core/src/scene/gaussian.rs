use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

/// One anisotropic splat.
///
/// `rot` is stored as a unit quaternion `(w, i, j, k)`; the rotation matrix is
/// derived on demand by [`quat_to_rotmat`], which normalizes its input so that
/// gradients with respect to the raw components are well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mu: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rot: Quaternion<f64>,
    pub opacity: f64,
    pub sh_dc: Vector3<f64>,
    pub sh_rest: Vec<Vector3<f64>>,
}

impl Gaussian3D {
    /// DC-only Gaussian with identity rotation.
    pub fn isotropic(mu: Vector3<f64>, sigma: f64, opacity: f64, sh_dc: Vector3<f64>) -> Self {
        Gaussian3D {
            mu,
            scale: Vector3::repeat(sigma),
            rot: Quaternion::identity(),
            opacity,
            sh_dc,
            sh_rest: Vec::new(),
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        quat_to_rotmat(&self.rot)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance(self)
    }

    pub fn max_scale(&self) -> f64 {
        self.scale.max()
    }

    /// Checks the value invariants; the message names the violated one.
    pub fn validate(&self) -> Result<(), String> {
        let finite = self.mu.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.rot.coords.iter().all(|v| v.is_finite())
            && self.sh_dc.iter().all(|v| v.is_finite())
            && self.sh_rest.iter().flat_map(|c| c.iter()).all(|v| v.is_finite());
        if !finite {
            return Err("non-finite parameter".into());
        }
        if (self.rot.norm() - 1.0).abs() > 1e-9 {
            return Err(format!("quaternion norm {} is not 1", self.rot.norm()));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(format!("non-positive scale {:?}", self.scale.as_slice()));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(format!("opacity {} outside (0, 1)", self.opacity));
        }
        if !matches!(self.sh_rest.len(), 0 | 3 | 8 | 15) {
            return Err(format!(
                "{} higher-order SH coefficients do not form a degree <= 3 set",
                self.sh_rest.len()
            ));
        }
        Ok(())
    }
}

/// Rotation matrix of `q / |q|`.
pub fn quat_to_rotmat(q: &Quaternion<f64>) -> Matrix3<f64> {
    let n = q.norm();
    let (r, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - r * z),
        2.0 * (x * z + r * y),
        2.0 * (x * y + r * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - r * x),
        2.0 * (x * z - r * y),
        2.0 * (y * z + r * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion of a proper rotation matrix, with non-negative `w`.
pub fn rotmat_to_quat(m: &Matrix3<f64>) -> Quaternion<f64> {
    let rot = Rotation3::from_matrix(m);
    let q = UnitQuaternion::from_rotation_matrix(&rot).into_inner();
    let q = if q.w < 0.0 { -q } else { q };
    q.normalize()
}

/// `R diag(s^2) R^T`.
pub fn covariance(g: &Gaussian3D) -> Matrix3<f64> {
    let r = g.rotation();
    let s2 = g.scale.component_mul(&g.scale);
    r * Matrix3::from_diagonal(&s2) * r.transpose()
}
