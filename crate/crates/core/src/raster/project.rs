use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};

use super::{ALPHA_MIN, COV2D_FLOOR};
use crate::error::{Error, Result};
use crate::scene::{Camera, Gaussian3D};

/// Camera-space depth below which a Gaussian cannot be projected.
pub const NEAR_PLANE: f64 = 0.01;

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    /// Regularized 2D covariance, pixels².
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub source_index: usize,
}

impl Splat2D {
    pub fn conic(&self) -> Matrix2<f64> {
        self.cov2d.try_inverse().expect("regularized cov2d is invertible")
    }

    /// Half-width of the square outside of which `opacity * G(u) < ALPHA_MIN`
    /// strictly holds, or `None` when the splat can never reach `ALPHA_MIN`.
    pub fn cutoff_radius(&self, opacity: f64) -> Option<f64> {
        let ratio = opacity / ALPHA_MIN;
        if ratio <= 1.0 {
            return None;
        }
        let (a, b, c) = (self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]);
        let mid = 0.5 * (a + c);
        let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let r = (2.0 * ratio.ln() * lambda_max).sqrt();
        Some(r * (1.0 + 1e-9) + 1e-9)
    }
}

/// Jacobian of the pinhole projection at camera-space point `t`.
pub fn projection_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * t.x * inv_z2,
        0.0,
        cam.fy * inv_z,
        -cam.fy * t.y * inv_z2,
    )
}

/// Perspective projection with the local affine approximation
/// `cov2d = J W Σ Wᵀ Jᵀ + floor·I`.
pub fn project(g: &Gaussian3D, cam: &Camera) -> Result<Splat2D> {
    project_indexed(g, cam, 0)
}

pub(crate) fn project_indexed(g: &Gaussian3D, cam: &Camera, index: usize) -> Result<Splat2D> {
    let t = cam.world_to_camera(&g.mu);
    if !(t.z > NEAR_PLANE) {
        return Err(Error::BehindCamera { z: t.z });
    }
    let w = cam.r_c2w.transpose();
    let j = projection_jacobian(cam, &t);
    let cov_cam = w * g.covariance() * w.transpose();
    let mut cov2d = j * cov_cam * j.transpose();
    cov2d[(0, 0)] += COV2D_FLOOR;
    cov2d[(1, 1)] += COV2D_FLOOR;
    // symmetrize away rounding noise
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    Ok(Splat2D {
        mean2d: Vector2::new(cam.fx * t.x / t.z + cam.px, cam.fy * t.y / t.z + cam.py),
        cov2d,
        depth: t.z,
        source_index: index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Quaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> Camera {
        Camera::look_at(
            Vector3::new(0.3, -0.2, -4.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            60.0,
            48,
            40,
        )
    }

    fn pinhole(cam: &Camera, p: &Vector3<f64>) -> Vector2<f64> {
        let t = cam.world_to_camera(p);
        Vector2::new(cam.fx * t.x / t.z + cam.px, cam.fy * t.y / t.z + cam.py)
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let cam = camera();
        let g = Gaussian3D::isotropic(cam.center + 3.0 * cam.forward(), 0.1, 0.5, Vector3::zeros());
        let s = project(&g, &cam).unwrap();
        assert!((s.mean2d - Vector2::new(cam.px, cam.py)).norm() < 1e-12);
        assert!((s.depth - 3.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_footprint_matches_fd_jacobian() {
        let cam = camera();
        let (sigma, z) = (0.05, 3.0);
        let g = Gaussian3D::isotropic(cam.center + z * cam.forward(), sigma, 0.5, Vector3::zeros());
        let s = project(&g, &cam).unwrap();
        let expect = (cam.fx * sigma / z).powi(2) + COV2D_FLOOR;
        assert!((s.cov2d[(0, 0)] - expect).abs() / expect < 1e-9);
        assert!(s.cov2d[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn anisotropic_footprint_matches_fd_jacobian() {
        // FD oracle: differentiate the pinhole map numerically in world space
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let g = Gaussian3D {
                mu: Vector3::from_fn(|_, _| rng.random_range(-0.8..0.8)),
                scale: Vector3::from_fn(|_, _| rng.random_range(0.02..0.3)),
                rot: Quaternion::new(q[0], q[1], q[2], q[3]).normalize(),
                opacity: 0.5,
                sh_dc: Vector3::zeros(),
                sh_rest: vec![],
            };
            let h = 1e-6;
            let mut jw = Matrix2x3::zeros();
            for k in 0..3 {
                let mut dp = g.mu;
                let mut dm = g.mu;
                dp[k] += h;
                dm[k] -= h;
                let col = (pinhole(&cam, &dp) - pinhole(&cam, &dm)) / (2.0 * h);
                jw.set_column(k, &col);
            }
            let oracle = jw * g.covariance() * jw.transpose() + Matrix2::identity() * COV2D_FLOOR;
            let s = project(&g, &cam).unwrap();
            let rel = (s.cov2d - oracle).abs().max() / oracle.abs().max();
            assert!(rel < 1e-6, "relative error {rel}");
        }
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = camera();
        let g = Gaussian3D::isotropic(cam.center - cam.forward(), 0.1, 0.5, Vector3::zeros());
        assert!(matches!(project(&g, &cam), Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn cutoff_radius_bounds_alpha() {
        let s = Splat2D {
            mean2d: Vector2::zeros(),
            cov2d: Matrix2::new(4.0, 1.0, 1.0, 2.0),
            depth: 1.0,
            source_index: 0,
        };
        let o = 0.9;
        let r = s.cutoff_radius(o).unwrap();
        let conic = s.conic();
        for k in 0..360 {
            let a = k as f64 * std::f64::consts::PI / 180.0;
            let d = Vector2::new(a.cos(), a.sin()) * r;
            let alpha = o * (-0.5 * (d.transpose() * conic * d)[0]).exp();
            assert!(alpha < ALPHA_MIN);
        }
        assert!(s.cutoff_radius(ALPHA_MIN * 0.5).is_none());
    }
}
