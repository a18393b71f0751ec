//! Stage 2 of the adaptive split: one child proposal per error region.
//!
//! The region centroid is back-projected to a camera ray; the child is placed
//! at the point of that ray closest to the parent mean in the parent's
//! Mahalanobis metric. The region's PCA axes are unprojected at that depth,
//! clamped by the parent's largest scale, and orthonormalized into the
//! child's in-plane frame; the third axis is the camera forward direction.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::config::AdpSplitConfig;
use crate::error::{Error, Result};
use crate::error_partition::ErrorRegion;
use crate::scene::{Camera, Gaussian3D};

/// Denominators below this are treated as a degenerate ray.
const DENOM_UNDERFLOW: f64 = 1e-18;
/// Rejection norms below this mean the two axes are parallel.
const PARALLEL_AXES: f64 = 1e-12;

/// A candidate child Gaussian from one region in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ChildProposal {
    pub mu: Vector3<f64>,
    /// Columns `[u1 | u2 | z_v]`, a proper rotation.
    pub rot: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub rgb: Vector3<f64>,
    pub parent: usize,
    pub view: usize,
    pub region_area: usize,
}

impl ChildProposal {
    pub fn covariance(&self) -> Matrix3<f64> {
        let s2 = self.scale.component_mul(&self.scale);
        self.rot * Matrix3::from_diagonal(&s2) * self.rot.transpose()
    }
}

/// World-space ray through sub-pixel `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRay {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
    /// Norm of the camera-space direction `((x-px)/fx, (y-py)/fy, 1)`.
    pub dir_cam_norm: f64,
}

pub fn pixel_ray(cam: &Camera, x: f64, y: f64) -> PixelRay {
    let d_cam = Vector3::new((x - cam.px) / cam.fx, (y - cam.py) / cam.fy, 1.0);
    let d_world = cam.r_c2w * d_cam;
    PixelRay {
        origin: cam.center,
        dir: d_world.normalize(),
        dir_cam_norm: d_cam.norm(),
    }
}

/// Ray parameter minimizing the Mahalanobis distance to `mu_p`:
/// `t* = (mu_p - o)ᵀ Σ⁻¹ d / (dᵀ Σ⁻¹ d + eps)`.
///
/// The value may be non-positive; callers drop such proposals.
pub fn optimal_t(
    mu_p: &Vector3<f64>,
    cov_p: &Matrix3<f64>,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    eps: f64,
) -> Result<f64> {
    let inv = cov_p
        .try_inverse()
        .ok_or(Error::DegenerateRay { denom: 0.0 })?;
    let a_d = inv * dir;
    let denom = dir.dot(&a_d);
    if !(denom >= DENOM_UNDERFLOW) {
        return Err(Error::DegenerateRay { denom });
    }
    Ok((mu_p - origin).dot(&a_d) / (denom + eps))
}

/// `sign(x) * min(|x|, a)`.
pub fn clip(x: f64, a: f64) -> f64 {
    x.signum() * x.abs().min(a)
}

/// Unprojected world-space axes `(a1, a2)` of the region at depth `t_star`.
pub fn unproject_axes(
    region: &ErrorRegion,
    cam: &Camera,
    t_star: f64,
    dir_cam_norm: f64,
    s_max_parent: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let t_z = t_star / dir_cam_norm;
    let axis = |e: &Vector2<f64>, sigma: f64| {
        let wx = clip(e.x * sigma * t_z / cam.fx, s_max_parent * e.x.abs());
        let wy = clip(e.y * sigma * t_z / cam.fy, s_max_parent * e.y.abs());
        cam.right() * wx + cam.down() * wy
    };
    (axis(&region.e1, region.sigma1), axis(&region.e2, region.sigma2))
}

/// Gram-Schmidt on `(a1, a2)`.
pub fn orthonormalize(a1: &Vector3<f64>, a2: &Vector3<f64>) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let n1 = a1.norm();
    if !(n1 > 0.0) {
        return Err(Error::DegenerateAxes { norm: n1 });
    }
    let u1 = a1 / n1;
    let rej = a2 - u1 * a2.dot(&u1);
    let n2 = rej.norm();
    if !(n2 >= PARALLEL_AXES) {
        return Err(Error::DegenerateAxes { norm: n2 });
    }
    Ok((u1, rej / n2))
}

/// Build the child proposal of `region` for `parent`, or `None` when the
/// optimal depth is not in front of the camera.
pub fn init_child(
    parent: &Gaussian3D,
    parent_index: usize,
    region: &ErrorRegion,
    cam: &Camera,
    cfg: &AdpSplitConfig,
) -> Result<Option<ChildProposal>> {
    let ray = pixel_ray(cam, region.centroid.x, region.centroid.y);
    let t_star = optimal_t(&parent.mu, &parent.covariance(), &ray.origin, &ray.dir, cfg.eps)?;
    if !(t_star > 0.0) {
        return Ok(None);
    }
    let (a1, a2) = unproject_axes(region, cam, t_star, ray.dir_cam_norm, parent.max_scale());
    let (s1, s2) = (a1.norm(), a2.norm());
    if !(s1 > 0.0 && s2 > 0.0) {
        return Ok(None);
    }
    let z = cam.forward();
    let (u1, mut u2) = match orthonormalize(&a1, &a2) {
        Ok(frame) => frame,
        Err(Error::DegenerateAxes { .. }) => {
            let u1 = a1 / s1;
            (u1, z.cross(&u1).normalize())
        }
        Err(e) => return Err(e),
    };
    if u1.cross(&u2).dot(&z) < 0.0 {
        u2 = -u2;
    }
    Ok(Some(ChildProposal {
        mu: ray.origin + ray.dir * t_star,
        rot: Matrix3::from_columns(&[u1, u2, z]),
        scale: Vector3::new(s1, s2, s2),
        opacity: parent.opacity,
        rgb: region.gt_rgb,
        parent: parent_index,
        view: region.view,
        region_area: region.area,
    }))
}
