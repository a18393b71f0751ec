//! Analytic gradients of `L = Σ_u dL_dI(u) · Î(u)` through the compositing,
//! the 2D footprint, the projection, the covariance and the SH colour.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use super::forward::{for_each_contribution, prepare, Prepared};
use super::image::Image;
use super::projection_jacobian;
use crate::error::Result;
use crate::exec::Exec;
use crate::scene::{sh, Camera, Gaussian3D, Scene};

/// Rows per accumulation chunk. Fixed so that the reduction order does not
/// depend on the thread count.
const CHUNK_ROWS: usize = 4;

/// Per-Gaussian gradients. Entries of Gaussians that are not visible in the
/// view are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradOutput {
    pub d_mu: Vec<Vector3<f64>>,
    pub d_scale: Vec<Vector3<f64>>,
    /// With respect to the raw quaternion components `(w, i, j, k)`.
    pub d_rot: Vec<Vector4<f64>>,
    pub d_opacity: Vec<f64>,
    pub d_sh_dc: Vec<Vector3<f64>>,
    pub d_sh_rest: Vec<Vec<Vector3<f64>>>,
    /// Gradient with respect to the projected mean, per pixel.
    pub viewspace_grad: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
}

impl GradOutput {
    pub fn zeros(scene: &Scene) -> Self {
        let n = scene.len();
        GradOutput {
            d_mu: vec![Vector3::zeros(); n],
            d_scale: vec![Vector3::zeros(); n],
            d_rot: vec![Vector4::zeros(); n],
            d_opacity: vec![0.0; n],
            d_sh_dc: vec![Vector3::zeros(); n],
            d_sh_rest: scene
                .gaussians
                .iter()
                .map(|g| vec![Vector3::zeros(); g.sh_rest.len()])
                .collect(),
            viewspace_grad: vec![Vector2::zeros(); n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_mu.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct SplatAcc {
    d_mean: Vector2<f64>,
    /// dL/d(a, b, c) for the conic [[a, b], [b, c]], entries independent.
    d_conic: Vector3<f64>,
    d_opacity: f64,
    d_color: Vector3<f64>,
}

impl SplatAcc {
    fn add(&mut self, o: &SplatAcc) {
        self.d_mean += o.d_mean;
        self.d_conic += o.d_conic;
        self.d_opacity += o.d_opacity;
        self.d_color += o.d_color;
    }
}

pub fn render_backward(
    scene: &Scene,
    cam: &Camera,
    background: &Vector3<f64>,
    dl_di: &Image,
) -> Result<GradOutput> {
    render_backward_with(scene, cam, background, dl_di, Exec::default())
}

pub fn render_backward_with(
    scene: &Scene,
    cam: &Camera,
    background: &Vector3<f64>,
    dl_di: &Image,
    exec: Exec,
) -> Result<GradOutput> {
    dl_di.check_same_dims(&Image::new(cam.width, cam.height, Vector3::zeros()))?;
    let prep = prepare(scene, cam);
    let n_chunks = prep.height.div_ceil(CHUNK_ROWS);
    let partials = exec.map(n_chunks, |c| {
        let mut acc = vec![SplatAcc::default(); prep.splats.len()];
        let y_end = ((c + 1) * CHUNK_ROWS).min(prep.height);
        for y in c * CHUNK_ROWS..y_end {
            for x in 0..prep.width {
                backprop_pixel(&prep, x, y, background, &dl_di.get(x, y), &mut acc);
            }
        }
        acc
    });
    let mut acc = vec![SplatAcc::default(); prep.splats.len()];
    for part in &partials {
        for (a, p) in acc.iter_mut().zip(part) {
            a.add(p);
        }
    }

    let mut out = GradOutput::zeros(scene);
    out.visible.clone_from(&prep.visible);
    for (s, a) in prep.splats.iter().zip(&acc) {
        let i = s.index;
        let g = &scene.gaussians[i];
        let color_pass = s.color_pass;
        let d_raw_color = Vector3::from_fn(|c, _| if color_pass[c] { a.d_color[c] } else { 0.0 });
        let conic = Matrix2::new(s.conic.0, s.conic.1, s.conic.1, s.conic.2);
        let geo = geometry_grads(g, cam, &conic, a);
        let (d_dc, d_rest, d_mu_color) = color_grads(g, cam, &d_raw_color);
        out.d_mu[i] = geo.d_mu + d_mu_color;
        out.d_scale[i] = geo.d_scale;
        out.d_rot[i] = geo.d_rot;
        out.d_opacity[i] = a.d_opacity;
        out.d_sh_dc[i] = d_dc;
        out.d_sh_rest[i] = d_rest;
        out.viewspace_grad[i] = a.d_mean;
    }
    Ok(out)
}

fn backprop_pixel(
    prep: &Prepared,
    x: usize,
    y: usize,
    background: &Vector3<f64>,
    dl_dc: &Vector3<f64>,
    acc: &mut [SplatAcc],
) {
    if *dl_dc == Vector3::zeros() {
        return;
    }
    // (splat, alpha, T, capped, G, offset)
    let mut list: Vec<(u32, f64, f64, bool, f64, Vector2<f64>)> = Vec::new();
    let t_final = for_each_contribution(prep, x, y, |k, _, alpha, t, capped, g, d| {
        list.push((k, alpha, t, capped, g, d));
    });
    let mut behind = background * t_final;
    for &(k, alpha, t, capped, g, d) in list.iter().rev() {
        let s = &prep.splats[k as usize];
        let a = &mut acc[k as usize];
        a.d_color += dl_dc * (t * alpha);
        let d_alpha = dl_dc.dot(&(s.color * t - behind / (1.0 - alpha)));
        behind += s.color * (t * alpha);
        if capped {
            continue;
        }
        a.d_opacity += d_alpha * g;
        let d_q = -0.5 * g * s.opacity * d_alpha;
        let (ca, cb, cc) = s.conic;
        let ad = Vector2::new(ca * d.x + cb * d.y, cb * d.x + cc * d.y);
        // q = dᵀ A d with d = p - mean
        a.d_mean += ad * (-2.0 * d_q);
        a.d_conic += Vector3::new(d.x * d.x, 2.0 * d.x * d.y, d.y * d.y) * d_q;
    }
}

struct GeometryGrads {
    d_mu: Vector3<f64>,
    d_scale: Vector3<f64>,
    d_rot: Vector4<f64>,
}

fn geometry_grads(g: &Gaussian3D, cam: &Camera, conic: &Matrix2<f64>, a: &SplatAcc) -> GeometryGrads {
    let w = cam.r_c2w.transpose();
    let t = cam.world_to_camera(&g.mu);
    let j = projection_jacobian(cam, &t);
    let r = g.rotation();
    let s2 = g.scale.component_mul(&g.scale);
    let sigma = r * Matrix3::from_diagonal(&s2) * r.transpose();
    let m = w * sigma * w.transpose();

    // conic -> cov2d
    let g_conic = Matrix2::new(a.d_conic.x, 0.5 * a.d_conic.y, 0.5 * a.d_conic.y, a.d_conic.z);
    let g_cov2d = -(conic * g_conic * conic);
    // cov2d = J M Jᵀ + floor
    let g_m: Matrix3<f64> = j.transpose() * g_cov2d * j;
    let g_j: Matrix2x3<f64> = 2.0 * g_cov2d * j * m;
    let g_sigma = w.transpose() * g_m * w;

    // mean2d and J both depend on t
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_t = j.transpose() * a.d_mean;
    d_t.x += g_j[(0, 2)] * (-fx * iz2);
    d_t.y += g_j[(1, 2)] * (-fy * iz2);
    d_t.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * t.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * t.y * iz3);
    let d_mu = w.transpose() * d_t;

    // Σ = R diag(s²) Rᵀ
    let rt_g_r = r.transpose() * g_sigma * r;
    let d_scale = Vector3::from_fn(|k, _| 2.0 * g.scale[k] * rt_g_r[(k, k)]);
    let g_r = 2.0 * g_sigma * r * Matrix3::from_diagonal(&s2);
    let d_rot = quat_grad(&g.rot, &g_r);

    GeometryGrads {
        d_mu,
        d_scale,
        d_rot,
    }
}

/// Pull a gradient on the rotation matrix back to the raw quaternion, through
/// the normalization performed by `quat_to_rotmat`.
fn quat_grad(q: &nalgebra::Quaternion<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let n = q.norm();
    let (r, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    let d_r = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let d_x = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - r * g[(1, 2)]
            + z * g[(2, 0)]
            + r * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let d_y = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + r * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - r * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let d_z = 2.0
        * (-2.0 * z * g[(0, 0)] - r * g[(0, 1)] + x * g[(0, 2)] + r * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let d_unit = Vector4::new(d_r, d_x, d_y, d_z);
    let qn = Vector4::new(r, x, y, z);
    (d_unit - qn * qn.dot(&d_unit)) / n
}

fn color_grads(
    g: &Gaussian3D,
    cam: &Camera,
    d_color: &Vector3<f64>,
) -> (Vector3<f64>, Vec<Vector3<f64>>, Vector3<f64>) {
    let d_dc = d_color * sh::SH_C0;
    if g.sh_rest.is_empty() {
        return (d_dc, Vec::new(), Vector3::zeros());
    }
    let v = g.mu - cam.center;
    let len = v.norm();
    let dir = v / len;
    let count = 1 + g.sh_rest.len();
    let b = sh::basis(&dir, count);
    let bg = sh::basis_grad(&dir, count);
    let mut d_rest = Vec::with_capacity(g.sh_rest.len());
    let mut d_dir = Vector3::zeros();
    for (k, coeff) in g.sh_rest.iter().enumerate() {
        d_rest.push(d_color * b[k + 1]);
        d_dir += bg[k + 1] * d_color.dot(coeff);
    }
    let d_v = (d_dir - dir * dir.dot(&d_dir)) / len;
    (d_dc, d_rest, d_v)
}
