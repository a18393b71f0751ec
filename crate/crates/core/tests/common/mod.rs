//! Generators and brute-force reference implementations shared by the
//! integration tests. The references restate each definition directly and
//! avoid the library's own code paths wherever practical.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeSet, VecDeque};

use adpsplit::child_init::ChildProposal;
use adpsplit::merge::MergeGroup;
use adpsplit::raster::Image;
use adpsplit::scene::{rgb_to_dc, sh_to_rgb, Camera, Gaussian3D, Scene};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_unit_quat(rng: &mut impl Rng) -> Quaternion<f64> {
    let q = Quaternion::new(normal(rng), normal(rng), normal(rng), normal(rng));
    q.normalize()
}

pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    quat_matrix(&random_unit_quat(rng))
}

/// Rotation matrix of a (not necessarily unit) quaternion, written out term by term.
pub fn quat_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let n = (q.w * q.w + q.i * q.i + q.j * q.j + q.k * q.k).sqrt();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn random_spd(rng: &mut impl Rng, lo: f64, hi: f64) -> Matrix3<f64> {
    let r = random_rotation(rng);
    let s = Vector3::from_fn(|_, _| rng.random_range(lo..hi));
    r * Matrix3::from_diagonal(&s.component_mul(&s)) * r.transpose()
}

/// Camera on the -z axis at distance 4 looking at the origin, image `w × h`,
/// focal chosen so that the unit sphere around the origin fills the frame.
pub fn test_camera(w: usize, h: usize) -> Camera {
    let f = 1.6 * w.max(h) as f64;
    Camera::look_at(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), f, w, h)
}

pub fn random_camera(rng: &mut impl Rng, w: usize, h: usize) -> Camera {
    let dir = Vector3::new(normal(rng), normal(rng), normal(rng)).normalize();
    let center = dir * rng.random_range(3.0..6.0);
    let up = Vector3::new(normal(rng), normal(rng), normal(rng));
    let f = rng.random_range(0.8..2.0) * w.max(h) as f64;
    let mut cam = Camera::look_at(center, Vector3::zeros(), up, f, w, h);
    cam.fy = f * rng.random_range(0.9..1.1);
    cam.px += rng.random_range(-1.0..1.0);
    cam.py += rng.random_range(-1.0..1.0);
    cam
}

pub struct GaussianSpec {
    pub spread: f64,
    pub scale: (f64, f64),
    pub opacity: (f64, f64),
    pub rgb: (f64, f64),
    pub sh_rest: usize,
    pub sh_rest_mag: f64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            spread: 0.8,
            scale: (0.08, 0.5),
            opacity: (0.1, 0.95),
            rgb: (0.05, 0.95),
            sh_rest: 0,
            sh_rest_mag: 0.0,
        }
    }
}

pub fn random_gaussian(rng: &mut impl Rng, spec: &GaussianSpec) -> Gaussian3D {
    let mu = Vector3::from_fn(|_, _| rng.random_range(-spec.spread..spec.spread));
    let scale = Vector3::from_fn(|_, _| rng.random_range(spec.scale.0..spec.scale.1));
    let rgb = Vector3::from_fn(|_, _| rng.random_range(spec.rgb.0..spec.rgb.1));
    let sh_rest = (0..spec.sh_rest)
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(-spec.sh_rest_mag..=spec.sh_rest_mag)))
        .collect();
    let mut rot = random_unit_quat(rng);
    if rot.w < 0.0 {
        rot = -rot;
    }
    Gaussian3D {
        mu,
        scale,
        rot,
        opacity: rng.random_range(spec.opacity.0..spec.opacity.1),
        sh_dc: rgb_to_dc(&rgb),
        sh_rest,
    }
}

pub fn random_scene(rng: &mut impl Rng, n: usize, spec: &GaussianSpec) -> Scene {
    Scene::new((0..n).map(|_| random_gaussian(rng, spec)).collect(), 1.0)
}

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
    let data = (0..w * h).map(|_| Vector3::from_fn(|_, _| rng.random_range(0.0..1.0))).collect();
    Image::from_pixels(w, h, data)
}

// ---------------------------------------------------------------- rendering

/// Per-pixel result of the literal compositing reference.
#[derive(Debug, Clone)]
pub struct OraclePixel {
    pub color: Vector3<f64>,
    /// `(gaussian index, T_i, alpha_i)` front to back.
    pub terms: Vec<(usize, f64, f64)>,
    pub t_final: f64,
    pub dominant: Option<usize>,
    /// Gap between the largest and second-largest `T·α` (infinite with < 2 terms).
    pub dominant_margin: f64,
}

/// Footprint of one Gaussian in one camera, computed from first principles.
pub struct OracleSplat {
    pub mean: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

pub fn oracle_project(g: &Gaussian3D, cam: &Camera) -> Option<OracleSplat> {
    let w = cam.r_c2w.transpose();
    let t = w * (g.mu - cam.center);
    if t.z <= 0.01 {
        return None;
    }
    let r = quat_matrix(&g.rot);
    let mut sigma = Matrix3::zeros();
    for a in 0..3 {
        for b in 0..3 {
            for k in 0..3 {
                sigma[(a, b)] += r[(a, k)] * g.scale[k] * g.scale[k] * r[(b, k)];
            }
        }
    }
    let j = Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * t.x / (t.z * t.z),
        0.0,
        cam.fy / t.z,
        -cam.fy * t.y / (t.z * t.z),
    );
    let m = j * w;
    let cov2d = m * sigma * m.transpose() + Matrix2::identity() * 0.3;
    Some(OracleSplat {
        mean: Vector2::new(cam.fx * t.x / t.z + cam.px, cam.fy * t.y / t.z + cam.py),
        cov2d,
        depth: t.z,
    })
}

/// Compositing evaluated pixel by pixel over every Gaussian, without culling.
pub fn oracle_render(scene: &Scene, cam: &Camera, bg: &Vector3<f64>) -> Vec<OraclePixel> {
    let splats: Vec<Option<OracleSplat>> = scene.gaussians.iter().map(|g| oracle_project(g, cam)).collect();
    let colors: Vec<Vector3<f64>> = scene
        .gaussians
        .iter()
        .map(|g| sh_to_rgb(g, &(g.mu - cam.center).normalize()))
        .collect();
    let mut order: Vec<usize> = (0..scene.len()).filter(|&i| splats[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (splats[a].as_ref().unwrap().depth, splats[b].as_ref().unwrap().depth);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let mut out = Vec::with_capacity(cam.width * cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut t = 1.0;
            let mut color = Vector3::zeros();
            let mut terms = Vec::new();
            for &i in &order {
                let s = splats[i].as_ref().unwrap();
                let d = Vector2::new(x as f64, y as f64) - s.mean;
                let (a, b, c) = (s.cov2d[(0, 0)], s.cov2d[(0, 1)], s.cov2d[(1, 1)]);
                let det = a * c - b * b;
                let q = (c * d.x * d.x - 2.0 * b * d.x * d.y + a * d.y * d.y) / det;
                let alpha = (scene.gaussians[i].opacity * (-0.5 * q).exp()).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                color += colors[i] * (t * alpha);
                terms.push((i, t, alpha));
                t *= 1.0 - alpha;
            }
            let mut best: Option<(usize, f64)> = None;
            let mut second = f64::NEG_INFINITY;
            for &(i, ti, ai) in &terms {
                let wgt = ti * ai;
                match best {
                    Some((_, bw)) if wgt <= bw => second = second.max(wgt),
                    Some((_, bw)) => {
                        second = bw;
                        best = Some((i, wgt));
                    }
                    None => best = Some((i, wgt)),
                }
            }
            let margin = best.map_or(f64::INFINITY, |(_, bw)| bw - second);
            out.push(OraclePixel {
                color: color + bg * t,
                terms,
                t_final: t,
                dominant: best.map(|(i, _)| i),
                dominant_margin: margin,
            });
        }
    }
    out
}

pub fn oracle_image(pixels: &[OraclePixel], w: usize, h: usize) -> Image {
    Image::from_pixels(w, h, pixels.iter().map(|p| p.color).collect())
}

// ------------------------------------------------------------ error regions

/// Normalized L1 map restated literally.
pub fn oracle_error_map(a: &Image, b: &Image) -> Vec<f64> {
    let raw: Vec<f64> = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| (p.x - q.x).abs() + (p.y - q.y).abs() + (p.z - q.z).abs())
        .collect();
    let mx = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mn = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    if mx == mn {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|r| (r - mn) / (mx - mn)).collect()
}

/// Erosion checking the whole square footprint at every pixel; cells
/// outside the image do not count against the pixel.
pub fn oracle_erode(m: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    if r <= 1 {
        return m.to_vec();
    }
    let lo = -((r / 2) as i64);
    let hi = lo + r as i64 - 1;
    let mut out = vec![false; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut keep = true;
            for dy in lo..=hi {
                for dx in lo..=hi {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64 && !m[(yy * w as i64 + xx) as usize] {
                        keep = false;
                    }
                }
            }
            out[(y * w as i64 + x) as usize] = keep;
        }
    }
    out
}

pub fn oracle_band(e: f64, tau: f64, l: usize) -> Option<usize> {
    if e <= tau {
        return None;
    }
    let b = ((e - tau) / (1.0 - tau) * l as f64).floor() as usize;
    Some(b.min(l - 1))
}

/// `(candidate, band, row-major pixels)` per region, ordered by seed.
pub type OracleRegion = (usize, usize, Vec<(usize, usize)>);

/// Flood fill over the triple predicate (marked, same candidate, same band).
pub fn oracle_partition(
    m: &[bool],
    dominant: &[Option<usize>],
    band: &[Option<usize>],
    w: usize,
    h: usize,
    candidates: &BTreeSet<usize>,
    m_min: usize,
) -> Vec<OracleRegion> {
    let label = |p: usize| -> Option<(usize, usize)> {
        if !m[p] {
            return None;
        }
        let c = dominant[p]?;
        if !candidates.contains(&c) {
            return None;
        }
        Some((c, band[p].unwrap()))
    };
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        let Some(key) = label(start) else { continue };
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                        continue;
                    }
                    let q = (yy * w as i64 + xx) as usize;
                    if !seen[q] && label(q) == Some(key) {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        if pixels.len() >= m_min {
            pixels.sort_unstable();
            out.push((key.0, key.1, pixels.into_iter().map(|p| (p % w, p / w)).collect()));
        }
    }
    out
}

// ------------------------------------------------------------- child depth

pub fn mahalanobis_along(mu: &Vector3<f64>, cov_inv: &Matrix3<f64>, o: &Vector3<f64>, d: &Vector3<f64>, t: f64) -> f64 {
    let r = o + d * t - mu;
    (r.transpose() * cov_inv * r)[0]
}

/// Minimizer of the Mahalanobis objective over `[0, t_max]`: dense grid,
/// then golden-section refinement around the best grid point.
pub fn oracle_optimal_t(mu: &Vector3<f64>, cov: &Matrix3<f64>, o: &Vector3<f64>, d: &Vector3<f64>, t_max: f64) -> f64 {
    let inv = cov.try_inverse().unwrap();
    let f = |t: f64| mahalanobis_along(mu, &inv, o, d, t);
    let n = 4000;
    let h = t_max / n as f64;
    let best = (0..=n).map(|k| k as f64 * h).min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
    let (mut a, mut b) = ((best - h).max(0.0), (best + h).min(t_max));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut dd = a + g * (b - a);
    for _ in 0..200 {
        if f(c) < f(dd) {
            b = dd;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        dd = a + g * (b - a);
        if b - a < 1e-15 * t_max {
            break;
        }
    }
    0.5 * (a + b)
}

// ------------------------------------------------------------------- merge

pub fn proposal_cov(p: &ChildProposal) -> Matrix3<f64> {
    let mut c = Matrix3::zeros();
    for k in 0..3 {
        let u = p.rot.column(k);
        c += u * u.transpose() * (p.scale[k] * p.scale[k]);
    }
    c
}

/// Merge predicate with explicit covariance inverses.
pub fn oracle_mergeable(a: &ChildProposal, b: &ChildProposal, gd: f64, gc: f64) -> bool {
    let d = b.mu - a.mu;
    let ia = proposal_cov(a).try_inverse().unwrap();
    let ib = proposal_cov(b).try_inverse().unwrap();
    let dist = (d.transpose() * ia * d)[0].sqrt() + (d.transpose() * ib * d)[0].sqrt();
    let col = (0..3).map(|k| (a.rgb[k] - b.rgb[k]).abs()).fold(0.0, f64::max);
    dist <= gd && col <= gc
}

/// Components by breadth-first search, each sorted, ordered by smallest member.
pub fn oracle_components(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for v in 0..n {
                if !seen[v] && v != u && edge(u.min(v), u.max(v)) {
                    seen[v] = true;
                    comp.push(v);
                    q.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Clusters of proposals of one parent: members jittered around a few centres.
pub fn random_proposals(rng: &mut impl Rng, n: usize) -> Vec<ChildProposal> {
    let clusters = rng.random_range(1..=3usize);
    let centres: Vec<Vector3<f64>> = (0..clusters)
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)))
        .collect();
    let base_rgb = Vector3::from_fn(|_, _| rng.random_range(0.2..0.8));
    (0..n)
        .map(|_| {
            let c = centres[rng.random_range(0..clusters)];
            let scale = Vector3::from_fn(|_, _| rng.random_range(0.1..0.8));
            let rot = {
                let r = random_rotation(rng);
                if r.determinant() < 0.0 { -r } else { r }
            };
            ChildProposal {
                mu: c + Vector3::from_fn(|_, _| rng.random_range(-0.4..0.4)),
                rot,
                scale,
                opacity: rng.random_range(0.1..0.9),
                rgb: base_rgb + Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)),
                parent: 3,
                view: rng.random_range(0..5),
                region_area: rng.random_range(5..50),
            }
        })
        .collect()
}

// ------------------------------------------------------------- gradients

/// `Σ dL_dI ⊙ render(scene)`.
pub fn weighted_loss(scene: &Scene, cam: &Camera, bg: &Vector3<f64>, dl: &Image) -> f64 {
    let img = adpsplit::raster::render(scene, cam, bg).image;
    img.pixels().iter().zip(dl.pixels()).map(|(a, b)| a.dot(b)).sum()
}

/// Contributor signature per pixel: which splats pass the alpha screen and
/// which hit the opacity cap.
pub fn contributor_signature(scene: &Scene, cam: &Camera) -> Vec<Vec<(usize, bool)>> {
    adpsplit::raster::render_trace(scene, cam)
        .into_iter()
        .map(|(c, _)| c.into_iter().map(|k| (k.index, k.capped)).collect())
        .collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Which scalar of a Gaussian a finite-difference probe perturbs.
#[derive(Debug, Clone, Copy)]
pub enum Param {
    Mu(usize),
    Scale(usize),
    Rot(usize),
    Opacity,
    Dc(usize),
    Rest(usize, usize),
}

pub fn params_of(g: &Gaussian3D) -> Vec<Param> {
    let mut v = Vec::new();
    for a in 0..3 {
        v.push(Param::Mu(a));
        v.push(Param::Scale(a));
        v.push(Param::Dc(a));
    }
    for a in 0..4 {
        v.push(Param::Rot(a));
    }
    v.push(Param::Opacity);
    for c in 0..g.sh_rest.len() {
        for a in 0..3 {
            v.push(Param::Rest(c, a));
        }
    }
    v
}

pub fn perturb(g: &mut Gaussian3D, p: Param, h: f64) {
    match p {
        Param::Mu(a) => g.mu[a] += h,
        Param::Scale(a) => g.scale[a] += h,
        Param::Rot(0) => g.rot.w += h,
        Param::Rot(1) => g.rot.i += h,
        Param::Rot(2) => g.rot.j += h,
        Param::Rot(_) => g.rot.k += h,
        Param::Opacity => g.opacity += h,
        Param::Dc(a) => g.sh_dc[a] += h,
        Param::Rest(c, a) => g.sh_rest[c][a] += h,
    }
}

pub fn analytic(grads: &adpsplit::raster::GradOutput, i: usize, p: Param) -> f64 {
    match p {
        Param::Mu(a) => grads.d_mu[i][a],
        Param::Scale(a) => grads.d_scale[i][a],
        Param::Rot(a) => grads.d_rot[i][a],
        Param::Opacity => grads.d_opacity[i],
        Param::Dc(a) => grads.d_sh_dc[i][a],
        Param::Rest(c, a) => grads.d_sh_rest[i][c][a],
    }
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Probes skipped because the perturbation changed the contributor set,
    /// where the rendered image is not differentiable.
    pub skipped: usize,
    pub failures: Vec<String>,
}

/// Compare `render_backward` with central differences for every parameter of
/// every Gaussian: pass if within `rel` relative or `abs` absolute.
pub fn fd_check(scene: &Scene, cam: &Camera, bg: &Vector3<f64>, dl: &Image, h: f64, rel: f64, abs: f64) -> FdReport {
    let grads = adpsplit::raster::render_backward(scene, cam, bg, dl).unwrap();
    let base_sig = contributor_signature(scene, cam);
    let mut rep = FdReport::default();
    for i in 0..scene.len() {
        for p in params_of(&scene.gaussians[i]) {
            let mut plus = scene.clone();
            perturb(&mut plus.gaussians[i], p, h);
            let mut minus = scene.clone();
            perturb(&mut minus.gaussians[i], p, -h);
            if contributor_signature(&plus, cam) != base_sig || contributor_signature(&minus, cam) != base_sig {
                rep.skipped += 1;
                continue;
            }
            let fd = (weighted_loss(&plus, cam, bg, dl) - weighted_loss(&minus, cam, bg, dl)) / (2.0 * h);
            let an = analytic(&grads, i, p);
            let err = (an - fd).abs();
            rep.checked += 1;
            if !(err <= abs || err <= rel * an.abs().max(fd.abs())) {
                rep.failures.push(format!("gaussian {i} {p:?}: analytic {an:e} fd {fd:e}"));
            }
        }
    }
    rep
}

/// Three Gaussians in front of a 12×12 camera with colours away from the
/// clamp and opacities below the cap, plus a random cotangent image.
pub fn fd_fixture(seed: u64) -> (Scene, Camera, Image) {
    let mut r = rng(seed);
    let spec = GaussianSpec {
        spread: 0.5,
        scale: (0.15, 0.5),
        opacity: (0.15, 0.85),
        rgb: (0.25, 0.75),
        sh_rest: 3,
        sh_rest_mag: 0.05,
    };
    let scene = random_scene(&mut r, 3, &spec);
    let cam = test_camera(12, 12);
    let dl = Image::from_pixels(12, 12, (0..144).map(|_| Vector3::from_fn(|_, _| r.random_range(-1.0..1.0))).collect());
    (scene, cam, dl)
}

// ------------------------------------------------------- shared fixtures

/// A t* problem: parent mean and covariance, ray origin and unit direction,
/// and a search bound that contains the minimizer well inside.
pub struct TCase {
    pub mu: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
    pub t_max: f64,
}

pub fn random_t_case(rng: &mut impl Rng) -> TCase {
    let mu = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let cov = random_spd(rng, 0.01, 1.0);
    let origin = mu + Vector3::from_fn(|_, _| normal(rng)).normalize() * rng.random_range(2.0..6.0);
    let aim = mu + Vector3::from_fn(|_, _| normal(rng)) * 0.3;
    let dir = (aim - origin).normalize();
    let t_max = 3.0 * (mu - origin).norm();
    TCase { mu, cov, origin, dir, t_max }
}

/// Error, dominance and band maps for the partition check. The error map is
/// a sum of random bumps, dominance is painted in random rectangles over a
/// small label alphabet, and some pixels have no dominant Gaussian.
pub struct MapTriple {
    pub w: usize,
    pub h: usize,
    pub e: Vec<f64>,
    pub dominant: Vec<Option<usize>>,
    pub candidates: BTreeSet<usize>,
}

pub fn random_map_triple(rng: &mut impl Rng, w: usize, h: usize) -> MapTriple {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(1..6))
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(1.5..8.0),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let noise = rng.random_range(0.0..0.3);
    let mut e: Vec<f64> = (0..w * h)
        .map(|p| {
            let (x, y) = ((p % w) as f64, (p / w) as f64);
            let s: f64 = bumps
                .iter()
                .map(|(cx, cy, r, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp())
                .sum();
            s + noise * rng.random_range(0.0..1.0)
        })
        .collect();
    let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    for v in &mut e {
        *v = (*v - lo) / (hi - lo);
    }
    let labels = rng.random_range(1..6usize);
    let mut dominant = vec![Some(0); w * h];
    for _ in 0..rng.random_range(3..12) {
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (x1, y1) = ((x0 + rng.random_range(1..w)).min(w), (y0 + rng.random_range(1..h)).min(h));
        let label = if rng.random_bool(0.15) { None } else { Some(rng.random_range(0..labels)) };
        for y in y0..y1 {
            for x in x0..x1 {
                dominant[y * w + x] = label;
            }
        }
    }
    let candidates = (0..labels).filter(|_| rng.random_bool(0.7)).collect();
    MapTriple { w, h, e, dominant, candidates }
}

/// Largest violation of `|e_rᵀ(μ_m − μ)| + σ_{m,r} ≤ √λ_r` over members and
/// merged axes. Negative means every member is strictly inside.
pub fn enclosure_violation(group: &MergeGroup, proposals: &[ChildProposal]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for r in 0..3 {
        let axis = group.rot.column(r).into_owned();
        for &m in &group.members {
            let p = &proposals[m];
            let off = axis.dot(&(p.mu - group.mu)).abs();
            let sigma = (axis.transpose() * proposal_cov(p) * axis)[0].max(0.0).sqrt();
            worst = worst.max(off + sigma - group.scale[r]);
        }
    }
    worst
}

/// A small split-step problem: a perturbed copy of a synthetic scene,
/// densification statistics from one backward pass per view, and a config
/// loose enough that every Gaussian is a candidate.
pub struct SplitFixture {
    pub scene: Scene,
    pub data: adpsplit::harness::SynthData,
    pub stats: adpsplit::adc::DensifyStats,
    pub cfg: adpsplit::AdpSplitConfig,
}

pub fn split_fixture(seed: u64, k: usize, cams: usize, size: usize, v_views: usize) -> SplitFixture {
    let data = adpsplit::harness::synth_scene(seed, k, cams, size);
    let mut r = rng(seed ^ 0xF1F1);
    let mut scene = data.gt_scene.clone();
    for g in &mut scene.gaussians {
        g.mu += Vector3::from_fn(|_, _| normal(&mut r) * 0.06);
        g.scale *= r.random_range(1.2..2.5);
        g.opacity = r.random_range(0.3..0.9);
        g.sh_dc *= 0.6;
    }
    let mut stats = adpsplit::adc::DensifyStats::new(scene.len());
    for (cam, gt) in data.cameras.iter().zip(&data.gt_images) {
        let out = adpsplit::raster::render(&scene, cam, &adpsplit::harness::BACKGROUND);
        let (_, dl) = adpsplit::harness::l1_loss(&out.image, gt).unwrap();
        let g = adpsplit::raster::render_backward(&scene, cam, &adpsplit::harness::BACKGROUND, &dl).unwrap();
        adpsplit::adc::accumulate_stats(&mut stats, &g);
    }
    let cfg = adpsplit::AdpSplitConfig {
        v_views,
        tau_g: 0.0,
        tau_s: 0.15,
        ..adpsplit::AdpSplitConfig::default()
    };
    SplitFixture { scene, data, stats, cfg }
}

/// Check opacity bookkeeping, population accounting and the per-candidate
/// insertion cap of one densification step. Returns the number of adaptive
/// candidates checked.
pub fn check_bookkeeping(
    before: &Scene,
    stats: &adpsplit::adc::DensifyStats,
    cfg: &adpsplit::AdpSplitConfig,
    d: &adpsplit::adc::Densified,
) -> Result<usize, String> {
    use adpsplit::adc::{select, Origin, SplitCase};
    let rep = &d.report;
    let (split, clones) = select(stats, before, cfg.tau_g, cfg.tau_s * before.extent);
    if rep.candidates.iter().map(|c| c.index).collect::<Vec<_>>() != split {
        return Err("candidate list differs from the selection".into());
    }
    if rep.clones != clones.len() {
        return Err(format!("{} clones reported, {} selected", rep.clones, clones.len()));
    }
    let removed = rep
        .candidates
        .iter()
        .filter(|c| matches!(c.case, SplitCase::Adaptive | SplitCase::Fallback | SplitCase::Vanilla))
        .count();
    let inserted: usize = rep.candidates.iter().map(|c| c.inserted).sum();
    let expect = before.len() - removed + inserted + clones.len();
    if rep.count_before != before.len() || rep.count_after != expect || d.scene.len() != expect {
        return Err(format!(
            "population: before {} after {} scene {} expected {expect}",
            rep.count_before,
            rep.count_after,
            d.scene.len()
        ));
    }
    let survivors = d.origins.iter().filter(|o| !matches!(o, Origin::New)).count();
    if survivors != before.len() - removed {
        return Err(format!("{survivors} survivors, expected {}", before.len() - removed));
    }
    // walk the insertion blocks in ascending source index
    let mut blocks: Vec<(usize, usize, Option<SplitCase>)> = rep
        .candidates
        .iter()
        .map(|c| (c.index, c.inserted, Some(c.case)))
        .chain(clones.iter().map(|&i| (i, 1, None)))
        .collect();
    blocks.sort_by_key(|b| b.0);
    let mut at = survivors;
    let mut adaptive = 0;
    for (i, n, case) in blocks {
        if n > cfg.n_max + 1 {
            return Err(format!("candidate {i} inserted {n} > {}", cfg.n_max + 1));
        }
        if case == Some(SplitCase::Adaptive) {
            let copy = &d.scene.gaussians[at + n - 1];
            let orig = &before.gaussians[i];
            let back = copy.opacity * n as f64;
            if (back - orig.opacity).abs() > 1e-12 {
                return Err(format!("candidate {i}: copy opacity × {n} = {back}, original {}", orig.opacity));
            }
            if copy.mu != orig.mu || copy.scale != orig.scale || copy.sh_dc != orig.sh_dc {
                return Err(format!("candidate {i}: parent copy differs beyond opacity"));
            }
            adaptive += 1;
        }
        at += n;
    }
    if at != d.scene.len() {
        return Err(format!("insertion blocks cover {at} of {}", d.scene.len()));
    }
    Ok(adaptive)
}
