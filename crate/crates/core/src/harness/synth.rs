//! Seeded synthetic scenes with self-consistent ground-truth images.

use nalgebra::{Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::exec::Exec;
use crate::raster::{render_with, Image};
use crate::scene::{rgb_to_dc, Camera, Gaussian3D, Scene};

/// Background colour used by all synthetic scenes.
pub const BACKGROUND: Vector3<f64> = Vector3::new(0.0, 0.0, 0.0);

/// Half-side of the cube that holds the ground-truth means.
const BOX_HALF: f64 = 0.4;
const CAMERA_RADIUS: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct SynthData {
    pub gt_scene: Scene,
    pub cameras: Vec<Camera>,
    pub gt_images: Vec<Image>,
}

impl SynthData {
    /// Ground-truth images rendered from `gt_scene` for each camera.
    pub fn from_scene(gt_scene: Scene, cameras: Vec<Camera>) -> Self {
        let gt_images = Exec::default().map(cameras.len(), |v| {
            render_with(&gt_scene, &cameras[v], &BACKGROUND, Exec::Sequential).image
        });
        SynthData {
            gt_scene,
            cameras,
            gt_images,
        }
    }

    /// Every fourth camera is held out for evaluation.
    pub fn is_test_view(v: usize) -> bool {
        v % 4 == 3
    }

    pub fn train_views(&self) -> Vec<usize> {
        (0..self.cameras.len()).filter(|&v| !Self::is_test_view(v)).collect()
    }

    pub fn test_views(&self) -> Vec<usize> {
        (0..self.cameras.len()).filter(|&v| Self::is_test_view(v)).collect()
    }
}

/// `k` random anisotropic Gaussians in a unit-extent volume, seen by
/// `cam_count` cameras on a ring around the centroid.
pub fn synth_scene(seed: u64, k: usize, cam_count: usize, image_size: usize) -> SynthData {
    assert!(k >= 1, "need at least one ground-truth Gaussian");
    assert!(cam_count >= 1 && image_size >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians: Vec<Gaussian3D> = (0..k).map(|_| random_gaussian(&mut rng)).collect();
    let gt_scene = Scene::new(gaussians, 1.0);
    let centroid = gt_scene.gaussians.iter().map(|g| g.mu).sum::<Vector3<f64>>() / k as f64;
    let cameras = ring_cameras(&centroid, cam_count, image_size);
    SynthData::from_scene(gt_scene, cameras)
}

fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian3D {
    let mu = Vector3::from_fn(|_, _| rng.random_range(-BOX_HALF..BOX_HALF));
    let scale = Vector3::from_fn(|_, _| (rng.random_range(0.025f64.ln()..0.12f64.ln())).exp());
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let mut rot = Quaternion::new(q[0], q[1], q[2], q[3]).normalize();
    if rot.w < 0.0 {
        rot = -rot;
    }
    let rgb = Vector3::from_fn(|_, _| rng.random_range(0.05..0.95));
    Gaussian3D {
        mu,
        scale,
        rot,
        opacity: rng.random_range(0.6..0.95),
        sh_dc: rgb_to_dc(&rgb),
        sh_rest: Vec::new(),
    }
}

/// Cameras evenly spaced in azimuth with alternating elevation, all looking
/// at `target`.
pub fn ring_cameras(target: &Vector3<f64>, count: usize, size: usize) -> Vec<Camera> {
    let up = Vector3::z();
    let focal = 1.4 * size as f64;
    (0..count)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / count as f64;
            let el: f64 = if i % 2 == 0 { 0.25 } else { 0.6 };
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            Camera::look_at(target + dir * CAMERA_RADIUS, *target, up, focal, size, size)
        })
        .collect()
}

/// Coarse starting point: `count` large grey isotropic Gaussians placed at
/// perturbed ground-truth means.
pub fn init_scene(gt: &Scene, seed: u64, count: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1A17);
    let count = count.clamp(1, gt.len());
    let picks = rand::seq::index::sample(&mut rng, gt.len(), count).into_vec();
    let gaussians = picks
        .into_iter()
        .map(|i| {
            let jitter = Vector3::from_fn(|_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.05 * z
            });
            Gaussian3D::isotropic(gt.gaussians[i].mu + jitter, 0.2, 0.5, rgb_to_dc(&Vector3::repeat(0.5)))
        })
        .collect();
    Scene::new(gaussians, gt.extent)
}
