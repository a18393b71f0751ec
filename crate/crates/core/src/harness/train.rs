//! Desk-scale training loop with scheduled densification.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Quaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adc::{accumulate_stats, adpsplit_step_with, vanilla_step, DensifyStats, Origin, SplitCase, SplitReport};
use crate::config::AdpSplitConfig;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::raster::{psnr, render_backward_with, render_with, Image};
use crate::scene::{Camera, Scene};

use super::synth::SynthData;

/// Which densification operator the schedule runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    VanillaBinary,
    VanillaN(usize),
    AdpSplit,
}

impl SplitMode {
    pub fn label(&self) -> String {
        match self {
            SplitMode::VanillaBinary => "vanilla-binary".into(),
            SplitMode::VanillaN(n) => format!("vanilla-n{n}"),
            SplitMode::AdpSplit => "adpsplit".into(),
        }
    }

    pub fn parse(s: &str) -> Result<SplitMode> {
        match s {
            "vanilla-binary" => Ok(SplitMode::VanillaBinary),
            "adpsplit" => Ok(SplitMode::AdpSplit),
            _ => s
                .strip_prefix("vanilla-n")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(SplitMode::VanillaN)
                .ok_or_else(|| Error::Usage(format!("unknown split mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_iters: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub t_interval: usize,
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.densify_from <= self.densify_until && self.densify_until <= self.total_iters) {
            return Err(Error::InvalidConfig(format!(
                "schedule needs densify_from <= densify_until <= total_iters, got {} / {} / {}",
                self.densify_from, self.densify_until, self.total_iters
            )));
        }
        if self.t_interval < 1 {
            return Err(Error::InvalidConfig("t_interval must be >= 1".into()));
        }
        Ok(())
    }

    pub fn densifies_at(&self, it: usize) -> bool {
        it >= self.densify_from.max(1) && it <= self.densify_until && it.is_multiple_of(self.t_interval)
    }
}

/// Optimizer settings and desk-scale experiment sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub k: usize,
    pub cameras: usize,
    pub image_size: usize,
    pub init_count: usize,
    pub total_iters: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub log_every: usize,
    /// Position learning rate at the first and last iteration, times the scene extent.
    pub lr_mu: f64,
    pub lr_mu_final: f64,
    /// On log-scale.
    pub lr_scale: f64,
    pub lr_rot: f64,
    /// On logit-opacity.
    pub lr_opacity: f64,
    pub lr_sh_dc: f64,
    pub lr_sh_rest: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 32,
            cameras: 12,
            image_size: 48,
            init_count: 4,
            total_iters: 3000,
            densify_from: 100,
            densify_until: 1200,
            log_every: 50,
            lr_mu: 0.004,
            lr_mu_final: 0.0004,
            lr_scale: 0.01,
            lr_rot: 0.005,
            lr_opacity: 0.05,
            lr_sh_dc: 0.01,
            lr_sh_rest: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-15,
        }
    }
}

impl RunConfig {
    pub fn schedule(&self, mode: SplitMode, seed: u64, cfg: &AdpSplitConfig) -> Schedule {
        Schedule {
            total_iters: self.total_iters,
            densify_from: self.densify_from,
            densify_until: self.densify_until,
            t_interval: cfg.t_interval,
            split_mode: mode,
            seed,
        }
    }
}

/// Operator settings used at desk scale: fewer sampled views and a gradient
/// threshold matched to pixel-unit view-space gradients on small images.
pub fn desk_config() -> AdpSplitConfig {
    AdpSplitConfig {
        v_views: 6,
        tau_g: 0.0001,
        ..AdpSplitConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub loss: f64,
    pub psnr: f64,
    pub gaussians: usize,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensifyRow {
    pub iteration: usize,
    pub round: usize,
    pub candidates: usize,
    pub adaptive: usize,
    pub fallback: usize,
    pub reset: usize,
    pub clones: usize,
    pub count_before: usize,
    pub count_after: usize,
}

impl DensifyRow {
    fn from_report(iteration: usize, round: usize, r: &SplitReport) -> Self {
        DensifyRow {
            iteration,
            round,
            candidates: r.candidates.len(),
            adaptive: r.count_case(SplitCase::Adaptive),
            fallback: r.count_case(SplitCase::Fallback),
            reset: r.count_case(SplitCase::Reset),
            clones: r.clones,
            count_before: r.count_before,
            count_after: r.count_after,
        }
    }
}

/// Evaluation rows, densification summaries and wall-clock timings. Timings
/// are kept apart so that the other tables are reproducible bit for bit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    pub densify: Vec<DensifyRow>,
    pub reports: Vec<SplitReport>,
    pub wall: Vec<(usize, f64)>,
}

impl MetricsLog {
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("iteration,loss,psnr,gaussians,rounds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:e},{:e},{},{}", r.iteration, r.loss, r.psnr, r.gaussians, r.rounds);
        }
        s
    }

    pub fn densify_csv(&self) -> String {
        let mut s = String::from("iteration,round,candidates,adaptive,fallback,reset,clones,count_before,count_after\n");
        for r in &self.densify {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.iteration, r.round, r.candidates, r.adaptive, r.fallback, r.reset, r.clones, r.count_before, r.count_after
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("iteration,seconds\n");
        for (it, t) in &self.wall {
            let _ = writeln!(s, "{it},{t:.6}");
        }
        s
    }

    /// Writes `metrics.csv`, `densify.csv` and `timing.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, body) in [
            ("metrics.csv", self.metrics_csv()),
            ("densify.csv", self.densify_csv()),
            ("timing.csv", self.timing_csv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.rows.last().map(|r| r.psnr)
    }

    /// Densification rounds completed when the held-out PSNR first reaches `target`.
    pub fn rounds_to_target(&self, target: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.psnr >= target).map(|r| r.rounds)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub scene: Scene,
    pub log: MetricsLog,
    pub rounds: usize,
}

/// Parameter layout of one Gaussian in the optimizer:
/// mean, log-scale, quaternion, logit-opacity, DC colour, higher SH.
const P_SCALE: usize = 3;
const P_ROT: usize = 6;
const P_OPACITY: usize = 10;
const P_DC: usize = 11;
const P_REST: usize = 14;

fn param_len(sh_rest: usize) -> usize {
    P_REST + 3 * sh_rest
}

const OPACITY_LOGIT_LIMIT: f64 = 12.0;
const MIN_SCALE: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(scene: &Scene) -> Self {
        let z: Vec<Vec<f64>> = scene.gaussians.iter().map(|g| vec![0.0; param_len(g.sh_rest.len())]).collect();
        Adam { m: z.clone(), v: z, t: 0 }
    }

    fn remap(&mut self, origins: &[Origin], scene: &Scene) {
        let fresh = |k: usize| vec![0.0; param_len(scene.gaussians[k].sh_rest.len())];
        let mut m = Vec::with_capacity(origins.len());
        let mut v = Vec::with_capacity(origins.len());
        for (k, o) in origins.iter().enumerate() {
            match *o {
                Origin::Untouched(i) | Origin::Touched(i) => {
                    m.push(self.m[i].clone());
                    v.push(self.v[i].clone());
                }
                Origin::Reset(_) | Origin::New => {
                    m.push(fresh(k));
                    v.push(fresh(k));
                }
            }
        }
        self.m = m;
        self.v = v;
    }

    fn step(&mut self, scene: &mut Scene, grads: &crate::raster::GradOutput, rc: &RunConfig, lr_mu: f64) {
        self.t += 1;
        let bc1 = 1.0 - rc.beta1.powi(self.t);
        let bc2 = 1.0 - rc.beta2.powi(self.t);
        for (i, g) in scene.gaussians.iter_mut().enumerate() {
            let n = param_len(g.sh_rest.len());
            let mut grad = vec![0.0; n];
            grad[..3].copy_from_slice(grads.d_mu[i].as_slice());
            for a in 0..3 {
                grad[P_SCALE + a] = grads.d_scale[i][a] * g.scale[a];
                grad[P_DC + a] = grads.d_sh_dc[i][a];
            }
            grad[P_ROT..P_ROT + 4].copy_from_slice(grads.d_rot[i].as_slice());
            grad[P_OPACITY] = grads.d_opacity[i] * g.opacity * (1.0 - g.opacity);
            for (c, d) in grads.d_sh_rest[i].iter().enumerate() {
                grad[P_REST + 3 * c..P_REST + 3 * c + 3].copy_from_slice(d.as_slice());
            }

            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut delta = vec![0.0; n];
            for p in 0..n {
                m[p] = rc.beta1 * m[p] + (1.0 - rc.beta1) * grad[p];
                v[p] = rc.beta2 * v[p] + (1.0 - rc.beta2) * grad[p] * grad[p];
                let lr = match p {
                    0..P_SCALE => lr_mu,
                    P_SCALE..P_ROT => rc.lr_scale,
                    P_ROT..P_OPACITY => rc.lr_rot,
                    P_OPACITY => rc.lr_opacity,
                    P_DC..P_REST => rc.lr_sh_dc,
                    _ => rc.lr_sh_rest,
                };
                delta[p] = lr * (m[p] / bc1) / ((v[p] / bc2).sqrt() + rc.adam_eps);
            }

            g.mu -= Vector3::new(delta[0], delta[1], delta[2]);
            for a in 0..3 {
                g.scale[a] = (g.scale[a] * (-delta[P_SCALE + a]).exp()).max(MIN_SCALE);
                g.sh_dc[a] -= delta[P_DC + a];
            }
            let q = Quaternion::new(
                g.rot.w - delta[P_ROT],
                g.rot.i - delta[P_ROT + 1],
                g.rot.j - delta[P_ROT + 2],
                g.rot.k - delta[P_ROT + 3],
            );
            let qn = q.norm();
            g.rot = if qn > 1e-12 { q / qn } else { Quaternion::identity() };
            let logit = (g.opacity / (1.0 - g.opacity)).ln() - delta[P_OPACITY];
            let logit = logit.clamp(-OPACITY_LOGIT_LIMIT, OPACITY_LOGIT_LIMIT);
            g.opacity = 1.0 / (1.0 + (-logit).exp());
            for (c, r) in g.sh_rest.iter_mut().enumerate() {
                for a in 0..3 {
                    r[a] -= delta[P_REST + 3 * c + a];
                }
            }
        }
    }
}

/// Mean absolute error over pixels and channels, and its gradient image.
pub fn l1_loss(rendered: &Image, gt: &Image) -> Result<(f64, Image)> {
    rendered.check_same_dims(gt)?;
    let n = (rendered.pixels().len() * 3) as f64;
    let mut loss = 0.0;
    let grad = rendered
        .pixels()
        .iter()
        .zip(gt.pixels())
        .map(|(r, g)| {
            let d = r - g;
            loss += d.abs().sum();
            d.map(|x| if x > 0.0 { 1.0 / n } else if x < 0.0 { -1.0 / n } else { 0.0 })
        })
        .collect();
    Ok((loss / n, Image::from_pixels(rendered.width, rendered.height, grad)))
}

/// Mean held-out PSNR of `scene` over `views`.
pub fn evaluate(scene: &Scene, cameras: &[Camera], gt: &[Image], views: &[usize], bg: &Vector3<f64>, exec: Exec) -> Result<f64> {
    let vals = exec.map(views.len(), |k| {
        let v = views[k];
        psnr(&render_with(scene, &cameras[v], bg, Exec::Sequential).image, &gt[v])
    });
    let mut sum = 0.0;
    for v in vals {
        sum += v?;
    }
    Ok(sum / views.len() as f64)
}

/// Seed of the densification step at iteration `it`.
pub fn step_seed(seed: u64, it: usize) -> u64 {
    let mut z = seed.wrapping_add((it as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Optimize `init` against the training views of `data`, densifying on the
/// schedule. Held-out metrics are logged every `rc.log_every` iterations and
/// at the last one.
#[allow(clippy::too_many_arguments)]
pub fn train(
    init: &Scene,
    data: &SynthData,
    background: &Vector3<f64>,
    schedule: &Schedule,
    cfg: &AdpSplitConfig,
    rc: &RunConfig,
    exec: Exec,
) -> Result<TrainOutput> {
    schedule.validate()?;
    cfg.validate()?;
    init.validate()?;
    if init.is_empty() {
        return Err(Error::InvalidConfig("initial scene is empty".into()));
    }
    let train_views = data.train_views();
    let mut test_views = data.test_views();
    if train_views.is_empty() {
        return Err(Error::InvalidConfig("no training cameras".into()));
    }
    if test_views.is_empty() {
        test_views = train_views.clone();
    }
    let train_cams: Vec<Camera> = train_views.iter().map(|&v| data.cameras[v].clone()).collect();
    let train_gt: Vec<Image> = train_views.iter().map(|&v| data.gt_images[v].clone()).collect();

    let start = Instant::now();
    let mut scene = init.clone();
    let mut adam = Adam::new(&scene);
    let mut stats = DensifyStats::new(scene.len());
    let mut log = MetricsLog::default();
    let mut rounds = 0;
    let log_every = rc.log_every.max(1);

    for it in 1..=schedule.total_iters {
        let k = (it - 1) % train_cams.len();
        let out = render_with(&scene, &train_cams[k], background, exec);
        let (loss, dl) = l1_loss(&out.image, &train_gt[k])?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it, loss });
        }
        let grads = render_backward_with(&scene, &train_cams[k], background, &dl, exec)?;
        accumulate_stats(&mut stats, &grads);
        let frac = it as f64 / schedule.total_iters as f64;
        let lr_mu = rc.lr_mu * (rc.lr_mu_final / rc.lr_mu).powf(frac) * scene.extent;
        adam.step(&mut scene, &grads, rc, lr_mu);
        if scene.gaussians.iter().any(|g| !g.mu.iter().all(|x| x.is_finite())) {
            return Err(Error::Diverged { iteration: it, loss: f64::NAN });
        }

        if schedule.densifies_at(it) {
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed(schedule.seed, it));
            let d = match schedule.split_mode {
                SplitMode::VanillaBinary => vanilla_step(&scene, &stats, cfg, 2, &mut rng),
                SplitMode::VanillaN(n) => vanilla_step(&scene, &stats, cfg, n, &mut rng),
                SplitMode::AdpSplit => {
                    adpsplit_step_with(&scene, &train_cams, &train_gt, &stats, cfg, background, &mut rng, exec)?.0
                }
            };
            rounds += 1;
            adam.remap(&d.origins, &d.scene);
            log.densify.push(DensifyRow::from_report(it, rounds, &d.report));
            log.reports.push(d.report);
            scene = d.scene;
            stats = d.stats;
        }

        if it % log_every == 0 || it == schedule.total_iters {
            let p = evaluate(&scene, &data.cameras, &data.gt_images, &test_views, background, exec)?;
            log.rows.push(MetricsRow {
                iteration: it,
                loss,
                psnr: p,
                gaussians: scene.len(),
                rounds,
            });
            log.wall.push((it, start.elapsed().as_secs_f64()));
        }
    }
    Ok(TrainOutput { scene, log, rounds })
}
