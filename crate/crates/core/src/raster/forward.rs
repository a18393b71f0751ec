use nalgebra::{Vector2, Vector3};

use super::image::Image;
use super::project::project_indexed;
use super::{ALPHA_CAP, ALPHA_MIN};
use crate::exec::Exec;
use crate::scene::{sh, Camera, Scene};

/// Rendered image plus the per-pixel dominant Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// Row-major; `None` where no splat reaches `ALPHA_MIN`.
    pub dominant: Vec<Option<usize>>,
    pub background: Vector3<f64>,
}

impl RenderOutput {
    pub fn dominant_at(&self, x: usize, y: usize) -> Option<usize> {
        self.dominant[y * self.image.width + x]
    }
}

/// One splat's contribution at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub index: usize,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
    /// `opacity * G` exceeded `ALPHA_CAP`.
    pub capped: bool,
}

/// A splat ready for compositing in one view.
#[derive(Debug, Clone)]
pub(crate) struct PreparedSplat {
    pub index: usize,
    pub mean: Vector2<f64>,
    /// Inverse 2D covariance as (a, b, c) of [[a, b], [b, c]].
    pub conic: (f64, f64, f64),
    pub opacity: f64,
    pub color: Vector3<f64>,
    /// 0 <= raw colour <= 1 per channel, i.e. the clamp is inactive.
    pub color_pass: [bool; 3],
    pub x0: usize,
    pub x1: usize,
}

/// All splats of one view sorted front to back, bucketed by row.
pub(crate) struct Prepared {
    pub splats: Vec<PreparedSplat>,
    /// Per image row, indices into `splats` in depth order.
    pub rows: Vec<Vec<u32>>,
    pub visible: Vec<bool>,
    pub width: usize,
    pub height: usize,
}

pub(crate) fn prepare(scene: &Scene, cam: &Camera) -> Prepared {
    let (w, h) = (cam.width, cam.height);
    let mut visible = vec![false; scene.len()];
    let mut staged = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        let Ok(s) = project_indexed(g, cam, i) else {
            continue;
        };
        let Some(r) = s.cutoff_radius(g.opacity) else {
            continue;
        };
        let lo_x = (s.mean2d.x - r).ceil().max(0.0);
        let hi_x = (s.mean2d.x + r).floor().min(w as f64 - 1.0);
        let lo_y = (s.mean2d.y - r).ceil().max(0.0);
        let hi_y = (s.mean2d.y + r).floor().min(h as f64 - 1.0);
        if !(lo_x <= hi_x && lo_y <= hi_y) {
            continue;
        }
        visible[i] = true;
        let conic = s.conic();
        let dir = (g.mu - cam.center).normalize();
        let raw = sh::sh_to_rgb_unclamped(g, &dir);
        let color_pass = [0, 1, 2].map(|c| (0.0..=1.0).contains(&raw[c]));
        staged.push((
            s.depth,
            lo_y as usize,
            hi_y as usize,
            PreparedSplat {
                index: i,
                mean: s.mean2d,
                conic: (conic[(0, 0)], 0.5 * (conic[(0, 1)] + conic[(1, 0)]), conic[(1, 1)]),
                opacity: g.opacity,
                color: raw.map(|v| v.clamp(0.0, 1.0)),
                color_pass,
                x0: lo_x as usize,
                x1: hi_x as usize,
            },
        ));
    }
    staged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.3.index.cmp(&b.3.index)));
    let mut rows = vec![Vec::new(); h];
    let mut splats = Vec::with_capacity(staged.len());
    for (k, (_, y0, y1, s)) in staged.into_iter().enumerate() {
        for row in &mut rows[y0..=y1] {
            row.push(k as u32);
        }
        splats.push(s);
    }
    Prepared {
        splats,
        rows,
        visible,
        width: w,
        height: h,
    }
}

/// Gaussian falloff value and offset of a splat at pixel `p`.
#[inline]
pub(crate) fn falloff(s: &PreparedSplat, x: usize, y: usize) -> (f64, Vector2<f64>) {
    let d = Vector2::new(x as f64 - s.mean.x, y as f64 - s.mean.y);
    let (a, b, c) = s.conic;
    let q = a * d.x * d.x + 2.0 * b * d.x * d.y + c * d.y * d.y;
    ((-0.5 * q).exp(), d)
}

/// Walk the contributors of pixel `(x, y)` front to back.
#[inline]
pub(crate) fn for_each_contribution(
    prep: &Prepared,
    x: usize,
    y: usize,
    mut f: impl FnMut(u32, &PreparedSplat, f64, f64, bool, f64, Vector2<f64>),
) -> f64 {
    let mut t = 1.0;
    for &k in &prep.rows[y] {
        let s = &prep.splats[k as usize];
        if x < s.x0 || x > s.x1 {
            continue;
        }
        let (g, d) = falloff(s, x, y);
        let raw = s.opacity * g;
        let capped = raw > ALPHA_CAP;
        let alpha = if capped { ALPHA_CAP } else { raw };
        if alpha < ALPHA_MIN {
            continue;
        }
        f(k, s, alpha, t, capped, g, d);
        t *= 1.0 - alpha;
    }
    t
}

pub fn render(scene: &Scene, cam: &Camera, background: &Vector3<f64>) -> RenderOutput {
    render_with(scene, cam, background, Exec::default())
}

/// Render with an explicit execution policy; the output does not depend on it.
pub fn render_with(
    scene: &Scene,
    cam: &Camera,
    background: &Vector3<f64>,
    exec: Exec,
) -> RenderOutput {
    let prep = prepare(scene, cam);
    let rows = exec.map(prep.height, |y| {
        let mut colors = Vec::with_capacity(prep.width);
        let mut dom = Vec::with_capacity(prep.width);
        for x in 0..prep.width {
            let mut color = Vector3::zeros();
            let mut best: Option<(usize, f64)> = None;
            let t_final = for_each_contribution(&prep, x, y, |_, s, alpha, t, _, _, _| {
                let w = t * alpha;
                color += s.color * w;
                // strict > keeps the front-most splat on ties
                if best.is_none_or(|(_, bw)| w > bw) {
                    best = Some((s.index, w));
                }
            });
            colors.push(color + background * t_final);
            dom.push(best.map(|(i, _)| i));
        }
        (colors, dom)
    });
    let mut data = Vec::with_capacity(prep.width * prep.height);
    let mut dominant = Vec::with_capacity(prep.width * prep.height);
    for (c, d) in rows {
        data.extend(c);
        dominant.extend(d);
    }
    RenderOutput {
        image: Image::from_pixels(prep.width, prep.height, data),
        dominant,
        background: *background,
    }
}

/// Per-pixel contributor lists and final transmittance, row-major.
pub fn render_trace(scene: &Scene, cam: &Camera) -> Vec<(Vec<Contribution>, f64)> {
    let prep = prepare(scene, cam);
    let mut out = Vec::with_capacity(prep.width * prep.height);
    for y in 0..prep.height {
        for x in 0..prep.width {
            let mut list = Vec::new();
            let t_final = for_each_contribution(&prep, x, y, |_, s, alpha, t, capped, _, _| {
                list.push(Contribution {
                    index: s.index,
                    alpha,
                    transmittance: t,
                    capped,
                });
            });
            out.push((list, t_final));
        }
    }
    out
}
