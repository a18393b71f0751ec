//! Stage 1 of the adaptive split: normalized L1 error maps, thresholding,
//! erosion, error bands, and partitioning of high-error pixels into
//! connected per-candidate regions with PCA statistics.

use std::collections::BTreeSet;

use nalgebra::{Vector2, Vector3};

use crate::config::AdpSplitConfig;
use crate::error::Result;
use crate::raster::Image;

/// Smallest standard deviation assigned to a region axis, in pixels.
pub const SIGMA_FLOOR: f64 = 0.5;

/// Row-major 2D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, v: T) -> Self {
        Grid {
            width,
            height,
            data: vec![v; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height);
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn at(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }
}

/// Error maps of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMaps {
    /// Normalized per-pixel L1 error in `[0, 1]`.
    pub e: Grid<f64>,
    /// High-error mask after erosion.
    pub m: Grid<bool>,
    /// Error band, defined wherever `e > tau_l1` (computed before erosion).
    pub b: Grid<Option<usize>>,
}

impl ErrorMaps {
    pub fn compute(rendered: &Image, gt: &Image, cfg: &AdpSplitConfig) -> Result<Self> {
        let e = error_map(rendered, gt)?;
        let m = erode(&metric_map(&e, cfg.tau_l1), cfg.r_erode);
        let b = band_map(&e, cfg.tau_l1, cfg.l_bands);
        Ok(ErrorMaps { e, m, b })
    }
}

/// Min-max normalized sum of absolute channel differences. A constant raw
/// error map normalizes to all zeros.
pub fn error_map(rendered: &Image, gt: &Image) -> Result<Grid<f64>> {
    rendered.check_same_dims(gt)?;
    let raw: Vec<f64> = rendered
        .pixels()
        .iter()
        .zip(gt.pixels())
        .map(|(a, b)| (a - b).abs().sum())
        .collect();
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let data = if hi > lo {
        let span = hi - lo;
        raw.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Ok(Grid::from_vec(rendered.width, rendered.height, data))
}

/// `e > tau_l1`, strictly.
pub fn metric_map(e: &Grid<f64>, tau_l1: f64) -> Grid<bool> {
    Grid::from_vec(e.width, e.height, e.data.iter().map(|&v| v > tau_l1).collect())
}

/// Offsets `lo..=hi` covered by a square footprint of side `r`: centred, with
/// even sides extending one pixel further toward the top-left.
pub fn footprint_range(r: usize) -> (isize, isize) {
    let lo = -((r / 2) as isize);
    (lo, lo + r as isize - 1)
}

/// Binary erosion with a square footprint of side `r_erode`. Footprint cells
/// outside the image are ignored. `r_erode <= 1` is the identity.
pub fn erode(m: &Grid<bool>, r_erode: usize) -> Grid<bool> {
    if r_erode <= 1 {
        return m.clone();
    }
    let (lo, hi) = footprint_range(r_erode);
    let (w, h) = (m.width as isize, m.height as isize);
    // separable: a pixel survives iff every in-image row run and column run is set
    let horiz = Grid::from_fn(m.width, m.height, |x, y| {
        (lo..=hi).all(|dx| {
            let xx = x as isize + dx;
            xx < 0 || xx >= w || *m.at(xx as usize, y)
        })
    });
    Grid::from_fn(m.width, m.height, |x, y| {
        (lo..=hi).all(|dy| {
            let yy = y as isize + dy;
            yy < 0 || yy >= h || *horiz.at(x, yy as usize)
        })
    })
}

/// Equal-width bands over `[tau_l1, 1]`; `None` where `e <= tau_l1`.
pub fn band_map(e: &Grid<f64>, tau_l1: f64, l_bands: usize) -> Grid<Option<usize>> {
    let data = e.data.iter().map(|&v| band_of(v, tau_l1, l_bands)).collect();
    Grid::from_vec(e.width, e.height, data)
}

pub fn band_of(e: f64, tau_l1: f64, l_bands: usize) -> Option<usize> {
    if e > tau_l1 {
        let f = ((e - tau_l1) / (1.0 - tau_l1) * l_bands as f64).floor();
        Some((f as usize).min(l_bands - 1))
    } else {
        None
    }
}

/// Pixels of one connected error region, before statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRegion {
    pub candidate: usize,
    pub band: usize,
    /// Row-major sorted `(x, y)`; the first entry is the seed.
    pub pixels: Vec<(usize, usize)>,
}

/// Maximal 8-connected groups of pixels with `m = 1`, the same dominant
/// candidate and the same band; groups smaller than `m_min` are dropped.
/// Output is ordered by seed pixel in row-major order.
pub fn partition(
    maps: &ErrorMaps,
    dominant: &[Option<usize>],
    candidates: &BTreeSet<usize>,
    m_min: usize,
) -> Vec<RawRegion> {
    let (w, h) = (maps.m.width, maps.m.height);
    assert_eq!(dominant.len(), w * h, "dominant map size");
    let key = |p: usize| -> Option<(usize, usize)> {
        if !maps.m.data[p] {
            return None;
        }
        let c = dominant[p].filter(|c| candidates.contains(c))?;
        Some((c, maps.b.data[p].expect("band defined where m = 1")))
    };

    // two-pass union-find labelling
    let mut parent: Vec<usize> = (0..w * h).collect();
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    let keys: Vec<Option<(usize, usize)>> = (0..w * h).map(key).collect();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let Some(k) = keys[p] else { continue };
            // previously scanned 8-neighbours: W, NW, N, NE
            let mut neighbours = [None; 4];
            if x > 0 {
                neighbours[0] = Some(p - 1);
            }
            if y > 0 {
                if x > 0 {
                    neighbours[1] = Some(p - w - 1);
                }
                neighbours[2] = Some(p - w);
                if x + 1 < w {
                    neighbours[3] = Some(p - w + 1);
                }
            }
            for q in neighbours.into_iter().flatten() {
                if keys[q] == Some(k) {
                    let (ra, rb) = (find(&mut parent, p), find(&mut parent, q));
                    if ra != rb {
                        let (lo, hi) = (ra.min(rb), ra.max(rb));
                        parent[hi] = lo;
                    }
                }
            }
        }
    }

    // roots are the smallest member index, i.e. the row-major seed
    let mut slot = vec![usize::MAX; w * h];
    let mut regions: Vec<RawRegion> = Vec::new();
    for p in 0..w * h {
        let Some((c, band)) = keys[p] else { continue };
        let root = find(&mut parent, p);
        if slot[root] == usize::MAX {
            slot[root] = regions.len();
            regions.push(RawRegion {
                candidate: c,
                band,
                pixels: Vec::new(),
            });
        }
        regions[slot[root]].pixels.push((p % w, p / w));
    }
    regions.retain(|r| r.pixels.len() >= m_min);
    regions
}

/// One retained error region with its statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRegion {
    pub candidate: usize,
    pub view: usize,
    pub band: usize,
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    pub centroid: Vector2<f64>,
    /// Dominant PCA direction, unit length, canonical sign (x > 0, or y > 0
    /// when x = 0).
    pub e1: Vector2<f64>,
    /// `(-e1.y, e1.x)`.
    pub e2: Vector2<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Ground-truth colour at the pixel nearest the centroid.
    pub gt_rgb: Vector3<f64>,
}

impl ErrorRegion {
    pub fn seed(&self) -> (usize, usize) {
        self.pixels[0]
    }
}

/// Centroid, population covariance PCA and sampled ground-truth colour.
///
/// Both standard deviations are floored at [`SIGMA_FLOOR`]; the floor on
/// `sigma1` only matters for regions smaller than a couple of pixels.
pub fn region_stats(region: RawRegion, view: usize, gt: &Image) -> ErrorRegion {
    let n = region.pixels.len() as f64;
    assert!(n >= 1.0, "empty region");
    let (sx, sy) = region
        .pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
    let centroid = Vector2::new(sx / n, sy / n);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for &(x, y) in &region.pixels {
        let dx = x as f64 - centroid.x;
        let dy = y as f64 - centroid.y;
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
    }
    let (cxx, cxy, cyy) = (cxx / n, cxy / n, cyy / n);
    let (l1, l2, e1) = sym2_eigen(cxx, cxy, cyy);
    let sigma2 = l2.max(0.0).sqrt().max(SIGMA_FLOOR);
    let sigma1 = l1.max(0.0).sqrt().max(sigma2);
    let gx = (centroid.x.round() as usize).min(gt.width - 1);
    let gy = (centroid.y.round() as usize).min(gt.height - 1);
    ErrorRegion {
        candidate: region.candidate,
        view,
        band: region.band,
        area: region.pixels.len(),
        pixels: region.pixels,
        centroid,
        e1,
        e2: Vector2::new(-e1.y, e1.x),
        sigma1,
        sigma2,
        gt_rgb: gt.get(gx, gy),
    }
}

/// Eigen-decomposition of [[a, b], [b, c]]: (larger, smaller, unit
/// eigenvector of the larger) with canonical sign.
pub fn sym2_eigen(a: f64, b: f64, c: f64) -> (f64, f64, Vector2<f64>) {
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l1, l2) = (mid + rad, mid - rad);
    let v = if b != 0.0 {
        // pick the better-conditioned of the two equivalent null-space forms
        if a >= c {
            Vector2::new(l1 - c, b)
        } else {
            Vector2::new(b, l1 - a)
        }
    } else if a >= c {
        Vector2::new(1.0, 0.0)
    } else {
        Vector2::new(0.0, 1.0)
    };
    let v = v.normalize();
    let v = if v.x < 0.0 || (v.x == 0.0 && v.y < 0.0) { -v } else { v };
    (l1, l2, v)
}
