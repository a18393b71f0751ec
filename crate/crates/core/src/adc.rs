//! Adaptive density control: gradient statistics, candidate selection, clone,
//! the fixed-cardinality vanilla split, and the adaptive split step.

use std::collections::BTreeSet;

use nalgebra::{Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::child_init::{init_child, ChildProposal};
use crate::config::AdpSplitConfig;
use crate::error::{Error, Result};
use crate::error_partition::{partition, region_stats, ErrorMaps, ErrorRegion};
use crate::exec::Exec;
use crate::merge::{cap_children, merge_edge_count, merge_groups, MergeGroup};
use crate::raster::{render_with, GradOutput, Image, RenderOutput};
use crate::scene::{rgb_to_dc, rotmat_to_quat, Camera, Gaussian3D, Scene};

/// Accumulated view-space gradient norms per Gaussian.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyStats {
    pub grad_accum: Vec<f64>,
    pub denom: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            grad_accum: vec![0.0; n],
            denom: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_accum.is_empty()
    }

    /// Average statistic `g_i`, defined where the Gaussian was seen at least once.
    pub fn g(&self, i: usize) -> Option<f64> {
        (self.denom[i] > 0).then(|| self.grad_accum[i] / self.denom[i] as f64)
    }

    pub fn clear(&mut self, i: usize) {
        self.grad_accum[i] = 0.0;
        self.denom[i] = 0;
    }

    /// Carry statistics over to a densified scene.
    pub fn remap(&self, origins: &[Origin]) -> DensifyStats {
        let mut out = DensifyStats::new(origins.len());
        for (k, o) in origins.iter().enumerate() {
            if let Origin::Untouched(i) = *o {
                out.grad_accum[k] = self.grad_accum[i];
                out.denom[k] = self.denom[i];
            }
        }
        out
    }
}

/// `grad_accum += |viewspace_grad|` and `denom += 1` for visible Gaussians.
pub fn accumulate_stats(stats: &mut DensifyStats, grads: &GradOutput) {
    assert_eq!(stats.len(), grads.len(), "stats and gradients cover different scenes");
    for i in 0..grads.len() {
        if grads.visible[i] {
            stats.grad_accum[i] += grads.viewspace_grad[i].norm();
            stats.denom[i] += 1;
        }
    }
}

/// Split and clone sets, ascending: high-gradient Gaussians partitioned by
/// whether their largest scale exceeds `tau_s_abs`.
pub fn select(stats: &DensifyStats, scene: &Scene, tau_g: f64, tau_s_abs: f64) -> (Vec<usize>, Vec<usize>) {
    let mut split = Vec::new();
    let mut clone = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        let Some(gi) = stats.g(i) else { continue };
        if gi >= tau_g {
            if g.max_scale() > tau_s_abs {
                split.push(i);
            } else {
                clone.push(i);
            }
        }
    }
    (split, clone)
}

/// `n` children with means sampled from the parent distribution and scales
/// shrunk by `eta * n`; everything else is copied.
pub fn vanilla_split(parent: &Gaussian3D, n: usize, eta: f64, rng: &mut impl Rng) -> Vec<Gaussian3D> {
    let r = parent.rotation();
    let scale = parent.scale / (eta * n as f64);
    (0..n)
        .map(|_| {
            let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let delta = Vector3::from(z).component_mul(&parent.scale);
            Gaussian3D {
                mu: parent.mu + r * delta,
                scale,
                ..parent.clone()
            }
        })
        .collect()
}

pub fn clone(parent: &Gaussian3D) -> Gaussian3D {
    parent.clone()
}

/// Where a Gaussian of a densified scene came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Origin {
    /// Unchanged; statistics and optimizer state carry over.
    Untouched(usize),
    /// Kept in place but involved in densification (clone source):
    /// optimizer state carries over, statistics are cleared.
    Touched(usize),
    /// Kept in place with its optimization status reset.
    Reset(usize),
    /// Newly inserted.
    New,
}

/// How one split candidate was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCase {
    /// Error-driven children plus a reduced-opacity parent copy.
    Adaptive,
    /// Never dominant in the sampled views: vanilla split with two children.
    Fallback,
    /// Dominant but no usable region: parent kept and reset.
    Reset,
    /// Fixed-cardinality split (vanilla modes).
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub index: usize,
    pub case: SplitCase,
    /// Retained regions per sampled view, in sampling order.
    pub regions_per_view: Vec<usize>,
    pub proposals: usize,
    pub proposals_dropped: usize,
    pub merge_edges: usize,
    pub merged: usize,
    /// Children inserted, including the parent copy.
    pub inserted: usize,
    pub fallback: bool,
    pub reset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub views: Vec<usize>,
    pub candidates: Vec<CandidateRecord>,
    pub clones: usize,
    pub count_before: usize,
    pub count_after: usize,
}

impl SplitReport {
    pub fn count_case(&self, case: SplitCase) -> usize {
        self.candidates.iter().filter(|c| c.case == case).count()
    }
}

/// Result of one densification step.
#[derive(Debug, Clone)]
pub struct Densified {
    pub scene: Scene,
    pub origins: Vec<Origin>,
    pub stats: DensifyStats,
    pub report: SplitReport,
}

/// Per-view intermediate results of an adaptive step, for inspection.
#[derive(Debug, Clone)]
pub struct SplitArtifacts {
    pub views: Vec<usize>,
    pub renders: Vec<RenderOutput>,
    pub maps: Vec<ErrorMaps>,
    pub regions: Vec<ErrorRegion>,
    pub proposals: Vec<ChildProposal>,
    pub children: Vec<MergeGroup>,
}

/// Vanilla densification: clone small candidates, split large ones into `n`.
pub fn vanilla_step(
    scene: &Scene,
    stats: &DensifyStats,
    cfg: &AdpSplitConfig,
    n: usize,
    rng: &mut impl Rng,
) -> Densified {
    let (split, clones) = select(stats, scene, cfg.tau_g, cfg.tau_s * scene.extent);
    let plan: Vec<(usize, Plan)> = merge_plans(
        split.iter().map(|&i| (i, Plan::Vanilla(n))),
        clones.iter().map(|&i| (i, Plan::Clone)),
    );
    let candidates = split
        .iter()
        .map(|&i| CandidateRecord {
            index: i,
            case: SplitCase::Vanilla,
            regions_per_view: vec![],
            proposals: 0,
            proposals_dropped: 0,
            merge_edges: 0,
            merged: 0,
            inserted: n,
            fallback: false,
            reset: false,
        })
        .collect();
    assemble(scene, stats, &plan, cfg, rng, Vec::new(), candidates, clones.len())
}

pub fn adpsplit_step(
    scene: &Scene,
    cameras: &[Camera],
    gt_images: &[Image],
    stats: &DensifyStats,
    cfg: &AdpSplitConfig,
    background: &Vector3<f64>,
    rng: &mut impl Rng,
) -> Result<Densified> {
    adpsplit_step_with(scene, cameras, gt_images, stats, cfg, background, rng, Exec::default())
        .map(|(d, _)| d)
}

/// The adaptive split step with its intermediate artifacts.
#[allow(clippy::too_many_arguments)]
pub fn adpsplit_step_with(
    scene: &Scene,
    cameras: &[Camera],
    gt_images: &[Image],
    stats: &DensifyStats,
    cfg: &AdpSplitConfig,
    background: &Vector3<f64>,
    rng: &mut impl Rng,
    exec: Exec,
) -> Result<(Densified, SplitArtifacts)> {
    cfg.validate()?;
    if cameras.len() != gt_images.len() {
        return Err(Error::InvalidConfig(format!(
            "{} cameras but {} ground-truth images",
            cameras.len(),
            gt_images.len()
        )));
    }
    if cfg.v_views > cameras.len() {
        return Err(Error::InvalidConfig(format!(
            "v_views = {} exceeds the {} training cameras",
            cfg.v_views,
            cameras.len()
        )));
    }
    assert_eq!(stats.len(), scene.len(), "stats cover a different scene");

    // stage 0: sample and render views
    let views: Vec<usize> = rand::seq::index::sample(rng, cameras.len(), cfg.v_views).into_vec();
    let per_view = exec.map(views.len(), |k| -> Result<(RenderOutput, ErrorMaps)> {
        let v = views[k];
        let out = render_with(scene, &cameras[v], background, Exec::Sequential);
        let maps = ErrorMaps::compute(&out.image, &gt_images[v], cfg)?;
        Ok((out, maps))
    });
    let mut renders = Vec::with_capacity(views.len());
    let mut maps = Vec::with_capacity(views.len());
    for r in per_view {
        let (o, m) = r?;
        renders.push(o);
        maps.push(m);
    }

    let (split, clones) = select(stats, scene, cfg.tau_g, cfg.tau_s * scene.extent);
    let split_set: BTreeSet<usize> = split.iter().copied().collect();

    // stage 1: regions per view, grouped per candidate
    let mut dominant_somewhere: BTreeSet<usize> = BTreeSet::new();
    let mut regions_by_view: Vec<Vec<ErrorRegion>> = Vec::with_capacity(views.len());
    for (k, &v) in views.iter().enumerate() {
        for d in renders[k].dominant.iter().flatten() {
            if split_set.contains(d) {
                dominant_somewhere.insert(*d);
            }
        }
        let raw = partition(&maps[k], &renders[k].dominant, &split_set, cfg.m_min);
        regions_by_view.push(raw.into_iter().map(|r| region_stats(r, v, &gt_images[v])).collect());
    }

    // stages 2-3 per candidate
    struct Outcome {
        record: CandidateRecord,
        proposals: Vec<ChildProposal>,
        children: Vec<MergeGroup>,
    }
    let outcomes = exec.map(split.len(), |c| -> Result<Outcome> {
        let i = split[c];
        let parent = &scene.gaussians[i];
        let mut regions_per_view = Vec::with_capacity(views.len());
        let mut proposals = Vec::new();
        let mut dropped = 0;
        for (k, &v) in views.iter().enumerate() {
            let mine: Vec<&ErrorRegion> = regions_by_view[k].iter().filter(|r| r.candidate == i).collect();
            regions_per_view.push(mine.len());
            for r in mine {
                match init_child(parent, i, r, &cameras[v], cfg)? {
                    Some(p) => proposals.push(p),
                    None => dropped += 1,
                }
            }
        }
        let merged = merge_groups(&proposals, cfg.gamma_d, cfg.gamma_c);
        let merge_edges = merge_edge_count(&proposals, cfg.gamma_d, cfg.gamma_c);
        let n_merged = merged.len();
        let children = cap_children(merged, cfg.n_max);
        let case = if !dominant_somewhere.contains(&i) {
            SplitCase::Fallback
        } else if children.is_empty() {
            SplitCase::Reset
        } else {
            SplitCase::Adaptive
        };
        let inserted = match case {
            SplitCase::Adaptive => children.len() + 1,
            SplitCase::Fallback => 2,
            _ => 0,
        };
        Ok(Outcome {
            record: CandidateRecord {
                index: i,
                case,
                regions_per_view,
                proposals: proposals.len(),
                proposals_dropped: dropped,
                merge_edges,
                merged: n_merged,
                inserted,
                fallback: case == SplitCase::Fallback,
                reset: case == SplitCase::Reset,
            },
            proposals,
            children,
        })
    });

    let mut records = Vec::with_capacity(split.len());
    let mut all_proposals = Vec::new();
    let mut all_children = Vec::new();
    let mut plans = Vec::with_capacity(split.len());
    for (c, o) in outcomes.into_iter().enumerate() {
        let o = o?;
        let i = split[c];
        plans.push((
            i,
            match o.record.case {
                SplitCase::Adaptive => Plan::Adaptive(o.children.clone()),
                SplitCase::Fallback => Plan::Vanilla(2),
                _ => Plan::Reset,
            },
        ));
        records.push(o.record);
        all_proposals.extend(o.proposals);
        all_children.extend(o.children);
    }
    let plan = merge_plans(plans.into_iter(), clones.iter().map(|&i| (i, Plan::Clone)));
    let densified = assemble(scene, stats, &plan, cfg, rng, views.clone(), records, clones.len());
    let regions = regions_by_view.into_iter().flatten().collect();
    Ok((
        densified,
        SplitArtifacts {
            views,
            renders,
            maps,
            regions,
            proposals: all_proposals,
            children: all_children,
        },
    ))
}

#[derive(Debug, Clone)]
enum Plan {
    Clone,
    Vanilla(usize),
    Adaptive(Vec<MergeGroup>),
    Reset,
}

fn merge_plans(
    a: impl Iterator<Item = (usize, Plan)>,
    b: impl Iterator<Item = (usize, Plan)>,
) -> Vec<(usize, Plan)> {
    let mut v: Vec<(usize, Plan)> = a.chain(b).collect();
    v.sort_by_key(|(i, _)| *i);
    v
}

/// Apply per-Gaussian plans in ascending index order: surviving Gaussians
/// keep their relative order, insertions are appended.
#[allow(clippy::too_many_arguments)]
fn assemble(
    scene: &Scene,
    stats: &DensifyStats,
    plan: &[(usize, Plan)],
    cfg: &AdpSplitConfig,
    rng: &mut impl Rng,
    views: Vec<usize>,
    candidates: Vec<CandidateRecord>,
    clones: usize,
) -> Densified {
    let mut action: Vec<Option<&Plan>> = vec![None; scene.len()];
    for (i, p) in plan {
        action[*i] = Some(p);
    }
    let mut gaussians = Vec::with_capacity(scene.len());
    let mut origins = Vec::with_capacity(scene.len());
    for (i, g) in scene.gaussians.iter().enumerate() {
        let origin = match action[i] {
            None => Origin::Untouched(i),
            Some(Plan::Clone) => Origin::Touched(i),
            Some(Plan::Reset) => Origin::Reset(i),
            Some(Plan::Vanilla(_)) | Some(Plan::Adaptive(_)) => continue,
        };
        gaussians.push(g.clone());
        origins.push(origin);
    }
    for (i, p) in plan {
        let parent = &scene.gaussians[*i];
        let inserted: Vec<Gaussian3D> = match p {
            Plan::Clone => vec![clone(parent)],
            Plan::Vanilla(n) => vanilla_split(parent, *n, cfg.eta, rng),
            Plan::Adaptive(children) => {
                let mut out: Vec<Gaussian3D> = children.iter().map(|c| child_gaussian(c, parent)).collect();
                out.push(Gaussian3D {
                    opacity: parent.opacity / (children.len() + 1) as f64,
                    ..parent.clone()
                });
                out
            }
            Plan::Reset => vec![],
        };
        origins.extend(std::iter::repeat_n(Origin::New, inserted.len()));
        gaussians.extend(inserted);
    }
    let new_stats = stats.remap(&origins);
    let count_after = gaussians.len();
    Densified {
        scene: Scene::new(gaussians, scene.extent),
        origins,
        stats: new_stats,
        report: SplitReport {
            views,
            candidates,
            clones,
            count_before: scene.len(),
            count_after,
        },
    }
}

/// Insertable Gaussian for a merged child; the colour becomes the DC term and
/// higher orders are zero.
pub fn child_gaussian(c: &MergeGroup, parent: &Gaussian3D) -> Gaussian3D {
    Gaussian3D {
        mu: c.mu,
        scale: c.scale,
        rot: rotmat_to_quat(&c.rot),
        opacity: c.opacity,
        sh_dc: rgb_to_dc(&c.rgb),
        sh_rest: vec![Vector3::zeros(); parent.sh_rest.len()],
    }
}
