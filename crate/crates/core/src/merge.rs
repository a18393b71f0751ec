//! Stage 3 of the adaptive split: merge redundant child proposals of one
//! parent across views and cap the per-parent child count.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::child_init::ChildProposal;

/// Merged child of one parent.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeGroup {
    /// Indices into the proposal slice given to [`merge_groups`], ascending.
    pub members: Vec<usize>,
    pub parent: usize,
    pub mu: Vector3<f64>,
    /// Proper rotation whose columns are the merged axes.
    pub rot: Matrix3<f64>,
    /// Square roots of the merged variances along `rot`'s columns.
    pub scale: Vector3<f64>,
    pub rgb: Vector3<f64>,
    pub opacity: f64,
}

impl MergeGroup {
    pub fn covariance(&self) -> Matrix3<f64> {
        let s2 = self.scale.component_mul(&self.scale);
        self.rot * Matrix3::from_diagonal(&s2) * self.rot.transpose()
    }

    /// Largest eigenvalue of the merged covariance.
    pub fn extent(&self) -> f64 {
        let s = self.scale.max();
        s * s
    }
}

/// Symmetric Mahalanobis distance `√(δᵀΣa⁻¹δ) + √(δᵀΣb⁻¹δ)`.
pub fn merge_distance(a: &ChildProposal, b: &ChildProposal) -> f64 {
    let delta = b.mu - a.mu;
    let maha = |p: &ChildProposal| {
        // Σ⁻¹ = R diag(1/s²) Rᵀ, so δᵀΣ⁻¹δ = Σ_k ((Rᵀδ)_k / s_k)²
        let local = p.rot.transpose() * delta;
        local.component_div(&p.scale).norm_squared().sqrt()
    };
    maha(a) + maha(b)
}

/// Whether two proposals of the same parent may be merged. Both thresholds
/// are inclusive.
pub fn mergeable(a: &ChildProposal, b: &ChildProposal, gamma_d: f64, gamma_c: f64) -> bool {
    assert_eq!(a.parent, b.parent, "proposals of different parents are never compared");
    let color = (a.rgb - b.rgb).abs().max();
    color <= gamma_c && merge_distance(a, b) <= gamma_d
}

/// Connected components of the mergeable graph over `proposals` (all of one
/// parent), ordered by their smallest member index.
pub fn merge_components(proposals: &[ChildProposal], gamma_d: f64, gamma_c: f64) -> Vec<Vec<usize>> {
    let n = proposals.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut a: usize) -> usize {
        while p[a] != a {
            p[a] = p[p[a]];
            a = p[a];
        }
        a
    }
    for i in 0..n {
        for j in i + 1..n {
            if mergeable(&proposals[i], &proposals[j], gamma_d, gamma_c) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut slot = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Number of mergeable pairs, for diagnostics.
pub fn merge_edge_count(proposals: &[ChildProposal], gamma_d: f64, gamma_c: f64) -> usize {
    let mut edges = 0;
    for i in 0..proposals.len() {
        for j in i + 1..proposals.len() {
            if mergeable(&proposals[i], &proposals[j], gamma_d, gamma_c) {
                edges += 1;
            }
        }
    }
    edges
}

pub fn merge_groups(proposals: &[ChildProposal], gamma_d: f64, gamma_c: f64) -> Vec<MergeGroup> {
    merge_components(proposals, gamma_d, gamma_c)
        .into_iter()
        .map(|members| merge_params(proposals, members))
        .collect()
}

/// Member-mean centre, colour and opacity; the covariance takes the
/// eigenvectors of the mean member covariance and, along each, the squared
/// maximum member reach `|e_rᵀ(μ_m − μ)| + σ_{m,r}`.
///
/// A singleton group reproduces its member exactly.
pub fn merge_params(proposals: &[ChildProposal], members: Vec<usize>) -> MergeGroup {
    assert!(!members.is_empty(), "empty merge group");
    let first = &proposals[members[0]];
    if members.len() == 1 {
        return MergeGroup {
            members,
            parent: first.parent,
            mu: first.mu,
            rot: first.rot,
            scale: first.scale,
            rgb: first.rgb,
            opacity: first.opacity,
        };
    }
    let m = members.len() as f64;
    let mut mu = Vector3::zeros();
    let mut rgb = Vector3::zeros();
    let mut opacity = 0.0;
    let mut mean_cov = Matrix3::zeros();
    let covs: Vec<Matrix3<f64>> = members.iter().map(|&i| proposals[i].covariance()).collect();
    for (&i, cov) in members.iter().zip(&covs) {
        let p = &proposals[i];
        mu += p.mu;
        rgb += p.rgb;
        opacity += p.opacity;
        mean_cov += cov;
    }
    mu /= m;
    rgb /= m;
    opacity /= m;
    mean_cov /= m;

    let eig = SymmetricEigen::new(mean_cov);
    let mut e = eig.eigenvectors;
    if e.determinant() < 0.0 {
        e.set_column(2, &-e.column(2));
    }
    let scale = Vector3::from_fn(|r, _| {
        let axis = e.column(r);
        members
            .iter()
            .zip(&covs)
            .map(|(&i, cov)| {
                let off = axis.dot(&(proposals[i].mu - mu)).abs();
                let sigma = axis.dot(&(cov * axis)).max(0.0).sqrt();
                off + sigma
            })
            .fold(0.0, f64::max)
    });
    MergeGroup {
        members,
        parent: first.parent,
        mu,
        rot: e,
        scale,
        rgb,
        opacity,
    }
}

/// Keep the `n_max` children with the largest extent, sorted descending;
/// equal extents keep their input order.
pub fn cap_children(mut children: Vec<MergeGroup>, n_max: usize) -> Vec<MergeGroup> {
    children.sort_by(|a, b| b.extent().total_cmp(&a.extent()));
    children.truncate(n_max);
    children
}
