//! Connected components of the open subgraph: cluster labels, chemical
//! distance, restricted components `C_R(v)` and nearest-obstacle queries.

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{linf_shell, splitmix64, BoxSpec, Environment, Site, SiteSet};

const UNLABELED: u32 = u32::MAX;

/// Partition of the open sites of an environment into clusters.
///
/// Cluster ids are assigned in increasing order of each cluster's smallest
/// linear box index, so labelings are deterministic.
#[derive(Clone, Debug)]
pub struct ClusterLabeling {
    bx: BoxSpec,
    labels: Vec<u32>,
    sizes: Vec<usize>,
    spanning: Option<u32>,
}

impl ClusterLabeling {
    pub fn label(&self, s: &Site) -> Option<u32> {
        self.bx
            .index(s)
            .map(|i| self.labels[i])
            .filter(|&l| l != UNLABELED)
    }

    pub fn label_index(&self, idx: usize) -> Option<u32> {
        Some(self.labels[idx]).filter(|&l| l != UNLABELED)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    /// Largest cluster touching two opposite faces of the box; the finite
    /// stand-in for the infinite cluster.
    pub fn spanning_id(&self) -> Option<u32> {
        self.spanning
    }

    pub fn in_spanning(&self, s: &Site) -> bool {
        self.spanning.is_some() && self.label(s) == self.spanning
    }

    pub fn same_cluster(&self, u: &Site, v: &Site) -> bool {
        matches!((self.label(u), self.label(v)), (Some(a), Some(b)) if a == b)
    }

    pub fn members(&self, id: u32) -> SiteSet {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == id)
            .map(|(i, _)| self.bx.site(i))
            .collect()
    }

    /// `size -> number of clusters of that size`, ascending by size.
    pub fn size_histogram(&self) -> Vec<(usize, usize)> {
        let mut h = std::collections::BTreeMap::new();
        for &s in &self.sizes {
            *h.entry(s).or_insert(0usize) += 1;
        }
        h.into_iter().collect()
    }
}

pub fn label_clusters(env: &Environment) -> ClusterLabeling {
    let bx = *env.box_spec();
    let n = bx.volume();
    let deg = 2 * bx.dim;
    let mut labels = vec![UNLABELED; n];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !env.is_open_index(start) || labels[start] != UNLABELED {
            continue;
        }
        let id = sizes.len() as u32;
        labels[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(x) = queue.pop_front() {
            size += 1;
            for k in 0..deg {
                if let Some(y) = bx.neighbor_index(x, k) {
                    if env.is_open_index(y) && labels[y] == UNLABELED {
                        labels[y] = id;
                        queue.push_back(y);
                    }
                }
            }
        }
        sizes.push(size);
    }

    let mut touches = vec![vec![[false; 2]; bx.dim]; sizes.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l == UNLABELED {
            continue;
        }
        for (a, t) in touches[l as usize].iter_mut().enumerate() {
            t[0] |= bx.on_face(i, a, false);
            t[1] |= bx.on_face(i, a, true);
        }
    }
    let spanning = (0..sizes.len())
        .filter(|&c| touches[c].iter().any(|t| t[0] && t[1]))
        .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
        .map(|c| c as u32);

    ClusterLabeling {
        bx,
        labels,
        sizes,
        spanning,
    }
}

/// BFS distances in the open subgraph from `u` to every box site
/// (`None` = unreachable or closed).
pub fn chemical_distances_from(env: &Environment, u: &Site) -> Vec<Option<u32>> {
    let bx = env.box_spec();
    let mut dist = vec![None; bx.volume()];
    let Some(start) = bx.index(u).filter(|&i| env.is_open_index(i)) else {
        return dist;
    };
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(x) = queue.pop_front() {
        let dx = dist[x].unwrap();
        for k in 0..2 * bx.dim {
            if let Some(y) = bx.neighbor_index(x, k) {
                if env.is_open_index(y) && dist[y].is_none() {
                    dist[y] = Some(dx + 1);
                    queue.push_back(y);
                }
            }
        }
    }
    dist
}

/// Length of the shortest open nearest-neighbor path from `u` to `v`, or
/// `None` when no open path exists.
pub fn chemical_distance(env: &Environment, u: &Site, v: &Site) -> Option<u64> {
    let bx = env.box_spec();
    let target = bx.index(v).filter(|&i| env.is_open_index(i))?;
    let start = bx.index(u).filter(|&i| env.is_open_index(i))?;
    if start == target {
        return Some(0);
    }
    let mut dist = vec![u32::MAX; bx.volume()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(x) = queue.pop_front() {
        for k in 0..2 * bx.dim {
            if let Some(y) = bx.neighbor_index(x, k) {
                if env.is_open_index(y) && dist[y] == u32::MAX {
                    dist[y] = dist[x] + 1;
                    if y == target {
                        return Some(dist[y] as u64);
                    }
                    queue.push_back(y);
                }
            }
        }
    }
    None
}

/// Connected component of `center` in `B_R(center) \ O`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedComponent {
    pub center: Site,
    pub radius: f64,
    pub sites: SiteSet,
}

impl RestrictedComponent {
    /// Lexicographically smallest member.
    pub fn representative(&self) -> Option<Site> {
        self.sites.first().copied()
    }
}

pub fn restricted_component(env: &Environment, v: &Site, radius: f64) -> RestrictedComponent {
    let mut sites = Vec::new();
    if env.is_open(v) && radius >= 0.0 {
        let mut seen = HashSet::from([*v]);
        let mut queue = VecDeque::from([*v]);
        while let Some(x) = queue.pop_front() {
            sites.push(x);
            for y in x.neighbors() {
                if env.is_open(&y) && (y.dist2(v) as f64).sqrt() <= radius && seen.insert(y) {
                    queue.push_back(y);
                }
            }
        }
    }
    RestrictedComponent {
        center: *v,
        radius,
        sites: sites.into_iter().collect(),
    }
}

/// ℓ2 distance from `u` to the nearest closed site, counting every site
/// outside the box as closed. Ties go to the lexicographically smallest
/// witness.
pub fn nearest_obstacle_distance(env: &Environment, u: &Site) -> (f64, Site) {
    if !env.is_open(u) {
        return (0.0, *u);
    }
    let mut best: Option<(i64, Site)> = None;
    let mut k = 1i64;
    loop {
        // Every site on the ℓ∞ shell of radius k is at ℓ2 distance >= k.
        if let Some((d2, _)) = best {
            if d2 <= k * k {
                break;
            }
        }
        for s in linf_shell(u, k) {
            if env.is_open(&s) {
                continue;
            }
            let cand = (s.dist2(u), s);
            if best.is_none_or(|b| cand < b) {
                best = Some(cand);
            }
        }
        k += 1;
    }
    let (d2, w) = best.expect("absorbing frame guarantees a closed site");
    ((d2 as f64).sqrt(), w)
}

/// Regenerates until the origin lies in the spanning cluster. Attempt 0 uses
/// `seed` itself; later attempts use derived seeds. The returned environment
/// records the seed actually used, so it stays reproducible.
pub fn generate_with_origin_in_spanning(
    bx: BoxSpec,
    p: f64,
    seed: u64,
    max_attempts: u32,
) -> Result<(Environment, ClusterLabeling, u32)> {
    let origin = Site::origin(bx.dim);
    if !bx.contains(&origin) {
        return Err(Error::domain("box does not contain the origin"));
    }
    for attempt in 0..max_attempts {
        let s = if attempt == 0 {
            seed
        } else {
            splitmix64(seed ^ (attempt as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
        };
        let env = Environment::generate(bx, p, s)?;
        let labels = label_clusters(&env);
        if labels.in_spanning(&origin) {
            return Ok((env, labels, attempt));
        }
    }
    Err(Error::domain(format!(
        "origin not in a spanning cluster after {max_attempts} attempts (p = {p}, seed = {seed})"
    )))
}

/// Empirical `max D(u,v) / max(|u-v|, scale)` over sampled pairs in one
/// cluster.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RhoReport {
    pub pairs: usize,
    pub scale: f64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
}

pub fn empirical_rho(
    env: &Environment,
    labels: &ClusterLabeling,
    cluster: u32,
    scale: f64,
    sources: usize,
    targets_per_source: usize,
    seed: u64,
) -> RhoReport {
    let members = labels.members(cluster);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bx = env.box_spec();
    let mut ratios = Vec::new();
    if members.len() >= 2 {
        for _ in 0..sources {
            let u = members.as_slice()[rng.random_range(0..members.len())];
            let dist = chemical_distances_from(env, &u);
            for _ in 0..targets_per_source {
                let v = members.as_slice()[rng.random_range(0..members.len())];
                if v == u {
                    continue;
                }
                let dv = dist[bx.index(&v).unwrap()].expect("same cluster") as f64;
                ratios.push(dv / u.dist(&v).max(scale));
            }
        }
    }
    RhoReport {
        pairs: ratios.len(),
        scale,
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        mean_ratio: if ratios.is_empty() {
            0.0
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64
        },
    }
}
