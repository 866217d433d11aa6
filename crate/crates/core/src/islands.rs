//! Island hierarchy: survival quantiles, level sets of the local survival
//! score `X_v` and of the local eigenvalue `λ_v`, separated representatives
//! and the localization region around them. Also the small-scale
//! diagnostics: c-good sites and ε-fair boxes.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{region_in, BoxSpec, Environment, Norm, Site, SiteSet, SiteValues};
use crate::percolation::ClusterLabeling;
use crate::spectral::LambdaField;
use crate::survival::{survival_layer, survive_or_escape, SurvivalQuery};

/// Optional overrides for [`ScaleParams`]; missing fields take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    pub n: u64,
    pub k_n: Option<usize>,
    pub radius: Option<usize>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub c2: Option<f64>,
    pub iota: Option<f64>,
    pub chi: Option<f64>,
    pub c: Option<f64>,
    pub eps: Option<f64>,
}

impl ScaleConfig {
    pub fn new(n: u64) -> ScaleConfig {
        ScaleConfig {
            n,
            ..Default::default()
        }
    }

    pub fn resolve(&self, dim: usize) -> Result<ScaleParams> {
        ScaleParams::from_config(dim, self)
    }
}

/// Scale parameters of the hierarchy. Logs are natural.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub dim: usize,
    pub n: u64,
    pub k_n: usize,
    pub radius: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub c2: f64,
    pub iota: f64,
    pub chi: f64,
    pub c: f64,
    pub eps: f64,
    pub k_n_overridden: bool,
    pub radius_overridden: bool,
}

/// Default `k_n`: `⌊(ln n)^3 (ln ln n)^2⌋` in `d = 2`, `⌊(ln n)^{4-2/d}⌋`
/// otherwise, and at least 1.
pub fn default_k_n(dim: usize, n: u64) -> usize {
    let l = (n as f64).ln();
    let k = if dim == 2 {
        l.powi(3) * l.ln().powi(2)
    } else {
        l.powf(4.0 - 2.0 / dim as f64)
    };
    (k.floor() as usize).max(1)
}

/// Default `R = ⌊k_n (ln n)^2⌋`, at least `k_n`.
pub fn default_radius(k_n: usize, n: u64) -> usize {
    let l = (n as f64).ln();
    ((k_n as f64 * l * l).floor() as usize).max(k_n)
}

/// `min(c/2, (2d)^{-3^{d+1}})`.
pub fn default_eps(dim: usize, c: f64) -> f64 {
    let e = (2.0 * dim as f64).powf(-(3f64.powi(dim as i32 + 1)));
    (c / 2.0).min(e)
}

impl ScaleParams {
    pub fn new(dim: usize, n: u64) -> Result<ScaleParams> {
        ScaleParams::from_config(dim, &ScaleConfig::new(n))
    }

    pub fn from_config(dim: usize, cfg: &ScaleConfig) -> Result<ScaleParams> {
        if !(1..=3).contains(&dim) {
            return Err(Error::domain(format!("dimension {dim} outside 1..=3")));
        }
        if cfg.n < 3 {
            return Err(Error::domain("n must be at least 3 so that ln ln n > 0"));
        }
        let k_n = cfg.k_n.unwrap_or_else(|| default_k_n(dim, cfg.n));
        let radius = cfg.radius.unwrap_or_else(|| default_radius(k_n, cfg.n));
        let c = cfg.c.unwrap_or(0.5);
        let p = ScaleParams {
            dim,
            n: cfg.n,
            k_n,
            radius,
            alpha1: cfg.alpha1.unwrap_or(3.0 * dim as f64),
            alpha2: cfg.alpha2.unwrap_or(4.0 * dim as f64),
            c2: cfg.c2.unwrap_or(1.0),
            iota: cfg.iota.unwrap_or(2.0),
            chi: cfg.chi.unwrap_or(0.25),
            c,
            eps: cfg.eps.unwrap_or_else(|| default_eps(dim, c)),
            k_n_overridden: cfg.k_n.is_some(),
            radius_overridden: cfg.radius.is_some(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::domain(m.to_string()));
        if self.k_n < 1 {
            return bad("k_n must be at least 1");
        }
        if self.radius < self.k_n {
            return bad("R must be at least k_n");
        }
        if !(self.alpha1 > 0.0 && self.alpha2 > self.alpha1) {
            return bad("need 0 < alpha1 < alpha2");
        }
        if !(self.c2 > 0.0 && self.c2 * self.ln_n() > 1.0) {
            return bad("need c2 ln n > 1 so that p_alpha decreases in alpha");
        }
        if !(self.iota > 0.0) || !(self.chi > 0.0 && self.chi < 1.0) {
            return bad("need iota > 0 and 0 < chi < 1");
        }
        if !(self.c > 0.0 && self.c <= 1.0) || !(self.eps > 0.0 && self.eps < 1.0) {
            return bad("need 0 < c <= 1 and 0 < eps < 1");
        }
        Ok(())
    }

    pub fn ln_n(&self) -> f64 {
        (self.n as f64).ln()
    }

    /// `n^{-d} k_n^{2d} ln n`, clamped into `(0, 1]`.
    pub fn target_fraction(&self) -> f64 {
        let d = self.dim as f64;
        let q = ((self.k_n as f64).ln() * 2.0 * d - d * (self.n as f64).ln()).exp() * self.ln_n();
        q.clamp(f64::MIN_POSITIVE, 1.0)
    }

    /// `χ^{k_n / (ln n)^{2/d}}`.
    pub fn beta_chi(&self) -> f64 {
        self.chi
            .powf(self.k_n as f64 / self.ln_n().powf(2.0 / self.dim as f64))
    }

    /// `⌊(ln n)^{2/d}⌋`.
    pub fn c_good_horizon(&self) -> usize {
        self.ln_n().powf(2.0 / self.dim as f64).floor() as usize
    }

    /// `(ln n)^ι k_n`, radius of each localization ball.
    pub fn island_radius(&self) -> f64 {
        self.ln_n().powf(self.iota) * self.k_n as f64
    }

    /// `(ln n)^ι`, the approach distance defining hitting times of islands.
    pub fn approach_radius(&self) -> f64 {
        self.ln_n().powf(self.iota)
    }

    /// `n k_n^{-14d}`.
    pub fn separation_radius(&self) -> f64 {
        let d = self.dim as f64;
        ((self.n as f64).ln() - 14.0 * d * (self.k_n as f64).ln()).exp()
    }

    /// `(2R)^{d/2}`.
    pub fn volume_factor(&self) -> f64 {
        (2.0 * self.radius as f64).powf(self.dim as f64 / 2.0)
    }
}

/// `p_0` and the ladder `p_α = p_0 / (c_2 ln n)^α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub p0: f64,
    pub c2: f64,
    pub ln_n: f64,
    pub target_fraction: f64,
    pub sample_count: usize,
    pub environments: usize,
    /// `p0` is the `rank`-th largest sample.
    pub rank: usize,
    /// Target fraction below one sample's worth; `p0` is the maximum.
    pub low_resolution: bool,
    /// The order statistic was 0 and was replaced by the smallest positive
    /// sample.
    pub zero_replaced: bool,
}

impl QuantileTable {
    pub fn p_alpha(&self, alpha: f64) -> f64 {
        self.p0 / (self.c2 * self.ln_n).powf(alpha)
    }
}

/// `p0` as the largest β with `#{X >= β} / N >= q`, i.e. the
/// `⌈qN⌉`-th largest sample.
pub fn estimate_quantiles(
    samples: &[f64],
    params: &ScaleParams,
    environments: usize,
) -> Result<QuantileTable> {
    if samples.is_empty() {
        return Err(Error::domain("no samples for quantile estimation"));
    }
    if samples.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::domain("samples must be probabilities"));
    }
    params.validate()?;
    let n = samples.len();
    let q = params.target_fraction();
    let qn = q * n as f64;
    let rank = ((qn - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut p0 = sorted[rank - 1];
    let mut zero_replaced = false;
    if p0 == 0.0 {
        p0 = sorted
            .iter()
            .rev()
            .copied()
            .find(|&x| x > 0.0)
            .ok_or_else(|| Error::domain("all samples are zero"))?;
        zero_replaced = true;
    }
    Ok(QuantileTable {
        p0,
        c2: params.c2,
        ln_n: params.ln_n(),
        target_fraction: q,
        sample_count: n,
        environments,
        rank,
        low_resolution: qn < 1.0,
        zero_replaced,
    })
}

/// `X_v = P^v(τ > k_n)` over `target`.
pub fn x_field(env: &Environment, target: &SiteSet, params: &ScaleParams) -> SiteValues {
    crate::survival::survival_values(env, &SurvivalQuery::new(params.k_n), target)
}

/// Pairs of representatives (or the origin) whose separation balls meet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationViolation {
    pub a: Site,
    pub b: Site,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// `|D_* ∩ cluster ∩ box|`.
    pub candidates: usize,
    /// Candidates not within `3R` of any representative.
    pub uncovered: Vec<Site>,
    pub separation_radius: f64,
    pub separation_violations: Vec<SeparationViolation>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IslandHierarchy {
    pub params: ScaleParams,
    pub quantiles: QuantileTable,
    /// `(α, U_α)` for α in `{0, α1, α2}`.
    pub u: Vec<(f64, SiteSet)>,
    pub dstar_threshold: f64,
    pub dstar: SiteSet,
    pub v: Vec<Site>,
    pub dn: SiteSet,
    pub report: SelectionReport,
    xfield: SiteValues,
    lambda: SiteValues,
}

impl IslandHierarchy {
    /// `U_α = {X_v >= p_α}` for any α.
    pub fn u_alpha(&self, alpha: f64) -> SiteSet {
        let t = self.quantiles.p_alpha(alpha);
        self.xfield.select(|_, x| x >= t)
    }

    /// `D_λ = {λ_v > λ}`.
    pub fn d_lambda(&self, lambda: f64) -> SiteSet {
        self.lambda.select(|_, l| l > lambda)
    }

    pub fn xfield(&self) -> &SiteValues {
        &self.xfield
    }

    pub fn lambda(&self) -> &SiteValues {
        &self.lambda
    }

    /// Representatives whose `3R`-ball contains `s`, sorted.
    pub fn owners_of(&self, s: &Site) -> Vec<Site> {
        let r2 = 3.0 * self.params.radius as f64;
        let mut out: Vec<Site> = self.v.iter().copied().filter(|v| v.dist(s) <= r2).collect();
        out.sort();
        out
    }
}

pub fn level_sets(
    xfield: &SiteValues,
    lfield: &LambdaField,
    q: &QuantileTable,
    params: &ScaleParams,
) -> Result<IslandHierarchy> {
    if xfield.sites() != lfield.sites() {
        return Err(Error::domain("X and λ fields cover different site sets"));
    }
    let u = [0.0, params.alpha1, params.alpha2]
        .into_iter()
        .map(|a| {
            let t = q.p_alpha(a);
            (a, xfield.select(|_, x| x >= t))
        })
        .collect();
    let dstar_threshold = q.p_alpha(params.alpha1).powf(1.0 / params.k_n as f64);
    let dstar = lfield.values().select(|_, l| l >= dstar_threshold);
    Ok(IslandHierarchy {
        params: params.clone(),
        quantiles: q.clone(),
        u,
        dstar_threshold,
        dstar,
        v: Vec::new(),
        dn: SiteSet::new(),
        report: SelectionReport::default(),
        xfield: xfield.clone(),
        lambda: lfield.values().clone(),
    })
}

fn balls_meet(a: &Site, b: &Site, r: f64) -> bool {
    let d = a.dist(b);
    if d > 2.0 * r {
        return false;
    }
    if r > 64.0 {
        return true;
    }
    region_in_free(a, r).iter().any(|s| s.dist(b) <= r)
}

fn region_in_free(c: &Site, r: f64) -> SiteSet {
    crate::lattice::region(c, r, Norm::L2)
}

/// Greedy representatives: candidates `D_* ∩ spanning cluster ∩ box` in
/// decreasing λ (ties lexicographic); a not yet covered candidate joins `V`
/// when it is a maximum of λ over its `3R`-ball.
pub fn select_islands(
    hier: &IslandHierarchy,
    lfield: &LambdaField,
    cluster: &ClusterLabeling,
    bx: &BoxSpec,
    params: &ScaleParams,
) -> IslandHierarchy {
    select_islands_in(hier, lfield, |s| cluster.in_spanning(s), bx, params)
}

/// As [`select_islands`] with candidates restricted to one cluster id
/// instead of the spanning cluster.
pub fn select_islands_in_cluster(
    hier: &IslandHierarchy,
    lfield: &LambdaField,
    labels: &ClusterLabeling,
    cluster: u32,
    bx: &BoxSpec,
    params: &ScaleParams,
) -> IslandHierarchy {
    select_islands_in(
        hier,
        lfield,
        |s| labels.label(s) == Some(cluster),
        bx,
        params,
    )
}

fn select_islands_in(
    hier: &IslandHierarchy,
    lfield: &LambdaField,
    in_cluster: impl Fn(&Site) -> bool,
    bx: &BoxSpec,
    params: &ScaleParams,
) -> IslandHierarchy {
    let cover = 3.0 * params.radius as f64;
    let mut cands: Vec<(f64, Site)> = hier
        .dstar
        .iter()
        .filter(|s| bx.contains(s) && in_cluster(s))
        .map(|s| (lfield.lambda(s), *s))
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut v: Vec<Site> = Vec::new();
    let mut uncovered = Vec::new();
    for &(l, c) in &cands {
        if v.iter().any(|w| w.dist(&c) <= cover) {
            continue;
        }
        let is_max = region_in(bx, &c, cover, Norm::L2)
            .iter()
            .all(|u| lfield.get(u).is_none_or(|lu| lu <= l));
        if is_max {
            v.push(c);
        } else {
            uncovered.push(c);
        }
    }
    // A skipped candidate may still be covered by a later representative.
    uncovered.retain(|c| !v.iter().any(|w| w.dist(c) <= cover));
    uncovered.sort();

    let dn = if v.is_empty() {
        SiteSet::new()
    } else {
        let mut mask = vec![false; bx.volume()];
        for w in &v {
            for s in &region_in(bx, w, params.island_radius(), Norm::L2) {
                mask[bx.index(s).unwrap()] = true;
            }
        }
        mask.iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| bx.site(i))
            .collect()
    };

    let sep = params.separation_radius();
    let mut pts = v.clone();
    let origin = Site::origin(bx.dim);
    if !pts.contains(&origin) {
        pts.push(origin);
    }
    pts.sort();
    let mut violations = Vec::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if balls_meet(&pts[i], &pts[j], sep) {
                violations.push(SeparationViolation {
                    a: pts[i],
                    b: pts[j],
                    distance: pts[i].dist(&pts[j]),
                });
            }
        }
    }

    let mut out = hier.clone();
    out.v = v;
    out.dn = dn;
    out.report = SelectionReport {
        candidates: cands.len(),
        uncovered,
        separation_radius: sep,
        separation_violations: violations,
    };
    out
}

/// Open sites with `P^v(τ > ⌊(ln n)^{2/d}⌋) >= c`.
pub fn c_good_sites(env: &Environment, c: f64, params: &ScaleParams) -> Result<SiteSet> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::domain("c must lie in (0, 1]"));
    }
    let h = survival_layer(env, &SurvivalQuery::new(params.c_good_horizon()));
    let bx = env.box_spec();
    Ok(h.iter()
        .enumerate()
        .filter(|(_, &x)| x >= c && x > 0.0)
        .map(|(i, _)| bx.site(i))
        .collect())
}

/// Number of members of `set` in the ℓ∞ box of radius `r` around `center`.
pub fn count_in_box(set: &SiteSet, center: &Site, r: usize) -> usize {
    set.iter().filter(|s| s.linf(center) <= r as i64).count()
}

/// The local event behind the obstacle-density and c-good-count controls
/// around `v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalDensity {
    pub center: Site,
    /// Largest nearest-obstacle distance over `K_{k_n}(v)` (box part).
    pub max_obstacle_distance: f64,
    pub c_good_count: usize,
    /// `max_obstacle_distance / (ln n)^{1/d}`.
    pub obstacle_scale_ratio: f64,
    /// `c_good_count / ln n`.
    pub c_good_ratio: f64,
}

pub fn local_density(
    env: &Environment,
    v: &Site,
    c_good: &SiteSet,
    params: &ScaleParams,
) -> LocalDensity {
    let bx = env.box_spec();
    let k = params.k_n as f64;
    let mut worst = 0.0f64;
    for u in &region_in(bx, v, k, Norm::Linf) {
        worst = worst.max(crate::percolation::nearest_obstacle_distance(env, u).0);
    }
    let count = count_in_box(c_good, v, params.k_n);
    LocalDensity {
        center: *v,
        max_obstacle_distance: worst,
        c_good_count: count,
        obstacle_scale_ratio: worst / params.ln_n().powf(1.0 / params.dim as f64),
        c_good_ratio: count as f64 / params.ln_n(),
    }
}

/// ε-fair boxes `K_r(x)`, `x ∈ anchor + (2r+1) Z^d`, with their clusters
/// under face adjacency of the box grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FairBoxes {
    pub r: usize,
    pub eps: f64,
    pub anchor: Site,
    /// Centers of fair boxes.
    pub fair: SiteSet,
    /// Best witness probability per examined box center.
    pub witness: BTreeMap<Site, f64>,
    /// Cluster id per fair center (ids in order of smallest member).
    pub cluster_of: BTreeMap<Site, usize>,
    pub cluster_sizes: Vec<usize>,
}

impl FairBoxes {
    /// Center of the grid box containing `s`.
    pub fn box_of(&self, s: &Site) -> Site {
        let w = 2 * self.r as i32 + 1;
        let mut c = *s;
        for a in 0..s.dim() {
            let off = s.coord(a) - self.anchor.coord(a);
            let k = (off + self.r as i32).div_euclid(w);
            c = c.offset(a, self.anchor.coord(a) + k * w - s.coord(a));
        }
        c
    }

    /// Fair boxes with centers within `radius` of `v` that connect to the box
    /// of `v` through such boxes. Empty when the box of `v` is not fair.
    pub fn cluster_within(&self, v: &Site, radius: f64) -> SiteSet {
        let start = self.box_of(v);
        let ok = |c: &Site| self.fair.contains(c) && c.dist(v) <= radius;
        if !ok(&start) {
            return SiteSet::new();
        }
        let w = 2 * self.r as i32 + 1;
        let mut seen = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            for a in 0..c.dim() {
                for step in [-w, w] {
                    let n = c.offset(a, step);
                    if ok(&n) && !seen.contains(&n) {
                        seen.push(n);
                        queue.push_back(n);
                    }
                }
            }
        }
        seen.into_iter().collect()
    }
}

/// Boxes `K_r(x)` meeting the environment box; a box is fair when some
/// `u ∈ K_r(x)` has `P^u(τ >= r^2 or the walk leaves K_{2r}(x) alive) >= eps`.
pub fn epsilon_fair_analysis(
    env: &Environment,
    r: usize,
    eps: f64,
    anchor: &Site,
) -> Result<FairBoxes> {
    if r < 1 {
        return Err(Error::domain("box radius must be at least 1"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain("eps must lie in (0, 1)"));
    }
    let bx = env.box_spec();
    if anchor.dim() != bx.dim {
        return Err(Error::domain("anchor dimension mismatch"));
    }
    let w = 2 * r as i64 + 1;
    let ri = r as i64;
    // Grid index ranges whose boxes meet the environment box.
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for a in 0..bx.dim {
        let bmin = (bx.origin.coord(a) - bx.half_width) as i64 - anchor.coord(a) as i64;
        let bmax = (bx.origin.coord(a) + bx.half_width) as i64 - anchor.coord(a) as i64;
        lo[a] = (bmin - ri).div_euclid(w) + i64::from((bmin - ri).rem_euclid(w) != 0);
        hi[a] = (bmax + ri).div_euclid(w);
    }
    let mut centers = Vec::new();
    let mut cur = lo;
    'outer: loop {
        let coords: Vec<i32> = (0..bx.dim)
            .map(|a| (anchor.coord(a) as i64 + cur[a] * w) as i32)
            .collect();
        centers.push(Site::new(&coords));
        for a in 0..bx.dim {
            if cur[a] < hi[a] {
                cur[a] += 1;
                continue 'outer;
            }
            cur[a] = lo[a];
        }
        break;
    }

    let steps = r * r;
    let mut witness = BTreeMap::new();
    let mut fair = Vec::new();
    for x in centers {
        let inner = region_in(bx, &x, r as f64, Norm::Linf);
        if !inner.iter().any(|u| env.is_open(u)) {
            witness.insert(x, 0.0);
            continue;
        }
        let outer = region_in(bx, &x, 2.0 * r as f64, Norm::Linf);
        let g = survive_or_escape(env, &outer, steps);
        let best = inner.iter().filter_map(|u| g.get(u)).fold(0.0f64, f64::max);
        witness.insert(x, best);
        if best >= eps {
            fair.push(x);
        }
    }
    let fair: SiteSet = fair.into_iter().collect();

    let mut cluster_of = BTreeMap::new();
    let mut cluster_sizes = Vec::new();
    for &c in &fair {
        if cluster_of.contains_key(&c) {
            continue;
        }
        let id = cluster_sizes.len();
        let mut size = 0;
        let mut queue = VecDeque::from([c]);
        cluster_of.insert(c, id);
        while let Some(x) = queue.pop_front() {
            size += 1;
            for a in 0..x.dim() {
                for step in [-(w as i32), w as i32] {
                    let n = x.offset(a, step);
                    if fair.contains(&n) && !cluster_of.contains_key(&n) {
                        cluster_of.insert(n, id);
                        queue.push_back(n);
                    }
                }
            }
        }
        cluster_sizes.push(size);
    }
    Ok(FairBoxes {
        r,
        eps,
        anchor: *anchor,
        fair,
        witness,
        cluster_of,
        cluster_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::label_clusters;
    use crate::spectral::lambda_field;

    fn s(c: &[i32]) -> Site {
        Site::new(c)
    }

    fn params() -> ScaleParams {
        ScaleParams::from_config(
            2,
            &ScaleConfig {
                n: 1000,
                k_n: Some(4),
                radius: Some(4),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn default_scales() {
        let p = ScaleParams::new(2, 1000).unwrap();
        let l = 1000f64.ln();
        assert_eq!(p.k_n, (l.powi(3) * l.ln().powi(2)).floor() as usize);
        assert_eq!(p.radius, (p.k_n as f64 * l * l).floor() as usize);
        assert_eq!(
            (p.alpha1, p.alpha2, p.c2, p.iota, p.chi, p.c),
            (6.0, 8.0, 1.0, 2.0, 0.25, 0.5)
        );
        assert_eq!(p.eps, 4f64.powi(-27));
        assert!(!p.k_n_overridden);
        let p3 = ScaleParams::new(3, 1000).unwrap();
        assert_eq!(p3.k_n, l.powf(4.0 - 2.0 / 3.0).floor() as usize);
        assert!(ScaleParams::new(2, 2).is_err());
        let bad = ScaleConfig {
            n: 1000,
            k_n: Some(5),
            radius: Some(4),
            ..Default::default()
        };
        assert!(bad.resolve(2).is_err());
    }

    #[test]
    fn quantiles_formula_and_degenerate_samples() {
        let mut q = estimate_quantiles(&[1.0; 20], &params(), 1).unwrap();
        assert_eq!(q.p0, 1.0);
        q.p0 = 0.5;
        q.c2 = 2.0;
        q.ln_n = 10.0;
        assert!((q.p_alpha(1.0) - 0.025).abs() < 1e-15);
        assert_eq!(q.p_alpha(0.0), 0.5);
        assert!(estimate_quantiles(&[], &params(), 0).is_err());
    }

    #[test]
    fn quantile_is_order_statistic() {
        // n = 1000, k_n = 4, d = 2: q = 4^4 ln(1000) / 10^6 ≈ 1.768e-3.
        let p = params();
        let samples: Vec<f64> = (0..10_000)
            .map(|i| ((i * 7919) % 10_000) as f64 / 1e4)
            .collect();
        let t = estimate_quantiles(&samples, &p, 1).unwrap();
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let rank = (p.target_fraction() * 1e4).ceil() as usize;
        assert_eq!(t.rank, rank);
        assert_eq!(t.p0, sorted[rank - 1]);
        assert!(!t.low_resolution);
    }

    #[test]
    fn tiny_target_fraction_takes_maximum() {
        let p = ScaleParams::from_config(
            2,
            &ScaleConfig {
                n: 1_000_000,
                k_n: Some(2),
                radius: Some(2),
                ..Default::default()
            },
        )
        .unwrap();
        let t = estimate_quantiles(&[0.1, 0.3, 0.2], &p, 1).unwrap();
        assert_eq!(t.p0, 0.3);
        assert!(t.low_resolution);
    }

    #[test]
    fn zero_order_statistic_is_replaced() {
        let p = ScaleParams::from_config(
            1,
            &ScaleConfig {
                n: 5,
                k_n: Some(2),
                radius: Some(2),
                ..Default::default()
            },
        )
        .unwrap();
        // q clamps to 1: rank = N, the smallest sample, which is 0.
        let t = estimate_quantiles(&[0.0, 0.0, 0.4, 0.2], &p, 1).unwrap();
        assert!(t.zero_replaced);
        assert_eq!(t.p0, 0.2);
    }

    fn toy_hierarchy(
        env: &Environment,
        p: &ScaleParams,
        p0: f64,
    ) -> (IslandHierarchy, LambdaField) {
        let target: SiteSet = env.box_spec().sites().collect();
        let x = x_field(env, &target, p);
        let l = lambda_field(env, &target, p.radius as f64, 1e-10).unwrap();
        let q = QuantileTable {
            p0,
            c2: p.c2,
            ln_n: p.ln_n(),
            target_fraction: p.target_fraction(),
            sample_count: 1,
            environments: 1,
            rank: 1,
            low_resolution: false,
            zero_replaced: false,
        };
        (level_sets(&x, &l, &q, p).unwrap(), l)
    }

    #[test]
    fn level_set_thresholds() {
        let env = Environment::all_open(BoxSpec::new(1, 3).unwrap()).unwrap();
        let p = ScaleParams::from_config(
            1,
            &ScaleConfig {
                n: 100,
                k_n: Some(1),
                radius: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        let (h, _) = toy_hierarchy(&env, &p, 1.0);
        // X_v = P(τ > 1) is 1 inside and 1/2 at both ends.
        assert_eq!(h.u[0].1.len(), 5);
        // p_α > 1 for negative α here.
        assert!(h.u_alpha(-1.0).is_empty());
        let (h2, _) = toy_hierarchy(&env, &p, 0.6);
        assert_eq!(h2.u[0].1.len(), 5);
        let (h3, _) = toy_hierarchy(&env, &p, 0.9);
        assert_eq!(h3.u_alpha(0.0).len(), 5);
        assert_eq!(h3.d_lambda(0.0).len(), 7);
        let isolated =
            Environment::from_fn(BoxSpec::new(1, 3).unwrap(), |x| x.coord(0) == 0).unwrap();
        let (h4, _) = toy_hierarchy(&isolated, &p, 0.5);
        assert!(h4.d_lambda(0.0).is_empty());
    }

    #[test]
    fn nested_u_sets() {
        let env = Environment::generate(BoxSpec::new(2, 6).unwrap(), 0.7, 11).unwrap();
        let p = params();
        let (h, _) = toy_hierarchy(&env, &p, 0.3);
        assert!(h.u[0].1.is_subset(&h.u[1].1));
        assert!(h.u[1].1.is_subset(&h.u[2].1));
        assert!(h.dstar.is_subset(&h.d_lambda(h.dstar_threshold - 1e-300)) || h.dstar.is_empty());
    }

    #[test]
    fn greedy_keeps_larger_of_two_close_peaks() {
        // A spanning horizontal line with a 3x3 block on it.
        let bx = BoxSpec::new(2, 8).unwrap();
        let env = Environment::from_fn(bx, |x| {
            let (a, b) = (x.coord(0), x.coord(1));
            b == 0 || ((-1..=1).contains(&a) && (-1..=1).contains(&b))
        })
        .unwrap();
        let p = params();
        let (mut h, l) = toy_hierarchy(&env, &p, 1.0);
        let labels = label_clusters(&env);
        let (best, _) =
            l.values().iter().fold(
                (s(&[0, 0]), -1.0),
                |acc, (x, v)| if v > acc.1 { (*x, v) } else { acc },
            );
        let other = best.offset(0, 5);
        assert!(l.lambda(&other) < l.lambda(&best));
        h.dstar = [best, other].into_iter().collect();
        let out = select_islands(&h, &l, &labels, &bx, &p);
        assert_eq!(out.v, vec![best]);
        assert!(out.report.uncovered.is_empty());
        assert_eq!(out.dn, region_in(&bx, &best, p.island_radius(), Norm::L2));

        h.dstar = [other].into_iter().collect();
        let single = select_islands(&h, &l, &labels, &bx, &p);
        // `other` is not a 3R-local maximum, so it is reported instead.
        assert!(single.v.is_empty());
        assert_eq!(single.report.uncovered, vec![other]);

        h.dstar = SiteSet::new();
        let empty = select_islands(&h, &l, &labels, &bx, &p);
        assert!(empty.v.is_empty() && empty.dn.is_empty());
    }

    #[test]
    fn c_good_examples() {
        let bx = BoxSpec::new(2, 6).unwrap();
        let env = Environment::all_open(bx).unwrap();
        let p = params();
        assert!(p.c_good_horizon() >= 1);
        let good = c_good_sites(&env, 1.0, &p).unwrap();
        assert!(good.contains(&s(&[0, 0])));
        assert!(!good.contains(&s(&[6, 0])));
        let env2 = env.with_site(&s(&[1, 0]), false).unwrap();
        let good2 = c_good_sites(&env2, 1.0, &p).unwrap();
        assert!(!good2.contains(&s(&[0, 0])) && !good2.contains(&s(&[1, 0])));
    }

    #[test]
    fn fair_boxes_examples() {
        let bx = BoxSpec::new(2, 10).unwrap();
        let closed = Environment::all_closed(bx).unwrap();
        let f = epsilon_fair_analysis(&closed, 2, 1e-6, &Site::origin(2)).unwrap();
        assert!(f.fair.is_empty());
        let open = Environment::all_open(bx).unwrap();
        let f = epsilon_fair_analysis(&open, 2, 1e-6, &Site::origin(2)).unwrap();
        assert_eq!(f.fair.len(), f.witness.len());
        assert_eq!(f.cluster_sizes, vec![f.fair.len()]);
        assert!(f.fair.contains(&s(&[5, 0])) && f.fair.contains(&s(&[10, 10])));
        let lv = f.cluster_within(&s(&[1, 1]), 5.0);
        assert!(lv.contains(&s(&[0, 0])) && lv.contains(&s(&[5, 0])) && !lv.contains(&s(&[5, 5])));
        assert_eq!(f.box_of(&s(&[3, -3])), s(&[5, -5]));
    }
}
