//! Exact sampling of the walk conditioned on survival, loop erasure, and the
//! markers a conditioned path carries relative to the island hierarchy.
//!
//! Given the survival table `h`, the walk conditioned on `τ > n` is the
//! time-inhomogeneous chain that moves from `x` at time `t` to a neighbor
//! `y` with probability `(1/2d) h_{n-t-1}(y) / h_{n-t}(x)`.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::islands::IslandHierarchy;
use crate::lattice::{Environment, Site, SiteSet};
use crate::spectral::LambdaField;
use crate::survival::{survival_values, SurvivalField, SurvivalQuery, KILLED};

/// Tolerance on transition ratios before they count as inconsistent.
pub const RATIO_SLACK: f64 = 1e-12;

/// Nearest-neighbor path `[ω_0, ..., ω_k]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Site>", into = "Vec<Site>")]
pub struct Path {
    sites: Vec<Site>,
}

impl Path {
    pub fn new(sites: Vec<Site>) -> Result<Path> {
        if sites.is_empty() {
            return Err(Error::domain("a path has at least one site"));
        }
        if let Some(w) = sites.windows(2).find(|w| !w[0].is_adjacent(&w[1])) {
            return Err(Error::domain(format!(
                "{} and {} are not adjacent",
                w[0], w[1]
            )));
        }
        Ok(Path { sites })
    }

    pub fn single(s: Site) -> Path {
        Path { sites: vec![s] }
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn start(&self) -> Site {
        self.sites[0]
    }

    pub fn end(&self) -> Site {
        *self.sites.last().unwrap()
    }

    /// Number of steps `|ω|`.
    pub fn len(&self) -> usize {
        self.sites.len() - 1
    }

    /// True for a single-site path.
    pub fn is_empty(&self) -> bool {
        self.sites.len() == 1
    }

    pub fn is_self_avoiding(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.sites.len());
        self.sites.iter().all(|s| seen.insert(*s))
    }

    pub fn into_sites(self) -> Vec<Site> {
        self.sites
    }
}

impl TryFrom<Vec<Site>> for Path {
    type Error = Error;
    fn try_from(v: Vec<Site>) -> Result<Path> {
        Path::new(v)
    }
}

impl From<Path> for Vec<Site> {
    fn from(p: Path) -> Vec<Site> {
        p.sites
    }
}

/// Stream `index` of the ChaCha8 generator seeded with `master`.
pub fn sample_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// One walker inside a lockstep batch.
struct Walker {
    node: usize,
    /// Scaled `h_{n-t}` at the current node.
    h: f64,
    sites: Vec<Site>,
}

fn check_request(
    env: &Environment,
    start: &Site,
    n: usize,
    field: &SurvivalField,
) -> Result<usize> {
    if field.horizon() < n {
        return Err(Error::domain(format!(
            "field horizon {} below path length {n}",
            field.horizon()
        )));
    }
    if !env.box_spec().contains(start) {
        return Err(Error::domain(format!("start {start} outside box")));
    }
    let node = field.kernel().node_of(start);
    match node {
        Some(k) if field.scaled_layer(n)[k] > 0.0 => Ok(k),
        _ => Err(Error::NoSurvivingPath {
            start: *start,
            steps: n,
        }),
    }
}

/// Moves every walker one step using `next` (scaled `h_{n-t-1}`) and the log
/// ratio `ln(scale_{n-t-1} / scale_{n-t})`.
fn step_all<R: Rng>(
    field: &SurvivalField,
    walkers: &mut [Walker],
    rngs: &mut [R],
    next: &[f64],
    log_ratio: f64,
) -> Result<()> {
    let kernel = field.kernel();
    let w = 1.0 / kernel.degree() as f64;
    let factor = log_ratio.exp();
    let mut probs = vec![0.0; kernel.degree()];
    for (walker, rng) in walkers.iter_mut().zip(rngs.iter_mut()) {
        let nb = kernel.neighbors_of(walker.node);
        let mut total = 0.0;
        for (k, &e) in nb.iter().enumerate() {
            let p = if e >= KILLED - 1 {
                0.0
            } else {
                w * next[e as usize] * factor / walker.h
            };
            if !(-RATIO_SLACK..=1.0 + RATIO_SLACK).contains(&p) {
                return Err(Error::Consistency(format!(
                    "transition ratio {p} out of [0, 1] at {}",
                    kernel.node_site(walker.node)
                )));
            }
            probs[k] = p.clamp(0.0, 1.0);
            total += probs[k];
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Consistency(format!(
                "transition probabilities sum to {total} at {}",
                kernel.node_site(walker.node)
            )));
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (k, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                pick = Some(k);
                if u < acc {
                    break;
                }
            }
        }
        let k = pick.expect("positive survival implies a live neighbor");
        let node = nb[k] as usize;
        walker.node = node;
        walker.h = next[node];
        walker.sites.push(kernel.node_site(node));
    }
    Ok(())
}

fn run_lockstep<R: Rng>(
    env: &Environment,
    start: &Site,
    n: usize,
    field: &SurvivalField,
    rngs: &mut [R],
) -> Result<Vec<Path>> {
    let node = check_request(env, start, n, field)?;
    let mut cursor = field.descending(n);
    let (_, top, mut ls) = cursor.next_layer().expect("layer n exists");
    let h0 = top[node];
    let mut walkers: Vec<Walker> = (0..rngs.len())
        .map(|_| Walker {
            node,
            h: h0,
            sites: {
                let mut v = Vec::with_capacity(n + 1);
                v.push(*start);
                v
            },
        })
        .collect();
    while let Some((_, layer, ls_next)) = cursor.next_layer() {
        step_all(field, &mut walkers, rngs, layer, ls_next - ls)?;
        ls = ls_next;
    }
    Ok(walkers
        .into_iter()
        .map(|w| Path { sites: w.sites })
        .collect())
}

/// One path from the walk conditioned on surviving `n` steps.
pub fn sample_conditioned<R: Rng>(
    env: &Environment,
    start: &Site,
    n: usize,
    field: &SurvivalField,
    rng: &mut R,
) -> Result<Path> {
    let mut out = run_lockstep(env, start, n, field, std::slice::from_mut(rng))?;
    Ok(out.pop().unwrap())
}

/// `count` paths; path `i` uses stream `i` of `master`, so each equals the
/// path [`sample_conditioned`] produces with [`sample_rng`]`(master, i)`.
/// All walkers advance together so a checkpointed field is replayed once.
pub fn sample_batch(
    env: &Environment,
    start: &Site,
    n: usize,
    field: &SurvivalField,
    master: u64,
    count: usize,
) -> Result<Vec<Path>> {
    let mut rngs: Vec<ChaCha8Rng> = (0..count as u64).map(|i| sample_rng(master, i)).collect();
    run_lockstep(env, start, n, field, &mut rngs)
}

/// Log of the probability the conditioned chain assigns to `path`, as the
/// sum of its log transition ratios. `-inf` when a step is impossible.
pub fn path_log_probability(path: &Path, field: &SurvivalField) -> Result<f64> {
    let n = path.len();
    if field.horizon() < n {
        return Err(Error::domain("field horizon below path length"));
    }
    if field.log_value(n, &path.start()) == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let ln_w = -(field.kernel().degree() as f64).ln();
    let mut total = 0.0;
    for (t, w) in path.sites().windows(2).enumerate() {
        let hx = field.log_value(n - t, &w[0]);
        let hy = field.log_value(n - t - 1, &w[1]);
        if hy == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += ln_w + hy - hx;
    }
    Ok(total)
}

/// Loop erasure `η` of a path and the erased loops `l_0, ..., l_{|η|}` in
/// chronological order; `l_i` is a closed path at `η_i` (a single site when
/// nothing was erased there).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopDecomposition {
    pub eta: Path,
    pub loops: Vec<Path>,
}

impl LoopDecomposition {
    /// Concatenation `l_0 ⊕ [η_0, η_1] ⊕ l_1 ⊕ ... ⊕ l_{|η|}`.
    pub fn reconstruct(&self) -> Path {
        let sites = self
            .loops
            .iter()
            .flat_map(|l| l.sites().iter().copied())
            .collect();
        Path { sites }
    }

    /// Histogram `loop length -> count` over nonempty loops.
    pub fn length_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for l in self.loops.iter().filter(|l| !l.is_empty()) {
            *h.entry(l.len()).or_insert(0) += 1;
        }
        h
    }
}

/// Chronological loop erasure via last visits: `σ_0` is the last visit to
/// `ω_0`, `σ_i` the last visit to `ω_{σ_{i-1}+1}`, and `η_i = ω_{σ_i}`.
pub fn loop_erase(path: &Path) -> LoopDecomposition {
    let w = path.sites();
    let mut last: HashMap<Site, usize> = HashMap::with_capacity(w.len());
    for (t, s) in w.iter().enumerate() {
        last.insert(*s, t);
    }
    let mut eta = Vec::new();
    let mut loops = Vec::new();
    let mut from = 0;
    while from < w.len() {
        let sigma = last[&w[from]];
        eta.push(w[sigma]);
        loops.push(Path {
            sites: w[from..=sigma].to_vec(),
        });
        from = sigma + 1;
    }
    LoopDecomposition {
        eta: Path { sites: eta },
        loops,
    }
}

/// Island that a conditioned path is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IslandMark {
    Island(Site),
    /// The path never met `D_*` (or met it outside every representative's
    /// ball); the origin stands in.
    Origin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMarkers {
    pub vstar: IslandMark,
    /// First time the path attains its maximal λ.
    pub tstar: usize,
    pub met_dstar: bool,
    /// `S_{t*}` lay in more than one representative ball.
    pub ambiguous: bool,
    /// `S_{t*}` was in `D_*` but in no representative ball.
    pub unowned: bool,
    /// `T(v)` for every representative, in `V` order.
    pub hitting: Vec<(Site, Option<usize>)>,
}

impl PathMarkers {
    pub fn hitting_time(&self, v: &Site) -> Option<usize> {
        self.hitting
            .iter()
            .find(|(w, _)| w == v)
            .and_then(|(_, t)| *t)
    }

    /// `T(v*)`, or `None` when `v*` is the origin stand-in or never
    /// approached.
    pub fn vstar_hitting(&self) -> Option<usize> {
        match self.vstar {
            IslandMark::Island(v) => self.hitting_time(&v),
            IslandMark::Origin => None,
        }
    }
}

pub fn path_markers(path: &Path, lfield: &LambdaField, hier: &IslandHierarchy) -> PathMarkers {
    let lam: Vec<f64> = path.sites().iter().map(|s| lfield.lambda(s)).collect();
    let max = lam.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tstar = lam.iter().position(|&l| l == max).unwrap_or(0);
    let met = path.sites().iter().any(|s| hier.dstar.contains(s));
    let mut ambiguous = false;
    let mut unowned = false;
    let vstar = if met {
        let owners = hier.owners_of(&path.sites()[tstar]);
        ambiguous = owners.len() > 1;
        match owners.first() {
            Some(v) => IslandMark::Island(*v),
            None => {
                unowned = true;
                IslandMark::Origin
            }
        }
    } else {
        IslandMark::Origin
    };
    let reach = hier.params.approach_radius();
    let hitting = hier
        .v
        .iter()
        .map(|v| (*v, path.sites().iter().position(|s| s.dist(v) <= reach)))
        .collect();
    PathMarkers {
        vstar,
        tstar,
        met_dstar: met,
        ambiguous,
        unowned,
        hitting,
    }
}

/// `M(t)` membership of the loop-erasure sites and the index set
/// `A_t = {i : |l_i| = t, η_i ∉ M(t)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopTaxonomy {
    pub t: usize,
    /// `e^{-t / (ln t)^2}`; `None` for `t < 2`, where `M(t)` is all open
    /// sites by convention.
    pub threshold: Option<f64>,
    pub in_m: BTreeMap<Site, bool>,
    pub a_t: Vec<usize>,
}

pub fn loop_taxonomy(decomp: &LoopDecomposition, env: &Environment, t: usize) -> LoopTaxonomy {
    let sites: SiteSet = decomp.eta.sites().iter().copied().collect();
    let (threshold, in_m): (Option<f64>, BTreeMap<Site, bool>) = if t < 2 {
        (None, sites.iter().map(|s| (*s, env.is_open(s))).collect())
    } else {
        let lt = (t as f64).ln();
        let thr = (-(t as f64) / (lt * lt)).exp();
        let vals = survival_values(env, &SurvivalQuery::new(t), &sites);
        let m = vals
            .iter()
            .map(|(s, h)| (*s, h > 0.0 && h >= thr))
            .collect();
        (Some(thr), m)
    };
    let a_t = decomp
        .loops
        .iter()
        .enumerate()
        .filter(|(i, l)| l.len() == t && !in_m[&decomp.eta.sites()[*i]])
        .map(|(i, _)| i)
        .collect();
    LoopTaxonomy {
        t,
        threshold,
        in_m,
        a_t,
    }
}
