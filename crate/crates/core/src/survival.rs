//! Exact dynamic programming for the killed simple random walk.
//!
//! A [`SurvivalField`] tabulates
//! `h_t(x) = P^x(S_0..S_t avoid O ∪ A and stay inside C)` for `t = 0..=T`
//! via `h_{t+1}(x) = (1/2d) Σ_{y~x} h_t(y)` on admissible `x`. The forward
//! recursion ([`ForwardWalk`]) carries `f_t(x) = P^s(S_t = x, survived)`
//! with the same operator, which is symmetric on the admissible set.
//!
//! Layers whose maximum drops below [`RESCALE_BELOW`] are renormalized and
//! the factor is accumulated in a per-layer log scale, so long horizons do
//! not underflow.

use std::borrow::Cow;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoxSpec, Environment, Site, SiteSet, SiteValues};

/// Layers with maximum below this are rescaled to maximum 1.
pub const RESCALE_BELOW: f64 = 1e-250;

pub(crate) const KILLED: u32 = u32::MAX;
pub(crate) const ESCAPED: u32 = u32::MAX - 1;

const PAR_THRESHOLD: usize = 1 << 15;

/// Simple random walk transition operator restricted to a set of lattice
/// sites ("nodes"). Moves to non-nodes either kill the walk or, for kernels
/// built with an escape region, count as an escape.
#[derive(Clone, Debug)]
pub struct Kernel {
    bx: BoxSpec,
    nodes: Vec<usize>,
    nbrs: Vec<u32>,
}

impl Kernel {
    /// Nodes are the box sites accepted by `admissible` (given linear index).
    pub(crate) fn from_predicate(bx: &BoxSpec, admissible: impl Fn(usize) -> bool) -> Kernel {
        let nodes: Vec<usize> = (0..bx.volume()).filter(|&i| admissible(i)).collect();
        Kernel::from_nodes(bx, nodes, |_| false)
    }

    /// Nodes are the given sites (must lie inside `bx`).
    pub(crate) fn from_sites<'a>(
        bx: &BoxSpec,
        sites: impl IntoIterator<Item = &'a Site>,
    ) -> Kernel {
        let mut nodes: Vec<usize> = sites.into_iter().filter_map(|s| bx.index(s)).collect();
        nodes.sort_unstable();
        nodes.dedup();
        Kernel::from_nodes(bx, nodes, |_| false)
    }

    /// `escapes(idx)` marks non-node box sites whose entry counts as success.
    pub(crate) fn from_nodes(
        bx: &BoxSpec,
        nodes: Vec<usize>,
        escapes: impl Fn(usize) -> bool,
    ) -> Kernel {
        let deg = 2 * bx.dim;
        let mut nbrs = Vec::with_capacity(nodes.len() * deg);
        for &i in &nodes {
            for k in 0..deg {
                let e = match bx.neighbor_index(i, k) {
                    None => KILLED,
                    Some(j) => match nodes.binary_search(&j) {
                        Ok(n) => n as u32,
                        Err(_) if escapes(j) => ESCAPED,
                        Err(_) => KILLED,
                    },
                };
                nbrs.push(e);
            }
        }
        Kernel {
            bx: *bx,
            nodes,
            nbrs,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn degree(&self) -> usize {
        2 * self.bx.dim
    }

    pub fn box_spec(&self) -> &BoxSpec {
        &self.bx
    }

    pub(crate) fn node_box_index(&self, n: usize) -> usize {
        self.nodes[n]
    }

    pub fn node_site(&self, n: usize) -> Site {
        self.bx.site(self.nodes[n])
    }

    pub fn node_of_index(&self, idx: usize) -> Option<usize> {
        self.nodes.binary_search(&idx).ok()
    }

    pub fn node_of(&self, s: &Site) -> Option<usize> {
        self.bx.index(s).and_then(|i| self.node_of_index(i))
    }

    pub(crate) fn neighbors_of(&self, n: usize) -> &[u32] {
        let deg = self.degree();
        &self.nbrs[n * deg..(n + 1) * deg]
    }

    /// `dst[i] = (1/2d) Σ_k src[nbr_k(i)]`, with escapes contributing
    /// `escape_value` and killed moves 0. The summation order is fixed.
    pub fn apply(&self, src: &[f64], dst: &mut [f64], escape_value: f64) {
        let deg = self.degree();
        let w = 1.0 / deg as f64;
        let row = |(i, out): (usize, &mut f64)| {
            let mut acc = 0.0;
            for &e in &self.nbrs[i * deg..(i + 1) * deg] {
                acc += match e {
                    KILLED => 0.0,
                    ESCAPED => escape_value,
                    n => src[n as usize],
                };
            }
            *out = acc * w;
        };
        if dst.len() >= PAR_THRESHOLD {
            dst.par_iter_mut().enumerate().for_each(row);
        } else {
            dst.iter_mut().enumerate().for_each(row);
        }
    }
}

/// Advances one layer and renormalizes if needed; returns the log of the
/// factor taken out (0 when no rescaling happened).
fn advance(kernel: &Kernel, src: &[f64], dst: &mut [f64], escape_value: f64) -> f64 {
    kernel.apply(src, dst, escape_value);
    rescale(dst)
}

fn rescale(v: &mut [f64]) -> f64 {
    let m = v.iter().copied().fold(0.0, f64::max);
    if m > 0.0 && m < RESCALE_BELOW {
        let inv = 1.0 / m;
        v.iter_mut().for_each(|x| *x *= inv);
        m.ln()
    } else {
        0.0
    }
}

/// Extra killing set `A`, optional confinement region `C`, and horizon.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurvivalQuery {
    pub avoid: SiteSet,
    pub confine: Option<SiteSet>,
    pub horizon: usize,
}

impl SurvivalQuery {
    pub fn new(horizon: usize) -> SurvivalQuery {
        SurvivalQuery {
            horizon,
            ..Default::default()
        }
    }

    pub fn avoiding(mut self, avoid: SiteSet) -> SurvivalQuery {
        self.avoid = avoid;
        self
    }

    pub fn confined_to(mut self, confine: SiteSet) -> SurvivalQuery {
        self.confine = Some(confine);
        self
    }

    pub fn is_admissible(&self, env: &Environment, s: &Site) -> bool {
        env.is_open(s)
            && !self.avoid.contains(s)
            && self.confine.as_ref().is_none_or(|c| c.contains(s))
    }

    pub fn kernel(&self, env: &Environment) -> Kernel {
        let bx = env.box_spec();
        match &self.confine {
            Some(c) => Kernel::from_sites(
                bx,
                c.iter()
                    .filter(|s| env.is_open(s) && !self.avoid.contains(s)),
            ),
            None => {
                let avoid = self.avoid.mask(bx);
                Kernel::from_predicate(bx, |i| env.is_open_index(i) && !avoid[i])
            }
        }
    }
}

/// Memory policy for [`SurvivalField`].
#[derive(Clone, Copy, Debug)]
pub struct FieldOptions {
    /// Maximum number of f64 entries held at once.
    pub max_entries: u128,
    /// Allow storing only every `k`-th layer when the full table is too big.
    pub checkpointing: bool,
    /// Force checkpoint spacing; `None` picks `ceil(sqrt(T + 1))`.
    pub checkpoint_every: Option<usize>,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions {
            max_entries: 1 << 28,
            checkpointing: true,
            checkpoint_every: None,
        }
    }
}

#[derive(Clone, Debug)]
enum Layers {
    Full(Vec<Vec<f64>>),
    Checkpointed {
        every: usize,
        checkpoints: Vec<Vec<f64>>,
    },
}

/// Time-indexed survival table `h_t(x)`, `t = 0..=horizon`.
#[derive(Clone, Debug)]
pub struct SurvivalField {
    query: SurvivalQuery,
    kernel: Arc<Kernel>,
    layers: Layers,
    log_scale: Vec<f64>,
}

pub fn survival_field(env: &Environment, query: &SurvivalQuery) -> Result<SurvivalField> {
    survival_field_with(env, query, FieldOptions::default())
}

pub fn survival_field_with(
    env: &Environment,
    query: &SurvivalQuery,
    opts: FieldOptions,
) -> Result<SurvivalField> {
    let kernel = Arc::new(query.kernel(env));
    let h = query.horizon;
    let n = kernel.len().max(1) as u128;
    let full = (h as u128 + 1) * n;
    let every = match opts.checkpoint_every {
        Some(k) => Some(k.max(1)),
        None if full > opts.max_entries => {
            if !opts.checkpointing {
                return Err(Error::Capacity {
                    what: "survival field entries",
                    requested: full,
                    cap: opts.max_entries,
                });
            }
            Some(((h + 1) as f64).sqrt().ceil() as usize)
        }
        None => None,
    };
    if let Some(k) = every {
        let held = ((h / k + 1) as u128 + k as u128) * n;
        if held > opts.max_entries {
            return Err(Error::Capacity {
                what: "checkpointed survival field entries",
                requested: held,
                cap: opts.max_entries,
            });
        }
    }

    let mut cur = vec![1.0; kernel.len()];
    let mut log_scale = Vec::with_capacity(h + 1);
    log_scale.push(0.0);
    let mut store = vec![cur.clone()];
    let mut next = vec![0.0; kernel.len()];
    for t in 1..=h {
        let ls = advance(&kernel, &cur, &mut next, 0.0);
        log_scale.push(log_scale[t - 1] + ls);
        std::mem::swap(&mut cur, &mut next);
        match every {
            None => store.push(cur.clone()),
            Some(k) if t % k == 0 => store.push(cur.clone()),
            Some(_) => {}
        }
    }
    let layers = match every {
        None => Layers::Full(store),
        Some(k) => Layers::Checkpointed {
            every: k,
            checkpoints: store,
        },
    };
    Ok(SurvivalField {
        query: query.clone(),
        kernel,
        layers,
        log_scale,
    })
}

impl SurvivalField {
    pub fn horizon(&self) -> usize {
        self.query.horizon
    }

    pub fn query(&self) -> &SurvivalQuery {
        &self.query
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn box_spec(&self) -> &BoxSpec {
        self.kernel.box_spec()
    }

    pub fn is_checkpointed(&self) -> bool {
        matches!(self.layers, Layers::Checkpointed { .. })
    }

    /// True when at least one layer was renormalized.
    pub fn is_log_domain(&self) -> bool {
        self.log_scale.iter().any(|&l| l != 0.0)
    }

    pub fn log_scale(&self, t: usize) -> f64 {
        self.log_scale[t]
    }

    pub fn log_scales(&self) -> &[f64] {
        &self.log_scale
    }

    /// Layer `t` over kernel nodes, divided by `exp(log_scale(t))`.
    pub fn scaled_layer(&self, t: usize) -> Cow<'_, [f64]> {
        assert!(t <= self.horizon(), "layer {t} beyond horizon");
        match &self.layers {
            Layers::Full(l) => Cow::Borrowed(&l[t]),
            Layers::Checkpointed { every, checkpoints } => {
                let base = t / every;
                let mut cur = checkpoints[base].clone();
                let mut next = vec![0.0; cur.len()];
                for _ in base * every..t {
                    advance(&self.kernel, &cur, &mut next, 0.0);
                    std::mem::swap(&mut cur, &mut next);
                }
                Cow::Owned(cur)
            }
        }
    }

    pub fn value(&self, t: usize, s: &Site) -> f64 {
        match self.kernel.node_of(s) {
            Some(n) => self.scaled_layer(t)[n] * self.log_scale[t].exp(),
            None => 0.0,
        }
    }

    /// `ln h_t(s)`; `-inf` for inadmissible sites.
    pub fn log_value(&self, t: usize, s: &Site) -> f64 {
        match self.kernel.node_of(s) {
            Some(n) => self.scaled_layer(t)[n].ln() + self.log_scale[t],
            None => f64::NEG_INFINITY,
        }
    }

    pub fn probability(&self, s: &Site) -> f64 {
        self.value(self.horizon(), s)
    }

    /// Layer `t` expanded to every box site (row-major, axis 0 fastest),
    /// still divided by `exp(log_scale(t))`.
    pub fn dense_scaled(&self, t: usize) -> Vec<f64> {
        let layer = self.scaled_layer(t);
        let mut out = vec![0.0; self.box_spec().volume()];
        for (n, v) in layer.iter().enumerate() {
            out[self.kernel.node_box_index(n)] = *v;
        }
        out
    }

    /// Layer `t` as probabilities over every box site.
    pub fn dense(&self, t: usize) -> Vec<f64> {
        let s = self.log_scale[t].exp();
        self.dense_scaled(t).into_iter().map(|v| v * s).collect()
    }

    /// Layers `from, from-1, ..., 0` in that order. Checkpointed fields
    /// recompute each block once.
    pub fn descending(&self, from: usize) -> DescendingLayers<'_> {
        DescendingLayers {
            field: self,
            next_t: Some(from),
            block_start: usize::MAX,
            block: Vec::new(),
        }
    }

    pub(crate) fn from_parts(
        query: SurvivalQuery,
        kernel: Kernel,
        layers: Vec<Vec<f64>>,
        log_scale: Vec<f64>,
    ) -> Result<SurvivalField> {
        if layers.len() != query.horizon + 1 || log_scale.len() != query.horizon + 1 {
            return Err(Error::domain("layer count does not match horizon"));
        }
        if layers.iter().any(|l| l.len() != kernel.len()) {
            return Err(Error::domain("layer length does not match kernel"));
        }
        Ok(SurvivalField {
            query,
            kernel: Arc::new(kernel),
            layers: Layers::Full(layers),
            log_scale,
        })
    }
}

/// Cursor over survival layers in decreasing time order.
pub struct DescendingLayers<'a> {
    field: &'a SurvivalField,
    next_t: Option<usize>,
    block_start: usize,
    block: Vec<Vec<f64>>,
}

impl DescendingLayers<'_> {
    /// Next `(t, scaled layer, log scale)`.
    pub fn next_layer(&mut self) -> Option<(usize, &[f64], f64)> {
        let t = self.next_t?;
        self.next_t = t.checked_sub(1);
        let f = self.field;
        match &f.layers {
            Layers::Full(l) => Some((t, &l[t], f.log_scale[t])),
            Layers::Checkpointed { every, checkpoints } => {
                let base = (t / every) * every;
                if base != self.block_start {
                    let mut block = vec![checkpoints[t / every].clone()];
                    let mut next = vec![0.0; block[0].len()];
                    for _ in base..t {
                        advance(&f.kernel, block.last().unwrap(), &mut next, 0.0);
                        block.push(next.clone());
                    }
                    self.block = block;
                    self.block_start = base;
                }
                Some((t, &self.block[t - base], f.log_scale[t]))
            }
        }
    }
}

/// Values of `h_T` over every box site without storing the table.
pub fn survival_layer(env: &Environment, query: &SurvivalQuery) -> Vec<f64> {
    let kernel = query.kernel(env);
    let (layer, ls) = roll(&kernel, query.horizon);
    let scale = ls.exp();
    let mut out = vec![0.0; env.box_spec().volume()];
    for (n, v) in layer.iter().enumerate() {
        out[kernel.node_box_index(n)] = v * scale;
    }
    out
}

/// `h_T` restricted to `sites`.
pub fn survival_values(env: &Environment, query: &SurvivalQuery, sites: &SiteSet) -> SiteValues {
    let dense = survival_layer(env, query);
    let bx = env.box_spec();
    let values = sites
        .iter()
        .map(|s| bx.index(s).map_or(0.0, |i| dense[i]))
        .collect();
    SiteValues::new(sites.clone(), values).expect("aligned")
}

fn roll(kernel: &Kernel, horizon: usize) -> (Vec<f64>, f64) {
    let mut cur = vec![1.0; kernel.len()];
    let mut next = vec![0.0; kernel.len()];
    let mut ls = 0.0;
    for _ in 0..horizon {
        ls += advance(kernel, &cur, &mut next, 0.0);
        std::mem::swap(&mut cur, &mut next);
    }
    (cur, ls)
}

/// Calls `f(t, kernel, scaled layer, log scale)` for `t = 0..=horizon`
/// without storing the table.
pub fn scan_layers(
    env: &Environment,
    query: &SurvivalQuery,
    mut f: impl FnMut(usize, &Kernel, &[f64], f64),
) {
    let kernel = query.kernel(env);
    let mut cur = vec![1.0; kernel.len()];
    let mut next = vec![0.0; kernel.len()];
    let mut ls = 0.0;
    f(0, &kernel, &cur, ls);
    for t in 1..=query.horizon {
        ls += advance(&kernel, &cur, &mut next, 0.0);
        std::mem::swap(&mut cur, &mut next);
        f(t, &kernel, &cur, ls);
    }
}

/// `ln max_x h_t(x)` for `t = 0..=horizon`; `-inf` once nothing survives.
pub fn log_max_profile(env: &Environment, query: &SurvivalQuery) -> Vec<f64> {
    let mut out = Vec::with_capacity(query.horizon + 1);
    scan_layers(env, query, |_, _, layer, ls| {
        let m = layer.iter().copied().fold(0.0, f64::max);
        out.push(if m > 0.0 {
            m.ln() + ls
        } else {
            f64::NEG_INFINITY
        });
    });
    out
}

/// `h_T(start)`; bit-identical to reading the full field.
pub fn survival_probability(env: &Environment, start: &Site, query: &SurvivalQuery) -> Result<f64> {
    if !env.box_spec().contains(start) {
        return Err(Error::domain(format!("start {start} outside box")));
    }
    let kernel = query.kernel(env);
    let Some(n) = kernel.node_of(start) else {
        return Ok(0.0);
    };
    let (layer, ls) = roll(&kernel, query.horizon);
    Ok(layer[n] * ls.exp())
}

/// `P^u(τ ≥ steps or the walk leaves region before τ)` for every open
/// `u` in `region`: moves onto open sites outside `region` count as escapes,
/// moves onto obstacles kill. Returns values over the open region sites.
pub fn survive_or_escape(env: &Environment, region: &SiteSet, steps: usize) -> SiteValues {
    let bx = env.box_spec();
    let mut nodes: Vec<usize> = region
        .iter()
        .filter(|s| env.is_open(s))
        .filter_map(|s| bx.index(s))
        .collect();
    nodes.sort_unstable();
    let region_mask = region.mask(bx);
    let kernel = Kernel::from_nodes(bx, nodes, |j| env.is_open_index(j) && !region_mask[j]);
    // G_0 = 1 on alive nodes: surviving `steps - 1` more moves means τ ≥ steps.
    let mut cur = vec![1.0; kernel.len()];
    let mut next = vec![0.0; kernel.len()];
    for _ in 1..steps.max(1) {
        kernel.apply(&cur, &mut next, 1.0);
        std::mem::swap(&mut cur, &mut next);
    }
    SiteValues::from_pairs(
        (0..kernel.len())
            .map(|n| (kernel.node_site(n), cur[n]))
            .collect(),
    )
}

/// Law of `S_n` given survival, with `ln P(survival up to n)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndpointLaw {
    pub start: Site,
    pub steps: usize,
    pub log_survival: f64,
    /// Nonzero masses, sorted by site.
    pub entries: Vec<(Site, f64)>,
}

impl EndpointLaw {
    pub fn mass(&self, s: &Site) -> f64 {
        self.entries
            .binary_search_by(|e| e.0.cmp(s))
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn mass_in(&self, set: &SiteSet) -> f64 {
        self.entries
            .iter()
            .filter(|(s, _)| set.contains(s))
            .map(|(_, m)| m)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, m)| m).sum()
    }

    pub fn survival(&self) -> f64 {
        self.log_survival.exp()
    }
}

/// Forward recursion `f_{t+1}(y) = (1/2d) Σ_{x~y} f_t(x)` from a point mass.
#[derive(Clone, Debug)]
pub struct ForwardWalk {
    kernel: Kernel,
    start: Site,
    cur: Vec<f64>,
    next: Vec<f64>,
    log_scale: f64,
    time: usize,
}

impl ForwardWalk {
    /// Horizon in `query` is ignored; an inadmissible start has zero mass.
    pub fn new(env: &Environment, start: &Site, query: &SurvivalQuery) -> Result<ForwardWalk> {
        if !env.box_spec().contains(start) {
            return Err(Error::domain(format!("start {start} outside box")));
        }
        let kernel = query.kernel(env);
        let mut cur = vec![0.0; kernel.len()];
        if let Some(n) = kernel.node_of(start) {
            cur[n] = 1.0;
        }
        let next = vec![0.0; kernel.len()];
        Ok(ForwardWalk {
            kernel,
            start: *start,
            cur,
            next,
            log_scale: 0.0,
            time: 0,
        })
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn step(&mut self) {
        self.log_scale += advance(&self.kernel, &self.cur, &mut self.next, 0.0);
        std::mem::swap(&mut self.cur, &mut self.next);
        self.time += 1;
    }

    pub fn advance_to(&mut self, t: usize) {
        while self.time < t {
            self.step();
        }
    }

    /// `ln P(survived up to the current time)`.
    pub fn log_mass(&self) -> f64 {
        self.cur.iter().sum::<f64>().ln() + self.log_scale
    }

    /// `P(S_t = s, survived)`.
    pub fn mass_at(&self, s: &Site) -> f64 {
        self.kernel
            .node_of(s)
            .map_or(0.0, |n| self.cur[n] * self.log_scale.exp())
    }

    pub fn law(&self) -> Result<EndpointLaw> {
        let total: f64 = self.cur.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NoSurvivingPath {
                start: self.start,
                steps: self.time,
            });
        }
        let mut entries: Vec<(Site, f64)> = self
            .cur
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(n, &m)| (self.kernel.node_site(n), m / total))
            .collect();
        entries.sort_by_key(|a| a.0);
        Ok(EndpointLaw {
            start: self.start,
            steps: self.time,
            log_survival: total.ln() + self.log_scale,
            entries,
        })
    }
}

/// Law of `S_n` given `τ > n` for the walk started at `start`.
pub fn endpoint_law(env: &Environment, start: &Site, n: usize) -> Result<EndpointLaw> {
    let mut fw = ForwardWalk::new(env, start, &SurvivalQuery::new(n))?;
    fw.advance_to(n);
    fw.law()
}
