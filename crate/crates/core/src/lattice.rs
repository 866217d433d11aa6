//! Finite boxes of `Z^d`, Bernoulli obstacle environments and lattice
//! geometry (ℓ2 balls, ℓ∞ boxes, neighborhoods).
//!
//! Sites are addressed by a linear index inside a [`BoxSpec`], row-major with
//! axis 0 fastest. Everything outside the box is an obstacle.

use std::fmt;
use std::str::FromStr;

use bitvec::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest supported dimension. `d = 1` exists for oracles and tests.
pub const MAX_DIM: usize = 3;

/// Default cap on environment volume (sites).
pub const DEFAULT_MAX_SITES: u64 = 1 << 30;

/// A vertex of `Z^d`, `1 <= d <= 3`.
///
/// Unused trailing coordinates are kept at zero, so the derived ordering is
/// lexicographic on the first `d` coordinates for sites of equal dimension.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    coords: [i32; MAX_DIM],
    dim: u8,
}

impl Site {
    /// Panics when `coords` is empty or longer than [`MAX_DIM`].
    pub fn new(coords: &[i32]) -> Site {
        Site::try_new(coords).expect("site dimension must be 1..=3")
    }

    pub fn try_new(coords: &[i32]) -> Result<Site> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::domain(format!(
                "site dimension {} outside 1..={MAX_DIM}",
                coords.len()
            )));
        }
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Site {
            coords: c,
            dim: coords.len() as u8,
        })
    }

    pub fn origin(dim: usize) -> Site {
        Site::new(&[0; MAX_DIM][..dim])
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    pub fn coord(&self, axis: usize) -> i32 {
        self.coords[axis]
    }

    pub fn offset(&self, axis: usize, delta: i32) -> Site {
        let mut s = *self;
        s.coords[axis] += delta;
        s
    }

    pub fn add(&self, other: &Site) -> Site {
        let mut s = *self;
        for a in 0..self.dim() {
            s.coords[a] += other.coords[a];
        }
        s
    }

    /// Squared ℓ2 distance, exact.
    pub fn dist2(&self, other: &Site) -> i64 {
        (0..self.dim())
            .map(|a| {
                let d = (self.coords[a] - other.coords[a]) as i64;
                d * d
            })
            .sum()
    }

    pub fn dist(&self, other: &Site) -> f64 {
        (self.dist2(other) as f64).sqrt()
    }

    pub fn l1(&self, other: &Site) -> i64 {
        (0..self.dim())
            .map(|a| ((self.coords[a] - other.coords[a]) as i64).abs())
            .sum()
    }

    pub fn linf(&self, other: &Site) -> i64 {
        (0..self.dim())
            .map(|a| ((self.coords[a] - other.coords[a]) as i64).abs())
            .max()
            .unwrap_or(0)
    }

    /// Euclidean norm `|x|`.
    pub fn norm(&self) -> f64 {
        self.dist(&Site::origin(self.dim()))
    }

    /// Nearest neighbors in the fixed order `-e_0, +e_0, -e_1, +e_1, ...`.
    pub fn neighbors(&self) -> impl Iterator<Item = Site> + '_ {
        (0..2 * self.dim()).map(move |k| self.offset(k / 2, if k % 2 == 0 { -1 } else { 1 }))
    }

    pub fn is_adjacent(&self, other: &Site) -> bool {
        self.dim == other.dim && self.l1(other) == 1
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl FromStr for Site {
    type Err = Error;

    /// Parses `x`, `x,y` or `x,y,z` (surrounding parentheses allowed).
    fn from_str(s: &str) -> Result<Site> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let coords = t
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<i32>()
                    .map_err(|e| Error::domain(format!("bad coordinate {p:?} in {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Site::try_new(&coords)
    }
}

impl Serialize for Site {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Site, D::Error> {
        let v = Vec::<i32>::deserialize(d)?;
        Site::try_new(&v).map_err(serde::de::Error::custom)
    }
}

/// The box `origin + [-L, L]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub dim: usize,
    pub half_width: i32,
    pub origin: Site,
}

impl BoxSpec {
    pub fn new(dim: usize, half_width: i32) -> Result<BoxSpec> {
        BoxSpec::centered(Site::try_new(&vec![0; dim.max(1)])?, half_width, dim)
    }

    pub fn centered(origin: Site, half_width: i32, dim: usize) -> Result<BoxSpec> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::domain(format!(
                "dimension {dim} outside 1..={MAX_DIM}"
            )));
        }
        if origin.dim() != dim {
            return Err(Error::domain("box origin dimension mismatch"));
        }
        if half_width < 0 {
            return Err(Error::domain("negative half width"));
        }
        Ok(BoxSpec {
            dim,
            half_width,
            origin,
        })
    }

    pub fn side(&self) -> usize {
        2 * self.half_width as usize + 1
    }

    pub fn volume(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    /// Volume without overflow, for capacity checks.
    pub fn volume_u128(&self) -> u128 {
        (self.side() as u128).pow(self.dim as u32)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.side().pow(axis as u32)
    }

    pub fn contains(&self, s: &Site) -> bool {
        s.dim() == self.dim
            && (0..self.dim).all(|a| (s.coord(a) - self.origin.coord(a)).abs() <= self.half_width)
    }

    pub fn index(&self, s: &Site) -> Option<usize> {
        if !self.contains(s) {
            return None;
        }
        let side = self.side();
        let mut idx = 0usize;
        for a in (0..self.dim).rev() {
            let off = (s.coord(a) - self.origin.coord(a) + self.half_width) as usize;
            idx = idx * side + off;
        }
        Some(idx)
    }

    pub fn site(&self, mut idx: usize) -> Site {
        let side = self.side();
        let mut c = [0i32; MAX_DIM];
        for (a, slot) in c.iter_mut().enumerate().take(self.dim) {
            *slot = (idx % side) as i32 - self.half_width + self.origin.coord(a);
            idx /= side;
        }
        Site::new(&c[..self.dim])
    }

    /// Coordinate of `idx` along `axis`, relative to the lower box face.
    pub fn axis_offset(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.side()
    }

    /// Linear index of the neighbor of `idx` in direction `k` (same order as
    /// [`Site::neighbors`]), or `None` when it leaves the box.
    pub fn neighbor_index(&self, idx: usize, k: usize) -> Option<usize> {
        let axis = k / 2;
        let off = self.axis_offset(idx, axis);
        let stride = self.stride(axis);
        if k.is_multiple_of(2) {
            (off > 0).then(|| idx - stride)
        } else {
            (off + 1 < self.side()).then(|| idx + stride)
        }
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.volume()).map(move |i| self.site(i))
    }

    /// True when `idx` lies on the face `axis = lower/upper`.
    pub fn on_face(&self, idx: usize, axis: usize, upper: bool) -> bool {
        let off = self.axis_offset(idx, axis);
        if upper {
            off + 1 == self.side()
        } else {
            off == 0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryRule {
    /// Sites outside the box are obstacles.
    Absorbing,
}

impl BoundaryRule {
    pub fn code(self) -> u8 {
        match self {
            BoundaryRule::Absorbing => 0,
        }
    }

    pub fn from_code(c: u8) -> Option<BoundaryRule> {
        (c == 0).then_some(BoundaryRule::Absorbing)
    }
}

/// Source of the per-site uniform `u(site, seed)`; a site is open iff `u < p`.
pub trait UniformSource {
    fn uniform(&self, site: &Site, seed: u64) -> f64;
}

/// Counter-based hash generator: platform independent and independent of the
/// box the site is generated in.
#[derive(Clone, Copy, Debug, Default)]
pub struct SiteHash;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl UniformSource for SiteHash {
    fn uniform(&self, site: &Site, seed: u64) -> f64 {
        let mut h = splitmix64(seed ^ (site.dim() as u64).wrapping_mul(0xA076_1D64_78BD_642F));
        for &c in site.coords() {
            h = splitmix64(h ^ (c as i64 as u64));
        }
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Bernoulli obstacle environment on a finite box.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    bx: BoxSpec,
    open: BitVec<u8, Lsb0>,
    p: f64,
    seed: u64,
    boundary: BoundaryRule,
}

impl Environment {
    /// Each site is open independently with probability `p`, with the
    /// monotone coupling `open iff u(site, seed) < p`.
    pub fn generate(bx: BoxSpec, p: f64, seed: u64) -> Result<Environment> {
        Environment::generate_from(bx, p, seed, &SiteHash, DEFAULT_MAX_SITES)
    }

    pub fn generate_from(
        bx: BoxSpec,
        p: f64,
        seed: u64,
        source: &impl UniformSource,
        max_sites: u64,
    ) -> Result<Environment> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("p = {p} outside (0,1)")));
        }
        check_capacity(&bx, max_sites)?;
        let open = (0..bx.volume())
            .map(|i| source.uniform(&bx.site(i), seed) < p)
            .collect();
        Ok(Environment {
            bx,
            open,
            p,
            seed,
            boundary: BoundaryRule::Absorbing,
        })
    }

    /// Hand-built environment. `p` is recorded as NaN: such masks are not
    /// reproducible from `(box, p, seed)`.
    pub fn from_fn(bx: BoxSpec, mut is_open: impl FnMut(&Site) -> bool) -> Result<Environment> {
        check_capacity(&bx, DEFAULT_MAX_SITES)?;
        let open = (0..bx.volume()).map(|i| is_open(&bx.site(i))).collect();
        Ok(Environment {
            bx,
            open,
            p: f64::NAN,
            seed: 0,
            boundary: BoundaryRule::Absorbing,
        })
    }

    pub fn all_open(bx: BoxSpec) -> Result<Environment> {
        Environment::from_fn(bx, |_| true)
    }

    pub fn all_closed(bx: BoxSpec) -> Result<Environment> {
        Environment::from_fn(bx, |_| false)
    }

    pub(crate) fn from_parts(
        bx: BoxSpec,
        open: BitVec<u8, Lsb0>,
        p: f64,
        seed: u64,
        boundary: BoundaryRule,
    ) -> Result<Environment> {
        if open.len() != bx.volume() {
            return Err(Error::domain("mask length does not match box volume"));
        }
        Ok(Environment {
            bx,
            open,
            p,
            seed,
            boundary,
        })
    }

    /// Copy with one site flipped.
    pub fn with_site(mut self, s: &Site, open: bool) -> Result<Environment> {
        let idx = self
            .bx
            .index(s)
            .ok_or_else(|| Error::domain(format!("site {s} outside box")))?;
        self.open.set(idx, open);
        Ok(self)
    }

    pub fn box_spec(&self) -> &BoxSpec {
        &self.bx
    }

    pub fn dim(&self) -> usize {
        self.bx.dim
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn boundary(&self) -> BoundaryRule {
        self.boundary
    }

    pub fn mask(&self) -> &BitSlice<u8, Lsb0> {
        &self.open
    }

    /// Mask bytes, little-endian bit order, row-major with axis 0 fastest.
    pub fn mask_bytes(&self) -> &[u8] {
        self.open.as_raw_slice()
    }

    /// Sites outside the box count as obstacles.
    pub fn is_open(&self, s: &Site) -> bool {
        self.bx.index(s).is_some_and(|i| self.open[i])
    }

    pub fn is_open_index(&self, idx: usize) -> bool {
        self.open[idx]
    }

    pub fn open_count(&self) -> usize {
        self.open.count_ones()
    }

    pub fn open_sites(&self) -> SiteSet {
        self.open.iter_ones().map(|i| self.bx.site(i)).collect()
    }
}

fn check_capacity(bx: &BoxSpec, max_sites: u64) -> Result<()> {
    let vol = bx.volume_u128();
    if vol == 0 {
        return Err(Error::domain("empty box"));
    }
    if vol > max_sites as u128 {
        return Err(Error::Capacity {
            what: "environment sites",
            requested: vol,
            cap: max_sites as u128,
        });
    }
    Ok(())
}

/// Sorted, duplicate-free set of sites.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SiteSet {
    sites: Vec<Site>,
}

impl SiteSet {
    pub fn new() -> SiteSet {
        SiteSet::default()
    }

    pub(crate) fn from_sorted_unchecked(sites: Vec<Site>) -> SiteSet {
        debug_assert!(sites.windows(2).all(|w| w[0] < w[1]));
        SiteSet { sites }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, s: &Site) -> bool {
        self.sites.binary_search(s).is_ok()
    }

    pub fn position(&self, s: &Site) -> Option<usize> {
        self.sites.binary_search(s).ok()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Site> {
        self.sites.iter()
    }

    pub fn as_slice(&self) -> &[Site] {
        &self.sites
    }

    pub fn first(&self) -> Option<&Site> {
        self.sites.first()
    }

    pub fn is_subset(&self, other: &SiteSet) -> bool {
        self.sites.iter().all(|s| other.contains(s))
    }

    pub fn union(&self, other: &SiteSet) -> SiteSet {
        self.iter().chain(other.iter()).copied().collect()
    }

    pub fn intersection(&self, other: &SiteSet) -> SiteSet {
        SiteSet::from_sorted_unchecked(
            self.sites
                .iter()
                .filter(|s| other.contains(s))
                .copied()
                .collect(),
        )
    }

    pub fn difference(&self, other: &SiteSet) -> SiteSet {
        SiteSet::from_sorted_unchecked(
            self.sites
                .iter()
                .filter(|s| !other.contains(s))
                .copied()
                .collect(),
        )
    }

    pub fn filter(&self, mut keep: impl FnMut(&Site) -> bool) -> SiteSet {
        SiteSet::from_sorted_unchecked(self.sites.iter().filter(|s| keep(s)).copied().collect())
    }

    /// Membership mask over the linear indices of `bx`; members outside the
    /// box are ignored.
    pub fn mask(&self, bx: &BoxSpec) -> BitVec<u8, Lsb0> {
        let mut m = bitvec![u8, Lsb0; 0; bx.volume()];
        for s in &self.sites {
            if let Some(i) = bx.index(s) {
                m.set(i, true);
            }
        }
        m
    }

    pub fn into_vec(self) -> Vec<Site> {
        self.sites
    }
}

impl FromIterator<Site> for SiteSet {
    fn from_iter<I: IntoIterator<Item = Site>>(iter: I) -> SiteSet {
        let mut sites: Vec<Site> = iter.into_iter().collect();
        sites.sort_unstable();
        sites.dedup();
        SiteSet { sites }
    }
}

impl<'a> IntoIterator for &'a SiteSet {
    type Item = &'a Site;
    type IntoIter = std::slice::Iter<'a, Site>;

    fn into_iter(self) -> Self::IntoIter {
        self.sites.iter()
    }
}

/// Scalar values keyed by a [`SiteSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteValues {
    sites: SiteSet,
    values: Vec<f64>,
}

impl SiteValues {
    pub fn new(sites: SiteSet, values: Vec<f64>) -> Result<SiteValues> {
        if sites.len() != values.len() {
            return Err(Error::domain("site/value length mismatch"));
        }
        Ok(SiteValues { sites, values })
    }

    /// Builds from unsorted pairs; later duplicates are dropped.
    pub fn from_pairs(mut pairs: Vec<(Site, f64)>) -> SiteValues {
        pairs.sort_by_key(|a| a.0);
        pairs.dedup_by(|b, a| a.0 == b.0);
        let (sites, values) = pairs.into_iter().unzip();
        SiteValues {
            sites: SiteSet::from_sorted_unchecked(sites),
            values,
        }
    }

    pub fn get(&self, s: &Site) -> Option<f64> {
        self.sites.position(s).map(|i| self.values[i])
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Site, f64)> {
        self.sites.iter().zip(self.values.iter().copied())
    }

    pub fn select(&self, mut keep: impl FnMut(&Site, f64) -> bool) -> SiteSet {
        SiteSet::from_sorted_unchecked(
            self.iter()
                .filter(|(s, v)| keep(s, *v))
                .map(|(s, _)| *s)
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L2,
    Linf,
}

/// `{x : |x - center| <= radius}` in the chosen norm. The ℓ∞ version is the
/// box `K_r(center)`.
pub fn region(center: &Site, radius: f64, norm: Norm) -> SiteSet {
    region_clipped(center, radius, norm, None)
}

/// As [`region`], intersected with `bx`.
pub fn region_in(bx: &BoxSpec, center: &Site, radius: f64, norm: Norm) -> SiteSet {
    region_clipped(center, radius, norm, Some(bx))
}

fn region_clipped(center: &Site, radius: f64, norm: Norm, bx: Option<&BoxSpec>) -> SiteSet {
    if !(radius >= 0.0) {
        return SiteSet::new();
    }
    let d = center.dim();
    let r = radius.floor() as i64;
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    for a in 0..d {
        lo[a] = center.coord(a) as i64 - r;
        hi[a] = center.coord(a) as i64 + r;
        if let Some(b) = bx {
            lo[a] = lo[a].max((b.origin.coord(a) - b.half_width) as i64);
            hi[a] = hi[a].min((b.origin.coord(a) + b.half_width) as i64);
        }
        if lo[a] > hi[a] {
            return SiteSet::new();
        }
    }
    let mut out = Vec::new();
    let mut cur = lo;
    loop {
        let mut c = [0i32; MAX_DIM];
        for a in 0..d {
            c[a] = cur[a] as i32;
        }
        let s = Site {
            coords: c,
            dim: d as u8,
        };
        let inside = match norm {
            Norm::Linf => true,
            Norm::L2 => (s.dist2(center) as f64).sqrt() <= radius,
        };
        if inside {
            out.push(s);
        }
        // Increment the last axis fastest so output is lexicographic.
        let mut a = d;
        loop {
            if a == 0 {
                return SiteSet::from_sorted_unchecked(out);
            }
            a -= 1;
            if cur[a] < hi[a] {
                cur[a] += 1;
                break;
            }
            cur[a] = lo[a];
        }
    }
}

/// Iterator over all sites at ℓ∞ distance exactly `k` from `center`, in
/// lexicographic order.
pub(crate) fn linf_shell(center: &Site, k: i64) -> Vec<Site> {
    let d = center.dim();
    let mut out = Vec::new();
    let mut cur = [-k; MAX_DIM];
    loop {
        if cur[..d].iter().any(|c| c.abs() == k) {
            let mut s = *center;
            for (a, &c) in cur.iter().enumerate().take(d) {
                s = s.offset(a, c as i32);
            }
            out.push(s);
        }
        let mut a = d;
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            if cur[a] < k {
                cur[a] += 1;
                break;
            }
            cur[a] = -k;
        }
    }
}
