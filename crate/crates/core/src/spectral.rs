//! Principal eigenvalue of the simple random walk operator restricted to a
//! finite open set, and the field `v -> λ_v` over restricted components.
//!
//! The restricted operator is bipartite, so plain power iteration would
//! oscillate between the two extreme eigenvalues. We iterate the half-lazy
//! operator `(I + P) / 2`, whose top eigenvalue is `(1 + λ) / 2` with the
//! same Perron vector.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Environment, Site, SiteSet, SiteValues};
use crate::percolation::{restricted_component, RestrictedComponent};
use crate::survival::Kernel;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: DEFAULT_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl EigenOptions {
    pub fn with_tol(tol: f64) -> EigenOptions {
        EigenOptions {
            tol,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub lambda: f64,
    /// Sites carrying the eigenvector, sorted.
    pub sites: SiteSet,
    /// Perron vector aligned with `sites`, maximum entry 1.
    pub eigvec: Vec<f64>,
    /// `max |P φ - λ φ|`, from an explicit final application of `P`.
    pub residual: f64,
    pub iterations: usize,
}

impl SpectralResult {
    fn empty() -> SpectralResult {
        SpectralResult {
            lambda: 0.0,
            sites: SiteSet::new(),
            eigvec: Vec::new(),
            residual: 0.0,
            iterations: 0,
        }
    }
}

pub fn principal_eigen(
    env: &Environment,
    component: &RestrictedComponent,
    tol: f64,
) -> Result<SpectralResult> {
    principal_eigen_with(env, &component.sites, EigenOptions::with_tol(tol))
}

/// Principal eigenpair of `P` restricted to the open members of `sites`,
/// which must be connected (the Perron vector is otherwise not positive).
pub fn principal_eigen_with(
    env: &Environment,
    sites: &SiteSet,
    opts: EigenOptions,
) -> Result<SpectralResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::domain("eigen tolerance must be positive"));
    }
    let open = sites.filter(|s| env.is_open(s));
    if !is_connected(&open) {
        return Err(Error::domain(
            "open sites of an eigen problem must be connected",
        ));
    }
    let kernel = Kernel::from_sites(env.box_spec(), open.iter());
    if kernel.is_empty() {
        return Ok(SpectralResult::empty());
    }
    let (lambda, vec, residual, iterations) = power_iterate(&kernel, opts)?;
    let mut pairs: Vec<(Site, f64)> = (0..kernel.len())
        .map(|n| (kernel.node_site(n), vec[n]))
        .collect();
    pairs.sort_by_key(|a| a.0);
    let (sites, eigvec): (Vec<Site>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(SpectralResult {
        lambda,
        sites: SiteSet::from_sorted_unchecked(sites),
        eigvec,
        residual,
        iterations,
    })
}

fn is_connected(set: &SiteSet) -> bool {
    let Some(first) = set.first() else {
        return true;
    };
    let mut seen = vec![false; set.len()];
    seen[0] = true;
    let mut stack = vec![*first];
    let mut count = 1;
    while let Some(s) = stack.pop() {
        for n in s.neighbors() {
            if let Some(i) = set.position(&n) {
                if !seen[i] {
                    seen[i] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
    }
    count == set.len()
}

fn max_abs_diff_scaled(pv: &[f64], v: &[f64], lambda: f64) -> f64 {
    pv.iter()
        .zip(v)
        .map(|(a, b)| (a - lambda * b).abs())
        .fold(0.0, f64::max)
}

fn power_iterate(kernel: &Kernel, opts: EigenOptions) -> Result<(f64, Vec<f64>, f64, usize)> {
    let n = kernel.len();
    let mut v = vec![1.0; n];
    let mut pv = vec![0.0; n];
    let mut best = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        kernel.apply(&v, &mut pv, 0.0);
        // Rayleigh quotient of P; that of (I+P)/2 is (1 + this) / 2.
        let num: f64 = v.iter().zip(&pv).map(|(a, b)| a * b).sum();
        let den: f64 = v.iter().map(|a| a * a).sum();
        let lambda = num / den;
        let res = max_abs_diff_scaled(&pv, &v, lambda);
        best = best.min(res);
        if res <= opts.tol {
            let (lambda, res) = certify(kernel, &v)?;
            if res <= opts.tol {
                return Ok((lambda.max(0.0), v, res, it));
            }
        }
        // v <- (v + P v) / 2, renormalized to unit maximum.
        let mut m = 0.0f64;
        for (a, b) in v.iter_mut().zip(&pv) {
            *a = 0.5 * (*a + b);
            m = m.max(*a);
        }
        if !(m > 0.0) {
            return Err(Error::Consistency("power iterate vanished".into()));
        }
        let inv = 1.0 / m;
        v.iter_mut().for_each(|a| *a *= inv);
    }
    Err(Error::Convergence {
        site: None,
        best_residual: best,
        iterations: opts.max_iterations,
    })
}

/// One explicit application of `P` to the final vector.
fn certify(kernel: &Kernel, v: &[f64]) -> Result<(f64, f64)> {
    if v.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::Consistency(
            "Perron vector not strictly positive".into(),
        ));
    }
    let mut pv = vec![0.0; v.len()];
    kernel.apply(v, &mut pv, 0.0);
    let num: f64 = v.iter().zip(&pv).map(|(a, b)| a * b).sum();
    let den: f64 = v.iter().map(|a| a * a).sum();
    let lambda = num / den;
    Ok((lambda, max_abs_diff_scaled(&pv, v, lambda)))
}

#[derive(Clone, Debug)]
struct CacheEntry {
    sites: SiteSet,
    result: Arc<SpectralResult>,
}

/// `λ_v` over a target set, with one eigen solve per distinct restricted
/// component.
#[derive(Clone, Debug)]
pub struct LambdaField {
    values: SiteValues,
    radius: f64,
    tol: f64,
    cache: HashMap<Site, Vec<CacheEntry>>,
    slot: Vec<Option<(Site, usize)>>,
}

impl LambdaField {
    /// A field without cached eigenvectors, e.g. after loading from disk.
    pub fn from_values(values: SiteValues, radius: f64, tol: f64) -> LambdaField {
        let slot = vec![None; values.len()];
        LambdaField {
            values,
            radius,
            tol,
            cache: HashMap::new(),
            slot,
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn values(&self) -> &SiteValues {
        &self.values
    }

    pub fn sites(&self) -> &SiteSet {
        self.values.sites()
    }

    /// `λ_v`, or `None` outside the target set.
    pub fn get(&self, v: &Site) -> Option<f64> {
        self.values.get(v)
    }

    /// `λ_v`, with 0 outside the target set.
    pub fn lambda(&self, v: &Site) -> f64 {
        self.get(v).unwrap_or(0.0)
    }

    /// Cached eigen solve behind `λ_v`, when present.
    pub fn result(&self, v: &Site) -> Option<&Arc<SpectralResult>> {
        let i = self.values.sites().position(v)?;
        let (rep, k) = self.slot[i]?;
        Some(&self.cache[&rep][k].result)
    }

    /// Number of distinct components solved.
    pub fn distinct_components(&self) -> usize {
        self.cache.values().map(Vec::len).sum()
    }
}

pub fn lambda_field(
    env: &Environment,
    target: &SiteSet,
    radius: f64,
    tol: f64,
) -> Result<LambdaField> {
    lambda_field_with(env, target, radius, EigenOptions::with_tol(tol))
}

pub fn lambda_field_with(
    env: &Environment,
    target: &SiteSet,
    radius: f64,
    opts: EigenOptions,
) -> Result<LambdaField> {
    if !(radius >= 0.0) {
        return Err(Error::domain("radius must be nonnegative"));
    }
    let comps: Vec<SiteSet> = target
        .as_slice()
        .par_iter()
        .map(|v| restricted_component(env, v, radius).sites)
        .collect();

    // Deduplicate in target order so cache layout is deterministic.
    let mut cache: HashMap<Site, Vec<CacheEntry>> = HashMap::new();
    let mut unique: Vec<(usize, Site, usize)> = Vec::new();
    let mut slot = vec![None; comps.len()];
    for (i, c) in comps.iter().enumerate() {
        let Some(&rep) = c.first() else { continue };
        let bucket = cache.entry(rep).or_default();
        let k = match bucket.iter().position(|e| &e.sites == c) {
            Some(k) => k,
            None => {
                bucket.push(CacheEntry {
                    sites: c.clone(),
                    result: Arc::new(SpectralResult::empty()),
                });
                unique.push((i, rep, bucket.len() - 1));
                bucket.len() - 1
            }
        };
        slot[i] = Some((rep, k));
    }

    let solved: Vec<Result<SpectralResult>> = unique
        .par_iter()
        .map(|&(i, _, _)| {
            principal_eigen_with(env, &comps[i], opts).map_err(|e| match e {
                Error::Convergence {
                    best_residual,
                    iterations,
                    ..
                } => Error::Convergence {
                    site: Some(target.as_slice()[i]),
                    best_residual,
                    iterations,
                },
                e => e,
            })
        })
        .collect();
    for ((_, rep, k), r) in unique.iter().zip(solved) {
        cache.get_mut(rep).unwrap()[*k].result = Arc::new(r?);
    }

    let values = slot
        .iter()
        .map(|s| s.map_or(0.0, |(rep, k)| cache[&rep][k].result.lambda))
        .collect();
    Ok(LambdaField {
        values: SiteValues::new(target.clone(), values)?,
        radius,
        tol: opts.tol,
        cache,
        slot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BoxSpec;

    fn line(l: i32, open: impl Fn(i32) -> bool) -> Environment {
        Environment::from_fn(BoxSpec::new(1, l).unwrap(), |s| open(s.coord(0))).unwrap()
    }

    #[test]
    fn empty_and_isolated_components() {
        let env = line(3, |x| x == 0);
        let empty = RestrictedComponent {
            center: Site::new(&[1]),
            radius: 2.0,
            sites: SiteSet::new(),
        };
        let r = principal_eigen(&env, &empty, 1e-10).unwrap();
        assert_eq!(r.lambda, 0.0);
        assert!(r.eigvec.is_empty());
        let single = restricted_component(&env, &Site::new(&[0]), 2.0);
        let r = principal_eigen(&env, &single, 1e-10).unwrap();
        assert_eq!(r.lambda, 0.0);
        assert_eq!(r.eigvec, vec![1.0]);
    }

    #[test]
    fn three_site_path() {
        let env = line(3, |x| (0..3).contains(&x));
        let c = restricted_component(&env, &Site::new(&[1]), 5.0);
        let r = principal_eigen(&env, &c, 1e-12).unwrap();
        assert!((r.lambda - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(r.residual <= 1e-12);
        assert!((r.eigvec[1] - 1.0).abs() < 1e-12);
        assert!((r.eigvec[0] - 0.5f64.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn five_site_path_cosine() {
        let env = line(6, |x| (0..5).contains(&x));
        let f = lambda_field(&env, &[Site::new(&[2])].into_iter().collect(), 10.0, 1e-12).unwrap();
        let expected = (std::f64::consts::PI / 6.0).cos();
        assert!((f.lambda(&Site::new(&[2])) - expected).abs() < 1e-10);
    }

    #[test]
    fn closed_targets_are_zero_and_shared_components_hit_cache() {
        let env = line(6, |x| (0..5).contains(&x));
        let target: SiteSet = env.box_spec().sites().collect();
        let f = lambda_field(&env, &target, 10.0, 1e-10).unwrap();
        assert_eq!(f.lambda(&Site::new(&[-3])), 0.0);
        let a = f.lambda(&Site::new(&[0]));
        let b = f.lambda(&Site::new(&[4]));
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(f.distinct_components(), 1);
        assert!(Arc::ptr_eq(
            f.result(&Site::new(&[0])).unwrap(),
            f.result(&Site::new(&[3])).unwrap()
        ));
    }

    #[test]
    fn all_closed_field_is_zero() {
        let env = Environment::all_closed(BoxSpec::new(2, 2).unwrap()).unwrap();
        let target: SiteSet = env.box_spec().sites().collect();
        let f = lambda_field(&env, &target, 3.0, 1e-10).unwrap();
        assert!(f.values().values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn convergence_failure_is_reported() {
        let env = line(20, |x| x.abs() <= 15);
        let c = restricted_component(&env, &Site::new(&[0]), 15.0);
        let opts = EigenOptions {
            tol: 1e-14,
            max_iterations: 3,
        };
        match principal_eigen_with(&env, &c.sites, opts) {
            Err(Error::Convergence {
                iterations,
                best_residual,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert!(best_residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn larger_radius_never_lowers_lambda() {
        let env = Environment::generate(BoxSpec::new(2, 8).unwrap(), 0.7, 5).unwrap();
        let v = env
            .open_sites()
            .iter()
            .copied()
            .find(|s| s.norm() < 3.0)
            .unwrap();
        let mut prev = 0.0;
        for r in 0..8 {
            let c = restricted_component(&env, &v, r as f64);
            let l = principal_eigen(&env, &c, 1e-11).unwrap().lambda;
            assert!(l >= prev - 1e-10, "r={r}: {l} < {prev}");
            prev = l;
        }
    }
}
