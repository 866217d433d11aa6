//! Acceptance criteria, run by a plain `main` so that every criterion prints
//! its PASS/FAIL line. A panic inside a criterion counts as a failure.
//! Arguments act as substring filters on the criterion names.

mod common;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use trapwalk::experiments::{
    island_ball, island_environment, run_inequality_suite, run_survival_asymptotics, BatchSpec,
    EnvSource, ExperimentConfig,
};
use trapwalk::islands::{estimate_quantiles, ScaleConfig};
use trapwalk::percolation::label_clusters;
use trapwalk::spectral::{principal_eigen_with, EigenOptions};
use trapwalk::survival::{endpoint_law, survival_field, SurvivalQuery};
use trapwalk::walker::{loop_erase, path_log_probability, sample_batch, Path};
use trapwalk::{BoxSpec, Environment, Site, SiteSet};

use common::*;

const SLACK: f64 = 1e-8;
/// Lattice dimension of criteria 3 and 4.
const DIM: f64 = 2.0;

fn criterion_1_dp_matches_enumeration() {
    let t0 = Instant::now();
    let horizon = 8;
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for seed in 0..200u64 {
        let dim = 1 + (seed % 2) as usize;
        let hw = match dim {
            1 => 1 + (mix(seed) % 24) as i32,
            _ => 1 + (mix(seed) % 3) as i32,
        };
        let p = 0.3 + 0.65 * unit(seed ^ 0xABCD);
        let bx = BoxSpec::new(dim, hw).unwrap();
        assert!(bx.volume() <= 49);
        let env = Environment::generate(bx, p, seed).unwrap();
        let field = survival_field(&env, &SurvivalQuery::new(horizon)).unwrap();
        for s in env.box_spec().sites() {
            let exact = enumerated_survival(&s, horizon, &|x: &Site| env.is_open(x));
            for (t, e) in exact.iter().enumerate() {
                worst = worst.max((field.value(t, &s) - e).abs());
                compared += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst <= 1e-12 && secs < 60.0;
    report(
        1,
        "dp_vs_enumeration",
        ok,
        format!("{compared} values, max abs diff {worst:.3e} (tol 1e-12), {secs:.2}s (limit 60s)"),
    );
    assert!(ok);
}

fn criterion_2_doob_sampler_exact() {
    // The conditioned law puts equal mass on every surviving path, so the
    // empirical law is compared on cases with at most this many paths; the
    // statistical noise of 1e5 draws then sits well below the TV tolerance.
    const MAX_OUTCOMES: usize = 24;
    const SAMPLES: usize = 100_000;
    let t0 = Instant::now();
    let mut cases = Vec::new();
    let mut seed = 0u64;
    while cases.len() < 20 {
        let dim = 1 + (seed % 2) as usize;
        let hw = if dim == 1 { 7 } else { 1 };
        let bx = BoxSpec::new(dim, hw).unwrap();
        assert!(bx.volume() <= 16);
        let p = 0.55 + 0.4 * unit(seed);
        let env = Environment::generate(bx, p, 1000 + seed).unwrap();
        let o = Site::origin(dim);
        let n = (1..=6)
            .rev()
            .find(|&n| (1..=MAX_OUTCOMES).contains(&surviving_paths(&env, &o, n).len()));
        if let Some(n) = n {
            cases.push((seed, env, n));
        }
        seed += 1;
    }
    let mut worst_log = 0.0f64;
    let mut worst_tv = 0.0f64;
    for (seed, env, n) in &cases {
        let o = Site::origin(env.dim());
        let paths = surviving_paths(env, &o, *n);
        let exact = -(paths.len() as f64).ln();
        let field = survival_field(env, &SurvivalQuery::new(*n)).unwrap();
        for p in &paths {
            let lp = path_log_probability(&Path::new(p.clone()).unwrap(), &field).unwrap();
            worst_log = worst_log.max((lp - exact).abs());
        }
        let index: HashMap<&[Site], usize> = paths
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_slice(), i))
            .collect();
        let mut counts = vec![0usize; paths.len()];
        for s in sample_batch(env, &o, *n, &field, 0x5EED ^ seed, SAMPLES).unwrap() {
            let i = index
                .get(s.sites())
                .unwrap_or_else(|| panic!("sampled a non-surviving path {:?}", s.sites()));
            counts[*i] += 1;
        }
        let q = 1.0 / paths.len() as f64;
        let tv = 0.5
            * counts
                .iter()
                .map(|&c| (c as f64 / SAMPLES as f64 - q).abs())
                .sum::<f64>();
        worst_tv = worst_tv.max(tv);
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst_log <= 1e-9 && worst_tv <= 0.01 && secs < 120.0;
    report(
        2,
        "doob_exactness",
        ok,
        format!(
            "{} environments, max log diff {worst_log:.3e} (tol 1e-9), max TV {worst_tv:.4} (tol 0.01), {secs:.2}s",
            cases.len()
        ),
    );
    assert!(ok);
}

fn env_2d(seed: u64) -> Environment {
    Environment::generate(BoxSpec::new(2, 10).unwrap(), 0.7, seed).unwrap()
}

/// Counts violations of `lhs <= rhs * (1 + SLACK)`.
fn exceeds(lhs: f64, rhs: f64) -> bool {
    lhs > rhs * (1.0 + SLACK)
}

fn criterion_3_eigenvalue_sandwich() {
    let t0 = Instant::now();
    let radius = 6.0f64;
    let m_max = 50;
    let cap = (2.0 * radius).powf(DIM / 2.0);
    let per_env: Vec<(u64, u64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let env = env_2d(seed);
            let (mut tested, mut bad, mut worst_lib) = (0u64, 0u64, 0.0f64);
            for v in env.open_sites().iter() {
                let comp = ball_component(&env, v, radius);
                let lambda = dense_principal_eigenvalue(&comp);
                let set: SiteSet = comp.iter().copied().collect();
                let lib = principal_eigen_with(&env, &set, EigenOptions::default()).unwrap();
                worst_lib = worst_lib.max((lib.lambda - lambda).abs());
                let layers = stay_probabilities(&comp, m_max);
                for (m, layer) in layers.iter().enumerate().skip(1) {
                    let best = layer.iter().copied().fold(0.0, f64::max);
                    let lm = lambda.max(0.0).powi(m as i32);
                    tested += 1;
                    bad += (exceeds(lm, best) || exceeds(best, cap * lm)) as u64;
                }
            }
            (tested, bad, worst_lib)
        })
        .collect();
    let tested: u64 = per_env.iter().map(|e| e.0).sum();
    let bad: u64 = per_env.iter().map(|e| e.1).sum();
    let worst_lib = per_env.iter().map(|e| e.2).fold(0.0, f64::max);

    let mut cfg = ExperimentConfig {
        batch: BatchSpec {
            dim: 2,
            half_width: 10,
            p: 0.7,
            seed_start: 0,
            count: 100,
            origin_filter: false,
            ..BatchSpec::default()
        },
        scale: ScaleConfig {
            k_n: Some(5),
            radius: Some(6),
            ..ScaleConfig::new(1000)
        },
        ..ExperimentConfig::default()
    };
    cfg.inequalities.m_max = m_max;
    cfg.inequalities.avoid_m_max = 1;
    cfg.inequalities.est_m_max = 1;
    let rep = run_inequality_suite(&cfg).unwrap();
    let lower = rep.check("sandwich_lower").unwrap();
    let upper = rep.check("sandwich_upper").unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let ok = bad == 0
        && worst_lib <= 1e-9
        && lower.violations == 0
        && upper.violations == 0
        && rep.check("sandwich_upper_large_components").is_none()
        && secs < 300.0;
    report(
        3,
        "eigenvalue_sandwich",
        ok,
        format!(
            "oracle: {tested} (v, m) pairs, {bad} violations; library suite: {} + {} checks, {} + {} violations; \
             eigenvalue agreement {worst_lib:.2e}; slack 1+1e-8; {secs:.1}s (limit 300s)",
            lower.tested, upper.tested, lower.violations, upper.violations
        ),
    );
    assert!(ok);
}

fn criterion_4_avoid_u_alpha() {
    let t0 = Instant::now();
    let (n, k_n, radius, m_max) = (1000u64, 5usize, 6usize, 100usize);
    let params = ScaleConfig {
        k_n: Some(k_n),
        radius: Some(radius),
        ..ScaleConfig::new(n)
    }
    .resolve(2)
    .unwrap();
    let seeds = 200..250u64;
    let envs: Vec<Environment> = seeds.clone().map(env_2d).collect();
    let bx = BoxSpec::new(2, 10).unwrap();
    let inner = 10 - k_n as i32;

    // X_v = P^v(τ > k_n) from the oracle, over every site.
    let xs: Vec<HashMap<Site, f64>> = envs
        .par_iter()
        .map(|env| {
            let open: Vec<Site> = env.open_sites().into_vec();
            let layers = stay_probabilities(&open, k_n);
            let mut x: HashMap<Site, f64> = bx.sites().map(|s| (s, 0.0)).collect();
            for (s, v) in open.iter().zip(&layers[k_n]) {
                x.insert(*s, *v);
            }
            x
        })
        .collect();
    let samples: Vec<f64> = xs
        .iter()
        .flat_map(|x| {
            bx.sites()
                .filter(|s| s.coords().iter().all(|c| c.abs() <= inner))
                .map(|s| x[&s])
                .collect::<Vec<_>>()
        })
        .collect();
    let q = estimate_quantiles(&samples, &params, envs.len()).unwrap();

    let vol = (2.0 * radius as f64).powf(DIM / 2.0);
    let alphas = [0.0, params.alpha1, params.alpha2];
    let per_env: Vec<(u64, u64)> = envs
        .par_iter()
        .zip(&xs)
        .map(|(env, x)| {
            let (mut tested, mut bad) = (0u64, 0u64);
            for a in alphas {
                let pa = q.p_alpha(a);
                let allowed: Vec<Site> = env
                    .open_sites()
                    .iter()
                    .copied()
                    .filter(|s| x[s] < pa)
                    .collect();
                let layers = stay_probabilities(&allowed, m_max);
                for (m, layer) in layers.iter().enumerate().skip(1) {
                    let rhs = vol * pa.powf(m as f64 / k_n as f64);
                    tested += env.open_count() as u64;
                    bad += layer.iter().filter(|&&h| exceeds(h, rhs)).count() as u64;
                }
            }
            (tested, bad)
        })
        .collect();
    let tested: u64 = per_env.iter().map(|e| e.0).sum();
    let bad: u64 = per_env.iter().map(|e| e.1).sum();

    let mut cfg = ExperimentConfig {
        batch: BatchSpec {
            dim: 2,
            half_width: 10,
            p: 0.7,
            seed_start: seeds.start,
            count: envs.len(),
            origin_filter: false,
            ..BatchSpec::default()
        },
        scale: ScaleConfig {
            k_n: Some(k_n),
            radius: Some(radius),
            ..ScaleConfig::new(n)
        },
        ..ExperimentConfig::default()
    };
    cfg.inequalities.m_max = 1;
    cfg.inequalities.avoid_m_max = m_max;
    cfg.inequalities.est_m_max = 1;
    let rep = run_inequality_suite(&cfg).unwrap();
    let lib = rep.check("avoid_u_alpha").unwrap();
    let p0_lib = rep.summary_value("p0").and_then(|c| c.as_f64()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let ok = bad == 0 && lib.hard && lib.violations == 0 && (p0_lib - q.p0).abs() <= 1e-12 * q.p0;
    report(
        4,
        "avoid_u_alpha",
        ok,
        format!(
            "oracle: {tested} (v, m, alpha) triples, {bad} violations; library suite: {} tested, {} violations; \
             p0 {:.6e} (library {p0_lib:.6e}); slack 1+1e-8; {secs:.1}s",
            lib.tested, lib.violations, q.p0
        ),
    );
    assert!(ok);
}

/// Checks the structural properties of one decomposition and its agreement
/// with the index-based reference. Returns a description of the first
/// failure.
fn check_decomposition(path: &[Site]) -> Result<bool, String> {
    let p = Path::new(path.to_vec()).map_err(|e| e.to_string())?;
    let d = loop_erase(&p);
    if d.reconstruct().sites() != path {
        return Err(format!("reconstruction differs for {path:?}"));
    }
    if !d.eta.is_self_avoiding() {
        return Err(format!("eta not self-avoiding for {path:?}"));
    }
    if d.loops.len() != d.eta.sites().len() {
        return Err("one loop per eta site expected".into());
    }
    for (i, (l, e)) in d.loops.iter().zip(d.eta.sites()).enumerate() {
        if l.start() != *e || l.end() != *e {
            return Err(format!("loop {i} not closed at eta_{i}"));
        }
        if l.sites().iter().any(|s| d.eta.sites()[..i].contains(s)) {
            return Err(format!("loop {i} meets an earlier eta site"));
        }
    }
    let (eta, loops) = reference_loops(path);
    let same = d.eta.sites() == eta.as_slice()
        && d.loops.len() == loops.len()
        && d.loops
            .iter()
            .zip(&loops)
            .all(|(a, b)| a.sites() == b.as_slice());
    Ok(same)
}

fn criterion_5_loop_erasure() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    let mut mismatches = 0usize;
    let walks = 10_000;
    for _ in 0..walks {
        let len = rng.random_range(0..=1000);
        let dim = rng.random_range(1..=3usize);
        let mut s = Site::origin(dim);
        let mut path = vec![s];
        for _ in 0..len {
            let axis = rng.random_range(0..dim);
            s = s.offset(axis, if rng.random_bool(0.5) { 1 } else { -1 });
            path.push(s);
        }
        match check_decomposition(&path) {
            Ok(true) => {}
            Ok(false) => mismatches += 1,
            Err(e) => failures.push(e),
        }
    }
    let bx = BoxSpec::new(2, 1).unwrap();
    let cells: Vec<Site> = bx.sites().collect();
    let mut exhaustive = 0usize;
    for len in 0..=6 {
        for path in all_paths_within(&cells, len) {
            exhaustive += 1;
            match check_decomposition(&path) {
                Ok(true) => {}
                Ok(false) => mismatches += 1,
                Err(e) => failures.push(e),
            }
        }
    }
    let ok = failures.is_empty() && mismatches == 0;
    report(
        5,
        "loop_erasure",
        ok,
        format!(
            "{walks} random walks up to 1000 steps and {exhaustive} exhaustive 3x3 paths; \
             {} property failures, {mismatches} reference mismatches",
            failures.len()
        ),
    );
    assert!(ok, "{:?}", failures.first());
}

fn criterion_6_eigen_oracle() {
    let mut worst = 0.0f64;
    let mut components = 0usize;
    for seed in 0..50u64 {
        let p = 0.4 + 0.55 * unit(seed + 77);
        let env = Environment::generate(BoxSpec::new(2, 3).unwrap(), p, seed).unwrap();
        let labels = label_clusters(&env);
        for id in 0..labels.cluster_count() as u32 {
            let members = labels.members(id);
            let lib = principal_eigen_with(&env, &members, EigenOptions::default()).unwrap();
            let dense = dense_principal_eigenvalue(members.as_slice());
            worst = worst.max((lib.lambda - dense).abs());
            components += 1;
        }
        // The labelling must agree with an independent flood fill.
        let mut a: Vec<Vec<Site>> = (0..labels.cluster_count() as u32)
            .map(|i| labels.members(i).into_vec())
            .collect();
        a.sort();
        let mut b = open_components(&env);
        b.sort();
        assert_eq!(a, b, "cluster labels differ for seed {seed}");
    }
    let mut worst_path = 0.0f64;
    for hw in 0..=40 {
        let env = Environment::all_open(BoxSpec::new(1, hw).unwrap()).unwrap();
        let len = env.open_count();
        let lib = principal_eigen_with(&env, &env.open_sites(), EigenOptions::default()).unwrap();
        worst_path = worst_path.max((lib.lambda - (PI / (len as f64 + 1.0)).cos()).abs());
    }
    for seed in 0..50u64 {
        let env = Environment::generate(BoxSpec::new(1, 30).unwrap(), 0.85, seed).unwrap();
        for comp in open_components(&env) {
            let set: SiteSet = comp.iter().copied().collect();
            let lib = principal_eigen_with(&env, &set, EigenOptions::default()).unwrap();
            let exact = (PI / (comp.len() as f64 + 1.0)).cos();
            worst_path = worst_path.max((lib.lambda - exact).abs());
        }
    }
    let ok = worst <= 1e-9 && worst_path <= 1e-10;
    report(
        6,
        "eigen_oracle",
        ok,
        format!(
            "{components} components of 7x7 boxes, max diff {worst:.2e} (tol 1e-9); \
             segments max diff {worst_path:.2e} (tol 1e-10)"
        ),
    );
    assert!(ok);
}

fn criterion_7_island_localization() {
    let t0 = Instant::now();
    let bx = BoxSpec::new(2, 100).unwrap();
    let env = island_environment(bx, 8.0, 60).unwrap();
    let ball = island_ball(&bx, 8.0, 60);
    let centre = Site::new(&[60, 0]);
    assert!(ball.iter().all(|s| s.dist(&centre) <= 8.0));
    assert!(ball.iter().all(|s| env.is_open(s)));
    // Everything open outside the ball is a width-one corridor from the origin.
    let outside: Vec<Site> = env
        .open_sites()
        .iter()
        .copied()
        .filter(|s| !ball.contains(s))
        .collect();
    assert!(outside.contains(&Site::origin(2)));
    assert!(outside.iter().all(|s| s.coord(1) == 0));
    let law = endpoint_law(&env, &Site::origin(2), 2000).unwrap();
    let mass = law.mass_in(&ball);
    let secs = t0.elapsed().as_secs_f64();
    let ok = mass >= 0.99 && (law.total() - 1.0).abs() <= 1e-12 && secs < 600.0;
    report(
        7,
        "island_localization",
        ok,
        format!("P(S_n in ball | survival) = {mass:.12} (need >= 0.99), n = 2000, {secs:.2}s"),
    );
    assert!(ok);
}

fn criterion_8_asymptotic_shape() {
    let mut cfg = ExperimentConfig {
        batch: BatchSpec {
            dim: 2,
            half_width: 100,
            p: 0.7,
            seed_start: 0,
            count: 10,
            environment: EnvSource::Bernoulli,
            origin_filter: true,
            ..BatchSpec::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.asymptotics.n_grid = vec![250, 500, 1000, 2000];
    let rep = run_survival_asymptotics(&cfg).unwrap();
    let mono = rep.check("neg_log_survival_increasing").unwrap();
    let slope = rep.check("slope_positive").unwrap();
    let fits = rep.table("fits").unwrap();
    let slopes: Vec<f64> = fits
        .column("slope")
        .unwrap()
        .iter()
        .map(|c| c.as_f64().unwrap())
        .collect();
    let cstar = rep
        .summary_value("c_star")
        .and_then(|c| c.as_f64())
        .unwrap();

    // Recompute the curve from the table and refit independently.
    let curve = rep.table("curve").unwrap();
    let col = |name: &str| -> Vec<f64> {
        curve
            .column(name)
            .unwrap()
            .iter()
            .map(|c| c.as_f64().unwrap())
            .collect()
    };
    let (xs, ys) = (col("scale"), col("neg_log_survival"));
    let mut own_ok = true;
    for (i, (x, y)) in xs.chunks(4).zip(ys.chunks(4)).enumerate() {
        own_ok &= y.windows(2).all(|w| w[0] < w[1]);
        let mx = x.iter().sum::<f64>() / 4.0;
        let my = y.iter().sum::<f64>() / 4.0;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        own_ok &= sxy / sxx > 0.0 && (sxy / sxx - slopes[i]).abs() <= 1e-9 * slopes[i].abs();
    }
    let ok = mono.tested == 10 && mono.violations == 0 && slope.violations == 0 && own_ok;
    report(
        8,
        "asymptotic_shape",
        ok,
        format!(
            "10 seeds, monotone violations {}, nonpositive slopes {}; slopes {:?} vs c_star {cstar:.4} (not compared)",
            mono.violations,
            slope.violations,
            slopes.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>()
        ),
    );
    assert!(ok);
}

const CONFIGS: [(&str, &str); 4] = [
    (
        "tail",
        r#"{"batch": {"half_width": 8, "count": 3}, "scale": {"n": 200, "k_n": 3, "radius": 4}}"#,
    ),
    (
        "localize",
        r#"{"batch": {"half_width": 8, "count": 2}, "scale": {"n": 200, "k_n": 3, "radius": 4},
            "localize": {"samples": 20}}"#,
    ),
    (
        "asymptotics",
        r#"{"batch": {"half_width": 20, "count": 3}, "asymptotics": {"n_grid": [50, 100, 200]}}"#,
    ),
    (
        "inequalities",
        r#"{"batch": {"half_width": 6, "count": 3}, "scale": {"n": 200, "k_n": 3, "radius": 4},
            "inequalities": {"m_max": 10, "avoid_m_max": 10, "est_m_max": 10}}"#,
    ),
];

fn criterion_9_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut compared = 0usize;
    let mut differing = Vec::new();
    for (kind, json) in CONFIGS {
        let cfg = dir.path().join(format!("{kind}.json"));
        fs::write(&cfg, json).unwrap();
        let mut outputs = Vec::new();
        for (run, threads) in ["1", "3"].iter().enumerate() {
            let out = dir.path().join(format!("{kind}_{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_trapwalk"))
                .args(["experiment", kind, "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .env("TRAPWALK_THREADS", threads)
                .output()
                .unwrap();
            assert_eq!(
                status.status.code(),
                Some(0),
                "{kind}: {}",
                String::from_utf8_lossy(&status.stderr)
            );
            outputs.push(out);
        }
        let mut names: Vec<_> = fs::read_dir(&outputs[0])
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .filter(|n| n.to_string_lossy().ends_with(".csv"))
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            compared += 1;
            let a = fs::read(outputs[0].join(&name)).unwrap();
            let b = fs::read(outputs[1].join(&name));
            if b.as_deref().ok() != Some(a.as_slice()) {
                differing.push(name.to_string_lossy().into_owned());
            }
        }
    }
    let ok = differing.is_empty();
    report(
        9,
        "cli_determinism",
        ok,
        format!(
            "{compared} CSV files across 4 experiments, {} differ {differing:?}",
            differing.len()
        ),
    );
    assert!(ok);
}

const CRITERIA: [(&str, fn()); 9] = [
    (
        "criterion_1_dp_matches_enumeration",
        criterion_1_dp_matches_enumeration,
    ),
    (
        "criterion_2_doob_sampler_exact",
        criterion_2_doob_sampler_exact,
    ),
    (
        "criterion_3_eigenvalue_sandwich",
        criterion_3_eigenvalue_sandwich,
    ),
    ("criterion_4_avoid_u_alpha", criterion_4_avoid_u_alpha),
    ("criterion_5_loop_erasure", criterion_5_loop_erasure),
    ("criterion_6_eigen_oracle", criterion_6_eigen_oracle),
    (
        "criterion_7_island_localization",
        criterion_7_island_localization,
    ),
    ("criterion_8_asymptotic_shape", criterion_8_asymptotic_shape),
    ("criterion_9_cli_determinism", criterion_9_cli_determinism),
];

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, (name, f)) in CRITERIA.into_iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        ran += 1;
        if std::panic::catch_unwind(f).is_err() {
            let id = i as u32 + 1;
            if !REPORTED.lock().unwrap().contains(&id) {
                println!("FAIL criterion {id} ({name}): panicked before reporting");
            }
            failed.push(name);
        }
    }
    println!(
        "acceptance: {} of {ran} criteria passed",
        ran - failed.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
