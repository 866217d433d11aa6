//! Independent reference implementations for the integration tests. They
//! share nothing with the library beyond `Site` arithmetic.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::DMatrix;
use trapwalk::{Environment, Site};

/// Surviving path counts of each length `0..=t_max` from `start`, where a
/// path survives while every visited site satisfies `ok`.
pub fn path_counts(start: &Site, t_max: usize, ok: &impl Fn(&Site) -> bool) -> Vec<u64> {
    fn go(s: &Site, depth: usize, t_max: usize, ok: &impl Fn(&Site) -> bool, counts: &mut [u64]) {
        counts[depth] += 1;
        if depth == t_max {
            return;
        }
        for n in s.neighbors() {
            if ok(&n) {
                go(&n, depth + 1, t_max, ok, counts);
            }
        }
    }
    let mut counts = vec![0u64; t_max + 1];
    if ok(start) {
        go(start, 0, t_max, ok, &mut counts);
    }
    counts
}

/// `P^start(τ > t)` for `t = 0..=t_max` as surviving counts over `(2d)^t`.
pub fn enumerated_survival(start: &Site, t_max: usize, ok: &impl Fn(&Site) -> bool) -> Vec<f64> {
    let deg = 2.0 * start.dim() as f64;
    path_counts(start, t_max, ok)
        .into_iter()
        .enumerate()
        .map(|(t, c)| c as f64 / deg.powi(t as i32))
        .collect()
}

/// Every surviving path of exactly `n` steps from `start`.
pub fn surviving_paths(env: &Environment, start: &Site, n: usize) -> Vec<Vec<Site>> {
    fn go(env: &Environment, cur: &mut Vec<Site>, n: usize, out: &mut Vec<Vec<Site>>) {
        if cur.len() == n + 1 {
            out.push(cur.clone());
            return;
        }
        let last = *cur.last().unwrap();
        for s in last.neighbors() {
            if env.is_open(&s) {
                cur.push(s);
                go(env, cur, n, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    if env.is_open(start) {
        go(env, &mut vec![*start], n, &mut out);
    }
    out
}

/// Every nearest-neighbour path of exactly `len` steps inside `allowed`.
pub fn all_paths_within(allowed: &[Site], len: usize) -> Vec<Vec<Site>> {
    let mut frontier: Vec<Vec<Site>> = allowed.iter().map(|s| vec![*s]).collect();
    for _ in 0..len {
        let mut next = Vec::new();
        for p in &frontier {
            for s in p.last().unwrap().neighbors() {
                if allowed.contains(&s) {
                    let mut q = p.clone();
                    q.push(s);
                    next.push(q);
                }
            }
        }
        frontier = next;
    }
    frontier
}

/// Sites of the open cluster of `v` inside the closed Euclidean ball of
/// radius `r` around `v`, found by breadth-first search. Sorted.
pub fn ball_component(env: &Environment, v: &Site, r: f64) -> Vec<Site> {
    if !env.is_open(v) {
        return Vec::new();
    }
    let r2 = r * r;
    let mut seen = HashSet::from([*v]);
    let mut queue = VecDeque::from([*v]);
    while let Some(s) = queue.pop_front() {
        for n in s.neighbors() {
            let d2: i64 = n
                .coords()
                .iter()
                .zip(v.coords())
                .map(|(a, b)| ((a - b) as i64).pow(2))
                .sum();
            if d2 as f64 <= r2 && env.is_open(&n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    let mut out: Vec<Site> = seen.into_iter().collect();
    out.sort();
    out
}

/// Connected components of the open sites, each sorted.
pub fn open_components(env: &Environment) -> Vec<Vec<Site>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in env.box_spec().sites() {
        if !env.is_open(&s) || !seen.insert(s) {
            continue;
        }
        let mut comp = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            for n in x.neighbors() {
                if env.is_open(&n) && seen.insert(n) {
                    comp.push(n);
                    queue.push_back(n);
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out
}

/// Number of connected components of the nearest-neighbour graph on `sites`.
pub fn induced_components(sites: &[Site]) -> usize {
    let all: HashSet<Site> = sites.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut count = 0;
    for s in sites {
        if !seen.insert(*s) {
            continue;
        }
        count += 1;
        let mut stack = vec![*s];
        while let Some(x) = stack.pop() {
            for n in x.neighbors() {
                if all.contains(&n) && seen.insert(n) {
                    stack.push(n);
                }
            }
        }
    }
    count
}

/// Largest eigenvalue of the walk matrix restricted to `sites`
/// (`1/(2d)` between neighbours), from a dense symmetric eigensolver.
pub fn dense_principal_eigenvalue(sites: &[Site]) -> f64 {
    let n = sites.len();
    if n == 0 {
        return 0.0;
    }
    let pos: HashMap<Site, usize> = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let w = 1.0 / (2.0 * sites[0].dim() as f64);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (i, s) in sites.iter().enumerate() {
        for t in s.neighbors() {
            if let Some(&j) = pos.get(&t) {
                m[(i, j)] = w;
            }
        }
    }
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `u_m(x) = P^x(walk stays in allowed for m steps)` for `m = 0..=m_max`,
/// each layer aligned with `allowed`. Plain vector iteration, no rescaling.
pub fn stay_probabilities(allowed: &[Site], m_max: usize) -> Vec<Vec<f64>> {
    let n = allowed.len();
    if n == 0 {
        return vec![Vec::new(); m_max + 1];
    }
    let pos: HashMap<Site, usize> = allowed.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let nbrs: Vec<Vec<usize>> = allowed
        .iter()
        .map(|s| s.neighbors().filter_map(|t| pos.get(&t).copied()).collect())
        .collect();
    let w = 1.0 / (2.0 * allowed[0].dim() as f64);
    let mut layers = vec![vec![1.0; n]];
    for _ in 0..m_max {
        let prev = layers.last().unwrap();
        let next = nbrs
            .iter()
            .map(|js| js.iter().map(|&j| prev[j]).sum::<f64>() * w)
            .collect();
        layers.push(next);
    }
    layers
}

/// Stack-based chronological loop erasure. Returns the erased path and,
/// for each of its sites, the index of its last visit in `path`.
pub fn stack_loop_erasure(path: &[Site]) -> (Vec<Site>, Vec<usize>) {
    let mut stack: Vec<(Site, usize)> = Vec::new();
    let mut on_stack: HashMap<Site, usize> = HashMap::new();
    for (t, s) in path.iter().enumerate() {
        match on_stack.get(s) {
            Some(&j) => {
                for (x, _) in stack.drain(j + 1..) {
                    on_stack.remove(&x);
                }
                stack[j].1 = t;
            }
            None => {
                on_stack.insert(*s, stack.len());
                stack.push((*s, t));
            }
        }
    }
    stack.into_iter().unzip()
}

/// Loops cut between consecutive last visits, from index arithmetic only.
pub fn reference_loops(path: &[Site]) -> (Vec<Site>, Vec<Vec<Site>>) {
    let (eta, last) = stack_loop_erasure(path);
    let mut loops = Vec::with_capacity(eta.len());
    let mut from = 0;
    for &sigma in &last {
        loops.push(path[from..=sigma].to_vec());
        from = sigma + 1;
    }
    assert_eq!(from, path.len());
    (eta, loops)
}

/// splitmix64 step, used to derive test parameters from seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in `[0, 1)` from a seed.
pub fn unit(seed: u64) -> f64 {
    (mix(seed) >> 11) as f64 / (1u64 << 53) as f64
}

/// Ids of criteria that printed their line.
pub static REPORTED: std::sync::Mutex<Vec<u32>> = std::sync::Mutex::new(Vec::new());

/// Prints one acceptance line and returns whether it passed.
pub fn report(id: u32, name: &str, passed: bool, detail: impl std::fmt::Display) -> bool {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("{tag} criterion {id} ({name}): {detail}");
    REPORTED.lock().unwrap().push(id);
    passed
}
