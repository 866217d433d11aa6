//! Reproducible experiments over batches of environments: tail ratios of the
//! local survival score, exact endpoint localization, survival asymptotics
//! and the finite-size inequality suites.
//!
//! Tables in a [`Report`] depend only on the configuration. Floats are
//! written with 17 significant digits and wall-clock time stays out of the
//! CSV files, so reruns produce byte-identical tables.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::islands::{
    c_good_sites, epsilon_fair_analysis, estimate_quantiles, level_sets, local_density,
    select_islands_in_cluster, x_field, QuantileTable, ScaleConfig, ScaleParams,
};
use crate::lattice::{region, region_in, BoxSpec, Environment, Norm, Site, SiteSet};
use crate::percolation::{generate_with_origin_in_spanning, label_clusters, ClusterLabeling};
use crate::spectral::{lambda_field, principal_eigen_with, EigenOptions};
use crate::survival::{
    endpoint_law, log_max_profile, scan_layers, survival_field, ForwardWalk, SurvivalQuery,
};
use crate::walker::{loop_erase, path_markers, sample_batch, IslandMark};

/// First positive zero of the Bessel function `J_0`.
pub const BESSEL_J0_FIRST_ZERO: f64 = 2.404_825_557_695_773;

/// Bumped when report layout changes.
pub const REPORT_FORMAT: u32 = 1;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "TRAPWALK_THREADS";

/// Sizes the global rayon pool from `TRAPWALK_THREADS` when set. Returns the
/// worker count in effect.
pub fn init_thread_pool() -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            Error::domain(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        if n == 0 {
            return Err(Error::domain(format!("{THREADS_ENV} must be positive")));
        }
        // A pool that already exists (tests, repeated calls) is kept.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(rayon::current_num_threads())
}

/// `μ_B`: principal Dirichlet eigenvalue of the unit ball divided by `2d`.
pub fn dirichlet_ball_rate(dim: usize) -> Result<f64> {
    match dim {
        1 => Ok(PI * PI / 8.0),
        2 => Ok(BESSEL_J0_FIRST_ZERO * BESSEL_J0_FIRST_ZERO / 4.0),
        3 => Ok(PI * PI / 6.0),
        _ => Err(Error::domain(format!("dimension {dim} outside 1..=3"))),
    }
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(dim: usize) -> Result<f64> {
    match dim {
        1 => Ok(2.0),
        2 => Ok(PI),
        3 => Ok(4.0 * PI / 3.0),
        _ => Err(Error::domain(format!("dimension {dim} outside 1..=3"))),
    }
}

/// Rate constant `μ_B (ω_d ln(1/p) / d)^{2/d}` of the stretched-exponential
/// survival decay.
pub fn compute_cstar(dim: usize, p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::domain(format!("p = {p} outside (0, 1]")));
    }
    let mu = dirichlet_ball_rate(dim)?;
    let omega = unit_ball_volume(dim)?;
    let d = dim as f64;
    Ok(mu * (omega * (1.0 / p).ln() / d).powf(2.0 / d))
}

/// Where the environments of a batch come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSource {
    /// Bernoulli obstacles from the site hash.
    #[default]
    Bernoulli,
    /// No obstacles inside the box.
    Open,
    /// An open ball centred `distance` sites from the origin along axis 0,
    /// joined to the origin by a width-one corridor; closed elsewhere.
    Island { radius: f64, distance: i32 },
}

/// A batch of environments on a common box, one per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSpec {
    pub dim: usize,
    pub half_width: i32,
    pub p: f64,
    pub seed_start: u64,
    pub count: usize,
    pub environment: EnvSource,
    /// Regenerate until the origin is in the spanning cluster.
    pub origin_filter: bool,
    pub max_attempts: u32,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            dim: 2,
            half_width: 20,
            p: 0.7,
            seed_start: 0,
            count: 10,
            environment: EnvSource::Bernoulli,
            origin_filter: true,
            max_attempts: 1000,
        }
    }
}

/// One environment of a batch.
#[derive(Clone, Debug)]
pub struct BatchEnv {
    /// Nominal seed from the batch range.
    pub seed: u64,
    /// Regeneration attempts spent on the origin filter.
    pub attempts: u32,
    pub env: Environment,
    pub labels: ClusterLabeling,
}

impl BatchSpec {
    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.seed_start..self.seed_start + self.count as u64
    }

    pub fn box_spec(&self) -> Result<BoxSpec> {
        BoxSpec::new(self.dim, self.half_width)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::domain(format!(
                "dimension {} outside 1..=3",
                self.dim
            )));
        }
        if self.half_width < 0 {
            return Err(Error::domain("half_width must be nonnegative"));
        }
        if self.count == 0 {
            return Err(Error::domain("batch count must be positive"));
        }
        if self.seed_start.checked_add(self.count as u64).is_none() {
            return Err(Error::domain("seed range overflows u64"));
        }
        match self.environment {
            EnvSource::Bernoulli => {
                if !(0.0..=1.0).contains(&self.p) {
                    return Err(Error::domain(format!("p = {} outside [0, 1]", self.p)));
                }
                if self.origin_filter && self.max_attempts == 0 {
                    return Err(Error::domain("max_attempts must be positive"));
                }
            }
            EnvSource::Open => {}
            EnvSource::Island { radius, distance } => {
                if !(radius >= 0.0) || distance < 0 {
                    return Err(Error::domain(
                        "island radius and distance must be nonnegative",
                    ));
                }
                if distance > self.half_width {
                    return Err(Error::domain("island centre lies outside the box"));
                }
            }
        }
        Ok(())
    }

    pub fn environment(&self, seed: u64) -> Result<BatchEnv> {
        let bx = self.box_spec()?;
        let (env, labels, attempts) = match self.environment {
            EnvSource::Bernoulli if self.origin_filter => {
                generate_with_origin_in_spanning(bx, self.p, seed, self.max_attempts)?
            }
            EnvSource::Bernoulli => {
                let env = Environment::generate(bx, self.p, seed)?;
                let labels = label_clusters(&env);
                (env, labels, 0)
            }
            EnvSource::Open => {
                let env = Environment::all_open(bx)?;
                let labels = label_clusters(&env);
                (env, labels, 0)
            }
            EnvSource::Island { radius, distance } => {
                let env = island_environment(bx, radius, distance)?;
                let labels = label_clusters(&env);
                (env, labels, 0)
            }
        };
        Ok(BatchEnv {
            seed,
            attempts,
            env,
            labels,
        })
    }

    /// All environments, in seed order.
    pub fn build(&self) -> Result<Vec<BatchEnv>> {
        self.validate()?;
        self.seeds()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&s| self.environment(s))
            .collect()
    }
}

/// Ball of `radius` around `distance · e_0` plus the corridor
/// `{t e_0 : 0 <= t <= distance}`; every other site is closed.
pub fn island_environment(bx: BoxSpec, radius: f64, distance: i32) -> Result<Environment> {
    if !(radius >= 0.0) || distance < 0 {
        return Err(Error::domain(
            "island radius and distance must be nonnegative",
        ));
    }
    let centre = Site::origin(bx.dim).offset(0, distance);
    if !bx.contains(&centre) {
        return Err(Error::domain(format!(
            "island centre {centre} outside the box"
        )));
    }
    let r2 = radius * radius;
    Environment::from_fn(bx, |s| {
        let corridor =
            s.coords()[1..].iter().all(|&c| c == 0) && (0..=distance).contains(&s.coord(0));
        corridor || (s.dist2(&centre) as f64) <= r2
    })
}

/// Sites of the ball part of [`island_environment`].
pub fn island_ball(bx: &BoxSpec, radius: f64, distance: i32) -> SiteSet {
    let centre = Site::origin(bx.dim).offset(0, distance);
    region_in(bx, &centre, radius, Norm::L2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailConfig {
    /// Thresholds in `(0, 1]`; evaluated in increasing order.
    pub beta_grid: Vec<f64>,
    pub diagnostics: bool,
    /// Half-width of the ε-fair grid boxes.
    pub fair_r: usize,
    /// The cluster of fair boxes around the origin is taken within
    /// `fair_radius_factor · (ln n)^{1/d}`.
    pub fair_radius_factor: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig {
            beta_grid: (0..=16).map(|k| 10f64.powf(-(k as f64) / 2.0)).collect(),
            diagnostics: true,
            fair_r: 3,
            fair_radius_factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    /// Conditioned paths per environment; 0 skips sampling.
    pub samples: usize,
    pub seed: u64,
    /// Constant in `T <= c |S_T|`.
    pub time_constant: f64,
    pub tol: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            samples: 100,
            seed: 1,
            time_constant: 1.0,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsymptoticsConfig {
    /// Strictly increasing horizons, each at least 2.
    pub n_grid: Vec<usize>,
    /// Also compute the principal eigenvalue of the origin's cluster.
    pub spectral_oracle: bool,
    pub tol: f64,
}

impl Default for AsymptoticsConfig {
    fn default() -> Self {
        AsymptoticsConfig {
            n_grid: vec![250, 500, 1000, 2000],
            spectral_oracle: false,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InequalityConfig {
    /// Horizon for the eigenvalue sandwich.
    pub m_max: usize,
    /// Horizon for the bound on avoiding the `U` level sets.
    pub avoid_m_max: usize,
    /// Horizon for the bound on avoiding the λ level sets.
    pub est_m_max: usize,
    /// λ grid as fractions of the way from the lowest admissible λ to 1.
    pub lambda_fractions: Vec<f64>,
    /// Times for the two-point lower bound.
    pub loop_times: Vec<usize>,
    /// Number of endpoints drawn from the best component.
    pub loop_points: usize,
    /// Multiplicative slack on every bound.
    pub slack: f64,
    pub tol: f64,
}

impl Default for InequalityConfig {
    fn default() -> Self {
        InequalityConfig {
            m_max: 50,
            avoid_m_max: 100,
            est_m_max: 50,
            lambda_fractions: vec![0.0, 0.25, 0.5, 0.75],
            loop_times: vec![4, 8, 16],
            loop_points: 4,
            slack: 1e-8,
            tol: 1e-10,
        }
    }
}

/// Everything that determines a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: Option<PathBuf>,
    pub batch: BatchSpec,
    /// Separate environments for estimating `p_0`; seeds must not overlap
    /// the main batch.
    pub quantile_batch: Option<BatchSpec>,
    pub scale: ScaleConfig,
    pub tail: TailConfig,
    pub localize: LocalizeConfig,
    pub asymptotics: AsymptoticsConfig,
    pub inequalities: InequalityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: String::new(),
            output_dir: None,
            batch: BatchSpec::default(),
            quantile_batch: None,
            scale: ScaleConfig {
                k_n: Some(6),
                radius: Some(8),
                ..ScaleConfig::new(1000)
            },
            tail: TailConfig::default(),
            localize: LocalizeConfig::default(),
            asymptotics: AsymptoticsConfig::default(),
            inequalities: InequalityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(crate::error::FormatError::from)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.batch.validate()?;
        if let Some(q) = &self.quantile_batch {
            q.validate()?;
            let (a, b) = (self.batch.seeds(), q.seeds());
            if a.start < b.end && b.start < a.end {
                return Err(Error::domain(format!(
                    "quantile seeds {b:?} overlap batch seeds {a:?}"
                )));
            }
            if q.dim != self.batch.dim {
                return Err(Error::domain("quantile batch dimension differs from batch"));
            }
        }
        if self.tail.beta_grid.is_empty()
            || self.tail.beta_grid.iter().any(|b| !(*b > 0.0 && *b <= 1.0))
        {
            return Err(Error::domain(
                "beta grid must be nonempty and within (0, 1]",
            ));
        }
        if self.tail.fair_r == 0 {
            return Err(Error::domain("fair_r must be positive"));
        }
        let g = &self.asymptotics.n_grid;
        if g.is_empty() || g[0] < 2 || g.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain(
                "n grid must be strictly increasing and start at 2 or more",
            ));
        }
        let q = &self.inequalities;
        if q.lambda_fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
            return Err(Error::domain("lambda fractions must lie in [0, 1)"));
        }
        if !(q.slack >= 0.0) {
            return Err(Error::domain("slack must be nonnegative"));
        }
        if !(self.localize.time_constant > 0.0) {
            return Err(Error::domain("time_constant must be positive"));
        }
        Ok(())
    }
}

/// A table cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
}

/// Fixed 17-significant-digit rendering.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Int(i) => Some(i as f64),
            Cell::Float(x) => Some(x),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Cell::Bool(b) => Some(b),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format_float(*x),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

macro_rules! cell_from {
    ($($t:ty => $v:ident as $c:ty),*) => {
        $(impl From<$t> for Cell {
            fn from(x: $t) -> Cell {
                Cell::$v(x as $c)
            }
        })*
    };
}
cell_from!(i64 => Int as i64, i32 => Int as i64, u32 => Int as i64, u64 => Int as i64,
    usize => Int as i64, f64 => Float as f64);

impl From<bool> for Cell {
    fn from(b: bool) -> Cell {
        Cell::Bool(b)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Cell {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Cell {
        Cell::Text(s)
    }
}

impl From<Site> for Cell {
    fn from(s: Site) -> Cell {
        Cell::Text(s.to_string())
    }
}

macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$(Cell::from($x)),*] };
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Table {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width in table {}",
            self.name
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render)).map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Outcome of one assertable property.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// Hard checks decide the exit status; the others are reported only.
    pub hard: bool,
    pub tested: u64,
    pub violations: u64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(
        name: &str,
        hard: bool,
        tested: u64,
        violations: u64,
        detail: impl Into<String>,
    ) -> Check {
        Check {
            name: name.to_string(),
            hard,
            tested,
            violations,
            passed: violations == 0,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub experiment: String,
    pub version: String,
    pub format: u32,
    pub config: ExperimentConfig,
    pub params: Option<ScaleParams>,
    pub summary: BTreeMap<String, Cell>,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

impl Report {
    fn new(experiment: &str, cfg: &ExperimentConfig, params: Option<ScaleParams>) -> Report {
        Report {
            experiment: experiment.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            format: REPORT_FORMAT,
            config: cfg.clone(),
            params,
            summary: BTreeMap::new(),
            tables: Vec::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            threads: rayon::current_num_threads(),
            wall_clock_seconds: 0.0,
        }
    }

    fn set(&mut self, key: &str, v: impl Into<Cell>) {
        self.summary.insert(key.to_string(), v.into());
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn summary_value(&self, key: &str) -> Option<&Cell> {
        self.summary.get(key)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn hard_failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.hard && !c.passed).collect()
    }

    pub fn passed(&self) -> bool {
        self.hard_failures().is_empty()
    }

    /// 0 when every hard check passed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            2
        }
    }

    fn summary_table(&self) -> Table {
        let mut t = Table::new("summary", &["key", "value"]);
        for (k, v) in &self.summary {
            t.push(vec![Cell::from(k.as_str()), v.clone()]);
        }
        t
    }

    fn checks_table(&self) -> Table {
        let mut t = Table::new(
            "checks",
            &["name", "hard", "tested", "violations", "passed", "detail"],
        );
        for c in &self.checks {
            t.push(row![
                c.name.as_str(),
                c.hard,
                c.tested,
                c.violations,
                c.passed,
                c.detail.as_str()
            ]);
        }
        t
    }

    /// Writes `<experiment>.json` and one `<experiment>_<table>.csv` per
    /// table (plus summary and checks) into `dir`.
    pub fn write(&self, dir: impl AsRef<FsPath>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let json = dir.join(format!("{}.json", self.experiment));
        let text = serde_json::to_string_pretty(self).map_err(crate::error::FormatError::from)?;
        fs::write(&json, text + "\n")?;
        out.push(json);
        let extra = [self.summary_table(), self.checks_table()];
        for t in self.tables.iter().chain(extra.iter()) {
            let p = dir.join(format!("{}_{}.csv", self.experiment, t.name));
            fs::write(&p, t.to_csv()?)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Which experiment to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Tail,
    Localize,
    Asymptotics,
    Inequalities,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tail" => Ok(ExperimentKind::Tail),
            "localize" => Ok(ExperimentKind::Localize),
            "asymptotics" => Ok(ExperimentKind::Asymptotics),
            "inequalities" => Ok(ExperimentKind::Inequalities),
            _ => Err(Error::domain(format!("unknown experiment {s:?}"))),
        }
    }
}

pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<Report> {
    match kind {
        ExperimentKind::Tail => run_tail_experiment(cfg),
        ExperimentKind::Localize => run_localization_experiment(cfg),
        ExperimentKind::Asymptotics => run_survival_asymptotics(cfg),
        ExperimentKind::Inequalities => run_inequality_suite(cfg),
    }
}

/// Sites of the box far enough from its faces that a `margin`-step walk
/// cannot reach the exterior; all sites when the box is too small.
fn interior_sites(bx: &BoxSpec, margin: usize) -> (SiteSet, bool) {
    let inner = bx.half_width as i64 - margin as i64;
    if inner >= 0 {
        (region_in(bx, &bx.origin, inner as f64, Norm::Linf), false)
    } else {
        (bx.sites().collect(), true)
    }
}

fn interior_samples(envs: &[BatchEnv], interior: &SiteSet, params: &ScaleParams) -> Vec<Vec<f64>> {
    envs.par_iter()
        .map(|b| x_field(&b.env, interior, params).values().to_vec())
        .collect()
}

/// `p_0` from the quantile batch when configured, else from `main_samples`.
fn quantiles_for(
    cfg: &ExperimentConfig,
    params: &ScaleParams,
    main_samples: &[Vec<f64>],
    rep: &mut Report,
) -> Result<QuantileTable> {
    let q = match &cfg.quantile_batch {
        Some(qb) => {
            let envs = qb.build()?;
            let (interior, fallback) = interior_sites(&qb.box_spec()?, params.k_n);
            if fallback {
                rep.note("quantile batch box narrower than k_n: X sampled over all sites");
            }
            let s: Vec<f64> = interior_samples(&envs, &interior, params).concat();
            estimate_quantiles(&s, params, envs.len())?
        }
        None => estimate_quantiles(&main_samples.concat(), params, main_samples.len())?,
    };
    if q.low_resolution {
        rep.note("target quantile finer than one sample: p0 is the sample maximum");
    }
    if q.zero_replaced {
        rep.note("quantile order statistic was 0: replaced by the smallest positive sample");
    }
    rep.set("p0", q.p0);
    rep.set("quantile_rank", q.rank);
    rep.set("quantile_samples", q.sample_count);
    rep.set("quantile_target_fraction", q.target_fraction);
    rep.set("quantile_low_resolution", q.low_resolution);
    rep.set("quantile_zero_replaced", q.zero_replaced);
    rep.set("p_alpha1", q.p_alpha(params.alpha1));
    rep.set("p_alpha2", q.p_alpha(params.alpha2));
    Ok(q)
}

fn finish(mut rep: Report, start: Instant) -> Report {
    rep.wall_clock_seconds = start.elapsed().as_secs_f64();
    rep
}

struct TailDiagnostics {
    c_good: usize,
    max_obstacle_distance: f64,
    obstacle_scale_ratio: f64,
    c_good_ratio: f64,
    fair_boxes: usize,
    fair_clusters: usize,
    largest_fair_cluster: usize,
    origin_fair_cluster: usize,
}

fn tail_diagnostics(
    env: &Environment,
    interior: &SiteSet,
    params: &ScaleParams,
    t: &TailConfig,
) -> Result<TailDiagnostics> {
    let origin = Site::origin(params.dim);
    let good = c_good_sites(env, params.c, params)?;
    let c_good = good.iter().filter(|s| interior.contains(s)).count();
    let ld = local_density(env, &origin, &good, params);
    let fair = epsilon_fair_analysis(env, t.fair_r, params.eps, &origin)?;
    let radius = t.fair_radius_factor * params.ln_n().powf(1.0 / params.dim as f64);
    Ok(TailDiagnostics {
        c_good,
        max_obstacle_distance: ld.max_obstacle_distance,
        obstacle_scale_ratio: ld.obstacle_scale_ratio,
        c_good_ratio: ld.c_good_ratio,
        fair_boxes: fair.fair.len(),
        fair_clusters: fair.cluster_sizes.len(),
        largest_fair_cluster: fair.cluster_sizes.iter().copied().max().unwrap_or(0),
        origin_fair_cluster: fair.cluster_within(&origin, radius).len(),
    })
}

/// Empirical tail of `X` over (environment, interior site) pairs and the
/// ratio `P(X >= β) / P(X >= c_2 β ln n)` per grid point.
pub fn run_tail_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let start = Instant::now();
    cfg.validate()?;
    let params = cfg.scale.resolve(cfg.batch.dim)?;
    let mut rep = Report::new("tail", cfg, Some(params.clone()));
    let envs = cfg.batch.build()?;
    let bx = cfg.batch.box_spec()?;
    let (interior, fallback) = interior_sites(&bx, params.k_n);
    if fallback {
        rep.note("box narrower than k_n: X sampled over all sites, boundary effects included");
    }
    let samples = interior_samples(&envs, &interior, &params);
    let diags: Vec<Option<TailDiagnostics>> = envs
        .par_iter()
        .map(|b| {
            cfg.tail
                .diagnostics
                .then(|| tail_diagnostics(&b.env, &interior, &params, &cfg.tail))
                .transpose()
        })
        .collect::<Result<_>>()?;

    let mut per_env = Table::new(
        "environments",
        &[
            "seed",
            "used_seed",
            "attempts",
            "open_fraction",
            "samples",
            "mean_x",
            "max_x",
            "c_good_interior",
            "max_obstacle_distance",
            "obstacle_scale_ratio",
            "c_good_ratio",
            "fair_boxes",
            "fair_clusters",
            "largest_fair_cluster",
            "origin_fair_cluster",
        ],
    );
    for ((b, x), d) in envs.iter().zip(&samples).zip(&diags) {
        let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
        let max = x.iter().copied().fold(0.0, f64::max);
        let open = b.env.open_count() as f64 / bx.volume() as f64;
        let mut r = row![b.seed, b.env.seed(), b.attempts, open, x.len(), mean, max];
        match d {
            Some(d) => r.extend(row![
                d.c_good,
                d.max_obstacle_distance,
                d.obstacle_scale_ratio,
                d.c_good_ratio,
                d.fair_boxes,
                d.fair_clusters,
                d.largest_fair_cluster,
                d.origin_fair_cluster
            ]),
            None => r.extend(std::iter::repeat_n(Cell::Text(String::new()), 8)),
        }
        per_env.push(r);
    }

    let mut pooled: Vec<f64> = samples.concat();
    pooled.sort_by(f64::total_cmp);
    let total = pooled.len();
    let at_least = |b: f64| total - pooled.partition_point(|&x| x < b);
    let frac = |b: f64| at_least(b) as f64 / total as f64;

    let mut grid = cfg.tail.beta_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let kd = (params.k_n as f64).powi(params.dim as i32);
    let mut tail = Table::new(
        "tail",
        &[
            "beta",
            "count",
            "tail",
            "shifted_beta",
            "shifted_count",
            "shifted_tail",
            "ratio",
            "c1_hat",
            "usable",
        ],
    );
    let mut prev = f64::INFINITY;
    let mut increases = 0u64;
    let (mut usable_n, mut max_c1) = (0usize, 0.0f64);
    let mut c1_nonfinite = 0u64;
    for &b in &grid {
        let shifted = params.c2 * b * params.ln_n();
        let (c, sc) = (at_least(b), at_least(shifted));
        let f = c as f64 / total as f64;
        let usable = sc > 0;
        let ratio = if usable {
            c as f64 / sc as f64
        } else {
            f64::NAN
        };
        let c1 = ratio / kd;
        if usable {
            usable_n += 1;
            max_c1 = max_c1.max(c1);
            if !c1.is_finite() {
                c1_nonfinite += 1;
            }
        }
        // Grid runs upward in β, so the tail must not increase.
        if f > prev {
            increases += 1;
        }
        prev = f;
        tail.push(row![
            b,
            c,
            f,
            shifted,
            sc,
            sc as f64 / total as f64,
            ratio,
            c1,
            usable
        ]);
    }
    rep.checks.push(Check::new(
        "tail_nonincreasing",
        true,
        grid.len() as u64,
        increases,
        "empirical tail is nonincreasing in beta",
    ));
    rep.checks.push(Check::new(
        "c1_finite_on_usable_range",
        false,
        usable_n as u64,
        c1_nonfinite,
        "implied c1 is finite wherever the shifted tail is nonzero",
    ));

    let beta_chi = params.beta_chi();
    let reference = (params.n as f64).powf(1.0 - params.dim as f64);
    let f_chi = frac(beta_chi);
    rep.set("environments", envs.len());
    rep.set("samples", total);
    rep.set("k_n", params.k_n);
    rep.set("interior_fallback", fallback);
    rep.set("beta_chi", beta_chi);
    rep.set("tail_at_beta_chi", f_chi);
    rep.set("beta_chi_reference", reference);
    rep.set("beta_chi_ratio", f_chi / reference);
    rep.set("usable_betas", usable_n);
    rep.set("max_c1_hat", if usable_n > 0 { max_c1 } else { f64::NAN });
    if usable_n == 0 {
        rep.note("no beta has a nonzero shifted tail: the ratio is not estimable with this batch");
    }
    quantiles_for(cfg, &params, &samples, &mut rep)?;
    rep.tables.push(tail);
    rep.tables.push(per_env);
    Ok(finish(rep, start))
}

/// Value at rank `ceil(q N)` of sorted data; NaN when empty.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

struct LocalizeRow {
    cells: Vec<Cell>,
    ratios: Vec<f64>,
    confined: usize,
    time_ok: usize,
    sampled: usize,
    mass_total_err: f64,
    path_open_violations: u64,
    loop_violations: u64,
    marker_violations: u64,
    ratio_violation: Option<bool>,
    no_islands: bool,
    ball_mass: Option<f64>,
    mass_dn: f64,
}

fn localize_one(
    b: &BatchEnv,
    cfg: &ExperimentConfig,
    params: &ScaleParams,
    q: &QuantileTable,
) -> Result<LocalizeRow> {
    let env = &b.env;
    let bx = *env.box_spec();
    let origin = Site::origin(params.dim);
    let n = params.n as usize;
    let Some(cid) = b.labels.label(&origin) else {
        return Err(Error::NoSurvivingPath {
            start: origin,
            steps: n,
        });
    };
    let law = endpoint_law(env, &origin, n)?;
    let target: SiteSet = bx.sites().collect();
    let xf = x_field(env, &target, params);
    let lf = lambda_field(env, &target, params.radius as f64, cfg.localize.tol)?;
    let hier = level_sets(&xf, &lf, q, params)?;
    let hier = select_islands_in_cluster(&hier, &lf, &b.labels, cid, &bx, params);

    let cluster_size = b.labels.sizes()[cid as usize];
    let dn_in_cluster = hier
        .dn
        .iter()
        .filter(|s| b.labels.label(s) == Some(cid))
        .count();
    let mass_dn = law.mass_in(&hier.dn);
    let no_islands = hier.dn.is_empty();
    let ratio = if dn_in_cluster > 0 {
        mass_dn / (dn_in_cluster as f64 / cluster_size as f64)
    } else {
        f64::NAN
    };
    let dstar_in_box = hier.dstar.iter().filter(|s| bx.contains(s)).count();
    let ball_mass = match cfg.batch.environment {
        EnvSource::Island { radius, distance } => {
            Some(law.mass_in(&island_ball(&bx, radius, distance)))
        }
        _ => None,
    };
    let ratio_violation = match cfg.batch.environment {
        EnvSource::Island { .. } if !no_islands => Some(!(ratio >= 1.0 - 1e-9)),
        _ => None,
    };

    let k = cfg.localize.samples;
    let (mut confined, mut time_ok) = (0usize, 0usize);
    let (mut open_bad, mut loop_bad, mut marker_bad) = (0u64, 0u64, 0u64);
    let (mut ambiguous, mut unowned, mut sentinel, mut never) = (0usize, 0usize, 0usize, 0usize);
    let mut ratios = Vec::with_capacity(k);
    let mut loops_total = 0usize;
    if k > 0 {
        let field = survival_field(env, &SurvivalQuery::new(n))?;
        let master = cfg.localize.seed ^ b.seed.rotate_left(32);
        let paths = sample_batch(env, &origin, n, &field, master, k)?;
        let reach = params.approach_radius();
        let island_r = params.island_radius();
        for p in &paths {
            if p.sites().iter().any(|s| !env.is_open(s)) {
                open_bad += 1;
            }
            let dec = loop_erase(p);
            if dec.reconstruct() != *p || !dec.eta.is_self_avoiding() {
                loop_bad += 1;
            }
            loops_total += dec.loops.iter().filter(|l| !l.is_empty()).count();
            let m = path_markers(p, &lf, &hier);
            ambiguous += m.ambiguous as usize;
            unowned += m.unowned as usize;
            let (vstar, t) = match m.vstar {
                IslandMark::Island(v) => {
                    if !hier.v.contains(&v) {
                        marker_bad += 1;
                    }
                    (v, m.vstar_hitting())
                }
                IslandMark::Origin => {
                    sentinel += 1;
                    (origin, Some(0))
                }
            };
            if let (IslandMark::Island(v), Some(t)) = (m.vstar, t) {
                let first = p.sites().iter().position(|s| s.dist(&v) <= reach);
                if first != Some(t) {
                    marker_bad += 1;
                }
            }
            let Some(t) = t else {
                never += 1;
                continue;
            };
            if p.sites()[t..].iter().all(|s| s.dist(&vstar) <= island_r) {
                confined += 1;
            }
            let dist = p.sites()[t].norm();
            if t as f64 <= cfg.localize.time_constant * dist {
                time_ok += 1;
            }
            ratios.push(if t == 0 { 0.0 } else { t as f64 / dist });
        }
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let kf = k.max(1) as f64;
    let cells = row![
        b.seed,
        env.seed(),
        b.attempts,
        law.log_survival,
        cluster_size,
        hier.v.len(),
        hier.report.candidates,
        hier.report.uncovered.len(),
        hier.report.separation_violations.len(),
        hier.dn.len(),
        dn_in_cluster,
        dstar_in_box,
        mass_dn,
        ratio,
        no_islands,
        ball_mass.unwrap_or(f64::NAN),
        k,
        confined as f64 / kf,
        time_ok as f64 / kf,
        quantile(&sorted, 0.5),
        quantile(&sorted, 0.9),
        ambiguous,
        unowned,
        sentinel,
        never,
        loops_total as f64 / kf,
    ];
    Ok(LocalizeRow {
        cells,
        ratios,
        confined,
        time_ok,
        sampled: k,
        mass_total_err: (law.total() - 1.0).abs(),
        path_open_violations: open_bad,
        loop_violations: loop_bad,
        marker_violations: marker_bad,
        ratio_violation,
        no_islands,
        ball_mass,
        mass_dn,
    })
}

/// Exact conditional endpoint mass in the localization region plus sampled
/// path statistics around the best visited island.
pub fn run_localization_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let start = Instant::now();
    cfg.validate()?;
    let params = cfg.scale.resolve(cfg.batch.dim)?;
    let mut rep = Report::new("localize", cfg, Some(params.clone()));
    let envs = cfg.batch.build()?;
    let (interior, fallback) = interior_sites(&cfg.batch.box_spec()?, params.k_n);
    if fallback {
        rep.note("box narrower than k_n: quantiles use X over all sites");
    }
    let samples = if cfg.quantile_batch.is_some() {
        Vec::new()
    } else {
        interior_samples(&envs, &interior, &params)
    };
    let q = quantiles_for(cfg, &params, &samples, &mut rep)?;
    let rows: Vec<LocalizeRow> = envs
        .par_iter()
        .map(|b| localize_one(b, cfg, &params, &q))
        .collect::<Result<_>>()?;

    let mut table = Table::new(
        "environments",
        &[
            "seed",
            "used_seed",
            "attempts",
            "log_survival",
            "cluster_size",
            "islands",
            "candidates",
            "uncovered",
            "separation_violations",
            "dn_size",
            "dn_in_cluster",
            "dstar_in_box",
            "mass_in_dn",
            "concentration_ratio",
            "no_candidate_islands",
            "ball_mass",
            "samples",
            "frac_confined",
            "frac_time_bound",
            "time_ratio_median",
            "time_ratio_q90",
            "ambiguous",
            "unowned",
            "origin_sentinel",
            "never_approached",
            "mean_loops",
        ],
    );
    let (mut confined, mut time_ok, mut sampled) = (0usize, 0usize, 0usize);
    let mut all_ratios = Vec::new();
    let mut mass_err = 0.0f64;
    let mut no_islands = 0usize;
    let (mut ratio_tested, mut ratio_bad) = (0u64, 0u64);
    let (mut open_bad, mut loop_bad, mut marker_bad) = (0u64, 0u64, 0u64);
    let mut ball_min = f64::INFINITY;
    let mut mass_dn_sum = 0.0;
    for r in rows {
        confined += r.confined;
        time_ok += r.time_ok;
        sampled += r.sampled;
        all_ratios.extend(r.ratios);
        mass_err = mass_err.max(r.mass_total_err);
        no_islands += r.no_islands as usize;
        open_bad += r.path_open_violations;
        loop_bad += r.loop_violations;
        marker_bad += r.marker_violations;
        mass_dn_sum += r.mass_dn;
        if let Some(v) = r.ratio_violation {
            ratio_tested += 1;
            ratio_bad += v as u64;
        }
        if let Some(m) = r.ball_mass {
            ball_min = ball_min.min(m);
        }
        table.push(r.cells);
    }
    all_ratios.sort_by(f64::total_cmp);
    let ne = envs.len() as u64;
    let paths = sampled as u64;
    rep.checks.push(Check::new(
        "endpoint_mass_normalized",
        true,
        ne,
        (mass_err > 1e-12) as u64,
        format!(
            "max |sum of endpoint masses - 1| = {}",
            format_float(mass_err)
        ),
    ));
    rep.checks.push(Check::new(
        "paths_avoid_obstacles",
        true,
        paths,
        open_bad,
        "sampled paths stay on open sites",
    ));
    rep.checks.push(Check::new(
        "loop_erasure_roundtrip",
        true,
        paths,
        loop_bad,
        "loops reinserted into the erasure rebuild each path; erasure is self-avoiding",
    ));
    rep.checks.push(Check::new(
        "marker_consistency",
        true,
        paths,
        marker_bad,
        "best island is a representative and its hitting time is the first approach",
    ));
    if ratio_tested > 0 {
        rep.checks.push(Check::new(
            "single_island_concentration",
            true,
            ratio_tested,
            ratio_bad,
            "concentration ratio >= 1 - 1e-9 on the constructed single-island environment",
        ));
    }
    if no_islands > 0 {
        rep.note(format!(
            "{no_islands} environment(s) with no candidate islands"
        ));
    }
    let sf = sampled.max(1) as f64;
    rep.set("environments", envs.len());
    rep.set("no_candidate_islands", no_islands);
    rep.set("mean_mass_in_dn", mass_dn_sum / envs.len() as f64);
    rep.set("samples", sampled);
    rep.set("frac_confined", confined as f64 / sf);
    rep.set("frac_time_bound", time_ok as f64 / sf);
    rep.set("time_ratio_median", quantile(&all_ratios, 0.5));
    rep.set("time_ratio_q90", quantile(&all_ratios, 0.9));
    rep.set("island_radius", params.island_radius());
    rep.set("approach_radius", params.approach_radius());
    if ball_min.is_finite() {
        rep.set("ball_mass_min", ball_min);
    }
    rep.tables.push(table);
    Ok(finish(rep, start))
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `-ln P(τ > n)` from the origin over the n grid, regressed on
/// `n (ln n)^{-2/d}`.
pub fn run_survival_asymptotics(cfg: &ExperimentConfig) -> Result<Report> {
    let start = Instant::now();
    cfg.validate()?;
    let mut rep = Report::new("asymptotics", cfg, None);
    let envs = cfg.batch.build()?;
    let d = cfg.batch.dim;
    let grid = &cfg.asymptotics.n_grid;
    let xs: Vec<f64> = grid
        .iter()
        .map(|&n| n as f64 * (n as f64).ln().powf(-2.0 / d as f64))
        .collect();
    let cstar = match cfg.batch.environment {
        EnvSource::Bernoulli => compute_cstar(d, cfg.batch.p).unwrap_or(f64::NAN),
        _ => f64::NAN,
    };
    let origin = Site::origin(d);
    let per: Vec<(Vec<f64>, Option<f64>)> = envs
        .par_iter()
        .map(|b| -> Result<_> {
            let mut fw =
                ForwardWalk::new(&b.env, &origin, &SurvivalQuery::new(*grid.last().unwrap()))?;
            let ys = grid
                .iter()
                .map(|&n| {
                    fw.advance_to(n);
                    -fw.log_mass()
                })
                .collect();
            let decay = match (cfg.asymptotics.spectral_oracle, b.labels.label(&origin)) {
                (true, Some(id)) => {
                    let r = principal_eigen_with(
                        &b.env,
                        &b.labels.members(id),
                        EigenOptions::with_tol(cfg.asymptotics.tol),
                    )?;
                    Some(-r.lambda.ln())
                }
                _ => None,
            };
            Ok((ys, decay))
        })
        .collect::<Result<_>>()?;

    let mut curve = Table::new("curve", &["seed", "n", "scale", "neg_log_survival"]);
    let mut fits = Table::new(
        "fits",
        &[
            "seed",
            "used_seed",
            "slope",
            "intercept",
            "c_star",
            "slope_over_c_star",
            "linear_slope",
            "box_decay_rate",
            "strictly_increasing",
        ],
    );
    let (mut mono_bad, mut slope_bad) = (0u64, 0u64);
    let ns: Vec<f64> = grid.iter().map(|&n| n as f64).collect();
    for (b, (ys, decay)) in envs.iter().zip(&per) {
        for ((n, x), y) in grid.iter().zip(&xs).zip(ys) {
            curve.push(row![b.seed, *n, *x, *y]);
        }
        let increasing = ys.iter().all(|y| y.is_finite()) && ys.windows(2).all(|w| w[0] < w[1]);
        let (slope, icpt) = ols(&xs, ys);
        let (lin, _) = ols(&ns, ys);
        mono_bad += !increasing as u64;
        slope_bad += !(slope > 0.0) as u64;
        fits.push(row![
            b.seed,
            b.env.seed(),
            slope,
            icpt,
            cstar,
            slope / cstar,
            lin,
            decay.unwrap_or(f64::NAN),
            increasing
        ]);
    }
    let ne = envs.len() as u64;
    rep.checks.push(Check::new(
        "neg_log_survival_increasing",
        true,
        ne,
        mono_bad,
        "-ln P(tau > n) strictly increasing over the n grid",
    ));
    rep.checks.push(Check::new(
        "slope_positive",
        true,
        ne,
        slope_bad,
        "regression slope against n (ln n)^(-2/d) is positive",
    ));
    rep.set("environments", envs.len());
    rep.set("c_star", cstar);
    rep.set("dirichlet_ball_rate", dirichlet_ball_rate(d)?);
    rep.note("slope and c_star are reported side by side; agreement is not asserted");
    rep.tables.push(curve);
    rep.tables.push(fits);
    Ok(finish(rep, start))
}

/// Counts of tuples tested against a bound and the worst log excess.
#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    tested: u64,
    violations: u64,
    worst: f64,
}

impl Tally {
    fn new() -> Tally {
        Tally {
            worst: f64::NEG_INFINITY,
            ..Tally::default()
        }
    }

    /// Records `weight` tuples whose log left side is `lhs` against log
    /// bound `rhs`.
    fn record(&mut self, lhs: f64, rhs: f64, slack: f64, weight: u64) {
        self.tested += weight;
        let excess = if lhs == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            lhs - rhs
        };
        if excess > slack {
            self.violations += weight;
        }
        self.worst = self.worst.max(excess);
    }

    fn merge(&mut self, o: &Tally) {
        self.tested += o.tested;
        self.violations += o.violations;
        self.worst = self.worst.max(o.worst);
    }
}

struct IneqEnv {
    seed: u64,
    open: usize,
    components: usize,
    eig_lower: Tally,
    eig_upper: Tally,
    eig_outside: Tally,
    cor_lower: Tally,
    cor_upper: Tally,
    cor_outside: Tally,
    avoid: Vec<(f64, f64, usize, Tally)>,
    nesting_bad: u64,
    level: Tally,
    est: Vec<(f64, f64, usize, Tally)>,
    loop_rho: f64,
    loop_pairs: u64,
    loop_zero_structural: u64,
    loop_zero_other: u64,
}

fn inequalities_one(
    b: &BatchEnv,
    cfg: &InequalityConfig,
    params: &ScaleParams,
    q: &QuantileTable,
) -> Result<IneqEnv> {
    let env = &b.env;
    let bx = env.box_spec();
    let d = params.dim as f64;
    let r = params.radius as f64;
    let k = params.k_n as f64;
    let slack = cfg.slack.ln_1p();
    let vol = 0.5 * d * (2.0 * r).ln();
    let cap = (2.0 * r).powf(d);
    let target: SiteSet = bx.sites().collect();
    let xf = x_field(env, &target, params);
    let lf = lambda_field(env, &target, r, cfg.tol)?;
    let open: Vec<Site> = env.open_sites().into_vec();

    let mut eig_lower = Tally::new();
    let mut eig_upper = Tally::new();
    let mut eig_outside = Tally::new();
    let mut cor_lower = Tally::new();
    let mut cor_upper = Tally::new();
    let mut cor_outside = Tally::new();
    let mut profiles: HashMap<usize, Vec<f64>> = HashMap::new();
    for v in &open {
        let res = lf.result(v).expect("open site has a component");
        let key = std::sync::Arc::as_ptr(res) as usize;
        let prof = profiles.entry(key).or_insert_with(|| {
            log_max_profile(
                env,
                &SurvivalQuery::new(cfg.m_max).confined_to(res.sites.clone()),
            )
        });
        let ll = res.lambda.ln();
        let small = (res.sites.len() as f64) <= cap;
        for (m, &p) in prof.iter().enumerate().skip(1) {
            let lm = m as f64 * ll;
            eig_lower.record(lm, p, slack, 1);
            if small {
                eig_upper.record(p, vol + lm, slack, 1);
            } else {
                eig_outside.record(p, vol + lm, slack, 1);
            }
        }
        // Bounds on λ_v through X: (X_v / (2R)^{d/2})^{1/k} <= λ_v <= max_C X^{1/k}.
        let xv = xf.get(v).unwrap_or(0.0);
        let xmax = res
            .sites
            .iter()
            .filter_map(|s| xf.get(s))
            .fold(0.0, f64::max);
        let lower = if xv > 0.0 {
            (xv.ln() - vol) / k
        } else {
            f64::NEG_INFINITY
        };
        if small && params.k_n <= params.radius {
            cor_lower.record(lower, ll, slack, 1);
        } else {
            cor_outside.record(lower, ll, slack, 1);
        }
        cor_upper.record(ll, xmax.ln() / k, slack, 1);
    }

    let us: Vec<(f64, f64, SiteSet)> = [0.0, params.alpha1, params.alpha2]
        .into_iter()
        .map(|a| {
            let pa = q.p_alpha(a);
            (a, pa, xf.select(|_, x| x >= pa))
        })
        .collect();
    let nesting_bad = us.windows(2).filter(|w| !w[0].2.is_subset(&w[1].2)).count() as u64;

    let mut avoid = Vec::new();
    for (a, pa, u) in &us {
        let mut t = Tally::new();
        let lpa = pa.ln();
        let query = SurvivalQuery::new(cfg.avoid_m_max).avoiding(u.clone());
        scan_layers(env, &query, |m, _, layer, ls| {
            if m == 0 {
                return;
            }
            let rhs = vol + m as f64 / k * lpa;
            let mut hit = 0u64;
            let mut worst = f64::NEG_INFINITY;
            for &h in layer {
                if h > 0.0 {
                    let e = h.ln() + ls - rhs;
                    worst = worst.max(e);
                    hit += (e > slack) as u64;
                }
            }
            t.tested += open.len() as u64;
            t.violations += hit;
            t.worst = t.worst.max(worst);
        });
        avoid.push((*a, *pa, u.len(), t));
    }

    // λ_v > p_α^{1/k} forces a member of U_α within R of v.
    let mut level = Tally::new();
    for (a, pa, u) in &us[1..] {
        let thr = pa.powf(1.0 / k);
        let strict = *a == params.alpha2;
        for (v, l) in lf.values().iter() {
            let inside = if strict { l > thr } else { l >= thr };
            if inside {
                let ok = u.iter().any(|s| s.dist(v) <= r);
                level.record(if ok { 0.0 } else { 1.0 }, 0.0, 0.0, 1);
            }
        }
    }

    let lmin = (q.p_alpha(params.alpha1) / params.ln_n()).powf(1.0 / k);
    let mut est = Vec::new();
    for &f in &cfg.lambda_fractions {
        let lam = if f == 0.0 {
            lmin * (1.0 + 1e-12)
        } else {
            lmin + f * (1.0 - lmin)
        };
        let avoid_set = lf.values().select(|_, l| l > lam);
        let mut t = Tally::new();
        let ll = lam.ln();
        scan_layers(
            env,
            &SurvivalQuery::new(cfg.est_m_max).avoiding(avoid_set.clone()),
            |m, _, layer, ls| {
                if m == 0 {
                    return;
                }
                let rhs = 3.0 * d * r.ln() + m as f64 * ll;
                let best = layer.iter().copied().fold(0.0, f64::max);
                let lhs = if best > 0.0 {
                    best.ln() + ls
                } else {
                    f64::NEG_INFINITY
                };
                let before = t.violations;
                t.record(lhs, rhs, slack, open.len() as u64);
                if t.violations > before {
                    // Count the violating sites only.
                    let n_bad = layer
                        .iter()
                        .filter(|&&h| h > 0.0 && h.ln() + ls - rhs > slack)
                        .count();
                    t.violations = before + n_bad as u64;
                }
            },
        );
        est.push((lam, f, avoid_set.len(), t));
    }

    // Two-point lower bound around the best site.
    let (mut loop_rho, mut loop_pairs, mut zero_structural, mut zero_other) =
        (f64::NEG_INFINITY, 0u64, 0u64, 0u64);
    let best = lf.values().iter().filter(|(s, _)| env.is_open(s)).fold(
        None::<(Site, f64)>,
        |acc, (s, l)| match acc {
            Some((_, bl)) if bl >= l => acc,
            _ => Some((*s, l)),
        },
    );
    if let Some((v, lv)) = best {
        let comp = &lf.result(&v).unwrap().sites;
        let np = cfg.loop_points.max(1).min(comp.len());
        let mut pts: Vec<Site> = (0..np)
            .map(|i| comp.as_slice()[i * comp.len() / np])
            .collect();
        if !pts.contains(&v) {
            pts.push(v);
        }
        let mut times = cfg.loop_times.clone();
        times.sort_unstable();
        let ln2d = (2.0 * d).ln();
        for u in &pts {
            let mut fw = ForwardWalk::new(env, u, &SurvivalQuery::new(0))?;
            for &t in &times {
                fw.advance_to(t);
                for w in &pts {
                    loop_pairs += 1;
                    let pr = fw.mass_at(w);
                    if pr > 0.0 {
                        let span = u.dist(&v) + v.dist(w) + r;
                        loop_rho = loop_rho.max((t as f64 * lv.ln() - pr.ln()) / (ln2d * span));
                    } else if (t as i64 + u.l1(w)) % 2 == 1 || u.l1(w) > t as i64 {
                        zero_structural += 1;
                    } else {
                        zero_other += 1;
                    }
                }
            }
        }
    }

    Ok(IneqEnv {
        seed: b.seed,
        open: open.len(),
        components: profiles.len(),
        eig_lower,
        eig_upper,
        eig_outside,
        cor_lower,
        cor_upper,
        cor_outside,
        avoid,
        nesting_bad,
        level,
        est,
        loop_rho,
        loop_pairs,
        loop_zero_structural: zero_structural,
        loop_zero_other: zero_other,
    })
}

/// Exact left sides of the survival inequalities against their bounds.
/// The eigenvalue sandwich with the X bounds on λ it implies, the bound on
/// avoiding the `U` level sets and the level-set relations are hard checks.
/// The bound on avoiding λ level sets and the two-point lower bound are
/// reported only.
pub fn run_inequality_suite(cfg: &ExperimentConfig) -> Result<Report> {
    let start = Instant::now();
    cfg.validate()?;
    let params = cfg.scale.resolve(cfg.batch.dim)?;
    let mut rep = Report::new("inequalities", cfg, Some(params.clone()));
    let envs = cfg.batch.build()?;
    let (interior, _) = interior_sites(&cfg.batch.box_spec()?, params.k_n);
    let samples = if cfg.quantile_batch.is_some() {
        Vec::new()
    } else {
        interior_samples(&envs, &interior, &params)
    };
    let q = quantiles_for(cfg, &params, &samples, &mut rep)?;
    let d = params.dim as f64;
    let ball = region(&Site::origin(params.dim), params.radius as f64, Norm::L2).len();
    let exact_volume = (ball as f64) <= (2.0 * params.radius as f64).powf(d);
    let exact_avoid = exact_volume && params.k_n <= params.radius;
    if !exact_avoid {
        rep.note(format!(
            "|B_R| = {ball} exceeds (2R)^d or k_n > R: the U-avoidance bound is not exact here and is reported only"
        ));
    }
    let ic = &cfg.inequalities;
    let rows: Vec<IneqEnv> = envs
        .par_iter()
        .map(|b| inequalities_one(b, ic, &params, &q))
        .collect::<Result<_>>()?;

    let mut eig_t = Table::new(
        "sandwich",
        &[
            "seed",
            "open_sites",
            "components",
            "tested",
            "lower_violations",
            "upper_violations",
            "outside_regime",
            "worst_lower_log_excess",
            "worst_upper_log_excess",
            "x_bound_lower_violations",
            "x_bound_upper_violations",
        ],
    );
    let mut avoid_t = Table::new(
        "avoid_u",
        &[
            "seed",
            "alpha",
            "p_alpha",
            "u_size",
            "tested",
            "violations",
            "worst_log_excess",
        ],
    );
    let mut est_t = Table::new(
        "avoid_d",
        &[
            "seed",
            "lambda",
            "fraction",
            "d_size",
            "tested",
            "violations",
            "worst_log_excess",
        ],
    );
    let mut loop_t = Table::new(
        "loop",
        &[
            "seed",
            "pairs",
            "rho_needed",
            "zero_structural",
            "zero_other",
        ],
    );
    let (mut el, mut eu, mut eo) = (Tally::new(), Tally::new(), Tally::new());
    let (mut cl, mut cu, mut co) = (Tally::new(), Tally::new(), Tally::new());
    let (mut av, mut est, mut level) = (Tally::new(), Tally::new(), Tally::new());
    let mut nesting_bad = 0u64;
    let mut rho = f64::NEG_INFINITY;
    let mut zero_other = 0u64;
    for e in &rows {
        el.merge(&e.eig_lower);
        eu.merge(&e.eig_upper);
        eo.merge(&e.eig_outside);
        cl.merge(&e.cor_lower);
        cu.merge(&e.cor_upper);
        co.merge(&e.cor_outside);
        level.merge(&e.level);
        nesting_bad += e.nesting_bad;
        rho = rho.max(e.loop_rho);
        zero_other += e.loop_zero_other;
        eig_t.push(row![
            e.seed,
            e.open,
            e.components,
            e.eig_lower.tested,
            e.eig_lower.violations,
            e.eig_upper.violations,
            e.eig_outside.tested,
            e.eig_lower.worst,
            e.eig_upper.worst,
            e.cor_lower.violations,
            e.cor_upper.violations
        ]);
        for (a, pa, n, t) in &e.avoid {
            av.merge(t);
            avoid_t.push(row![e.seed, *a, *pa, *n, t.tested, t.violations, t.worst]);
        }
        for (lam, f, n, t) in &e.est {
            est.merge(t);
            est_t.push(row![e.seed, *lam, *f, *n, t.tested, t.violations, t.worst]);
        }
        loop_t.push(row![
            e.seed,
            e.loop_pairs,
            e.loop_rho,
            e.loop_zero_structural,
            e.loop_zero_other
        ]);
    }
    let ne = envs.len() as u64;
    let worst = |t: &Tally| format!("worst log excess {}", format_float(t.worst));
    rep.checks.push(Check::new(
        "sandwich_lower",
        true,
        el.tested,
        el.violations,
        worst(&el),
    ));
    rep.checks.push(Check::new(
        "sandwich_upper",
        true,
        eu.tested,
        eu.violations,
        worst(&eu),
    ));
    if eo.tested > 0 {
        rep.checks.push(Check::new(
            "sandwich_upper_large_components",
            false,
            eo.tested,
            eo.violations,
            format!("components larger than (2R)^d; {}", worst(&eo)),
        ));
    }
    rep.checks.push(Check::new(
        "x_bound_lower",
        true,
        cl.tested,
        cl.violations,
        worst(&cl),
    ));
    rep.checks.push(Check::new(
        "x_bound_upper",
        true,
        cu.tested,
        cu.violations,
        worst(&cu),
    ));
    if co.tested > 0 {
        rep.checks.push(Check::new(
            "x_bound_lower_outside_regime",
            false,
            co.tested,
            co.violations,
            worst(&co),
        ));
    }
    rep.checks.push(Check::new(
        "avoid_u_alpha",
        exact_avoid,
        av.tested,
        av.violations,
        worst(&av),
    ));
    rep.checks.push(Check::new(
        "u_alpha_nested",
        true,
        ne * 2,
        nesting_bad,
        "U_0 within U_alpha1 within U_alpha2",
    ));
    rep.checks.push(Check::new(
        "level_sets_near_u",
        true,
        level.tested,
        level.violations,
        "every site with lambda above p_alpha^(1/k_n) has a U_alpha site within R",
    ));
    rep.checks.push(Check::new(
        "avoid_d_lambda",
        false,
        est.tested,
        est.violations,
        worst(&est),
    ));
    rep.checks.push(Check::new(
        "two_point_lower_bound",
        false,
        rows.iter().map(|e| e.loop_pairs).sum(),
        zero_other,
        format!(
            "largest rho needed {}; zero probabilities not forced by parity or distance count as violations",
            format_float(rho)
        ),
    ));
    rep.set("environments", envs.len());
    rep.set("ball_volume", ball);
    rep.set("exact_volume_regime", exact_volume);
    rep.set("rho_needed_max", rho);
    rep.set(
        "lambda_min",
        (q.p_alpha(params.alpha1) / params.ln_n()).powf(1.0 / params.k_n as f64),
    );
    rep.tables.push(eig_t);
    rep.tables.push(avoid_t);
    rep.tables.push(est_t);
    rep.tables.push(loop_t);
    Ok(finish(rep, start))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            batch: BatchSpec {
                half_width: 6,
                count: 3,
                ..BatchSpec::default()
            },
            scale: ScaleConfig {
                k_n: Some(3),
                radius: Some(4),
                ..ScaleConfig::new(200)
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn cstar_reference_value() {
        let c = compute_cstar(2, 0.5).unwrap();
        assert!((c - 1.574).abs() < 1e-3, "{c}");
        assert_eq!(compute_cstar(2, 1.0).unwrap(), 0.0);
        assert!(compute_cstar(2, 0.0).is_err());
        assert!(compute_cstar(4, 0.5).is_err());
    }

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn overlapping_quantile_seeds_rejected() {
        let mut cfg = small_cfg();
        cfg.quantile_batch = Some(BatchSpec {
            seed_start: 2,
            ..cfg.batch.clone()
        });
        assert!(cfg.validate().is_err());
        cfg.quantile_batch.as_mut().unwrap().seed_start = 3;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_config_fields_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"batch": {"dimm": 2}}"#).is_err());
        let cfg =
            ExperimentConfig::from_json(r#"{"batch": {"environment": {"kind": "open"}}}"#).unwrap();
        assert_eq!(cfg.batch.environment, EnvSource::Open);
    }

    #[test]
    fn open_tail_is_a_step() {
        let mut cfg = small_cfg();
        cfg.batch.environment = EnvSource::Open;
        cfg.batch.count = 1;
        cfg.tail.diagnostics = false;
        let rep = run_tail_experiment(&cfg).unwrap();
        let t = rep.table("tail").unwrap();
        for f in t.column("tail").unwrap() {
            assert_eq!(f.as_f64(), Some(1.0));
        }
        assert!(rep.passed());
    }

    #[test]
    fn island_environment_shape() {
        let bx = BoxSpec::new(2, 12).unwrap();
        let env = island_environment(bx, 2.0, 8).unwrap();
        assert!(env.is_open(&Site::new(&[0, 0])));
        assert!(env.is_open(&Site::new(&[5, 0])));
        assert!(env.is_open(&Site::new(&[8, 2])));
        assert!(!env.is_open(&Site::new(&[5, 1])));
        assert_eq!(env.open_count(), 13 + 6);
    }

    #[test]
    fn inequality_suite_passes_on_small_batch() {
        let mut cfg = small_cfg();
        cfg.inequalities.m_max = 10;
        cfg.inequalities.avoid_m_max = 10;
        cfg.inequalities.est_m_max = 10;
        let rep = run_inequality_suite(&cfg).unwrap();
        assert!(rep.passed(), "{:?}", rep.hard_failures());
        assert!(rep.check("sandwich_lower").unwrap().tested > 0);
    }

    #[test]
    fn asymptotics_open_box_matches_box_decay() {
        let mut cfg = small_cfg();
        cfg.batch.environment = EnvSource::Open;
        cfg.batch.half_width = 4;
        cfg.batch.count = 1;
        cfg.asymptotics.n_grid = vec![200, 400, 800];
        cfg.asymptotics.spectral_oracle = true;
        let rep = run_survival_asymptotics(&cfg).unwrap();
        assert!(rep.passed());
        let fits = rep.table("fits").unwrap();
        let lin = fits.column("linear_slope").unwrap()[0].as_f64().unwrap();
        let decay = fits.column("box_decay_rate").unwrap()[0].as_f64().unwrap();
        let exact = -(PI / 10.0).cos().ln();
        assert!((decay - exact).abs() < 1e-8, "{decay} vs {exact}");
        assert!((lin - exact).abs() < 1e-6, "{lin} vs {exact}");
    }
}
