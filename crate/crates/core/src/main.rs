use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use trapwalk::experiments::{self, ExperimentConfig, ExperimentKind};
use trapwalk::islands::{estimate_quantiles, level_sets, select_islands, x_field, ScaleConfig};
use trapwalk::percolation::{generate_with_origin_in_spanning, label_clusters};
use trapwalk::spectral::lambda_field;
use trapwalk::survival::{survival_field, SurvivalQuery};
use trapwalk::walker::{loop_erase, path_markers, sample_batch};
use trapwalk::{persist, region_in, BoxSpec, Environment, Norm, Site, SiteSet};

#[derive(Parser)]
#[command(
    name = "trapwalk",
    version,
    about = "Random walks among Bernoulli obstacles"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an environment and save it.
    Generate(GenerateArgs),
    /// Label open clusters; one JSON line per cluster.
    Clusters {
        #[arg(long)]
        env: PathBuf,
    },
    /// Survival probability from a site, optionally saving the whole field.
    Survival(SurvivalArgs),
    /// Local principal eigenvalues over a box of sites.
    Spectra(SpectraArgs),
    /// Quantiles, level sets and island representatives.
    Islands(IslandsArgs),
    /// Paths of the walk conditioned to survive.
    Sample(SampleArgs),
    /// Run an experiment from a JSON config.
    Experiment {
        /// tail, localize, asymptotics or inequalities
        kind: String,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long)]
    half_width: i32,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Regenerate until the origin is in the spanning cluster.
    #[arg(long)]
    origin_filter: bool,
    #[arg(long, default_value_t = 1000)]
    max_attempts: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SurvivalArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value = "0,0")]
    start: String,
    #[arg(long)]
    horizon: usize,
    /// Site-set file of sites that kill the walk.
    #[arg(long)]
    avoid: Option<PathBuf>,
    /// Site-set file the walk must stay in.
    #[arg(long)]
    confine: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectraArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    radius: f64,
    /// Target sites as CENTER:HALF, an ℓ∞ box; default is the whole box.
    #[arg(long = "box")]
    target: Option<String>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IslandsArgs {
    #[arg(long)]
    env: PathBuf,
    /// JSON scale config; `n` is required.
    #[arg(long)]
    params: PathBuf,
    /// Precomputed X field; computed over the whole box when absent.
    #[arg(long)]
    xfield: Option<PathBuf>,
    /// Precomputed λ field over the same sites as the X field.
    #[arg(long)]
    lfield: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value = "0,0")]
    start: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale config; when given, island markers are reported per path.
    #[arg(long)]
    params: Option<PathBuf>,
    /// CSV of paths (path, step, site coordinates).
    #[arg(long)]
    out: PathBuf,
}

fn load_env(p: &Path) -> Result<Environment> {
    persist::load_environment(p).with_context(|| format!("loading environment {}", p.display()))
}

fn parse_site(s: &str, dim: usize) -> Result<Site> {
    let site: Site = s.parse()?;
    if site.dim() != dim {
        bail!(
            "site {site} has dimension {}, environment has {dim}",
            site.dim()
        );
    }
    Ok(site)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let bx = BoxSpec::new(a.dim, a.half_width)?;
    let (env, attempts) = if a.origin_filter {
        let (env, _, k) = generate_with_origin_in_spanning(bx, a.p, a.seed, a.max_attempts)?;
        (env, k)
    } else {
        (Environment::generate(bx, a.p, a.seed)?, 0)
    };
    persist::save_environment(&env, &a.out)?;
    println!(
        "{}",
        json!({"path": a.out, "seed": env.seed(), "attempts": attempts, "open": env.open_count(), "volume": bx.volume()})
    );
    Ok(())
}

fn clusters(env: &Path) -> Result<()> {
    let env = load_env(env)?;
    let labels = label_clusters(&env);
    let spanning = labels.spanning_id();
    let mut out = BufWriter::new(std::io::stdout().lock());
    for (id, &size) in labels.sizes().iter().enumerate() {
        let id = id as u32;
        writeln!(
            out,
            "{}",
            json!({"id": id, "size": size, "spanning": spanning == Some(id)})
        )?;
    }
    Ok(())
}

fn survival(a: SurvivalArgs) -> Result<()> {
    let env = load_env(&a.env)?;
    let start = parse_site(&a.start, env.dim())?;
    let mut q = SurvivalQuery::new(a.horizon);
    if let Some(p) = &a.avoid {
        q = q.avoiding(persist::load_site_set(p)?);
    }
    if let Some(p) = &a.confine {
        q = q.confined_to(persist::load_site_set(p)?);
    }
    let field = survival_field(&env, &q)?;
    let t = a.horizon;
    println!(
        "{}",
        json!({
            "start": start,
            "horizon": t,
            "probability": field.value(t, &start),
            "log_probability": field.log_value(t, &start),
            "checkpointed": field.is_checkpointed(),
        })
    );
    if let Some(out) = &a.out {
        persist::save_survival_field(&field, out)?;
    }
    Ok(())
}

fn parse_target(spec: Option<&str>, env: &Environment) -> Result<SiteSet> {
    let bx = env.box_spec();
    let Some(s) = spec else {
        return Ok(bx.sites().collect());
    };
    let (c, h) = s
        .rsplit_once(':')
        .with_context(|| format!("target {s:?} is not CENTER:HALF"))?;
    let centre = parse_site(c, env.dim())?;
    let half: f64 = h.parse().with_context(|| format!("bad half width {h:?}"))?;
    Ok(region_in(bx, &centre, half, Norm::Linf))
}

fn spectra(a: SpectraArgs) -> Result<()> {
    let env = load_env(&a.env)?;
    let target = parse_target(a.target.as_deref(), &env)?;
    let field = lambda_field(&env, &target, a.radius, a.tol)?;
    let max = field.values().values().iter().copied().fold(0.0, f64::max);
    println!(
        "{}",
        json!({"sites": target.len(), "components": field.distinct_components(), "max_lambda": max})
    );
    if let Some(out) = &a.out {
        persist::save_lambda_field(&field, out)?;
    }
    Ok(())
}

fn islands(a: IslandsArgs) -> Result<()> {
    let env = load_env(&a.env)?;
    let cfg: ScaleConfig = serde_json::from_str(&std::fs::read_to_string(&a.params)?)
        .with_context(|| format!("parsing {}", a.params.display()))?;
    let params = cfg.resolve(env.dim())?;
    let target: SiteSet = env.box_spec().sites().collect();
    let xf = match &a.xfield {
        Some(p) => persist::load_site_values(p)?.0,
        None => x_field(&env, &target, &params),
    };
    let lf = match &a.lfield {
        Some(p) => persist::load_lambda_field(p)?,
        None => lambda_field(&env, xf.sites(), params.radius as f64, a.tol)?,
    };
    let q = estimate_quantiles(xf.values(), &params, 1)?;
    let labels = label_clusters(&env);
    let hier = level_sets(&xf, &lf, &q, &params)?;
    let hier = select_islands(&hier, &lf, &labels, env.box_spec(), &params);

    std::fs::create_dir_all(&a.out)?;
    persist::save_site_values(
        &xf,
        "x",
        json!({"k_n": params.k_n}),
        a.out.join("xfield.bin"),
    )?;
    persist::save_lambda_field(&lf, a.out.join("lfield.bin"))?;
    for (alpha, u) in &hier.u {
        persist::save_site_set(u, a.out.join(format!("u_{alpha}.txt")))?;
    }
    persist::save_site_set(&hier.dstar, a.out.join("dstar.txt"))?;
    persist::save_site_set(&hier.dn, a.out.join("dn.txt"))?;
    let v: SiteSet = hier.v.iter().copied().collect();
    persist::save_site_set(&v, a.out.join("v.txt"))?;
    let summary = json!({
        "params": params,
        "quantiles": q,
        "dstar_threshold": hier.dstar_threshold,
        "u_sizes": hier.u.iter().map(|(a, u)| json!({"alpha": a, "size": u.len()})).collect::<Vec<_>>(),
        "dstar": hier.dstar.len(),
        "v": hier.v,
        "dn": hier.dn.len(),
        "selection": hier.report,
    });
    persist::save_json(&summary, "trapwalk-islands", a.out.join("islands.json"))?;
    println!("{}", json!({"v": hier.v, "dn": hier.dn.len(), "p0": q.p0}));
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let env = load_env(&a.env)?;
    let start = parse_site(&a.start, env.dim())?;
    let field = survival_field(&env, &SurvivalQuery::new(a.n))?;
    let paths = sample_batch(&env, &start, a.n, &field, a.seed, a.count)?;
    let hier = match &a.params {
        Some(p) => {
            let cfg: ScaleConfig = serde_json::from_str(&std::fs::read_to_string(p)?)
                .with_context(|| format!("parsing {}", p.display()))?;
            let params = cfg.resolve(env.dim())?;
            let target: SiteSet = env.box_spec().sites().collect();
            let xf = x_field(&env, &target, &params);
            let lf = lambda_field(&env, &target, params.radius as f64, 1e-10)?;
            let q = estimate_quantiles(xf.values(), &params, 1)?;
            let h = level_sets(&xf, &lf, &q, &params)?;
            let h = select_islands(&h, &lf, &label_clusters(&env), env.box_spec(), &params);
            Some((lf, h))
        }
        None => None,
    };

    let mut w = csv::Writer::from_path(&a.out)?;
    let mut header = vec!["path".to_string(), "step".to_string()];
    header.extend((0..env.dim()).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    let mut out = BufWriter::new(std::io::stdout().lock());
    for (i, p) in paths.iter().enumerate() {
        for (t, s) in p.sites().iter().enumerate() {
            let mut rec = vec![i.to_string(), t.to_string()];
            rec.extend(s.coords().iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        let dec = loop_erase(p);
        let mut line = json!({
            "path": i,
            "end": p.end(),
            "erased_length": dec.eta.len(),
            "loops": dec.loops.iter().filter(|l| !l.is_empty()).count(),
        });
        if let Some((lf, h)) = &hier {
            line["markers"] = serde_json::to_value(path_markers(p, lf, h))?;
        }
        writeln!(out, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn experiment(kind: &str, config: &Path, out: Option<PathBuf>) -> Result<i32> {
    let kind: ExperimentKind = kind.parse()?;
    let cfg =
        ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let report = experiments::run_experiment(kind, &cfg)?;
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let files = report.write(&dir)?;
    for c in &report.checks {
        eprintln!(
            "{} {}{} ({} of {} violated)",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            if c.hard { "" } else { " [report]" },
            c.violations,
            c.tested
        );
    }
    println!(
        "{}",
        json!({"experiment": report.experiment, "passed": report.passed(), "files": files})
    );
    Ok(report.exit_code())
}

fn run(cli: Cli) -> Result<i32> {
    experiments::init_thread_pool()?;
    match cli.cmd {
        Command::Generate(a) => generate(a)?,
        Command::Clusters { env } => clusters(&env)?,
        Command::Survival(a) => survival(a)?,
        Command::Spectra(a) => spectra(a)?,
        Command::Islands(a) => islands(a)?,
        Command::Sample(a) => sample(a)?,
        Command::Experiment { kind, config, out } => return experiment(&kind, &config, out),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
