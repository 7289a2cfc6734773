use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use mast_core::checks::{run_suite, Suite};
use mast_core::comm::{CommGraph, GraphKind};
use mast_core::coverage::{CoverageState, CvtVariant};
use mast_core::dan::{dhba_policy, init_scenario, lsap_policy, DanWorld, Scenario, Velocity};
use mast_core::imitation::{EpochLog, Trainer};
use mast_core::net::Mast;
use mast_core::rollout::{run_episode, Environment, ExecMode, MastController};
use mast_core::weights::{encode, load_weights};
use mast_core::MastError;

use crate::config::{ExperimentConfig, Task};
use crate::output::{blob_hash, run_id, sidecar, write_meta, write_results, Episode, RunLabels};

/// Problems with the invocation itself; they exit with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A check suite found a violation; exits with status 1.
#[derive(Debug)]
pub struct CheckFailed(pub usize);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} check(s) failed", self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Builds the assignment episode for a seed.
#[derive(Clone)]
struct DanFactory {
    scenario: Scenario,
    agents: usize,
    params: mast_core::dan::DanParams,
}

impl DanFactory {
    fn make(&self, seed: u64) -> mast_core::Result<DanWorld> {
        init_scenario(&self.scenario, self.agents, &self.params, seed)
    }
}

fn dan_factory(cfg: &ExperimentConfig, scenario: Scenario, agents: usize) -> Result<DanFactory> {
    let mut params = cfg.dan();
    let trained = cfg.usize("env.agents")?;
    if agents != trained && trained > 0 {
        // Keep the agent density of the configuration.
        params.width *= (agents as f64 / trained as f64).sqrt();
    }
    Ok(DanFactory { scenario, agents, params })
}

fn coverage_factory(cfg: &ExperimentConfig, agents: usize) -> Result<impl Fn(u64) -> mast_core::Result<CoverageState> + Clone + Sync> {
    let params = mast_core::coverage::CoverageParams { agents, ..cfg.coverage()? };
    Ok(move |seed| CoverageState::random(params.clone(), seed))
}

fn jobs_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("starting worker threads")
}

/// Runs one episode per seed, in parallel, returning traces in seed order.
fn run_all<E, F, P, Pol>(
    pool: &rayon::ThreadPool,
    seeds: &[u64],
    steps: usize,
    graph_kind: GraphKind,
    make_env: F,
    make_policy: P,
) -> Result<Vec<Episode>>
where
    E: Environment,
    F: Fn(u64) -> mast_core::Result<E> + Sync,
    P: Fn() -> Pol + Sync,
    Pol: FnMut(&E, &CommGraph) -> mast_core::Result<Vec<Velocity>>,
{
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let mut env = make_env(seed)?;
                let mut policy = make_policy();
                let trace = run_episode(&mut env, steps, graph_kind, &mut policy)?;
                Ok(Episode { seed, trace })
            })
            .collect::<mast_core::Result<Vec<_>>>()
    })
    .map_err(Into::into)
}

fn run_mast<E: Environment>(
    pool: &rayon::ThreadPool,
    model: &Mast,
    mode: ExecMode,
    seeds: &[u64],
    steps: usize,
    graph_kind: GraphKind,
    make_env: impl Fn(u64) -> mast_core::Result<E> + Sync,
) -> Result<Vec<Episode>> {
    run_all(pool, seeds, steps, graph_kind, make_env, || {
        let mut ctl = MastController::new(model, mode);
        move |e: &E, g: &CommGraph| ctl.act(e, g)
    })
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub out: PathBuf,
}

pub fn dan_train(args: &TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let model_cfg = cfg.model()?;
    let train_cfg = cfg.train()?;
    let graph_kind = cfg.graph_kind()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let model = Mast::init(model_cfg, train_cfg.seed)?;
    let started = Instant::now();
    let csv_path = args.out.join("training.csv");
    let mut log = csv::Writer::from_path(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    log.write_record(["epoch", "train_loss", "heldout_loss", "val_metric", "val_half_width", "wallclock_s"])?;
    let mut on_epoch = |l: &EpochLog| -> mast_core::Result<()> {
        let (m, h) = l
            .val_metric
            .map_or((String::new(), String::new()), |v| (v.mean.to_string(), v.half_width.to_string()));
        let row = [
            l.epoch.to_string(),
            l.train_loss.to_string(),
            l.heldout_loss.to_string(),
            m,
            h,
            format!("{:.3}", l.wallclock_s),
        ];
        log.write_record(row).map_err(|e| MastError::Io(e.to_string()))?;
        log.flush()?;
        Ok(())
    };
    let params = match cfg.task()? {
        Task::Dan => {
            let factory = dan_factory(&cfg, cfg.scenario()?, cfg.usize("env.agents")?)?;
            let mut tr = Trainer::new(model, train_cfg, graph_kind, move |s| factory.make(s))?;
            tr.run(&mut on_epoch)?;
            tr.model.params
        }
        Task::Coverage => {
            let make = coverage_factory(&cfg, cfg.usize("coverage.agents")?)?;
            let mut tr = Trainer::new(model, train_cfg, graph_kind, make)?;
            tr.run(&mut on_epoch)?;
            tr.model.params
        }
    };
    drop(log);
    let bytes = encode(&params);
    let weights_path = args.out.join("weights.mastw");
    fs::write(&weights_path, &bytes).with_context(|| format!("writing {}", weights_path.display()))?;
    let resolved = cfg.resolved();
    fs::write(args.out.join("config.toml"), &resolved)?;
    let hash = blob_hash(&bytes);
    write_meta(
        &args.out.join("meta.toml"),
        &[
            ("command", "dan-train".into()),
            ("id", run_id("dan-train", &resolved)),
            ("weights", "weights.mastw".into()),
            ("weights_sha256", hash.clone()),
        ],
        &resolved,
    )?;
    println!(
        "trained {} epochs in {:.1} s; weights {} (sha256 blob {hash})",
        cfg.usize("train.epochs")?,
        started.elapsed().as_secs_f64(),
        weights_path.display(),
    );
    Ok(())
}

pub struct EvalArgs {
    pub weights: PathBuf,
    pub config: Option<PathBuf>,
    pub scenario: Option<String>,
    pub agents: Option<usize>,
    pub delay: Option<f64>,
    pub mode: String,
    pub episodes: usize,
    pub steps: Option<usize>,
    pub csv: PathBuf,
    pub jobs: usize,
}

fn load_config(explicit: Option<&Path>, fallback: Option<PathBuf>) -> Result<ExperimentConfig> {
    match explicit.map(Path::to_path_buf).or(fallback) {
        Some(path) => Ok(ExperimentConfig::load(&path)?),
        None => {
            let mut cfg = ExperimentConfig::default();
            cfg.apply_env()?;
            Ok(cfg)
        }
    }
}

fn episode_seeds(cfg: &ExperimentConfig, episodes: usize) -> Vec<u64> {
    let base = cfg.seed();
    (0..episodes as u64).map(|e| base.wrapping_add(e)).collect()
}

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Dan => "success_rate",
        Task::Coverage => "normalized_cost",
    }
}

fn no_scenario(arg: Option<&str>) -> Result<()> {
    match arg {
        Some(s) => Err(usage(format!("--scenario `{s}` only applies to task dan"))),
        None => Ok(()),
    }
}

fn scenario_arg(cfg: &ExperimentConfig, arg: Option<&str>) -> Result<Scenario> {
    match arg {
        Some(s) => s.parse().map_err(|e: MastError| usage(e.to_string())),
        None => Ok(cfg.scenario()?),
    }
}

/// Writes the result CSV and its metadata sidecar.
fn finish_run(
    command: &str,
    cfg: &ExperimentConfig,
    csv: &Path,
    facts: Vec<(&str, String)>,
    labels: impl FnOnce(&str) -> Result<()>,
) -> Result<String> {
    let resolved = cfg.resolved();
    let material = format!("{command}\n{facts:?}\n{resolved}");
    let id = run_id(command, &material);
    labels(&id)?;
    let mut run = vec![("command", command.to_string()), ("id", id.clone())];
    run.extend(facts);
    write_meta(&sidecar(csv, ".meta.toml"), &run, &resolved)?;
    Ok(id)
}

pub fn dan_eval(args: &EvalArgs) -> Result<()> {
    if !args.weights.exists() {
        return Err(usage(format!("weights file {} not found", args.weights.display())));
    }
    let fallback = args.weights.parent().map(|d| d.join("config.toml")).filter(|p| p.exists());
    if args.config.is_none() && fallback.is_none() {
        return Err(usage(format!(
            "no configuration next to {}; pass --config",
            args.weights.display()
        )));
    }
    let cfg = load_config(args.config.as_deref(), fallback)?;
    let bytes = fs::read(&args.weights).with_context(|| format!("reading {}", args.weights.display()))?;
    let model = Mast::new(cfg.model()?, load_weights(&args.weights)?)?;
    let delay = match args.delay {
        Some(d) => d,
        None if args.mode == "central" => 0.0,
        None => cfg.float("comm.tau") / cfg.float("env.dt"),
    };
    let mode = ExecMode::parse(&args.mode, delay)?;
    let task = cfg.task()?;
    let agents = args.agents.unwrap_or(cfg.agents()?);
    let steps = match args.steps {
        Some(s) => s,
        None => cfg.episode_steps()?,
    };
    let graph_kind = cfg.graph_kind()?;
    let seeds = episode_seeds(&cfg, args.episodes);
    let pool = jobs_pool(args.jobs)?;
    let (scenario, episodes, dt) = match task {
        Task::Dan => {
            let scenario = scenario_arg(&cfg, args.scenario.as_deref())?;
            let factory = dan_factory(&cfg, scenario.clone(), agents)?;
            let eps = run_mast(&pool, &model, mode, &seeds, steps, graph_kind, |s| factory.make(s))?;
            (scenario.to_string(), eps, cfg.float("env.dt"))
        }
        Task::Coverage => {
            no_scenario(args.scenario.as_deref())?;
            let eps = run_mast(&pool, &model, mode, &seeds, steps, graph_kind, coverage_factory(&cfg, agents)?)?;
            ("idf".to_string(), eps, cfg.coverage()?.dt)
        }
    };
    let variant = if model.cfg.use_component_mask { "mast-m" } else { "mast-l" };
    let policy = format!("{variant}-{}:{mode}:delay={delay}", model.cfg.posenc);
    let facts = vec![
        ("weights", args.weights.display().to_string()),
        ("weights_sha256", blob_hash(&bytes)),
        ("policy", policy.clone()),
        ("scenario", scenario.clone()),
        ("agents", agents.to_string()),
        ("episodes", args.episodes.to_string()),
        ("steps", steps.to_string()),
    ];
    finish_run("dan-eval", &cfg, &args.csv, facts, |id| {
        write_results(
            &args.csv,
            &RunLabels { run_id: id, policy: &policy, scenario: &scenario, n: agents, dt, metric_name: metric_name(task) },
            &episodes,
        )
    })?;
    report(&episodes, metric_name(task));
    Ok(())
}

fn report(episodes: &[Episode], metric: &str) {
    let finals: Vec<f64> = episodes.iter().filter_map(|e| e.trace.last().copied()).collect();
    let est = mast_core::rollout::estimate(&finals);
    println!("terminal {metric}: {:.4} ± {:.4} over {} episodes", est.mean, est.half_width, est.count);
}

pub struct BaselineArgs {
    pub task: String,
    pub policy: String,
    pub hops: usize,
    pub config: Option<PathBuf>,
    pub scenario: Option<String>,
    pub agents: Option<usize>,
    pub episodes: usize,
    pub steps: Option<usize>,
    pub csv: PathBuf,
    pub jobs: usize,
}

pub fn baseline(args: &BaselineArgs) -> Result<()> {
    let task: Task = args.task.parse().map_err(|e: MastError| usage(e.to_string()))?;
    let mut cfg = load_config(args.config.as_deref(), None)?;
    cfg.set("env.task", toml::Value::String(args.task.clone()))?;
    let agents = args.agents.unwrap_or(cfg.agents()?);
    let steps = match args.steps {
        Some(s) => s,
        None => cfg.episode_steps()?,
    };
    let graph_kind = cfg.graph_kind()?;
    let seeds = episode_seeds(&cfg, args.episodes);
    let pool = jobs_pool(args.jobs)?;
    let (policy, scenario, episodes, dt) = match task {
        Task::Dan => {
            let scenario = scenario_arg(&cfg, args.scenario.as_deref())?;
            let factory = dan_factory(&cfg, scenario.clone(), agents)?;
            let make = |s| factory.make(s);
            let hops = args.hops;
            let (label, eps) = match args.policy.as_str() {
                "lsap" => ("lsap".to_string(), run_all(&pool, &seeds, steps, graph_kind, make, || |e: &DanWorld, _: &CommGraph| lsap_policy(e))?),
                "dhba" => (
                    format!("dhba-k{hops}"),
                    run_all(&pool, &seeds, steps, graph_kind, make, || move |e: &DanWorld, g: &CommGraph| dhba_policy(e, g, hops))?,
                ),
                "static" => ("static".to_string(), run_all(&pool, &seeds, steps, graph_kind, make, || |e: &DanWorld, _: &CommGraph| Ok(vec![[0.0, 0.0]; e.num_agents()]))?),
                other => return Err(usage(format!("policy `{other}` does not apply to task dan (lsap|dhba|static)"))),
            };
            (label, scenario.to_string(), eps, cfg.float("env.dt"))
        }
        Task::Coverage => {
            no_scenario(args.scenario.as_deref())?;
            let make = coverage_factory(&cfg, agents)?;
            let eps = match args.policy.as_str() {
                "static" => run_all(&pool, &seeds, steps, graph_kind, make, || |e: &CoverageState, _: &CommGraph| Ok(vec![[0.0, 0.0]; e.num_agents()]))?,
                name => {
                    let variant: CvtVariant = name.parse().map_err(|_| {
                        usage(format!("policy `{name}` does not apply to task coverage (cvt-clairvoyant|cvt-centralized|cvt-decentralized|static)"))
                    })?;
                    run_all(&pool, &seeds, steps, graph_kind, make, || move |e: &CoverageState, _: &CommGraph| Ok(e.cvt_policy(variant)))?
                }
            };
            let label = match args.policy.parse::<CvtVariant>() {
                Ok(v) => v.to_string(),
                Err(_) => args.policy.clone(),
            };
            (label, "idf".to_string(), eps, cfg.coverage()?.dt)
        }
    };
    let facts = vec![
        ("policy", policy.clone()),
        ("scenario", scenario.clone()),
        ("agents", agents.to_string()),
        ("episodes", args.episodes.to_string()),
        ("steps", steps.to_string()),
    ];
    finish_run("baseline", &cfg, &args.csv, facts, |id| {
        write_results(
            &args.csv,
            &RunLabels { run_id: id, policy: &policy, scenario: &scenario, n: agents, dt, metric_name: metric_name(task) },
            &episodes,
        )
    })?;
    report(&episodes, metric_name(task));
    Ok(())
}

pub fn check(suite: &str, seed: u64) -> Result<()> {
    let suites: Vec<Suite> = if suite == "all" {
        vec![Suite::Equivariance, Suite::Gradients, Suite::Oracles]
    } else {
        vec![suite.parse().map_err(|e: MastError| usage(e.to_string()))?]
    };
    let mut failed = 0;
    let out = std::io::stdout();
    for s in suites {
        let started = Instant::now();
        for outcome in run_suite(s, seed)? {
            failed += usize::from(!outcome.passed);
            writeln!(out.lock(), "{outcome}")?;
        }
        writeln!(out.lock(), "{s:?} suite finished in {:.1} s", started.elapsed().as_secs_f64())?;
    }
    if failed > 0 {
        bail!(CheckFailed(failed));
    }
    Ok(())
}
