//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p mast-core --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mast_core::checks::{
    coverage_dual, cvt_descent, dhba_convergence, gradient_check, hungarian_oracle, keystone_equivalence,
    permutation_equivariance, shift_equivariance, CheckOutcome,
};
use mast_core::comm::GraphKind;
use mast_core::coverage::CoverageParams;
use mast_core::dan::{init_scenario, DanParams, DanWorld, Scenario};
use mast_core::imitation::{TrainConfig, Trainer};
use mast_core::net::{Mast, MastConfig};
use mast_core::posenc::PosEncKind;
use mast_core::rollout::{run_episode, ExecMode, MastController};
use mast_core::Result;

const SEED: u64 = 7;

struct Line {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn timed(
    name: &'static str,
    limit: Option<Duration>,
    f: impl FnOnce() -> Result<(bool, String)>,
) -> Line {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let took = start.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let budget = limit.map_or(String::new(), |l| format!(" of {} s", l.as_secs()));
    let line = Line {
        name,
        passed: passed && in_time,
        detail: format!("{detail}; {:.1} s{budget}", took.as_secs_f64()),
    };
    println!("{line}");
    line
}

impl std::fmt::Display for Line {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn joined(outcomes: &[CheckOutcome]) -> (bool, String) {
    let passed = outcomes.iter().all(|o| o.passed);
    let detail = outcomes
        .iter()
        .map(|o| {
            let tag = if o.passed { "ok" } else { "FAILED" };
            format!("[{tag}] {} {:.3e} ≤ {:.0e} ({})", o.name, o.deviation, o.tolerance, o.note)
        })
        .collect::<Vec<_>>()
        .join("; ");
    (passed, detail)
}

// Small assignment recipe: 20 agents in a 400 m world.
const AGENTS: usize = 20;
const WIDTH: f64 = 400.0;
const HORIZON: usize = 80;
const EVAL_SEED_BASE: u64 = 3_000_000;
const EVAL_EPISODES: u64 = 20;

fn recipe_model() -> MastConfig {
    MastConfig {
        layers: 2,
        heads: 2,
        head_dim: 32,
        posenc: PosEncKind::RopeGeometric,
        window_radius: 100.0,
        base_wavelength: WIDTH,
        use_component_mask: true,
        ..MastConfig::default()
    }
}

fn recipe_training() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        epochs: 100,
        rollouts_per_epoch: 4,
        steps: HORIZON,
        batch_size: 16,
        validation_episodes: 0,
        seed: 1,
        ..TrainConfig::default()
    }
}

fn world(seed: u64) -> Result<DanWorld> {
    let params = DanParams { width: WIDTH, ..DanParams::default() };
    init_scenario(&Scenario::TrainingMix, AGENTS, &params, seed)
}

fn graph() -> GraphKind {
    GraphKind::Knn(3)
}

/// Terminal success rate of every evaluation seed.
fn terminal_rates(model: Option<&Mast>, mode: ExecMode) -> Result<Vec<f64>> {
    (0..EVAL_EPISODES)
        .map(|e| {
            let mut env = world(EVAL_SEED_BASE + e)?;
            let trace = match model {
                Some(m) => {
                    let mut ctl = MastController::new(m, mode);
                    run_episode(&mut env, HORIZON, graph(), |w, g| ctl.act(w, g))?
                }
                None => run_episode(&mut env, HORIZON, graph(), |w: &DanWorld, _| Ok(vec![[0.0, 0.0]; w.num_agents()]))?,
            };
            Ok(*trace.last().expect("initial metric"))
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> ExitCode {
    let mins = |m: u64| Some(Duration::from_secs(60 * m));
    let mut lines = Vec::new();

    lines.push(timed("shift equivariance", mins(1), || {
        Ok(joined(&[shift_equivariance(&[PosEncKind::RopeGeometric, PosEncKind::RopeLinear], 100, SEED)?]))
    }));
    lines.push(timed("permutation equivariance", None, || Ok(joined(&[permutation_equivariance(100, SEED)?]))));
    lines.push(timed("decentralized equivalence", mins(2), || Ok(joined(&[keystone_equivalence(20, SEED)?]))));
    lines.push(timed("gradient fidelity", mins(5), || {
        let outcomes = PosEncKind::ALL_ENCODINGS
            .iter()
            .map(|&k| gradient_check(k, SEED))
            .collect::<Result<Vec<_>>>()?;
        Ok(joined(&outcomes))
    }));
    lines.push(timed("hungarian oracle", mins(1), || Ok(joined(&[hungarian_oracle(1000, SEED)?]))));
    lines.push(timed("dhba convergence", None, || Ok(joined(&dhba_convergence(20, SEED)?))));
    lines.push(timed("coverage cost dual", None, || Ok(joined(&[coverage_dual(50, SEED)?]))));
    lines.push(timed("clairvoyant cvt descent", None, || {
        let params = CoverageParams { env_size: 1024, agents: 32, features: 32, steps: 600, ..CoverageParams::default() };
        let seeds: Vec<u64> = (0..20).collect();
        let (rise, terminal) = cvt_descent(&params, &seeds)?;
        Ok((
            rise <= 1e-9 && terminal < 0.6,
            format!("worst per-step rise {rise:.3e} ≤ 1e-9, terminal mean {terminal:.4} < 0.6 (20 seeds, 600 steps)"),
        ))
    }));

    // Train once; the last two criteria share the model.
    let mut trained: Option<Mast> = None;
    lines.push(timed("tiny imitation learning", mins(30), || {
        let model = Mast::init(recipe_model(), 1)?;
        let mut tr = Trainer::new(model, recipe_training(), graph(), world)?;
        let mut losses = Vec::new();
        tr.run(|log| {
            losses.push(log.heldout_loss);
            Ok(())
        })?;
        let (first, last) = (losses[0], *losses.last().expect("epochs ran"));
        let drop = 1.0 - last / first;
        let learned = terminal_rates(Some(&tr.model), ExecMode::Central)?;
        let again = terminal_rates(Some(&tr.model), ExecMode::Central)?;
        let still = terminal_rates(None, ExecMode::Central)?;
        let gain = mean(&learned) - mean(&still);
        let same = learned.iter().zip(&again).all(|(a, b)| a.to_bits() == b.to_bits());
        trained = Some(tr.model);
        Ok((
            drop >= 0.5 && gain >= 0.2 && same,
            format!(
                "held-out loss {first:.4} -> {last:.4} (drop {:.1}% ≥ 50%); SR {:.3} vs static {:.3} (gain {gain:.3} ≥ 0.2); rerun bit-identical: {same}",
                100.0 * drop,
                mean(&learned),
                mean(&still),
            ),
        ))
    }));
    lines.push(timed("delay robustness", None, || {
        let Some(model) = trained.as_ref() else {
            return Ok((false, "no trained model".into()));
        };
        // The τ → 0 reference is centralized execution.
        let instant = mean(&terminal_rates(Some(model), ExecMode::Central)?);
        let delayed = mean(&terminal_rates(Some(model), ExecMode::Decentralized { delay_ratio: 1.0 })?);
        let gossip = mean(&terminal_rates(Some(model), ExecMode::Decentralized { delay_ratio: 0.0 })?);
        let gap = (delayed - instant).abs();
        Ok((
            gap <= 0.1,
            format!(
                "SR {delayed:.3} at delay 1.0 vs {instant:.3} centralized (gap {gap:.3} ≤ 0.1); decentralized at delay 0: {gossip:.3}"
            ),
        ))
    }));

    let failed: Vec<&Line> = lines.iter().filter(|l| !l.passed).collect();
    println!("\n{} of {} criteria passed", lines.len() - failed.len(), lines.len());
    for l in &failed {
        println!("{l}");
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
