//! Episode loops shared by training, evaluation and the baselines, and the
//! two ways of running a trained network: one centralized masked forward, or
//! every agent running the network on what its message store holds.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::attention::window_mask;
use crate::comm::{CommGraph, Fresh, GraphKind, MessageStore};
use crate::coverage::{CoverageState, CvtVariant};
use crate::dan::{lsap_policy, DanWorld, Velocity};
use crate::error::{MastError, Result};
use crate::kernel::Array;
use crate::net::Mast;
use crate::posenc::Position;

/// What a policy sees of a multi-agent task.
pub trait Environment: Clone + Send + Sync {
    fn num_agents(&self) -> usize;
    fn positions(&self) -> &[Position];
    fn time(&self) -> f64;
    fn dt(&self) -> f64;
    /// Network-ready observations, one row per agent.
    fn observations(&self) -> Result<Array>;
    /// Labels for imitation.
    fn expert_action(&self) -> Result<Vec<Velocity>>;
    fn step(&mut self, u: &[Velocity]) -> Result<()>;
    /// Success rate for assignment, normalized cost for coverage.
    fn metric(&self) -> f64;
}

impl Environment for DanWorld {
    fn num_agents(&self) -> usize {
        DanWorld::num_agents(self)
    }

    fn positions(&self) -> &[Position] {
        &self.positions
    }

    fn time(&self) -> f64 {
        self.t
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn observations(&self) -> Result<Array> {
        self.network_inputs()
    }

    fn expert_action(&self) -> Result<Vec<Velocity>> {
        lsap_policy(self)
    }

    fn step(&mut self, u: &[Velocity]) -> Result<()> {
        DanWorld::step(self, u)
    }

    fn metric(&self) -> f64 {
        self.success_rate()
    }
}

impl Environment for CoverageState {
    fn num_agents(&self) -> usize {
        CoverageState::num_agents(self)
    }

    fn positions(&self) -> &[Position] {
        &self.positions
    }

    fn time(&self) -> f64 {
        self.t
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn observations(&self) -> Result<Array> {
        self.network_inputs()
    }

    fn expert_action(&self) -> Result<Vec<Velocity>> {
        Ok(self.cvt_policy(CvtVariant::Clairvoyant))
    }

    fn step(&mut self, u: &[Velocity]) -> Result<()> {
        CoverageState::step(self, u)
    }

    fn metric(&self) -> f64 {
        self.normalized_cost()
    }
}

/// Runs `steps` control steps, rebuilding the communication graph from the
/// current positions before each one. Returns the metric at `t = 0..=steps`.
pub fn run_episode<E: Environment>(
    env: &mut E,
    steps: usize,
    graph_kind: GraphKind,
    mut policy: impl FnMut(&E, &CommGraph) -> Result<Vec<Velocity>>,
) -> Result<Vec<f64>> {
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(env.metric());
    for _ in 0..steps {
        let graph = CommGraph::build(env.positions(), graph_kind);
        let u = policy(env, &graph)?;
        env.step(&u)?;
        trace.push(env.metric());
    }
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExecMode {
    /// One forward over all agents with the attention mask standing in for
    /// communication.
    Central,
    /// Every agent runs the network on its own message store. `delay_ratio`
    /// is `τ/Δt`; zero means messages propagate instantly.
    Decentralized { delay_ratio: f64 },
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecMode::Central => f.write_str("central"),
            ExecMode::Decentralized { .. } => f.write_str("decentralized"),
        }
    }
}

impl ExecMode {
    pub fn parse(mode: &str, delay_ratio: f64) -> Result<ExecMode> {
        if !(delay_ratio >= 0.0) || !delay_ratio.is_finite() {
            return Err(MastError::Config(format!("delay ratio must be finite and ≥ 0, got {delay_ratio}")));
        }
        match mode {
            "central" if delay_ratio == 0.0 => Ok(ExecMode::Central),
            "central" => Err(MastError::Config("central execution has no communication delay".into())),
            "decentralized" => Ok(ExecMode::Decentralized { delay_ratio }),
            _ => Err(MastError::Parse(format!("unknown execution mode `{mode}`"))),
        }
    }
}

impl FromStr for ExecMode {
    type Err = MastError;

    fn from_str(s: &str) -> Result<Self> {
        ExecMode::parse(s, 0.0)
    }
}

/// Forward pass of agent `k` on its local view: its own row first, then the
/// origins it has heard from. Only the attention window applies locally.
pub fn local_forward(model: &Mast, store: &MessageStore, k: usize) -> Result<Vec<f64>> {
    let (_, xs, ps) = store.gather_local(k);
    let rows: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let x = Array::from_rows(&rows)?;
    let mask = window_mask(&ps, model.cfg.window_radius);
    let y = model.forward(&x, &ps, &mask)?;
    Ok(y.row(0).to_vec())
}

/// Every agent's local forward, stacked in agent order.
pub fn decentralized_forward(model: &Mast, store: &MessageStore) -> Result<Array> {
    let rows = (0..store.len())
        .map(|k| local_forward(model, store, k))
        .collect::<Result<Vec<_>>>()?;
    Array::from_rows(&rows)
}

/// Runs a network as a policy, carrying message stores across steps when
/// decentralized.
pub struct MastController<'a> {
    model: &'a Mast,
    mode: ExecMode,
    store: Option<MessageStore>,
    /// Graph and self-data of the previous control step, which the rounds
    /// between control steps transmit.
    pending: Option<(CommGraph, Vec<Fresh>)>,
    rounds_done: u64,
}

impl<'a> MastController<'a> {
    pub fn new(model: &'a Mast, mode: ExecMode) -> Self {
        MastController {
            model,
            mode,
            store: None,
            pending: None,
            rounds_done: 0,
        }
    }

    pub fn act<E: Environment>(&mut self, env: &E, graph: &CommGraph) -> Result<Vec<Velocity>> {
        let obs = env.observations()?;
        let positions = env.positions();
        let u = match self.mode {
            ExecMode::Central => {
                let mask = self.model.mask(positions, Some(graph));
                self.model.act(&obs, positions, &mask)?
            }
            ExecMode::Decentralized { delay_ratio } => {
                let x = self.model.perceive(&obs)?;
                let t = env.time();
                let fresh: Vec<Fresh> = (0..env.num_agents())
                    .map(|i| Fresh {
                        x: Arc::new(x.row(i).to_vec()),
                        p: positions[i],
                        t,
                    })
                    .collect();
                let store = self.store.get_or_insert_with(|| MessageStore::new(fresh.len()));
                if delay_ratio > 0.0 {
                    // Rounds fire at multiples of τ; catch up on those that
                    // completed since the last control step.
                    let tau = delay_ratio * env.dt();
                    let due = (t / tau + 1e-9).floor() as u64;
                    if let Some((g, f)) = &self.pending {
                        while self.rounds_done < due {
                            store.comm_step(g, tau, f);
                            self.rounds_done += 1;
                        }
                    }
                    self.rounds_done = self.rounds_done.max(due);
                    store.refresh_self(&fresh);
                } else {
                    // Instant propagation over the current graph: nothing
                    // survives from agents that have since left the component.
                    *store = MessageStore::new(fresh.len());
                    store.propagate_fully(graph, &fresh);
                }
                let y = decentralized_forward(self.model, store)?;
                self.pending = Some((graph.clone(), fresh));
                self.model.readout(&y)?
            }
        };
        Ok((0..u.rows()).map(|i| [u.get(i, 0), u.get(i, 1)]).collect())
    }
}

/// Mean and 95% normal-approximation half-width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    pub count: usize,
}

pub fn estimate(values: &[f64]) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate { mean: f64::NAN, half_width: f64::NAN, count: 0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half_width = if n > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    Estimate { mean, half_width, count: n }
}
