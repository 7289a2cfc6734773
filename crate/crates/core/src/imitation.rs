//! Imitation learning: rollouts mixing expert and network control, a replay
//! buffer of expert-labelled states, and minibatch regression onto the
//! expert's velocities.

use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::comm::{CommGraph, GraphKind};
use crate::dan::Velocity;
use crate::error::{MastError, Result};
use crate::kernel::{adamw_step, clip_global_norm, stream, AdamWConfig, AdamWState, Array, SimRng, Tape, Var};
use crate::net::Mast;
use crate::posenc::Position;
use crate::rollout::{estimate, run_episode, Environment, Estimate, ExecMode, MastController};

/// Seeds of the validation episodes start here.
pub const VALIDATION_SEED_BASE: u64 = 1_000_000;
/// Seeds of the held-out loss episodes start here.
pub const HELDOUT_SEED_BASE: u64 = 2_000_000;

const EPISODE_STREAM: u64 = 0x7a11;
const BATCH_STREAM: u64 = 0xba7c;

/// Everything needed to replay one control step of one episode.
#[derive(Clone, Debug)]
pub struct Sample {
    pub obs: Array,
    pub positions: Vec<Position>,
    pub graph: CommGraph,
    pub expert: Array,
}

impl Sample {
    pub fn capture<E: Environment>(env: &E, graph: &CommGraph) -> Result<Sample> {
        Ok(Sample {
            obs: env.observations()?,
            positions: env.positions().to_vec(),
            graph: graph.clone(),
            expert: velocities_to_array(&env.expert_action()?)?,
        })
    }
}

fn velocities_to_array(u: &[Velocity]) -> Result<Array> {
    Array::from_rows(u)
}

/// FIFO ring of samples.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Sample>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, s: Sample) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(s);
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.items[i]
    }

    /// Up to `k` distinct samples, uniformly at random.
    pub fn sample(&self, rng: &mut impl Rng, k: usize) -> Vec<&Sample> {
        let k = k.min(self.items.len());
        sample_indices(rng, self.items.len(), k)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Only 0 is supported.
    pub dropout: f64,
    pub epochs: usize,
    pub rollouts_per_epoch: usize,
    pub steps: usize,
    pub batch_size: usize,
    /// Fraction of rollouts driven by the expert.
    pub expert_mix: f64,
    pub capacity: usize,
    pub grad_clip: f64,
    /// Simulation steps between optimizer steps.
    pub train_every: usize,
    pub validation_episodes: usize,
    pub validation_steps: usize,
    /// Epochs between validation rollouts; the last epoch always validates.
    pub validate_every: usize,
    pub heldout_episodes: usize,
    /// Keep every this many steps of a held-out episode.
    pub heldout_stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 0.0,
            dropout: 0.0,
            epochs: 500,
            rollouts_per_epoch: 32,
            steps: 200,
            batch_size: 128,
            expert_mix: 0.5,
            capacity: 20_000,
            grad_clip: 10.0,
            train_every: 1,
            validation_episodes: 32,
            validation_steps: 200,
            validate_every: 1,
            heldout_episodes: 4,
            heldout_stride: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.expert_mix) {
            return Err(MastError::Config(format!("train.expert_mix must be in [0, 1], got {}", self.expert_mix)));
        }
        if self.dropout != 0.0 {
            return Err(MastError::Config("train.dropout: only 0 is supported".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(MastError::Config("train.lr and train.grad_clip must be positive, train.weight_decay ≥ 0".into()));
        }
        if self.batch_size == 0 || self.train_every == 0 || self.validate_every == 0 || self.heldout_stride == 0 {
            return Err(MastError::Config(
                "train.batch_size, train.train_every, train.validate_every and train.heldout_stride must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    /// Whether rollout `m` of `count` is expert-driven.
    pub fn expert_drives(&self, m: usize, count: usize) -> bool {
        (m as f64 + 0.5) / count as f64 <= self.expert_mix
    }
}

/// Advances every episode by one step and stores one sample per episode.
/// Labels always come from the expert, whoever drives.
fn step_all<E: Environment>(
    envs: &mut [E],
    drivers: &[bool],
    model: &Mast,
    graph_kind: GraphKind,
    buffer: &mut ReplayBuffer,
) -> Result<()> {
    for (env, &expert) in envs.iter_mut().zip(drivers) {
        let graph = CommGraph::build(env.positions(), graph_kind);
        let s = Sample::capture(env, &graph)?;
        let u = if expert {
            rows_to_velocities(&s.expert)
        } else {
            MastController::new(model, ExecMode::Central).act(env, &graph)?
        };
        buffer.push(s);
        env.step(&u)?;
    }
    Ok(())
}

fn rows_to_velocities(a: &Array) -> Vec<Velocity> {
    (0..a.rows()).map(|i| [a.get(i, 0), a.get(i, 1)]).collect()
}

/// Rolls `envs` for `steps` steps in lockstep, the first `mix` share under the
/// expert and the rest under `model`, storing one sample per episode and step.
pub fn collect_epoch<E: Environment>(
    envs: &mut [E],
    model: &Mast,
    buffer: &mut ReplayBuffer,
    mix: f64,
    steps: usize,
    graph_kind: GraphKind,
) -> Result<()> {
    let cfg = TrainConfig { expert_mix: mix, ..TrainConfig::default() };
    let drivers: Vec<bool> = (0..envs.len()).map(|m| cfg.expert_drives(m, envs.len())).collect();
    for _ in 0..steps {
        step_all(envs, &drivers, model, graph_kind, buffer)?;
    }
    Ok(())
}

/// Summed per-sample MSE recorded on `tape`, with the parameter leaves.
fn record_loss(model: &Mast, tape: &mut Tape, batch: &[&Sample]) -> Result<(Var, Vec<Var>)> {
    let bound = model.bind(tape);
    let mut total: Option<Var> = None;
    for s in batch {
        let mask = model.mask(&s.positions, Some(&s.graph));
        let u = model.record_policy(tape, &bound, &s.obs, &s.positions, &mask)?;
        let l = tape.mse(u, &s.expert)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| MastError::Config("empty minibatch".into()))?;
    Ok((total, bound.iter().map(|(_, v)| *v).collect()))
}

/// Mean over the batch of the per-sample mean squared velocity error.
pub fn batch_loss(model: &Mast, batch: &[&Sample]) -> Result<f64> {
    let mut sum = 0.0;
    for s in batch {
        let mask = model.mask(&s.positions, Some(&s.graph));
        let u = model.act(&s.obs, &s.positions, &mask)?;
        let sq: f64 = u.data().iter().zip(s.expert.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        sum += sq / u.rows().max(1) as f64;
    }
    Ok(sum / batch.len().max(1) as f64)
}

/// One optimizer step on `batch`; returns the loss before the update.
pub fn train_step(model: &mut Mast, opt: &mut AdamWState, batch: &[&Sample], cfg: &TrainConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let (total, leaves) = record_loss(model, &mut tape, batch)?;
    let scale = 1.0 / batch.len() as f64;
    let loss = tape.value(total).data()[0] * scale;
    let mut grads = tape.backward(total);
    let mut g: Vec<Array> = leaves
        .iter()
        .map(|&v| {
            let mut a = grads.take(v);
            a.scale(scale);
            a
        })
        .collect();
    clip_global_norm(&mut g, cfg.grad_clip);
    let mut params: Vec<&mut Array> = model.params.values_mut().collect();
    adamw_step(&mut params, &g, opt, &cfg.optimizer());
    Ok(loss)
}

/// Terminal metric over `seeds`, each episode `steps` long under `policy`.
pub fn validate_policy<E: Environment>(
    seeds: &[u64],
    steps: usize,
    graph_kind: GraphKind,
    make_env: impl Fn(u64) -> Result<E>,
    mut policy: impl FnMut(&E, &CommGraph) -> Result<Vec<Velocity>>,
) -> Result<Estimate> {
    let mut finals = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut env = make_env(seed)?;
        let trace = run_episode(&mut env, steps, graph_kind, &mut policy)?;
        finals.push(*trace.last().expect("trace holds the initial metric"));
    }
    Ok(estimate(&finals))
}

/// Terminal metric of the network over the fixed validation seeds.
pub fn validate<E: Environment>(
    model: &Mast,
    cfg: &TrainConfig,
    graph_kind: GraphKind,
    make_env: impl Fn(u64) -> Result<E>,
) -> Result<Estimate> {
    let seeds: Vec<u64> = (0..cfg.validation_episodes as u64).map(|i| VALIDATION_SEED_BASE + i).collect();
    let mut finals = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let mut env = make_env(seed)?;
        let mut ctl = MastController::new(model, ExecMode::Central);
        let trace = run_episode(&mut env, cfg.validation_steps, graph_kind, |e, g| ctl.act(e, g))?;
        finals.push(*trace.last().expect("trace holds the initial metric"));
    }
    Ok(estimate(&finals))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub val_metric: Option<Estimate>,
    pub wallclock_s: f64,
}

pub struct Trainer<E, F> {
    pub model: Mast,
    pub cfg: TrainConfig,
    pub buffer: ReplayBuffer,
    pub heldout: Vec<Sample>,
    graph_kind: GraphKind,
    make_env: F,
    opt: AdamWState,
    episode_rng: SimRng,
    batch_rng: SimRng,
    epoch: usize,
    started: Instant,
    _env: std::marker::PhantomData<E>,
}

impl<E: Environment, F: Fn(u64) -> Result<E>> Trainer<E, F> {
    pub fn new(model: Mast, cfg: TrainConfig, graph_kind: GraphKind, make_env: F) -> Result<Self> {
        cfg.validate()?;
        let mut heldout = Vec::new();
        for i in 0..cfg.heldout_episodes as u64 {
            let mut env = make_env(HELDOUT_SEED_BASE + i)?;
            for t in 0..cfg.steps {
                let graph = CommGraph::build(env.positions(), graph_kind);
                let s = Sample::capture(&env, &graph)?;
                let u = rows_to_velocities(&s.expert);
                if t % cfg.heldout_stride == 0 {
                    heldout.push(s);
                }
                env.step(&u)?;
            }
        }
        let opt = AdamWState::new(&model.params.values().collect::<Vec<_>>());
        Ok(Trainer {
            buffer: ReplayBuffer::new(cfg.capacity),
            episode_rng: stream(cfg.seed, EPISODE_STREAM),
            batch_rng: stream(cfg.seed, BATCH_STREAM),
            model,
            cfg,
            heldout,
            graph_kind,
            make_env,
            opt,
            epoch: 0,
            started: Instant::now(),
            _env: std::marker::PhantomData,
        })
    }

    pub fn heldout_loss(&self) -> Result<f64> {
        let refs: Vec<&Sample> = self.heldout.iter().collect();
        batch_loss(&self.model, &refs)
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        self.epoch += 1;
        let m = self.cfg.rollouts_per_epoch;
        let mut envs = Vec::with_capacity(m);
        for _ in 0..m {
            let seed: u64 = self.episode_rng.gen();
            envs.push((self.make_env)(seed)?);
        }
        let drivers: Vec<bool> = (0..m).map(|i| self.cfg.expert_drives(i, m)).collect();
        let mut losses = Vec::new();
        for t in 0..self.cfg.steps {
            step_all(&mut envs, &drivers, &self.model, self.graph_kind, &mut self.buffer)?;
            if (t + 1) % self.cfg.train_every == 0 {
                let batch = self.buffer.sample(&mut self.batch_rng, self.cfg.batch_size);
                let batch: Vec<Sample> = batch.into_iter().cloned().collect();
                let refs: Vec<&Sample> = batch.iter().collect();
                losses.push(train_step(&mut self.model, &mut self.opt, &refs, &self.cfg)?);
            }
        }
        let train_loss = if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        let heldout_loss = self.heldout_loss()?;
        let due = self.epoch.is_multiple_of(self.cfg.validate_every) || self.epoch == self.cfg.epochs;
        let val_metric = if due && self.cfg.validation_episodes > 0 {
            Some(validate(&self.model, &self.cfg, self.graph_kind, &self.make_env)?)
        } else {
            None
        };
        let log = EpochLog {
            epoch: self.epoch,
            train_loss,
            heldout_loss,
            val_metric,
            wallclock_s: self.started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} train {:.5} held-out {:.5}{}",
            log.epoch,
            log.train_loss,
            log.heldout_loss,
            log.val_metric.map_or(String::new(), |v| format!(" val {:.3} ± {:.3}", v.mean, v.half_width))
        );
        Ok(log)
    }

    /// Runs every remaining epoch, handing each log to `on_epoch`.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochLog) -> Result<()>) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            let log = self.run_epoch()?;
            on_epoch(&log)?;
        }
        Ok(())
    }
}
