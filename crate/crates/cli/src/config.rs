//! Experiment configuration: TOML files whose sections prefix the keys
//! (`[model]` then `layers = 4` sets `model.layers`). Every key has a
//! default; unknown keys and wrongly typed values are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use mast_core::comm::GraphKind;
use mast_core::coverage::CoverageParams;
use mast_core::dan::{DanParams, Scenario, OBS_DIM};
use mast_core::imitation::TrainConfig;
use mast_core::net::MastConfig;
use mast_core::posenc::PosEncKind;
use mast_core::{MastError, Result};
use toml::Value;

/// Environment variable that overrides `train.seed`.
pub const SEED_VAR: &str = "MAST_SEED";

const DEFAULTS: &str = r#"
[model]
layers = 4
heads = 4
head_dim = 64
leaky_slope = 0.01
scaled = true

[posenc]
kind = "rope-g"
base_wavelength = 1000.0

[attention]
window_radius = inf
component_mask = true

[comm]
kind = "knn"
k = 3
radius = 256.0
tau = 0.0

[env]
task = "dan"
agents = 100
width = 1000.0
scenario = "mix"
steps = 200
dt = 1.0
u_max = 5.0
goal_radius = 5.0
min_separation = 5.0
robot_radius = 2.5
obs_length_scale = 100.0

[coverage]
env_size = 1024
agents = 32
features = 32
sigma = 40.0
comm_radius = 256.0
sensor_fov = 64
local_map = 256
obs_res = 32
exploration_prior = 1e-3
steps = 600

[train]
lr = 1e-4
weight_decay = 0.0
dropout = 0.0
epochs = 500
rollouts_per_epoch = 32
steps = 200
batch_size = 128
expert_mix = 0.5
capacity = 20000
grad_clip = 10.0
train_every = 1
validation_episodes = 32
validation_steps = 200
validate_every = 1
heldout_episodes = 4
heldout_stride = 10
seed = 0
"#;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Dan,
    Coverage,
}

impl FromStr for Task {
    type Err = MastError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dan" => Ok(Task::Dan),
            "coverage" => Ok(Task::Coverage),
            _ => Err(MastError::Config(format!("unknown task `{s}` (dan|coverage)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, Value)>> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| MastError::Config(format!("{origin}: {}", e.message().trim())))?;
    let mut out = Vec::new();
    flatten("", &table, &mut out);
    Ok(out)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let values = parse_pairs(DEFAULTS, "built-in defaults")
            .expect("defaults parse")
            .into_iter()
            .collect();
        ExperimentConfig { values }
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in parse_pairs(text, origin)? {
            cfg.set(&k, v).map_err(|e| match e {
                MastError::Config(m) => MastError::Config(format!("{origin}: {m}")),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// Reads `path`, then applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MastError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::from_text(&text, &path.display().to_string())?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(seed) = std::env::var(SEED_VAR) {
            let seed: i64 = seed
                .trim()
                .parse()
                .map_err(|_| MastError::Config(format!("{SEED_VAR}=`{seed}` is not an integer")))?;
            self.set("train.seed", Value::Integer(seed))?;
        }
        Ok(())
    }

    /// Sets a known key; integers are accepted where floats are expected.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let Some(current) = self.values.get(key) else {
            return Err(MastError::Config(format!("unknown key `{key}`")));
        };
        let value = match (current, value) {
            (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
            (c, v) if c.same_type(&v) => v,
            (c, v) => {
                return Err(MastError::Config(format!(
                    "key `{key}` expects a {}, got {} `{v}`",
                    c.type_str(),
                    v.type_str()
                )))
            }
        };
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    fn value(&self, key: &str) -> &Value {
        self.values.get(key).unwrap_or_else(|| panic!("`{key}` has a default"))
    }

    pub fn float(&self, key: &str) -> f64 {
        self.value(key).as_float().expect("typed on set")
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self.value(key).as_integer().expect("typed on set");
        usize::try_from(v).map_err(|_| MastError::Config(format!("key `{key}` must be ≥ 0, got {v}")))
    }

    pub fn boolean(&self, key: &str) -> bool {
        self.value(key).as_bool().expect("typed on set")
    }

    pub fn string(&self, key: &str) -> &str {
        self.value(key).as_str().expect("typed on set")
    }

    pub fn parsed<T: FromStr<Err = MastError>>(&self, key: &str) -> Result<T> {
        self.string(key).parse().map_err(|e: MastError| match e {
            MastError::Parse(m) | MastError::Config(m) => MastError::Config(format!("key `{key}`: {m}")),
            other => other,
        })
    }

    pub fn seed(&self) -> u64 {
        self.value("train.seed").as_integer().expect("typed on set") as u64
    }

    pub fn task(&self) -> Result<Task> {
        self.parsed("env.task")
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.parsed("env.scenario")
    }

    /// Every key with its value, one `key = value` line each, sorted. The
    /// text parses back to the same configuration.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let v = match v {
                Value::Float(f) if f.is_infinite() => if *f > 0.0 { "inf".into() } else { "-inf".into() },
                Value::Float(f) if f.fract() == 0.0 && f.abs() < 1e15 => format!("{f:.1}"),
                other => other.to_string(),
            };
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    pub fn graph_kind(&self) -> Result<GraphKind> {
        match self.task()? {
            Task::Coverage => Ok(GraphKind::Disk(self.float("coverage.comm_radius"))),
            Task::Dan => match self.string("comm.kind") {
                "knn" => Ok(GraphKind::Knn(self.usize("comm.k")?)),
                "disk" => Ok(GraphKind::Disk(self.float("comm.radius"))),
                other => Err(MastError::Config(format!("key `comm.kind`: unknown graph kind `{other}` (knn|disk)"))),
            },
        }
    }

    pub fn model(&self) -> Result<MastConfig> {
        let obs_dim = match self.task()? {
            Task::Dan => OBS_DIM,
            Task::Coverage => self.coverage()?.obs_dim(),
        };
        let cfg = MastConfig {
            layers: self.usize("model.layers")?,
            heads: self.usize("model.heads")?,
            head_dim: self.usize("model.head_dim")?,
            posenc: self.parsed::<PosEncKind>("posenc.kind")?,
            window_radius: self.float("attention.window_radius"),
            base_wavelength: self.float("posenc.base_wavelength"),
            use_component_mask: self.boolean("attention.component_mask"),
            obs_dim,
            leaky_slope: self.float("model.leaky_slope"),
            scaled: self.boolean("model.scaled"),
            u_max: self.float("env.u_max"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dan(&self) -> DanParams {
        DanParams {
            dt: self.float("env.dt"),
            u_max: self.float("env.u_max"),
            width: self.float("env.width"),
            goal_radius: self.float("env.goal_radius"),
            min_separation: self.float("env.min_separation"),
            robot_radius: self.float("env.robot_radius"),
            obs_length_scale: self.float("env.obs_length_scale"),
        }
    }

    pub fn coverage(&self) -> Result<CoverageParams> {
        let p = CoverageParams {
            env_size: self.usize("coverage.env_size")?,
            agents: self.usize("coverage.agents")?,
            features: self.usize("coverage.features")?,
            sigma: self.float("coverage.sigma"),
            comm_radius: self.float("coverage.comm_radius"),
            sensor_fov: self.usize("coverage.sensor_fov")?,
            local_map: self.usize("coverage.local_map")?,
            obs_res: self.usize("coverage.obs_res")?,
            u_max: self.float("env.u_max"),
            dt: self.float("env.dt"),
            exploration_prior: self.float("coverage.exploration_prior"),
            steps: self.usize("coverage.steps")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            lr: self.float("train.lr"),
            weight_decay: self.float("train.weight_decay"),
            dropout: self.float("train.dropout"),
            epochs: self.usize("train.epochs")?,
            rollouts_per_epoch: self.usize("train.rollouts_per_epoch")?,
            steps: self.usize("train.steps")?,
            batch_size: self.usize("train.batch_size")?,
            expert_mix: self.float("train.expert_mix"),
            capacity: self.usize("train.capacity")?,
            grad_clip: self.float("train.grad_clip"),
            train_every: self.usize("train.train_every")?,
            validation_episodes: self.usize("train.validation_episodes")?,
            validation_steps: self.usize("train.validation_steps")?,
            validate_every: self.usize("train.validate_every")?,
            heldout_episodes: self.usize("train.heldout_episodes")?,
            heldout_stride: self.usize("train.heldout_stride")?,
            seed: self.seed(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Episode length for evaluation and baselines.
    pub fn episode_steps(&self) -> Result<usize> {
        match self.task()? {
            Task::Dan => self.usize("env.steps"),
            Task::Coverage => self.usize("coverage.steps"),
        }
    }

    pub fn agents(&self) -> Result<usize> {
        match self.task()? {
            Task::Dan => self.usize("env.agents"),
            Task::Coverage => self.usize("coverage.agents"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_prefix_keys() {
        let c = ExperimentConfig::from_text("[model]\nlayers = 2\n[posenc]\nkind = \"rope-l\"\n", "t").unwrap();
        assert_eq!(c.usize("model.layers").unwrap(), 2);
        assert_eq!(c.model().unwrap().posenc, PosEncKind::RopeLinear);
        let d = ExperimentConfig::from_text("model.layers = 3\n# comment\n", "t").unwrap();
        assert_eq!(d.usize("model.layers").unwrap(), 3);
    }

    #[test]
    fn unknown_keys_and_bad_types_are_rejected() {
        let e = ExperimentConfig::from_text("[model]\nlayerz = 2\n", "cfg.toml").unwrap_err();
        assert!(e.to_string().contains("model.layerz"), "{e}");
        let e = ExperimentConfig::from_text("[model]\nlayers = \"two\"\n", "cfg.toml").unwrap_err();
        assert!(e.to_string().contains("model.layers"), "{e}");
        let e = ExperimentConfig::from_text("[posenc]\nkind = \"fourier\"\n", "c").unwrap().model().unwrap_err();
        assert!(e.to_string().contains("posenc.kind"), "{e}");
    }

    #[test]
    fn integers_widen_to_floats() {
        let c = ExperimentConfig::from_text("[env]\nwidth = 400\n", "t").unwrap();
        assert_eq!(c.dan().width, 400.0);
    }

    #[test]
    fn resolved_round_trips() {
        let c = ExperimentConfig::from_text("[attention]\nwindow_radius = 100\n[train]\nlr = 3e-4\n", "t").unwrap();
        let back = ExperimentConfig::from_text(&c.resolved(), "resolved").unwrap();
        assert_eq!(back, c);
        assert!(c.resolved().contains("model.layers = 4\n"));
        let d = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_text(&d.resolved(), "r").unwrap(), d);
    }

    #[test]
    fn defaults_build_every_section() {
        let c = ExperimentConfig::default();
        assert_eq!(c.model().unwrap(), MastConfig::default());
        assert_eq!(c.dan(), DanParams::default());
        assert_eq!(c.coverage().unwrap(), CoverageParams::default());
        assert_eq!(c.train().unwrap(), TrainConfig::default());
        assert_eq!(c.graph_kind().unwrap(), GraphKind::Knn(3));
    }
}
