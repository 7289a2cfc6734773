//! Initial layouts of agents and goals.

use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::glyphs::raster;
use super::{DanParams, DanWorld};
use crate::comm::distance_sq;
use crate::error::{MastError, Result};
use crate::kernel::{stream, SimRng};
use crate::posenc::Position;

/// Rejection-sampling budget per point set.
pub const MAX_ATTEMPTS: usize = 100_000;
/// Cluster sizes drawn for training layouts.
pub const TRAINING_DENSITIES: [usize; 3] = [1, 5, 10];

const SCENARIO_STREAM: u64 = 0x5ce0;

#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    Clusters { agent_density: usize, goal_density: usize },
    /// Agent and goal cluster sizes drawn independently from [`TRAINING_DENSITIES`].
    TrainingMix,
    /// Goals uniform over the square, agents on an annulus around its center.
    Circle,
    /// Agents in a vertical band on the left, goals in one on the right.
    TwoLines,
    /// Goals spread over the lit cells of a word.
    Text(String),
    /// Explicit layout read from a file of `a x y` / `g x y` lines.
    File(PathBuf),
}

impl FromStr for Scenario {
    type Err = MastError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || MastError::Parse(format!("unknown scenario `{s}`"));
        if let Some(rest) = s.strip_prefix("clusters-") {
            let parts: Vec<&str> = rest.split('-').collect();
            let nums: Vec<usize> = parts
                .iter()
                .map(|p| p.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            return match nums.as_slice() {
                [r] if *r > 0 => Ok(Scenario::Clusters {
                    agent_density: *r,
                    goal_density: *r,
                }),
                [a, g] if *a > 0 && *g > 0 => Ok(Scenario::Clusters {
                    agent_density: *a,
                    goal_density: *g,
                }),
                _ => Err(bad()),
            };
        }
        if let Some(word) = s.strip_prefix("text:") {
            return Ok(Scenario::Text(word.to_string()));
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Scenario::File(PathBuf::from(path)));
        }
        match s {
            "mix" => Ok(Scenario::TrainingMix),
            "circle" => Ok(Scenario::Circle),
            "two-lines" => Ok(Scenario::TwoLines),
            "text" => Ok(Scenario::Text("MAST".into())),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Clusters {
                agent_density,
                goal_density,
            } if agent_density == goal_density => write!(f, "clusters-{agent_density}"),
            Scenario::Clusters {
                agent_density,
                goal_density,
            } => write!(f, "clusters-{agent_density}-{goal_density}"),
            Scenario::TrainingMix => f.write_str("mix"),
            Scenario::Circle => f.write_str("circle"),
            Scenario::TwoLines => f.write_str("two-lines"),
            Scenario::Text(w) => write!(f, "text:{w}"),
            Scenario::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Draws points one at a time, keeping those at least `min_sep` from all
/// previously kept points.
struct Separated<'a> {
    rng: &'a mut SimRng,
    min_sep_sq: f64,
    attempts: usize,
    what: &'static str,
    points: Vec<Position>,
}

impl<'a> Separated<'a> {
    fn new(rng: &'a mut SimRng, min_sep: f64, what: &'static str) -> Self {
        Separated {
            rng,
            min_sep_sq: min_sep * min_sep,
            attempts: 0,
            what,
            points: Vec::new(),
        }
    }

    fn push_with(&mut self, mut draw: impl FnMut(&mut SimRng) -> Position) -> Result<()> {
        loop {
            self.attempts += 1;
            if self.attempts > MAX_ATTEMPTS {
                return Err(MastError::Sampling {
                    what: self.what.to_string(),
                    attempts: MAX_ATTEMPTS,
                });
            }
            let p = draw(self.rng);
            if self.points.iter().all(|&q| distance_sq(p, q) >= self.min_sep_sq) {
                self.points.push(p);
                return Ok(());
            }
        }
    }
}

fn uniform_square(rng: &mut SimRng, lo: Position, hi: Position) -> Position {
    [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])]
}

/// Uniform over the annulus `r_in ≤ |q − c| ≤ r_out` (the disk when `r_in = 0`).
fn uniform_annulus(rng: &mut SimRng, c: Position, r_in: f64, r_out: f64) -> Position {
    let r = rng.gen_range(r_in * r_in..=r_out * r_out).sqrt();
    let theta = rng.gen_range(0.0..TAU);
    let (s, co) = crate::posenc::sin_cos(theta);
    [c[0] + r * co, c[1] + r * s]
}

pub fn cluster_radius(min_separation: f64, density: usize) -> f64 {
    5.0 * min_separation * (density as f64).sqrt()
}

fn clusters(rng: &mut SimRng, n: usize, density: usize, params: &DanParams, what: &'static str) -> Result<Vec<Position>> {
    let r = cluster_radius(params.min_separation, density);
    let count = n.div_ceil(density);
    let w = params.width;
    let mut centers = Separated::new(rng, 2.0 * r, what);
    for _ in 0..count {
        centers.push_with(|rng| uniform_square(rng, [0.0, 0.0], [w, w]))?;
    }
    let centers = centers.points;
    let mut pts = Separated::new(rng, params.min_separation, what);
    for (c, &center) in centers.iter().enumerate() {
        let size = density.min(n - c * density);
        for _ in 0..size {
            pts.push_with(|rng| uniform_annulus(rng, center, 0.0, r))?;
        }
    }
    Ok(pts.points)
}

fn in_box(rng: &mut SimRng, n: usize, lo: Position, hi: Position, min_sep: f64, what: &'static str) -> Result<Vec<Position>> {
    let mut pts = Separated::new(rng, min_sep, what);
    for _ in 0..n {
        pts.push_with(|rng| uniform_square(rng, lo, hi))?;
    }
    Ok(pts.points)
}

fn text_goals(rng: &mut SimRng, n: usize, word: &str, params: &DanParams) -> Result<Vec<Position>> {
    let (cells, cols, rows) = raster(word);
    if cells.is_empty() {
        return Err(MastError::Config(format!("text `{word}` has no drawable letters")));
    }
    let w = params.width;
    let cell = 0.8 * w / cols.max(1) as f64;
    let x0 = 0.5 * (w - cell * cols as f64);
    let y0 = 0.5 * (w + cell * rows as f64);
    let mut order = cells.clone();
    order.shuffle(rng);
    let mut pts = Separated::new(rng, params.min_separation, "text goals");
    for k in 0..n {
        let (c, r) = order[k % order.len()];
        let lo = [x0 + c as f64 * cell, y0 - (r + 1) as f64 * cell];
        pts.push_with(|rng| uniform_square(rng, lo, [lo[0] + cell, lo[1] + cell]))?;
    }
    Ok(pts.points)
}

fn read_layout(path: &PathBuf) -> Result<(Vec<Position>, Vec<Position>)> {
    let text = fs::read_to_string(path)?;
    let (mut agents, mut goals) = (Vec::new(), Vec::new());
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || MastError::Parse(format!("{}:{}: expected `a|g x y`", path.display(), lineno + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let x: f64 = fields[1].parse().map_err(|_| bad())?;
        let y: f64 = fields[2].parse().map_err(|_| bad())?;
        match fields[0] {
            "a" => agents.push([x, y]),
            "g" => goals.push([x, y]),
            _ => return Err(bad()),
        }
    }
    Ok((agents, goals))
}

/// Samples the initial layout of `scenario` with `n` agents and `n` goals.
pub fn init_scenario(scenario: &Scenario, n: usize, params: &DanParams, seed: u64) -> Result<DanWorld> {
    let mut rng = stream(seed, SCENARIO_STREAM);
    let w = params.width;
    let sep = params.min_separation;
    let (agents, goals) = match scenario {
        Scenario::Clusters {
            agent_density,
            goal_density,
        } => {
            let a = clusters(&mut rng, n, *agent_density, params, "agent clusters")?;
            let g = clusters(&mut rng, n, *goal_density, params, "goal clusters")?;
            (a, g)
        }
        Scenario::TrainingMix => {
            let ra = *TRAINING_DENSITIES.choose(&mut rng).unwrap();
            let rg = *TRAINING_DENSITIES.choose(&mut rng).unwrap();
            let a = clusters(&mut rng, n, ra, params, "agent clusters")?;
            let g = clusters(&mut rng, n, rg, params, "goal clusters")?;
            (a, g)
        }
        Scenario::Circle => {
            let g = in_box(&mut rng, n, [0.0, 0.0], [w, w], sep, "circle goals")?;
            let mut a = Separated::new(&mut rng, sep, "circle agents");
            for _ in 0..n {
                a.push_with(|rng| uniform_annulus(rng, [w / 2.0, w / 2.0], 3.0 * w / 16.0, 5.0 * w / 16.0))?;
            }
            (a.points, g)
        }
        Scenario::TwoLines => {
            let a = in_box(&mut rng, n, [w / 8.0, 0.0], [w / 4.0, w], sep, "two-lines agents")?;
            let g = in_box(&mut rng, n, [3.0 * w / 4.0, 0.0], [7.0 * w / 8.0, w], sep, "two-lines goals")?;
            (a, g)
        }
        Scenario::Text(word) => {
            let g = text_goals(&mut rng, n, word, params)?;
            let a = in_box(&mut rng, n, [0.0, 0.0], [w, w], sep, "text agents")?;
            (a, g)
        }
        Scenario::File(path) => {
            let (a, g) = read_layout(path)?;
            if a.len() != g.len() {
                return Err(MastError::Config(format!(
                    "layout has {} agents but {} goals",
                    a.len(),
                    g.len()
                )));
            }
            (a, g)
        }
    };
    Ok(DanWorld::new(params.clone(), agents, goals))
}
