//! Decentralized assignment and navigation: N agents must cover N goals.

mod experts;
mod glyphs;
mod scenario;

pub use experts::{dhba_assignment, dhba_policy, lsap_policy, realized_cost, step_toward};
pub use scenario::{init_scenario, Scenario};

use crate::comm::distance_sq;
use crate::error::{MastError, Result};
use crate::kernel::Array;
use crate::posenc::Position;

pub type Velocity = [f64; 2];

/// Width of the per-agent observation vector.
pub const OBS_DIM: usize = 14;
/// Neighbors and goals reported in each observation.
pub const OBS_NEAREST: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct DanParams {
    pub dt: f64,
    pub u_max: f64,
    pub width: f64,
    pub goal_radius: f64,
    pub min_separation: f64,
    pub robot_radius: f64,
    /// Meters per unit when relative positions are fed to a network.
    pub obs_length_scale: f64,
}

impl Default for DanParams {
    fn default() -> Self {
        DanParams {
            dt: 1.0,
            u_max: 5.0,
            width: 1000.0,
            goal_radius: 5.0,
            min_separation: 5.0,
            robot_radius: 2.5,
            obs_length_scale: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DanWorld {
    pub params: DanParams,
    pub positions: Vec<Position>,
    pub goals: Vec<Position>,
    pub prev_u: Vec<Velocity>,
    pub t: f64,
}

/// Indices of the `k` points nearest to `from` (ties by lower index),
/// nearest first, optionally skipping one index.
pub fn nearest(points: &[Position], from: Position, k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (j, &p) in points.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        let d = distance_sq(from, p);
        if best.len() == k && best.last().is_some_and(|&(bd, _)| d >= bd) {
            continue;
        }
        let at = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(at, (d, j));
        best.truncate(k);
    }
    best.into_iter().map(|(_, j)| j).collect()
}

impl DanWorld {
    pub fn new(params: DanParams, positions: Vec<Position>, goals: Vec<Position>) -> Self {
        let n = positions.len();
        DanWorld {
            params,
            positions,
            goals,
            prev_u: vec![[0.0; 2]; n],
            t: 0.0,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.positions.len()
    }

    /// `[previous u; 3 nearest agents − p_i; 3 nearest goals − p_i]`.
    pub fn observe(&self, i: usize) -> Result<[f64; OBS_DIM]> {
        if self.positions.len() <= OBS_NEAREST {
            return Err(MastError::Observation(format!(
                "need at least {} agents, have {}",
                OBS_NEAREST + 1,
                self.positions.len()
            )));
        }
        if self.goals.len() < OBS_NEAREST {
            return Err(MastError::Observation(format!(
                "need at least {OBS_NEAREST} goals, have {}",
                self.goals.len()
            )));
        }
        let p = self.positions[i];
        let mut o = [0.0; OBS_DIM];
        o[0] = self.prev_u[i][0];
        o[1] = self.prev_u[i][1];
        let agents = nearest(&self.positions, p, OBS_NEAREST, Some(i));
        let goals = nearest(&self.goals, p, OBS_NEAREST, None);
        for (s, j) in agents.into_iter().enumerate() {
            o[2 + 2 * s] = self.positions[j][0] - p[0];
            o[3 + 2 * s] = self.positions[j][1] - p[1];
        }
        for (s, j) in goals.into_iter().enumerate() {
            o[8 + 2 * s] = self.goals[j][0] - p[0];
            o[9 + 2 * s] = self.goals[j][1] - p[1];
        }
        Ok(o)
    }

    /// Goals each agent currently observes.
    pub fn observed_goals(&self, i: usize) -> Vec<usize> {
        nearest(&self.goals, self.positions[i], OBS_NEAREST, None)
    }

    /// Observations of all agents, scaled for a network: velocities by
    /// `u_max`, relative positions by `obs_length_scale`.
    pub fn network_inputs(&self) -> Result<Array> {
        let n = self.num_agents();
        let mut data = Vec::with_capacity(n * OBS_DIM);
        for i in 0..n {
            let o = self.observe(i)?;
            data.push(o[0] / self.params.u_max);
            data.push(o[1] / self.params.u_max);
            data.extend(o[2..].iter().map(|v| v / self.params.obs_length_scale));
        }
        Array::new(vec![n, OBS_DIM], data)
    }

    /// Fraction of goals with some agent strictly within `goal_radius`.
    pub fn success_rate(&self) -> f64 {
        if self.goals.is_empty() {
            return 0.0;
        }
        let r2 = self.params.goal_radius * self.params.goal_radius;
        let covered = self
            .goals
            .iter()
            .filter(|&&g| self.positions.iter().any(|&p| distance_sq(p, g) < r2))
            .count();
        covered as f64 / self.goals.len() as f64
    }

    /// Advances positions by `u·dt`. Every speed must respect `u_max`.
    pub fn step(&mut self, u: &[Velocity]) -> Result<()> {
        if u.len() != self.positions.len() {
            return Err(MastError::Shape {
                op: "DanWorld::step",
                lhs: vec![self.positions.len(), 2],
                rhs: vec![u.len(), 2],
            });
        }
        let limit = self.params.u_max * (1.0 + 1e-12);
        for (agent, v) in u.iter().enumerate() {
            let norm = v[0].hypot(v[1]);
            if !(norm <= limit) {
                return Err(MastError::VelocityLimit {
                    agent,
                    norm,
                    u_max: self.params.u_max,
                });
            }
        }
        let dt = self.params.dt;
        for (p, v) in self.positions.iter_mut().zip(u) {
            p[0] += v[0] * dt;
            p[1] += v[1] * dt;
        }
        self.prev_u = u.to_vec();
        self.t += dt;
        Ok(())
    }

    pub fn translated(&self, c: Position) -> DanWorld {
        let shift = |v: &Vec<Position>| v.iter().map(|p| [p[0] + c[0], p[1] + c[1]]).collect();
        DanWorld {
            positions: shift(&self.positions),
            goals: shift(&self.goals),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::stream;
    use rand::Rng;

    fn random_world(n: usize, seed: u64) -> DanWorld {
        let mut rng = stream(seed, 0);
        let mut pt = || [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)];
        let positions = (0..n).map(|_| pt()).collect();
        let goals = (0..n).map(|_| pt()).collect();
        DanWorld::new(DanParams::default(), positions, goals)
    }

    #[test]
    fn agent_on_goal_sees_zero_offset() {
        let mut w = random_world(6, 1);
        w.positions[2] = w.goals[4];
        let o = w.observe(2).unwrap();
        assert!(o[8..].chunks(2).any(|c| c == [0.0, 0.0]));
    }

    #[test]
    fn observations_are_translation_invariant() {
        let w = random_world(8, 2);
        let moved = w.translated([1234.5, -987.25]);
        for i in 0..8 {
            let (a, b) = (w.observe(i).unwrap(), moved.observe(i).unwrap());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn nearest_matches_sort() {
        let w = random_world(10, 3);
        for i in 0..10 {
            let o = w.observe(i).unwrap();
            let p = w.positions[i];
            let mut others: Vec<usize> = (0..10).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                distance_sq(p, w.positions[a])
                    .partial_cmp(&distance_sq(p, w.positions[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for s in 0..3 {
                let j = others[s];
                assert_eq!(o[2 + 2 * s], w.positions[j][0] - p[0]);
                assert_eq!(o[3 + 2 * s], w.positions[j][1] - p[1]);
            }
            let mut goals: Vec<usize> = (0..10).collect();
            goals.sort_by(|&a, &b| {
                distance_sq(p, w.goals[a])
                    .partial_cmp(&distance_sq(p, w.goals[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for s in 0..3 {
                assert_eq!(o[8 + 2 * s], w.goals[goals[s]][0] - p[0]);
            }
        }
    }

    #[test]
    fn nearest_breaks_ties_by_index() {
        let pts = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        assert_eq!(nearest(&pts, [0.0, 0.0], 3, None), vec![0, 1, 2]);
        assert_eq!(nearest(&pts, [0.0, 0.0], 2, Some(0)), vec![1, 2]);
    }

    #[test]
    fn too_few_agents() {
        let w = random_world(3, 4);
        assert!(matches!(w.observe(0), Err(MastError::Observation(_))));
    }

    #[test]
    fn success_rate_examples() {
        let mut w = random_world(5, 5);
        w.positions = w.goals.clone();
        assert_eq!(w.success_rate(), 1.0);
        w.positions = w.goals.iter().map(|g| [g[0] + 1e4, g[1]]).collect();
        assert_eq!(w.success_rate(), 0.0);
        let w = DanWorld::new(
            DanParams::default(),
            vec![[0.0, 0.0], [0.0, 0.0]],
            vec![[1.0, 0.0], [100.0, 0.0]],
        );
        assert_eq!(w.success_rate(), 0.5);
        assert_eq!(w.translated([-77.0, 5.0]).success_rate(), 0.5);
    }

    #[test]
    fn step_examples() {
        let mut w = random_world(4, 6);
        let before = w.positions.clone();
        w.step(&[[0.0; 2]; 4]).unwrap();
        assert_eq!(w.positions, before);
        w.step(&[[5.0, 0.0], [0.0; 2], [0.0; 2], [0.0; 2]]).unwrap();
        assert_eq!(w.positions[0][0], before[0][0] + 5.0);
        assert_eq!(w.t, 2.0);
        let err = w.step(&[[5.0, 0.1], [0.0; 2], [0.0; 2], [0.0; 2]]).unwrap_err();
        assert!(matches!(err, MastError::VelocityLimit { agent: 0, .. }));
    }

    #[test]
    fn halved_step_twice_equals_double_speed_once() {
        let mut a = random_world(4, 7);
        let mut b = a.clone();
        a.params.dt = 0.5;
        a.step(&[[2.0, 1.0]; 4]).unwrap();
        a.step(&[[2.0, 1.0]; 4]).unwrap();
        b.params.dt = 0.5;
        b.step(&[[4.0, 2.0]; 4]).unwrap();
        for (p, q) in a.positions.iter().zip(&b.positions) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }
}
