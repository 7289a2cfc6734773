//! Coverage control: agents spread over an importance field they discover
//! through a limited field of view.

mod idf;
mod voronoi;

pub use idf::{build_idf, cell_center, Feature, Idf};
pub use voronoi::{for_each_owner, for_each_owner_sparse, separate_coincident, voronoi_cells};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::comm::{distance, distance_sq, CommGraph, GraphKind};
use crate::dan::{step_toward, Velocity};
use crate::error::{MastError, Result};
use crate::kernel::{stream, Array};
use crate::posenc::Position;

/// Number of observation channels.
pub const CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageParams {
    /// Side of the square environment in meters (= cells).
    pub env_size: usize,
    pub agents: usize,
    pub features: usize,
    pub sigma: f64,
    pub comm_radius: f64,
    /// Side of the square sensor footprint.
    pub sensor_fov: usize,
    /// Side of the agent-centered local map.
    pub local_map: usize,
    /// Side of the downsampled observation channels.
    pub obs_res: usize,
    pub u_max: f64,
    pub dt: f64,
    /// Weight of unexplored cells when non-clairvoyant CVT picks centroids.
    pub exploration_prior: f64,
    pub steps: usize,
}

impl Default for CoverageParams {
    fn default() -> Self {
        CoverageParams {
            env_size: 1024,
            agents: 32,
            features: 32,
            sigma: 40.0,
            comm_radius: 256.0,
            sensor_fov: 64,
            local_map: 256,
            obs_res: 32,
            u_max: 5.0,
            dt: 1.0,
            exploration_prior: 1e-3,
            steps: 600,
        }
    }
}

impl CoverageParams {
    pub fn validate(&self) -> Result<()> {
        if self.local_map == 0 || self.obs_res == 0 || !self.local_map.is_multiple_of(self.obs_res) {
            return Err(MastError::Config(format!(
                "local map side {} must be a positive multiple of the observation side {}",
                self.local_map, self.obs_res
            )));
        }
        if self.env_size == 0 || !(self.sigma > 0.0) || !(self.u_max > 0.0) || !(self.dt > 0.0) {
            return Err(MastError::Config("coverage sizes, sigma, u_max and dt must be positive".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        CHANNELS * self.obs_res * self.obs_res
    }
}

/// `J = Σ_cells ‖p_owner − q‖² Φ(q)`, accumulated per agent over its Voronoi
/// cell and then summed over agents.
pub fn coverage_cost(positions: &[Position], idf: &Idf) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let positions = separate_coincident(positions);
    let size = idf.size();
    let values = idf.values();
    let mut per_agent = vec![0.0; positions.len()];
    for_each_owner_sparse(&positions, size, idf.support(), |c, o| {
        per_agent[o] += distance_sq(positions[o], cell_center(size, c)) * values[c];
    });
    per_agent.iter().sum()
}

/// `J = Σ_cells min_i ‖p_i − q‖² Φ(q)` evaluated cell by cell over all agents.
pub fn coverage_cost_direct(positions: &[Position], idf: &Idf) -> f64 {
    let size = idf.size();
    let mut total = 0.0;
    for (c, &phi) in idf.values().iter().enumerate() {
        if phi == 0.0 {
            continue;
        }
        let q = cell_center(size, c);
        let best = positions
            .iter()
            .map(|&p| distance_sq(p, q))
            .fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            total += best * phi;
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvtVariant {
    /// Knows the whole field.
    Clairvoyant,
    /// Knows every position and everything the team has sensed.
    Centralized,
    /// Knows neighbors within communication range and its own sensed map.
    Decentralized,
}

impl FromStr for CvtVariant {
    type Err = MastError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cvt-clairvoyant" | "clairvoyant" => Ok(CvtVariant::Clairvoyant),
            "cvt-centralized" | "centralized" => Ok(CvtVariant::Centralized),
            "cvt-decentralized" | "decentralized" => Ok(CvtVariant::Decentralized),
            _ => Err(MastError::Parse(format!("unknown CVT variant `{s}`"))),
        }
    }
}

impl fmt::Display for CvtVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CvtVariant::Clairvoyant => "cvt-clairvoyant",
            CvtVariant::Centralized => "cvt-centralized",
            CvtVariant::Decentralized => "cvt-decentralized",
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct CellMoments {
    mass: f64,
    mx: f64,
    my: f64,
    count: f64,
    gx: f64,
    gy: f64,
}

impl CellMoments {
    fn add_mass(&mut self, q: Position, w: f64) {
        self.mass += w;
        self.mx += w * q[0];
        self.my += w * q[1];
    }

    fn add_cell(&mut self, q: Position) {
        self.count += 1.0;
        self.gx += q[0];
        self.gy += q[1];
    }

    fn target(&self) -> Option<Position> {
        if self.mass > 0.0 {
            Some([self.mx / self.mass, self.my / self.mass])
        } else if self.count > 0.0 {
            Some([self.gx / self.count, self.gy / self.count])
        } else {
            None
        }
    }
}

/// Four agent-centered channels at `obs_res × obs_res`, channel-major:
/// sensed importance, out-of-bounds indicator, neighbor x and y offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation4ch {
    pub res: usize,
    pub data: Vec<f64>,
}

impl Observation4ch {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.res * self.res;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> f64 {
        self.channel(c)[row * self.res + col]
    }
}

#[derive(Clone, Debug)]
pub struct CoverageState {
    pub params: CoverageParams,
    pub idf: Arc<Idf>,
    pub positions: Vec<Position>,
    /// Union of every agent's sensed cells.
    pub team_explored: Vec<bool>,
    /// Cells each agent has sensed itself.
    pub agent_explored: Vec<Vec<bool>>,
    pub t: f64,
    pub initial_cost: f64,
}

impl CoverageState {
    pub fn new(params: CoverageParams, idf: Arc<Idf>, positions: Vec<Position>) -> Result<Self> {
        params.validate()?;
        if idf.size() != params.env_size {
            return Err(MastError::Config(format!(
                "field covers {} m but the environment is {} m",
                idf.size(),
                params.env_size
            )));
        }
        let cells = params.env_size * params.env_size;
        let n = positions.len();
        let initial_cost = coverage_cost(&positions, &idf);
        let mut state = CoverageState {
            params,
            idf,
            positions,
            team_explored: vec![false; cells],
            agent_explored: vec![vec![false; cells]; n],
            t: 0.0,
            initial_cost,
        };
        state.sense();
        Ok(state)
    }

    /// A fresh field and uniformly placed agents, both drawn from `seed`.
    pub fn random(params: CoverageParams, seed: u64) -> Result<Self> {
        let idf = build_idf(seed, params.env_size, params.features, params.sigma)?;
        let mut rng = stream(seed, 0xc0de);
        let extent = params.env_size as f64;
        let positions = (0..params.agents)
            .map(|_| [rng.gen_range(0.0..extent), rng.gen_range(0.0..extent)])
            .collect();
        CoverageState::new(params, Arc::new(idf), positions)
    }

    pub fn num_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn cost(&self) -> f64 {
        coverage_cost(&self.positions, &self.idf)
    }

    /// `J(t)/J(0)`; 0 when the initial cost is 0.
    pub fn normalized_cost(&self) -> f64 {
        if self.initial_cost > 0.0 {
            self.cost() / self.initial_cost
        } else {
            0.0
        }
    }

    /// Cell range `[lo, hi)` along one axis of a square of side `side`
    /// centered on `c`, clipped to the environment.
    fn centered_range(&self, c: f64, side: usize) -> (usize, usize) {
        let half = side as f64 / 2.0;
        let size = self.params.env_size as f64;
        let lo = (c - half - 0.5).ceil().clamp(0.0, size) as usize;
        let hi = ((c + half - 0.5).floor() + 1.0).clamp(0.0, size) as usize;
        (lo, hi.max(lo))
    }

    fn sense(&mut self) {
        let size = self.params.env_size;
        for i in 0..self.positions.len() {
            let p = self.positions[i];
            let (x0, x1) = self.centered_range(p[0], self.params.sensor_fov);
            let (y0, y1) = self.centered_range(p[1], self.params.sensor_fov);
            for y in y0..y1 {
                for x in x0..x1 {
                    self.team_explored[y * size + x] = true;
                    self.agent_explored[i][y * size + x] = true;
                }
            }
        }
    }

    pub fn step(&mut self, u: &[Velocity]) -> Result<()> {
        if u.len() != self.positions.len() {
            return Err(MastError::Shape {
                op: "CoverageState::step",
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
        for (p, v) in self.positions.iter_mut().zip(u) {
            p[0] += v[0] * self.params.dt;
            p[1] += v[1] * self.params.dt;
        }
        self.t += self.params.dt;
        self.sense();
        Ok(())
    }

    pub fn comm_graph(&self) -> CommGraph {
        CommGraph::build(&self.positions, GraphKind::Disk(self.params.comm_radius))
    }

    fn velocity_to(&self, i: usize, target: Option<Position>) -> Velocity {
        match target {
            Some(c) => step_toward(self.positions[i], c, self.params.u_max, self.params.dt),
            None => [0.0, 0.0],
        }
    }

    /// Lloyd-style move toward the weighted centroid of each agent's cell.
    pub fn cvt_policy(&self, variant: CvtVariant) -> Vec<Velocity> {
        match variant {
            CvtVariant::Clairvoyant => self.clairvoyant_cvt(),
            CvtVariant::Centralized => self.centralized_cvt(),
            CvtVariant::Decentralized => (0..self.num_agents()).map(|i| self.decentralized_cvt(i)).collect(),
        }
    }

    fn clairvoyant_cvt(&self) -> Vec<Velocity> {
        let positions = separate_coincident(&self.positions);
        let size = self.params.env_size;
        let values = self.idf.values();
        let mut moments = vec![CellMoments::default(); positions.len()];
        for_each_owner_sparse(&positions, size, self.idf.support(), |c, o| {
            moments[o].add_mass(cell_center(size, c), values[c]);
        });
        if moments.iter().any(|m| m.mass == 0.0) {
            for_each_owner(&positions, size, (0, 0, size, size), |c, o| {
                moments[o].add_cell(cell_center(size, c));
            });
        }
        (0..positions.len()).map(|i| self.velocity_to(i, moments[i].target())).collect()
    }

    fn centralized_cvt(&self) -> Vec<Velocity> {
        let positions = separate_coincident(&self.positions);
        let size = self.params.env_size;
        let values = self.idf.values();
        let prior = self.params.exploration_prior;
        let mut moments = vec![CellMoments::default(); positions.len()];
        for_each_owner(&positions, size, (0, 0, size, size), |c, o| {
            let q = cell_center(size, c);
            let w = if self.team_explored[c] { values[c] } else { prior };
            moments[o].add_mass(q, w);
            moments[o].add_cell(q);
        });
        (0..positions.len()).map(|i| self.velocity_to(i, moments[i].target())).collect()
    }

    /// Agents within communication range of `i`, ascending, including `i`.
    pub fn neighborhood(&self, i: usize) -> Vec<usize> {
        let p = self.positions[i];
        (0..self.num_agents())
            .filter(|&j| j == i || distance(p, self.positions[j]) < self.params.comm_radius)
            .collect()
    }

    fn decentralized_cvt(&self, i: usize) -> Velocity {
        let local = self.neighborhood(i);
        let positions = separate_coincident(&local.iter().map(|&j| self.positions[j]).collect::<Vec<_>>());
        let me = local.iter().position(|&j| j == i).unwrap();
        let size = self.params.env_size;
        let values = self.idf.values();
        let explored = &self.agent_explored[i];
        let prior = self.params.exploration_prior;
        let p = self.positions[i];
        let (x0, x1) = self.centered_range(p[0], self.params.local_map);
        let (y0, y1) = self.centered_range(p[1], self.params.local_map);
        let mut m = CellMoments::default();
        for_each_owner(&positions, size, (x0, y0, x1, y1), |c, o| {
            if o == me {
                let q = cell_center(size, c);
                m.add_mass(q, if explored[c] { values[c] } else { prior });
                m.add_cell(q);
            }
        });
        self.velocity_to(i, m.target())
    }

    /// Agent-centered channels for agent `i`.
    pub fn observe(&self, i: usize) -> Observation4ch {
        let prm = &self.params;
        let size = prm.env_size as i64;
        let side = prm.local_map;
        let res = prm.obs_res;
        let block = side / res;
        let p = self.positions[i];
        let ox = p[0].floor() as i64 - (side / 2) as i64;
        let oy = p[1].floor() as i64 - (side / 2) as i64;
        let explored = &self.agent_explored[i];
        let values = self.idf.values();
        let n = res * res;
        let mut data = vec![0.0; CHANNELS * n];
        let inv = 1.0 / (block * block) as f64;
        for r in 0..res {
            for c in 0..res {
                let mut phi = 0.0;
                let mut oob = 0.0;
                for b in 0..block {
                    let gy = oy + (r * block + b) as i64;
                    for a in 0..block {
                        let gx = ox + (c * block + a) as i64;
                        if gx < 0 || gy < 0 || gx >= size || gy >= size {
                            oob = 1.0;
                            continue;
                        }
                        let idx = (gy * size + gx) as usize;
                        if explored[idx] {
                            phi += values[idx];
                        }
                    }
                }
                data[r * res + c] = phi * inv;
                data[n + r * res + c] = oob;
            }
        }
        let rc = prm.comm_radius;
        let mut taken = vec![false; n];
        for j in 0..self.num_agents() {
            if j == i {
                continue;
            }
            let rel = [self.positions[j][0] - p[0], self.positions[j][1] - p[1]];
            if rel[0].hypot(rel[1]) >= rc {
                continue;
            }
            let bin = |v: f64| (((v + rc) / (2.0 * rc) * res as f64).floor() as i64).clamp(0, res as i64 - 1) as usize;
            let cell = bin(rel[1]) * res + bin(rel[0]);
            if !taken[cell] {
                taken[cell] = true;
                data[2 * n + cell] = rel[0] / rc;
                data[3 * n + cell] = rel[1] / rc;
            }
        }
        Observation4ch { res, data }
    }

    /// Flattened observations of every agent, one row each.
    pub fn network_inputs(&self) -> Result<Array> {
        let n = self.num_agents();
        let dim = self.params.obs_dim();
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            data.extend(self.observe(i).data);
        }
        Array::new(vec![n, dim], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(env: usize) -> CoverageParams {
        CoverageParams {
            env_size: env,
            agents: 6,
            features: 6,
            sigma: 12.0,
            comm_radius: 64.0,
            sensor_fov: 16,
            local_map: 64,
            obs_res: 8,
            steps: 100,
            ..CoverageParams::default()
        }
    }

    fn impulse(size: usize, x: usize, y: usize) -> Idf {
        // A feature so narrow only its own cell is inside the truncation disk.
        Idf::from_features(
            size,
            vec![Feature {
                center: [x as f64 + 0.5, y as f64 + 0.5],
                amplitude: 1.0,
                sigma: 0.2,
            }],
        )
        .unwrap()
    }

    #[test]
    fn zero_field_zero_cost() {
        let idf = build_idf(1, 64, 0, 5.0).unwrap();
        assert_eq!(coverage_cost(&[[3.0, 4.0], [50.0, 2.0]], &idf), 0.0);
    }

    #[test]
    fn unit_impulse_at_ten_meters() {
        let idf = impulse(64, 20, 20);
        assert_eq!(idf.support().len(), 1);
        let cost = coverage_cost(&[[30.5, 20.5]], &idf);
        assert!((cost - 100.0).abs() < 1e-12);
    }

    #[test]
    fn direct_and_voronoi_costs_agree() {
        let mut rng = stream(51, 0);
        for s in 0..5 {
            let idf = build_idf(s, 200, 5, 15.0).unwrap();
            let pts: Vec<Position> = (0..7).map(|_| [rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0)]).collect();
            let a = coverage_cost(&pts, &idf);
            let b = coverage_cost_direct(&pts, &idf);
            assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn cost_is_invariant_to_whole_cell_shifts() {
        let base = vec![
            Feature { center: [30.3, 40.7], amplitude: 0.9, sigma: 8.0 },
            Feature { center: [60.1, 22.2], amplitude: 0.7, sigma: 5.0 },
        ];
        let pts = [[25.0, 35.5], [70.25, 30.0]];
        let a = Idf::from_features(128, base.clone()).unwrap();
        let shift = [17.0, 9.0];
        let moved: Vec<Feature> = base
            .iter()
            .map(|f| Feature { center: [f.center[0] + shift[0], f.center[1] + shift[1]], ..f.clone() })
            .collect();
        let b = Idf::from_features(128, moved).unwrap();
        let moved_pts: Vec<Position> = pts.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect();
        let (ja, jb) = (coverage_cost(&pts, &a), coverage_cost(&moved_pts, &b));
        assert!((ja - jb).abs() <= 1e-6 * ja, "{ja} vs {jb}");
    }

    #[test]
    fn clairvoyant_single_agent_heads_to_feature() {
        let idf = Idf::from_features(
            128,
            vec![Feature { center: [90.5, 60.5], amplitude: 1.0, sigma: 6.0 }],
        )
        .unwrap();
        let s = CoverageState::new(small(128), Arc::new(idf), vec![[20.0, 60.5]]).unwrap();
        let u = s.cvt_policy(CvtVariant::Clairvoyant);
        assert!((u[0][0] - 5.0).abs() < 1e-6 && u[0][1].abs() < 1e-6, "{:?}", u[0]);
    }

    #[test]
    fn agents_at_centroids_stay_put() {
        let idf = impulse(64, 10, 10);
        let s = CoverageState::new(small(64), Arc::new(idf), vec![[10.5, 10.5]]).unwrap();
        assert_eq!(s.cvt_policy(CvtVariant::Clairvoyant), vec![[0.0, 0.0]]);
    }

    #[test]
    fn clairvoyant_descent_is_monotone() {
        let mut s = CoverageState::random(small(160), 3).unwrap();
        let mut prev = s.normalized_cost();
        for _ in 0..80 {
            let u = s.cvt_policy(CvtVariant::Clairvoyant);
            s.step(&u).unwrap();
            let now = s.normalized_cost();
            assert!(now <= prev + 1e-9, "{now} > {prev}");
            prev = now;
        }
        assert!(prev < 1.0);
    }

    #[test]
    fn explored_mask_grows_monotonically() {
        let mut s = CoverageState::random(small(160), 4).unwrap();
        let mut before = s.team_explored.iter().filter(|&&b| b).count();
        assert!(before > 0);
        for _ in 0..10 {
            let u = s.cvt_policy(CvtVariant::Decentralized);
            let snapshot = s.team_explored.clone();
            s.step(&u).unwrap();
            assert!(snapshot.iter().zip(&s.team_explored).all(|(a, b)| !a || *b));
            let now = s.team_explored.iter().filter(|&&b| b).count();
            assert!(now >= before);
            before = now;
        }
    }

    #[test]
    fn sensor_footprint_is_square() {
        let idf = build_idf(1, 128, 0, 5.0).unwrap();
        let s = CoverageState::new(small(128), Arc::new(idf), vec![[64.0, 64.0]]).unwrap();
        assert_eq!(s.team_explored.iter().filter(|&&b| b).count(), 16 * 16);
        assert!(s.team_explored[56 * 128 + 56] && !s.team_explored[55 * 128 + 56]);
    }

    #[test]
    fn observation_channels() {
        let idf = build_idf(2, 256, 4, 10.0).unwrap();
        let params = CoverageParams { env_size: 256, ..small(256) };
        let s = CoverageState::new(params.clone(), Arc::new(idf.clone()), vec![[128.0, 128.0], [150.0, 100.0]]).unwrap();
        let o = s.observe(0);
        assert!(o.channel(1).iter().all(|&b| b == 0.0));
        let rel = [22.0 / 64.0, -28.0 / 64.0];
        let filled: Vec<usize> = (0..64).filter(|&k| o.channel(2)[k] != 0.0).collect();
        assert_eq!(filled.len(), 1);
        assert_eq!(o.channel(2)[filled[0]], rel[0]);
        assert_eq!(o.channel(3)[filled[0]], rel[1]);
        // Row from y offset −28 → bin 2, column from x offset 22 → bin 5.
        assert_eq!(filled[0], 2 * 8 + 5);
        // An agent near the corner sees out-of-bounds cells.
        let corner = CoverageState::new(params.clone(), Arc::new(idf.clone()), vec![[3.0, 3.0]]).unwrap();
        let oc = corner.observe(0);
        assert_eq!(oc.at(1, 0, 0), 1.0);
        assert_eq!(oc.at(1, 7, 7), 0.0);
        assert!(oc.channel(2).iter().all(|&v| v == 0.0));
        // Unexplored world: zero importance channel.
        let mut blank = s.clone();
        blank.agent_explored[0].iter_mut().for_each(|b| *b = false);
        assert!(blank.observe(0).channel(0).iter().all(|&v| v == 0.0));
        assert_eq!(s.network_inputs().unwrap().shape(), &[2, params.obs_dim()]);
    }

    #[test]
    fn decentralized_ignores_far_agents() {
        let idf = build_idf(5, 256, 3, 10.0).unwrap();
        let params = CoverageParams { env_size: 256, ..small(256) };
        let near = CoverageState::new(params.clone(), Arc::new(idf.clone()), vec![[30.0, 30.0], [230.0, 230.0]]).unwrap();
        let alone = CoverageState::new(params, Arc::new(idf), vec![[30.0, 30.0]]).unwrap();
        let mut alone_copy = alone.clone();
        alone_copy.agent_explored[0] = near.agent_explored[0].clone();
        assert_eq!(near.cvt_policy(CvtVariant::Decentralized)[0], alone_copy.cvt_policy(CvtVariant::Decentralized)[0]);
    }

    #[test]
    fn variant_names() {
        for v in [CvtVariant::Clairvoyant, CvtVariant::Centralized, CvtVariant::Decentralized] {
            assert_eq!(v.to_string().parse::<CvtVariant>().unwrap(), v);
        }
        assert!("cvt-magic".parse::<CvtVariant>().is_err());
    }
}
