//! Assignment-based experts: the centralized LSAP policy and the
//! decentralized k-hop Hungarian policy (DHBA).

use super::{DanWorld, Velocity};
use crate::comm::{distance_sq, CommGraph};
use crate::error::Result;
use crate::lsap::{lsap_assign, lsap_rectangular};
use crate::posenc::Position;

/// Velocity toward `goal` at `u_max`, slowed so one step does not overshoot.
pub fn step_toward(p: Position, goal: Position, u_max: f64, dt: f64) -> Velocity {
    let (dx, dy) = (goal[0] - p[0], goal[1] - p[1]);
    let dist = dx.hypot(dy);
    if dist == 0.0 {
        return [0.0, 0.0];
    }
    let speed = u_max.min(dist / dt);
    [dx / dist * speed, dy / dist * speed]
}

fn cost_rows(world: &DanWorld, agents: &[usize], goals: &[usize]) -> Vec<Vec<f64>> {
    agents
        .iter()
        .map(|&i| {
            goals
                .iter()
                .map(|&j| distance_sq(world.positions[i], world.goals[j]))
                .collect()
        })
        .collect()
}

/// Optimal squared-distance assignment recomputed from the current state;
/// every agent heads for its goal.
pub fn lsap_policy(world: &DanWorld) -> Result<Vec<Velocity>> {
    let n = world.num_agents();
    let all: Vec<usize> = (0..world.goals.len()).collect();
    let agents: Vec<usize> = (0..n).collect();
    let cost = cost_rows(world, &agents, &all);
    let goals: Vec<Option<usize>> = if n == all.len() {
        lsap_assign(&cost)?.cols.into_iter().map(Some).collect()
    } else {
        lsap_rectangular(&cost, all.len())?
    };
    Ok(goals
        .iter()
        .enumerate()
        .map(|(i, g)| match g {
            Some(j) => step_toward(world.positions[i], world.goals[*j], world.params.u_max, world.params.dt),
            None => [0.0, 0.0],
        })
        .collect())
}

/// The goal each agent picks when it solves the assignment over its
/// `hops`-hop in-neighborhood and the goals those agents observe. `None`
/// when the local problem leaves it without a goal.
pub fn dhba_assignment(world: &DanWorld, graph: &CommGraph, hops: usize) -> Result<Vec<Option<usize>>> {
    let n = world.num_agents();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let agents = graph.in_neighborhood(i, hops);
        let mut goals: Vec<usize> = agents.iter().flat_map(|&k| world.observed_goals(k)).collect();
        goals.sort_unstable();
        goals.dedup();
        if goals.is_empty() {
            out.push(None);
            continue;
        }
        let cost = cost_rows(world, &agents, &goals);
        let picks = lsap_rectangular(&cost, goals.len())?;
        let own = agents.iter().position(|&k| k == i).expect("neighborhood contains self");
        out.push(picks[own].map(|j| goals[j]));
    }
    Ok(out)
}

pub fn dhba_policy(world: &DanWorld, graph: &CommGraph, hops: usize) -> Result<Vec<Velocity>> {
    let picks = dhba_assignment(world, graph, hops)?;
    Ok(picks
        .iter()
        .enumerate()
        .map(|(i, g)| match g {
            Some(j) => step_toward(world.positions[i], world.goals[*j], world.params.u_max, world.params.dt),
            None => [0.0, 0.0],
        })
        .collect())
}

/// `Σ_i ‖p_i − g_{pick(i)}‖²` over agents that picked a goal.
pub fn realized_cost(world: &DanWorld, picks: &[Option<usize>]) -> f64 {
    picks
        .iter()
        .enumerate()
        .filter_map(|(i, g)| g.map(|j| distance_sq(world.positions[i], world.goals[j])))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dan::DanParams;

    fn world(positions: Vec<Position>, goals: Vec<Position>) -> DanWorld {
        DanWorld::new(DanParams::default(), positions, goals)
    }

    #[test]
    fn no_overshoot() {
        assert_eq!(step_toward([0.0, 0.0], [3.0, 0.0], 5.0, 1.0), [3.0, 0.0]);
        assert_eq!(step_toward([0.0, 0.0], [0.0, 30.0], 5.0, 1.0), [0.0, 5.0]);
        assert_eq!(step_toward([1.0, 1.0], [1.0, 1.0], 5.0, 1.0), [0.0, 0.0]);
    }

    #[test]
    fn lsap_swapped_pairs() {
        let w = world(vec![[0.0, 0.0], [100.0, 0.0]], vec![[100.0, 10.0], [0.0, 10.0]]);
        let u = lsap_policy(&w).unwrap();
        assert_eq!(u[0], [0.0, 5.0]);
        let w = world(vec![[0.0, 0.0], [100.0, 0.0]], vec![[90.0, 0.0], [10.0, 0.0]]);
        let u = lsap_policy(&w).unwrap();
        assert_eq!(u, vec![[5.0, 0.0], [-5.0, 0.0]]);
    }

    #[test]
    fn agent_on_its_goal_stays() {
        let w = world(vec![[0.0, 0.0], [50.0, 0.0]], vec![[0.0, 0.0], [50.0, 30.0]]);
        assert_eq!(lsap_policy(&w).unwrap()[0], [0.0, 0.0]);
    }

    #[test]
    fn dhba_zero_hops_goes_to_nearest() {
        let w = world(
            vec![[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [30.0, 0.0]],
            vec![[0.0, 40.0], [10.0, 50.0], [20.0, 60.0], [30.0, 70.0]],
        );
        let g = CommGraph::from_edges(4, &[]);
        let picks = dhba_assignment(&w, &g, 0).unwrap();
        for (i, pick) in picks.iter().enumerate() {
            assert_eq!(*pick, Some(w.observed_goals(i)[0]));
        }
    }

    #[test]
    fn dhba_unassigned_agent_waits() {
        // All five agents hear each other but only observe goals 0, 1 and 2.
        let w = world(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]],
            vec![[0.0, 10.0], [1.0, 10.0], [2.0, 10.0], [500.0, 500.0], [600.0, 600.0]],
        );
        let all: Vec<(usize, usize)> = (0..5).flat_map(|a| (0..5).map(move |b| (a, b))).collect();
        let g = CommGraph::from_edges(5, &all);
        let picks = dhba_assignment(&w, &g, 1).unwrap();
        assert_eq!(picks.iter().filter(|p| p.is_none()).count(), 2);
        let u = dhba_policy(&w, &g, 1).unwrap();
        assert!(u.contains(&[0.0, 0.0]));
    }
}
