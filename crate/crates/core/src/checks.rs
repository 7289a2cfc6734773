//! Property suites with independent oracles. Each check reports the largest
//! deviation it saw, whether it passed or not.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::attention::{component_mask, window_mask};
use crate::comm::{distance_sq, CommGraph, Fresh, GraphKind, MessageStore};
use crate::coverage::{build_idf, coverage_cost, coverage_cost_direct, CoverageParams, CoverageState, CvtVariant};
use crate::dan::{dhba_assignment, realized_cost, DanParams, DanWorld};
use crate::error::{MastError, Result};
use crate::kernel::{stream, Array, SimRng, Tape};
use crate::lsap::lsap_assign;
use crate::net::{Mast, MastConfig};
use crate::posenc::{PosEncKind, Position};
use crate::rollout::decentralized_forward;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub note: String,
}

impl CheckOutcome {
    fn within(name: impl Into<String>, deviation: f64, tolerance: f64, note: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            deviation,
            tolerance,
            passed: deviation <= tolerance,
            note: note.into(),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<34} max deviation {:.3e} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.deviation,
            self.tolerance
        )?;
        if !self.note.is_empty() {
            write!(f, "  {}", self.note)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Equivariance,
    Gradients,
    Oracles,
}

impl FromStr for Suite {
    type Err = MastError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equivariance" => Ok(Suite::Equivariance),
            "gradients" => Ok(Suite::Gradients),
            "oracles" => Ok(Suite::Oracles),
            _ => Err(MastError::Parse(format!("unknown suite `{s}` (equivariance|gradients|oracles)"))),
        }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckOutcome>> {
    match suite {
        Suite::Equivariance => Ok(vec![
            shift_equivariance(&[PosEncKind::RopeGeometric, PosEncKind::RopeLinear], 100, seed)?,
            permutation_equivariance(100, seed)?,
            keystone_equivalence(20, seed)?,
            dan_translation_invariance(20, seed)?,
        ]),
        Suite::Gradients => PosEncKind::ALL_ENCODINGS
            .iter()
            .map(|&k| gradient_check(k, seed))
            .collect(),
        Suite::Oracles => {
            let mut out = vec![hungarian_oracle(1000, seed)?, coverage_dual(50, seed)?, knn_oracle(50, seed)?];
            out.extend(dhba_convergence(20, seed)?);
            Ok(out)
        }
    }
}

fn random_array(rng: &mut SimRng, rows: usize, cols: usize) -> Array {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Array::new(vec![rows, cols], data).expect("shape matches data")
}

fn random_positions(rng: &mut SimRng, n: usize, extent: f64) -> Vec<Position> {
    (0..n).map(|_| [rng.gen_range(0.0..extent), rng.gen_range(0.0..extent)]).collect()
}

fn wide_model(posenc: PosEncKind, window_radius: f64, seed: u64) -> Result<Mast> {
    let cfg = MastConfig {
        layers: 4,
        heads: 4,
        head_dim: 16,
        posenc,
        window_radius,
        base_wavelength: 1000.0,
        ..MastConfig::default()
    };
    Mast::init(cfg, seed)
}

/// Translating every position by one offset leaves the forward pass unchanged.
pub fn shift_equivariance(kinds: &[PosEncKind], trials: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 0xe001);
    let mut worst: f64 = 0.0;
    for (ki, &kind) in kinds.iter().enumerate() {
        let model = wide_model(kind, 400.0, seed.wrapping_add(ki as u64))?;
        for _ in 0..trials {
            let n = rng.gen_range(2..=16);
            let x = random_array(&mut rng, n, model.cfg.model_dim());
            let p = random_positions(&mut rng, n, 1000.0);
            let c = [rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)];
            let q: Vec<Position> = p.iter().map(|v| [v[0] + c[0], v[1] + c[1]]).collect();
            let a = model.forward(&x, &p, &window_mask(&p, model.cfg.window_radius))?;
            let b = model.forward(&x, &q, &window_mask(&q, model.cfg.window_radius))?;
            worst = worst.max(a.max_abs_diff(&b));
        }
    }
    let names: Vec<String> = kinds.iter().map(ToString::to_string).collect();
    Ok(CheckOutcome::within(
        "shift equivariance",
        worst,
        1e-9,
        format!("{} trials each, {}", trials, names.join("/")),
    ))
}

/// Reordering agents reorders the outputs the same way.
pub fn permutation_equivariance(trials: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 0xe002);
    let mut worst: f64 = 0.0;
    let models = [
        wide_model(PosEncKind::RopeGeometric, 400.0, seed)?,
        wide_model(PosEncKind::RopeLinear, 400.0, seed + 1)?,
    ];
    for t in 0..trials {
        let model = &models[t % 2];
        let n = rng.gen_range(2..=16);
        let x = random_array(&mut rng, n, model.cfg.model_dim());
        let p = random_positions(&mut rng, n, 1000.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let y = model.forward(&x, &p, &window_mask(&p, model.cfg.window_radius))?;
        let xp = x.select_rows(&perm);
        let pp: Vec<Position> = perm.iter().map(|&i| p[i]).collect();
        let yp = model.forward(&xp, &pp, &window_mask(&pp, model.cfg.window_radius))?;
        worst = worst.max(yp.max_abs_diff(&y.select_rows(&perm)));
    }
    Ok(CheckOutcome::within(
        "permutation equivariance",
        worst,
        1e-9,
        format!("{trials} permutations"),
    ))
}

/// One masked forward over everyone equals every agent running the network
/// on its own fully propagated message store.
pub fn keystone_equivalence(graphs: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 0xe003);
    let mut worst: f64 = 0.0;
    let mut disconnected = 0;
    for g in 0..graphs {
        let kind = if g % 2 == 0 { PosEncKind::RopeGeometric } else { PosEncKind::RopeLinear };
        let window = if g % 3 == 0 { f64::INFINITY } else { rng.gen_range(150.0..600.0) };
        let model = wide_model(kind, window, seed.wrapping_add(g as u64))?;
        let n = rng.gen_range(3..=24);
        let p = random_positions(&mut rng, n, 1000.0);
        let graph = CommGraph::build(&p, GraphKind::Disk(rng.gen_range(200.0..800.0)));
        if graph.components().iter().any(|&c| c != 0) {
            disconnected += 1;
        }
        let x = random_array(&mut rng, n, model.cfg.model_dim());
        let central = model.forward(&x, &p, &window_mask(&p, window).and(&component_mask(&graph)))?;
        let fresh: Vec<Fresh> = (0..n)
            .map(|i| Fresh {
                x: Arc::new(x.row(i).to_vec()),
                p: p[i],
                t: 0.0,
            })
            .collect();
        let mut store = MessageStore::new(n);
        store.propagate_fully(&graph, &fresh);
        let local = decentralized_forward(&model, &store)?;
        worst = worst.max(central.max_abs_diff(&local));
    }
    Ok(CheckOutcome::within(
        "decentralized equivalence",
        worst,
        1e-9,
        format!("{graphs} disk graphs, {disconnected} disconnected"),
    ))
}

/// Moving agents and goals together leaves the velocities of an RoPE policy
/// unchanged.
pub fn dan_translation_invariance(trials: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 0xe004);
    let mut worst: f64 = 0.0;
    let model = wide_model(PosEncKind::RopeGeometric, 300.0, seed)?;
    for _ in 0..trials {
        let n = rng.gen_range(4..=12);
        let params = DanParams::default();
        let mut w = DanWorld::new(params, random_positions(&mut rng, n, 1000.0), random_positions(&mut rng, n, 1000.0));
        w.prev_u = (0..n).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let c = [rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)];
        let v = w.translated(c);
        let act = |w: &DanWorld| -> Result<Array> {
            let g = CommGraph::build(&w.positions, GraphKind::Knn(3));
            model.act(&w.network_inputs()?, &w.positions, &model.mask(&w.positions, Some(&g)))
        };
        worst = worst.max(act(&w)?.max_abs_diff(&act(&v)?));
    }
    Ok(CheckOutcome::within(
        "policy translation invariance",
        worst,
        1e-9,
        format!("{trials} worlds"),
    ))
}

/// Analytic gradient of every parameter against central differences, on
/// the whole observation-to-velocity network with an MSE loss.
pub fn gradient_check(posenc: PosEncKind, seed: u64) -> Result<CheckOutcome> {
    let cfg = MastConfig {
        layers: 2,
        heads: 2,
        head_dim: 8,
        posenc,
        window_radius: 900.0,
        base_wavelength: 1000.0,
        ..MastConfig::default()
    };
    let mut rng = stream(seed, 0x9d00 + posenc as u64);
    let mut model = Mast::init(cfg, seed)?;
    let n = 4;
    let obs = random_array(&mut rng, n, model.cfg.obs_dim);
    let p = random_positions(&mut rng, n, 1000.0);
    let target = random_array(&mut rng, n, 2);
    let mask = model.mask(&p, None);
    let loss_of = |m: &Mast| -> Result<f64> {
        let u = m.act(&obs, &p, &mask)?;
        Ok(u.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64)
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let u = model.record_policy(&mut tape, &bound, &obs, &p, &mask)?;
    let loss = tape.mse(u, &target)?;
    let mut grads = tape.backward(loss);
    let analytic: Vec<(String, Array)> = bound.iter().map(|(k, &v)| (k.clone(), grads.take(v))).collect();

    // Central differences at h = 1e-4; an element that disagrees is probed
    // again at 1e-6 in case the wider stencil straddled a leaky-ReLU kink.
    let mut central = |name: &str, e: usize, h: f64| -> Result<f64> {
        let orig = model.params[name].data()[e];
        model.params[name].data_mut()[e] = orig + h;
        let up = loss_of(&model);
        model.params[name].data_mut()[e] = orig - h;
        let down = loss_of(&model);
        model.params[name].data_mut()[e] = orig;
        Ok((up? - down?) / (2.0 * h))
    };
    let rel_err = |a: f64, n: f64| {
        let diff = (a - n).abs();
        if diff <= 1e-9 {
            0.0
        } else {
            diff / a.abs().max(n.abs())
        }
    };
    let mut worst: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut worst_name = String::from("-");
    let mut checked = 0;
    let mut reprobed = 0;
    for (name, g) in &analytic {
        for e in 0..g.len() {
            let a = g.data()[e];
            let mut numeric = central(name, e, 1e-4)?;
            let mut rel = rel_err(a, numeric);
            if rel > 1e-4 {
                reprobed += 1;
                numeric = central(name, e, 1e-6)?;
                rel = rel.min(rel_err(a, numeric));
            }
            worst_abs = worst_abs.max((a - numeric).abs());
            if rel > worst {
                worst = rel;
                worst_name = format!("{name}[{e}]");
            }
            checked += 1;
        }
    }
    Ok(CheckOutcome::within(
        format!("gradients {posenc}"),
        worst,
        1e-4,
        format!("{checked} parameters, worst {worst_name}, max abs {worst_abs:.1e}, {reprobed} re-probed"),
    ))
}

fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
    best
}

/// Hungarian optimum against exhaustive search over permutations. Costs are
/// small integers so every sum is exact.
pub fn hungarian_oracle(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 0x0a01);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(1..=8);
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(0..1000) as f64).collect())
            .collect();
        let got = lsap_assign(&cost)?;
        let mut cols = got.cols.clone();
        cols.sort_unstable();
        if cols != (0..n).collect::<Vec<_>>() {
            return Err(MastError::Config("Hungarian returned a non-permutation".into()));
        }
        worst = worst.max((got.total - brute_force_min(&cost)).abs());
    }
    Ok(CheckOutcome::within("hungarian vs n! search", worst, 0.0, format!("{instances} instances, n ≤ 8")))
}

/// Per-cell minimum against the Voronoi-partitioned sum, relative.
pub fn coverage_dual(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 0x0a02);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let size = rng.gen_range(64..=256);
        let idf = build_idf(seed.wrapping_add(i as u64), size, rng.gen_range(1..=8), rng.gen_range(5.0..30.0))?;
        let n = rng.gen_range(1..=16);
        let p = random_positions(&mut rng, n, size as f64);
        let a = coverage_cost_direct(&p, &idf);
        let b = coverage_cost(&p, &idf);
        let rel = (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(if a == b { 0.0 } else { rel });
    }
    Ok(CheckOutcome::within(
        "coverage cost: min-sum vs Voronoi",
        worst,
        1e-9,
        format!("{instances} instances, relative"),
    ))
}

/// k-nearest in-neighbors against a full sort of pairwise distances.
pub fn knn_oracle(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = stream(seed, 0x0a03);
    let mut mismatches = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(2..=20);
        let k = rng.gen_range(1..=4);
        let p = random_positions(&mut rng, n, 500.0);
        let g = CommGraph::build(&p, GraphKind::Knn(k));
        for i in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| distance_sq(p[i], p[a]).total_cmp(&distance_sq(p[i], p[b])).then(a.cmp(&b)));
            others.truncate(k);
            others.sort_unstable();
            let mut got = g.in_neighbors(i).to_vec();
            got.sort_unstable();
            if got != others {
                mismatches += 1.0;
            }
        }
    }
    Ok(CheckOutcome::within("knn graph vs sorted distances", mismatches, 0.0, format!("{instances} graphs, mismatching agents")))
}

/// A strongly connected nearest-neighbor snapshot where the union of every
/// agent's observed goals covers all goals.
fn dhba_snapshot(rng: &mut SimRng) -> (DanWorld, CommGraph, usize) {
    loop {
        let n = rng.gen_range(6..=14);
        let extent = 40.0 * (n as f64).sqrt();
        let w = DanWorld::new(DanParams::default(), random_positions(rng, n, extent), random_positions(rng, n, extent));
        let g = CommGraph::build(&w.positions, GraphKind::Knn(3));
        let Some(diam) = g.diameter() else { continue };
        let mut seen = vec![false; n];
        for i in 0..n {
            for j in w.observed_goals(i) {
                seen[j] = true;
            }
        }
        if seen.iter().all(|&s| s) {
            return (w, g, diam);
        }
    }
}

/// DHBA realized cost as the hop budget grows, and agreement with the
/// global optimum once every agent sees everyone.
pub fn dhba_convergence(snapshots: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = stream(seed, 0x0a04);
    let mut worst_increase: f64 = 0.0;
    let mut increasing = 0;
    let mut worst_gap: f64 = 0.0;
    for _ in 0..snapshots {
        let (w, g, diam) = dhba_snapshot(&mut rng);
        let mut prev = f64::INFINITY;
        let mut rose = false;
        for k in 0..=diam {
            let cost = realized_cost(&w, &dhba_assignment(&w, &g, k)?);
            if cost > prev {
                worst_increase = worst_increase.max((cost - prev) / prev.max(1.0));
                rose = true;
            }
            prev = cost;
        }
        increasing += usize::from(rose);
        let n = w.num_agents();
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| distance_sq(w.positions[i], w.goals[j])).collect())
            .collect();
        let optimum = lsap_assign(&cost)?.total;
        worst_gap = worst_gap.max((prev - optimum).abs() / optimum.max(1.0));
    }
    Ok(vec![
        CheckOutcome::within(
            "DHBA cost non-increasing in k",
            worst_increase,
            1e-9,
            format!("{increasing}/{snapshots} snapshots rise somewhere; relative rise"),
        ),
        CheckOutcome::within(
            "DHBA at diameter = global LSAP",
            worst_gap,
            1e-9,
            format!("{snapshots} snapshots, relative"),
        ),
    ])
}

/// Clairvoyant Lloyd descent: the largest per-step rise of the normalized
/// cost, and the mean normalized cost at the horizon.
pub fn cvt_descent(params: &CoverageParams, seeds: &[u64]) -> Result<(f64, f64)> {
    let mut worst_rise: f64 = f64::NEG_INFINITY;
    let mut terminal = 0.0;
    for &seed in seeds {
        let mut s = CoverageState::random(params.clone(), seed)?;
        let mut prev = s.normalized_cost();
        for _ in 0..params.steps {
            let u = s.cvt_policy(CvtVariant::Clairvoyant);
            s.step(&u)?;
            let now = s.normalized_cost();
            worst_rise = worst_rise.max(now - prev);
            prev = now;
        }
        terminal += prev;
    }
    Ok((worst_rise, terminal / seeds.len().max(1) as f64))
}
