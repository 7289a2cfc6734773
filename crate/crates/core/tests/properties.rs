use mast_core::attention::{component_mask, window_mask};
use mast_core::comm::{CommGraph, GraphKind};
use mast_core::coverage::{build_idf, coverage_cost, coverage_cost_direct};
use mast_core::dan::{lsap_policy, DanParams, DanWorld};
use mast_core::kernel::Array;
use mast_core::net::{Mast, MastConfig};
use mast_core::posenc::{PosEncKind, Position};
use proptest::prelude::*;

fn positions(max: usize, extent: f64) -> impl Strategy<Value = Vec<Position>> {
    prop::collection::vec((0.0..extent, 0.0..extent).prop_map(|(x, y)| [x, y]), 2..max)
}

fn small_model(posenc: PosEncKind, seed: u64) -> Mast {
    let cfg = MastConfig {
        layers: 2,
        heads: 2,
        head_dim: 8,
        posenc,
        window_radius: 150.0,
        obs_dim: 3,
        ..MastConfig::default()
    };
    Mast::init(cfg, seed).unwrap()
}

fn features(n: usize, seed: u64) -> Array {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..3).map(|c| ((i * 7 + c * 13) as f64 + seed as f64).sin()).collect())
        .collect();
    Array::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn masks_keep_the_diagonal_and_are_symmetric(p in positions(20, 400.0), r in 1.0..300.0, k in 1usize..4) {
        let g = CommGraph::build(&p, GraphKind::Knn(k));
        for m in [window_mask(&p, r), component_mask(&g)] {
            for i in 0..p.len() {
                prop_assert!(m.get(i, i));
                for j in 0..p.len() {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
        }
    }

    #[test]
    fn component_mask_is_transitive(p in positions(16, 600.0), k in 1usize..3) {
        let m = component_mask(&CommGraph::build(&p, GraphKind::Knn(k)));
        let n = p.len();
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    if m.get(i, j) && m.get(j, l) {
                        prop_assert!(m.get(i, l));
                    }
                }
            }
        }
    }

    #[test]
    fn knn_gives_exactly_k_in_neighbors(p in positions(20, 500.0), k in 1usize..5) {
        let g = CommGraph::build(&p, GraphKind::Knn(k));
        for i in 0..p.len() {
            prop_assert_eq!(g.in_neighbors(i).len(), k.min(p.len() - 1));
            prop_assert!(!g.has_edge(i, i));
        }
    }

    #[test]
    fn disk_graphs_are_symmetric(p in positions(20, 500.0), r in 10.0..300.0) {
        let g = CommGraph::build(&p, GraphKind::Disk(r));
        for i in 0..p.len() {
            for j in 0..p.len() {
                prop_assert_eq!(g.has_edge(i, j), g.has_edge(j, i));
            }
        }
    }

    #[test]
    fn actions_respect_the_speed_limit(p in positions(12, 400.0), seed in 0u64..1000) {
        let m = small_model(PosEncKind::RopeGeometric, seed);
        let mask = m.mask(&p, None);
        let u = m.act(&features(p.len(), seed), &p, &mask).unwrap();
        for i in 0..p.len() {
            let r = u.row(i);
            prop_assert!((r[0] * r[0] + r[1] * r[1]).sqrt() <= m.cfg.u_max + 1e-12);
        }
    }

    #[test]
    fn rotary_policies_ignore_a_common_shift(
        p in positions(12, 400.0),
        c in (-800.0..800.0f64, -800.0..800.0f64),
        linear in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let kind = if linear { PosEncKind::RopeLinear } else { PosEncKind::RopeGeometric };
        let m = small_model(kind, seed);
        let obs = features(p.len(), seed);
        let q: Vec<Position> = p.iter().map(|a| [a[0] + c.0, a[1] + c.1]).collect();
        let u = m.act(&obs, &p, &m.mask(&p, None)).unwrap();
        let v = m.act(&obs, &q, &m.mask(&q, None)).unwrap();
        prop_assert!(u.max_abs_diff(&v) <= 1e-9);
    }

    #[test]
    fn relabeling_agents_relabels_actions(p in positions(12, 400.0), seed in 0u64..1000, rot in 1usize..11) {
        let m = small_model(PosEncKind::RopeGeometric, seed);
        let n = p.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let obs = features(n, seed);
        let g = CommGraph::build(&p, GraphKind::Knn(2));
        let u = m.act(&obs, &p, &m.mask(&p, Some(&g))).unwrap();
        let pp: Vec<Position> = perm.iter().map(|&i| p[i]).collect();
        let gp = CommGraph::build(&pp, GraphKind::Knn(2));
        let v = m.act(&obs.select_rows(&perm), &pp, &m.mask(&pp, Some(&gp))).unwrap();
        prop_assert!(u.select_rows(&perm).max_abs_diff(&v) <= 1e-9);
    }

    #[test]
    fn coverage_cost_forms_agree(seed in 0u64..500, n in 1usize..10, sigma in 5.0..25.0) {
        let idf = build_idf(seed, 96, 3, sigma).unwrap();
        let p: Vec<Position> = (0..n)
            .map(|i| {
                let a = (seed as f64 * 0.37 + i as f64 * 2.1).sin().abs();
                let b = (seed as f64 * 0.91 + i as f64 * 1.3).cos().abs();
                [a * 96.0, b * 96.0]
            })
            .collect();
        let a = coverage_cost_direct(&p, &idf);
        let b = coverage_cost(&p, &idf);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn expert_actions_are_translation_invariant(p in positions(10, 300.0), c in (-500.0..500.0f64, -500.0..500.0f64)) {
        let goals: Vec<Position> = p.iter().rev().map(|a| [a[1], a[0]]).collect();
        let w = DanWorld::new(DanParams::default(), p, goals);
        let t = w.translated([c.0, c.1]);
        let (u, v) = (lsap_policy(&w).unwrap(), lsap_policy(&t).unwrap());
        for (a, b) in u.iter().zip(&v) {
            prop_assert!((a[0] - b[0]).abs() <= 1e-9 && (a[1] - b[1]).abs() <= 1e-9);
        }
        prop_assert!((0.0..=1.0).contains(&w.success_rate()));
    }
}
