mod common;

use common::{build_index, naive_topk, uniform};
use gridann::bench::GroundTruth;
use gridann::pipeline::audit_pruned;
use gridann::planner::enumerate_plans;
use gridann::runtime::{sim_run, socket_run, SimConfig, Topology};
use gridann::{Engine, EngineConfig, Metric, OrderPolicy};
use proptest::prelude::*;

fn policy(choice: u8, n_dim: usize) -> OrderPolicy {
    match choice % 3 {
        0 => OrderPolicy::LoadAware,
        1 => OrderPolicy::RoundRobin,
        _ => OrderPolicy::Fixed((0..n_dim).rev().collect()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Engine and simulator return exactly the brute-force neighbors of the
    /// probed lists, for every plan shape and knob combination.
    #[test]
    fn engine_and_sim_match_brute_force(
        n in 40usize..240,
        dim in 2usize..20,
        nlist in 1usize..8,
        nodes in 1usize..7,
        k in 1usize..12,
        nprobe_frac in 0.0f64..1.0,
        pruning in any::<bool>(),
        order in any::<u8>(),
        plan_pick in any::<prop::sample::Index>(),
        seed in 0u64..1000,
    ) {
        let base = uniform(n, dim, seed);
        let queries = uniform(5, dim, seed + 1);
        let index = build_index(&base, nlist, seed);
        let plans = enumerate_plans(nodes, dim, &index.list_sizes()).unwrap();
        let plan = &plans[plan_pick.index(plans.len())];
        let nprobe = 1 + ((nlist - 1) as f64 * nprobe_frac).round() as usize;
        let cfg = EngineConfig {
            k,
            nprobe,
            pruning,
            order: policy(order, plan.n_dim()),
            seed,
            record_pruned: true,
            ..EngineConfig::default()
        };
        let engine = Engine::new(&base, &index, plan).unwrap();
        let out = engine.search(&queries, &cfg).unwrap();
        let probes = engine.probe_all(&queries, nprobe).unwrap();
        for (qi, lists) in probes.iter().enumerate() {
            let want = naive_topk(&base, &index, lists, queries.row(qi), k, Metric::L2);
            prop_assert_eq!(out.results[qi].ids(), want);
            prop_assert!(out.results[qi].is_well_formed());
        }
        prop_assert!(audit_pruned(&base, &queries, &out.results, &out.pruned).unwrap().passed());

        let topo = Topology::new(&base, &index, plan).unwrap();
        let sim = sim_run(&SimConfig::with_nodes(plan.node_count()), &topo, &queries, &cfg).unwrap();
        for qi in 0..queries.count() {
            prop_assert_eq!(sim.results[qi].ids(), out.results[qi].ids());
        }
        prop_assert_eq!(topo.resident_floats(), n * dim);
    }

    /// Inner product never prunes and still matches brute force.
    #[test]
    fn inner_product_matches_brute_force(
        n in 40usize..200,
        dim in 2usize..16,
        nodes in 1usize..5,
        seed in 0u64..1000,
    ) {
        let base = uniform(n, dim, seed);
        let queries = uniform(4, dim, seed + 7);
        let index = build_index(&base, 4, seed);
        let plans = enumerate_plans(nodes, dim, &index.list_sizes()).unwrap();
        let plan = plans.last().unwrap();
        let cfg = EngineConfig { k: 5, nprobe: 2, metric: Metric::InnerProduct, ..EngineConfig::default() };
        let out = Engine::new(&base, &index, plan).unwrap().search(&queries, &cfg).unwrap();
        prop_assert_eq!(out.stats.total_pruned(), 0);
        let probes = Engine::new(&base, &index, plan).unwrap().probe_all(&queries, 2).unwrap();
        for (qi, lists) in probes.iter().enumerate() {
            let want = naive_topk(&base, &index, lists, queries.row(qi), 5, Metric::InnerProduct);
            prop_assert_eq!(out.results[qi].ids(), want);
        }
    }
}

#[test]
fn ground_truth_within_probes_agrees_with_naive() {
    let base = uniform(500, 12, 3);
    let queries = uniform(20, 12, 4);
    let index = build_index(&base, 6, 3);
    let truth = GroundTruth::within_probes(&base, &index, &queries, 2, 7, Metric::L2).unwrap();
    for qi in 0..queries.count() {
        let probes = gridann::probe_centroids(queries.row(qi), &index, 2).unwrap();
        assert_eq!(
            truth.neighbors[qi],
            naive_topk(&base, &index, &probes, queries.row(qi), 7, Metric::L2)
        );
    }
}

#[test]
fn socket_matches_simulator() {
    let base = uniform(1500, 16, 11);
    let queries = uniform(30, 16, 12);
    let index = build_index(&base, 12, 11);
    for (n_vec, n_dim) in [(1, 1), (1, 4), (2, 2), (4, 1)] {
        let plan = gridann::PartitionPlan::build(n_vec, n_dim, 16, &index.list_sizes()).unwrap();
        let topo = Topology::new(&base, &index, &plan).unwrap();
        let cfg = EngineConfig {
            nprobe: 4,
            order: OrderPolicy::RoundRobin,
            ..EngineConfig::default()
        };
        let sim = sim_run(
            &SimConfig::with_nodes(plan.node_count()),
            &topo,
            &queries,
            &cfg,
        )
        .unwrap();
        let sock = socket_run(&topo, &queries, &cfg, false).unwrap();
        let ids = |r: &[gridann::TopKResult]| r.iter().map(|x| x.ids()).collect::<Vec<_>>();
        assert_eq!(
            ids(&sock.results),
            ids(&sim.results),
            "plan {n_vec}x{n_dim}"
        );
        assert_eq!(sock.orders, sim.orders);
        // Same messages, so the same bytes per kind.
        for kind in gridann::runtime::MessageKind::ALL {
            assert_eq!(
                sock.ledger.bytes_of(kind),
                sim.ledger.bytes_of(kind),
                "{kind:?}"
            );
        }
    }
}
