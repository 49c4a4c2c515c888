//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Tolerances are pinned below and never loosened by the run.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::permutations;
use gridann::bench::{
    bench_run, gaussian, mixture_dataset, prune_report, zipf_workload, BenchKnobs, GroundTruth,
    Transport,
};
use gridann::index::{assign_to_lists, train_centroids};
use gridann::kernel::{partial_dot, partial_l2};
use gridann::pipeline::audit_pruned;
use gridann::planner::{
    enumerate_plans, query_cost, select_plan, PlanMode, QueryWork, WorkloadProfile,
};
use gridann::runtime::{sim_run, MessageKind, SimConfig, Topology};
use gridann::{
    ClusterIndex, CostCoefficients, DimBlockSpec, Engine, EngineConfig, Metric, OrderPolicy,
    PartitionPlan, VectorBatch,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criterion 3: desk-scale floor for the last slice.
const MIN_LAST_SLICE_PCT: f64 = 50.0;
/// Criterion 4: allowed framing overhead.
const CHUNK_BYTES_TOLERANCE: f64 = 0.05;
/// Criterion 6: vector-mode work spread multiplier.
const SKEW_SPREAD_FACTOR: f64 = 0.5;
/// Criterion 9: relative tolerance and sample count.
const KERNEL_REL_TOL: f64 = 1e-4;
const KERNEL_PAIRS: usize = 100_000;

const NB: usize = 10_000;
const NQ: usize = 200;
const DIM: usize = 128;
const NLIST: usize = 64;
const K: usize = 10;

struct Fixture {
    base: VectorBatch,
    queries: VectorBatch,
    index: ClusterIndex,
}

fn fixture(n: usize, q: usize, dim: usize, seed: u64) -> Fixture {
    let (base, queries) = mixture_dataset(n, q, dim, 100, 0.5, seed).unwrap();
    let index = index_for(&base, seed);
    Fixture {
        base,
        queries,
        index,
    }
}

fn index_for(base: &VectorBatch, seed: u64) -> ClusterIndex {
    let trained = train_centroids(base, NLIST, 25, seed).unwrap();
    assign_to_lists(base, &trained).unwrap()
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn ids(results: &[gridann::TopKResult]) -> Vec<Vec<u64>> {
    results.iter().map(|r| r.ids()).collect()
}

fn c1_oracle(f: &Fixture) -> Outcome {
    let mut runs = 0;
    let mut mismatches = Vec::new();
    let sizes = f.index.list_sizes();
    let mut layouts: Vec<(PartitionPlan, Vec<OrderPolicy>)> = Vec::new();
    for (n_vec, n_dim) in [(1, 4), (2, 2), (4, 1)] {
        let plan = PartitionPlan::build(n_vec, n_dim, DIM, &sizes).unwrap();
        let mut orders: Vec<OrderPolicy> = permutations(n_dim)
            .into_iter()
            .map(OrderPolicy::Fixed)
            .collect();
        orders.push(OrderPolicy::RoundRobin);
        orders.push(OrderPolicy::LoadAware);
        layouts.push((plan, orders));
    }
    for nprobe in [1, 8, NLIST] {
        let truth =
            GroundTruth::within_probes(&f.base, &f.index, &f.queries, nprobe, K, Metric::L2)
                .unwrap();
        for (plan, orders) in &layouts {
            let engine = Engine::new(&f.base, &f.index, plan).unwrap();
            for order in orders {
                for pruning in [true, false] {
                    let cfg = EngineConfig {
                        k: K,
                        nprobe,
                        pruning,
                        order: order.clone(),
                        ..EngineConfig::default()
                    };
                    let out = engine.search(&f.queries, &cfg).unwrap();
                    runs += 1;
                    if ids(&out.results) != truth.neighbors {
                        mismatches.push(format!(
                            "engine {}x{} {order:?} pruning={pruning} nprobe={nprobe}",
                            plan.n_vec(),
                            plan.n_dim()
                        ));
                    }
                }
            }
            // The message-passing runtime on the same plan.
            if nprobe != NLIST {
                let topo = Topology::new(&f.base, &f.index, plan).unwrap();
                for pruning in [true, false] {
                    let cfg = EngineConfig {
                        k: K,
                        nprobe,
                        pruning,
                        ..EngineConfig::default()
                    };
                    let out = sim_run(
                        &SimConfig::with_nodes(plan.node_count()),
                        &topo,
                        &f.queries,
                        &cfg,
                    )
                    .unwrap();
                    runs += 1;
                    if ids(&out.results) != truth.neighbors {
                        mismatches.push(format!(
                            "sim {}x{} pruning={pruning} nprobe={nprobe}",
                            plan.n_vec(),
                            plan.n_dim()
                        ));
                    }
                }
            }
        }
    }
    Outcome {
        pass: mismatches.is_empty(),
        detail: if mismatches.is_empty() {
            format!("{runs} runs x {NQ} queries identical to the probed-list oracle")
        } else {
            format!(
                "{} of {runs} runs differ: {}",
                mismatches.len(),
                mismatches.join("; ")
            )
        },
    }
}

fn c2_audit() -> Outcome {
    let mut checked = 0;
    let mut violations = 0;
    let mut failed_seeds = Vec::new();
    for seed in 0..50u64 {
        let (base, queries) = mixture_dataset(2_000, 20, 32, 40, 0.5, 1000 + seed).unwrap();
        let trained = train_centroids(&base, 16, 10, seed).unwrap();
        let index = assign_to_lists(&base, &trained).unwrap();
        let plans = enumerate_plans(4, 32, &index.list_sizes()).unwrap();
        let plan = &plans[seed as usize % plans.len()];
        let cfg = EngineConfig {
            k: 1 + seed as usize % 16,
            nprobe: 1 + seed as usize % 16,
            record_pruned: true,
            seed,
            ..EngineConfig::default()
        };
        let out = Engine::new(&base, &index, plan)
            .unwrap()
            .search(&queries, &cfg)
            .unwrap();
        let audit = audit_pruned(&base, &queries, &out.results, &out.pruned).unwrap();
        checked += audit.checked;
        violations += audit.violations.len();
        if !audit.passed() {
            failed_seeds.push(seed);
        }
    }
    Outcome {
        pass: violations == 0 && checked > 0,
        detail: format!("50 seeded runs, {checked} pruned candidates re-checked, {violations} violations (failing seeds {failed_seeds:?})"),
    }
}

fn c3_slices(f: &Fixture) -> Outcome {
    let mut rows = Vec::new();
    let mut pass = true;
    let mut datasets: Vec<(String, VectorBatch, VectorBatch, ClusterIndex)> = Vec::new();
    for dim in [64, 256] {
        let g = fixture(NB, NQ, dim, 7);
        datasets.push((format!("mixture d={dim}"), g.base, g.queries, g.index));
    }
    let iso = gaussian(NB + NQ, DIM, 11).unwrap();
    let iso_base = iso.truncated(NB);
    let iso_q = VectorBatch::with_sequential_ids(DIM, iso.data()[NB * DIM..].to_vec()).unwrap();
    let iso_index = index_for(&iso_base, 11);
    datasets.push(("isotropic d=128".into(), iso_base, iso_q, iso_index));

    let mut measure =
        |name: &str, base: &VectorBatch, queries: &VectorBatch, index: &ClusterIndex| -> f64 {
            let plan = PartitionPlan::build(1, 4, base.dim(), &index.list_sizes()).unwrap();
            let cfg = EngineConfig {
                k: K,
                nprobe: 8,
                ..EngineConfig::default()
            };
            let out = Engine::new(base, index, &plan)
                .unwrap()
                .search(queries, &cfg)
                .unwrap();
            let r = prune_report(&out.stats);
            let ok = r.slices.len() == 4
                && r.slices[0] == 0.0
                && r.slices.windows(2).all(|w| w[0] <= w[1]);
            pass &= ok;
            let s: Vec<String> = r.slices.iter().map(|x| format!("{x:.1}")).collect();
            rows.push(format!("{name}: {}", s.join("/")));
            r.last()
        };
    let main_last = measure("mixture d=128", &f.base, &f.queries, &f.index);
    for (name, b, q, i) in &datasets {
        measure(name, b, q, i);
    }
    let floor_ok = main_last >= MIN_LAST_SLICE_PCT;
    Outcome {
        pass: pass && floor_ok,
        detail: format!(
            "{} (r4 on 10k x 128 = {main_last:.1}%, floor {MIN_LAST_SLICE_PCT}%)",
            rows.join(", ")
        ),
    }
}

fn c4_chunk_bytes(f: &Fixture) -> Outcome {
    let bytes = |n_vec: usize, n_dim: usize| {
        let plan = PartitionPlan::build(n_vec, n_dim, DIM, &f.index.list_sizes()).unwrap();
        let topo = Topology::new(&f.base, &f.index, &plan).unwrap();
        let cfg = EngineConfig {
            k: K,
            nprobe: 1,
            ..EngineConfig::default()
        };
        let out = sim_run(&SimConfig::with_nodes(4), &topo, &f.queries, &cfg).unwrap();
        out.ledger.bytes_of(MessageKind::QueryChunk)
    };
    let vector = bytes(4, 1);
    let hybrid = bytes(2, 2);
    let rel = (hybrid as f64 - vector as f64).abs() / vector as f64;
    Outcome {
        pass: rel <= CHUNK_BYTES_TOLERANCE,
        detail: format!(
            "nprobe=1: (2,2) {hybrid} B vs (4,1) {vector} B, difference {:.2}% (limit {:.0}%)",
            rel * 100.0,
            CHUNK_BYTES_TOLERANCE * 100.0
        ),
    }
}

fn c5_space(f: &Fixture) -> Outcome {
    let mut plans = 0;
    let mut bad = Vec::new();
    for n in 1..=8 {
        for plan in enumerate_plans(n, DIM, &f.index.list_sizes()).unwrap() {
            plans += 1;
            let topo = Topology::new(&f.base, &f.index, &plan).unwrap();
            if topo.resident_floats() != NB * DIM {
                bad.push(format!("{}x{}", plan.n_vec(), plan.n_dim()));
            }
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!(
                "{plans} plans for N=1..8 each hold exactly {} floats",
                NB * DIM
            )
        } else {
            format!(
                "plans {bad:?} of {plans} do not hold exactly {} floats",
                NB * DIM
            )
        },
    }
}

fn c6_skew(f: &Fixture) -> Outcome {
    let queries = zipf_workload(&f.index, NQ, 1.2, 3).unwrap();
    let truth = GroundTruth::compute(&f.base, &queries, K).unwrap();
    let run = |mode| {
        let knobs = BenchKnobs {
            mode,
            engine: EngineConfig {
                k: K,
                nprobe: 8,
                ..EngineConfig::default()
            },
            transport: Transport::Sim,
            ..BenchKnobs::default()
        };
        bench_run("zipf", &f.base, &f.index, &queries, &truth, &knobs).unwrap()
    };
    let (v, h, d) = (
        run(PlanMode::Vector),
        run(PlanMode::Hybrid),
        run(PlanMode::Dimension),
    );
    let spread_ok =
        d.work_stddev <= h.work_stddev && h.work_stddev <= SKEW_SPREAD_FACTOR * v.work_stddev;
    let qps_ok = h.qps >= v.qps;
    Outcome {
        pass: spread_ok && qps_ok,
        detail: format!(
            "work stddev dimension {:.0} <= hybrid({}x{}) {:.0} <= 0.5 x vector {:.0}: {spread_ok}; qps hybrid {:.0} >= vector {:.0}: {qps_ok}",
            d.work_stddev, h.n_vec, h.n_dim, h.work_stddev, v.work_stddev, h.qps, v.qps
        ),
    }
}

fn c7_cost_model() -> Outcome {
    let plan = PartitionPlan::build(2, 3, 6, &[1, 1, 1, 1]).unwrap();
    let coeffs = CostCoefficients::new(20.0, 30.0, 15.0, 1.0).unwrap();
    let cost = query_cost(&plan, &QueryWork::unit(&plan), &coeffs);

    let sizes = vec![100; 8];
    let probes: Vec<Vec<u32>> = (0..40).map(|q| vec![0, (q % 8) as u32]).collect();
    let w = WorkloadProfile::from_probes(64, sizes.clone(), probes).unwrap();
    let plans = enumerate_plans(4, 64, &sizes).unwrap();
    let comm_heavy = CostCoefficients::new(0.001, 50.0, 0.001, 0.01).unwrap();
    let picked = select_plan(&plans, &w, &comm_heavy, 0.0).unwrap().plan;
    let min_blocks = plans.iter().map(PartitionPlan::n_dim).min().unwrap();
    Outcome {
        pass: cost == 182.0 && picked.n_dim() == min_blocks,
        detail: format!(
            "unit-work cost {cost} ms (want 182); comm-dominated pick {}x{}",
            picked.n_vec(),
            picked.n_dim()
        ),
    }
}

fn c8_determinism(f: &Fixture) -> Outcome {
    let plan = PartitionPlan::build(2, 2, DIM, &f.index.list_sizes()).unwrap();
    let topo = Topology::new(&f.base, &f.index, &plan).unwrap();
    let sim = SimConfig {
        seed: 42,
        ..SimConfig::with_nodes(4)
    };
    let cfg = EngineConfig {
        k: K,
        nprobe: 8,
        seed: 42,
        ..EngineConfig::default()
    };
    let a = sim_run(&sim, &topo, &f.queries, &cfg).unwrap();
    let b = sim_run(&sim, &topo, &f.queries, &cfg).unwrap();
    let trace = a.trace.to_jsonl() == b.trace.to_jsonl();
    let ledger =
        serde_json::to_string(&a.ledger).unwrap() == serde_json::to_string(&b.ledger).unwrap();

    let truth = GroundTruth::compute(&f.base, &f.queries, K).unwrap();
    let knobs = BenchKnobs {
        engine: cfg,
        sim,
        ..BenchKnobs::default()
    };
    let r1 = bench_run("det", &f.base, &f.index, &f.queries, &truth, &knobs)
        .unwrap()
        .to_json();
    let r2 = bench_run("det", &f.base, &f.index, &f.queries, &truth, &knobs)
        .unwrap()
        .to_json();
    let report = r1 == r2;
    Outcome {
        pass: trace && ledger && report,
        detail: format!("trace {} events identical: {trace}; ledger identical: {ledger}; report identical: {report}", a.trace.events.len()),
    }
}

fn c9_kernels() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_l2 = 0.0f64;
    let mut worst_ip = 0.0f64;
    for _ in 0..KERNEL_PAIRS {
        let dim = rng.random_range(1..=256usize);
        let blocks = rng.random_range(1..=dim.min(8));
        let spec = DimBlockSpec::equal_width(dim, blocks).unwrap();
        let a: Vec<f32> = (0..dim).map(|_| rng.random_range(-10.0f32..10.0)).collect();
        let b: Vec<f32> = (0..dim).map(|_| rng.random_range(-10.0f32..10.0)).collect();
        // Unblocked reference in plain f64 arithmetic.
        let l2_ref: f64 = a
            .iter()
            .zip(&b)
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum();
        let ip_ref: f64 = a.iter().zip(&b).map(|(&x, &y)| x as f64 * y as f64).sum();
        let ip_scale: f64 = a
            .iter()
            .zip(&b)
            .map(|(&x, &y)| (x as f64 * y as f64).abs())
            .sum();
        let l2: f64 = (0..blocks)
            .map(|k| partial_l2(&a, &b, &spec, k).unwrap())
            .sum();
        let ip: f64 = (0..blocks)
            .map(|k| partial_dot(&a, &b, &spec, k).unwrap())
            .sum();
        worst_l2 = worst_l2.max((l2 - l2_ref).abs() / l2_ref.max(f64::MIN_POSITIVE));
        // Dot products can cancel to ~0, so scale by the sum of magnitudes.
        worst_ip = worst_ip.max((ip - ip_ref).abs() / ip_scale.max(f64::MIN_POSITIVE));
    }
    Outcome {
        pass: worst_l2 <= KERNEL_REL_TOL && worst_ip <= KERNEL_REL_TOL,
        detail: format!("{KERNEL_PAIRS} pairs, worst relative error l2 {worst_l2:.2e}, dot {worst_ip:.2e} (limit {KERNEL_REL_TOL:.0e})"),
    }
}

fn main() -> ExitCode {
    let started = Instant::now();
    let f = fixture(NB, NQ, DIM, 7);
    let criteria: Vec<(&str, Check<'_>)> = vec![
        ("1 oracle equivalence", Box::new(|| c1_oracle(&f))),
        ("2 pruning soundness", Box::new(c2_audit)),
        ("3 per-slice pruning", Box::new(|| c3_slices(&f))),
        (
            "4 communication invariance",
            Box::new(|| c4_chunk_bytes(&f)),
        ),
        ("5 space invariance", Box::new(|| c5_space(&f))),
        ("6 skew ordering", Box::new(|| c6_skew(&f))),
        ("7 cost model", Box::new(c7_cost_model)),
        ("8 determinism", Box::new(|| c8_determinism(&f))),
        ("9 kernel identities", Box::new(c9_kernels)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let t = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
