use std::collections::BTreeMap;

use lsmtune::bench::{generate_session_with, sample_benchmark, SessionCategory};
use lsmtune::cost_model::{cost_vector, LsmDesign, Policy, SystemParams};
use lsmtune::sim::{Driver, SimTree};
use lsmtune::Workload;
use proptest::prelude::*;

fn small() -> SystemParams<f64> {
    SystemParams {
        entries: 2000.0,
        entry_bits: 64.0,
        entries_per_page: 8.0,
        memory_bits: 64.0 * 16.0 + 20_000.0,
        asymmetry: 1.0,
        seq_factor: 1.0,
        range_selectivity: 0.01,
    }
}

fn tree(policy: Policy<f64>, t: f64) -> SimTree {
    let sys = small();
    SimTree::new(&LsmDesign::new(policy, t, 20_000.0, &sys).unwrap(), &sys).unwrap()
}

#[derive(Debug, Clone)]
enum Op {
    Put(u64, u64),
    Get(u64),
    Range(u64, u64),
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (0u64..3000, any::<u64>()).prop_map(|(k, v)| Op::Put(k, v)),
        2 => (0u64..3000).prop_map(Op::Get),
        1 => (0u64..3000, 0u64..200).prop_map(|(a, w)| Op::Range(a, a + w)),
    ]
}

fn arb_policy() -> impl Strategy<Value = (Policy<f64>, f64)> {
    (
        prop_oneof![
            Just(Policy::Leveling),
            Just(Policy::Tiering),
            Just(Policy::LazyLeveling),
            Just(Policy::OneLeveling),
            Just(Policy::KLsm { capacities: vec![2.0, 3.0, 1.0] }),
        ],
        4u32..8,
    )
        .prop_map(|(p, t)| (p, t as f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn agrees_with_shadow_map(ops in prop::collection::vec(arb_op(), 10_000), (policy, t) in arb_policy()) {
        let mut tr = tree(policy, t);
        let mut shadow: BTreeMap<u64, u64> = BTreeMap::new();
        for op in ops {
            match op {
                Op::Put(k, v) => {
                    tr.put(k, v);
                    shadow.insert(k, v);
                }
                Op::Get(k) => prop_assert_eq!(tr.get(k).value, shadow.get(&k).copied()),
                Op::Range(a, b) => {
                    let want: Vec<(u64, u64)> = shadow.range(a..=b).map(|(&k, &v)| (k, v)).collect();
                    prop_assert_eq!(tr.range(a, b).unwrap().entries, want);
                }
            }
            for (i, runs) in tr.runs_per_level().into_iter().enumerate() {
                prop_assert!(runs <= tr.capacity(i));
            }
        }
        let all: Vec<(u64, u64)> = shadow.into_iter().collect();
        prop_assert_eq!(tr.scan(), all);
    }
}

#[test]
fn level_sizes_stay_bounded() {
    let mut tr = tree(Policy::LazyLeveling, 5.0);
    let cap = tr.buffer_capacity();
    for k in 0..50_000u64 {
        tr.put(k.wrapping_mul(0x9e37_79b9_7f4a_7c15), k);
        for (i, &n) in tr.entries_per_level().iter().enumerate() {
            assert!(n <= 4 * 5usize.pow(i as u32) * cap);
        }
    }
}

#[test]
fn single_run_page_range_costs_one_read() {
    let mut tr = tree(Policy::Leveling, 4.0);
    for k in 0..16u64 {
        tr.put(k * 10, k);
    }
    assert_eq!(tr.runs_per_level(), vec![1]);
    let r = tr.range(0, 70).unwrap();
    assert_eq!(r.entries.len(), 8);
    assert_eq!(r.io, 1.0);
    assert_eq!(tr.range(0, 150).unwrap().io, 2.0);
}

fn populated(policy: Policy<f64>, t: f64, seed: u64) -> Driver {
    let sys = SystemParams { entries: 20_000.0, memory_bits: 20_000.0 * 10.0, ..SystemParams::desk() };
    let d = LsmDesign::new(policy, t, 20_000.0 * 10.0 - 200.0 * 512.0, &sys).unwrap();
    let mut drv = Driver::new(SimTree::new(&d, &sys).unwrap(), seed);
    drv.load(20_000);
    drv
}

#[test]
fn tiering_writes_less_than_leveling() {
    let w = Workload::new(0.0, 0.0, 0.0, 1.0).unwrap();
    let cost = |p| populated(p, 4.0, 1).run_counts(&w, [0, 0, 0, 50_000]).unwrap().measured[3].unwrap();
    assert!(cost(Policy::Tiering) <= cost(Policy::Leveling));
}

#[test]
fn fixed_seed_reproduces_counters() {
    let bench = sample_benchmark(1, 1000).unwrap();
    let s = generate_session_with(SessionCategory::Expected, &Workload::uniform(), &bench, 2, 5000, 3).unwrap();
    let run = || populated(Policy::LazyLeveling, 5.0, 8).run_session(&s).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn empty_gets_track_the_model() {
    let mut drv = populated(Policy::Leveling, 5.0, 2);
    let model = cost_vector(drv.tree.design(), &SystemParams { entries: 20_000.0, memory_bits: 200_000.0, ..SystemParams::desk() }).unwrap();
    let w = Workload::new(1.0, 0.0, 0.0, 0.0).unwrap();
    let r = drv.run_counts(&w, [100_000, 0, 0, 0]).unwrap();
    let got = r.measured[0].unwrap();
    assert!((got - model.z0).abs() <= 0.25 * model.z0, "{got} vs {}", model.z0);
}
