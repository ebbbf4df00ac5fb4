mod common;

use common::{costs, random_case, rel_err, seeded, Case, Shape};
use lsmtune::cost_model::{
    bloom_fprs, cost_vector, expand_policy, level_count, total_cost, LsmDesign, Policy, Workload,
};
use proptest::prelude::*;

fn check_against_oracle(case: &Case) {
    let sys = case.sys.to_params();
    let d = case.design();
    let mbuf = case.sys.m - case.filt;
    let l = common::levels(case.t, &case.sys, mbuf);
    assert_eq!(level_count(case.t, &sys, mbuf).unwrap(), l, "{case:?}");
    let caps = common::capacities(&case.shape, case.t, l);
    let got_caps = expand_policy(&case.shape.to_policy(), case.t, l).unwrap();
    assert_eq!(got_caps, caps);
    for (a, b) in bloom_fprs(case.t, case.filt, &sys).unwrap().iter().zip(common::fprs(case.t, l, case.filt, case.sys.n)) {
        assert!(rel_err(*a, b) <= 1e-9, "fpr {a} vs {b}");
    }
    let want = costs(case);
    let got = cost_vector(&d, &sys).unwrap().to_array();
    for i in 0..4 {
        assert!(rel_err(got[i], want[i]) <= 1e-9, "component {i}: {} vs {} for {case:?}", got[i], want[i]);
    }
    let w = Workload::new(0.1, 0.2, 0.3, 0.4).unwrap();
    let c = total_cost(&w, &d, &sys).unwrap();
    let oc = 0.1 * want[0] + 0.2 * want[1] + 0.3 * want[2] + 0.4 * want[3];
    assert!(rel_err(c, oc) <= 1e-9);
}

#[test]
fn matches_summation_oracle_on_random_inputs() {
    let mut rng = seeded(11);
    for _ in 0..1000 {
        check_against_oracle(&random_case(&mut rng));
    }
}

#[test]
fn explicit_capacities_reproduce_named_layouts() {
    let mut rng = seeded(12);
    for _ in 0..300 {
        let mut case = random_case(&mut rng);
        for shape in [
            Shape::Leveling,
            Shape::Tiering,
            Shape::Lazy,
            Shape::OneLeveling,
            Shape::Fluid(1.0 + (case.t - 2.0) / 3.0, 1.0),
        ] {
            case.shape = shape;
            let sys = case.sys.to_params();
            let named = case.design();
            let explicit = LsmDesign::new(
                Policy::KLsm { capacities: named.capacities.clone() },
                case.t,
                case.filt,
                &sys,
            )
            .unwrap();
            let a = cost_vector(&named, &sys).unwrap().to_array();
            let b = cost_vector(&explicit, &sys).unwrap().to_array();
            for i in 0..4 {
                assert!(rel_err(a[i], b[i]) <= 1e-12);
            }
        }
    }
}

fn arb_case() -> impl Strategy<Value = Case> {
    any::<u64>().prop_map(|s| random_case(&mut seeded(s)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn costs_are_finite_and_nonnegative(case in arb_case()) {
        let c = cost_vector(&case.design(), &case.sys.to_params()).unwrap().to_array();
        prop_assert!(c.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn fprs_are_clamped_and_grow_downward(case in arb_case()) {
        let f = bloom_fprs(case.t, case.filt, &case.sys.to_params()).unwrap();
        prop_assert!(f.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(f.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn point_costs_fall_with_filter_memory(case in arb_case(), extra in 0.0..0.5f64) {
        let sys = case.sys.to_params();
        let more = case.filt + extra * (case.sys.m - case.filt) * 0.5;
        let l0 = level_count(case.t, &sys, case.sys.m - case.filt).unwrap();
        let l1 = level_count(case.t, &sys, case.sys.m - more).unwrap();
        prop_assume!(l0 == l1);
        let caps = case.design().capacities;
        let mk = |filt| LsmDesign::new(Policy::KLsm { capacities: caps.clone() }, case.t, filt, &sys).unwrap();
        let a = cost_vector(&mk(case.filt), &sys).unwrap();
        let b = cost_vector(&mk(more), &sys).unwrap();
        prop_assert!(b.z0 <= a.z0 * (1.0 + 1e-12));
        prop_assert!(b.z1 <= a.z1 * (1.0 + 1e-12));
    }

    #[test]
    fn capacity_trades_writes_for_reads(case in arb_case(), level in 0usize..8, bump in 0.0..1.0f64) {
        let sys = case.sys.to_params();
        let d = case.design();
        let i = level % d.levels();
        let mut caps = d.capacities.clone();
        caps[i] += bump * (case.t - 1.0 - caps[i]);
        let e = LsmDesign::new(Policy::KLsm { capacities: caps }, case.t, case.filt, &sys).unwrap();
        let a = cost_vector(&d, &sys).unwrap();
        let b = cost_vector(&e, &sys).unwrap();
        prop_assert!(b.w <= a.w * (1.0 + 1e-12));
        prop_assert!(b.z0 >= a.z0 * (1.0 - 1e-12));
        prop_assert!(b.q >= a.q * (1.0 - 1e-12));
    }

    #[test]
    fn cost_is_linear_in_workload(case in arb_case(), a in 0.0..=1.0f64, s1 in 0u64.., s2 in 0u64..) {
        let sys = case.sys.to_params();
        let d = case.design();
        let rand_w = |s: u64| {
            use rand::Rng;
            let mut r = seeded(s);
            let x: [f64; 4] = std::array::from_fn(|_| r.random_range(0.01..1.0));
            let t: f64 = x.iter().sum();
            Workload::new(x[0] / t, x[1] / t, x[2] / t, x[3] / t).unwrap()
        };
        let (w1, w2) = (rand_w(s1), rand_w(s2));
        let lhs = total_cost(&w1.mix(&w2, a), &d, &sys).unwrap();
        let rhs = a * total_cost(&w1, &d, &sys).unwrap() + (1.0 - a) * total_cost(&w2, &d, &sys).unwrap();
        prop_assert!(rel_err(lhs, rhs) <= 1e-9);
    }
}

#[test]
fn generic_over_f32() {
    let sys = lsmtune::cost_model::SystemParams::<f32>::desk();
    let d = LsmDesign::new(Policy::Leveling, 10.0f32, 5.0e6, &sys).unwrap();
    let c32 = cost_vector(&d, &sys).unwrap();
    let sys64 = lsmtune::SystemParams::desk();
    let d64 = LsmDesign::new(Policy::Leveling, 10.0, 5.0e6, &sys64).unwrap();
    let c64 = cost_vector(&d64, &sys64).unwrap();
    assert!(rel_err(c32.z0 as f64, c64.z0) < 1e-4);
    assert!(rel_err(c32.w as f64, c64.w) < 1e-5);
}
