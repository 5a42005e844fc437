use jsq_core::model::{check_step, route};
use jsq_core::projection::{decompose, p_norm};
use jsq_core::rng::replication_rng;
use jsq_core::{make_arrival_dist, make_service_dist, Error, Load, Policy, QueueState, Simulator};
use proptest::prelude::*;

fn policy_strategy(n: usize) -> impl Strategy<Value = Policy> {
    prop_oneof![
        Just(Policy::Jsq),
        Just(Policy::Random),
        (1..=n).prop_map(Policy::JsqD),
    ]
}

fn cell() -> impl Strategy<Value = (usize, f64, f64, f64, Policy, u64)> {
    (1usize..12).prop_flat_map(|n| {
        (
            Just(n),
            1.2f64..4.0,
            0.0f64..1.0,
            0.0f64..=1.0,
            policy_strategy(n),
            any::<u64>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_slot_satisfies_the_chain_identities((n, alpha, sa, ss, policy, seed) in cell()) {
        let arr = match make_arrival_dist(n, &Load::Alpha(alpha), sa) {
            Ok(d) => d,
            Err(Error::InfeasibleVariance { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let svc = make_service_dist(ss).unwrap();
        let mut sim = Simulator::new(n, arr.clone(), svc.clone(), policy).unwrap();
        let mut rng = replication_rng(seed, 0);
        for _ in 0..2_000 {
            let before = sim.state().q.clone();
            let rec = sim.step(&mut rng);
            let bad = check_step(&before, rec, &arr, &svc, policy);
            prop_assert!(bad.is_empty(), "{:?}", bad);
        }
    }

    #[test]
    fn arrival_mean_is_exact(n in 1usize..400, alpha in 1.0f64..6.0, sa in 0.0f64..2.0) {
        let load = Load::Alpha(alpha);
        if let Ok(d) = make_arrival_dist(n, &load, sa) {
            let nf = n as f64;
            prop_assert_eq!(d.mean(), nf * (1.0 - nf.powf(-alpha)));
            let target = nf * sa;
            prop_assert!(d.variance() >= target - target.sqrt() - 0.25 - 1e-9);
            prop_assert!(d.variance() <= target + target.sqrt() + 0.25 + 1e-9);
            prop_assert!(d.atoms().iter().all(|a| a.prob > 0.0));
        }
    }

    #[test]
    fn identical_seeds_give_identical_streams((n, alpha, _sa, ss, policy, seed) in cell()) {
        let arr = make_arrival_dist(n, &Load::Alpha(alpha), 0.0).unwrap();
        let svc = make_service_dist(ss).unwrap();
        let run = || {
            let mut sim = Simulator::new(n, arr.clone(), svc.clone(), policy).unwrap();
            let mut rng = replication_rng(seed, 3);
            (0..300).map(|_| sim.step(&mut rng).clone()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn routing_sends_the_batch_to_one_queue(
        q in prop::collection::vec(0u64..6, 1..10),
        a in 0u64..20,
        seed in any::<u64>(),
    ) {
        let mut rng = replication_rng(seed, 0);
        let routed = route(&QueueState::new(q.clone()), a, Policy::Jsq, &mut rng).unwrap();
        prop_assert_eq!(routed.iter().sum::<u64>(), a);
        prop_assert!(routed.iter().filter(|&&x| x != 0).count() <= 1);
        if a > 0 {
            let target = routed.iter().position(|&x| x == a).unwrap();
            prop_assert_eq!(q[target], *q.iter().min().unwrap());
        }
    }

    #[test]
    fn projection_is_nonexpansive_and_orthogonal(x in prop::collection::vec(-1e3f64..1e3, 1..30)) {
        let d = decompose(&x).unwrap();
        let norm = p_norm(&x, 2.0).unwrap();
        let perp = p_norm(&d.perp, 2.0).unwrap();
        let par = p_norm(&d.parallel, 2.0).unwrap();
        prop_assert!(perp <= norm * (1.0 + 1e-12) + 1e-12);
        prop_assert!((norm * norm - par * par - perp * perp).abs() <= 1e-6 * (norm * norm).max(1e-300));
        let again = decompose(&d.parallel).unwrap();
        prop_assert!(again.perp.iter().all(|v| v.abs() <= 1e-9 * (1.0 + norm)));
    }
}

#[test]
fn jsq_ties_are_uniform() {
    let n = 4;
    let slots = 100_000;
    let mut rng = replication_rng(17, 0);
    let mut hits = [0u64; 4];
    let empty = QueueState::empty(n);
    for _ in 0..slots {
        let routed = route(&empty, 1, Policy::Jsq, &mut rng).unwrap();
        hits[routed.iter().position(|&x| x == 1).unwrap()] += 1;
    }
    let p = 0.25;
    let se = (p * (1.0 - p) / slots as f64).sqrt();
    for h in hits {
        assert!((h as f64 / slots as f64 - p).abs() < 4.0 * se, "{hits:?}");
    }
}

#[test]
fn jsq_d_with_one_choice_is_uniform() {
    let slots = 60_000;
    let mut rng = replication_rng(5, 0);
    let q = QueueState::new(vec![7, 0, 9]);
    let mut hits = [0u64; 3];
    for _ in 0..slots {
        let routed = route(&q, 3, Policy::JsqD(1), &mut rng).unwrap();
        hits[routed.iter().position(|&x| x == 3).unwrap()] += 1;
    }
    let p = 1.0 / 3.0;
    let se = (p * (1.0 - p) / slots as f64).sqrt();
    for h in hits {
        assert!((h as f64 / slots as f64 - p).abs() < 4.0 * se, "{hits:?}");
    }
}

#[test]
fn jsq_d_with_all_choices_is_jsq() {
    let q = QueueState::new(vec![4, 2, 3, 2]);
    let mut rng = replication_rng(8, 0);
    for _ in 0..1_000 {
        let routed = route(&q, 5, Policy::JsqD(4), &mut rng).unwrap();
        let target = routed.iter().position(|&x| x == 5).unwrap();
        assert!(target == 1 || target == 3);
    }
}
