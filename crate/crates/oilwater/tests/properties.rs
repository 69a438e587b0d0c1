//! Property tests for the structural invariants of the dynamics: abelian
//! invariance of odometers, conservation, bookkeeping identities, and
//! graph-query coherence on randomly drawn instances.

use proptest::prelude::*;

use oilwater::ghost::{ghost_stabilize, GhostOptions, SchedulerKind};
use oilwater::graph::{BallSpec, FamilySpec, Graph, ORIGIN};
use oilwater::instructions::{InstructionArray, InstructionSource};
use oilwater::particle::{sample_initial, DensityLaw};
use oilwater::stabilizer::{
    driven_stabilize, stabilize, verify_abelian, StabilizeOptions, StrategyKind,
};
use oilwater::KeyedStreams;

fn small_graph() -> impl Strategy<Value = Graph> {
    prop_oneof![
        (8usize..20, 2usize..7).prop_map(|(n, arc)| {
            let arc = arc.min(n - 1);
            Graph::build(&FamilySpec::Cycle { n, arc: Some(arc) }, 0).unwrap()
        }),
        (1usize..4).prop_map(|l| Graph::build(&FamilySpec::LatticeBox { dim: 2 }, l).unwrap()),
        (1usize..3).prop_map(|l| {
            Graph::build(&FamilySpec::RegularTreeBall { degree: 3 }, l).unwrap()
        }),
    ]
}

fn density() -> impl Strategy<Value = DensityLaw> {
    prop_oneof![
        (0u64..3, 0u64..3).prop_map(|(oil, water)| DensityLaw::Fixed { oil, water }),
        (0.0f64..1.0).prop_map(|p| DensityLaw::Bernoulli { p }),
        (0.0f64..2.5).prop_map(|lambda| DensityLaw::Poisson { lambda }),
    ]
}

fn strategy_kind() -> impl Strategy<Value = StrategyKind> {
    prop_oneof![
        Just(StrategyKind::LowestId),
        Just(StrategyKind::HighestPairs),
        any::<u64>().prop_map(|seed| StrategyKind::Random { seed }),
        Just(StrategyKind::AdversarialNearestBoundary),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn odometers_do_not_depend_on_the_strategy(
        g in small_graph(),
        law in density(),
        sample_seed in any::<u64>(),
        tau_seed in any::<u64>(),
        a in strategy_kind(),
        b in strategy_kind(),
    ) {
        let c0 = sample_initial(&g, &law, &KeyedStreams::new(sample_seed)).unwrap();
        let report = verify_abelian(&g, &c0, tau_seed, &[a, b], &StabilizeOptions::default()).unwrap();
        prop_assert!(report.passed());
    }

    #[test]
    fn stabilization_conserves_and_stabilizes(
        g in small_graph(),
        law in density(),
        sample_seed in any::<u64>(),
        tau_seed in any::<u64>(),
        strategy in strategy_kind(),
    ) {
        let c0 = sample_initial(&g, &law, &KeyedStreams::new(sample_seed)).unwrap();
        let tau = InstructionArray::new(tau_seed);
        let r = stabilize(&g, &c0, &tau, &strategy, &StabilizeOptions::default()).unwrap();
        prop_assert!(!r.truncated);
        prop_assert_eq!(r.final_config.total_oil(), c0.total_oil());
        prop_assert_eq!(r.final_config.total_water(), c0.total_water());
        prop_assert!(g.active_vertices().iter().all(|&v| r.final_config.is_stable(v)));
        prop_assert_eq!(r.firings, r.odometer.total_fires());
        prop_assert!(r.odometer.bookkeeping_holds());
    }

    #[test]
    fn driven_identity_between_hole_fills_and_upcrossings(
        g in small_graph(),
        law in density(),
        sample_seed in any::<u64>(),
        tau_seed in any::<u64>(),
        target in 0u64..300,
    ) {
        let c0 = sample_initial(&g, &law, &KeyedStreams::new(sample_seed)).unwrap();
        let tau = InstructionArray::new(tau_seed);
        let r = driven_stabilize(&g, &c0, &tau, &StrategyKind::LowestId, target, &StabilizeOptions::default()).unwrap();
        prop_assert!(r.neighbor_firings >= target);
        prop_assert!(r.origin_identity_holds());
        let [plus, minus, zero] = r.transition_counts;
        prop_assert_eq!(plus + minus + zero, r.neighbor_firings);
    }

    #[test]
    fn ghost_runs_keep_the_departure_identity(
        g in small_graph(),
        law in density(),
        sample_seed in any::<u64>(),
        tau_seed in any::<u64>(),
        scheduler in prop_oneof![
            Just(SchedulerKind::GhostsFirst),
            Just(SchedulerKind::PairsFirst),
            any::<u64>().prop_map(|seed| SchedulerKind::RandomMix { seed }),
        ],
    ) {
        let sigma = sample_initial(&g, &law, &KeyedStreams::new(sample_seed)).unwrap();
        let tau = InstructionArray::new(tau_seed);
        let opts = GhostOptions { scheduler, step_cap: None };
        let r = ghost_stabilize(&g, &sigma, &tau, &opts, None).unwrap();
        prop_assert!(!r.truncated);
        prop_assert!(r.odometer.bookkeeping_holds());
        prop_assert_eq!(&r.odometer.ghosts_created, &r.odometer.waters_into_hole);
        let cleared = g
            .active_vertices()
            .iter()
            .all(|&v| r.final_config.base.is_stable(v) && r.final_config.ghosts(v) == 0);
        prop_assert!(cleared);
        // Ghost departures happen only where ghosts passed through.
        let total_created: u64 = r.odometer.ghosts_created.iter().sum();
        if total_created == 0 {
            prop_assert_eq!(r.odometer.ghost_departures.iter().sum::<u64>(), 0);
        }
    }

    #[test]
    fn graph_queries_are_coherent(g in small_graph(), r in 0u32..4, d in 0u32..3) {
        // Distance symmetry on a sample of active pairs.
        let vs = g.active_vertices();
        for &x in vs.iter().step_by(5) {
            for &y in vs.iter().step_by(3) {
                prop_assert_eq!(g.distance(x, y).unwrap(), g.distance(y, x).unwrap());
            }
        }
        // Ball monotonicity.
        let small = g.ball(BallSpec { center: ORIGIN, radius: r }).unwrap();
        let big = g.ball(BallSpec { center: ORIGIN, radius: r + 1 }).unwrap();
        prop_assert!(small.iter().all(|v| big.contains(v)));
        // Annulus inclusion: B_{l-d} stays clear of the annulus, whenever the
        // boundary of B_l exists in the truncation.
        if let Ok(annulus) = g.annulus(r, d) {
            if r >= d {
                let inner = g.ball(BallSpec { center: ORIGIN, radius: r - d }).unwrap();
                for v in &inner {
                    prop_assert!(!annulus.contains(v));
                }
            }
        }
    }

    #[test]
    fn instructions_are_pure(seed in any::<u64>(), x in 0u32..64, j in 0u64..10_000, degree in 2u32..8) {
        let a = InstructionArray::new(seed);
        let b = InstructionArray::new(seed);
        let first = a.firing_pair(x, j, degree);
        prop_assert!(first.0 < degree && first.1 < degree);
        let _ = a.firing_pair(x ^ 1, j / 2, degree);
        prop_assert_eq!(a.firing_pair(x, j, degree), first);
        prop_assert_eq!(b.firing_pair(x, j, degree), first);
        let step = a.ghost_step(x, j, degree);
        prop_assert!(step < degree);
        prop_assert_eq!(b.ghost_step(x, j, degree), step);
    }
}
