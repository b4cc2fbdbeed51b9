//! Property tests: every rollout yields a valid structure, every
//! construction yields a valid tour within its cost bound, and decode
//! distributions are proper probability distributions.

use dtsp_core::construction::{christofides_variant, odd_degree_set, randomized_double_tree, Tour};
use dtsp_core::instance::random_instance;
use dtsp_core::policy::{
    rollout, ActionSource, Decoder, Matching, Mode, ModelConfig, PolicyParams,
};
use dtsp_core::tape::Eval;
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params_for(seed: u64) -> PolicyParams {
    PolicyParams::init(ModelConfig::with_dims(8, 1), seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_rollouts_are_spanning_trees(n in 3usize..14, pseed in 0u64..1000, iseed in 0u64..1000, rseed in 0u64..1000) {
        let params = params_for(pseed);
        let inst = random_instance(n, &mut ChaCha8Rng::seed_from_u64(iseed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(rseed);
        let trace = rollout(&params, &inst, Mode::Tree, None, ActionSource::Sample(&mut rng)).unwrap();
        let tree = trace.to_tree(n).expect("spanning tree invariants");
        prop_assertapprox(trace.total_reward, -tree.weight(&inst))?;
    }

    #[test]
    fn matching_rollouts_are_perfect_matchings(half in 1usize..6, pseed in 0u64..1000, iseed in 0u64..1000, rseed in 0u64..1000) {
        let n = 2 * half + 2;
        let params = params_for(pseed);
        let inst = random_instance(n, &mut ChaCha8Rng::seed_from_u64(iseed)).unwrap();
        let subset: Vec<usize> = (0..2 * half).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(rseed);
        let trace = rollout(&params, &inst, Mode::Matching, Some(&subset), ActionSource::Sample(&mut rng)).unwrap();
        trace.to_matching(subset).expect("perfect matching invariants");
    }

    #[test]
    fn constructions_are_valid_tours_within_bounds(n in 4usize..14, pseed in 0u64..1000, iseed in 0u64..1000, rseed in 0u64..1000) {
        let params = params_for(pseed);
        let inst = random_instance(n, &mut ChaCha8Rng::seed_from_u64(iseed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(rseed);
        let trace = rollout(&params, &inst, Mode::Tree, None, ActionSource::Sample(&mut rng)).unwrap();
        let tree = trace.to_tree(n).unwrap();

        let tour = randomized_double_tree(&tree, &inst, &mut rng).unwrap();
        check_tour(&tour, n)?;
        prop_assert!(tour.cost() <= 2.0 * tree.weight(&inst) + 1e-9);

        let odd = odd_degree_set(&tree);
        let mtrace = rollout(&params, &inst, Mode::Matching, Some(&odd), ActionSource::Sample(&mut rng)).unwrap();
        let matching = Matching::try_new(odd, mtrace.chosen.clone()).unwrap();
        let tour2 = christofides_variant(&tree, &matching, &inst, &mut rng).unwrap();
        check_tour(&tour2, n)?;
        prop_assert!(tour2.cost() <= tree.weight(&inst) + matching.weight(&inst) + 1e-9);
    }

    #[test]
    fn decode_distributions_are_normalized(n in 3usize..10, pseed in 0u64..1000, iseed in 0u64..1000, rseed in 0u64..1000) {
        let params = params_for(pseed);
        let inst = random_instance(n, &mut ChaCha8Rng::seed_from_u64(iseed)).unwrap();
        let mut dec = Decoder::new(Eval::new(), &params, &inst, Mode::Tree, None).unwrap();
        let edge_count = dec.edges().len();
        let mut rng = ChaCha8Rng::seed_from_u64(rseed);
        let mut src = ActionSource::Sample(&mut rng);
        for _ in 0..n - 1 {
            let out = dec.step(&mut src).unwrap();
            let full = out.full_probabilities(edge_count);
            let sum: f64 = full.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            for (pos, p) in full.iter().enumerate() {
                if !out.feasible.contains(&pos) {
                    prop_assert!(*p == 0.0, "infeasible edge has nonzero probability");
                }
            }
        }
    }
}

fn check_tour(tour: &Tour, n: usize) -> Result<(), TestCaseError> {
    prop_assert_eq!(tour.n(), n);
    let mut seen = vec![false; n];
    for &v in tour.order() {
        prop_assert!(!seen[v]);
        seen[v] = true;
    }
    prop_assert_eq!(tour.edge_set().len(), n);
    Ok(())
}

fn prop_assertapprox(a: f64, b: f64) -> Result<(), TestCaseError> {
    prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    Ok(())
}
